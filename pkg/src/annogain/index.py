"""Online nearest-neighbor index over unit vectors under cosine distance.

Two modes behind one interface:

  * ``exact``  — flat storage, brute-force scan. The ground-truth oracle for
    pools up to a few hundred thousand points, and the fast path for bulk
    benchmarks (insertion is an array append).
  * ``hnsw``   — incremental navigable-small-world graph for sub-linear
    queries on large pools. Level draws come from a seeded generator, so a
    fixed insertion order rebuilds the same graph.

Vectors are normalized at insertion; similarity is a dot product from then
on. Deletions are not supported — callers tombstone at a higher layer.
"""

from __future__ import annotations

import heapq
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .vectors import VectorError, as_unit, as_unit_rows

SNAPSHOT_MAGIC = b"ICVI"
SNAPSHOT_VERSION = 1


class DuplicateIdError(ValueError):
    def __init__(self, sample_id: str):
        super().__init__(f"duplicate id: {sample_id!r}")
        self.sample_id = sample_id


class SnapshotError(ValueError):
    """Corrupt, truncated, or version-mismatched snapshot bytes."""


@dataclass(frozen=True)
class NeighborHit:
    sample_id: str
    cosine_similarity: float

    @property
    def cosine_distance(self) -> float:
        return 1.0 - self.cosine_similarity


@dataclass(frozen=True)
class IndexConfig:
    mode: str = "hnsw"  # "hnsw" or "exact"
    m: int = 16
    ef_construction: int = 200
    ef_query: int = 64
    # Overfetch used by range() when the caller does not pass one: sized as
    # 4x a typical engine neighbor count, hard-capped at 256.
    range_overfetch: int = 64
    range_overfetch_cap: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.mode not in ("hnsw", "exact"):
            raise ValueError(f"unknown index mode: {self.mode!r}")
        if self.m < 2:
            raise ValueError("m must be >= 2")


class VectorIndex:
    """Incremental cosine kNN/range index with a serializable state."""

    def __init__(self, dim: int, config: IndexConfig | None = None):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim
        self.config = config or IndexConfig()
        self._n = 0
        self._cap = 1024
        self._vecs = np.zeros((self._cap, dim), dtype=np.float32)
        self._ids: list[str] = []
        self._row_of: dict[str, int] = {}
        # HNSW state (never allocated in exact mode)
        cfg = self.config
        self._m0 = 2 * cfg.m
        self._levels: list[int] = []
        if cfg.mode == "hnsw":
            self._adj0 = np.zeros((self._cap, self._m0), dtype=np.int32)
            self._adj0_n = np.zeros(self._cap, dtype=np.int32)
        else:
            self._adj0 = None
            self._adj0_n = None
        self._adj_hi: dict[int, list[np.ndarray]] = {}  # row -> [level1, level2, ...]
        self._entry = -1
        self._max_level = -1
        self._level_mult = 1.0 / math.log(cfg.m)
        self._rng = np.random.Generator(np.random.PCG64(cfg.seed))

    def __len__(self) -> int:
        return self._n

    def __contains__(self, sample_id: str) -> bool:
        return sample_id in self._row_of

    @property
    def ids(self) -> list[str]:
        return list(self._ids)

    def row_of(self, sample_id: str) -> int:
        return self._row_of[sample_id]

    def id_at(self, row: int) -> str:
        return self._ids[row]

    def vector(self, sample_id: str) -> np.ndarray:
        return self._vecs[self._row_of[sample_id]].copy()

    def vector_at(self, row: int) -> np.ndarray:
        return self._vecs[row]

    def matrix(self) -> np.ndarray:
        """View of all stored vectors, shape (len(self), dim). Do not mutate."""
        return self._vecs[: self._n]

    # ------------------------------------------------------------------ insert

    def insert(self, sample_id: str, v) -> None:
        if sample_id in self._row_of:
            raise DuplicateIdError(sample_id)
        vec = as_unit(v, self.dim)
        row = self._append(sample_id, vec)
        if self.config.mode == "hnsw":
            self._link(row)

    def insert_batch(self, ids: list[str], mat) -> None:
        """Insert many vectors at once. ``mat`` is (len(ids), dim) row-major.

        In exact mode this is a single array copy; in hnsw mode it inserts
        sequentially (graph construction is inherently ordered).
        """
        vecs = as_unit_rows(mat, self.dim)
        if vecs.shape[0] != len(ids):
            raise VectorError("id list and matrix row count differ")
        seen: set[str] = set()
        for sample_id in ids:
            if sample_id in self._row_of or sample_id in seen:
                raise DuplicateIdError(sample_id)
            seen.add(sample_id)
        if self.config.mode == "exact":
            self._reserve(self._n + len(ids))
            self._vecs[self._n : self._n + len(ids)] = vecs
            for i, sample_id in enumerate(ids):
                self._row_of[sample_id] = self._n + i
            self._ids.extend(ids)
            self._n += len(ids)
        else:
            for i, sample_id in enumerate(ids):
                row = self._append(sample_id, vecs[i])
                self._link(row)

    def _reserve(self, need: int) -> None:
        if need <= self._cap:
            return
        new_cap = max(int(self._cap * 1.5), need)
        grown = np.zeros((new_cap, self.dim), dtype=np.float32)
        grown[: self._n] = self._vecs[: self._n]
        self._vecs = grown
        if self.config.mode == "hnsw":
            adj0 = np.zeros((new_cap, self._m0), dtype=np.int32)
            adj0[: self._n] = self._adj0[: self._n]
            self._adj0 = adj0
            adj0_n = np.zeros(new_cap, dtype=np.int32)
            adj0_n[: self._n] = self._adj0_n[: self._n]
            self._adj0_n = adj0_n
        self._cap = new_cap

    def _append(self, sample_id: str, vec: np.ndarray) -> int:
        self._reserve(self._n + 1)
        row = self._n
        self._vecs[row] = vec
        self._ids.append(sample_id)
        self._row_of[sample_id] = row
        self._n += 1
        return row

    # ------------------------------------------------------------------- query

    def knn(self, q, k: int) -> list[NeighborHit]:
        """k nearest stored vectors, most similar first. Empty index -> []."""
        if k < 0:
            raise ValueError("k must be >= 0")
        if k == 0 or self._n == 0:
            return []
        vec = as_unit(q, self.dim)
        k = min(k, self._n)
        if self.config.mode == "exact":
            rows, sims = self._exact_topk(vec, k)
        else:
            rows, sims = self._hnsw_topk(vec, k)
        return [
            NeighborHit(self._ids[r], float(np.clip(s, -1.0, 1.0)))
            for r, s in zip(rows, sims)
        ]

    def range(self, q, max_distance: float, overfetch: int | None = None) -> list[NeighborHit]:
        """Neighbors within a cosine-distance budget.

        Runs an overfetched kNN and filters; the result is therefore capped
        at ``overfetch`` hits even when more points fall inside the radius.
        """
        if max_distance < 0.0:
            raise ValueError(f"max_distance must be >= 0, got {max_distance}")
        if overfetch is None:
            overfetch = self.config.range_overfetch
        overfetch = min(overfetch, self.config.range_overfetch_cap)
        hits = self.knn(q, overfetch)
        return [h for h in hits if h.cosine_distance <= max_distance]

    def _exact_topk(self, q: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        sims32 = self._vecs[: self._n] @ q
        pad = min(self._n, k + 16)
        cand = np.argpartition(-sims32, pad - 1)[:pad]
        # Re-rank the short list in float64 so near-ties order stably.
        sims64 = self._vecs[cand].astype(np.float64) @ q.astype(np.float64)
        order = np.lexsort((cand, -sims64))[:k]
        return cand[order], sims64[order]

    def _hnsw_topk(self, q: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
        ef = max(self.config.ef_query, k)
        entry = self._entry
        for level in range(self._max_level, 0, -1):
            entry = self._greedy_step(q, entry, level)
        dists, rows = self._search_layer0(q, entry, ef)
        order = np.lexsort((rows, dists))[:k]
        rows = rows[order]
        sims64 = self._vecs[rows].astype(np.float64) @ q.astype(np.float64)
        rerank = np.lexsort((rows, -sims64))
        return rows[rerank], sims64[rerank]

    # ------------------------------------------------------------- hnsw internals

    def _draw_level(self) -> int:
        u = self._rng.random()
        while u <= 0.0:
            u = self._rng.random()
        return int(-math.log(u) * self._level_mult)

    def _neighbors(self, row: int, level: int) -> np.ndarray:
        if level == 0:
            return self._adj0[row, : self._adj0_n[row]]
        levels = self._adj_hi.get(row)
        if levels is None or level > len(levels):
            return np.empty(0, dtype=np.int32)
        return levels[level - 1]

    def _set_neighbors(self, row: int, level: int, rows: np.ndarray) -> None:
        if level == 0:
            n = len(rows)
            self._adj0[row, :n] = rows
            self._adj0_n[row] = n
        else:
            self._adj_hi[row][level - 1] = np.asarray(rows, dtype=np.int32)

    def _greedy_step(self, q: np.ndarray, entry: int, level: int) -> int:
        cur = entry
        cur_dist = 1.0 - float(self._vecs[cur] @ q)
        improved = True
        while improved:
            improved = False
            nbrs = self._neighbors(cur, level)
            if len(nbrs) == 0:
                break
            dists = 1.0 - self._vecs[nbrs] @ q
            j = int(np.argmin(dists))
            if dists[j] < cur_dist:
                cur = int(nbrs[j])
                cur_dist = float(dists[j])
                improved = True
        return cur

    def _search_layer0(self, q: np.ndarray, entry: int, ef: int,
                       level: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """Beam search at one level; returns (dists, rows) unsorted.

        Hot path: neighbor distances are computed in one matvec per popped
        node, converted to Python scalars in bulk, and filtered against the
        current beam edge before any heap traffic.
        """
        vecs = self._vecs
        adj0, adj0_n = self._adj0, self._adj0_n
        heappush, heappop = heapq.heappush, heapq.heappop
        heapreplace = heapq.heapreplace
        visited = np.zeros(self._n, dtype=bool)
        visited[entry] = True
        d0 = 1.0 - float(vecs[entry] @ q)
        candidates: list[tuple[float, int]] = [(d0, entry)]
        best: list[tuple[float, int]] = [(-d0, entry)]
        nbest = 1
        while candidates:
            dist, row = heappop(candidates)
            worst = -best[0][0]
            if nbest >= ef and dist > worst:
                break
            if level == 0:
                nbrs = adj0[row, : adj0_n[row]]
            else:
                nbrs = self._neighbors(row, level)
            if nbrs.shape[0] == 0:
                continue
            fresh = nbrs[~visited[nbrs]]
            if fresh.shape[0] == 0:
                continue
            visited[fresh] = True
            dists = 1.0 - vecs[fresh] @ q
            if nbest >= ef:
                sel = dists < worst
                fresh = fresh[sel]
                dists = dists[sel]
                if fresh.shape[0] == 0:
                    continue
            for dj, rj in zip(dists.tolist(), fresh.tolist()):
                if nbest < ef:
                    heappush(candidates, (dj, rj))
                    heappush(best, (-dj, rj))
                    nbest += 1
                elif dj < -best[0][0]:
                    heappush(candidates, (dj, rj))
                    heapreplace(best, (-dj, rj))
        dists = np.array([-d for d, _ in best])
        rows = np.array([r for _, r in best], dtype=np.int64)
        return dists, rows

    def _select_heuristic(self, cand_dists: np.ndarray, cand_rows: np.ndarray,
                          m: int, backfill: bool = True) -> np.ndarray:
        """Diversity-aware neighbor pick: keep a candidate only when it is
        closer to the query than to every already-kept neighbor. With
        ``backfill`` the nearest discards top the list up to the quota
        (insert-time selection); without it the list may come back short
        (connection pruning), which keeps re-prune churn low."""
        order = np.lexsort((cand_rows, cand_dists))
        cap = min(m, len(order))
        kept_rows = np.empty(cap, dtype=np.int32)
        kept_mat = np.empty((cap, self.dim), dtype=np.float32)
        nk = 0
        discarded: list[int] = []
        for idx in order:
            if nk == m:
                break
            row = int(cand_rows[idx])
            v = self._vecs[row]
            if nk == 0:
                kept_rows[0] = row
                kept_mat[0] = v
                nk = 1
                continue
            sim_kept = kept_mat[:nk] @ v
            if float(cand_dists[idx]) < 1.0 - float(sim_kept.max()):
                kept_rows[nk] = row
                kept_mat[nk] = v
                nk += 1
            elif backfill:
                discarded.append(row)
        result = kept_rows[:nk]
        if backfill and nk < m and discarded:
            extra = np.array(discarded[: m - nk], dtype=np.int32)
            result = np.concatenate([result, extra])
        return result

    def _link(self, row: int) -> None:
        level = self._draw_level()
        self._levels.append(level)
        if level > 0:
            self._adj_hi[row] = [np.empty(0, dtype=np.int32) for _ in range(level)]
        if self._entry < 0:
            self._entry = row
            self._max_level = level
            return
        q = self._vecs[row]
        entry = self._entry
        for lvl in range(self._max_level, level, -1):
            entry = self._greedy_step(q, entry, lvl)
        for lvl in range(min(level, self._max_level), -1, -1):
            dists, rows = self._search_layer0(q, entry, self.config.ef_construction, lvl)
            m = self._m0 if lvl == 0 else self.config.m
            chosen = self._select_heuristic(dists, rows, m)
            self._set_neighbors(row, lvl, chosen)
            for nbr in chosen:
                self._add_link(int(nbr), row, lvl)
            nearest = int(chosen[0]) if len(chosen) else entry
            entry = nearest
        if level > self._max_level:
            self._entry = row
            self._max_level = level

    def _add_link(self, row: int, new_nbr: int, level: int) -> None:
        cap = self._m0 if level == 0 else self.config.m
        if level == 0:
            n = self._adj0_n[row]
            if n < cap:
                self._adj0[row, n] = new_nbr
                self._adj0_n[row] = n + 1
                return
            merged = np.empty(n + 1, dtype=np.int32)
            merged[:n] = self._adj0[row, :n]
            merged[n] = new_nbr
        else:
            current = self._neighbors(row, level)
            if len(current) < cap:
                self._set_neighbors(
                    row, level, np.append(current, np.int32(new_nbr)).astype(np.int32))
                return
            merged = np.append(current, np.int32(new_nbr))
        dists = 1.0 - self._vecs[merged] @ self._vecs[row]
        pruned = self._select_heuristic(dists, merged, cap, backfill=False)
        self._set_neighbors(row, level, pruned)

    # ---------------------------------------------------------------- snapshot

    def snapshot(self) -> bytes:
        cfg = self.config
        parts = [SNAPSHOT_MAGIC, struct.pack("<H", SNAPSHOT_VERSION),
                 struct.pack("<I", self.dim), struct.pack("<Q", self._n)]
        adj = bytearray()
        adj += struct.pack("<B", 1 if cfg.mode == "hnsw" else 0)
        adj += struct.pack("<IIII", cfg.m, cfg.ef_construction, cfg.ef_query,
                           cfg.range_overfetch)
        adj += struct.pack("<q", self._entry)
        adj += struct.pack("<i", self._max_level)
        rng_json = json.dumps(_rng_state(self._rng), sort_keys=True).encode()
        adj += struct.pack("<Q", len(rng_json)) + rng_json
        for sample_id in self._ids:
            raw = sample_id.encode("utf-8")
            adj += struct.pack("<I", len(raw)) + raw
        if cfg.mode == "hnsw":
            adj += np.asarray(self._levels, dtype="<i4").tobytes()
            adj += self._adj0_n[: self._n].astype("<i4").tobytes()
            adj += self._adj0[: self._n].astype("<i4").tobytes()
            hi = sorted(self._adj_hi.items())
            adj += struct.pack("<I", len(hi))
            for row, levels in hi:
                adj += struct.pack("<QI", row, len(levels))
                for arr in levels:
                    adj += struct.pack("<I", len(arr))
                    adj += np.asarray(arr, dtype="<i4").tobytes()
        parts.append(struct.pack("<Q", len(adj)))
        parts.append(bytes(adj))
        payload = self._vecs[: self._n].astype("<f4").tobytes()
        parts.append(struct.pack("<Q", len(payload)))
        parts.append(payload)
        return b"".join(parts)

    @classmethod
    def restore(cls, data: bytes) -> "VectorIndex":
        r = _Reader(data)
        magic = r.take(4)
        if magic != SNAPSHOT_MAGIC:
            raise SnapshotError(f"bad magic {magic!r}, expected {SNAPSHOT_MAGIC!r}")
        version = r.u16()
        if version != SNAPSHOT_VERSION:
            raise SnapshotError(
                f"unsupported snapshot version {version}, expected {SNAPSHOT_VERSION}")
        dim = r.u32()
        count = r.u64()
        adj_len = r.u64()
        adj = _Reader(r.take(adj_len))
        vec_len = r.u64()
        if vec_len != count * dim * 4:
            raise SnapshotError("vector payload length inconsistent with header")
        payload = r.take(vec_len)
        r.expect_eof()

        mode = "hnsw" if adj.u8() else "exact"
        m, efc, efq, rof = adj.u32(), adj.u32(), adj.u32(), adj.u32()
        entry = adj.i64()
        max_level = adj.i32()
        rng_json = adj.take(adj.u64())
        ids = []
        for _ in range(count):
            ids.append(adj.take(adj.u32()).decode("utf-8"))
        idx = cls(dim, IndexConfig(mode=mode, m=m, ef_construction=efc,
                                   ef_query=efq, range_overfetch=rof))
        idx._reserve(max(count, 1))
        idx._vecs[:count] = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
        idx._ids = ids
        idx._row_of = {sid: i for i, sid in enumerate(ids)}
        idx._n = count
        idx._entry = entry
        idx._max_level = max_level
        try:
            idx._rng = np.random.Generator(np.random.PCG64())
            idx._rng.bit_generator.state = json.loads(rng_json)
        except (ValueError, TypeError, KeyError) as exc:
            raise SnapshotError(f"bad generator state: {exc}") from exc
        if mode == "hnsw":
            idx._levels = list(np.frombuffer(adj.take(count * 4), dtype="<i4"))
            idx._adj0_n[:count] = np.frombuffer(adj.take(count * 4), dtype="<i4")
            m0 = 2 * m
            idx._adj0[:count] = np.frombuffer(
                adj.take(count * m0 * 4), dtype="<i4").reshape(count, m0)
            n_hi = adj.u32()
            for _ in range(n_hi):
                row = adj.u64()
                n_levels = adj.u32()
                levels = []
                for _ in range(n_levels):
                    cnt = adj.u32()
                    levels.append(np.frombuffer(adj.take(cnt * 4), dtype="<i4").copy())
                idx._adj_hi[row] = levels
        adj.expect_eof()
        return idx


class _Reader:
    """Bounds-checked little-endian cursor over immutable bytes."""

    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise SnapshotError(
                f"truncated snapshot: wanted {n} bytes at offset {self.pos}, "
                f"have {len(self.data) - self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def expect_eof(self) -> None:
        if self.pos != len(self.data):
            raise SnapshotError(f"{len(self.data) - self.pos} trailing bytes in snapshot")

    def u8(self) -> int:
        return struct.unpack("<B", self.take(1))[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def i32(self) -> int:
        return struct.unpack("<i", self.take(4))[0]

    def i64(self) -> int:
        return struct.unpack("<q", self.take(8))[0]


def _rng_state(rng: np.random.Generator) -> dict:
    return rng.bit_generator.state
