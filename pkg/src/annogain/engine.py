"""Online selective-annotation engine.

Maintains one fused belief and one expected annotation gain per pool sample,
selects annotation batches proportional to gain, applies annotations, and
re-estimates every neighbor inside the locality radius after each new label
(dynamic rechecking). Stops suggesting work when the best remaining gain
falls under the configured threshold.

All mutations are events: ingest, predict, annotate, select, tombstone.
Replaying the same event sequence against the same config reproduces the
exact state, including generator positions, which is what makes snapshots
byte-reproducible and crash recovery a pure log replay.

Per-sample state is columnar (numpy arrays indexed by insertion row), so
million-sample pools stay cheap; annotated samples are mirrored into a
dense submatrix used by the data-view queries.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Callable, Iterable

import numpy as np

from . import fusion
from .fusion import (FusionConfig, GainMode, PredictionState, Source,
                     annotation_gain)
from .index import IndexConfig, VectorIndex
from .vectors import VectorError

# Gains this close to zero are stored as exact zeros: the accuracy<->confidence
# round-trip leaves ~1e-16 dust that would otherwise keep "fully explained"
# samples eligible for selection forever.
GAIN_SNAP = 1e-9


class EngineError(Exception):
    pass


class UnknownSampleError(EngineError, KeyError):
    def __init__(self, sample_id: str):
        super().__init__(f"unknown sample: {sample_id!r}")
        self.sample_id = sample_id


class AlreadyAnnotatedError(EngineError):
    def __init__(self, sample_id: str, first_seq: int):
        super().__init__(
            f"sample {sample_id!r} already annotated by event {first_seq}")
        self.sample_id = sample_id
        self.first_seq = first_seq


class ReplayError(EngineError):
    """Replayed event disagrees with the recorded outcome or sequence."""


class Status(IntEnum):
    UNLABELED = 0
    SELECTED = 1
    ANNOTATED = 2
    TOMBSTONED = 3


_SOURCE_CODE = {Source.MODEL: 0, Source.DATA: 1, Source.FUSED: 2, Source.ANNOTATOR: 3}
_CODE_SOURCE = {v: k for k, v in _SOURCE_CODE.items()}


@dataclass(frozen=True)
class EngineConfig:
    """Knobs for one annotation session.

    ``delta_distance`` is the locality radius as a cosine distance; the
    similarity threshold used by the data view is ``1 - delta_distance``.
    ``stop_threshold`` defaults to 5% of the annotator confidence.
    """

    dim: int
    num_classes: int
    k: int = 10
    delta_distance: float = 0.2
    batch_size: int = 32
    annotator_alpha: float = 0.9
    stop_threshold: float | None = None
    sampling_temperature: float = 1.0
    redundancy_drop: bool = True
    gain_mode: GainMode = GainMode.PROXY
    fusion: FusionConfig | None = None
    seed: int = 0
    index: IndexConfig | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if not 0.0 <= self.delta_distance <= 2.0:
            raise ValueError("delta_distance must lie in [0, 2]")
        if not 0.0 <= self.annotator_alpha <= 1.0:
            raise ValueError("annotator_alpha must lie in [0, 1]")
        if self.sampling_temperature <= 0.0:
            raise ValueError("sampling_temperature must be > 0")
        if self.fusion is None:
            object.__setattr__(self, "fusion", FusionConfig(self.num_classes))
        elif self.fusion.num_classes != self.num_classes:
            raise ValueError("fusion config class count disagrees with engine")
        if self.stop_threshold is None:
            object.__setattr__(self, "stop_threshold", 0.05 * self.annotator_alpha)
        elif self.stop_threshold < 0:
            raise ValueError("stop_threshold must be >= 0")
        if self.index is None:
            object.__setattr__(self, "index", IndexConfig(seed=self.seed + 1))
        if isinstance(self.gain_mode, str):
            object.__setattr__(self, "gain_mode", GainMode(self.gain_mode))

    @property
    def similarity_threshold(self) -> float:
        return 1.0 - self.delta_distance

    @property
    def range_overfetch(self) -> int:
        return min(max(4 * self.k, self.k + 1), 256)


@dataclass(frozen=True)
class Event:
    seq: int
    type: str
    payload: dict

    def to_json(self) -> str:
        return json.dumps({"seq": self.seq, "type": self.type, "payload": self.payload},
                          sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "Event":
        raw = json.loads(line)
        return cls(seq=int(raw["seq"]), type=str(raw["type"]), payload=raw["payload"])


@dataclass(frozen=True)
class AnnotationEvent:
    sample_id: str
    label: int
    annotator_alpha: float
    sequence: int


@dataclass
class SampleRecord:
    """Materialized view of one pool element."""

    id: str
    embedding: np.ndarray
    status: Status
    state: PredictionState
    gain: float
    oracle_label: int | None = None
    payload_uri: str | None = None
    annotation_seq: int | None = None


@dataclass
class RecheckReport:
    sample_id: str
    updated: list[tuple[str, float, float]] = field(default_factory=list)  # (id, old, new)

    @property
    def count(self) -> int:
        return len(self.updated)


@dataclass
class StopDiagnostics:
    stop: bool
    max_gain: float
    total_gain: float
    positive_gain_count: int


def _encode_f32(arr: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f4").tobytes()).decode("ascii")


def _decode_f32(text: str, shape: tuple[int, ...]) -> np.ndarray:
    return np.frombuffer(base64.b64decode(text), dtype="<f4").reshape(shape).copy()


def weighted_order(weights: np.ndarray, rng: np.random.Generator,
                   temperature: float = 1.0) -> np.ndarray:
    """Full without-replacement draw order, probability proportional to
    weight ** (1/temperature), via Gumbel-top-k keys.

    Sorting perturbed log-weights descending yields exactly the sequence of
    successive weighted draws without replacement, so callers can walk the
    order and skip entries (redundancy drops) while preserving the sampling
    distribution of the survivors.
    """
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("weights must be positive")
    keys = np.log(w) / temperature + rng.gumbel(size=w.shape[0])
    return np.argsort(-keys, kind="stable")


class SelectionEngine:
    """Event-sourced selective-annotation state machine."""

    def __init__(self, config: EngineConfig,
                 sink: Callable[[Event], None] | None = None):
        self.config = config
        self.sink = sink
        self.index = VectorIndex(config.dim, config.index)
        self.next_seq = 1
        self._rng = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence(entropy=config.seed, spawn_key=(0,))))
        n0 = 0
        c = config.num_classes
        self._ids: list[str] = []
        self._status = np.zeros(n0, dtype=np.int8)
        self._probs = np.zeros((n0, c), dtype=np.float32)
        self._alpha = np.zeros(n0, dtype=np.float64)
        self._source = np.zeros(n0, dtype=np.int8)
        self._argmax = np.zeros(n0, dtype=np.int32)
        self._gain = np.zeros(n0, dtype=np.float64)
        self._oracle = np.zeros(n0, dtype=np.int32)
        self._model_probs = np.zeros((n0, c), dtype=np.float32)
        self._has_model = np.zeros(n0, dtype=bool)
        self._ann_event_seq = np.full(n0, -1, dtype=np.int64)
        self._uris: dict[int, str] = {}
        # Annotated submatrix, in annotation order.
        self._ann_rows: list[int] = []
        self._ann_mat = np.zeros((0, config.dim), dtype=np.float32)
        self._ann_labels = np.zeros(0, dtype=np.int32)
        self._ann_alphas = np.zeros(0, dtype=np.float64)
        self._row_ann_pos: dict[int, int] = {}

    # ------------------------------------------------------------ event plumbing

    def __len__(self) -> int:
        return len(self._ids)

    def _emit(self, ev_type: str, payload: dict):
        ev = Event(self.next_seq, ev_type, payload)
        result = self._apply(ev)
        self.next_seq += 1
        if self.sink is not None:
            self.sink(ev)
        return ev, result

    def apply_event(self, ev: Event):
        """Replay one recorded event. Sequence numbers must be contiguous."""
        if ev.seq != self.next_seq:
            raise ReplayError(f"event sequence gap: expected {self.next_seq}, got {ev.seq}")
        result = self._apply(ev)
        self.next_seq += 1
        return result

    def _apply(self, ev: Event):
        if ev.type == "ingest":
            return self._apply_ingest(ev)
        if ev.type == "predict":
            return self._apply_predict(ev)
        if ev.type == "annotate":
            return self._apply_annotate(ev)
        if ev.type == "select":
            return self._apply_select(ev)
        if ev.type == "tombstone":
            return self._apply_tombstone(ev)
        raise ReplayError(f"unknown event type {ev.type!r}")

    # ------------------------------------------------------------------- ingest

    def ingest(self, samples: Iterable[tuple]) -> int:
        """Register samples: (id, vector[, oracle_label[, payload_uri]]).

        Vectors are cast to float32 up front so the event payload and the
        live path normalize identical bits. Returns the ingested count.
        """
        ids: list[str] = []
        oracles: list[int | None] = []
        uris: list[str | None] = []
        vecs: list[np.ndarray] = []
        for rec in samples:
            sid, vec = rec[0], rec[1]
            oracle = rec[2] if len(rec) > 2 else None
            uri = rec[3] if len(rec) > 3 else None
            arr = np.asarray(vec, dtype=np.float32).reshape(-1)
            if arr.shape[0] != self.config.dim:
                raise VectorError(
                    f"dimension mismatch for {sid!r}: expected {self.config.dim}, "
                    f"got {arr.shape[0]}")
            ids.append(str(sid))
            vecs.append(arr)
            oracles.append(None if oracle is None else int(oracle))
            uris.append(uri)
        if not ids:
            return 0
        mat = np.stack(vecs)
        payload = {
            "ids": ids,
            "vectors": _encode_f32(mat),
            "oracles": oracles,
            "uris": uris,
        }
        _, count = self._emit("ingest", payload)
        return count

    def _apply_ingest(self, ev: Event) -> int:
        p = ev.payload
        ids = [str(s) for s in p["ids"]]
        mat = _decode_f32(p["vectors"], (len(ids), self.config.dim))
        oracles = p.get("oracles") or [None] * len(ids)
        uris = p.get("uris") or [None] * len(ids)
        # Validation (duplicates, dimension, finiteness) happens inside the
        # index before any engine state mutates.
        self.index.insert_batch(ids, mat)
        c = self.config.num_classes
        n_old = len(self._ids)
        n_new = len(ids)
        self._ids.extend(ids)
        self._status = np.concatenate([self._status, np.zeros(n_new, dtype=np.int8)])
        uniform = np.full((n_new, c), 1.0 / c, dtype=np.float32)
        self._probs = np.concatenate([self._probs, uniform])
        self._alpha = np.concatenate([self._alpha, np.zeros(n_new)])
        self._source = np.concatenate(
            [self._source, np.full(n_new, _SOURCE_CODE[Source.FUSED], dtype=np.int8)])
        self._argmax = np.concatenate([self._argmax, np.zeros(n_new, dtype=np.int32)])
        gain0 = self._snap(annotation_gain(0.0, self.config.annotator_alpha,
                                           self.config.gain_mode))
        self._gain = np.concatenate([self._gain, np.full(n_new, gain0)])
        orc = np.array([-1 if o is None else int(o) for o in oracles], dtype=np.int32)
        self._oracle = np.concatenate([self._oracle, orc])
        self._model_probs = np.concatenate(
            [self._model_probs, np.zeros((n_new, c), dtype=np.float32)])
        self._has_model = np.concatenate([self._has_model, np.zeros(n_new, dtype=bool)])
        self._ann_event_seq = np.concatenate(
            [self._ann_event_seq, np.full(n_new, -1, dtype=np.int64)])
        for i, uri in enumerate(uris):
            if uri is not None:
                self._uris[n_old + i] = str(uri)
        return n_new

    # ------------------------------------------------------- model predictions

    def set_model_predictions(
        self, batch: Iterable[tuple[str, np.ndarray]]
    ) -> tuple[int, list[str]]:
        """Install model probability vectors and re-fuse the named samples.

        Applies every valid entry; returns (updated count, invalid ids).
        """
        ids: list[str] = []
        rows: list[np.ndarray] = []
        invalid: list[str] = []
        for sid, probs in batch:
            sid = str(sid)
            arr = np.asarray(probs, dtype=np.float32).reshape(-1)
            if sid not in self.index or arr.shape[0] != self.config.num_classes \
                    or not np.all(np.isfinite(arr)) or np.any(arr < 0) or arr.sum() <= 0:
                invalid.append(sid)
                continue
            ids.append(sid)
            rows.append(arr)
        if not ids:
            return 0, invalid
        payload = {"ids": ids, "probs": _encode_f32(np.stack(rows))}
        _, count = self._emit("predict", payload)
        return count, invalid

    def _apply_predict(self, ev: Event) -> int:
        p = ev.payload
        ids = [str(s) for s in p["ids"]]
        mat = _decode_f32(p["probs"], (len(ids), self.config.num_classes))
        rows = np.array([self.index.row_of(sid) for sid in ids], dtype=np.int64)
        norm = mat.astype(np.float64)
        norm /= norm.sum(axis=1, keepdims=True)
        self._model_probs[rows] = norm.astype(np.float32)
        self._has_model[rows] = True
        sims_all = self._ann_sims_bulk(rows)
        for i, row in enumerate(rows):
            if self._status[row] in (Status.ANNOTATED, Status.TOMBSTONED):
                continue  # the annotator's label outranks a model refresh
            sims = sims_all[i] if sims_all is not None else None
            self._refresh(int(row), sims)
        return len(ids)

    # ----------------------------------------------------------------- fusion

    def _snap(self, gain: float) -> float:
        return 0.0 if gain < GAIN_SNAP else gain

    def _ann_sims_bulk(self, rows: np.ndarray) -> np.ndarray | None:
        if not self._ann_rows:
            return None
        vecs = self.index.matrix()[rows]
        return vecs @ self._ann_mat[: len(self._ann_rows)].T

    def _data_view(self, row: int, sims: np.ndarray | None = None) -> PredictionState | None:
        """Weighted-NN prediction from the k nearest annotated samples with
        similarity above the threshold, or None when no neighbor qualifies."""
        m = len(self._ann_rows)
        if m == 0:
            return None
        if sims is None:
            sims = self._ann_mat[:m] @ self.index.vector_at(row)
        delta = self.config.similarity_threshold
        ok = np.nonzero((sims >= delta) & (self._ann_alphas[:m] * sims > 0))[0]
        if ok.shape[0] == 0:
            return None
        # Exclude the sample itself (an annotated row being refreshed must not
        # vote for its own label).
        if row in self._row_ann_pos:
            ok = ok[ok != self._row_ann_pos[row]]
            if ok.shape[0] == 0:
                return None
        order = np.lexsort((ok, -sims[ok]))[: self.config.k]
        chosen = ok[order]
        neighbors = []
        for pos in chosen:
            state = PredictionState.one_hot(int(self._ann_labels[pos]),
                                            self.config.num_classes,
                                            float(self._ann_alphas[pos]))
            neighbors.append((state, float(np.clip(sims[pos], -1.0, 1.0))))
        return fusion.knn_predict(neighbors, delta, self.config.num_classes)

    def _model_view(self, row: int) -> PredictionState | None:
        if not self._has_model[row]:
            return None
        probs = self._model_probs[row].astype(np.float64)
        probs /= probs.sum()
        alpha = fusion.model_confidence(float(probs.max()), self.config.num_classes)
        return PredictionState(probs, alpha, Source.MODEL)

    def _refresh(self, row: int, sims: np.ndarray | None = None) -> None:
        """Recompute the fused state and gain of one non-annotated sample."""
        model = self._model_view(row)
        data = self._data_view(row, sims)
        if model is not None and data is not None:
            state = fusion.fuse_predictions(model, data, self.config.fusion)
        elif model is not None:
            state = model
        elif data is not None:
            state = data
        else:
            state = PredictionState.uniform(self.config.num_classes)
        self._store_state(row, state)
        self._gain[row] = self._snap(annotation_gain(
            state.alpha, self.config.annotator_alpha, self.config.gain_mode))

    def _store_state(self, row: int, state: PredictionState) -> None:
        self._probs[row] = state.probs.astype(np.float32)
        self._alpha[row] = state.alpha
        self._source[row] = _SOURCE_CODE[state.source]
        self._argmax[row] = state.argmax

    # -------------------------------------------------------------- annotation

    def apply_annotation(self, sample_id: str, label: int,
                         annotator_alpha: float | None = None) -> RecheckReport:
        sample_id = str(sample_id)
        if sample_id not in self.index:
            raise UnknownSampleError(sample_id)
        row = self.index.row_of(sample_id)
        if self._status[row] == Status.ANNOTATED:
            raise AlreadyAnnotatedError(sample_id, int(self._ann_event_seq[row]))
        if self._status[row] == Status.TOMBSTONED:
            raise EngineError(f"sample {sample_id!r} is tombstoned")
        if not 0 <= int(label) < self.config.num_classes:
            raise ValueError(
                f"label {label} out of range for {self.config.num_classes} classes")
        alpha = self.config.annotator_alpha if annotator_alpha is None else float(annotator_alpha)
        if not 0.0 <= alpha <= 1.0:
            raise ValueError("annotator confidence must lie in [0, 1]")
        payload = {"id": sample_id, "label": int(label), "alpha": alpha}
        _, report = self._emit("annotate", payload)
        return report

    def _apply_annotate(self, ev: Event) -> RecheckReport:
        p = ev.payload
        sample_id = str(p["id"])
        label = int(p["label"])
        alpha = float(p["alpha"])
        if sample_id not in self.index:
            raise UnknownSampleError(sample_id)
        row = self.index.row_of(sample_id)
        if self._status[row] == Status.ANNOTATED:
            raise AlreadyAnnotatedError(sample_id, int(self._ann_event_seq[row]))
        state = PredictionState.one_hot(label, self.config.num_classes, alpha)
        self._store_state(row, state)
        self._status[row] = Status.ANNOTATED
        self._gain[row] = 0.0
        self._ann_event_seq[row] = ev.seq
        self._ann_append(row, label, alpha)
        report = RecheckReport(sample_id=sample_id)
        vec = self.index.vector_at(row)
        hits = self.index.range(vec, self.config.delta_distance,
                                overfetch=self.config.range_overfetch)
        for hit in hits:
            nrow = self.index.row_of(hit.sample_id)
            if self._status[nrow] in (Status.ANNOTATED, Status.TOMBSTONED):
                continue
            old_gain = float(self._gain[nrow])
            self._refresh(nrow)
            report.updated.append((hit.sample_id, old_gain, float(self._gain[nrow])))
        return report

    def _ann_append(self, row: int, label: int, alpha: float) -> None:
        pos = len(self._ann_rows)
        if pos >= self._ann_mat.shape[0]:
            new_cap = max(64, int(self._ann_mat.shape[0] * 1.5), pos + 1)
            mat = np.zeros((new_cap, self.config.dim), dtype=np.float32)
            mat[:pos] = self._ann_mat[:pos]
            self._ann_mat = mat
            self._ann_labels = np.concatenate(
                [self._ann_labels, np.zeros(new_cap - pos, dtype=np.int32)])
            self._ann_alphas = np.concatenate(
                [self._ann_alphas, np.zeros(new_cap - pos)])
        self._ann_mat[pos] = self.index.vector_at(row)
        self._ann_labels[pos] = label
        self._ann_alphas[pos] = alpha
        self._ann_rows.append(row)
        self._row_ann_pos[row] = pos

    # --------------------------------------------------------------- selection

    def select_batch(self, size: int) -> list[str]:
        """Draw up to ``size`` unlabeled samples proportional to gain."""
        return self._select(size, "gain")

    def select_unlabeled_batch(self, size: int) -> list[str]:
        """Draw up to ``size`` unlabeled samples proportional to their
        spread-coverage weight (distance to already-selected neighbors)."""
        return self._select(size, "semi")

    def _select(self, size: int, mode: str) -> list[str]:
        if size < 1:
            raise ValueError("batch size must be >= 1")
        payload = {"b": int(size), "mode": mode, "ids": None}
        ev = Event(self.next_seq, "select", payload)
        ids = self._apply(ev)
        self.next_seq += 1
        if self.sink is not None:
            final = Event(ev.seq, "select", {"b": int(size), "mode": mode, "ids": ids})
            self.sink(final)
        return ids

    def _apply_select(self, ev: Event) -> list[str]:
        p = ev.payload
        size = int(p["b"])
        mode = p["mode"]
        eligible = np.nonzero(self._status == Status.UNLABELED)[0]
        if mode == "gain":
            weights = self._gain[eligible]
        elif mode == "semi":
            weights = np.array([self._semi_gain_row(int(r)) for r in eligible])
        else:
            raise ReplayError(f"unknown selection mode {mode!r}")
        mask = weights > 0
        eligible = eligible[mask]
        weights = weights[mask]
        chosen_rows: list[int] = []
        if eligible.shape[0] > 0:
            order = weighted_order(weights, self._rng, self.config.sampling_temperature)
            chosen_rows = self._walk_order(eligible[order], size)
        ids = [self._ids[r] for r in chosen_rows]
        for r in chosen_rows:
            self._status[r] = Status.SELECTED
        recorded = p.get("ids")
        if recorded is not None and list(recorded) != ids:
            raise ReplayError(
                f"select event {ev.seq} replay mismatch: recorded {recorded}, got {ids}")
        return ids

    def _walk_order(self, ordered_rows: np.ndarray, size: int) -> list[int]:
        """Accept draws in order, skipping same-batch redundancy: a candidate
        whose embedding sits within the locality radius of an earlier accepted
        pick with the same fused argmax is discarded."""
        if not self.config.redundancy_drop:
            return [int(r) for r in ordered_rows[:size]]
        sim_thr = self.config.similarity_threshold
        vecs = self.index.matrix()
        per_class_mat: dict[int, np.ndarray] = {}
        per_class_n: dict[int, int] = {}
        accepted: list[int] = []
        for r in ordered_rows:
            r = int(r)
            cls = int(self._argmax[r])
            mat = per_class_mat.get(cls)
            n = per_class_n.get(cls, 0)
            if mat is not None and n > 0:
                sims = mat[:n] @ vecs[r]
                if float(sims.max()) >= sim_thr:
                    continue
            if mat is None or n == mat.shape[0]:
                new_cap = max(64, 0 if mat is None else int(mat.shape[0] * 1.5))
                grown = np.zeros((new_cap, self.config.dim), dtype=np.float32)
                if mat is not None:
                    grown[:n] = mat[:n]
                per_class_mat[cls] = grown
                mat = grown
            mat[n] = vecs[r]
            per_class_n[cls] = n + 1
            accepted.append(r)
            if len(accepted) == size:
                break
        return accepted

    # ------------------------------------------------------------------- reads

    def semi_gain(self, sample_id: str) -> float:
        sample_id = str(sample_id)
        if sample_id not in self.index:
            raise UnknownSampleError(sample_id)
        return self._semi_gain_row(self.index.row_of(sample_id))

    def _semi_gain_row(self, row: int) -> float:
        hits = self.index.knn(self.index.vector_at(row), self.config.k + 1)
        total = 0.0
        used = 0
        for hit in hits:
            hrow = self.index.row_of(hit.sample_id)
            if hrow == row:
                continue
            if used == self.config.k:
                break
            used += 1
            if self._status[hrow] in (Status.SELECTED, Status.ANNOTATED):
                total += hit.cosine_distance
        return total

    def should_stop(self) -> StopDiagnostics:
        eligible = self._status == Status.UNLABELED
        gains = self._gain[eligible]
        max_gain = float(gains.max()) if gains.shape[0] else 0.0
        total = float(gains.sum()) if gains.shape[0] else 0.0
        positive = int((gains > 0).sum()) if gains.shape[0] else 0
        return StopDiagnostics(stop=max_gain <= self.config.stop_threshold,
                               max_gain=max_gain, total_gain=total,
                               positive_gain_count=positive)

    def stats(self) -> dict:
        n = len(self._ids)
        counts = {s.name.lower(): int((self._status == s).sum()) for s in Status}
        hist, _ = np.histogram(np.clip(self._gain, 0.0, 1.0), bins=32, range=(0.0, 1.0))
        annotated = counts["annotated"]
        return {
            "total": n,
            "counts": counts,
            "annotation_fraction": annotated / n if n else 0.0,
            "gain_histogram": [int(x) for x in hist],
            "event_count": self.next_seq - 1,
        }

    def tombstone(self, sample_id: str) -> None:
        sample_id = str(sample_id)
        if sample_id not in self.index:
            raise UnknownSampleError(sample_id)
        self._emit("tombstone", {"id": sample_id})

    def _apply_tombstone(self, ev: Event) -> None:
        sample_id = str(ev.payload["id"])
        if sample_id not in self.index:
            raise UnknownSampleError(sample_id)
        row = self.index.row_of(sample_id)
        was_annotated = self._status[row] == Status.ANNOTATED
        self._status[row] = Status.TOMBSTONED
        self._gain[row] = 0.0
        if was_annotated:
            self._ann_remove(row)

    def _ann_remove(self, row: int) -> None:
        pos = self._row_ann_pos.pop(row, None)
        if pos is None:
            return
        m = len(self._ann_rows)
        keep = [i for i in range(m) if i != pos]
        self._ann_mat[: m - 1] = self._ann_mat[keep]
        self._ann_labels[: m - 1] = self._ann_labels[keep]
        self._ann_alphas[: m - 1] = self._ann_alphas[keep]
        del self._ann_rows[pos]
        self._row_ann_pos = {r: i for i, r in enumerate(self._ann_rows)}

    def record(self, sample_id: str) -> SampleRecord:
        sample_id = str(sample_id)
        if sample_id not in self.index:
            raise UnknownSampleError(sample_id)
        row = self.index.row_of(sample_id)
        probs = self._probs[row].astype(np.float64)
        probs /= probs.sum()
        state = PredictionState(probs, float(self._alpha[row]),
                                _CODE_SOURCE[int(self._source[row])])
        oracle = int(self._oracle[row])
        ann_seq = int(self._ann_event_seq[row])
        return SampleRecord(
            id=sample_id,
            embedding=self.index.vector_at(row).copy(),
            status=Status(int(self._status[row])),
            state=state,
            gain=float(self._gain[row]),
            oracle_label=None if oracle < 0 else oracle,
            payload_uri=self._uris.get(row),
            annotation_seq=None if ann_seq < 0 else ann_seq,
        )

    def ids_with_status(self, status: Status) -> list[str]:
        rows = np.nonzero(self._status == status)[0]
        return [self._ids[r] for r in rows]

    def oracle_label(self, sample_id: str) -> int | None:
        row = self.index.row_of(str(sample_id))
        val = int(self._oracle[row])
        return None if val < 0 else val

    def gain_of(self, sample_id: str) -> float:
        return float(self._gain[self.index.row_of(str(sample_id))])

    def alpha_of(self, sample_id: str) -> float:
        return float(self._alpha[self.index.row_of(str(sample_id))])

    # ---------------------------------------------------------------- snapshot

    def state_blob(self) -> bytes:
        """Serialize the engine's columnar state (excluding the vector index)."""
        n = len(self._ids)
        m = len(self._ann_rows)
        meta = {
            "n": n,
            "m": m,
            "next_seq": self.next_seq,
            "rng": self._rng.bit_generator.state,
            "uris": {str(k): v for k, v in sorted(self._uris.items())},
            "ann_rows": self._ann_rows,
        }
        meta_json = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
        ids_blob = bytearray()
        for sid in self._ids:
            raw = sid.encode("utf-8")
            ids_blob += len(raw).to_bytes(4, "little") + raw
        parts = [
            len(meta_json).to_bytes(8, "little"), meta_json,
            len(ids_blob).to_bytes(8, "little"), bytes(ids_blob),
            self._status[:n].astype("<i1").tobytes(),
            self._probs[:n].astype("<f4").tobytes(),
            self._alpha[:n].astype("<f8").tobytes(),
            self._source[:n].astype("<i1").tobytes(),
            self._argmax[:n].astype("<i4").tobytes(),
            self._gain[:n].astype("<f8").tobytes(),
            self._oracle[:n].astype("<i4").tobytes(),
            self._model_probs[:n].astype("<f4").tobytes(),
            self._has_model[:n].astype("<i1").tobytes(),
            self._ann_event_seq[:n].astype("<i8").tobytes(),
            self._ann_mat[:m].astype("<f4").tobytes(),
            self._ann_labels[:m].astype("<i4").tobytes(),
            self._ann_alphas[:m].astype("<f8").tobytes(),
        ]
        return b"".join(parts)

    def load_state_blob(self, data: bytes) -> None:
        pos = 0

        def take(k: int) -> bytes:
            nonlocal pos
            if pos + k > len(data):
                raise ReplayError("truncated engine state blob")
            out = data[pos : pos + k]
            pos += k
            return out

        meta_len = int.from_bytes(take(8), "little")
        meta = json.loads(take(meta_len))
        n, m = int(meta["n"]), int(meta["m"])
        c = self.config.num_classes
        ids_len = int.from_bytes(take(8), "little")
        ids_blob = take(ids_len)
        ids: list[str] = []
        off = 0
        for _ in range(n):
            ln = int.from_bytes(ids_blob[off : off + 4], "little")
            off += 4
            ids.append(ids_blob[off : off + ln].decode("utf-8"))
            off += ln
        self._ids = ids
        self._status = np.frombuffer(take(n), dtype="<i1").copy().astype(np.int8)
        self._probs = np.frombuffer(take(n * c * 4), dtype="<f4").reshape(n, c).copy()
        self._alpha = np.frombuffer(take(n * 8), dtype="<f8").copy()
        self._source = np.frombuffer(take(n), dtype="<i1").copy().astype(np.int8)
        self._argmax = np.frombuffer(take(n * 4), dtype="<i4").copy()
        self._gain = np.frombuffer(take(n * 8), dtype="<f8").copy()
        self._oracle = np.frombuffer(take(n * 4), dtype="<i4").copy()
        self._model_probs = np.frombuffer(take(n * c * 4), dtype="<f4").reshape(n, c).copy()
        self._has_model = np.frombuffer(take(n), dtype="<i1").copy().astype(bool)
        self._ann_event_seq = np.frombuffer(take(n * 8), dtype="<i8").copy()
        self._ann_mat = np.frombuffer(take(m * self.config.dim * 4),
                                      dtype="<f4").reshape(m, self.config.dim).copy()
        self._ann_labels = np.frombuffer(take(m * 4), dtype="<i4").copy()
        self._ann_alphas = np.frombuffer(take(m * 8), dtype="<f8").copy()
        if pos != len(data):
            raise ReplayError("trailing bytes in engine state blob")
        self.next_seq = int(meta["next_seq"])
        self._rng = np.random.Generator(np.random.PCG64())
        self._rng.bit_generator.state = meta["rng"]
        self._uris = {int(k): v for k, v in meta.get("uris", {}).items()}
        self._ann_rows = [int(r) for r in meta["ann_rows"]]
        self._row_ann_pos = {r: i for i, r in enumerate(self._ann_rows)}
