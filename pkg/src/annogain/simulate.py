"""Replay oracle-labeled embedding pools through the full coevolution loop.

One simulation arm = ingest a pool, warm-start the classifier on a small
random slice, then alternate batch selection and (noisy) oracle annotation,
optionally retraining the classifier at scheduled points so fresh model
predictions reshape the remaining gains. Held-out accuracy is recorded at
every budget fraction, against a stratified split fixed per seed.

Reports are canonical JSON: identical plans and seeds produce identical
bytes. Wall-clock timings are collected alongside but excluded from the
canonical payload (they are the one legitimately nondeterministic output).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from . import model as refmodel
from .engine import EngineConfig, SelectionEngine
from .formats import EmbeddingFile, LabelFile
from .fusion import confidence_to_accuracy
from .index import IndexConfig


@dataclass
class SimulationPlan:
    """Budget schedule and training cadence for one simulation."""

    budgets: list[float]
    seeds: list[int]
    update_points: list[int] = field(default_factory=list)  # annotation counts
    baseline: str = "gain"  # "gain" or "random"
    warm_fraction: float = 0.01
    annotator_alpha: float = 1.0
    batch_size: int = 32
    epochs: int = 200
    learning_rate: float = 2.0
    eval_fraction: float = 0.2
    k: int = 10
    delta_distance: float = 0.2
    stop_threshold: float | None = None
    gain_mode: str = "proxy"

    def __post_init__(self):
        if not self.budgets:
            raise ValueError("budget schedule must not be empty")
        prev = 0.0
        for b in self.budgets:
            if not 0.0 < b <= 1.0:
                raise ValueError(f"budget fraction {b} outside (0, 1]")
            if b <= prev:
                raise ValueError("budget schedule must be strictly increasing")
            prev = b
        if self.baseline not in ("gain", "random"):
            raise ValueError(f"unknown baseline {self.baseline!r}")
        if not self.seeds:
            raise ValueError("at least one seed required")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ValueError("eval_fraction must lie in (0, 1)")
        if not 0.0 < self.warm_fraction <= 1.0:
            raise ValueError("warm_fraction must lie in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "budgets": self.budgets,
            "seeds": self.seeds,
            "update_points": self.update_points,
            "baseline": self.baseline,
            "warm_fraction": self.warm_fraction,
            "annotator_alpha": self.annotator_alpha,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "learning_rate": self.learning_rate,
            "eval_fraction": self.eval_fraction,
            "k": self.k,
            "delta_distance": self.delta_distance,
            "stop_threshold": self.stop_threshold,
            "gain_mode": self.gain_mode,
        }


def make_gaussian_mixture(n: int, dim: int, num_classes: int, sigma: float,
                          seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalized Gaussian mixture: class means on the sphere, points
    scattered around them. ``sigma`` is the expected noise norm relative to
    the unit mean (per-coordinate deviation is sigma / sqrt(dim)), so class
    overlap is comparable across dimensionalities."""
    rng = np.random.Generator(np.random.PCG64(seed))
    means = rng.standard_normal((num_classes, dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    labels = rng.integers(num_classes, size=n)
    noise = (sigma / np.sqrt(dim)) * rng.standard_normal((n, dim))
    points = means[labels] + noise
    points /= np.linalg.norm(points, axis=1, keepdims=True)
    return points.astype(np.float32), labels.astype(np.int32)


def stratified_split(labels: np.ndarray, eval_fraction: float,
                     rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Per-class shuffled split into (pool, eval) index arrays."""
    pool: list[int] = []
    held: list[int] = []
    for c in np.unique(labels):
        idx = np.nonzero(labels == c)[0]
        idx = idx[rng.permutation(idx.shape[0])]
        n_eval = int(round(eval_fraction * idx.shape[0]))
        n_eval = min(n_eval, idx.shape[0] - 1)
        held.extend(idx[:n_eval].tolist())
        pool.extend(idx[n_eval:].tolist())
        if idx.shape[0] - n_eval < 1:
            raise ValueError(f"class {c} absent from training split")
    return np.array(sorted(pool)), np.array(sorted(held))


class _NoisyOracle:
    """Answers annotation requests with the true label, flipped uniformly to
    a wrong class with the probability implied by the annotator confidence."""

    def __init__(self, annotator_alpha: float, num_classes: int, rng: np.random.Generator):
        acc = confidence_to_accuracy(annotator_alpha, num_classes)
        self.p_flip = 1.0 - acc
        self.num_classes = num_classes
        self.rng = rng

    def label(self, true_label: int) -> int:
        if self.p_flip > 0.0 and self.rng.random() < self.p_flip:
            wrong = int(self.rng.integers(self.num_classes - 1))
            return wrong if wrong < true_label else wrong + 1
        return int(true_label)


def run_simulation(embeddings: EmbeddingFile, oracle: LabelFile,
                   plan: SimulationPlan) -> dict:
    """Run every seed of the plan; returns the report dict (see module doc)."""
    if embeddings.count != oracle.count:
        raise ValueError(
            f"embedding count {embeddings.count} != label count {oracle.count}")
    labels = oracle.labels
    if np.any(labels < 0):
        raise ValueError("simulation needs a fully labeled oracle (-1 found)")
    num_classes = oracle.num_classes
    ids = embeddings.id_list()
    seed_reports = []
    timings = []
    for seed in plan.seeds:
        t_start = time.perf_counter()
        report, phase_seconds = _run_seed(embeddings.vectors, labels, ids,
                                          num_classes, plan, seed)
        phase_seconds["total"] = time.perf_counter() - t_start
        seed_reports.append(report)
        timings.append(phase_seconds)
    mean_by_budget = []
    for bi, fraction in enumerate(plan.budgets):
        accs = [r["budgets"][bi]["accuracy"] for r in seed_reports]
        mean_by_budget.append({
            "fraction": fraction,
            "accuracy": float(np.mean(accs)),
            "stopped": any(r["budgets"][bi]["stopped"] for r in seed_reports),
        })
    report = {
        "plan": plan.to_dict(),
        "num_classes": num_classes,
        "dim": int(embeddings.dim),
        "pool_total": int(embeddings.count),
        "seeds": seed_reports,
        "mean_by_budget": mean_by_budget,
        "timings": timings,
    }
    return report


def _run_seed(vectors: np.ndarray, labels: np.ndarray, ids: list[str],
              num_classes: int, plan: SimulationPlan, seed: int) -> tuple[dict, dict]:
    phases: dict[str, float] = {}
    split_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(1,))))
    warm_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(2,))))
    noise_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(3,))))
    random_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(4,))))

    pool_idx, eval_idx = stratified_split(labels, plan.eval_fraction, split_rng)
    pool_n = pool_idx.shape[0]
    eval_x = vectors[eval_idx].astype(np.float64)
    eval_y = labels[eval_idx]
    schedule = [max(1, int(round(b * pool_n))) for b in plan.budgets]
    if schedule[-1] > pool_n:
        raise ValueError("budget schedule exceeds pool size")

    config = EngineConfig(
        dim=vectors.shape[1], num_classes=num_classes, k=plan.k,
        delta_distance=plan.delta_distance, batch_size=plan.batch_size,
        annotator_alpha=plan.annotator_alpha, stop_threshold=plan.stop_threshold,
        gain_mode=plan.gain_mode, seed=seed,
        index=IndexConfig(mode="exact", seed=seed + 1),
    )
    engine = SelectionEngine(config)
    t0 = time.perf_counter()
    engine.ingest((ids[i], vectors[i], int(labels[i])) for i in pool_idx)
    phases["ingest"] = time.perf_counter() - t0
    pool_ids = [ids[i] for i in pool_idx]
    oracle_of = {ids[i]: int(labels[i]) for i in pool_idx}
    _pos = {ids[i]: i for i in pool_idx}
    noisy = _NoisyOracle(plan.annotator_alpha, num_classes, noise_rng)

    # Reference ceiling: the full pool with true labels.
    t0 = time.perf_counter()
    pool_x = vectors[pool_idx].astype(np.float64)
    pool_y = labels[pool_idx]
    ref_head = refmodel.train((pool_x, pool_y), num_classes, epochs=plan.epochs,
                              learning_rate=plan.learning_rate, seed=seed)
    reference_accuracy = refmodel.accuracy(ref_head, eval_x, eval_y)
    phases["reference_training"] = time.perf_counter() - t0

    annotated: list[str] = []

    def annotate(sample_id: str) -> None:
        engine.apply_annotation(sample_id, noisy.label(oracle_of[sample_id]),
                                plan.annotator_alpha)
        annotated.append(sample_id)

    # Random warm start, identical for both arms.
    t0 = time.perf_counter()
    warm_n = min(pool_n, max(1, int(round(plan.warm_fraction * pool_n))))
    warm_pick = warm_rng.choice(pool_n, size=warm_n, replace=False)
    for i in sorted(warm_pick.tolist()):
        annotate(pool_ids[i])
    phases["warm_annotation"] = time.perf_counter() - t0

    head: refmodel.LinearHead | None = None

    def retrain_and_push() -> None:
        nonlocal head
        ann_x = np.stack([vectors[_pos[i]] for i in annotated]).astype(np.float64)
        ann_y = np.array([engine.record(i).state.argmax for i in annotated])
        head = refmodel.train((ann_x, ann_y), num_classes, epochs=plan.epochs,
                              learning_rate=plan.learning_rate, seed=seed,
                              warm_start=head)
        probs = refmodel.predict_batch(head, vectors[pool_idx].astype(np.float64))
        engine.set_model_predictions(zip(pool_ids, probs))

    t0 = time.perf_counter()
    retrain_and_push()
    phases["warm_training"] = time.perf_counter() - t0

    update_points = sorted(set(plan.update_points))
    budget_rows = []
    stopped = False
    t_select = 0.0
    t_train = 0.0
    for fraction, target in zip(plan.budgets, schedule):
        while len(annotated) < target and not stopped:
            want = min(plan.batch_size, target - len(annotated))
            t0 = time.perf_counter()
            if plan.baseline == "random":
                remaining = [s for s in pool_ids if s not in set(annotated)]
                if not remaining:
                    stopped = True
                    break
                take = min(want, len(remaining))
                picks = random_rng.choice(len(remaining), size=take, replace=False)
                batch = [remaining[j] for j in sorted(picks.tolist())]
            else:
                batch = engine.select_batch(want)
                if not batch:
                    stopped = True
                    break
            t_select += time.perf_counter() - t0
            for sample_id in batch:
                annotate(sample_id)
                if len(annotated) in update_points:
                    t1 = time.perf_counter()
                    retrain_and_push()
                    t_train += time.perf_counter() - t1
        t0 = time.perf_counter()
        ann_x = np.stack([vectors[_pos[i]] for i in annotated]).astype(np.float64)
        ann_y = np.array([engine.record(i).state.argmax for i in annotated])
        eval_head = refmodel.train((ann_x, ann_y), num_classes, epochs=plan.epochs,
                                   learning_rate=plan.learning_rate, seed=seed,
                                   warm_start=head)
        acc = refmodel.accuracy(eval_head, eval_x, eval_y)
        t_train += time.perf_counter() - t0
        diag = engine.should_stop()
        budget_rows.append({
            "fraction": fraction,
            "target": target,
            "annotated": len(annotated),
            "accuracy": acc,
            "stopped": stopped or diag.stop,
            "max_gain": diag.max_gain,
            "positive_gain_count": diag.positive_gain_count,
        })
    phases["selection"] = t_select
    phases["training"] = t_train
    return ({
        "seed": seed,
        "pool_size": pool_n,
        "eval_size": int(eval_idx.shape[0]),
        "reference_accuracy": reference_accuracy,
        "budgets": budget_rows,
    }, phases)


def report_bytes(report: dict) -> bytes:
    """Canonical byte serialization of the deterministic report core.

    Timings are dropped: they are measurement noise, everything else is a
    pure function of plan + seeds + inputs.
    """
    core = {k: v for k, v in report.items() if k != "timings"}
    return json.dumps(core, sort_keys=True, separators=(",", ":")).encode()


def export_curve(report: dict) -> str:
    """Plain-text scaling curve: one row per budget point (seed means)."""
    lines = ["fraction,accuracy,stopped"]
    for row in report.get("mean_by_budget", []):
        lines.append(
            f"{row['fraction']:.6f},{row['accuracy']:.6f},"
            f"{'true' if row['stopped'] else 'false'}")
    return "\n".join(lines) + "\n"
