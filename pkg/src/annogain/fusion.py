"""Scalar confidence calculus for two-view label estimation.

A prediction's confidence ``alpha`` is the probability that its argmax label
is true, rescaled so chance-level accuracy maps to 0 and perfect accuracy to
1. The module provides:

  * the accuracy <-> confidence mapping,
  * a weighted nearest-neighbor ("data view") prediction,
  * Bayesian fusion of two predictors for the agreeing and diverging cases,
  * binary entropy and the expected gain of asking an annotator for a label.

Everything here is a pure function over value inputs; no shared state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable

import numpy as np

PROB_SUM_TOLERANCE = 1e-6


class Source(str, Enum):
    """Provenance of a prediction state."""

    MODEL = "model"
    DATA = "data"
    FUSED = "fused"
    ANNOTATOR = "annotator"


class FusionVariant(str, Enum):
    """How much probability mass two wrong predictors can agree on.

    ``LOWER_BOUND`` charges the full worst case (1-a1)(1-a2) to accidental
    agreement, yielding the most conservative fused confidence. The uniform
    variant spreads the wrong mass evenly over the other C-1 classes; the
    zero-mass variant assumes wrong predictions never collide.
    """

    LOWER_BOUND = "lower_bound"
    UNIFORM_OVER_CLASSES = "uniform_over_classes"
    ZERO_MASS = "zero_mass"


@dataclass(frozen=True)
class FusionConfig:
    num_classes: int
    variant: FusionVariant = FusionVariant.LOWER_BOUND
    confidence_threshold: float = 0.5

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must lie in [0, 1]")


@dataclass(frozen=True)
class PredictionState:
    """A probability vector over classes plus a scalar confidence.

    Invariants: probs is non-negative and sums to 1 (within 1e-6);
    alpha lies in [0, 1].
    """

    probs: np.ndarray
    alpha: float
    source: Source = Source.FUSED

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 1 or probs.shape[0] < 2:
            raise ValueError("probs must be a 1-D vector over >= 2 classes")
        if np.any(probs < -PROB_SUM_TOLERANCE):
            raise ValueError("probs components must be non-negative")
        if abs(float(probs.sum()) - 1.0) > PROB_SUM_TOLERANCE:
            raise ValueError(f"probs must sum to 1, got {float(probs.sum()):.8f}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")

    @property
    def argmax(self) -> int:
        return int(np.argmax(self.probs))

    @property
    def num_classes(self) -> int:
        return int(self.probs.shape[0])

    @staticmethod
    def uniform(num_classes: int, source: Source = Source.FUSED) -> "PredictionState":
        return PredictionState(np.full(num_classes, 1.0 / num_classes), 0.0, source)

    @staticmethod
    def one_hot(label: int, num_classes: int, alpha: float,
                source: Source = Source.ANNOTATOR) -> "PredictionState":
        probs = np.zeros(num_classes)
        probs[label] = 1.0
        return PredictionState(probs, alpha, source)


def accuracy_to_confidence(acc: float, num_classes: int) -> float:
    """Map raw accuracy to confidence: alpha = (acc - 1/C) / (1 - 1/C).

    Below-chance accuracy clamps to 0; alpha never leaves [0, 1].
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    if not 0.0 <= acc <= 1.0:
        raise ValueError(f"accuracy must lie in [0, 1], got {acc}")
    chance = 1.0 / num_classes
    return min(1.0, max(0.0, (acc - chance) / (1.0 - chance)))


def confidence_to_accuracy(alpha: float, num_classes: int) -> float:
    """Inverse mapping: the accuracy implied by a confidence value."""
    chance = 1.0 / num_classes
    return alpha + (1.0 - alpha) * chance


def model_confidence(p_max: float, num_classes: int) -> float:
    """Confidence of a model prediction from its top probability.

    ``p_max`` is clamped into [1/C, 1] first, so a below-chance top
    probability yields confidence 0 rather than an error.
    """
    if num_classes < 2:
        raise ValueError("num_classes must be >= 2")
    p = min(1.0, max(1.0 / num_classes, p_max))
    return accuracy_to_confidence(p, num_classes)


def knn_predict(
    neighbors: Iterable[tuple[PredictionState, float]],
    delta: float,
    num_classes: int,
) -> PredictionState:
    """Data-view prediction from annotated neighbors (weighted NN mixture).

    Each neighbor with similarity >= delta contributes its calibrated class
    distribution q = alpha * probs + (1 - alpha) * uniform, weighted by
    alpha * similarity. Calibration folds the neighbor's own uncertainty
    into the mixture, so a single neighbor yields exactly that neighbor's
    alpha after the confidence mapping instead of a spurious 1.0.

    Returns a uniform state with alpha 0 when no neighbor passes delta or
    the total weight is zero.
    """
    total = np.zeros(num_classes)
    weight_sum = 0.0
    uniform = np.full(num_classes, 1.0 / num_classes)
    for state, sim in neighbors:
        if state.num_classes != num_classes:
            raise ValueError("neighbor class count mismatch")
        if not -1.0 <= sim <= 1.0 + 1e-9:
            raise ValueError(f"similarity out of range: {sim}")
        if sim < delta:
            continue
        w = state.alpha * sim
        if w <= 0.0:
            continue
        calibrated = state.alpha * state.probs + (1.0 - state.alpha) * uniform
        total += w * calibrated
        weight_sum += w
    if weight_sum <= 0.0:
        return PredictionState.uniform(num_classes, Source.DATA)
    probs = total / weight_sum
    probs = probs / probs.sum()
    alpha = accuracy_to_confidence(float(probs.max()), num_classes)
    return PredictionState(probs, alpha, Source.DATA)


def _match_mass(a1: float, a2: float, cfg: FusionConfig) -> float:
    """P(both wrong yet agreeing) under the configured variant."""
    if cfg.variant is FusionVariant.LOWER_BOUND:
        return (1.0 - a1) * (1.0 - a2)
    if cfg.variant is FusionVariant.UNIFORM_OVER_CLASSES:
        return (1.0 - a1) * (1.0 - a2) / (cfg.num_classes - 1)
    return 0.0


def _other_mass(a_hi: float, a_lo: float, cfg: FusionConfig) -> float:
    """P(the lower-confidence predictor is right) mass in the diverging case."""
    if cfg.variant is FusionVariant.LOWER_BOUND:
        return (1.0 - a_hi) * a_lo
    if cfg.variant is FusionVariant.UNIFORM_OVER_CLASSES:
        return (1.0 - a_hi) * a_lo / (cfg.num_classes - 1)
    return 0.0


def fuse_agree(a1: float, a2: float, cfg: FusionConfig) -> float:
    """Fused confidence when two predictors name the same label.

    alpha = a1*a2 / (a1*a2 + P(match with other label)). A degenerate 0/0
    resolves to 1.0 when either input is certain (certainty absorbs) and to
    0.0 otherwise.
    """
    _check_alpha(a1)
    _check_alpha(a2)
    num = a1 * a2
    den = num + _match_mass(a1, a2, cfg)
    if den == 0.0:
        return 1.0 if (a1 == 1.0 or a2 == 1.0) else 0.0
    return min(1.0, num / den)


def fuse_disagree(a1: float, a2: float, cfg: FusionConfig) -> tuple[int, float]:
    """Fused confidence when two predictors name different labels.

    Orders the inputs internally; returns (winner, alpha) where winner is 1
    or 2 for the higher-confidence input (ties go to input 1). The winner's
    confidence becomes a_hi*(1-a_lo) / (a_hi*(1-a_lo) + P(other)); a
    degenerate 0/0 (both 0 or both 1) resolves to the symmetric value 0.5.
    """
    _check_alpha(a1)
    _check_alpha(a2)
    if a1 >= a2:
        winner, a_hi, a_lo = 1, a1, a2
    else:
        winner, a_hi, a_lo = 2, a2, a1
    num = a_hi * (1.0 - a_lo)
    den = num + _other_mass(a_hi, a_lo, cfg)
    if den == 0.0:
        return winner, 0.5
    return winner, min(1.0, num / den)


def fuse_predictions(model: PredictionState, data: PredictionState,
                     cfg: FusionConfig) -> PredictionState:
    """Combine the model view and the data view into one fused state.

    Agreeing argmaxes fuse confidences multiplicatively (fuse_agree) and mix
    the two probability vectors weighted by their alphas. Diverging argmaxes
    follow the threshold rule: exactly one confident side wins outright at
    its own confidence; two confident sides resolve by fuse_disagree with a
    reduced confidence; two unconfident sides keep the higher-alpha state.
    """
    if model.num_classes != data.num_classes:
        raise ValueError(
            f"class count mismatch: model {model.num_classes} vs data {data.num_classes}"
        )
    if model.num_classes != cfg.num_classes:
        raise ValueError("prediction states do not match fusion config class count")

    if model.argmax == data.argmax:
        alpha = fuse_agree(model.alpha, data.alpha, cfg)
        w = model.alpha + data.alpha
        if w > 0.0:
            probs = (model.alpha * model.probs + data.alpha * data.probs) / w
        else:
            probs = 0.5 * (model.probs + data.probs)
        probs = probs / probs.sum()
        return PredictionState(probs, alpha, Source.FUSED)

    thr = cfg.confidence_threshold
    model_conf = model.alpha >= thr
    data_conf = data.alpha >= thr
    if model_conf != data_conf:
        chosen = model if model_conf else data
        return PredictionState(chosen.probs, max(model.alpha, data.alpha), Source.FUSED)
    if model_conf and data_conf:
        winner, alpha = fuse_disagree(model.alpha, data.alpha, cfg)
        chosen = model if winner == 1 else data
        return PredictionState(chosen.probs, alpha, Source.FUSED)
    chosen = model if model.alpha >= data.alpha else data
    return PredictionState(chosen.probs, chosen.alpha, Source.FUSED)


def binary_entropy(alpha: float) -> float:
    """H(a) = -a ln a - (1-a) ln(1-a) in nats, with H(0) = H(1) = 0."""
    _check_alpha(alpha)
    h = 0.0
    if 0.0 < alpha < 1.0:
        h = -alpha * math.log(alpha) - (1.0 - alpha) * math.log(1.0 - alpha)
    return h


class GainMode(str, Enum):
    PROXY = "proxy"
    ENTROPY = "entropy"


def annotation_gain(merged_alpha: float, annotator_alpha: float,
                    mode: GainMode = GainMode.PROXY) -> float:
    """Expected benefit of asking the annotator to label this sample.

    Proxy mode is the confidence shortfall max(a_ann - a_merged, 0);
    entropy mode is the entropy surplus max(H(a_merged) - H(a_ann), 0).
    """
    _check_alpha(merged_alpha)
    _check_alpha(annotator_alpha)
    if mode is GainMode.PROXY or mode == GainMode.PROXY.value:
        return max(annotator_alpha - merged_alpha, 0.0)
    return max(binary_entropy(merged_alpha) - binary_entropy(annotator_alpha), 0.0)


def _check_alpha(a: float) -> None:
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"confidence must lie in [0, 1], got {a}")
