"""Deterministic multinomial logistic classifier over embeddings.

Stands in for a fine-tuned network so the full select -> annotate -> update
-> re-estimate loop runs at desk scale. Full-batch gradient descent from a
zero initialization keeps training deterministic, invariant to duplicating
the dataset, and equivariant under class relabeling; a seeded mini-batch
mode exists for larger pools.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

HEAD_MAGIC = b"ICLH"
HEAD_VERSION = 1

STABLE_LEARNING_RATE = 0.1  # loss is non-increasing at or below this (with 1/sqrt(t) decay)
DEFAULT_L2 = 1e-4


@dataclass
class LinearHead:
    """Affine map + softmax. Immutable once trained."""

    weights: np.ndarray  # (num_classes, dim)
    bias: np.ndarray  # (num_classes,)
    l2_penalty: float = DEFAULT_L2

    @property
    def num_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1]

    def operator_norm(self) -> float:
        """Spectral norm of the weight matrix (Lipschitz constant of the
        linear part on unit features)."""
        return float(np.linalg.norm(self.weights, 2))

    def serialize(self) -> bytes:
        out = [HEAD_MAGIC, struct.pack("<H", HEAD_VERSION),
               struct.pack("<I", self.num_classes), struct.pack("<I", self.dim),
               self.weights.astype("<f4").tobytes(),
               self.bias.astype("<f4").tobytes()]
        return b"".join(out)

    @classmethod
    def deserialize(cls, data: bytes) -> "LinearHead":
        if len(data) < 14:
            raise ValueError("truncated head: missing header")
        if data[:4] != HEAD_MAGIC:
            raise ValueError(f"bad magic {data[:4]!r}, expected {HEAD_MAGIC!r}")
        version = struct.unpack("<H", data[4:6])[0]
        if version != HEAD_VERSION:
            raise ValueError(f"unsupported head version {version}, expected {HEAD_VERSION}")
        num_classes = struct.unpack("<I", data[6:10])[0]
        dim = struct.unpack("<I", data[10:14])[0]
        need = 14 + 4 * num_classes * (dim + 1)
        if len(data) != need:
            raise ValueError(f"head payload has {len(data)} bytes, expected {need}")
        w = np.frombuffer(data[14 : 14 + 4 * num_classes * dim], dtype="<f4")
        b = np.frombuffer(data[14 + 4 * num_classes * dim :], dtype="<f4")
        return cls(w.astype(np.float64).reshape(num_classes, dim),
                   b.astype(np.float64), l2_penalty=0.0)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Numerically stable softmax over the last axis."""
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict(head: LinearHead, v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if v.shape[0] != head.dim:
        raise ValueError(f"dimension mismatch: head expects {head.dim}, got {v.shape[0]}")
    return softmax(head.weights @ v + head.bias)


def predict_batch(head: LinearHead, mat: np.ndarray) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.shape[1] != head.dim:
        raise ValueError(f"dimension mismatch: head expects {head.dim}, got {mat.shape[1]}")
    return softmax(mat @ head.weights.T + head.bias)


def loss_and_gradient(weights: np.ndarray, bias: np.ndarray, x: np.ndarray,
                      y: np.ndarray, l2_penalty: float) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean cross-entropy + L2 ridge on the weights (bias excluded).

    Returns (loss, dL/dW, dL/db). Exposed separately so the gradient can be
    checked against central finite differences of the same loss.
    """
    n = x.shape[0]
    probs = softmax(x @ weights.T + bias)
    eps = 1e-300  # guard exact zeros; softmax underflow only at extreme logits
    ll = -np.log(probs[np.arange(n), y] + eps).mean()
    loss = ll + 0.5 * l2_penalty * float((weights ** 2).sum())
    delta = probs
    delta[np.arange(n), y] -= 1.0
    grad_w = delta.T @ x / n + l2_penalty * weights
    grad_b = delta.sum(axis=0) / n
    return float(loss), grad_w, grad_b


def train(
    labeled: list[tuple[np.ndarray, int]] | tuple[np.ndarray, np.ndarray],
    num_classes: int,
    epochs: int = 300,
    learning_rate: float = STABLE_LEARNING_RATE,
    seed: int = 0,
    l2_penalty: float = DEFAULT_L2,
    batch_size: int | None = None,
    warm_start: LinearHead | None = None,
) -> LinearHead:
    """Fit a linear head by gradient descent with a 1/sqrt(t) step decay.

    ``labeled`` is either a list of (vector, class) pairs or a pre-stacked
    (matrix, labels) tuple. Full batch by default; passing ``batch_size``
    switches to seeded mini-batch shuffling. ``warm_start`` continues from
    an existing head (continual training).
    """
    if isinstance(labeled, tuple):
        x, y = labeled
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
    else:
        if len(labeled) == 0:
            raise ValueError("cannot train on an empty dataset")
        x = np.stack([np.asarray(v, dtype=np.float64) for v, _ in labeled])
        y = np.asarray([c for _, c in labeled], dtype=np.int64)
    if x.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    if y.min() < 0 or y.max() >= num_classes:
        raise ValueError("labels out of range for num_classes")

    dim = x.shape[1]
    if warm_start is not None:
        if warm_start.dim != dim or warm_start.num_classes != num_classes:
            raise ValueError("warm start head shape mismatch")
        w = warm_start.weights.copy()
        b = warm_start.bias.copy()
    else:
        w = np.zeros((num_classes, dim))
        b = np.zeros(num_classes)

    rng = np.random.Generator(np.random.PCG64(seed))
    n = x.shape[0]
    step = 0
    for _ in range(epochs):
        if batch_size is None or batch_size >= n:
            step += 1
            _, gw, gb = loss_and_gradient(w, b, x, y, l2_penalty)
            lr = learning_rate / np.sqrt(step)
            w -= lr * gw
            b -= lr * gb
        else:
            order = rng.permutation(n)
            for start in range(0, n, batch_size):
                step += 1
                sel = order[start : start + batch_size]
                _, gw, gb = loss_and_gradient(w, b, x[sel], y[sel], l2_penalty)
                lr = learning_rate / np.sqrt(step)
                w -= lr * gw
                b -= lr * gb
    return LinearHead(w, b, l2_penalty)


def accuracy(head: LinearHead, x: np.ndarray, y: np.ndarray) -> float:
    preds = np.argmax(predict_batch(head, x), axis=1)
    return float((preds == np.asarray(y)).mean())
