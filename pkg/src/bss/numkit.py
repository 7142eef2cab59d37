"""Small dense-numerics helpers and seeded randomness.

Vectors and matrices are plain float64 numpy arrays. Randomness always flows
through an explicit :class:`numpy.random.Generator`; nothing here touches
global RNG state.
"""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, InputError

CE_EPS = 1e-12

Rng = np.random.Generator


def make_rng(seed: int) -> Rng:
    """Return a PCG64 generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(seed))


def child_seeds(seed: int, n: int) -> list[int]:
    """Derive ``n`` independent 64-bit seeds from ``seed``.

    Use these instead of sharing one generator between independent consumers.
    """
    states = np.random.SeedSequence(seed).generate_state(n, dtype=np.uint64)
    return [int(s) for s in states]


def softmax(v, axis=-1):
    v = np.asarray(v, dtype=np.float64)
    shifted = v - np.max(v, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def cross_entropy(pred, label) -> float:
    """Negative log-likelihood of ``label`` under probability vector ``pred``.

    Probabilities are clamped at ``CE_EPS`` so the loss never exceeds
    ``-log(CE_EPS)``.
    """
    pred = np.asarray(pred, dtype=np.float64)
    label = int(label)
    if not 0 <= label < pred.shape[-1]:
        raise InputError(f"label {label} out of range for {pred.shape[-1]} classes")
    return float(-np.log(max(pred[label], CE_EPS)))


def cross_entropy_batch(probs, labels):
    """Row-wise :func:`cross_entropy` for a (B, c) matrix."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    c = probs.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise InputError(f"labels out of range for {c} classes")
    picked = probs[np.arange(len(labels)), labels]
    return -np.log(np.maximum(picked, CE_EPS))


def cosine_similarity(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def cosine_similarity_rows(a, b):
    """Cosine similarity between matching rows of two (B, d) matrices."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InputError(f"shape mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise DegenerateInputError("cosine similarity of a zero-norm vector")
    return np.clip(np.sum(a * b, axis=1) / (na * nb), -1.0, 1.0)


def min_max_normalize(xs):
    """Rescale to [0, 1]; a constant input maps to 0.5 everywhere."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.size == 0:
        raise InputError("cannot normalize an empty sequence")
    lo, hi = xs.min(), xs.max()
    if hi == lo:
        return np.full_like(xs, 0.5)
    return (xs - lo) / (hi - lo)


def l2_norm(v) -> float:
    return float(np.sqrt(np.sum(np.square(np.asarray(v, dtype=np.float64)))))


def weighted_sample_without_replacement(weights, rng: Rng):
    """Draw a full random permutation of ``range(len(weights))``.

    The permutation has the law of successive draws where the next index is
    ``i`` with probability ``w_i / sum(w_j for j remaining)``. Uses
    exponential keys (Efraimidis-Spirakis): ``key_i = E_i / w_i`` with
    ``E_i ~ Exp(1)``, sorted ascending. One pass over the generator.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise InputError("weights must be a non-empty 1-d sequence")
    # min() is nan if any weight is nan; sum() is inf if any weight is inf
    if not (w.min() > 0 and np.isfinite(w.sum())):
        raise InputError("all weights must be finite and > 0")
    keys = rng.standard_exponential(w.size) / w
    return np.argsort(keys, kind="stable")
