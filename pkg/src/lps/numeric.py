"""Scalar and vector kernels shared by the losses and the evaluation code.

Everything here works in float64. Functions accept a single vector or a
batch of row vectors where that makes sense.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

DEGENERATE_NORM = 1e-12


class InvalidInputError(ValueError):
    """Raised when a numeric kernel receives input outside its domain."""


def _as_finite(x, name: str = "input") -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return arr


def logsumexp(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    m = np.max(z, axis=axis, keepdims=True)
    out = m + np.log(np.sum(np.exp(z - m), axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax over the last axis.

    Raises:
        InvalidInputError: if any logit is non-finite or the last axis is empty.
    """
    z = _as_finite(logits, "logits")
    if z.ndim == 0 or z.shape[-1] == 0:
        raise InvalidInputError("softmax needs at least one logit")
    e = np.exp(z - np.max(z, axis=-1, keepdims=True))
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = _as_finite(logits, "logits")
    return z - logsumexp(z, axis=-1)[..., None]


def kl_divergence(p, q) -> float:
    """KL(p || q) with the convention 0 * ln 0 = 0."""
    p = _as_finite(p, "p")
    q = _as_finite(q, "q")
    if p.shape != q.shape:
        raise InvalidInputError(f"shape mismatch: {p.shape} vs {q.shape}")
    support = p > 0
    if np.any(q[support] <= 0):
        raise InvalidInputError("q has a zero entry where p is positive")
    ps = p[support]
    return max(float(np.sum(ps * np.log(ps / q[support]))), 0.0)


def l2_normalize(v) -> tuple[np.ndarray, bool]:
    """Return ``(v / ||v||, degenerate)``.

    Vectors with norm at most 1e-12 come back unchanged with ``degenerate``
    set instead of raising.
    """
    v = _as_finite(v, "v")
    norm = float(np.linalg.norm(v))
    if norm <= DEGENERATE_NORM:
        return v.copy(), True
    return v / norm, False


def normalize_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise L2 normalization. Returns ``(unit_rows, norms)``.

    Degenerate rows (norm <= 1e-12) pass through unchanged; their entry in
    ``norms`` is set to 0 so the backward pass can treat them as identity.
    """
    norms = np.linalg.norm(z, axis=1)
    degenerate = norms <= DEGENERATE_NORM
    safe = np.where(degenerate, 1.0, norms)
    u = z / safe[:, None]
    return u, np.where(degenerate, 0.0, norms)


def normalize_rows_backward(grad_u: np.ndarray, u: np.ndarray, norms: np.ndarray) -> np.ndarray:
    """Pull a gradient back through :func:`normalize_rows`."""
    live = norms > 0
    grad_z = grad_u.copy()
    if np.any(live):
        gu = grad_u[live]
        uu = u[live]
        radial = np.sum(gu * uu, axis=1, keepdims=True)
        grad_z[live] = (gu - uu * radial) / norms[live][:, None]
    return grad_z


def grad_check(
    f: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x,
    h: float = 1e-5,
) -> float:
    """Max relative error between the analytic and central-difference gradients.

    ``f`` maps a point to ``(value, analytic_gradient)``; the gradient must have
    the shape of ``x``. The per-entry denominator is
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    x = np.array(x, dtype=np.float64)
    _, analytic = f(x.copy())
    analytic = np.asarray(analytic, dtype=np.float64)
    if analytic.shape != x.shape:
        raise InvalidInputError(f"gradient shape {analytic.shape} != point shape {x.shape}")
    numeric = np.zeros_like(x)
    flat = x.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        f_plus = f(x.copy())[0]
        flat[i] = orig - h
        f_minus = f(x.copy())[0]
        flat[i] = orig
        num_flat[i] = (f_plus - f_minus) / (2.0 * h)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric) / denom))
