"""Dense float32 arithmetic used by the encoder and the pipeline.

Tensors are plain C-contiguous ``numpy.float32`` arrays. Reductions are
accumulated in float64 and rounded once to float32 on output, which keeps
results independent of how many zero terms a dot product contains.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import NonFiniteError, ShapeError

__all__ = ["as_tensor", "matmul", "linear", "softmax_lastdim", "layer_norm", "gelu"]


def as_tensor(x) -> np.ndarray:
    """Return ``x`` as a C-contiguous float32 array (copy only if needed)."""
    return np.ascontiguousarray(x, dtype=np.float32)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of ``a[M, K]`` and ``b[K, N]``."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = a.astype(np.float64) @ b.astype(np.float64)
    return as_tensor(out)


def linear(x: np.ndarray, weight: np.ndarray, bias: np.ndarray | None = None) -> np.ndarray:
    """``x @ weight.T + bias`` with ``weight`` stored as ``[out, in]``."""
    x = np.asarray(x)
    weight = np.asarray(weight)
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    if bias is not None and np.shape(bias) != (weight.shape[0],):
        raise ShapeError(f"linear: bias {np.shape(bias)} does not match weight {weight.shape}")
    out = x.astype(np.float64) @ weight.astype(np.float64).T
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)
    return as_tensor(out)


def softmax_lastdim(t: np.ndarray) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 0 or t.shape[-1] < 1:
        raise ShapeError(f"softmax: last dimension must be >= 1, got shape {t.shape}")
    if not np.all(np.isfinite(t)):
        raise NonFiniteError("softmax: input contains NaN or inf")
    z = np.exp(t - t.max(axis=-1, keepdims=True))
    return as_tensor(z / z.sum(axis=-1, keepdims=True))


def layer_norm(t: np.ndarray, gamma: np.ndarray, beta: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Normalize over the last axis; population variance, ``eps`` inside the root."""
    t = np.asarray(t, dtype=np.float64)
    d = t.shape[-1]
    if np.shape(gamma) != (d,) or np.shape(beta) != (d,):
        raise ShapeError(
            f"layer_norm: gamma {np.shape(gamma)} / beta {np.shape(beta)} do not match last dim {d}"
        )
    mean = t.mean(axis=-1, keepdims=True)
    centered = t - mean
    var = (centered * centered).mean(axis=-1, keepdims=True)
    out = centered / np.sqrt(var + eps)
    out = out * np.asarray(gamma, dtype=np.float64) + np.asarray(beta, dtype=np.float64)
    return as_tensor(out)


def gelu(t: np.ndarray) -> np.ndarray:
    """Exact GELU, ``x * Phi(x)`` with the erf form of the normal CDF."""
    t = np.asarray(t, dtype=np.float64)
    return as_tensor(0.5 * t * (1.0 + erf(t / np.sqrt(2.0))))
