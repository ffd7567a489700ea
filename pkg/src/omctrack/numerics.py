"""Dense numeric kernels shared by the tracking pipeline.

Conventions used throughout the package:

* a *grid* is a float32 ndarray of shape (H, W, C), row-major, channel-last;
* a *matrix* is a float32 ndarray of shape (rows, cols);
* every kernel accumulates in float64 and rounds once to float32, with a
  fixed reduction order, so repeated runs produce identical bits.

All functions are pure; concurrent calls are safe.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ensure_grid",
    "ensure_matrix",
    "matmul",
    "conv3x3_forward",
    "sigmoid",
    "l2_normalize",
    "l2_normalize_grid",
]

# Norms at or below this are treated as zero vectors.
NORM_EPS = 1e-12


def ensure_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate a 2-d finite array and return it as an ndarray."""
    a = np.asarray(a)
    if a.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def ensure_grid(g, channels: int | None = None, name: str = "grid") -> np.ndarray:
    """Validate an (H, W, C) finite array and return it as an ndarray."""
    g = np.asarray(g)
    if g.ndim != 3:
        raise ValueError(f"{name} must have shape (H, W, C), got {g.shape}")
    if channels is not None and g.shape[2] != channels:
        raise ValueError(
            f"{name} must have {channels} channels, got {g.shape[2]}"
        )
    if not np.all(np.isfinite(g)):
        raise ValueError(f"{name} contains non-finite values")
    return g


def matmul(a, b) -> np.ndarray:
    """Matrix product a @ b, accumulated in float64, rounded to float32."""
    a = ensure_matrix(a, "a")
    b = ensure_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(
            f"inner dimensions do not match: {a.shape} x {b.shape}"
        )
    return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)


def conv3x3_forward(x, kernel, bias) -> np.ndarray:
    """3x3 convolution with zero padding 1 and stride 1.

    Parameters
    ----------
    x : (H, W, Cin) grid
    kernel : (Cout, Cin, 3, 3) weights
    bias : (Cout,) per-channel bias

    Returns an (H, W, Cout) float32 grid with the same spatial size.
    """
    x = ensure_grid(x, name="input")
    kernel = np.asarray(kernel, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if kernel.ndim != 4 or kernel.shape[2:] != (3, 3):
        raise ValueError(
            f"kernel must have shape (Cout, Cin, 3, 3), got {kernel.shape}"
        )
    cout, cin = kernel.shape[:2]
    if cin != x.shape[2]:
        raise ValueError(
            f"kernel expects {cin} input channels, grid has {x.shape[2]}"
        )
    if bias.shape != (cout,):
        raise ValueError(f"bias must have shape ({cout},), got {bias.shape}")

    h, w = x.shape[:2]
    padded = np.zeros((h + 2, w + 2, cin), dtype=np.float64)
    padded[1:-1, 1:-1] = x
    out = np.zeros((h, w, cout), dtype=np.float64)
    # Fixed (ky, kx) order keeps the accumulation deterministic.
    for ky in range(3):
        for kx in range(3):
            out += padded[ky:ky + h, kx:kx + w] @ kernel[:, :, ky, kx].T
    out += bias
    return out.astype(np.float32)


def sigmoid(x):
    """Elementwise logistic 1 / (1 + exp(-x)).

    Accepts scalars or arrays. Scalars come back as Python floats; float32
    arrays come back as float32, everything else as float64. Computation is
    done in float64 through the numerically stable split so large-magnitude
    inputs saturate without overflowing.
    """
    arr = np.asarray(x)
    work = arr.astype(np.float64)
    out = np.empty_like(work)
    pos = work >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-work[pos]))
    ex = np.exp(work[~pos])
    out[~pos] = ex / (1.0 + ex)
    if arr.ndim == 0:
        return float(out)
    if arr.dtype == np.float32:
        return out.astype(np.float32)
    return out


def l2_normalize(v, eps: float = NORM_EPS) -> np.ndarray:
    """Scale a vector to unit L2 norm; vectors with norm <= eps pass through."""
    v = np.asarray(v, dtype=np.float32)
    norm = float(np.linalg.norm(v.astype(np.float64)))
    if norm <= eps:
        return v.copy()
    return (v.astype(np.float64) / norm).astype(np.float32)


def l2_normalize_grid(g, eps: float = NORM_EPS) -> np.ndarray:
    """Normalize every (H, W) cell vector of a grid to unit length.

    Zero cells stay zero, so downstream dot products treat them as
    "no information" rather than NaN.
    """
    g = ensure_grid(g)
    g64 = g.astype(np.float64)
    norms = np.linalg.norm(g64, axis=2, keepdims=True)
    scale = np.where(norms > eps, 1.0 / np.where(norms > eps, norms, 1.0), 1.0)
    return (g64 * scale).astype(np.float32)
