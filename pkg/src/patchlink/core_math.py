"""Stateless numerical primitives shared by every other module.

All math runs in float64 in memory; containers hold f32 (or f16) on disk.
Grids are row-major numpy arrays indexed [h, w].
"""

from __future__ import annotations

import numpy as np

from .kernels import bilinear_upsample_batch


class DegenerateVectorError(ValueError):
    """Raised instead of silently returning 0 for a zero-norm input."""


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise DegenerateVectorError("degenerate vector: zero norm in cosine similarity")
    # Normalize first so the result is scale-free and cannot overflow/underflow.
    return float(np.dot(a / na, b / nb))


def cosine_matrix(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities: A [m, d], B [n, d] -> [m, n]."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    na = np.linalg.norm(A, axis=1)
    nb = np.linalg.norm(B, axis=1)
    if np.any(na == 0.0) or np.any(nb == 0.0):
        raise DegenerateVectorError("degenerate vector: zero norm in cosine similarity")
    return (A / na[:, None]) @ (B / nb[:, None]).T


def spatial_softmax(g: np.ndarray) -> np.ndarray:
    """Softmax over all cells of a 2-D grid, with max-subtraction."""
    g = np.asarray(g, dtype=np.float64)
    e = np.exp(g - g.max())
    return e / e.sum()


def row_softmax(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    e = np.exp(m - m.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def bilinear_upsample(g: np.ndarray, H: int, W: int) -> np.ndarray:
    """Upsample a grid to H x W with half-pixel-center sampling.

    Source coordinate: x_src = (x_dst + 0.5) * (w_p / W) - 0.5, clamped to
    [0, w_p - 1]; same along rows. Constants are preserved and output values
    stay inside [min(g), max(g)].
    """
    g = np.asarray(g, dtype=np.float64)
    h_p, w_p = g.shape
    if H < h_p or W < w_p:
        raise ValueError(f"downsampling unsupported: {h_p}x{w_p} -> {H}x{W}")
    return bilinear_upsample_batch(g[None, :, :], H, W)[0]


def bilinear_upsample_volume(vol: np.ndarray, H: int, W: int) -> np.ndarray:
    """Batch form: vol [M, h_p, w_p] -> [M, H, W]."""
    vol = np.asarray(vol, dtype=np.float64)
    _, h_p, w_p = vol.shape
    if H < h_p or W < w_p:
        raise ValueError(f"downsampling unsupported: {h_p}x{w_p} -> {H}x{W}")
    return bilinear_upsample_batch(vol, H, W)


def minmax_remap(g: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Affine map sending min(g) to lo and max(g) to hi.

    Degenerate inputs (range below 1e-12) map every cell to the midpoint.
    """
    if lo > hi:
        raise ValueError(f"invalid range: lo={lo} > hi={hi}")
    g = np.asarray(g, dtype=np.float64)
    gmin = g.min()
    gmax = g.max()
    if gmax - gmin < 1e-12:
        return np.full_like(g, (lo + hi) / 2.0)
    return lo + (g - gmin) * ((hi - lo) / (gmax - gmin))


def argmax_with_tiebreak(scores: np.ndarray) -> int:
    """Index of the maximum; ties resolve to the lowest index."""
    scores = np.asarray(scores)
    if scores.size == 0:
        raise ValueError("argmax of empty input")
    return int(np.argmax(scores))
