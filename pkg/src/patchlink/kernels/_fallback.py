"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable (or forced via
PATCHLINK_KERNELS=fallback). Operation order mirrors the native code so the
two backends agree to rounding error; tests in tests/test_kernels.py compare
them directly.
"""

from __future__ import annotations

import numpy as np


def _shift_slices(n: int, d: int) -> tuple[slice, slice]:
    # dst[p] reads src[p + d]; both slices cover the positions where p + d
    # stays in [0, n). Offsets larger than the axis give empty slices.
    lo = max(0, -d)
    hi = n - max(0, d)
    if hi <= lo:
        return slice(0, 0), slice(0, 0)
    return slice(lo, hi), slice(lo + d, hi + d)


def bilinear_upsample_batch(vol: np.ndarray, H: int, W: int) -> np.ndarray:
    """vol [M, h_p, w_p] float64 -> [M, H, W], half-pixel-center sampling."""
    _, h_p, w_p = vol.shape

    xs = (np.arange(W, dtype=np.float64) + 0.5) * (w_p / W) - 0.5
    np.clip(xs, 0.0, w_p - 1.0, out=xs)
    x0 = np.floor(xs).astype(np.int64)
    wx = xs - x0
    x1 = np.minimum(x0 + 1, w_p - 1)

    ys = (np.arange(H, dtype=np.float64) + 0.5) * (h_p / H) - 0.5
    np.clip(ys, 0.0, h_p - 1.0, out=ys)
    y0 = np.floor(ys).astype(np.int64)
    wy = ys - y0
    y1 = np.minimum(y0 + 1, h_p - 1)

    a = vol[:, y0[:, None], x0[None, :]]
    b = vol[:, y0[:, None], x1[None, :]]
    c = vol[:, y1[:, None], x0[None, :]]
    d = vol[:, y1[:, None], x1[None, :]]

    top = a + wx[None, None, :] * (b - a)
    bot = c + wx[None, None, :] * (d - c)
    return top + wy[None, :, None] * (bot - top)


def affinity_weights(image: np.ndarray, offsets: np.ndarray, sigma_floor: float) -> np.ndarray:
    """Per-pixel normalized affinity to each neighbor offset.

    image: [H, W, 3] float64 in [0, 1]; offsets: [K, 2] int (dy, dx).
    Returns [K, H, W] weights, zero where the offset leaves the image.
    d(p,q) is the channel-mean absolute difference; weights are
    softmax(-d / sigma_p) over in-bounds offsets, sigma_p the per-pixel std
    of d (floored). Pixels with no in-bounds neighbor get all-zero rows.
    """
    H, W, _ = image.shape
    K = len(offsets)
    d = np.zeros((K, H, W), dtype=np.float64)
    valid = np.zeros((K, H, W), dtype=bool)
    for k, (dy, dx) in enumerate(offsets):
        ry_dst, ry_src = _shift_slices(H, int(dy))
        rx_dst, rx_src = _shift_slices(W, int(dx))
        diff = image[ry_src, rx_src, :] - image[ry_dst, rx_dst, :]
        d[k, ry_dst, rx_dst] = np.abs(diff).sum(axis=-1) / 3.0
        valid[k, ry_dst, rx_dst] = True

    count = valid.sum(axis=0)
    denom = np.maximum(count, 1)

    total = np.zeros((H, W), dtype=np.float64)
    for k in range(K):
        total += np.where(valid[k], d[k], 0.0)
    mu = total / denom

    acc = np.zeros((H, W), dtype=np.float64)
    for k in range(K):
        dev = d[k] - mu
        acc += np.where(valid[k], dev * dev, 0.0)
    sigma = np.maximum(np.sqrt(acc / denom), sigma_floor)

    dmin = np.full((H, W), np.inf)
    for k in range(K):
        dmin = np.where(valid[k], np.minimum(dmin, d[k]), dmin)

    weights = np.zeros((K, H, W), dtype=np.float64)
    z = np.zeros((H, W), dtype=np.float64)
    for k in range(K):
        # Max-subtraction form of softmax(-d/sigma): the smallest d gets
        # exponent 0, so z >= 1 wherever any offset is in bounds. The -inf
        # fill makes exp return a clean 0 for out-of-bounds entries.
        e = np.exp(np.where(valid[k], (dmin - d[k]) / sigma, -np.inf))
        weights[k] = e
        z += e
    np.divide(weights, z[None, :, :], out=weights, where=z[None, :, :] > 0.0)
    return weights


def refine_scores(
    scores: np.ndarray, weights: np.ndarray, offsets: np.ndarray, iterations: int
) -> np.ndarray:
    """Iterated affinity-weighted smoothing of [M, H, W] score maps.

    Update in delta form, new[p] = s[p] + sum_k w_k[p] * (s[p+off_k] - s[p]),
    so constant maps are exact fixed points and pixels with all-zero weights
    keep their value. Each iteration is clamped to the per-class bounds of
    the original input (the update is a convex combination in exact
    arithmetic; the clamp removes rounding spill).
    """
    out = scores.copy()
    lo = out.min(axis=(1, 2))[:, None, None]
    hi = out.max(axis=(1, 2))[:, None, None]
    for _ in range(iterations):
        acc = np.zeros_like(out)
        for k, (dy, dx) in enumerate(offsets):
            ry_dst, ry_src = _shift_slices(out.shape[1], int(dy))
            rx_dst, rx_src = _shift_slices(out.shape[2], int(dx))
            acc[:, ry_dst, rx_dst] += weights[k, ry_dst, rx_dst] * (
                out[:, ry_src, rx_src] - out[:, ry_dst, rx_dst]
            )
        out = out + acc
        np.clip(out, lo, hi, out=out)
    return out
