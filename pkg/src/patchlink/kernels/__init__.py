"""Hot-loop kernels with a compiled implementation and a numpy fallback.

The compiled extension (patchlink.kernels._native) is preferred when it
imported cleanly; PATCHLINK_KERNELS=fallback forces the numpy path and
PATCHLINK_KERNELS=native makes a missing extension a hard error. The two
backends follow the same floating point operation order and agree to
rounding error (see tests/test_kernels.py and benchmarks/bench_kernels.py).
"""

from __future__ import annotations

import importlib
import os

import numpy as np

from . import _fallback

_choice = os.environ.get("PATCHLINK_KERNELS", "auto")
if _choice not in ("auto", "native", "fallback"):
    raise RuntimeError(
        f"PATCHLINK_KERNELS must be auto, native or fallback, got {_choice!r}"
    )

_native = None
if _choice in ("auto", "native"):
    try:
        _native = importlib.import_module(__name__ + "._native")
    except ImportError:
        if _choice == "native":
            raise

_impl = _native if _native is not None else _fallback
BACKEND = "native" if _native is not None else "fallback"


def _c64(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def bilinear_upsample_batch(vol: np.ndarray, H: int, W: int) -> np.ndarray:
    """vol [M, h_p, w_p] -> [M, H, W] float64, half-pixel-center bilinear."""
    return np.asarray(_impl.bilinear_upsample_batch(_c64(vol), int(H), int(W)))


def affinity_weights(image: np.ndarray, offsets: np.ndarray, sigma_floor: float) -> np.ndarray:
    """image [H, W, 3] in [0, 1] -> weights [K, H, W] for the given offsets."""
    offs = np.ascontiguousarray(offsets, dtype=np.int64)
    return np.asarray(_impl.affinity_weights(_c64(image), offs, float(sigma_floor)))


def refine_scores(
    scores: np.ndarray, weights: np.ndarray, offsets: np.ndarray, iterations: int
) -> np.ndarray:
    """Affinity-weighted smoothing of [M, H, W] score maps."""
    offs = np.ascontiguousarray(offsets, dtype=np.int64)
    return np.asarray(
        _impl.refine_scores(_c64(scores), _c64(weights), offs, int(iterations))
    )
