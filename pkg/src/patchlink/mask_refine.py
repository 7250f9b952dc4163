"""Pixel-adaptive refinement of class score maps.

Scores are iteratively averaged with their neighbors under weights derived
from image color affinity, so class boundaries migrate toward color edges.
Neighborhood: the 8 surrounding pixels at each dilation in the configured
set (default {1, 2, 4, 8, 12, 24}). For pixel p and offset q,
d(p, q) is the channel-mean absolute color difference, sigma_p the standard
deviation of d(p, .) over in-bounds offsets (floored), and the weights are
softmax(-d / sigma_p). One iteration replaces each score by the
weighted average of its neighbors, written in delta form

    s_p <- s_p + sum_q w(p, q) * (s_q - s_p)

which makes constant maps exact fixed points and gives border pixels with
no in-bounds neighbors an implicit self weight of 1 (a 1 x 1 image is its
own affinity fixed point).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import affinity_weights, refine_scores

DEFAULT_DILATIONS = (1, 2, 4, 8, 12, 24)
DEFAULT_SIGMA_FLOOR = 1e-4

_NEIGHBORS = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


def neighbor_offsets(dilations: tuple[int, ...] = DEFAULT_DILATIONS) -> np.ndarray:
    """[K, 2] (dy, dx) table: 8-neighborhood scaled by each dilation."""
    offs = [(dy * d, dx * d) for d in dilations for dy, dx in _NEIGHBORS]
    return np.asarray(offs, dtype=np.int64)


@dataclass
class AffinityField:
    weights: np.ndarray  # [K, H, W]; rows sum to 1 per pixel (0 where no neighbor)
    offsets: np.ndarray  # [K, 2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.weights.shape[1], self.weights.shape[2]


def compute_affinity(
    image: np.ndarray,
    dilations: tuple[int, ...] = DEFAULT_DILATIONS,
    sigma_floor: float = DEFAULT_SIGMA_FLOOR,
) -> AffinityField:
    """Build the affinity field for an RGB image with values in [0, 1]."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected an H x W x 3 image, got {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    offsets = neighbor_offsets(dilations)
    return AffinityField(
        weights=affinity_weights(image, offsets, sigma_floor), offsets=offsets
    )


def refine(scores: np.ndarray, affinity: AffinityField, iterations: int = 10) -> np.ndarray:
    """Run `iterations` smoothing passes over [M, H, W] score maps.

    Output is clamped to each class's input [min, max]; the update is a
    convex combination in exact arithmetic, the clamp only strips rounding
    spill. iterations=0 returns a copy.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 3:
        raise ValueError(f"expected [M, H, W] scores, got {scores.shape}")
    if scores.shape[1:] != affinity.shape:
        raise ValueError(
            f"score grid {scores.shape[1:]} does not match affinity {affinity.shape}"
        )
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if iterations == 0:
        return scores.copy()
    return refine_scores(scores, affinity.weights, affinity.offsets, iterations)


def rgb_to_unit(image: np.ndarray) -> np.ndarray:
    """uint8 RGB -> float64 in [0, 1]."""
    return np.asarray(image, dtype=np.float64) / 255.0
