"""Open-vocabulary inference: class similarity volumes, attention-guided
background cleaning, sliding-window stitching, and argmax masks.

The pipeline per image: project every class name into patch space, score
each patch against each class by cosine (S), optionally reshape S with
attention-derived foreground maps (S_bar, a convex blend weighted by
lambda), average overlapping windows at patch resolution, upsample once to
pixel resolution, optionally refine with image affinities, then threshold
undecided pixels into a background index and argmax the rest.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import mask_refine
from .config import EngineOptions
from .core_math import (
    DegenerateVectorError,
    bilinear_upsample_volume,
    cosine_matrix,
    minmax_remap,
    row_softmax,
    spatial_softmax,
)
from .projection import ProjectionParams, psi_forward_batch
from .tensor_store import SampleRecord, read_dict
from .trainer import pool_all_heads


@dataclass
class ClassVocabulary:
    """Foreground class names with their text embeddings and projections.

    `projected[j] == psi(embeddings[j])` is established at build time and
    assumed everywhere else. Background has no embedding; it exists only as
    the reserved output index M when `has_background` is set.
    """

    names: list[str]  # M foreground names
    embeddings: np.ndarray  # [M, D_t]
    projected: np.ndarray  # [M, D_v]
    has_background: bool = False

    @property
    def m(self) -> int:
        return len(self.names)

    @property
    def background_index(self) -> int:
        if not self.has_background:
            raise ValueError("vocabulary has no background class")
        return self.m


def load_class_embeddings(path: str | os.PathLike) -> dict[str, np.ndarray]:
    """Read a text-embedding container: records are keyed by the raw string."""
    return {
        name: rec.to_array().astype(np.float64).reshape(-1)
        for name, rec in read_dict(path).items()
        if rec.dtype in ("f32", "f16")
    }


def build_vocabulary(
    names: list[str], embeddings_by_name: dict[str, np.ndarray], params: ProjectionParams
) -> ClassVocabulary:
    """Assemble a vocabulary; a leading "background" name sets the flag.

    Raises if any foreground name lacks an embedding in the container.
    """
    has_background = bool(names) and names[0] == "background"
    fg = names[1:] if has_background else list(names)
    if not fg:
        raise ValueError("vocabulary needs at least one foreground class")
    missing = [n for n in fg if n not in embeddings_by_name]
    if missing:
        raise ValueError(f"class embeddings missing for: {missing}")
    T = np.stack([embeddings_by_name[n] for n in fg])
    projected, _ = psi_forward_batch(params, T)
    return ClassVocabulary(
        names=fg, embeddings=T, projected=projected, has_background=has_background
    )


def similarity_maps(features: np.ndarray, vocab: ClassVocabulary) -> np.ndarray:
    """S[j, h, w] = cosine(v[h, w], projected_j); shape [M, h_p, w_p]."""
    features = np.asarray(features, dtype=np.float64)
    h_p, w_p, d_v = features.shape
    flat = features.reshape(-1, d_v)
    norms = np.linalg.norm(flat, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.argmin(norms))
        raise DegenerateVectorError(
            f"degenerate vector: zero-norm patch feature at (h={bad // w_p}, w={bad % w_p})"
        )
    S = cosine_matrix(vocab.projected, flat)  # [M, h_p * w_p]
    return S.reshape(vocab.m, h_p, w_p)


def head_relevance(
    features: np.ndarray, attn_logits: np.ndarray, vocab: ClassVocabulary
) -> np.ndarray:
    """R[j, i]: softmax over heads of cosine(pooled head i, projected class j)."""
    pooled = pool_all_heads(features, attn_logits)  # [N, D_v]
    return row_softmax(cosine_matrix(vocab.projected, pooled))


def class_attention(attn_logits: np.ndarray, R: np.ndarray, j: int) -> np.ndarray:
    """F_j = sum_i R[j, i] * A_i over the raw attention logit maps."""
    attn_logits = np.asarray(attn_logits, dtype=np.float64)
    if not 0 <= j < R.shape[0]:
        raise IndexError(f"class index {j} out of range for M={R.shape[0]}")
    return np.tensordot(R[j], attn_logits, axes=([0], [0]))


def normalize_class_attention(F_j: np.ndarray, volume: np.ndarray) -> np.ndarray:
    """Spatial softmax of F_j remapped onto the value range of the raw S volume."""
    volume = np.asarray(volume, dtype=np.float64)
    return minmax_remap(spatial_softmax(F_j), float(volume.min()), float(volume.max()))


def shape_similarity(volume: np.ndarray, normalized_F: np.ndarray, lam: float) -> np.ndarray:
    """Convex blend S_bar = lam * S + (1 - lam) * F, elementwise per class.

    lam=1 reproduces S exactly (the arithmetic path is literally
    S * 1.0 + F * 0.0) and lam=0 reproduces the normalized attention.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must be in [0, 1], got {lam}")
    volume = np.asarray(volume, dtype=np.float64)
    normalized_F = np.asarray(normalized_F, dtype=np.float64)
    return volume * lam + normalized_F * (1.0 - lam)


def segment_window(
    features: np.ndarray,
    attn_logits: np.ndarray,
    vocab: ClassVocabulary,
    options: EngineOptions,
) -> np.ndarray:
    """Patch-resolution class scores for one window; [M, h_p, w_p]."""
    S = similarity_maps(features, vocab)
    if not (options.background_cleaning and vocab.has_background):
        return S
    R = head_relevance(features, attn_logits, vocab)
    F = np.stack(
        [
            normalize_class_attention(class_attention(attn_logits, R, j), S)
            for j in range(vocab.m)
        ]
    )
    return shape_similarity(S, F, options.lam)


def window_origins(extent: int, win: int, stride: int) -> list[int]:
    """Window start offsets covering [0, extent): stride steps, last one
    snapped back so the final window ends exactly at the border."""
    if win >= extent:
        return [0]
    origins = list(range(0, extent - win + 1, stride))
    if origins[-1] != extent - win:
        origins.append(extent - win)
    return origins


def stitch_windows(
    volumes: list[tuple[tuple[int, int], np.ndarray]], full_shape: tuple[int, int]
) -> np.ndarray:
    """Uniform per-cell average of overlapping window volumes.

    volumes: [((origin_y, origin_x), [M, wy, wx]), ...] in patch units.
    """
    h_p, w_p = full_shape
    m = volumes[0][1].shape[0]
    total = np.zeros((m, h_p, w_p), dtype=np.float64)
    count = np.zeros((h_p, w_p), dtype=np.int64)
    for (oy, ox), vol in volumes:
        wy, wx = vol.shape[1:]
        if oy < 0 or ox < 0 or oy + wy > h_p or ox + wx > w_p:
            raise RuntimeError(
                f"internal error: window at ({oy},{ox}) size {wy}x{wx} "
                f"exceeds grid {h_p}x{w_p}"
            )
        total[:, oy : oy + wy, ox : ox + wx] += vol
        count[oy : oy + wy, ox : ox + wx] += 1
    if np.any(count == 0):
        bad = np.argwhere(count == 0)[0]
        raise RuntimeError(
            f"internal error: cell ({bad[0]},{bad[1]}) covered by no window"
        )
    return total / count[None, :, :]


def segment_sample(
    sample: SampleRecord, vocab: ClassVocabulary, options: EngineOptions
) -> np.ndarray:
    """Stitched patch-resolution score volume for a full sample container."""
    options.validate()
    p = sample.patch_size
    if options.window % p or options.stride % p:
        raise ValueError(
            f"window/stride ({options.window}/{options.stride}) must be "
            f"multiples of the patch size {p}"
        )
    h_p, w_p = sample.features.shape[:2]
    win = options.window // p
    stride = options.stride // p
    win_y, win_x = min(win, h_p), min(win, w_p)
    volumes = []
    for oy in window_origins(h_p, win_y, stride):
        for ox in window_origins(w_p, win_x, stride):
            f = sample.features[oy : oy + win_y, ox : ox + win_x]
            a = sample.attn_logits[:, oy : oy + win_y, ox : ox + win_x]
            volumes.append(((oy, ox), segment_window(f, a, vocab, options)))
    return stitch_windows(volumes, (h_p, w_p))


def finalize_mask(
    volume: np.ndarray,
    H: int,
    W: int,
    options: EngineOptions,
    has_background: bool,
    image: np.ndarray | None = None,
) -> np.ndarray:
    """Upsample class scores to H x W and assign a class index per pixel.

    With a background vocabulary, pixels whose every class score stays
    below the threshold get the reserved index M. Refinement (when enabled
    and an RGB image is supplied) smooths the upsampled scores before any
    assignment happens.
    """
    up = bilinear_upsample_volume(np.asarray(volume, dtype=np.float64), H, W)
    if options.mask_refinement and image is not None:
        affinity = mask_refine.compute_affinity(
            image, options.pamr_dilations, options.pamr_sigma_floor
        )
        up = mask_refine.refine(up, affinity, options.pamr_iterations)
    mask = np.argmax(up, axis=0).astype(np.int32)
    if has_background:
        undecided = up.max(axis=0) < options.threshold
        mask[undecided] = volume.shape[0]
    return mask


def score_image_text(
    features: np.ndarray, attn_logits: np.ndarray, params: ProjectionParams, t: np.ndarray
) -> float:
    """Image-text matching score: best head's pooled cosine against psi(t)."""
    pooled = pool_all_heads(features, attn_logits)
    y, _ = psi_forward_batch(params, np.asarray(t, dtype=np.float64)[None, :])
    return float(cosine_matrix(pooled, y)[:, 0].max())


def global_image_embedding(features: np.ndarray, attn_logits: np.ndarray) -> np.ndarray:
    """Head-averaged pooled embedding, the baseline global representation."""
    attn_logits = np.asarray(attn_logits)
    if attn_logits.shape[0] == 0:
        raise ValueError("need at least one attention head")
    return pool_all_heads(features, attn_logits).mean(axis=0)


# ---------------------------------------------------------------------------
# Mask output: 8-bit index PNG with a fixed palette, plus a JSON sidecar.

_PALETTE_SEED = 7


def mask_palette() -> np.ndarray:
    """Deterministic 256 x 3 uint8 palette; index 0 is always black."""
    rng = np.random.default_rng(_PALETTE_SEED)
    pal = rng.integers(32, 256, size=(256, 3), dtype=np.uint8)
    pal[0] = 0
    return pal


def write_mask_png(path: str | os.PathLike, mask: np.ndarray) -> None:
    from PIL import Image

    if mask.max() > 255 or mask.min() < 0:
        raise ValueError("mask indices must fit in uint8")
    img = Image.fromarray(mask.astype(np.uint8), mode="P")
    img.putpalette(mask_palette().flatten().tolist())
    img.save(path, format="PNG")


def read_mask_png(path: str | os.PathLike) -> np.ndarray:
    from PIL import Image

    with Image.open(path) as img:
        if img.mode not in ("P", "L"):
            raise ValueError(f"{os.fspath(path)}: expected an 8-bit index mask, got {img.mode}")
        return np.asarray(img, dtype=np.int32)


def write_sidecar(path: str | os.PathLike, mask_names: list[str], config_echo: dict, extra: dict | None = None) -> None:
    payload = {"index_to_name": dict(enumerate(mask_names)), "config": config_echo}
    if extra:
        payload.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
