"""Synthetic quadrant world for end-to-end validation.

A hidden projection psi* (same two-layer tanh architecture as the one
being trained) turns K random text embeddings into unit "class directions"
in visual space. Every image picks a subject class; its caption is the
class text plus noise, and subject patches follow the noisy caption's
direction through psi*, so each image-caption pair is individually
matchable while same-class pairs stay separated. Attention heads each
highlight one quadrant of the patch grid.

Two layouts share that skeleton. "subject" images are filled entirely
with the subject class and are what training consumes: whichever head the
trainer picks, the pooled embedding points at the subject direction, so
the contrastive loss pins the learned projection to the generating one.
(With mixed scenes the loss is blind to a consistent relabeling of
classes, because head selection would happily track the relabeled
quadrant.) "quadrants" images place a random class permutation on the
four quadrants and are what segmentation is scored on.

The generator knows the layout it drew, so it doubles as ground truth for
segmentation metrics and as the oracle for the end-to-end suite.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .projection import ProjectionParams, init_params, psi_forward
from .segmentation_engine import mask_palette, write_mask_png
from .tensor_store import SampleRecord, TensorRecord, text_record, write_container, write_sample

CLASS_NAMES = ("azure", "maroon", "viridian", "ochre")

MANIFEST = {
    "generator": "synthetic-quadrants",
    "version": 1,
    "attention_convention": "pre-softmax CLS row over patches",
}


@dataclass
class SyntheticWorld:
    hidden: ProjectionParams  # psi*, the generating map (never trained)
    class_texts: np.ndarray  # [K, D_t]
    class_dirs: np.ndarray  # [K, D_v], unit norm
    names: list[str]
    grid: int = 8  # patches per side
    patch: int = 8  # pixels per patch
    n_heads: int = 4


def make_world(seed: int, k: int = 4, d_t: int = 16, d_v: int = 32) -> SyntheticWorld:
    if k != 4:
        raise ValueError("the quadrant layout is hardwired to 4 classes")
    rng = np.random.default_rng(seed)
    hidden = init_params(d_t, d_v, seed=int(rng.integers(2**31)))
    texts = rng.standard_normal((k, d_t))
    dirs = np.stack([psi_forward(hidden, t) for t in texts])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return SyntheticWorld(
        hidden=hidden, class_texts=texts, class_dirs=dirs, names=list(CLASS_NAMES)
    )


def _quadrant_labels(perm: np.ndarray, grid: int) -> np.ndarray:
    """[grid, grid] patch labels; quadrant q in reading order gets perm[q]."""
    half = grid // 2
    labels = np.empty((grid, grid), dtype=np.int32)
    for q, (qy, qx) in enumerate(((0, 0), (0, 1), (1, 0), (1, 1))):
        labels[qy * half : (qy + 1) * half, qx * half : (qx + 1) * half] = perm[q]
    return labels


def _attention_stack(regions: np.ndarray, perm: np.ndarray, n_heads: int, gain: float, rng) -> np.ndarray:
    """Head q fires on quadrant q's patches (whatever content sits there)."""
    attn = 0.05 * rng.standard_normal((n_heads, *regions.shape))
    for q in range(n_heads):
        attn[q][regions == perm[q]] += gain
    return attn


def generate_sample(
    world: SyntheticWorld,
    image_id: str,
    rng: np.random.Generator,
    caption_noise: float = 0.6,
    patch_noise: float = 0.05,
    attn_gain: float = 3.0,
    layout: str = "quadrants",
) -> tuple[SampleRecord, np.ndarray]:
    """One image with its caption; returns (sample, patch label grid)."""
    if layout not in ("quadrants", "subject"):
        raise ValueError(f"unknown layout: {layout!r}")
    g, p = world.grid, world.patch
    d_v = world.class_dirs.shape[1]
    perm = rng.permutation(4)
    regions = _quadrant_labels(perm, g)
    subject = int(rng.integers(4))
    labels = regions if layout == "quadrants" else np.full((g, g), subject, dtype=np.int32)

    caption_text = f"a picture of {world.names[subject]}"
    caption_emb = world.class_texts[subject] + caption_noise * rng.standard_normal(
        world.class_texts.shape[1]
    )
    subject_dir = psi_forward(world.hidden, caption_emb)
    subject_dir = subject_dir / np.linalg.norm(subject_dir)

    base = world.class_dirs[labels]  # [g, g, D_v]
    base = base.copy()
    base[labels == subject] = subject_dir
    features = base + patch_noise * rng.standard_normal((g, g, d_v))

    attn = _attention_stack(regions, perm, world.n_heads, attn_gain, rng)

    sample = SampleRecord(
        image_id=image_id,
        features=features,
        attn_logits=attn,
        captions=[(caption_text, caption_emb)],
        image_size=(g * p, g * p),
        resized_size=(g * p, g * p),
        patch_size=p,
        manifest=dict(MANIFEST),
    )
    return sample, labels


def make_train_samples(world: SyntheticWorld, n: int, seed: int, **kwargs) -> list[SampleRecord]:
    kwargs.setdefault("layout", "subject")
    rng = np.random.default_rng(seed)
    return [generate_sample(world, f"train_{i:04d}", rng, **kwargs)[0] for i in range(n)]


def _render_image(labels: np.ndarray, patch: int, rng) -> np.ndarray:
    """Flat-color rendering of the patch labels, uint8 RGB."""
    pal = mask_palette()
    colors = pal[1 : 1 + labels.max() + 1].astype(np.float64)
    px = colors[np.kron(labels, np.ones((patch, patch), dtype=np.int32))]
    px = px + 8.0 * rng.standard_normal(px.shape)
    return np.clip(px, 0, 255).astype(np.uint8)


def write_eval_set(
    world: SyntheticWorld, n: int, seed: int, out_dir: str | os.PathLike, **kwargs
) -> None:
    """Materialize a benchmark directory in the eval_harness layout."""
    from PIL import Image

    root = Path(out_dir)
    for sub in ("images", "annotations", "features"):
        (root / sub).mkdir(parents=True, exist_ok=True)

    rng = np.random.default_rng(seed)
    p = world.patch
    for i in range(n):
        stem = f"eval_{i:04d}"
        sample, labels = generate_sample(world, stem, rng, **kwargs)
        write_sample(root / "features" / f"{stem}.t2d", sample)
        pixel_labels = np.kron(labels, np.ones((p, p), dtype=np.int32))
        write_mask_png(root / "annotations" / f"{stem}.png", pixel_labels)
        Image.fromarray(_render_image(labels, p, rng)).save(root / "images" / f"{stem}.png")

    (root / "classes.txt").write_text(
        "".join(f"{name}\n" for name in world.names), encoding="utf-8"
    )
    write_container(
        root / "class_embeddings.t2d",
        [
            TensorRecord.from_array(name, world.class_texts[j].astype(np.float32), "f32")
            for j, name in enumerate(world.names)
        ]
        + [text_record("manifest", '{"source": "synthetic-quadrants"}')],
    )
