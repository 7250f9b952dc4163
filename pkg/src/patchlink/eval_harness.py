"""mIoU benchmark runner.

Dataset layout:
    images/*.png|jpg        RGB inputs (needed only for mask refinement)
    annotations/*.png       8-bit index masks, 255 = ignore
    classes.txt             one name per line, optional leading "background"
    features/*.t2d          precomputed sample containers, one per image
    class_embeddings.t2d    text embeddings keyed by class name

Predictions use the engine's internal label space (foreground 0..M-1,
background = M); dataset space puts background at 0 with foreground shifted
up by one, the usual index-mask convention. The remap happens here.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import EngineOptions
from .mask_refine import rgb_to_unit
from .projection import ProjectionParams
from .segmentation_engine import (
    build_vocabulary,
    finalize_mask,
    load_class_embeddings,
    read_mask_png,
    segment_sample,
)
from .tensor_store import read_sample

IGNORE_INDEX = 255


@dataclass
class ConfusionMatrix:
    num_classes: int
    ignore_index: int | None = IGNORE_INDEX
    counts: np.ndarray = field(init=False)

    def __post_init__(self):
        self.counts = np.zeros((self.num_classes, self.num_classes), dtype=np.int64)


def update(cm: ConfusionMatrix, pred: np.ndarray, gt: np.ndarray) -> ConfusionMatrix:
    """Accumulate pixel counts: cm[g][p] += |{gt == g and pred == p}|."""
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    valid = np.ones(gt.shape, dtype=bool)
    if cm.ignore_index is not None:
        valid &= gt != cm.ignore_index
        valid &= pred != cm.ignore_index
    g = gt[valid].astype(np.int64)
    p = pred[valid].astype(np.int64)
    c = cm.num_classes
    if g.size and (g.min() < 0 or g.max() >= c or p.min() < 0 or p.max() >= c):
        raise ValueError(
            f"label out of range: gt in [{g.min()},{g.max()}], "
            f"pred in [{p.min()},{p.max()}], C={c}"
        )
    cm.counts += np.bincount(g * c + p, minlength=c * c).reshape(c, c)
    return cm


def miou(cm: ConfusionMatrix) -> tuple[float, np.ndarray]:
    """Mean IoU and the per-class vector (nan where a class never occurs).

    IoU_c = diag / (row_c + col_c - diag); classes with a zero denominator
    (absent from both prediction and ground truth) are excluded from the
    mean.
    """
    diag = np.diag(cm.counts).astype(np.float64)
    rows = cm.counts.sum(axis=1).astype(np.float64)
    cols = cm.counts.sum(axis=0).astype(np.float64)
    denom = rows + cols - diag
    present = denom > 0
    if not present.any():
        raise ValueError("empty evaluation: no class present in prediction or ground truth")
    per_class = np.full(cm.num_classes, np.nan)
    per_class[present] = diag[present] / denom[present]
    return float(per_class[present].mean()), per_class


def _engine_to_dataset_labels(mask: np.ndarray, m: int, has_background: bool) -> np.ndarray:
    if not has_background:
        return mask
    out = mask + 1
    out[mask == m] = 0
    return out


def _find_image(images_dir: Path, stem: str) -> Path | None:
    for ext in (".png", ".jpg", ".jpeg"):
        cand = images_dir / f"{stem}{ext}"
        if cand.exists():
            return cand
    return None


def run_benchmark(
    dataset_dir: str | os.PathLike,
    params: ProjectionParams,
    options: EngineOptions,
    config_echo: dict | None = None,
    class_embeddings_path: str | os.PathLike | None = None,
) -> dict:
    """Segment every annotated image and aggregate mIoU.

    Returns the report dict; report["ok"] is False when images were skipped
    for missing feature containers (callers turn that into a nonzero exit).
    Image order never affects the result (confusion updates commute).
    """
    root = Path(dataset_dir)
    classes_file = root / "classes.txt"
    if not classes_file.exists():
        raise FileNotFoundError(f"{classes_file}: dataset needs a classes.txt")
    names = [ln.strip() for ln in classes_file.read_text(encoding="utf-8").splitlines() if ln.strip()]

    emb_path = Path(class_embeddings_path) if class_embeddings_path else root / "class_embeddings.t2d"
    vocab = build_vocabulary(names, load_class_embeddings(emb_path), params)

    ann_dir = root / "annotations"
    stems = sorted(p.stem for p in ann_dir.glob("*.png"))
    if not stems:
        raise ValueError("empty evaluation: no annotations found")

    cm = ConfusionMatrix(len(names))
    skipped: list[str] = []
    manifest_seen: dict | None = None
    evaluated = 0

    for stem in stems:
        feat_path = root / "features" / f"{stem}.t2d"
        if not feat_path.exists():
            skipped.append(stem)
            continue
        sample = read_sample(feat_path)
        if sample.manifest:
            if manifest_seen is None:
                manifest_seen = sample.manifest
            elif manifest_seen != sample.manifest:
                raise ValueError(
                    f"{stem}: container manifest disagrees with the rest of the dataset"
                )
        gt = read_mask_png(ann_dir / f"{stem}.png")
        H, W = gt.shape

        image = None
        if options.mask_refinement:
            img_path = _find_image(root / "images", stem)
            if img_path is None:
                raise FileNotFoundError(
                    f"mask refinement needs images/{stem}.png (or .jpg)"
                )
            from PIL import Image

            with Image.open(img_path) as im:
                image = rgb_to_unit(np.asarray(im.convert("RGB")))
            if image.shape[:2] != (H, W):
                raise ValueError(
                    f"{stem}: image is {image.shape[:2]}, annotation is {(H, W)}"
                )

        volume = segment_sample(sample, vocab, options)
        mask = finalize_mask(volume, H, W, options, vocab.has_background, image)
        pred = _engine_to_dataset_labels(mask, vocab.m, vocab.has_background)
        update(cm, pred, gt)
        evaluated += 1

    if evaluated == 0:
        raise ValueError("empty evaluation: every image was skipped")
    mean, per_class = miou(cm)
    return {
        "miou": mean,
        "per_class_iou": {
            name: (None if np.isnan(per_class[i]) else float(per_class[i]))
            for i, name in enumerate(names)
        },
        "images_evaluated": evaluated,
        "skipped_missing_features": skipped,
        "ok": not skipped,
        "config": config_echo or {},
    }


def format_report(report: dict) -> str:
    """Plain-text table for stdout."""
    lines = []
    width = max(len(n) for n in report["per_class_iou"])
    lines.append(f"{'class':<{width}}  IoU")
    for name, iou in report["per_class_iou"].items():
        shown = "absent" if iou is None else f"{iou:.4f}"
        lines.append(f"{name:<{width}}  {shown}")
    lines.append(f"{'mIoU':<{width}}  {report['miou']:.4f}")
    lines.append(f"images evaluated: {report['images_evaluated']}")
    if report["skipped_missing_features"]:
        lines.append(
            "skipped (no features): " + ", ".join(report["skipped_missing_features"])
        )
    return "\n".join(lines)
