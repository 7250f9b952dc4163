"""Command line entry point.

Subcommands:
    train    fit the projection on a directory of sample containers
    segment  run one sample container through the engine, write mask PNGs
    eval     mIoU benchmark over a dataset directory
    inspect  dump the records of any .t2d container

Hyperparameters come from defaults, then an optional key=value config
file, then explicit flags, in that order. Every run echoes its full
configuration into its output artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import eval_harness, trainer
from .config import RunConfig
from .mask_refine import rgb_to_unit
from .projection import load_params, save_params
from .segmentation_engine import (
    build_vocabulary,
    finalize_mask,
    load_class_embeddings,
    mask_palette,
    segment_sample,
    write_mask_png,
    write_sidecar,
)
from .tensor_store import read_container, read_sample


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value config file")
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--temperature", type=float)
    p.add_argument("--aggregation", choices=("max_head", "mean_heads", "cls_only"))
    p.add_argument("--projection", choices=("mlp", "linear"))
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--pamr-iterations", dest="pamr_iterations", type=int)
    clean = p.add_mutually_exclusive_group()
    clean.add_argument("--clean", dest="background_cleaning", action="store_true", default=None)
    clean.add_argument("--no-clean", dest="background_cleaning", action="store_false", default=None)
    refine = p.add_mutually_exclusive_group()
    refine.add_argument("--refine", dest="mask_refinement", action="store_true", default=None)
    refine.add_argument("--no-refine", dest="mask_refinement", action="store_false", default=None)


def _build_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = RunConfig.from_file(args.config, base=cfg)
    for key in (
        "lr", "batch_size", "epochs", "seed", "temperature", "aggregation",
        "projection", "lam", "threshold", "window", "stride",
        "pamr_iterations", "background_cleaning", "mask_refinement",
    ):
        val = getattr(args, key, None)
        if val is not None:
            cfg.set_key(key, val)
    return cfg


def _load_dataset(data_dir: str) -> list:
    paths = sorted(Path(data_dir).glob("*.t2d"))
    if not paths:
        raise FileNotFoundError(f"no .t2d containers under {data_dir}")
    return [read_sample(p) for p in paths]


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    dataset = _load_dataset(args.data)
    params, log = trainer.train(dataset, cfg.train)
    save_params(args.out, params)
    log_path = args.log or f"{args.out}.log.jsonl"
    with open(log_path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps({"config": cfg.to_dict()}, sort_keys=True) + "\n")
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    if log:
        print(f"final mean loss {log[-1]['mean_loss']:.6f} after {len(log)} epochs")
    print(f"checkpoint written to {args.out}")
    return 0


def _read_class_names(path: str) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip()]


def cmd_segment(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    params = load_params(args.checkpoint)
    vocab = build_vocabulary(
        _read_class_names(args.classes), load_class_embeddings(args.class_embeddings), params
    )
    sample = read_sample(args.features)
    H, W = sample.image_size

    image = None
    if args.image:
        from PIL import Image

        with Image.open(args.image) as im:
            image = rgb_to_unit(np.asarray(im.convert("RGB")))
        if image.shape[:2] != (H, W):
            raise ValueError(
                f"image is {image.shape[:2]}, container says {sample.image_size}"
            )

    volume = segment_sample(sample, vocab, cfg.engine)
    mask = finalize_mask(volume, H, W, cfg.engine, vocab.has_background, image)

    write_mask_png(args.out_mask, mask)
    names = list(vocab.names) + (["background"] if vocab.has_background else [])
    sidecar_path = args.sidecar or f"{args.out_mask}.json"
    write_sidecar(sidecar_path, names, cfg.to_dict(), {"image_id": sample.image_id})

    if args.out_overlay:
        from PIL import Image

        colors = mask_palette()[mask]
        if image is not None:
            overlay = (0.5 * image * 255.0 + 0.5 * colors).astype(np.uint8)
        else:
            overlay = colors.astype(np.uint8)
        Image.fromarray(overlay, mode="RGB").save(args.out_overlay)
    print(f"mask written to {args.out_mask}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    params = load_params(args.checkpoint)
    report = eval_harness.run_benchmark(
        args.data, params, cfg.engine, cfg.to_dict(), args.class_embeddings
    )
    with open(args.report, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(eval_harness.format_report(report))
    print(f"report written to {args.report}")
    return 0 if report["ok"] else 1


def cmd_inspect(args: argparse.Namespace) -> int:
    for path in args.files:
        records = read_container(path)
        print(f"{path}: {len(records)} records")
        for rec in records:
            shape = "x".join(str(d) for d in rec.shape) or "scalar"
            line = f"  {rec.name}  {rec.dtype}  [{shape}]  {len(rec.payload)} bytes"
            if rec.dtype == "u8" and len(rec.payload) <= 120:
                try:
                    line += f"  {rec.text()!r}"
                except UnicodeDecodeError:
                    pass
            print(line)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="patchlink",
        description="Open-vocabulary segmentation from precomputed backbone tensors.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit the projection on sample containers")
    p.add_argument("--data", required=True, help="directory of *.t2d training samples")
    p.add_argument("--out", required=True, help="checkpoint path (.psi.t2d)")
    p.add_argument("--log", help="training log path (default: <out>.log.jsonl)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("segment", help="segment one sample container")
    p.add_argument("--features", required=True, help="sample container (.t2d)")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--classes", required=True, help="classes.txt")
    p.add_argument("--class-embeddings", required=True, help="text embedding container")
    p.add_argument("--image", help="original RGB image (for overlay and refinement)")
    p.add_argument("--out-mask", required=True)
    p.add_argument("--out-overlay")
    p.add_argument("--sidecar", help="JSON sidecar path (default: <out-mask>.json)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("eval", help="mIoU benchmark over a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--class-embeddings", help="default: <data>/class_embeddings.t2d")
    p.add_argument("--report", default="report.json")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="dump container records")
    p.add_argument("files", nargs="+")
    p.set_defaults(func=cmd_inspect)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
