"""Regenerate the checked-in test fixtures.

Everything under tests/fixtures/ is derived deterministically from the
seeds below, so a fresh checkout and a regenerated tree are byte
identical. Rerun after changing the container format, the generator, or
the training loop, and commit the result:

    python3 tools/make_fixtures.py
"""

from __future__ import annotations

import argparse
import shutil
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from patchlink import cli, synthetic, trainer  # noqa: E402
from patchlink.config import TrainConfig  # noqa: E402
from patchlink.projection import save_params  # noqa: E402
from patchlink.tensor_store import write_sample  # noqa: E402

WORLD_SEED = 21
TRAIN_SEED = 22
OPT_SEED = 23
EVAL_SEED = 24

N_TRAIN_FIXTURES = 4
N_EVAL_IMAGES = 3
CAPTION_NOISE = 0.6


def build(root: Path) -> None:
    if root.exists():
        shutil.rmtree(root)
    root.mkdir(parents=True)

    world = synthetic.make_world(WORLD_SEED)

    train_dir = root / "train"
    train_dir.mkdir()
    samples = synthetic.make_train_samples(
        world, N_TRAIN_FIXTURES, seed=TRAIN_SEED, caption_noise=CAPTION_NOISE
    )
    for sample in samples:
        write_sample(train_dir / f"{sample.image_id}.t2d", sample)

    dataset_dir = root / "dataset"
    synthetic.write_eval_set(world, N_EVAL_IMAGES, EVAL_SEED, dataset_dir, caption_noise=0.0)

    # The checkpoint comes from the same recipe the end-to-end suite runs,
    # so the golden mask below is a correct segmentation, not a frozen bug.
    full = synthetic.make_train_samples(world, 64, seed=TRAIN_SEED, caption_noise=CAPTION_NOISE)
    cfg = TrainConfig(lr=2e-2, batch_size=16, epochs=50, temperature=0.05, seed=OPT_SEED)
    params, log = trainer.train(full, cfg)
    checkpoint = root / "checkpoint.psi.t2d"
    save_params(checkpoint, params)
    print(f"checkpoint trained, final mean loss {log[-1]['mean_loss']:.6f}")

    rc = cli.main(
        [
            "segment",
            "--features", str(dataset_dir / "features" / "eval_0000.t2d"),
            "--checkpoint", str(checkpoint),
            "--classes", str(dataset_dir / "classes.txt"),
            "--class-embeddings", str(dataset_dir / "class_embeddings.t2d"),
            "--window", "64",
            "--stride", "32",
            "--out-mask", str(root / "golden_mask.png"),
        ]
    )
    if rc != 0:
        raise SystemExit("segment exited nonzero while building the golden mask")
    print(f"fixtures written under {root}")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--root",
        default=str(Path(__file__).resolve().parent.parent / "tests" / "fixtures"),
    )
    args = parser.parse_args()
    build(Path(args.root))
    return 0


if __name__ == "__main__":
    sys.exit(main())
