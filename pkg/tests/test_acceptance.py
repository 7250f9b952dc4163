"""Acceptance suite: every release criterion, one printed verdict per test.

Run with `pytest tests/test_acceptance.py -v -s` to see the verdict lines;
each criterion states its own tolerance inline.
"""

import math
import tempfile
import time
from pathlib import Path

import numpy as np

from patchlink import synthetic, trainer
from patchlink.config import EngineOptions, TrainConfig
from patchlink.core_math import bilinear_upsample_volume, cosine_matrix
from patchlink.eval_harness import IGNORE_INDEX, ConfusionMatrix, miou, run_benchmark, update
from patchlink.mask_refine import compute_affinity, refine
from patchlink.projection import init_params, load_params, psi_forward_batch, save_params
from patchlink.segmentation_engine import (
    build_vocabulary,
    class_attention,
    finalize_mask,
    head_relevance,
    segment_window,
    stitch_windows,
    window_origins,
    write_mask_png,
)
from patchlink.tensor_store import SampleRecord
from patchlink.trainer import (
    info_nce,
    loss_and_grads,
    pool_all_heads,
    pool_by_attention,
    select_best_head,
)


def _report(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------- gradients


def test_full_chain_gradient_check():
    """50 random instances, D_t = D_v = 8, N = 3, B = 3, 2x2 grids; analytic
    parameter gradients vs central differences (eps 1e-3), rel err < 1e-4."""
    rng = np.random.default_rng(811)
    eps = 1e-3
    worst = 0.0
    t0 = time.monotonic()
    for trial in range(50):
        params = init_params(8, 8, seed=1000 + trial)
        B = 3
        T = rng.standard_normal((B, 8))
        Y0, _ = psi_forward_batch(params, T)
        V = []
        for b in range(B):
            features = rng.standard_normal((2, 2, 8))
            attn = rng.standard_normal((3, 2, 2))
            pooled = pool_all_heads(features, attn)
            sims = cosine_matrix(pooled, Y0[b : b + 1])[:, 0]
            V.append(pooled[select_best_head(sims)])  # selection fixed from here on
        V = np.stack(V)

        _, grads = loss_and_grads(params, V, T, 1.0)
        for name, arr in params.tensors().items():
            flat = arr.reshape(-1)
            analytic = grads.tensors()[name].reshape(-1)
            fd = np.zeros_like(analytic)
            for k in range(flat.size):
                keep = flat[k]
                flat[k] = keep + eps
                lp, _ = loss_and_grads(params, V, T, 1.0)
                flat[k] = keep - eps
                lm, _ = loss_and_grads(params, V, T, 1.0)
                flat[k] = keep
                fd[k] = (lp - lm) / (2 * eps)
            denom = max(np.linalg.norm(fd), np.linalg.norm(analytic), 1e-12)
            worst = max(worst, float(np.linalg.norm(fd - analytic) / denom))
    elapsed = time.monotonic() - t0
    _report(
        "gradient-check",
        worst < 1e-4 and elapsed < 10.0,
        f"max rel err {worst:.2e} (< 1e-4) over 50 instances in {elapsed:.1f}s (< 10s)",
    )


def test_loss_sanity_values():
    """A single pair scores 0 for any similarity; uniform similarity gives
    ln B (tol 1e-6); the 2x2 identity gives 0.313262 (tol 1e-5)."""
    single = all(info_nce(np.array([[s]])) == 0.0 for s in (-40.0, 0.0, 0.7, 55.0))
    errs = []
    for b in (2, 4, 8):
        errs.append(abs(info_nce(np.full((b, b), 0.7)) - math.log(b)))
    id_err = abs(info_nce(np.eye(2)) - 0.313262)
    _report(
        "loss-sanity",
        single and max(errs) < 1e-6 and id_err < 1e-5,
        f"single pair exactly 0: {single}, uniform-vs-lnB err {max(errs):.2e} (< 1e-6), "
        f"identity err {id_err:.2e} (< 1e-5)",
    )


def test_pooling_against_direct_summation():
    """100 random instances, grids up to 7x9, D_v = 16; direct softmax-weighted
    summation within 1e-6."""
    rng = np.random.default_rng(812)
    worst = 0.0
    for _ in range(100):
        h, w = int(rng.integers(1, 8)), int(rng.integers(1, 10))
        features = rng.standard_normal((h, w, 16))
        attn = 4.0 * rng.standard_normal((h, w))
        weights = np.exp(attn - attn.max())
        weights /= weights.sum()
        direct = np.einsum("hw,hwc->c", weights, features)
        worst = max(worst, float(np.abs(pool_by_attention(features, attn) - direct).max()))
    _report("pooling-oracle", worst < 1e-6, f"max abs err {worst:.2e} (< 1e-6) over 100 instances")


def test_background_cleaning_identities():
    """lambda = 1 leaves scores bitwise untouched; one-hot relevance copies a
    single head exactly; relevance rows sum to 1 within 1e-6."""
    rng = np.random.default_rng(813)
    params = init_params(6, 8, seed=77)
    emb = {f"c{j}": rng.standard_normal(6) for j in range(3)}
    vocab = build_vocabulary(["background", "c0", "c1", "c2"], emb, params)

    lam_exact = True
    row_err = 0.0
    for _ in range(10):
        features = rng.standard_normal((4, 4, 8))
        attn = rng.standard_normal((5, 4, 4))
        plain = segment_window(features, attn, vocab, EngineOptions(window=8, stride=8))
        cleaned = segment_window(
            features, attn, vocab,
            EngineOptions(window=8, stride=8, background_cleaning=True, lam=1.0),
        )
        lam_exact &= bool(np.array_equal(plain, cleaned))
        R = head_relevance(features, attn, vocab)
        row_err = max(row_err, float(np.abs(R.sum(axis=1) - 1.0).max()))

    one_hot = np.zeros((3, 5))
    one_hot[0, 3] = one_hot[1, 0] = one_hot[2, 4] = 1.0
    attn = rng.standard_normal((5, 4, 4))
    copies = all(
        np.array_equal(class_attention(attn, one_hot, j), attn[int(one_hot[j].argmax())])
        for j in range(3)
    )
    _report(
        "cleaning-identities",
        lam_exact and copies and row_err < 1e-6,
        f"lambda=1 exact: {lam_exact}, one-hot copies exact: {copies}, "
        f"max row-sum err {row_err:.2e} (< 1e-6)",
    )


def test_stitching_upsample_equivalence():
    """448x672 volume (P = 14): averaging windows then upsampling matches
    upsampling windows then averaging within 1e-5; at 448x448 the sliding
    path degenerates to the single window bitwise."""
    rng = np.random.default_rng(814)
    h_p, w_p, win, stride, patch = 32, 48, 32, 16, 14
    H, W = h_p * patch, w_p * patch  # 448 x 672

    # Separable scores, constant across each overlap seam so that windowed
    # interpolation sees the same clamped neighborhoods as the full grid.
    m = 3
    rows = rng.standard_normal((m, h_p))
    cols = rng.standard_normal((m, w_p))
    cols[:, 16] = cols[:, 15]
    cols[:, 32] = cols[:, 31]
    volume = rows[:, :, None] * cols[:, None, :]

    origins = [(oy, ox) for oy in window_origins(h_p, win, stride)
               for ox in window_origins(w_p, win, stride)]
    windows = [((oy, ox), volume[:, oy : oy + win, ox : ox + win]) for oy, ox in origins]

    averaged = stitch_windows(windows, (h_p, w_p))
    path_a = bilinear_upsample_volume(averaged, H, W)

    total = np.zeros((m, H, W))
    count = np.zeros((H, W))
    for (oy, ox), vol in windows:
        up = bilinear_upsample_volume(vol, win * patch, win * patch)
        ys, xs = oy * patch, ox * patch
        total[:, ys : ys + win * patch, xs : xs + win * patch] += up
        count[ys : ys + win * patch, xs : xs + win * patch] += 1
    path_b = total / count[None]

    err = float(np.abs(path_a - path_b).max())

    square = volume[:, :, :32]
    single = bilinear_upsample_volume(square, 448, 448)
    slid = stitch_windows(
        [((oy, ox), square[:, oy : oy + 32, ox : ox + 32])
         for oy in window_origins(32, 32, 16) for ox in window_origins(32, 32, 16)],
        (32, 32),
    )
    bitwise = bool(np.array_equal(bilinear_upsample_volume(slid, 448, 448), single))

    _report(
        "stitching-equivalence",
        err < 1e-5 and bitwise,
        f"448x672 max abs err {err:.2e} (< 1e-5), 448x448 single-vs-sliding bitwise: {bitwise}",
    )


def test_refinement_properties():
    """Constant maps are exact fixed points; affine equivariance within 1e-5;
    per-class min/max bounds hold over 10 iterations."""
    rng = np.random.default_rng(815)
    image = rng.uniform(0.0, 1.0, size=(12, 12, 3))
    field = compute_affinity(image, (1, 2, 4))

    const = np.stack([np.full((12, 12), -2.0), np.full((12, 12), 5.5)])
    fixed = bool(np.array_equal(refine(const, field, 10), const))

    S = rng.standard_normal((3, 12, 12))
    a, b = 2.3, -0.7
    affine_err = float(
        np.abs(refine(a * S + b, field, 10) - (a * refine(S, field, 10) + b)).max()
    )

    bounds = True
    for _ in range(10):
        S = rng.standard_normal((2, 12, 12))
        out = refine(S, field, 10)
        for c in range(2):
            bounds &= bool(out[c].min() >= S[c].min()) and bool(out[c].max() <= S[c].max())

    _report(
        "refinement-properties",
        fixed and affine_err < 1e-5 and bounds,
        f"constant fixed point: {fixed}, affine err {affine_err:.2e} (< 1e-5), bounds: {bounds}",
    )


def test_miou_against_brute_force():
    """200 random 8x8 mask pairs (C <= 5) match a per-pixel set-intersection
    oracle exactly; the crafted confusion matrix [[3,1],[1,3]] gives 0.6."""
    rng = np.random.default_rng(816)
    exact = True
    for _ in range(200):
        c = int(rng.integers(2, 6))
        pred = rng.integers(0, c, size=(8, 8))
        gt = rng.integers(0, c, size=(8, 8))
        gt[rng.random((8, 8)) < 0.05] = IGNORE_INDEX
        keep = gt != IGNORE_INDEX
        if not keep.any():
            continue
        ious = []
        for cls in range(c):
            p = (pred == cls) & keep
            g = (gt == cls) & keep
            union = np.count_nonzero(p | g)
            if union:
                ious.append(np.count_nonzero(p & g) / union)
        mean, _ = miou(update(ConfusionMatrix(num_classes=c), pred, gt))
        exact &= mean == float(np.mean(ious))

    cm = ConfusionMatrix(num_classes=2)
    cm.counts[:] = [[3, 1], [1, 3]]
    crafted, _ = miou(cm)
    _report(
        "miou-oracle",
        exact and crafted == 0.6,
        f"200 random pairs exact: {exact}, crafted cm -> {crafted} (== 0.6)",
    )


# ------------------------------------------------------- end-to-end training

RECIPE = dict(world_seed=21, n_train=64, train_seed=22, opt_seed=23, eval_seed=24,
              caption_noise=0.6, n_eval=12)


def _run_pipeline(workdir: Path) -> tuple[float, float, bytes, list[bytes]]:
    """Train on the synthetic world, evaluate held-out scenes, return
    (final loss, miou, checkpoint bytes, mask PNG bytes)."""
    world = synthetic.make_world(RECIPE["world_seed"])
    samples = synthetic.make_train_samples(
        world, RECIPE["n_train"], seed=RECIPE["train_seed"], caption_noise=RECIPE["caption_noise"]
    )
    cfg = TrainConfig(lr=2e-2, batch_size=16, epochs=50, temperature=0.05, seed=RECIPE["opt_seed"])
    params, log = trainer.train(samples, cfg)

    ck = workdir / "checkpoint.psi.t2d"
    save_params(ck, params)

    data = workdir / "dataset"
    synthetic.write_eval_set(world, RECIPE["n_eval"], RECIPE["eval_seed"], data, caption_noise=0.0)
    options = EngineOptions(window=64, stride=32)
    report = run_benchmark(data, load_params(ck), options)

    masks = []
    for stem in ("eval_0000", "eval_0001"):
        from patchlink.tensor_store import read_sample
        from patchlink.segmentation_engine import load_class_embeddings, segment_sample

        sample = read_sample(data / "features" / f"{stem}.t2d")
        emb = load_class_embeddings(data / "class_embeddings.t2d")
        vocab = build_vocabulary(list(world.names), emb, params)
        vol = segment_sample(sample, vocab, options)
        mask = finalize_mask(vol, *sample.image_size, options, vocab.has_background)
        path = workdir / f"{stem}.mask.png"
        write_mask_png(path, mask)
        masks.append(path.read_bytes())

    return log[-1]["mean_loss"], report["miou"], ck.read_bytes(), masks


def test_synthetic_end_to_end_training():
    """4 hidden classes in R^32, text embeddings in R^16 behind a tanh map;
    B = 16 for 200 steps must reach loss < 0.1 ln 16 and mIoU > 0.95 on
    held-out scenes, single-threaded, under 60 s."""
    t0 = time.monotonic()
    with tempfile.TemporaryDirectory() as td:
        loss, score, _, _ = _run_pipeline(Path(td))
    elapsed = time.monotonic() - t0
    target = 0.1 * math.log(16)
    _report(
        "synthetic-end-to-end",
        loss < target and score > 0.95 and elapsed < 60.0,
        f"loss {loss:.4f} (< {target:.4f}), mIoU {score:.4f} (> 0.95), {elapsed:.1f}s (< 60s)",
    )


def test_pipeline_determinism():
    """Two full pipeline runs with one seed set produce byte-identical
    checkpoints and byte-identical mask PNGs."""
    with tempfile.TemporaryDirectory() as ta, tempfile.TemporaryDirectory() as tb:
        _, _, ck_a, masks_a = _run_pipeline(Path(ta))
        _, _, ck_b, masks_b = _run_pipeline(Path(tb))
    same_ck = ck_a == ck_b
    same_masks = masks_a == masks_b
    _report(
        "pipeline-determinism",
        same_ck and same_masks,
        f"checkpoint bytes identical: {same_ck}, mask bytes identical: {same_masks}",
    )


def test_reference_recipe_is_documented_not_reproduced():
    """Published full-scale results need the full training corpus and the
    eight-benchmark harness; the repo documents that recipe as defaults and
    README states the numbers are out of reach at this scale."""
    cfg = TrainConfig()
    opt = EngineOptions()
    defaults_ok = (
        cfg.lr == 1e-4
        and cfg.batch_size == 128
        and cfg.epochs == 100
        and opt.window == 448
        and opt.stride == 224
        and opt.pamr_iterations == 10
        and opt.threshold == 0.55
        and abs(opt.lam - 5.0 / 6.0) < 1e-12
    )
    readme = (Path(__file__).parent.parent / "README.md").read_text(encoding="utf-8")
    readme = " ".join(readme.lower().split())  # unwrap hard line breaks
    documented = "full-scale" in readme and "not reproduc" in readme
    _report(
        "reference-recipe-status",
        defaults_ok and documented,
        f"config defaults match recipe: {defaults_ok}, README documents status: {documented}",
    )
