"""Window scoring, stitching, mask finalization, and vocabulary plumbing."""

import json

import numpy as np
import pytest

from patchlink.config import EngineOptions
from patchlink.core_math import DegenerateVectorError, cosine_similarity
from patchlink.projection import init_params, psi_forward_batch
from patchlink.segmentation_engine import (
    ClassVocabulary,
    build_vocabulary,
    class_attention,
    finalize_mask,
    global_image_embedding,
    head_relevance,
    load_class_embeddings,
    mask_palette,
    normalize_class_attention,
    read_mask_png,
    score_image_text,
    segment_sample,
    segment_window,
    shape_similarity,
    similarity_maps,
    stitch_windows,
    window_origins,
    write_mask_png,
    write_sidecar,
)
from patchlink.tensor_store import SampleRecord

SEED = 60901


def _vocab(rng, m=3, d_v=6, background=False):
    proj = rng.standard_normal((m, d_v))
    return ClassVocabulary(
        names=[f"class{j}" for j in range(m)],
        embeddings=rng.standard_normal((m, 4)),
        projected=proj,
        has_background=background,
    )


def test_similarity_maps_match_per_patch_cosine():
    rng = np.random.default_rng(SEED)
    vocab = _vocab(rng)
    features = rng.standard_normal((4, 5, 6))
    S = similarity_maps(features, vocab)
    assert S.shape == (3, 4, 5)
    for j in range(3):
        for y in range(4):
            for x in range(5):
                expect = cosine_similarity(features[y, x], vocab.projected[j])
                assert S[j, y, x] == pytest.approx(expect, abs=1e-12)


def test_similarity_maps_flag_zero_patch():
    rng = np.random.default_rng(SEED + 1)
    vocab = _vocab(rng)
    features = rng.standard_normal((3, 3, 6))
    features[1, 2] = 0.0
    with pytest.raises(DegenerateVectorError, match=r"h=1, w=2"):
        similarity_maps(features, vocab)


def test_head_relevance_rows_sum_to_one():
    rng = np.random.default_rng(SEED + 2)
    vocab = _vocab(rng)
    R = head_relevance(rng.standard_normal((4, 4, 6)), rng.standard_normal((5, 4, 4)), vocab)
    assert R.shape == (3, 5)
    np.testing.assert_allclose(R.sum(axis=1), np.ones(3), atol=1e-12)


def test_one_hot_relevance_copies_single_head():
    rng = np.random.default_rng(SEED + 3)
    attn = rng.standard_normal((4, 3, 3))
    R = np.zeros((2, 4))
    R[0, 2] = 1.0
    R[1, 1] = 1.0
    np.testing.assert_array_equal(class_attention(attn, R, 0), attn[2])
    np.testing.assert_array_equal(class_attention(attn, R, 1), attn[1])


def test_normalize_class_attention_range_matches_volume():
    rng = np.random.default_rng(SEED + 4)
    F = rng.standard_normal((4, 4))
    volume = rng.standard_normal((3, 4, 4))
    out = normalize_class_attention(F, volume)
    assert out.min() == pytest.approx(volume.min(), abs=1e-12)
    assert out.max() == pytest.approx(volume.max(), abs=1e-12)


def test_shape_similarity_lambda_one_is_identity():
    rng = np.random.default_rng(SEED + 5)
    volume = rng.standard_normal((3, 4, 4))
    F = rng.standard_normal((3, 4, 4))
    np.testing.assert_array_equal(shape_similarity(volume, F, 1.0), volume)


def test_shape_similarity_lambda_zero_is_attention():
    rng = np.random.default_rng(SEED + 6)
    volume = rng.standard_normal((2, 3, 3))
    F = rng.standard_normal((2, 3, 3))
    np.testing.assert_array_equal(shape_similarity(volume, F, 0.0), F)


def test_shape_similarity_rejects_bad_lambda():
    with pytest.raises(ValueError):
        shape_similarity(np.zeros((1, 2, 2)), np.zeros((1, 2, 2)), 1.5)


def test_segment_window_cleaning_with_lambda_one_changes_nothing():
    rng = np.random.default_rng(SEED + 7)
    params = init_params(4, 6, seed=2)
    emb = {f"c{j}": rng.standard_normal(4) for j in range(3)}
    vocab = build_vocabulary(["background", "c0", "c1", "c2"], emb, params)
    features = rng.standard_normal((4, 4, 6))
    attn = rng.standard_normal((2, 4, 4))
    plain = segment_window(features, attn, vocab, EngineOptions(window=8, stride=4))
    cleaned = segment_window(
        features, attn, vocab,
        EngineOptions(window=8, stride=4, background_cleaning=True, lam=1.0),
    )
    np.testing.assert_array_equal(plain, cleaned)


class TestWindowOrigins:
    def test_window_covers_extent(self):
        assert window_origins(10, 16, 8) == [0]

    def test_exact_tiling(self):
        assert window_origins(48, 32, 16) == [0, 16]

    def test_snap_to_border(self):
        assert window_origins(56, 32, 16) == [0, 16, 24]

    def test_every_cell_covered(self):
        rng = np.random.default_rng(SEED + 8)
        for _ in range(50):
            extent = int(rng.integers(1, 50))
            win = int(rng.integers(1, 40))
            stride = int(rng.integers(1, win + 1))
            covered = np.zeros(extent, dtype=bool)
            for o in window_origins(extent, min(win, extent), stride):
                covered[o : o + win] = True
            assert covered.all(), (extent, win, stride)


def test_stitch_single_window_is_identity():
    rng = np.random.default_rng(SEED + 9)
    vol = rng.standard_normal((3, 4, 5))
    np.testing.assert_array_equal(stitch_windows([((0, 0), vol)], (4, 5)), vol)


def test_stitch_half_overlap_averages():
    zeros = np.zeros((1, 2, 4))
    ones = np.ones((1, 2, 4))
    out = stitch_windows([((0, 0), zeros), ((0, 2), ones)], (2, 6))
    np.testing.assert_array_equal(out[0, :, :2], np.zeros((2, 2)))
    np.testing.assert_array_equal(out[0, :, 2:4], np.full((2, 2), 0.5))
    np.testing.assert_array_equal(out[0, :, 4:], np.ones((2, 2)))


def test_stitch_matches_accumulation_oracle():
    rng = np.random.default_rng(SEED + 10)
    for _ in range(20):
        h, w, m = 6, 8, 2
        layouts = [((0, 0), (6, 5)), ((2, 3), (4, 5)), ((0, 3), (6, 5))]
        volumes = [(o, rng.standard_normal((m, sy, sx))) for o, (sy, sx) in layouts]
        total = np.zeros((m, h, w))
        count = np.zeros((h, w))
        for (oy, ox), vol in volumes:
            sy, sx = vol.shape[1:]
            total[:, oy : oy + sy, ox : ox + sx] += vol
            count[oy : oy + sy, ox : ox + sx] += 1
        assert count.min() > 0
        np.testing.assert_allclose(
            stitch_windows(volumes, (h, w)), total / count, atol=1e-14
        )


def test_stitch_uncovered_cell_is_internal_error():
    vol = np.zeros((1, 2, 2))
    with pytest.raises(RuntimeError, match="covered by no window"):
        stitch_windows([((0, 0), vol)], (4, 4))


def _toy_sample(rng, h=6, w=8, d_v=6, n_heads=2, patch=2):
    return SampleRecord(
        image_id="toy",
        features=rng.standard_normal((h, w, d_v)),
        attn_logits=rng.standard_normal((n_heads, h, w)),
        captions=[("toy caption", rng.standard_normal(4))],
        image_size=(h * patch, w * patch),
        resized_size=(h * patch, w * patch),
        patch_size=patch,
    )


def test_segment_sample_matches_manual_composition():
    rng = np.random.default_rng(SEED + 11)
    vocab = _vocab(rng)
    sample = _toy_sample(rng)
    options = EngineOptions(window=8, stride=4)  # 4x2 patch windows over 6x8
    got = segment_sample(sample, vocab, options)

    win, stride = 4, 2
    volumes = []
    for oy in window_origins(6, win, stride):
        for ox in window_origins(8, win, stride):
            f = sample.features[oy : oy + win, ox : ox + win]
            a = sample.attn_logits[:, oy : oy + win, ox : ox + win]
            volumes.append(((oy, ox), similarity_maps(f, vocab)))
    np.testing.assert_allclose(got, stitch_windows(volumes, (6, 8)), atol=1e-14)


def test_segment_sample_rejects_misaligned_window():
    rng = np.random.default_rng(SEED + 12)
    sample = _toy_sample(rng, patch=2)
    with pytest.raises(ValueError, match="multiples of the patch size"):
        segment_sample(sample, _vocab(rng), EngineOptions(window=7, stride=4))


def test_finalize_mask_argmax_on_plain_vocab():
    volume = np.zeros((2, 2, 2))
    volume[0, :, 0] = 1.0
    volume[1, :, 1] = 1.0
    mask = finalize_mask(volume, 4, 4, EngineOptions(window=8, stride=4), False)
    assert mask.dtype == np.int32
    assert set(np.unique(mask)) <= {0, 1}
    assert mask[0, 0] == 0 and mask[0, 3] == 1


def test_finalize_mask_background_threshold():
    options = EngineOptions(window=8, stride=4, threshold=0.55)
    volume = np.full((2, 3, 3), 0.2)
    volume[1, 0, 0] = 0.9
    mask = finalize_mask(volume, 3, 3, options, True)
    assert mask[0, 0] == 1  # confident pixel keeps its class
    assert mask[2, 2] == 2  # both classes below threshold -> background index M


def test_mask_png_round_trip(tmp_path):
    rng = np.random.default_rng(SEED + 13)
    mask = rng.integers(0, 5, size=(9, 7)).astype(np.int32)
    path = tmp_path / "m.png"
    write_mask_png(path, mask)
    np.testing.assert_array_equal(read_mask_png(path), mask)


def test_palette_is_stable_and_black_backgrounded():
    pal = mask_palette()
    assert pal.shape == (256, 3)
    np.testing.assert_array_equal(pal[0], [0, 0, 0])
    np.testing.assert_array_equal(pal, mask_palette())


def test_sidecar_contents(tmp_path):
    path = tmp_path / "mask.png.json"
    write_sidecar(path, ["cat", "dog", "background"], {"lr": 0.1}, {"image_id": "x"})
    data = json.loads(path.read_text())
    assert data["index_to_name"] == {"0": "cat", "1": "dog", "2": "background"}
    assert data["config"] == {"lr": 0.1}
    assert data["image_id"] == "x"


def test_build_vocabulary_background_flag(fixtures_dir):
    params = init_params(16, 32, seed=1)
    emb = load_class_embeddings(fixtures_dir / "dataset" / "class_embeddings.t2d")
    plain = build_vocabulary(["azure", "maroon"], emb, params)
    assert not plain.has_background
    with pytest.raises(ValueError):
        plain.background_index

    bg = build_vocabulary(["background", "azure", "maroon"], emb, params)
    assert bg.has_background and bg.m == 2 and bg.background_index == 2

    Y, _ = psi_forward_batch(params, bg.embeddings)
    np.testing.assert_array_equal(bg.projected, Y)


def test_build_vocabulary_missing_embedding():
    params = init_params(4, 6, seed=1)
    with pytest.raises(ValueError, match="nonexistent"):
        build_vocabulary(["nonexistent"], {"other": np.zeros(4)}, params)


def test_score_image_text_picks_best_head():
    rng = np.random.default_rng(SEED + 14)
    params = init_params(4, 6, seed=9)
    features = rng.standard_normal((3, 3, 6))
    attn = rng.standard_normal((4, 3, 3))
    t = rng.standard_normal(4)
    score = score_image_text(features, attn, params, t)
    from patchlink.trainer import head_similarities

    assert score == pytest.approx(head_similarities(features, attn, params, t).max(), abs=1e-12)


def test_global_image_embedding_is_head_mean():
    rng = np.random.default_rng(SEED + 15)
    features = rng.standard_normal((3, 4, 5))
    attn = rng.standard_normal((2, 3, 4))
    from patchlink.trainer import pool_all_heads

    np.testing.assert_allclose(
        global_image_embedding(features, attn),
        pool_all_heads(features, attn).mean(axis=0),
        atol=1e-14,
    )
