"""Projection forward/backward against finite differences, and checkpoint IO."""

import numpy as np
import pytest

from patchlink.projection import (
    ProjectionParams,
    init_params,
    load_params,
    psi_backward_batch,
    psi_forward,
    psi_forward_batch,
    save_params,
)
from patchlink.tensor_store import ContainerError, TensorRecord, read_container, write_container

SEED = 7331


def _fd_param_grads(params, T, G0, eps=1e-6):
    """Central differences of sum(G0 * psi(T)) for every parameter entry."""
    out = {}
    for name, arr in params.tensors().items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for k in range(flat.size):
            keep = flat[k]
            flat[k] = keep + eps
            yp, _ = psi_forward_batch(params, T)
            flat[k] = keep - eps
            ym, _ = psi_forward_batch(params, T)
            flat[k] = keep
            gflat[k] = float(np.sum(G0 * (yp - ym)) / (2 * eps))
        out[name] = g
    return out


def test_forward_matches_manual_composition():
    rng = np.random.default_rng(SEED)
    params = init_params(5, 6, seed=11)
    t = rng.standard_normal(5)
    manual = params.W_b.T @ np.tanh(params.W_a.T @ t + params.b_a) + params.b_b
    np.testing.assert_allclose(psi_forward(params, t), manual, atol=1e-15)


def test_linear_mode_is_affine():
    rng = np.random.default_rng(SEED + 1)
    params = init_params(4, 7, seed=3, linear=True)
    T = rng.standard_normal((5, 4))
    Y, _ = psi_forward_batch(params, T)
    np.testing.assert_allclose(Y, T @ params.W_a + params.b_a, atol=1e-15)


def test_backward_matches_finite_differences():
    rng = np.random.default_rng(SEED + 2)
    for trial in range(5):
        params = init_params(3, 4, seed=100 + trial)
        T = rng.standard_normal((3, 3))
        G0 = rng.standard_normal((3, 4))
        _, cache = psi_forward_batch(params, T)
        grads, _ = psi_backward_batch(params, cache, G0)
        fd = _fd_param_grads(params, T, G0)
        for name, g in grads.tensors().items():
            np.testing.assert_allclose(g, fd[name], atol=1e-8, err_msg=name)


def test_backward_linear_matches_finite_differences():
    rng = np.random.default_rng(SEED + 3)
    params = init_params(3, 5, seed=9, linear=True)
    T = rng.standard_normal((4, 3))
    G0 = rng.standard_normal((4, 5))
    _, cache = psi_forward_batch(params, T)
    grads, _ = psi_backward_batch(params, cache, G0)
    fd = _fd_param_grads(params, T, G0)
    np.testing.assert_allclose(grads.W_a, fd["W_a"], atol=1e-8)
    np.testing.assert_allclose(grads.b_a, fd["b_a"], atol=1e-8)
    np.testing.assert_array_equal(grads.W_b, np.zeros_like(params.W_b))


def test_input_gradient_matches_finite_differences():
    rng = np.random.default_rng(SEED + 4)
    params = init_params(4, 4, seed=17)
    T = rng.standard_normal((2, 4))
    G0 = rng.standard_normal((2, 4))
    _, cache = psi_forward_batch(params, T)
    _, grad_T = psi_backward_batch(params, cache, G0)

    eps = 1e-6
    fd = np.zeros_like(T)
    for i in range(T.shape[0]):
        for j in range(T.shape[1]):
            Tp, Tm = T.copy(), T.copy()
            Tp[i, j] += eps
            Tm[i, j] -= eps
            yp, _ = psi_forward_batch(params, Tp)
            ym, _ = psi_forward_batch(params, Tm)
            fd[i, j] = float(np.sum(G0 * (yp - ym)) / (2 * eps))
    np.testing.assert_allclose(grad_T, fd, atol=1e-8)


def test_init_bounds_and_biases():
    params = init_params(24, 48, seed=5)
    lim_a = np.sqrt(6.0 / (24 + 48))
    lim_b = np.sqrt(6.0 / (48 + 48))
    assert np.abs(params.W_a).max() <= lim_a
    assert np.abs(params.W_b).max() <= lim_b
    np.testing.assert_array_equal(params.b_a, np.zeros(48))
    np.testing.assert_array_equal(params.b_b, np.zeros(48))


def test_init_deterministic_per_seed():
    a = init_params(6, 8, seed=42)
    b = init_params(6, 8, seed=42)
    c = init_params(6, 8, seed=43)
    np.testing.assert_array_equal(a.W_a, b.W_a)
    assert not np.array_equal(a.W_a, c.W_a)


def test_params_survive_f32_storage_exactly():
    """Values are quantized at init so one save/load cycle changes nothing."""
    params = init_params(10, 12, seed=8)
    np.testing.assert_array_equal(
        params.W_a, params.W_a.astype(np.float32).astype(np.float64)
    )


def test_save_load_round_trip(tmp_path):
    params = init_params(9, 11, seed=2)
    path = tmp_path / "ck.psi.t2d"
    save_params(path, params)
    back = load_params(path)
    assert (back.d_t, back.d_v, back.linear) == (9, 11, False)
    for name, arr in params.tensors().items():
        np.testing.assert_array_equal(arr, back.tensors()[name], err_msg=name)


def test_save_load_round_trip_linear(tmp_path):
    params = init_params(3, 5, seed=2, linear=True)
    path = tmp_path / "lin.psi.t2d"
    save_params(path, params)
    assert load_params(path).linear is True


def test_load_missing_record_fails(tmp_path):
    params = init_params(4, 4, seed=1)
    path = tmp_path / "ck.psi.t2d"
    save_params(path, params)
    records = [r for r in read_container(path) if r.name != "W_b"]
    clipped = tmp_path / "clipped.t2d"
    write_container(clipped, records)
    with pytest.raises((ContainerError, ValueError), match="W_b"):
        load_params(clipped)


def test_load_shape_mismatch_fails(tmp_path):
    params = init_params(4, 4, seed=1)
    path = tmp_path / "ck.psi.t2d"
    save_params(path, params)
    records = []
    for r in read_container(path):
        if r.name == "b_a":
            r = TensorRecord.from_array("b_a", np.zeros(7, dtype=np.float32))
        records.append(r)
    doctored = tmp_path / "doctored.t2d"
    write_container(doctored, records)
    with pytest.raises(ValueError):
        load_params(doctored)


def test_validate_catches_inconsistent_shapes():
    params = init_params(4, 6, seed=1)
    bad = ProjectionParams(
        W_a=params.W_a, b_a=np.zeros(5), W_b=params.W_b, b_b=params.b_b, linear=False
    )
    with pytest.raises(ValueError):
        bad.validate()
