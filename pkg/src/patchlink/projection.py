"""The learnable map psi from text embedding space (D_t) into visual patch
space (D_v): two affine layers with a tanh between them,

    psi(t) = W_b^T tanh(W_a^T t + b_a) + b_b

with closed-form forward and backward passes (no autodiff dependency) and
bit-exact checkpoint serialization. A degenerate linear mode drops the tanh
and second layer: psi_lin(t) = W_a^T t + b_a.

Parameters live in memory as float64 whose values are exactly representable
in float32; checkpoints store f32, so save/load round-trips bit-exactly for
anything produced here (init or optimizer steps, both of which quantize).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import tensor_store as ts

CHECKPOINT_VERSION = 1
PARAM_NAMES = ("W_a", "b_a", "W_b", "b_b")


def _f32_exact(a: np.ndarray) -> np.ndarray:
    return a.astype(np.float32).astype(np.float64)


@dataclass
class ProjectionParams:
    W_a: np.ndarray  # [D_t, D_v]
    b_a: np.ndarray  # [D_v]
    W_b: np.ndarray  # [D_v, D_v]
    b_b: np.ndarray  # [D_v]
    linear: bool = False

    @property
    def d_t(self) -> int:
        return self.W_a.shape[0]

    @property
    def d_v(self) -> int:
        return self.W_a.shape[1]

    def tensors(self) -> dict[str, np.ndarray]:
        return {"W_a": self.W_a, "b_a": self.b_a, "W_b": self.W_b, "b_b": self.b_b}

    def validate(self) -> None:
        d_t, d_v = self.W_a.shape
        if self.b_a.shape != (d_v,) or self.W_b.shape != (d_v, d_v) or self.b_b.shape != (d_v,):
            raise ValueError(
                f"inconsistent parameter shapes: W_a {self.W_a.shape}, "
                f"b_a {self.b_a.shape}, W_b {self.W_b.shape}, b_b {self.b_b.shape}"
            )
        for name, arr in self.tensors().items():
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")

    def copy(self) -> "ProjectionParams":
        return ProjectionParams(
            self.W_a.copy(), self.b_a.copy(), self.W_b.copy(), self.b_b.copy(), self.linear
        )


@dataclass
class ProjectionGrads:
    W_a: np.ndarray
    b_a: np.ndarray
    W_b: np.ndarray
    b_b: np.ndarray

    def tensors(self) -> dict[str, np.ndarray]:
        return {"W_a": self.W_a, "b_a": self.b_a, "W_b": self.W_b, "b_b": self.b_b}


@dataclass
class PsiCache:
    """Forward intermediates needed by the backward pass."""

    T: np.ndarray  # [K, D_t] inputs
    Z: np.ndarray | None  # [K, D_v] pre-activation (None in linear mode)
    U: np.ndarray | None  # [K, D_v] tanh(Z)


def init_params(d_t: int, d_v: int, seed: int, linear: bool = False) -> ProjectionParams:
    """Xavier-uniform weights, zero biases, deterministic in the seed."""
    if d_t < 1 or d_v < 1:
        raise ValueError(f"dimensions must be positive, got D_t={d_t}, D_v={d_v}")
    rng = np.random.default_rng(seed)
    lim_a = np.sqrt(6.0 / (d_t + d_v))
    lim_b = np.sqrt(6.0 / (d_v + d_v))
    return ProjectionParams(
        W_a=_f32_exact(rng.uniform(-lim_a, lim_a, size=(d_t, d_v))),
        b_a=np.zeros(d_v, dtype=np.float64),
        W_b=_f32_exact(rng.uniform(-lim_b, lim_b, size=(d_v, d_v))),
        b_b=np.zeros(d_v, dtype=np.float64),
        linear=linear,
    )


def psi_forward_batch(params: ProjectionParams, T: np.ndarray) -> tuple[np.ndarray, PsiCache]:
    """T [K, D_t] -> (psi(T) [K, D_v], cache for backward)."""
    T = np.asarray(T, dtype=np.float64)
    if T.ndim != 2 or T.shape[1] != params.d_t:
        raise ValueError(f"expected [K, {params.d_t}] inputs, got {T.shape}")
    if params.linear:
        Y = T @ params.W_a + params.b_a
        return Y, PsiCache(T=T, Z=None, U=None)
    Z = T @ params.W_a + params.b_a
    U = np.tanh(Z)
    Y = U @ params.W_b + params.b_b
    return Y, PsiCache(T=T, Z=Z, U=U)


def psi_forward(params: ProjectionParams, t: np.ndarray) -> np.ndarray:
    """Single text embedding [D_t] -> [D_v]."""
    Y, _ = psi_forward_batch(params, np.asarray(t, dtype=np.float64)[None, :])
    return Y[0]


def psi_backward_batch(
    params: ProjectionParams, cache: PsiCache, grad_Y: np.ndarray
) -> tuple[ProjectionGrads, np.ndarray]:
    """Gradients of sum_k <grad_Y[k], psi(T[k])> w.r.t. params and T.

    Per sample: grad_W_b = u grad_y^T, grad_b_b = grad_y,
    grad_u = W_b grad_y, grad_z = grad_u * (1 - u^2),
    grad_W_a = t grad_z^T, grad_b_a = grad_z, grad_t = W_a grad_z.
    """
    grad_Y = np.asarray(grad_Y, dtype=np.float64)
    K = cache.T.shape[0]
    if grad_Y.shape != (K, params.d_v):
        raise ValueError(f"stale cache: grad shape {grad_Y.shape} vs K={K}, D_v={params.d_v}")
    if cache.T.shape[1] != params.d_t:
        raise ValueError(f"stale cache: inputs have D_t={cache.T.shape[1]}")

    if params.linear:
        grads = ProjectionGrads(
            W_a=cache.T.T @ grad_Y,
            b_a=grad_Y.sum(axis=0),
            W_b=np.zeros_like(params.W_b),
            b_b=np.zeros_like(params.b_b),
        )
        return grads, grad_Y @ params.W_a.T

    grad_U = grad_Y @ params.W_b.T
    grad_Z = grad_U * (1.0 - cache.U * cache.U)
    grads = ProjectionGrads(
        W_a=cache.T.T @ grad_Z,
        b_a=grad_Z.sum(axis=0),
        W_b=cache.U.T @ grad_Y,
        b_b=grad_Y.sum(axis=0),
    )
    return grads, grad_Z @ params.W_a.T


def save_params(path: str | os.PathLike, params: ProjectionParams) -> None:
    params.validate()
    records = [
        ts.TensorRecord.from_array(name, arr.astype(np.float32), "f32")
        for name, arr in params.tensors().items()
    ]
    meta = {
        "format_version": CHECKPOINT_VERSION,
        "d_t": params.d_t,
        "d_v": params.d_v,
        "linear": params.linear,
    }
    records.append(ts.text_record("meta", json.dumps(meta, sort_keys=True)))
    ts.write_container(path, records)


def load_params(path: str | os.PathLike) -> ProjectionParams:
    recs = ts.read_dict(path)
    for name in PARAM_NAMES + ("meta",):
        if name not in recs:
            raise ts.ContainerError(f"{os.fspath(path)}: missing record {name!r}")
    meta = json.loads(recs["meta"].text())
    d_t, d_v = int(meta["d_t"]), int(meta["d_v"])
    arrays = {name: recs[name].to_array().astype(np.float64) for name in PARAM_NAMES}
    expected = {"W_a": (d_t, d_v), "b_a": (d_v,), "W_b": (d_v, d_v), "b_b": (d_v,)}
    for name, shape in expected.items():
        if arrays[name].shape != shape:
            raise ts.ContainerError(
                f"{os.fspath(path)}: record {name!r} has shape {arrays[name].shape}, "
                f"expected {shape} for D_t={d_t}, D_v={d_v}"
            )
    params = ProjectionParams(linear=bool(meta.get("linear", False)), **arrays)
    params.validate()
    return params
