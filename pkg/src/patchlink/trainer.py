"""Contrastive alignment of psi against frozen visual features.

Each image contributes N candidate embeddings, one per attention head,
obtained by pooling the patch features with that head's spatially
softmaxed CLS attention. The head whose pooled embedding best matches the
image's own caption is selected (the selection index is a constant during
backprop), the B selected embeddings and B projected captions form a B x B
cosine matrix, and a symmetric InfoNCE loss is minimized with Adam.
Features and attention never receive gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .core_math import argmax_with_tiebreak, cosine_matrix, spatial_softmax
from .projection import (
    ProjectionGrads,
    ProjectionParams,
    _f32_exact,
    init_params,
    psi_backward_batch,
    psi_forward_batch,
)
from .tensor_store import SampleRecord

AGGREGATIONS = ("max_head", "mean_heads", "cls_only")


def pool_by_attention(features: np.ndarray, attn_logit_map: np.ndarray) -> np.ndarray:
    """Attention-weighted average of the patch features.

    features [h_p, w_p, D_v], attn_logit_map [h_p, w_p] (pre-softmax)
    -> [D_v]. Every output component lies in [min, max] of that feature
    component over the grid, since the softmax weights are a probability
    distribution over cells.
    """
    features = np.asarray(features, dtype=np.float64)
    attn_logit_map = np.asarray(attn_logit_map, dtype=np.float64)
    if features.shape[:2] != attn_logit_map.shape:
        raise ValueError(
            f"grid mismatch: features {features.shape[:2]} vs attention {attn_logit_map.shape}"
        )
    w = spatial_softmax(attn_logit_map)
    return np.tensordot(w, features, axes=([0, 1], [0, 1]))


def pool_all_heads(features: np.ndarray, attn_logits: np.ndarray) -> np.ndarray:
    """[N, h_p, w_p] attention stack -> [N, D_v] pooled embeddings."""
    return np.stack([pool_by_attention(features, a) for a in np.asarray(attn_logits)])


def head_similarities(
    features: np.ndarray, attn_logits: np.ndarray, params: ProjectionParams, t: np.ndarray
) -> np.ndarray:
    """Cosine of each head's pooled embedding against psi(t); shape [N]."""
    pooled = pool_all_heads(features, attn_logits)
    y, _ = psi_forward_batch(params, np.asarray(t, dtype=np.float64)[None, :])
    return cosine_matrix(pooled, y)[:, 0]


def select_best_head(sims: np.ndarray) -> int:
    return argmax_with_tiebreak(sims)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    m = a.max(axis=axis, keepdims=True)
    return (m + np.log(np.exp(a - m).sum(axis=axis, keepdims=True))).squeeze(axis)


def info_nce(batch_sims: np.ndarray) -> float:
    """Symmetric InfoNCE over a B x B similarity matrix (diagonal = positives).

    L = -(1/2B) sum_i log(e^{s_ii} / sum_j e^{s_ji})
        -(1/2B) sum_i log(e^{s_ii} / sum_j e^{s_ij})

    No temperature here: callers scale the matrix beforehand if they use one.
    """
    S = np.asarray(batch_sims, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {S.shape}")
    B = S.shape[0]
    diag = np.diag(S)
    col_lse = _logsumexp(S, axis=0)
    row_lse = _logsumexp(S, axis=1)
    return float((-(diag - col_lse).sum() - (diag - row_lse).sum()) / (2.0 * B))


def info_nce_backward(batch_sims: np.ndarray) -> np.ndarray:
    """dL/dS for info_nce: (1/2B) (colsoftmax + rowsoftmax - 2 I)."""
    S = np.asarray(batch_sims, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != S.shape[1]:
        raise ValueError(f"similarity matrix must be square, got {S.shape}")
    B = S.shape[0]
    ec = np.exp(S - S.max(axis=0, keepdims=True))
    col_soft = ec / ec.sum(axis=0, keepdims=True)
    er = np.exp(S - S.max(axis=1, keepdims=True))
    row_soft = er / er.sum(axis=1, keepdims=True)
    return (col_soft + row_soft - 2.0 * np.eye(B)) / (2.0 * B)


@dataclass
class AdamState:
    lr: float
    beta1: float
    beta2: float
    eps: float
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(
        cls, params: ProjectionParams, lr: float, beta1: float = 0.9,
        beta2: float = 0.999, eps: float = 1e-8,
    ) -> "AdamState":
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, arr in params.tensors().items():
            state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        return state


def adam_step(
    params: ProjectionParams, grads: ProjectionGrads, state: AdamState
) -> tuple[ProjectionParams, AdamState]:
    """One bias-corrected Adam update; new params stay f32-representable."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new = {}
    for name, p in params.tensors().items():
        g = grads.tensors()[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {name}: {g.shape} vs {p.shape}")
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        new[name] = _f32_exact(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return ProjectionParams(linear=params.linear, **new), state


def _check_consistency(samples: list[SampleRecord]) -> tuple[int, int, int]:
    dims = {
        (s.features.shape[2], s.attn_logits.shape[0], s.captions[0][1].shape[0])
        for s in samples
    }
    if len(dims) != 1:
        raise ValueError(f"dataset disagrees on (D_v, N, D_t): {sorted(dims)}")
    if any(not s.captions for s in samples):
        raise ValueError("every training sample needs at least one caption")
    return dims.pop()


def select_embeddings(
    samples: list[SampleRecord],
    caption_ids: list[int],
    params: ProjectionParams,
    cfg: TrainConfig,
) -> tuple[np.ndarray, np.ndarray, list[int]]:
    """Pick one visual embedding per sample; returns (V [B, D_v], T [B, D_t], heads)."""
    T = np.stack([s.captions[c][1] for s, c in zip(samples, caption_ids)])
    Y, _ = psi_forward_batch(params, T)
    V = []
    heads = []
    for i, s in enumerate(samples):
        pooled = pool_all_heads(s.features, s.attn_logits)
        if cfg.aggregation == "max_head":
            sims = cosine_matrix(pooled, Y[i : i + 1])[:, 0]
            j = select_best_head(sims)
            heads.append(j)
            V.append(pooled[j])
        elif cfg.aggregation == "mean_heads":
            V.append(pooled.mean(axis=0))
        elif cfg.aggregation == "cls_only":
            if s.cls_feature is None:
                raise ValueError(f"{s.image_id}: cls_only aggregation needs a cls_feature record")
            V.append(s.cls_feature)
        else:
            raise ValueError(f"unknown aggregation {cfg.aggregation!r}")
    return np.stack(V), T, heads


def loss_and_grads(
    params: ProjectionParams, V: np.ndarray, T: np.ndarray, tau: float
) -> tuple[float, "ProjectionGrads"]:
    """Contrastive loss on cos(V, psi(T)) / tau and its parameter gradients.

    V is treated as a constant: the max-head selection that produced it is
    held fixed through the backward pass.
    """
    Y, cache = psi_forward_batch(params, T)
    ny = np.linalg.norm(Y, axis=1)
    Vn = V / np.linalg.norm(V, axis=1)[:, None]
    Yn = Y / ny[:, None]
    C = Vn @ Yn.T  # raw cosine matrix, S before temperature
    S = C / tau
    loss = info_nce(S)

    # dL/dY[j] = sum_i dL/dS[i,j] * (1/tau) * (Vn[i] - C[i,j] Yn[j]) / |Y[j]|
    G = info_nce_backward(S) / tau
    grad_Y = (G.T @ Vn - (G * C).sum(axis=0)[:, None] * Yn) / ny[:, None]

    grads, _ = psi_backward_batch(params, cache, grad_Y)
    return loss, grads


def train_step(
    params: ProjectionParams,
    state: AdamState,
    samples: list[SampleRecord],
    caption_ids: list[int],
    cfg: TrainConfig,
) -> tuple[ProjectionParams, AdamState, float, list[int]]:
    """One optimizer step on a batch; returns (params, state, loss, selected heads)."""
    V, T, heads = select_embeddings(samples, caption_ids, params, cfg)
    loss, grads = loss_and_grads(params, V, T, cfg.temperature)
    params, state = adam_step(params, grads, state)
    return params, state, loss, heads


def train(
    dataset: list[SampleRecord],
    cfg: TrainConfig,
    params: ProjectionParams | None = None,
) -> tuple[ProjectionParams, list[dict]]:
    """Full training run; returns final params and the per-epoch log.

    Log entries: {"epoch", "mean_loss", "head_histogram"} where the
    histogram holds percentages per head index summing to 100 (all zeros
    for aggregations that do not select heads).
    """
    if not dataset:
        raise ValueError("empty dataset")
    d_v, n_heads, d_t = _check_consistency(dataset)
    if params is None:
        params = init_params(d_t, d_v, cfg.seed, linear=cfg.projection == "linear")
    if (params.d_t, params.d_v) != (d_t, d_v):
        raise ValueError(
            f"params are D_t={params.d_t}, D_v={params.d_v}; dataset is D_t={d_t}, D_v={d_v}"
        )

    state = AdamState.for_params(params, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    rng = np.random.default_rng(cfg.seed)
    log: list[dict] = []

    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        caption_ids = [int(rng.integers(len(dataset[i].captions))) for i in order]
        head_counts = np.zeros(n_heads, dtype=np.int64)
        losses = []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            caps = caption_ids[lo : lo + cfg.batch_size]
            batch = [dataset[i] for i in idx]
            params, state, loss, heads = train_step(params, state, batch, caps, cfg)
            losses.append(loss)
            for h in heads:
                head_counts[h] += 1
        total = head_counts.sum()
        hist = (100.0 * head_counts / total).tolist() if total else head_counts.tolist()
        log.append(
            {"epoch": epoch, "mean_loss": float(np.mean(losses)), "head_histogram": hist}
        )
    return params, log
