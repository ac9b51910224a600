"""Contrastive pretexts and the pretraining loop.

Two pretexts are available. The default asymmetric one scores positives as
projected-online against EMA-target representations while negatives are
scored online-against-online, per anchor:

    loss = -(1/|V'|) sum_v (1/deg v) sum_{u in N(v)}
           log[ exp(z_v.h+_u / tau) / (exp(z_v.h+_u / tau)
                + sum_m exp(h_v.h_{vm} / tau)) ]

with z = projector(online encoder), h+ from the target encoder (constant
under differentiation), h online, and V' the non-isolated nodes. The
smoothing baseline replaces z and h+ with plain online representations (no
projector, no target; gradients flow through both sides of positive pairs).

Gradients are accumulated through sparse coefficient matrices so the cost
stays at O(E d + n m d) per epoch.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from .errors import ArgumentError, DivergenceError, PretextError, SamplingError
from .graphs import Graph
from .model import (
    EncoderParams,
    ProjectorParams,
    TrainState,
    ema_update,
    encode,
    encode_backward,
    encode_with_cache,
    init_params,
    init_projector,
    normalize_adjacency,
    project_backward,
    project_with_cache,
)

log = logging.getLogger("selfpro")

PRETEXTS = ("graphacl", "smoothing")


@dataclass
class PretrainConfig:
    epochs: int = 400
    lr: float = 5e-4
    tau: float = 0.5
    n_negatives: int = 256
    ema_momentum: float = 0.99
    pretext: str = "graphacl"
    sgd_momentum: float = 0.9
    negatives_use_projector: bool = False
    hidden_dim: int = 256
    embed_dim: int = 256
    encoder_depth: int = 2
    projector_depth: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ArgumentError("tau must be positive")
        if self.n_negatives < 1:
            raise ArgumentError("n_negatives must be >= 1")
        if not (0.0 <= self.ema_momentum <= 1.0):
            raise ArgumentError("ema_momentum must lie in [0, 1]")
        if self.pretext not in PRETEXTS:
            raise ArgumentError(f"pretext must be one of {PRETEXTS}, got {self.pretext!r}")


@dataclass
class PretrainGrads:
    """Gradients for the trainable parameters only (target is stop-gradient)."""

    encoder: list[np.ndarray]
    projector: list[np.ndarray]


def sample_negatives(g: Graph | int, anchor: int, m: int, seed: int) -> np.ndarray:
    """m distinct nodes drawn uniformly, anchor excluded; deterministic given seed."""
    n = g if isinstance(g, int) else g.n_nodes
    rng = np.random.default_rng([int(seed), 0x7E6])
    return _negatives_for_anchor(rng, n, anchor, m)


def _negatives_for_anchor(rng: np.random.Generator, n: int, anchor: int, m: int) -> np.ndarray:
    if m > n - 1:
        raise SamplingError(f"cannot draw {m} negatives from {n - 1} candidates")
    picked = rng.choice(n - 1, size=m, replace=False)
    picked[picked >= anchor] += 1  # skip over the anchor id
    return picked


def negative_matrix(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Per-anchor negative ids, row v excluding v."""
    out = np.empty((n, m), dtype=np.int64)
    for v in range(n):
        out[v] = _negatives_for_anchor(rng, n, v, m)
    return out


def _positive_weights(g: Graph):
    """Directed positive pairs plus the 1/(|V'| deg) weight per pair."""
    src, dst = g.directed_pairs()
    if len(src) == 0:
        raise PretextError("pretext loss undefined: graph has no edges")
    deg = g.degrees()
    active = deg > 0
    n_active = int(active.sum())
    if n_active < g.n_nodes:
        log.debug("pretext: skipping %d isolated nodes", g.n_nodes - n_active)
    weights = 1.0 / (n_active * deg[src])
    return src, dst, weights


def _neg_logsumexp(q: np.ndarray, negatives: np.ndarray, tau: float, chunk: int = 512):
    """Per-anchor log sum_m exp(q_v . q_{neg_vm} / tau), plus raw scores by chunk."""
    n, m = negatives.shape
    lse = np.empty(n)
    scores = np.empty((n, m))
    for lo in range(0, n, chunk):
        hi = min(lo + chunk, n)
        block = np.matmul(q[negatives[lo:hi]], q[lo:hi, :, None])[:, :, 0] / tau
        scores[lo:hi] = block
        mx = block.max(axis=1)
        lse[lo:hi] = mx + np.log(np.exp(block - mx[:, None]).sum(axis=1))
    return lse, scores


def _coeff_matrix(rows: np.ndarray, cols: np.ndarray, data: np.ndarray, n: int) -> sp.csr_matrix:
    return sp.csr_matrix((data, (rows, cols)), shape=(n, n))


def graphacl_loss(state: TrainState, g: Graph, negatives: np.ndarray,
                  negatives_use_projector: bool = False, a_hat=None, want_grads: bool = False):
    """Asymmetric contrastive pretext loss; optionally its gradients.

    Positives use projector(online) against the target encoder (constant);
    negatives use online representations on both sides unless
    ``negatives_use_projector`` scores them in projector space.
    """
    if a_hat is None:
        a_hat = normalize_adjacency(g)
    tau = state.temperature
    h_on, cache_enc = encode_with_cache(state.online, g, a_hat)
    z, cache_proj = project_with_cache(state.projector, h_on)
    h_tg = encode(state.target, g, a_hat)

    src, dst, w = _positive_weights(g)
    q = z if negatives_use_projector else h_on
    lse, neg_scores = _neg_logsumexp(q, negatives, tau)

    s = np.sum(z[src] * h_tg[dst], axis=1) / tau
    per_pair = np.logaddexp(s, lse[src]) - s
    loss = float(np.sum(w * per_pair))
    if not want_grads:
        return loss

    n = g.n_nodes
    # d loss / d s per pair and d loss / d lse per anchor
    g_s = -w * expit(lse[src] - s)
    g_lse = np.zeros(n)
    np.add.at(g_lse, src, w * expit(lse[src] - s))
    # positive side: dZ += P @ h_tg with P[src,dst] = g_s / tau
    p_mat = _coeff_matrix(src, dst, g_s / tau, n)
    d_z = p_mat @ h_tg
    # negative side: coeff_vm = g_lse_v * softmax_m(neg scores) / tau
    coeff = (g_lse[:, None] * np.exp(neg_scores - lse[:, None])) / tau
    w_mat = _coeff_matrix(
        np.repeat(np.arange(n), negatives.shape[1]), negatives.ravel(), coeff.ravel(), n
    )
    d_q = w_mat @ q + w_mat.T @ q
    if negatives_use_projector:
        d_z = d_z + d_q
        d_h = np.zeros_like(h_on)
    else:
        d_h = d_q
    proj_grads, d_h_from_proj = project_backward(state.projector, cache_proj, d_z)
    enc_grads = encode_backward(state.online, cache_enc, d_h + d_h_from_proj)
    return loss, PretrainGrads(enc_grads, proj_grads)


def smoothing_loss(state: TrainState, g: Graph, negatives: np.ndarray,
                   a_hat=None, want_grads: bool = False):
    """Neighbor-smoothing contrastive baseline: online representations only."""
    if a_hat is None:
        a_hat = normalize_adjacency(g)
    tau = state.temperature
    h, cache_enc = encode_with_cache(state.online, g, a_hat)

    src, dst, w = _positive_weights(g)
    lse, neg_scores = _neg_logsumexp(h, negatives, tau)
    s = np.sum(h[src] * h[dst], axis=1) / tau
    per_pair = np.logaddexp(s, lse[src]) - s
    loss = float(np.sum(w * per_pair))
    if not want_grads:
        return loss

    n = g.n_nodes
    g_s = -w * expit(lse[src] - s)
    g_lse = np.zeros(n)
    np.add.at(g_lse, src, w * expit(lse[src] - s))
    p_mat = _coeff_matrix(src, dst, g_s / tau, n)
    d_h = p_mat @ h + p_mat.T @ h  # positive pairs: both sides are online
    coeff = (g_lse[:, None] * np.exp(neg_scores - lse[:, None])) / tau
    w_mat = _coeff_matrix(
        np.repeat(np.arange(n), negatives.shape[1]), negatives.ravel(), coeff.ravel(), n
    )
    d_h += w_mat @ h + w_mat.T @ h
    enc_grads = encode_backward(state.online, cache_enc, d_h)
    proj_grads = [np.zeros_like(w_) for w_ in state.projector.weights]
    return loss, PretrainGrads(enc_grads, proj_grads)


def pretext_loss(state: TrainState, g: Graph, negatives: np.ndarray, cfg: PretrainConfig,
                 a_hat=None, want_grads: bool = False):
    if cfg.pretext == "graphacl":
        return graphacl_loss(state, g, negatives, cfg.negatives_use_projector, a_hat, want_grads)
    return smoothing_loss(state, g, negatives, a_hat, want_grads)


def init_state(g: Graph, cfg: PretrainConfig) -> TrainState:
    """Fresh TrainState; target starts as an exact copy of the online encoder."""
    online = init_params(g.n_features, cfg.hidden_dim, cfg.embed_dim, cfg.encoder_depth, cfg.seed)
    projector = init_projector(cfg.embed_dim, cfg.projector_depth, cfg.seed)
    return TrainState(online, online.copy(), projector, cfg.tau, cfg.ema_momentum, 0, cfg.seed)


def pretrain(g: Graph, cfg: PretrainConfig) -> tuple[TrainState, list[float]]:
    """Full-graph gradient descent on the chosen pretext.

    Per epoch: resample negatives, compute loss and gradients, momentum-SGD
    step on the online encoder and projector, then EMA-update the target.
    Returns the final state and the per-epoch loss trace. Deterministic
    given cfg.seed.
    """
    state = init_state(g, cfg)
    if cfg.epochs == 0:
        return state, []
    a_hat = normalize_adjacency(g)
    m = min(cfg.n_negatives, g.n_nodes - 1)
    if m < cfg.n_negatives:
        log.debug("pretrain: capping n_negatives at %d", m)
    vel_enc = [np.zeros_like(w) for w in state.online.weights]
    vel_proj = [np.zeros_like(w) for w in state.projector.weights]
    trace: list[float] = []
    for epoch in range(cfg.epochs):
        rng = np.random.default_rng([cfg.seed, 0x7E6, epoch])
        negatives = negative_matrix(g.n_nodes, m, rng)
        with np.errstate(over="ignore", invalid="ignore"):  # divergence handled below
            loss, grads = pretext_loss(state, g, negatives, cfg, a_hat, want_grads=True)
        if not np.isfinite(loss):
            raise DivergenceError(epoch)
        for w, v, dw in zip(state.online.weights, vel_enc, grads.encoder):
            v *= cfg.sgd_momentum
            v += dw
            w -= cfg.lr * v
        for w, v, dw in zip(state.projector.weights, vel_proj, grads.projector):
            v *= cfg.sgd_momentum
            v += dw
            w -= cfg.lr * v
        state.step += 1
        ema_update(state)
        trace.append(loss)
    return state, trace
