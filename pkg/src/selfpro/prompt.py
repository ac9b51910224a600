"""Unified similarity task template and self-prompt tuning.

Downstream tasks are cast as pairwise token similarity. Node tokens come
from the frozen pretrained encoder applied to the original graph
(contextual), to its two-hop prompt graph (structural) or to the edgeless
identity prompt graph (semantic); structural/semantic tokens are mixed into
the contextual ones with a fixed weight mu or a per-node self weight. Only
the pretrained projector is tuned downstream; encoder parameters are never
touched, and no new parameters are introduced.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .errors import ArgumentError, PrototypeError, ShapeError, SimilarityError, SplitError, TuningError
from .graphs import EdgeSplit, Graph, SplitSpec, identity_graph, two_hop_graph
from .model import ProjectorParams, TrainState, project, project_backward, project_with_cache

log = logging.getLogger("selfpro")

PROMPT_MODES = ("none", "structural", "semantic")
INJECTIONS = ("fixed", "self_weight")
SIM_KINDS = ("dot", "cosine")


@dataclass
class PromptConfig:
    mode: str = "none"
    injection: str = "fixed"
    mu: float = 0.5
    sim_kind: str = "dot"
    tau_tune: float = 0.5
    tune_lr: float = 0.01
    tune_epochs: int = 200
    two_hop_mode: str = "union"
    patience: int = 50
    tune_momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.mode not in PROMPT_MODES:
            raise ArgumentError(f"mode must be one of {PROMPT_MODES}, got {self.mode!r}")
        if self.injection not in INJECTIONS:
            raise ArgumentError(f"injection must be one of {INJECTIONS}, got {self.injection!r}")
        if not (0.0 <= self.mu <= 1.0):
            raise ArgumentError("mu must lie in [0, 1]")
        if self.sim_kind not in SIM_KINDS:
            raise ArgumentError(f"sim_kind must be one of {SIM_KINDS}, got {self.sim_kind!r}")
        if self.tau_tune <= 0:
            raise ArgumentError("tau_tune must be positive")


@dataclass
class TokenSet:
    tokens: np.ndarray  # (n_nodes, d)
    provenance: str  # contextual | semantic | structural | injected
    weights: np.ndarray | None = None  # per-node mixing weight when injected


@dataclass
class PrototypeSet:
    tokens: np.ndarray  # (C, d)
    class_ids: np.ndarray  # (C,)


def similarity(a: np.ndarray, b: np.ndarray, kind: str = "dot") -> float:
    """Pairwise token similarity: plain dot product or cosine."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"similarity on mismatched shapes {a.shape} vs {b.shape}")
    if kind == "dot":
        return float(a @ b)
    if kind == "cosine":
        na, nb = np.linalg.norm(a), np.linalg.norm(b)
        if na == 0.0 or nb == 0.0:
            raise SimilarityError("cosine similarity undefined for a zero vector")
        return float((a @ b) / (na * nb))
    raise ArgumentError(f"sim kind must be one of {SIM_KINDS}, got {kind!r}")


def contextual_tokens(state: TrainState, g: Graph) -> TokenSet:
    """Frozen online-encoder outputs on the original graph."""
    from .model import encode

    return TokenSet(encode(state.online, g), "contextual")


def semantic_tokens(state: TrainState, g: Graph) -> TokenSet:
    """Encoder outputs with the adjacency replaced by identity: features only."""
    from .model import encode

    return TokenSet(encode(state.online, identity_graph(g)), "semantic")


def structural_tokens(state: TrainState, g: Graph, two_hop_mode: str = "union") -> TokenSet:
    """Encoder outputs on the two-hop prompt graph."""
    from .model import encode

    return TokenSet(encode(state.online, two_hop_graph(g, two_hop_mode)), "structural")


def inject(h: TokenSet, s: TokenSet, cfg: PromptConfig) -> TokenSet:
    """Mix prompt tokens into contextual tokens.

    fixed:       t = mu * s + (1 - mu) * h
    self_weight: t = w * s + (1 - w) * h with w = (1 + cosine(h, s)) / 2,
                 falling back to w = 0.5 for zero rows.
    """
    if h.tokens.shape != s.tokens.shape:
        raise ShapeError("inject requires token sets of identical shape")
    if cfg.injection == "fixed":
        w = np.full(h.tokens.shape[0], cfg.mu)
    else:
        nh = np.linalg.norm(h.tokens, axis=1)
        ns = np.linalg.norm(s.tokens, axis=1)
        zero = (nh == 0.0) | (ns == 0.0)
        if zero.any():
            log.warning("inject: %d zero-norm rows, using self weight 0.5", int(zero.sum()))
        denom_h = np.where(nh == 0.0, 1.0, nh)
        denom_s = np.where(ns == 0.0, 1.0, ns)
        cos = np.sum(h.tokens * s.tokens, axis=1) / (denom_h * denom_s)
        w = np.where(zero, 0.5, (1.0 + cos) / 2.0)
    mixed = w[:, None] * s.tokens + (1.0 - w[:, None]) * h.tokens
    return TokenSet(mixed, "injected", w)


def build_tokens(state: TrainState, g: Graph, cfg: PromptConfig) -> TokenSet:
    """Node tokens for tuning per the configured prompt mode."""
    h = contextual_tokens(state, g)
    if cfg.mode == "none":
        return h
    if cfg.mode == "structural":
        prompt = structural_tokens(state, g, cfg.two_hop_mode)
    else:
        prompt = semantic_tokens(state, g)
    return inject(h, prompt, cfg)


def init_prototypes(tokens: TokenSet, split: SplitSpec, labels,
                    n_classes: int | None = None) -> PrototypeSet:
    """Per-class mean of labeled train-node tokens.

    ``n_classes`` defaults to the largest train label + 1; pass the graph's
    class count when train support might not cover every class.
    """
    train = np.asarray(split.train_nodes, dtype=np.int64)
    if train.size == 0:
        raise SplitError("prototype initialization requires a nonempty train set")
    y = np.asarray(labels[train], dtype=np.int64)
    if n_classes is None:
        n_classes = int(y.max()) + 1
    protos = np.zeros((n_classes, tokens.tokens.shape[1]))
    for c in range(n_classes):
        members = train[y == c]
        if members.size == 0:
            raise PrototypeError(f"class {c} has no labeled train node")
        protos[c] = tokens.tokens[members].mean(axis=0)
    return PrototypeSet(protos, np.arange(n_classes))


# ---------------------------------------------------------------------------
# Classification head: similarity to projected prototypes
# ---------------------------------------------------------------------------

def _rows_normalized(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(norms == 0.0, 1.0, norms)  # zero rows stay zero


def class_scores(projector: ProjectorParams, prototypes: PrototypeSet,
                 tokens: TokenSet, ids, sim_kind: str = "dot") -> np.ndarray:
    """(len(ids), C) similarity matrix between projected tokens and prototypes."""
    ids = np.asarray(ids, dtype=np.int64)
    t = project(projector, tokens.tokens[ids])
    p = project(projector, prototypes.tokens)
    if sim_kind == "cosine":
        t = _rows_normalized(t)
        p = _rows_normalized(p)
    return t @ p.T


def predict_classes(projector: ProjectorParams, prototypes: PrototypeSet,
                    tokens: TokenSet, ids, sim_kind: str = "dot") -> np.ndarray:
    """Most-similar prototype per node; ties resolve to the lowest class id."""
    return np.argmax(class_scores(projector, prototypes, tokens, ids, sim_kind), axis=1)


def predict_class(projector: ProjectorParams, prototypes: PrototypeSet,
                  tokens: TokenSet, v: int, sim_kind: str = "dot") -> int:
    return int(predict_classes(projector, prototypes, tokens, [int(v)], sim_kind)[0])


# ---------------------------------------------------------------------------
# Node-classification tuning (softmax over prototype similarities)
# ---------------------------------------------------------------------------

def node_classification_loss(projector: ProjectorParams, train_tokens: np.ndarray,
                             train_labels: np.ndarray, proto_tokens: np.ndarray,
                             tau: float, want_grads: bool = False):
    """Summed cross-entropy of projected-token / projected-prototype similarities."""
    k = train_tokens.shape[0]
    stacked = np.vstack([train_tokens, proto_tokens])
    out, cache = project_with_cache(projector, stacked)
    t_p, p_p = out[:k], out[k:]
    scores = (t_p @ p_p.T) / tau
    mx = scores.max(axis=1, keepdims=True)
    lse = mx[:, 0] + np.log(np.exp(scores - mx).sum(axis=1))
    loss = float(np.sum(lse - scores[np.arange(k), train_labels]))
    if not want_grads:
        return loss
    d_scores = np.exp(scores - lse[:, None])
    d_scores[np.arange(k), train_labels] -= 1.0
    d_t = (d_scores @ p_p) / tau
    d_p = (d_scores.T @ t_p) / tau
    grads, _ = project_backward(projector, cache, np.vstack([d_t, d_p]))
    return loss, grads


@dataclass
class TunedNodeModel:
    projector: ProjectorParams
    prototypes: PrototypeSet
    tokens: TokenSet  # tokens the model was tuned on, reused for prediction
    trace: list[float]
    best_epoch: int  # number of gradient steps behind the selected projector


def tune_node_classification(state: TrainState, g: Graph, split: SplitSpec,
                             cfg: PromptConfig, labels=None) -> TunedNodeModel:
    """Gradient-descend the classification objective over the projector only.

    Tokens and prototypes are built once from the frozen encoder; the
    projector starts from its pretrained weights. When validation nodes are
    present the snapshot with the best validation accuracy is returned
    (earliest on ties, patience-limited); otherwise the final one.
    """
    labels = g.labels if labels is None else labels
    if labels is None:
        raise SplitError("node classification tuning requires labels")
    tokens = build_tokens(state, g, cfg)
    prototypes = init_prototypes(tokens, split, labels, g.n_classes)
    train = np.asarray(split.train_nodes, dtype=np.int64)
    y_train = np.asarray(labels[train], dtype=np.int64)
    t_train = tokens.tokens[train]

    phi = state.projector.copy()  # adapter reuse: never re-randomized
    val = np.asarray(split.val_nodes, dtype=np.int64)
    y_val = np.asarray(labels[val], dtype=np.int64) if val.size else None

    def val_accuracy(p):
        pred = predict_classes(p, prototypes, tokens, val, cfg.sim_kind)
        return float(np.mean(pred == y_val))

    use_val = val.size > 0
    best_phi, best_acc, best_epoch = phi.copy(), (val_accuracy(phi) if use_val else -1.0), 0
    vel = [np.zeros_like(w) for w in phi.weights]
    trace: list[float] = []
    for epoch in range(cfg.tune_epochs):
        loss, grads = node_classification_loss(
            phi, t_train, y_train, prototypes.tokens, cfg.tau_tune, want_grads=True)
        if not np.isfinite(loss):
            raise TuningError(f"non-finite tuning loss at epoch {epoch}")
        trace.append(loss)
        for w, v, dw in zip(phi.weights, vel, grads):
            v *= cfg.tune_momentum
            v += dw
            w -= cfg.tune_lr * v
        if use_val:
            acc = val_accuracy(phi)
            if acc > best_acc:
                best_phi, best_acc, best_epoch = phi.copy(), acc, epoch + 1
            elif (epoch + 1) - best_epoch > cfg.patience:
                break
    final = best_phi if use_val else phi
    final_epoch = best_epoch if use_val else len(trace)
    return TunedNodeModel(final, prototypes, tokens, trace, final_epoch)


# ---------------------------------------------------------------------------
# Link-prediction tuning (triplet softmax) and scoring
# ---------------------------------------------------------------------------

def link_prediction_loss(projector: ProjectorParams, tokens: np.ndarray,
                         triplets: np.ndarray, tau: float, want_grads: bool = False):
    """Summed two-way softmax loss over (anchor, positive, negative) triplets."""
    out, cache = project_with_cache(projector, tokens)
    v, a, b = triplets[:, 0], triplets[:, 1], triplets[:, 2]
    s_a = np.sum(out[v] * out[a], axis=1) / tau
    s_b = np.sum(out[v] * out[b], axis=1) / tau
    loss = float(np.sum(np.logaddexp(s_a, s_b) - s_a))
    if not want_grads:
        return loss
    p_b = expit(s_b - s_a)  # softmax weight on the negative
    d_out = np.zeros_like(out)
    np.add.at(d_out, v, (-p_b[:, None] * out[a] + p_b[:, None] * out[b]) / tau)
    np.add.at(d_out, a, -p_b[:, None] * out[v] / tau)
    np.add.at(d_out, b, p_b[:, None] * out[v] / tau)
    grads, _ = project_backward(projector, cache, d_out)
    return loss, grads


def score_links(projector: ProjectorParams, tokens: TokenSet, pairs) -> np.ndarray:
    """Dot-product decoder on projected tokens; symmetric in each pair."""
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    ids = np.unique(pairs)
    projected = project(projector, tokens.tokens[ids])
    lookup = {int(node): row for node, row in zip(ids, projected)}
    return np.array([float(lookup[int(u)] @ lookup[int(v)]) for u, v in pairs])


def score_link(projector: ProjectorParams, tokens: TokenSet, u: int, v: int) -> float:
    return float(score_links(projector, tokens, [(u, v)])[0])


def _sample_triplets(neighbors: list[np.ndarray], neighbor_mask, n: int,
                     rng: np.random.Generator) -> np.ndarray:
    """One (v, positive, negative) triplet per node that has any neighbor."""
    rows = []
    for v in range(n):
        nbrs = neighbors[v]
        if nbrs.size == 0:
            continue
        a = int(nbrs[rng.integers(nbrs.size)])
        b = int(rng.integers(n))
        tries = 0
        while b == v or neighbor_mask(v, b):
            b = int(rng.integers(n))
            tries += 1
            if tries > 100 * n:
                raise TuningError(f"could not sample a non-neighbor for node {v}")
        rows.append((v, a, b))
    return np.array(rows, dtype=np.int64)


@dataclass
class TunedLinkModel:
    projector: ProjectorParams
    tokens: TokenSet  # tokens on the training graph, reused for scoring
    trace: list[float]
    best_epoch: int


def tune_link_prediction(state: TrainState, g: Graph, edge_split: EdgeSplit,
                         cfg: PromptConfig) -> TunedLinkModel:
    """Tune the projector on training edges with per-epoch triplet resampling.

    Tokens are built on the graph restricted to training edges so held-out
    edges never influence representations. Nodes without a training-edge
    neighbor are skipped (logged). When validation edges exist, the snapshot
    with the best validation AUC is kept (patience-limited).
    """
    from .harness import auc  # local import to avoid a module cycle

    g_train = replace(g, edges=edge_split.train_edges)
    tokens = build_tokens(state, g_train, cfg)
    n = g.n_nodes
    adj = g_train.adjacency()
    neighbors = [adj.indices[adj.indptr[v]:adj.indptr[v + 1]] for v in range(n)]
    skipped = sum(1 for nb in neighbors if nb.size == 0)
    if skipped:
        log.info("link tuning: skipping %d nodes without train-edge neighbors", skipped)
    if skipped == n:
        raise TuningError("no training edges to tune on")
    if n <= 4096:
        dense = adj.toarray().astype(bool)
        neighbor_mask = lambda u, w: dense[u, w]
    else:
        sets = [set(map(int, nb)) for nb in neighbors]
        neighbor_mask = lambda u, w: w in sets[u]

    use_val = edge_split.val_edges.size > 0 and edge_split.val_neg.size > 0

    def val_auc(p):
        pos = score_links(p, tokens, edge_split.val_edges)
        neg = score_links(p, tokens, edge_split.val_neg)
        return auc(np.concatenate([pos, neg]),
                   np.concatenate([np.ones(len(pos)), np.zeros(len(neg))]))

    phi = state.projector.copy()
    best_phi, best_metric, best_epoch = phi.copy(), (val_auc(phi) if use_val else -1.0), 0
    vel = [np.zeros_like(w) for w in phi.weights]
    trace: list[float] = []
    for epoch in range(cfg.tune_epochs):
        rng = np.random.default_rng([cfg.seed, 0x117, epoch])
        triplets = _sample_triplets(neighbors, neighbor_mask, n, rng)
        loss, grads = link_prediction_loss(phi, tokens.tokens, triplets, cfg.tau_tune,
                                           want_grads=True)
        if not np.isfinite(loss):
            raise TuningError(f"non-finite tuning loss at epoch {epoch}")
        trace.append(loss)
        for w, v, dw in zip(phi.weights, vel, grads):
            v *= cfg.tune_momentum
            v += dw
            w -= cfg.tune_lr * v
        if use_val:
            metric = val_auc(phi)
            if metric > best_metric:
                best_phi, best_metric, best_epoch = phi.copy(), metric, epoch + 1
            elif (epoch + 1) - best_epoch > cfg.patience:
                break
    final = best_phi if use_val else phi
    final_epoch = best_epoch if use_val else len(trace)
    return TunedLinkModel(final, tokens, trace, final_epoch)
