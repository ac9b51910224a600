"""Encoder, projector and training-state machinery.

The encoder is a bias-free GCN: H = A_hat @ relu(A_hat @ X @ W1) @ W2 for the
default two layers, where A_hat is the symmetrically normalized adjacency
with self-loops. The projector is a square linear map (or a two-layer MLP of
the same overall shape) applied row-wise to embeddings. Gradients throughout
the package are hand-derived; grad_check verifies them against central finite
differences.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ArgumentError, CheckpointError, ShapeError
from .graphs import Graph

CHECKPOINT_HEADER = "selfpro-ckpt-v1"
ADAPTER_HEADER = "selfpro-adapter-v1"


@dataclass
class EncoderParams:
    """Stacked weight matrices of the GCN encoder."""

    weights: list[np.ndarray]
    activation: str = "relu"

    @property
    def depth(self) -> int:
        return len(self.weights)

    def dims(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def n_params(self) -> int:
        return int(sum(w.size for w in self.weights))

    def copy(self) -> "EncoderParams":
        return EncoderParams([w.copy() for w in self.weights], self.activation)


@dataclass
class ProjectorParams:
    """Square map on embeddings; depth 1 (linear) or 2 (relu MLP, hidden = dim)."""

    weights: list[np.ndarray]

    @property
    def depth(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.weights[0].shape[0]

    def n_params(self) -> int:
        return int(sum(w.size for w in self.weights))

    def copy(self) -> "ProjectorParams":
        return ProjectorParams([w.copy() for w in self.weights])

    @staticmethod
    def identity(dim: int) -> "ProjectorParams":
        return ProjectorParams([np.eye(dim)])


@dataclass
class TrainState:
    """Everything the pretraining loop mutates."""

    online: EncoderParams
    target: EncoderParams
    projector: ProjectorParams
    temperature: float
    ema_momentum: float
    step: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ArgumentError("temperature must be positive")
        if not (0.0 <= self.ema_momentum <= 1.0):
            raise ArgumentError("ema_momentum must lie in [0, 1]")
        if [w.shape for w in self.online.weights] != [w.shape for w in self.target.weights]:
            raise ShapeError("online and target encoders must have identical shapes")

    @property
    def embed_dim(self) -> int:
        return self.online.weights[-1].shape[1]

    def copy(self) -> "TrainState":
        return TrainState(self.online.copy(), self.target.copy(), self.projector.copy(),
                          self.temperature, self.ema_momentum, self.step, self.seed)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def init_params(d_in: int, d_hidden: int, d_out: int, depth: int, seed: int) -> EncoderParams:
    """Glorot-uniform encoder weights, deterministic given seed."""
    if min(d_in, d_hidden, d_out) <= 0 or depth < 1:
        raise ArgumentError("dimensions and depth must be positive")
    rng = np.random.default_rng([int(seed), 0xE4C])
    dims = [d_in] + [d_hidden] * (depth - 1) + [d_out]
    weights = [_glorot(rng, dims[i], dims[i + 1]) for i in range(depth)]
    return EncoderParams(weights)


def init_projector(dim: int, depth: int, seed: int) -> ProjectorParams:
    if dim <= 0 or depth not in (1, 2):
        raise ArgumentError("projector dim must be positive and depth 1 or 2")
    rng = np.random.default_rng([int(seed), 0x960])
    return ProjectorParams([_glorot(rng, dim, dim) for _ in range(depth)])


def normalize_adjacency(g: Graph) -> sp.csr_matrix:
    """Symmetric GCN propagation operator D^{-1/2} (A + I) D^{-1/2}."""
    a = g.adjacency() + sp.eye(g.n_nodes, format="csr")
    deg = np.asarray(a.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(deg)
    d = sp.diags(inv_sqrt)
    return (d @ a @ d).tocsr()


def _activate(x: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(x, 0.0)
    raise ArgumentError(f"unknown activation {kind!r}")


def encode(params: EncoderParams, g: Graph, a_hat: sp.csr_matrix | None = None) -> np.ndarray:
    """Node representations; rows follow node order."""
    h, _ = encode_with_cache(params, g, a_hat)
    return h


def encode_with_cache(params: EncoderParams, g: Graph, a_hat: sp.csr_matrix | None = None):
    """Forward pass keeping per-layer inputs and pre-activations for backprop."""
    if a_hat is None:
        a_hat = normalize_adjacency(g)
    if g.features.shape[1] != params.weights[0].shape[0]:
        raise ShapeError(
            f"feature dim {g.features.shape[1]} != encoder input dim {params.weights[0].shape[0]}"
        )
    h = g.features
    inputs, preacts = [], []
    last = params.depth - 1
    for idx, w in enumerate(params.weights):
        propagated = a_hat @ h
        inputs.append(propagated)  # input to the linear map of layer idx
        z = propagated @ w
        if idx != last:
            preacts.append(z)
            h = _activate(z, params.activation)
        else:
            preacts.append(None)
            h = z
    return h, {"a_hat": a_hat, "inputs": inputs, "preacts": preacts}


def encode_backward(params: EncoderParams, cache, d_out: np.ndarray) -> list[np.ndarray]:
    """Gradient of a scalar loss w.r.t. encoder weights given dL/dH."""
    a_hat = cache["a_hat"]
    grads: list[np.ndarray | None] = [None] * params.depth
    d = d_out
    for idx in range(params.depth - 1, -1, -1):
        grads[idx] = cache["inputs"][idx].T @ d
        if idx > 0:
            d_prop = d @ params.weights[idx].T  # grad w.r.t. propagated input
            d_h = a_hat.T @ d_prop  # a_hat symmetric, kept explicit
            d = d_h * (cache["preacts"][idx - 1] > 0)
    return grads  # type: ignore[return-value]


def project(p: ProjectorParams, h: np.ndarray) -> np.ndarray:
    z, _ = project_with_cache(p, h)
    return z


def project_with_cache(p: ProjectorParams, h: np.ndarray):
    if h.shape[-1] != p.dim:
        raise ShapeError(f"embedding dim {h.shape[-1]} != projector dim {p.dim}")
    if p.depth == 1:
        return h @ p.weights[0], {"h": h}
    pre = h @ p.weights[0]
    hidden = np.maximum(pre, 0.0)
    return hidden @ p.weights[1], {"h": h, "pre": pre, "hidden": hidden}


def project_backward(p: ProjectorParams, cache, d_out: np.ndarray):
    """Returns (weight grads, dL/dH) for the projector."""
    if p.depth == 1:
        return [cache["h"].T @ d_out], d_out @ p.weights[0].T
    d_hidden = d_out @ p.weights[1].T
    d_pre = d_hidden * (cache["pre"] > 0)
    grads = [cache["h"].T @ d_pre, cache["hidden"].T @ d_out]
    return grads, d_pre @ p.weights[0].T


def ema_update(state: TrainState) -> TrainState:
    """target <- m * target + (1 - m) * online; online and projector untouched."""
    m = state.ema_momentum
    state.target = EncoderParams(
        [m * t + (1.0 - m) * o for t, o in zip(state.target.weights, state.online.weights)],
        state.target.activation,
    )
    return state


def params_digest(*param_groups) -> str:
    """Byte-level digest over one or more EncoderParams/ProjectorParams."""
    h = hashlib.sha256()
    for group in param_groups:
        for w in group.weights:
            h.update(str(w.shape).encode())
            h.update(np.ascontiguousarray(w).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Finite-difference gradient verification
# ---------------------------------------------------------------------------

def grad_check(loss_fn, params: list[np.ndarray], epsilon: float = 1e-5,
               n_coords: int = 100, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``loss_fn(params) -> (loss, grads)`` where grads matches the params list.
    A random subset of n_coords coordinates is probed. Relative error uses
    max(|analytic|, |numeric|, 1e-6) as denominator so near-zero gradients
    are compared absolutely.
    """
    loss, grads = loss_fn(params)
    if not np.isfinite(loss):
        raise ArgumentError("loss is non-finite at the evaluation point")
    sizes = [p.size for p in params]
    total = int(np.sum(sizes))
    rng = np.random.default_rng([int(seed), 0x6C])
    coords = rng.choice(total, size=min(n_coords, total), replace=False)
    offsets = np.cumsum([0] + sizes)
    worst = 0.0
    for flat in coords:
        gi = int(np.searchsorted(offsets, flat, side="right") - 1)
        local = int(flat - offsets[gi])
        probe = [p.copy() for p in params]
        x = probe[gi].flat[local]
        step = epsilon * max(1.0, abs(x))
        probe[gi].flat[local] = x + step
        up, _ = loss_fn(probe)
        probe[gi].flat[local] = x - step
        down, _ = loss_fn(probe)
        numeric = (up - down) / (2.0 * step)
        analytic = grads[gi].flat[local]
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)
        worst = max(worst, float(err))
    return worst


# ---------------------------------------------------------------------------
# Checkpoint archive
# ---------------------------------------------------------------------------

def save_checkpoint(state: TrainState, path, config_hash: str = "") -> Path:
    """Write the full TrainState as a versioned npz archive (atomic)."""
    path = Path(path)
    meta = {
        "header": CHECKPOINT_HEADER,
        "temperature": state.temperature,
        "ema_momentum": state.ema_momentum,
        "step": state.step,
        "seed": state.seed,
        "config_hash": config_hash,
        "activation": state.online.activation,
        "n_online": state.online.depth,
        "n_projector": state.projector.depth,
    }
    arrays = {f"online_{i}": w for i, w in enumerate(state.online.weights)}
    arrays |= {f"target_{i}": w for i, w in enumerate(state.target.weights)}
    arrays |= {f"projector_{i}": w for i, w in enumerate(state.projector.weights)}
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        np.savez(fh, meta=np.str_(json.dumps(meta, sort_keys=True)), **arrays)
    os.replace(tmp, path)
    return path


def load_checkpoint(path) -> tuple[TrainState, dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        if "meta" not in archive:
            raise CheckpointError(f"{path}: not a selfpro checkpoint")
        meta = json.loads(str(archive["meta"]))
        if meta.get("header") != CHECKPOINT_HEADER:
            raise CheckpointError(f"{path}: unsupported header {meta.get('header')!r}")
        online = EncoderParams([archive[f"online_{i}"] for i in range(meta["n_online"])],
                               meta["activation"])
        target = EncoderParams([archive[f"target_{i}"] for i in range(meta["n_online"])],
                               meta["activation"])
        projector = ProjectorParams([archive[f"projector_{i}"] for i in range(meta["n_projector"])])
    state = TrainState(online, target, projector, meta["temperature"],
                       meta["ema_momentum"], meta["step"], meta["seed"])
    return state, meta


def save_adapter(projector: ProjectorParams, path, prototypes: np.ndarray | None = None,
                 config_hash: str = "") -> Path:
    """Write a tuned projector (and optional prototypes) as a versioned archive."""
    path = Path(path)
    meta = {
        "header": ADAPTER_HEADER,
        "config_hash": config_hash,
        "n_projector": projector.depth,
        "has_prototypes": prototypes is not None,
    }
    arrays = {f"projector_{i}": w for i, w in enumerate(projector.weights)}
    if prototypes is not None:
        arrays["prototypes"] = prototypes
    tmp = path.with_name(path.name + ".tmp")
    with tmp.open("wb") as fh:
        np.savez(fh, meta=np.str_(json.dumps(meta, sort_keys=True)), **arrays)
    os.replace(tmp, path)
    return path


def load_adapter(path) -> tuple[ProjectorParams, np.ndarray | None, dict]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"adapter not found: {path}")
    with np.load(path, allow_pickle=False) as archive:
        meta = json.loads(str(archive["meta"]))
        if meta.get("header") != ADAPTER_HEADER:
            raise CheckpointError(f"{path}: unsupported header {meta.get('header')!r}")
        projector = ProjectorParams([archive[f"projector_{i}"] for i in range(meta["n_projector"])])
        prototypes = archive["prototypes"] if meta["has_prototypes"] else None
    return projector, prototypes, meta
