"""Graph data model, loaders, prompt-graph constructions and split samplers.

A Graph is an undirected, unweighted graph with a dense float feature matrix
and optional integer class labels. Edges are stored canonically as an (E, 2)
int64 array with ``i < j`` per row, lexicographically sorted and deduplicated;
self-loops are never stored (the encoder re-adds them during normalization).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ArgumentError, LoadError, MetricError, ParseError, ShapeError, SplitError, SamplingError

NEG_REJECTION_FACTOR = 100  # retry cap for non-edge rejection sampling


def canonical_edges(edges) -> np.ndarray:
    """Canonicalize an edge array: undirected, deduplicated, self-loops dropped.

    Accepts any (E, 2) integer array-like (either orientation per row) and
    returns rows with i < j, sorted lexicographically.
    """
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    if arr.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    arr = arr[arr[:, 0] != arr[:, 1]]
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    return np.unique(np.stack([lo, hi], axis=1), axis=0)


@dataclass
class Graph:
    """Undirected graph with node features and optional labels."""

    n_nodes: int
    edges: np.ndarray  # (E, 2) canonical
    features: np.ndarray  # (n_nodes, D) float64
    labels: np.ndarray | None = None  # (n_nodes,) int64 in [0, n_classes)
    n_classes: int | None = None

    def __post_init__(self):
        self.edges = canonical_edges(self.edges)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.n_classes is None:
                self.n_classes = int(self.labels.max()) + 1 if self.labels.size else 0
        check_graph(self)

    @property
    def n_edges(self) -> int:
        return int(self.edges.shape[0])

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    def adjacency(self) -> sp.csr_matrix:
        """Symmetric 0/1 adjacency as CSR, no self-loops."""
        n = self.n_nodes
        if self.n_edges == 0:
            return sp.csr_matrix((n, n), dtype=np.float64)
        i, j = self.edges[:, 0], self.edges[:, 1]
        data = np.ones(2 * len(i), dtype=np.float64)
        return sp.csr_matrix((data, (np.concatenate([i, j]), np.concatenate([j, i]))), shape=(n, n))

    def directed_pairs(self) -> tuple[np.ndarray, np.ndarray]:
        """Both orientations of every edge as (src, dst) arrays, sorted by src."""
        if self.n_edges == 0:
            e = np.empty(0, dtype=np.int64)
            return e, e.copy()
        src = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        order = np.lexsort((dst, src))
        return src[order], dst[order]

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n_nodes, dtype=np.int64)
        if self.n_edges:
            np.add.at(deg, self.edges[:, 0], 1)
            np.add.at(deg, self.edges[:, 1], 1)
        return deg

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.edges}

    def digest(self) -> str:
        """Stable content hash over structure, features and labels."""
        h = hashlib.sha256()
        h.update(str(self.n_nodes).encode())
        h.update(self.edges.tobytes())
        h.update(self.features.tobytes())
        if self.labels is not None:
            h.update(self.labels.tobytes())
            h.update(str(self.n_classes).encode())
        return h.hexdigest()


def check_graph(g: Graph) -> Graph:
    """Validate Graph invariants; raises ShapeError/ArgumentError on violation."""
    if g.features.ndim != 2 or g.features.shape[0] != g.n_nodes:
        raise ShapeError(
            f"feature matrix has {g.features.shape[0] if g.features.ndim == 2 else '?'} rows, "
            f"expected {g.n_nodes}"
        )
    if not np.all(np.isfinite(g.features)):
        raise ArgumentError("feature matrix contains non-finite entries")
    if g.n_edges:
        if g.edges.min() < 0 or g.edges.max() >= g.n_nodes:
            raise ShapeError("edge endpoint outside [0, n_nodes)")
    if g.labels is not None:
        if g.labels.shape != (g.n_nodes,):
            raise ShapeError("label vector length must equal n_nodes")
        if g.labels.size and (g.labels.min() < 0 or g.labels.max() >= (g.n_classes or 0)):
            raise ArgumentError("class id outside [0, n_classes)")
    return g


# ---------------------------------------------------------------------------
# edge_list_dir format: edges.tsv / features.csv / labels.txt
# ---------------------------------------------------------------------------

def load_graph(path, format: str = "edge_list_dir") -> Graph:
    """Load a Graph from an edge_list_dir directory.

    Layout: ``edges.tsv`` (one "src<TAB>dst" pair per line), ``features.csv``
    (row r = comma-separated features of node r) and optional ``labels.txt``
    (one class id per line). Edges are symmetrized, deduplicated and stripped
    of self-loops. Node count is taken from the feature matrix; an edge
    referencing a node beyond it is a shape error.
    """
    if format != "edge_list_dir":
        raise ArgumentError(f"unknown graph format: {format!r}")
    root = Path(path)
    edges_file = root / "edges.tsv"
    feats_file = root / "features.csv"
    labels_file = root / "labels.txt"
    if not root.is_dir():
        raise LoadError(f"dataset directory not found: {root}")
    if not edges_file.is_file():
        raise LoadError(f"missing file: {edges_file}")
    if not feats_file.is_file():
        raise LoadError(f"missing file: {feats_file}")

    pairs = []
    with edges_file.open() as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"{edges_file}:{lineno}: expected two columns, got {len(parts)}")
            try:
                pairs.append((int(parts[0]), int(parts[1])))
            except ValueError:
                raise ParseError(f"{edges_file}:{lineno}: non-integer node id {parts!r}") from None

    try:
        features = np.loadtxt(feats_file, delimiter=",", dtype=np.float64, ndmin=2)
    except ValueError as exc:
        raise ParseError(f"{feats_file}: {exc}") from None
    n_nodes = features.shape[0]

    edges = canonical_edges(np.array(pairs, dtype=np.int64).reshape(-1, 2))
    if len(edges) and edges.max() + 1 > n_nodes:
        raise ShapeError(
            f"features.csv has {n_nodes} rows but edges reference node {int(edges.max())}"
        )

    labels = None
    if labels_file.is_file():
        try:
            labels = np.loadtxt(labels_file, dtype=np.int64, ndmin=1)
        except ValueError as exc:
            raise ParseError(f"{labels_file}: {exc}") from None
        if labels.shape[0] != n_nodes:
            raise ShapeError(f"labels.txt has {labels.shape[0]} lines, expected {n_nodes}")

    return Graph(n_nodes=n_nodes, edges=edges, features=features, labels=labels)


def save_graph(g: Graph, path) -> Path:
    """Write a Graph to an edge_list_dir directory (inverse of load_graph)."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    with (root / "edges.tsv").open("w") as fh:
        for i, j in g.edges:
            fh.write(f"{i}\t{j}\n")
    # repr-precision floats so save/load round-trips exactly
    with (root / "features.csv").open("w") as fh:
        for row in g.features:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")
    if g.labels is not None:
        with (root / "labels.txt").open("w") as fh:
            for y in g.labels:
                fh.write(f"{y}\n")
    return root


# ---------------------------------------------------------------------------
# Prompt-graph constructions
# ---------------------------------------------------------------------------

def two_hop_graph(g: Graph, mode: str = "union") -> Graph:
    """Two-hop prompt graph.

    ``pure`` keeps only pairs (i, k), i != k, connected through some j;
    ``union`` (default) additionally retains the original one-hop edges.
    Features and labels are carried over untouched.
    """
    if mode not in ("union", "pure"):
        raise ArgumentError(f"two-hop mode must be 'union' or 'pure', got {mode!r}")
    a = self_free_boolean_square(g.adjacency())
    if mode == "union":
        a = ((a + g.adjacency()) > 0).astype(np.float64)
    coo = sp.triu(a, k=1).tocoo()
    edges = np.stack([coo.row, coo.col], axis=1) if coo.nnz else np.empty((0, 2), dtype=np.int64)
    return replace(g, edges=edges)


def self_free_boolean_square(adj: sp.csr_matrix) -> sp.csr_matrix:
    """Boolean square of a 0/1 adjacency with the diagonal zeroed."""
    a2 = (adj @ adj).tocsr()
    a2.setdiag(0)
    a2.eliminate_zeros()
    a2.data[:] = 1.0
    return a2


def identity_graph(g: Graph) -> Graph:
    """Prompt graph with no edges: under self-loop normalization each node sees only itself."""
    return replace(g, edges=np.empty((0, 2), dtype=np.int64))


# ---------------------------------------------------------------------------
# Split samplers
# ---------------------------------------------------------------------------

@dataclass
class SplitSpec:
    """Node-level split used for classification protocols."""

    train_nodes: np.ndarray
    val_nodes: np.ndarray
    test_nodes: np.ndarray
    seed: int

    def __post_init__(self):
        self.train_nodes = np.asarray(self.train_nodes, dtype=np.int64)
        self.val_nodes = np.asarray(self.val_nodes, dtype=np.int64)
        self.test_nodes = np.asarray(self.test_nodes, dtype=np.int64)


@dataclass
class EdgeSplit:
    """Edge-level split with sampled evaluation negatives."""

    train_edges: np.ndarray
    val_edges: np.ndarray
    test_edges: np.ndarray
    val_neg: np.ndarray
    test_neg: np.ndarray
    seed: int


def _require_labeled(g: Graph, what: str):
    if g.labels is None or not g.n_classes:
        raise SplitError(f"{what} requires a labeled graph")


def sample_k_shot(g: Graph, k: int, n_val_per_class: int, seed: int) -> SplitSpec:
    """Draw k train and n_val_per_class val nodes per class; the rest is test.

    Deterministic given seed. Raises SplitError naming the first class with
    fewer than k + n_val_per_class nodes.
    """
    _require_labeled(g, "sample_k_shot")
    rng = np.random.default_rng([int(seed), 0x5EED])
    train, val = [], []
    for c in range(g.n_classes):
        members = np.flatnonzero(g.labels == c)
        if len(members) < k + n_val_per_class:
            raise SplitError(
                f"class {c} has {len(members)} nodes, needs {k + n_val_per_class} "
                f"for a {k}-shot split with {n_val_per_class} validation nodes"
            )
        picked = rng.permutation(members)
        train.append(picked[:k])
        val.append(picked[k:k + n_val_per_class])
    train = np.sort(np.concatenate(train))
    val = np.sort(np.concatenate(val))
    held = np.zeros(g.n_nodes, dtype=bool)
    held[train] = True
    held[val] = True
    test = np.flatnonzero(~held)
    return SplitSpec(train, val, test, int(seed))


def sample_count_split(g: Graph, train_per_class: int, n_val: int, n_test: int, seed: int) -> SplitSpec:
    """Semi-supervised style split: fixed per-class train count, global val/test counts."""
    _require_labeled(g, "sample_count_split")
    rng = np.random.default_rng([int(seed), 0x5EED, 1])
    train = []
    for c in range(g.n_classes):
        members = np.flatnonzero(g.labels == c)
        if len(members) < train_per_class:
            raise SplitError(f"class {c} has {len(members)} nodes, needs {train_per_class}")
        train.append(rng.permutation(members)[:train_per_class])
    train = np.sort(np.concatenate(train))
    rest = np.setdiff1d(np.arange(g.n_nodes), train)
    if len(rest) < n_val + n_test:
        raise SplitError(f"{len(rest)} nodes left for val+test, need {n_val + n_test}")
    rest = rng.permutation(rest)
    return SplitSpec(train, np.sort(rest[:n_val]), np.sort(rest[n_val:n_val + n_test]), int(seed))


def split_edges(g: Graph, val_frac: float, test_frac: float, seed: int) -> EdgeSplit:
    """Partition undirected edges into train/val/test and sample eval negatives.

    Validation and test sets take floor(frac * E) edges each; negatives are
    drawn 1:1 by rejection sampling from verified non-edges (distinct,
    disjoint between val and test).
    """
    if val_frac < 0 or test_frac < 0 or val_frac + test_frac >= 1:
        raise ArgumentError("need 0 <= val_frac + test_frac < 1")
    rng = np.random.default_rng([int(seed), 0xED6E])
    n_edges = g.n_edges
    n_val = int(val_frac * n_edges)
    n_test = int(test_frac * n_edges)
    perm = rng.permutation(n_edges)
    val_e = g.edges[np.sort(perm[:n_val])]
    test_e = g.edges[np.sort(perm[n_val:n_val + n_test])]
    train_e = g.edges[np.sort(perm[n_val + n_test:])]
    negatives = sample_non_edges(g, n_val + n_test, rng)
    return EdgeSplit(train_e, val_e, test_e, negatives[:n_val], negatives[n_val:], int(seed))


def sample_non_edges(g: Graph, count: int, rng: np.random.Generator) -> np.ndarray:
    """Sample ``count`` distinct undirected non-edges by rejection sampling."""
    if count == 0:
        return np.empty((0, 2), dtype=np.int64)
    n = g.n_nodes
    max_pairs = n * (n - 1) // 2
    if max_pairs - g.n_edges < count:
        raise SamplingError(f"graph has only {max_pairs - g.n_edges} non-edges, need {count}")
    existing = g.edge_set()
    out: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set()
    budget = NEG_REJECTION_FACTOR * count
    while len(out) < count:
        if budget <= 0:
            raise SamplingError(f"exceeded retry cap sampling {count} non-edges")
        draw = min(budget, 2 * (count - len(out)) + 8)
        cand = rng.integers(0, n, size=(draw, 2))
        budget -= draw
        for a, b in cand:
            if a == b:
                continue
            pair = (int(min(a, b)), int(max(a, b)))
            if pair in existing or pair in seen:
                continue
            seen.add(pair)
            out.append(pair)
            if len(out) == count:
                break
    return np.array(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# Synthetic graphs and structure metrics
# ---------------------------------------------------------------------------

def generate_sbm(n: int, n_classes: int, p_in: float, p_out: float,
                 feature_noise: float = 0.0, seed: int = 0) -> Graph:
    """Balanced stochastic block model with one-hot class features plus noise.

    Node i belongs to class i * n_classes // n (classes are contiguous and
    balanced up to remainder). Each unordered pair is an edge with p_in
    (same class) or p_out (different class). Features are the one-hot class
    indicator plus N(0, feature_noise^2) per coordinate.
    """
    if n < n_classes:
        raise ArgumentError(f"n={n} smaller than n_classes={n_classes}")
    if not (0 <= p_in <= 1 and 0 <= p_out <= 1):
        raise ArgumentError("edge probabilities must lie in [0, 1]")
    if feature_noise < 0:
        raise ArgumentError("feature_noise must be >= 0")
    rng = np.random.default_rng([int(seed), 0x5B3])
    labels = (np.arange(n) * n_classes) // n
    same = labels[:, None] == labels[None, :]
    probs = np.where(same, p_in, p_out)
    draw = rng.random((n, n))
    mask = np.triu(draw < probs, k=1)
    i, j = np.nonzero(mask)
    edges = np.stack([i, j], axis=1)
    features = np.eye(n_classes, dtype=np.float64)[labels]
    if feature_noise > 0:
        features = features + feature_noise * rng.standard_normal((n, n_classes))
    return Graph(n_nodes=n, edges=edges, features=features, labels=labels, n_classes=n_classes)


def homophily_ratio(g: Graph) -> float:
    """Fraction of undirected edges whose endpoints share a label."""
    if g.labels is None:
        raise MetricError("homophily ratio requires labels")
    if g.n_edges == 0:
        raise MetricError("homophily ratio undefined on an edgeless graph")
    same = g.labels[g.edges[:, 0]] == g.labels[g.edges[:, 1]]
    return float(np.mean(same))
