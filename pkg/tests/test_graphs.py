import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from selfpro.errors import ArgumentError, LoadError, MetricError, ParseError, SamplingError, ShapeError, SplitError
from selfpro.graphs import (
    Graph,
    canonical_edges,
    generate_sbm,
    homophily_ratio,
    identity_graph,
    load_graph,
    sample_count_split,
    sample_k_shot,
    sample_non_edges,
    save_graph,
    split_edges,
    two_hop_graph,
)

from conftest import random_graph


def make_dir(tmp_path, edges="0\t1\n", features="1.0,0.0\n0.0,1.0\n", labels=None):
    (tmp_path / "edges.tsv").write_text(edges)
    (tmp_path / "features.csv").write_text(features)
    if labels is not None:
        (tmp_path / "labels.txt").write_text(labels)
    return tmp_path


class TestLoadGraph:
    def test_smallest_graph(self, tmp_path):
        g = load_graph(make_dir(tmp_path))
        assert g.n_nodes == 2
        assert g.edge_set() == {(0, 1)}

    def test_symmetrize_and_dedup(self, tmp_path):
        g = load_graph(make_dir(tmp_path, edges="0\t1\n1\t0\n0\t1\n"))
        assert g.n_edges == 1

    def test_self_loop_dropped(self, tmp_path):
        g = load_graph(make_dir(tmp_path, edges="0\t1\n1\t1\n"))
        assert g.edge_set() == {(0, 1)}

    def test_missing_files(self, tmp_path):
        with pytest.raises(LoadError):
            load_graph(tmp_path / "nope")
        (tmp_path / "edges.tsv").write_text("0\t1\n")
        with pytest.raises(LoadError):
            load_graph(tmp_path)

    def test_non_integer_id(self, tmp_path):
        with pytest.raises(ParseError):
            load_graph(make_dir(tmp_path, edges="a\t1\n"))

    def test_feature_rows_too_few(self, tmp_path):
        with pytest.raises(ShapeError):
            load_graph(make_dir(tmp_path, edges="0\t5\n"))

    def test_labels(self, tmp_path):
        g = load_graph(make_dir(tmp_path, labels="0\n1\n"))
        assert g.n_classes == 2
        assert list(g.labels) == [0, 1]

    def test_label_count_mismatch(self, tmp_path):
        with pytest.raises(ShapeError):
            load_graph(make_dir(tmp_path, labels="0\n"))

    def test_round_trip(self, tmp_path):
        g = generate_sbm(30, 3, 0.4, 0.1, feature_noise=0.25, seed=5)
        g2 = load_graph(save_graph(g, tmp_path / "out"))
        assert g2.n_nodes == g.n_nodes
        assert np.array_equal(g2.edges, g.edges)
        assert np.array_equal(g2.features, g.features)
        assert np.array_equal(g2.labels, g.labels)
        assert g2.digest() == g.digest()


def path_graph(n=3):
    return Graph(n_nodes=n, edges=np.array([[i, i + 1] for i in range(n - 1)]),
                 features=np.eye(n))


def dense_two_hop_oracle(g):
    """Zero-diagonal boolean square of the adjacency, as dense arithmetic."""
    a = g.adjacency().toarray() > 0
    a2 = (a.astype(int) @ a.astype(int)) > 0
    np.fill_diagonal(a2, False)
    return a2


class TestTwoHop:
    def test_path_pure(self):
        assert two_hop_graph(path_graph(), "pure").edge_set() == {(0, 2)}

    def test_path_union(self):
        assert two_hop_graph(path_graph(), "union").edge_set() == {(0, 1), (1, 2), (0, 2)}

    def test_pure_matches_boolean_square_oracle(self):
        for seed in range(12):
            g = random_graph(50, 0.08, seed)
            got = two_hop_graph(g, "pure").adjacency().toarray() > 0
            assert np.array_equal(got, dense_two_hop_oracle(g))

    def test_union_contains_original(self):
        g = random_graph(30, 0.1, 4)
        assert g.edge_set() <= two_hop_graph(g, "union").edge_set()

    def test_features_labels_untouched(self, sbm_graph):
        for mode in ("pure", "union"):
            out = two_hop_graph(sbm_graph, mode)
            assert out.features is sbm_graph.features
            assert np.array_equal(out.labels, sbm_graph.labels)

    def test_empty_graph(self):
        g = Graph(n_nodes=3, edges=np.empty((0, 2), dtype=np.int64), features=np.eye(3))
        assert two_hop_graph(g, "union").n_edges == 0

    def test_bad_mode(self):
        with pytest.raises(ArgumentError):
            two_hop_graph(path_graph(), "bogus")

    @settings(max_examples=40, deadline=None)
    @given(st.integers(2, 10), st.data())
    def test_pure_oracle_property(self, n, data):
        pairs = data.draw(st.lists(
            st.tuples(st.integers(0, n - 1), st.integers(0, n - 1)), max_size=20))
        g = Graph(n_nodes=n, edges=np.array(pairs, dtype=np.int64).reshape(-1, 2),
                  features=np.zeros((n, 1)))
        got = two_hop_graph(g, "pure").adjacency().toarray() > 0
        assert np.array_equal(got, dense_two_hop_oracle(g))


class TestIdentityGraph:
    def test_edge_set_empty(self, sbm_graph):
        out = identity_graph(sbm_graph)
        assert out.n_edges == 0
        assert out.n_nodes == sbm_graph.n_nodes
        assert out.features is sbm_graph.features


class TestSampleKShot:
    def test_counts(self, sbm_graph):
        split = sample_k_shot(sbm_graph, 2, 3, seed=0)
        assert len(split.train_nodes) == 2 * sbm_graph.n_classes
        assert len(split.val_nodes) == 3 * sbm_graph.n_classes
        assert len(split.test_nodes) == sbm_graph.n_nodes - 5 * sbm_graph.n_classes
        for c in range(sbm_graph.n_classes):
            assert np.sum(sbm_graph.labels[split.train_nodes] == c) == 2

    def test_disjoint_and_exhaustive(self, sbm_graph):
        split = sample_k_shot(sbm_graph, 1, 5, seed=3)
        union = np.concatenate([split.train_nodes, split.val_nodes, split.test_nodes])
        assert len(np.unique(union)) == sbm_graph.n_nodes

    def test_determinism(self, sbm_graph):
        a = sample_k_shot(sbm_graph, 1, 5, seed=9)
        b = sample_k_shot(sbm_graph, 1, 5, seed=9)
        assert np.array_equal(a.train_nodes, b.train_nodes)
        assert np.array_equal(a.val_nodes, b.val_nodes)
        c = sample_k_shot(sbm_graph, 1, 5, seed=10)
        assert not np.array_equal(a.train_nodes, c.train_nodes)

    def test_infeasible_names_class(self, sbm_graph):
        with pytest.raises(SplitError, match="class 0"):
            sample_k_shot(sbm_graph, 30, 5, seed=0)

    def test_unlabeled_rejected(self):
        g = random_graph(10, 0.3, 0)
        with pytest.raises(SplitError):
            sample_k_shot(g, 1, 1, seed=0)


class TestCountSplit:
    def test_counts(self, sbm_graph):
        split = sample_count_split(sbm_graph, 5, 8, 10, seed=1)
        assert len(split.train_nodes) == 5 * sbm_graph.n_classes
        assert len(split.val_nodes) == 8
        assert len(split.test_nodes) == 10
        union = np.concatenate([split.train_nodes, split.val_nodes, split.test_nodes])
        assert len(np.unique(union)) == len(union)

    def test_too_small(self, sbm_graph):
        with pytest.raises(SplitError):
            sample_count_split(sbm_graph, 5, 20, 20, seed=1)


class TestSplitEdges:
    def test_ten_edge_arithmetic(self):
        g = path_graph(11)  # exactly 10 edges
        es = split_edges(g, 0.2, 0.1, seed=0)
        assert len(es.val_edges) == 2
        assert len(es.test_edges) == 1
        assert len(es.train_edges) == 7
        assert len(es.val_neg) == 2 and len(es.test_neg) == 1

    def test_zero_fractions(self, sbm_graph):
        es = split_edges(sbm_graph, 0.0, 0.0, seed=0)
        assert len(es.train_edges) == sbm_graph.n_edges
        assert len(es.val_edges) == 0 and len(es.test_edges) == 0

    def test_partition(self, sbm_graph):
        es = split_edges(sbm_graph, 0.2, 0.1, seed=4)
        merged = np.vstack([es.train_edges, es.val_edges, es.test_edges])
        merged = merged[np.lexsort((merged[:, 1], merged[:, 0]))]
        assert np.array_equal(merged, sbm_graph.edges)

    def test_negatives_are_non_edges(self):
        for seed in range(6):
            g = random_graph(60, 0.05, seed + 100)
            if g.n_edges < 10:
                continue
            es = split_edges(g, 0.2, 0.1, seed=seed)
            eset = g.edge_set()
            for u, v in np.vstack([es.val_neg, es.test_neg]):
                assert (min(u, v), max(u, v)) not in eset
                assert u != v

    def test_determinism(self, sbm_graph):
        a = split_edges(sbm_graph, 0.2, 0.1, seed=7)
        b = split_edges(sbm_graph, 0.2, 0.1, seed=7)
        assert np.array_equal(a.train_edges, b.train_edges)
        assert np.array_equal(a.val_neg, b.val_neg)

    def test_bad_fracs(self, sbm_graph):
        with pytest.raises(ArgumentError):
            split_edges(sbm_graph, 0.9, 0.2, seed=0)

    def test_negative_sampling_exhaustion(self):
        # complete graph on 4 nodes: no non-edges available
        edges = [(i, j) for i in range(4) for j in range(i + 1, 4)]
        g = Graph(n_nodes=4, edges=np.array(edges), features=np.eye(4))
        with pytest.raises(SamplingError):
            sample_non_edges(g, 2, np.random.default_rng(0))


class TestGenerateSBM:
    def test_pure_homophily(self):
        g = generate_sbm(30, 2, 1.0, 0.0, seed=0)
        assert homophily_ratio(g) == 1.0

    def test_pure_heterophily(self):
        g = generate_sbm(30, 2, 0.0, 1.0, seed=0)
        assert homophily_ratio(g) == 0.0

    def test_uniform_mixing_matches_expectation(self):
        # p_in == p_out: intra-class edge fraction ~ same-class pair fraction ~ 1/C
        ratios = [homophily_ratio(generate_sbm(400, 4, 0.5, 0.5, seed=s)) for s in range(3)]
        assert abs(np.mean(ratios) - 0.25) < 0.05

    def test_determinism(self):
        a = generate_sbm(50, 3, 0.3, 0.1, feature_noise=0.2, seed=8)
        b = generate_sbm(50, 3, 0.3, 0.1, feature_noise=0.2, seed=8)
        assert a.digest() == b.digest()

    def test_balanced_classes(self):
        g = generate_sbm(41, 4, 0.2, 0.2, seed=0)
        counts = np.bincount(g.labels, minlength=4)
        assert counts.max() - counts.min() <= 1

    def test_bad_args(self):
        with pytest.raises(ArgumentError):
            generate_sbm(3, 5, 0.5, 0.5, seed=0)
        with pytest.raises(ArgumentError):
            generate_sbm(10, 2, 1.5, 0.5, seed=0)
        with pytest.raises(ArgumentError):
            generate_sbm(10, 2, 0.5, 0.5, feature_noise=-1.0, seed=0)

    def test_noise_free_features_are_one_hot(self):
        g = generate_sbm(20, 4, 0.2, 0.2, feature_noise=0.0, seed=1)
        assert np.array_equal(g.features, np.eye(4)[g.labels])


class TestHomophilyRatio:
    def test_single_edge_same_label(self):
        g = Graph(2, np.array([[0, 1]]), np.eye(2), labels=np.array([1, 1]), n_classes=2)
        assert homophily_ratio(g) == 1.0

    def test_single_edge_differing(self):
        g = Graph(2, np.array([[0, 1]]), np.eye(2), labels=np.array([0, 1]), n_classes=2)
        assert homophily_ratio(g) == 0.0

    def test_two_of_three(self):
        g = Graph(4, np.array([[0, 1], [1, 2], [2, 3]]), np.eye(4),
                  labels=np.array([0, 0, 0, 1]), n_classes=2)
        assert homophily_ratio(g) == pytest.approx(2 / 3)

    def test_errors(self):
        g = Graph(3, np.empty((0, 2), dtype=np.int64), np.eye(3),
                  labels=np.array([0, 1, 0]), n_classes=2)
        with pytest.raises(MetricError):
            homophily_ratio(g)
        g2 = random_graph(5, 0.5, 0)
        with pytest.raises(MetricError):
            homophily_ratio(g2)


class TestGraphInvariants:
    def test_canonicalization(self):
        edges = canonical_edges([[2, 1], [1, 2], [0, 0], [3, 0]])
        assert edges.tolist() == [[0, 3], [1, 2]]

    def test_validation(self):
        with pytest.raises(ShapeError):
            Graph(3, np.array([[0, 1]]), np.eye(2))
        with pytest.raises(ShapeError):
            Graph(2, np.array([[0, 5]]), np.eye(2))
        with pytest.raises(ArgumentError):
            Graph(2, np.array([[0, 1]]), np.array([[np.inf, 0], [0, 1]]))
        with pytest.raises(ArgumentError):
            Graph(2, np.array([[0, 1]]), np.eye(2), labels=np.array([0, 5]), n_classes=2)
