import json
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from selfpro.errors import ArgumentError, MetricError, SplitError
from selfpro.graphs import generate_sbm, sample_k_shot
from selfpro.harness import (
    ABLATION_VARIANTS,
    EvalReport,
    GuardedLabels,
    accuracy,
    auc,
    average_precision,
    emit_report,
    load_reports,
    parameter_audit,
    report_from_dict,
    report_to_dict,
    run_ablation,
    run_few_shot,
    run_link_prediction,
    run_semi_supervised,
    shot_sweep,
)
from selfpro.pretrain import PretrainConfig, init_state, pretrain
from selfpro.prompt import PromptConfig


# ---------------------------------------------------------------------------
# Metric oracles
# ---------------------------------------------------------------------------

def auc_pairwise_oracle(scores, labels):
    """Brute force over every positive-negative pair; ties count half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else (0.5 if p == q else 0.0)
    return total / (len(pos) * len(neg))


def ap_rank_oracle(scores, labels):
    """Walk ranks in descending score order (stable on ties), average precision."""
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    hits, out = 0, []
    for rank, idx in enumerate(order, start=1):
        if labels[idx] == 1:
            hits += 1
            out.append(hits / rank)
    return sum(out) / len(out)


class TestAccuracy:
    def test_all_correct(self):
        assert accuracy([1, 2, 3], [1, 2, 3]) == 1.0

    def test_none_correct(self):
        assert accuracy([0, 0, 0], [1, 2, 3]) == 0.0

    def test_three_of_four(self):
        assert accuracy([1, 2, 3, 4], [1, 2, 3, 0]) == 0.75

    def test_empty(self):
        with pytest.raises(MetricError):
            accuracy([], [])


class TestAuc:
    def test_perfect_separation(self):
        assert auc([0.9, 0.8, 0.1, 0.2], [1, 1, 0, 0]) == 1.0

    def test_all_ties(self):
        assert auc([0.5, 0.5, 0.5, 0.5], [1, 0, 1, 0]) == 0.5

    def test_worked_example(self):
        # pairs: (0.9 vs 0.8) -> 1, (0.3 vs 0.8) -> 0; mean = 0.5
        assert auc([0.9, 0.8, 0.3], [1, 0, 1]) == pytest.approx(0.5)

    def test_single_class(self):
        with pytest.raises(MetricError):
            auc([0.5, 0.2], [1, 1])

    def test_randomized_against_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(400):
            n = rng.integers(2, 13)
            labels = rng.integers(0, 2, size=n)
            if labels.min() == labels.max():
                labels[0] = 1 - labels[0]
            scores = np.round(rng.random(n), 1)  # coarse grid forces ties
            assert auc(scores, labels) == pytest.approx(
                auc_pairwise_oracle(scores.tolist(), labels.tolist()), abs=1e-12)


class TestAveragePrecision:
    def test_single_positive_first(self):
        assert average_precision([0.9, 0.5, 0.1], [1, 0, 0]) == 1.0

    def test_single_positive_last(self):
        assert average_precision([0.9, 0.5, 0.1], [0, 0, 1]) == pytest.approx(1 / 3)

    def test_worked_example(self):
        assert average_precision([0.9, 0.8, 0.3], [1, 0, 1]) == pytest.approx(5 / 6)

    def test_no_positives(self):
        with pytest.raises(MetricError):
            average_precision([0.5], [0])

    def test_randomized_against_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(400):
            n = rng.integers(1, 13)
            labels = rng.integers(0, 2, size=n)
            if labels.max() == 0:
                labels[0] = 1
            scores = np.round(rng.random(n), 1)
            assert average_precision(scores, labels) == pytest.approx(
                ap_rank_oracle(scores.tolist(), labels.tolist()), abs=1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.tuples(st.floats(0, 1), st.integers(0, 1)), min_size=1, max_size=12))
    def test_property_against_oracle(self, items):
        scores = [s for s, _ in items]
        labels = [y for _, y in items]
        if sum(labels) == 0:
            labels[0] = 1
        assert average_precision(scores, labels) == pytest.approx(
            ap_rank_oracle(scores, labels), abs=1e-12)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def sample_report(values=(0.5, 0.7), task="node_cls_k1", variant="none"):
    return EvalReport.from_values(task, variant, values, seeds=range(len(values)),
                                  config_hash="deadbeef", data_digest="d1",
                                  wall_clock_s=1.25)


class TestEvalReport:
    def test_consistency_enforced(self):
        with pytest.raises(ArgumentError):
            EvalReport("t", "v", [0.5, 0.7], 0.9, 0.1, 2, [0, 1], "h")
        with pytest.raises(ArgumentError):
            EvalReport("t", "v", [0.5, 0.7], 0.6, 0.1, 3, [0, 1, 2], "h")

    def test_round_trip_dict(self):
        r = sample_report()
        r2 = report_from_dict(report_to_dict(r))
        assert r2.values == r.values
        assert r2.mean == r.mean and r2.std == r.std
        assert r2.seeds == r.seeds and r2.config_hash == r.config_hash

    def test_emit_csv_single_row(self, tmp_path):
        path = emit_report(sample_report(), tmp_path / "r.csv", "csv")
        lines = path.read_text().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("task,variant,mean,std,n_repeats,seeds,config_hash")

    def test_emit_json_round_trip(self, tmp_path):
        r = sample_report()
        path = emit_report([r], tmp_path / "r.json", "json")
        loaded = load_reports(path)[0]
        assert loaded.values == r.values and loaded.mean == r.mean

    def test_markdown_column_count(self, tmp_path):
        path = emit_report(sample_report(), tmp_path / "r.md", "markdown")
        header = path.read_text().splitlines()[0]
        assert header.count("|") == 8  # 7 columns -> 8 pipes
        assert len([c for c in header.split("|") if c.strip()]) == 7

    def test_emitted_files_are_deterministic(self, tmp_path):
        a = emit_report(sample_report(), tmp_path / "a.json", "json")
        b = emit_report(sample_report(), tmp_path / "b.json", "json")
        assert a.read_bytes() == b.read_bytes()  # wall clock kept out of files

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(ArgumentError):
            emit_report(sample_report(), tmp_path / "missing" / "r.csv", "csv")

    def test_empty_reports(self, tmp_path):
        with pytest.raises(ArgumentError):
            emit_report([], tmp_path / "r.csv", "csv")


class TestGuardedLabels:
    def test_allows_and_counts(self):
        g = GuardedLabels(np.array([5, 6, 7, 8]), [0, 1])
        assert list(g[np.array([0, 1])]) == [5, 6]
        assert g.reads == 2 and g.forbidden_reads == 0

    def test_rejects_outside(self):
        g = GuardedLabels(np.array([5, 6, 7, 8]), [0, 1])
        with pytest.raises(SplitError):
            g[np.array([2])]
        assert g.forbidden_reads == 1

    def test_non_strict_counts_only(self):
        g = GuardedLabels(np.array([5, 6, 7]), [0], strict=False)
        assert list(g[np.array([0, 2])]) == [5, 7]
        assert g.forbidden_reads == 1


# ---------------------------------------------------------------------------
# Protocols (shared tiny pretrained fixture from conftest)
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def tune_cfg():
    return PromptConfig(tune_epochs=30, tune_lr=0.01, patience=20)


class TestRunFewShot:
    def test_single_repeat_reduces_to_tune_eval(self, sbm_graph, pretrained, tune_cfg):
        report = run_few_shot(sbm_graph, pretrained, tune_cfg, k=1, n_repeats=1,
                              base_seed=4)
        assert report.n_repeats == 1
        assert report.seeds == [4]
        assert 0.0 <= report.mean <= 1.0

    def test_determinism(self, sbm_graph, pretrained, tune_cfg):
        a = run_few_shot(sbm_graph, pretrained, tune_cfg, k=1, n_repeats=3, base_seed=7)
        b = run_few_shot(sbm_graph, pretrained, tune_cfg, k=1, n_repeats=3, base_seed=7)
        assert a.values == b.values
        assert a.config_hash == b.config_hash

    def test_pretrained_beats_random_control(self, sbm_graph, small_cfg, pretrained,
                                             tune_cfg):
        control_state = init_state(sbm_graph, small_cfg)
        trained = run_few_shot(sbm_graph, pretrained, tune_cfg, k=1, n_repeats=5)
        control = run_few_shot(sbm_graph, control_state, replace(tune_cfg, tune_epochs=0),
                               k=1, n_repeats=5)
        assert trained.mean >= control.mean

    def test_repeat_index_in_error(self, sbm_graph, pretrained, tune_cfg):
        with pytest.raises(SplitError, match="repeat 0"):
            run_few_shot(sbm_graph, pretrained, tune_cfg, k=100, n_repeats=2)

    def test_test_labels_never_read_during_tuning(self, sbm_graph, pretrained, tune_cfg):
        # the guard raises on any out-of-split read; a clean run proves the
        # protocol touches only train/val labels before scoring
        report = run_few_shot(sbm_graph, pretrained, tune_cfg, k=1, n_repeats=2)
        assert report.n_repeats == 2


class TestSemiSupervised:
    def test_runs(self, sbm_graph, pretrained, tune_cfg):
        report = run_semi_supervised(sbm_graph, pretrained, tune_cfg,
                                     train_per_class=4, n_val=6, n_test=10, n_repeats=2)
        assert report.task == "node_cls_semi"
        assert report.n_repeats == 2


class TestRunLinkPrediction:
    def test_oracle_scorer_gets_perfect_metrics(self, sbm_graph):
        edge_set = sbm_graph.edge_set()

        def oracle(pairs):
            return np.array([1.0 if (min(u, v), max(u, v)) in edge_set else 0.0
                             for u, v in pairs])

        reports = run_link_prediction(sbm_graph, None, PromptConfig(), score_fn=oracle,
                                      n_repeats=3)
        assert reports["auc"].mean == 1.0
        assert reports["ap"].mean == 1.0

    def test_random_scorer_near_half_auc(self):
        g = generate_sbm(100, 2, 0.25, 0.15, feature_noise=0.5, seed=9)
        assert g.n_edges >= 200
        rng = np.random.default_rng(0)

        def random_scorer(pairs):
            return rng.random(len(pairs))

        reports = run_link_prediction(g, None, PromptConfig(), score_fn=random_scorer,
                                      n_repeats=10)
        assert abs(reports["auc"].mean - 0.5) < 0.05

    def test_tuned_beats_random_and_is_deterministic(self, sbm_graph, pretrained):
        cfg = PromptConfig(tune_epochs=15, tune_lr=0.002, patience=10)
        a = run_link_prediction(sbm_graph, pretrained, cfg, n_repeats=2, base_seed=3)
        b = run_link_prediction(sbm_graph, pretrained, cfg, n_repeats=2, base_seed=3)
        assert a["auc"].values == b["auc"].values
        assert a["ap"].values == b["ap"].values
        assert a["auc"].mean > 0.5

    def test_per_repeat_pretraining(self, sbm_graph):
        pt = PretrainConfig(epochs=15, lr=1e-2, n_negatives=8, hidden_dim=8,
                            embed_dim=8, seed=0)
        cfg = PromptConfig(tune_epochs=10, tune_lr=0.002)
        reports = run_link_prediction(sbm_graph, None, cfg, pretrain_cfg=pt, n_repeats=2)
        assert reports["auc"].n_repeats == 2

    def test_needs_some_source_of_scores(self, sbm_graph):
        with pytest.raises(ArgumentError):
            run_link_prediction(sbm_graph, None, PromptConfig())


class TestRunAblation:
    @pytest.fixture(scope="class")
    def table(self, sbm_graph, pretrained):
        cfg = PromptConfig(mu=0.5, tune_epochs=25, tune_lr=0.01, patience=15)
        return run_ablation(sbm_graph, pretrained, cfg, k=1, n_repeats=3, base_seed=2)

    def test_variants_present(self, table):
        assert set(table) == set(ABLATION_VARIANTS)

    def test_shared_seeds_across_variants(self, table):
        seeds = {tuple(r.seeds) for r in table.values()}
        assert len(seeds) == 1

    def test_stru_with_mu_zero_equals_tune(self, sbm_graph, pretrained):
        cfg = PromptConfig(mode="structural", mu=0.0, tune_epochs=20, patience=15)
        table = run_ablation(sbm_graph, pretrained, cfg, k=1, n_repeats=3, base_seed=5)
        assert table["stru"].values == table["tune"].values

    def test_temp_equals_tune_at_zero_epochs(self, sbm_graph, pretrained):
        cfg = PromptConfig(tune_epochs=0)
        table = run_ablation(sbm_graph, pretrained, cfg, k=1, n_repeats=3, base_seed=6)
        assert table["temp"].values == table["tune"].values

    def test_semantic_wins_on_heterophilous_informative_features(self, small_cfg):
        g = generate_sbm(120, 3, 0.05, 0.3, feature_noise=0.1, seed=21)
        state, _ = pretrain(g, replace(small_cfg, epochs=60, seed=2))
        cfg = PromptConfig(mu=0.9, tune_epochs=25, tune_lr=0.01, patience=15)
        table = run_ablation(g, state, cfg, k=1, n_repeats=5, base_seed=1)
        assert table["sem"].mean >= table["tune"].mean


class TestShotSweep:
    def test_singleton_reduces_to_run_few_shot(self, sbm_graph, pretrained, tune_cfg):
        sweep = shot_sweep(sbm_graph, pretrained, tune_cfg, k_values=[1], n_repeats=2)
        direct = run_few_shot(sbm_graph, pretrained, tune_cfg, k=1, n_repeats=2)
        assert len(sweep) == 1
        assert sweep[0].values == direct.values

    def test_ordering_matches_k(self, sbm_graph, pretrained, tune_cfg):
        sweep = shot_sweep(sbm_graph, pretrained, tune_cfg, k_values=[1, 2, 3],
                           n_repeats=2)
        assert [r.task for r in sweep] == ["node_cls_k1", "node_cls_k2", "node_cls_k3"]

    def test_infeasible_k_skipped(self, sbm_graph, pretrained, tune_cfg, caplog):
        import logging

        with caplog.at_level(logging.WARNING, logger="selfpro"):
            sweep = shot_sweep(sbm_graph, pretrained, tune_cfg, k_values=[1, 500],
                               n_repeats=2)
        assert len(sweep) == 1
        assert "skipping k=500" in caplog.text


class TestParameterAudit:
    def test_projector_count(self, pretrained):
        counts = parameter_audit(pretrained)
        assert counts["tuned"] == 16 * 16
        assert counts["added"] == 0

    def test_frozen_is_both_encoders(self, pretrained):
        counts = parameter_audit(pretrained)
        expected = 2 * sum(w.size for w in pretrained.online.weights)
        assert counts["frozen"] == expected

    def test_linear_256_projector(self):
        g = generate_sbm(10, 2, 0.5, 0.5, seed=0)
        state = init_state(g, PretrainConfig(hidden_dim=256, embed_dim=256, seed=0))
        assert parameter_audit(state)["tuned"] == 65536
