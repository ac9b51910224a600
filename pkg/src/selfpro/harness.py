"""Experiment protocols: few-shot classification, link prediction, ablations.

Every run is a pure function of (graph, checkpoint, config, base seed): the
split for repeat r is drawn with seed base+r, tuning is deterministic, and
reports carry the seeds, config hash and data digest needed to reproduce
them bit-for-bit. Test labels are wrapped in an access guard during tuning
so the protocol cannot leak them before final scoring.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ArgumentError, MetricError, SplitError
from .graphs import EdgeSplit, Graph, SplitSpec, sample_count_split, sample_k_shot, split_edges
from .model import ProjectorParams, TrainState
from .pretrain import PretrainConfig, pretrain
from .prompt import (
    PromptConfig,
    build_tokens,
    contextual_tokens,
    init_prototypes,
    predict_classes,
    score_links,
    tune_link_prediction,
    tune_node_classification,
)

log = logging.getLogger("selfpro")

REPORT_COLUMNS = ("task", "variant", "mean", "std", "n_repeats", "seeds", "config_hash")
ABLATION_VARIANTS = ("hard", "temp", "tune", "stru", "sem")


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def accuracy(predictions, labels) -> float:
    """Fraction of exact matches."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.shape != labels.shape:
        raise MetricError("accuracy on mismatched lengths")
    if predictions.size == 0:
        raise MetricError("accuracy undefined on an empty id list")
    return float(np.mean(predictions == labels))


def auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative, ties half."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        raise MetricError("AUC requires both classes")
    # rank-based Mann-Whitney with midranks for ties
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0  # midrank, 1-based
        i = j + 1
    rank_sum = ranks[labels == 1].sum()
    u = rank_sum - len(pos) * (len(pos) + 1) / 2.0
    return float(u / (len(pos) * len(neg)))


def average_precision(scores, labels) -> float:
    """Mean precision at each positive's rank, scores descending.

    Ties are broken by stable input order, so the result is exactly the mean
    over positives of (number of positives at or above it) / rank.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    n_pos = int(np.sum(labels == 1))
    if n_pos == 0:
        raise MetricError("average precision requires at least one positive")
    order = np.argsort(-scores, kind="stable")
    sorted_labels = labels[order]
    hits = np.cumsum(sorted_labels == 1)
    ranks = np.arange(1, len(scores) + 1)
    prec_at_pos = hits[sorted_labels == 1] / ranks[sorted_labels == 1]
    return float(prec_at_pos.sum() / n_pos)


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    task: str
    variant: str
    values: list[float]
    mean: float
    std: float
    n_repeats: int
    seeds: list[int]
    config_hash: str
    data_digest: str = ""
    wall_clock_s: float | None = None

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if self.n_repeats != len(vals):
            raise ArgumentError("n_repeats must equal the number of per-repeat values")
        if abs(self.mean - float(vals.mean())) > 1e-9 or abs(self.std - float(vals.std())) > 1e-9:
            raise ArgumentError("stored mean/std do not match per-repeat values")

    @classmethod
    def from_values(cls, task, variant, values, seeds, config_hash,
                    data_digest="", wall_clock_s=None) -> "EvalReport":
        vals = [float(v) for v in values]
        arr = np.asarray(vals)
        return cls(task, variant, vals, float(arr.mean()), float(arr.std()), len(vals),
                   [int(s) for s in seeds], config_hash, data_digest, wall_clock_s)


def report_to_dict(report: EvalReport) -> dict:
    # wall clock is a timestamp-like field; kept out of emitted data so files
    # from identical (config, seed, data) runs compare bit-for-bit
    return {
        "task": report.task,
        "variant": report.variant,
        "values": report.values,
        "mean": report.mean,
        "std": report.std,
        "n_repeats": report.n_repeats,
        "seeds": report.seeds,
        "config_hash": report.config_hash,
        "data_digest": report.data_digest,
    }


def report_from_dict(d: dict) -> EvalReport:
    return EvalReport(d["task"], d["variant"], [float(v) for v in d["values"]],
                      float(d["mean"]), float(d["std"]), int(d["n_repeats"]),
                      [int(s) for s in d["seeds"]], d["config_hash"],
                      d.get("data_digest", ""), None)


def _row(report: EvalReport) -> list[str]:
    return [report.task, report.variant, f"{report.mean:.6f}", f"{report.std:.6f}",
            str(report.n_repeats), " ".join(str(s) for s in report.seeds),
            report.config_hash]


def emit_report(reports, path, format: str = "csv") -> Path:
    """Write one or more EvalReports as csv, json or markdown."""
    if isinstance(reports, EvalReport):
        reports = [reports]
    reports = list(reports)
    if not reports:
        raise ArgumentError("emit_report requires at least one report")
    path = Path(path)
    if format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            writer.writerow(_row(r))
        text = buf.getvalue()
    elif format == "json":
        text = json.dumps([report_to_dict(r) for r in reports], indent=2, sort_keys=True) + "\n"
    elif format == "markdown":
        lines = ["| " + " | ".join(REPORT_COLUMNS) + " |",
                 "|" + "---|" * len(REPORT_COLUMNS)]
        for r in reports:
            lines.append("| " + " | ".join(_row(r)) + " |")
        text = "\n".join(lines) + "\n"
    else:
        raise ArgumentError(f"format must be csv, json or markdown, got {format!r}")
    try:
        path.write_text(text)
    except OSError as exc:
        raise ArgumentError(f"cannot write report to {path}: {exc}") from None
    return path


def load_reports(path) -> list[EvalReport]:
    return [report_from_dict(d) for d in json.loads(Path(path).read_text())]


# ---------------------------------------------------------------------------
# Test-label access guard
# ---------------------------------------------------------------------------

class GuardedLabels:
    """Label vector that counts reads and rejects ids outside the allowed set."""

    def __init__(self, labels: np.ndarray, allowed_ids, strict: bool = True):
        self._labels = np.asarray(labels, dtype=np.int64)
        self._allowed = np.zeros(len(self._labels), dtype=bool)
        self._allowed[np.asarray(allowed_ids, dtype=np.int64)] = True
        self.strict = strict
        self.reads = 0
        self.forbidden_reads = 0

    def __len__(self):
        return len(self._labels)

    def __getitem__(self, ids):
        idx = np.asarray(ids, dtype=np.int64)
        self.reads += int(idx.size)
        bad = ~self._allowed[idx]
        if bad.any():
            self.forbidden_reads += int(bad.sum())
            if self.strict:
                raise SplitError("guarded label read outside the allowed split")
        return self._labels[idx]


# ---------------------------------------------------------------------------
# Protocols
# ---------------------------------------------------------------------------

def _config_hash_for(**parts) -> str:
    from .config import hash_mapping

    flat = {}
    for name, value in parts.items():
        if hasattr(value, "__dataclass_fields__"):
            for f in value.__dataclass_fields__:
                flat[f"{name}.{f}"] = getattr(value, f)
        else:
            flat[name] = value
    return hash_mapping(flat)


def _evaluate_node_repeat(g: Graph, state: TrainState, cfg: PromptConfig,
                          split: SplitSpec) -> float:
    guard = GuardedLabels(g.labels, np.concatenate([split.train_nodes, split.val_nodes]))
    tuned = tune_node_classification(state, g, split, cfg, labels=guard)
    pred = predict_classes(tuned.projector, tuned.prototypes, tuned.tokens,
                           split.test_nodes, cfg.sim_kind)
    return accuracy(pred, g.labels[split.test_nodes])


def run_few_shot(g: Graph, state: TrainState, cfg: PromptConfig, k: int = 1,
                 n_val_per_class: int = 5, n_repeats: int = 10, base_seed: int = 0,
                 variant: str = "") -> EvalReport:
    """k-shot node classification over fresh splits, reported as mean and std."""
    t0 = time.perf_counter()
    seeds = [base_seed + r for r in range(n_repeats)]
    values = []
    for r, seed in enumerate(seeds):
        try:
            split = sample_k_shot(g, k, n_val_per_class, seed)
            values.append(_evaluate_node_repeat(g, state, cfg, split))
        except Exception as exc:
            raise type(exc)(f"repeat {r}: {exc}") from exc
    return EvalReport.from_values(
        f"node_cls_k{k}", variant or cfg.mode, values, seeds,
        _config_hash_for(prompt=cfg, k=k, n_val_per_class=n_val_per_class, base_seed=base_seed),
        g.digest(), time.perf_counter() - t0)


def run_semi_supervised(g: Graph, state: TrainState, cfg: PromptConfig,
                        train_per_class: int = 20, n_val: int = 500, n_test: int = 1000,
                        n_repeats: int = 10, base_seed: int = 0) -> EvalReport:
    """Fixed-count split protocol for label-rich settings."""
    t0 = time.perf_counter()
    seeds = [base_seed + r for r in range(n_repeats)]
    values = []
    for seed in seeds:
        split = sample_count_split(g, train_per_class, n_val, n_test, seed)
        values.append(_evaluate_node_repeat(g, state, cfg, split))
    return EvalReport.from_values(
        "node_cls_semi", cfg.mode, values, seeds,
        _config_hash_for(prompt=cfg, train_per_class=train_per_class,
                         n_val=n_val, n_test=n_test, base_seed=base_seed),
        g.digest(), time.perf_counter() - t0)


def run_link_prediction(g: Graph, state: TrainState | None, cfg: PromptConfig,
                        pretrain_cfg: PretrainConfig | None = None,
                        val_frac: float = 0.2, test_frac: float = 0.1,
                        n_repeats: int = 10, base_seed: int = 0,
                        score_fn=None) -> dict[str, EvalReport]:
    """Link prediction over fresh edge splits; returns AUC and AP reports.

    With ``pretrain_cfg`` given, a fresh encoder is pretrained per repeat on
    the training edges only (held-out edges never reach the model); otherwise
    the provided state is reused as-is. ``score_fn(pairs) -> scores``
    overrides the tuned scorer, for controls.
    """
    if state is None and pretrain_cfg is None and score_fn is None:
        raise ArgumentError("run_link_prediction needs a state, a pretrain_cfg or a score_fn")
    t0 = time.perf_counter()
    seeds = [base_seed + r for r in range(n_repeats)]
    aucs, aps = [], []
    for r, seed in enumerate(seeds):
        es = split_edges(g, val_frac, test_frac, seed)
        pairs = np.vstack([es.test_edges, es.test_neg])
        labels = np.concatenate([np.ones(len(es.test_edges)), np.zeros(len(es.test_neg))])
        if score_fn is not None:
            scores = np.asarray(score_fn(pairs), dtype=np.float64)
        else:
            state_r = state
            if pretrain_cfg is not None:
                g_train = replace(g, edges=es.train_edges)
                state_r, _ = pretrain(g_train, replace(pretrain_cfg, seed=seed))
            tuned = tune_link_prediction(state_r, g, es, replace(cfg, seed=seed))
            scores = score_links(tuned.projector, tuned.tokens, pairs)
        aucs.append(auc(scores, labels))
        aps.append(average_precision(scores, labels))
    chash = _config_hash_for(prompt=cfg, pretrain=pretrain_cfg, val_frac=val_frac,
                             test_frac=test_frac, base_seed=base_seed,
                             oracle=score_fn is not None)
    elapsed = time.perf_counter() - t0
    return {
        "auc": EvalReport.from_values("link_pred_auc", cfg.mode, aucs, seeds, chash,
                                      g.digest(), elapsed),
        "ap": EvalReport.from_values("link_pred_ap", cfg.mode, aps, seeds, chash,
                                     g.digest(), elapsed),
    }


def _hard_variant_accuracy(g: Graph, state: TrainState, split: SplitSpec,
                           sim_kind: str) -> float:
    """No template, no tuning: nearest raw prototype in representation space."""
    tokens = contextual_tokens(state, g)
    prototypes = init_prototypes(tokens, split, g.labels)
    identity = ProjectorParams.identity(tokens.tokens.shape[1])
    pred = predict_classes(identity, prototypes, tokens, split.test_nodes, sim_kind)
    return accuracy(pred, g.labels[split.test_nodes])


def run_ablation(g: Graph, state: TrainState, cfg: PromptConfig, k: int = 1,
                 n_val_per_class: int = 5, n_repeats: int = 10,
                 base_seed: int = 0) -> dict[str, EvalReport]:
    """Evaluate the hard/temp/tune/stru/sem variants on identical splits."""
    t0 = time.perf_counter()
    seeds = [base_seed + r for r in range(n_repeats)]
    per_variant: dict[str, list[float]] = {v: [] for v in ABLATION_VARIANTS}
    variant_cfgs = {
        "temp": replace(cfg, mode="none", tune_epochs=0),
        "tune": replace(cfg, mode="none"),
        "stru": replace(cfg, mode="structural"),
        "sem": replace(cfg, mode="semantic"),
    }
    for seed in seeds:
        split = sample_k_shot(g, k, n_val_per_class, seed)
        per_variant["hard"].append(_hard_variant_accuracy(g, state, split, cfg.sim_kind))
        for name, vcfg in variant_cfgs.items():
            per_variant[name].append(_evaluate_node_repeat(g, state, vcfg, split))
    elapsed = time.perf_counter() - t0
    chash = _config_hash_for(prompt=cfg, k=k, n_val_per_class=n_val_per_class,
                             base_seed=base_seed)
    return {
        name: EvalReport.from_values(f"node_cls_k{k}", name, values, seeds, chash,
                                     g.digest(), elapsed)
        for name, values in per_variant.items()
    }


def shot_sweep(g: Graph, state: TrainState, cfg: PromptConfig,
               k_values=range(1, 11), n_val_per_class: int = 5, n_repeats: int = 10,
               base_seed: int = 0) -> list[EvalReport]:
    """run_few_shot per k, shared base seed; infeasible shots are skipped."""
    reports = []
    for k in k_values:
        try:
            reports.append(run_few_shot(g, state, cfg, k, n_val_per_class,
                                        n_repeats, base_seed))
        except SplitError as exc:
            log.warning("shot sweep: skipping k=%d (%s)", k, exc)
    return reports


def parameter_audit(state: TrainState) -> dict[str, int]:
    """Frozen / tuned / added parameter counts for the tuning phase."""
    return {
        "frozen": state.online.n_params() + state.target.n_params(),
        "tuned": state.projector.n_params(),
        "added": 0,  # prototypes are data statistics, the adapter is reused
    }
