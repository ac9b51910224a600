"""selfpro command line: convert, synth, pretrain, tune, eval, ablate, sweep, audit.

Exit codes: 0 success, 1 domain error, 2 usage error. Logs go to stderr
(level via SELFPRO_LOG), results to files or stdout. SELFPRO_THREADS caps
BLAS parallelism. Every subcommand logs the config hash and base seed it
ran with; re-running with the same values reproduces outputs byte-for-byte.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import harness
from .config import parse_config, write_template
from .errors import ConfigError, LoadError, ParseError, SelfProError
from .graphs import Graph, generate_sbm, load_graph, save_graph, split_edges
from .model import load_checkpoint, save_adapter, save_checkpoint
from .pretrain import pretrain
from .prompt import tune_link_prediction, tune_node_classification
from .graphs import sample_k_shot

log = logging.getLogger("selfpro")

_thread_limiter = None  # keeps the threadpoolctl context alive for the process


def _setup_runtime():
    global _thread_limiter
    level = os.environ.get("SELFPRO_LOG", "info").lower()
    logging.basicConfig(
        stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
        level={"debug": logging.DEBUG, "info": logging.INFO,
               "warn": logging.WARNING}.get(level, logging.INFO))
    threads = os.environ.get("SELFPRO_THREADS")
    if threads and _thread_limiter is None:
        try:
            from threadpoolctl import threadpool_limits

            _thread_limiter = threadpool_limits(limits=int(threads))
        except (ImportError, ValueError):
            log.warning("SELFPRO_THREADS=%s ignored", threads)


def _load_config(args):
    cfg = parse_config(getattr(args, "config", None), getattr(args, "set", []) or [])
    log.info("config hash %s, seed %d", cfg.hash, cfg["seed"])
    return cfg


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------

def _cmd_convert(args) -> int:
    out = Path(args.out)
    ids: dict[str, int] = {}

    def nid(raw: str) -> int:
        return ids.setdefault(raw, len(ids))

    pairs_raw = []
    features_by_id: dict[str, list[float]] = {}
    labels_by_id: dict[str, str] = {}
    if args.content:
        # one line per node: <id> <feature...> <label>
        for lineno, line in enumerate(Path(args.content).read_text().splitlines(), 1):
            parts = line.split()
            if len(parts) < 3:
                raise ParseError(f"{args.content}:{lineno}: need id, features, label")
            features_by_id[parts[0]] = [float(x) for x in parts[1:-1]]
            labels_by_id[parts[0]] = parts[-1]
            nid(parts[0])
    for lineno, line in enumerate(Path(args.edges).read_text().splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 2:
            raise ParseError(f"{args.edges}:{lineno}: expected two columns")
        if args.content and (parts[0] not in features_by_id or parts[1] not in features_by_id):
            log.warning("%s:%d: edge references node without content, skipped", args.edges, lineno)
            continue
        pairs_raw.append((nid(parts[0]), nid(parts[1])))

    n = len(ids)
    if n == 0:
        raise LoadError("no nodes found in input")
    if args.content:
        dim = len(next(iter(features_by_id.values())))
        features = np.zeros((n, dim))
        label_names = sorted(set(labels_by_id.values()))
        label_idx = {name: i for i, name in enumerate(label_names)}
        labels = np.zeros(n, dtype=np.int64)
        for raw, node in ids.items():
            features[node] = features_by_id[raw]
            labels[node] = label_idx[labels_by_id[raw]]
    else:
        features = np.ones((n, 1))  # placeholder single constant feature
        labels = None

    g = Graph(n_nodes=n, edges=np.array(pairs_raw).reshape(-1, 2), features=features,
              labels=labels)
    save_graph(g, out)
    with (out / "id_map.tsv").open("w") as fh:
        for raw, node in sorted(ids.items(), key=lambda kv: kv[1]):
            fh.write(f"{raw}\t{node}\n")
    if args.content:
        with (out / "class_map.tsv").open("w") as fh:
            for name, idx in sorted(label_idx.items(), key=lambda kv: kv[1]):
                fh.write(f"{name}\t{idx}\n")
    log.info("wrote %s: %d nodes, %d edges", out, g.n_nodes, g.n_edges)
    return 0


def _cmd_synth(args) -> int:
    g = generate_sbm(args.n, args.classes, args.pin, args.pout, args.noise, args.seed)
    save_graph(g, args.out)
    log.info("wrote %s: %d nodes, %d edges, homophily %.3f", args.out, g.n_nodes,
             g.n_edges, harness.accuracy(g.labels[g.edges[:, 0]], g.labels[g.edges[:, 1]])
             if g.n_edges else float("nan"))
    return 0


def _cmd_pretrain(args) -> int:
    cfg = _load_config(args)
    g = load_graph(args.data)
    state, trace = pretrain(g, cfg.pretrain_config())
    save_checkpoint(state, args.out, cfg.hash)
    trace_path = Path(args.trace) if args.trace else Path(args.out).with_suffix(".trace.csv")
    with trace_path.open("w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "loss"])
        for epoch, loss in enumerate(trace):
            writer.writerow([epoch, repr(loss)])
    log.info("checkpoint %s (%d epochs, final loss %s)", args.out, len(trace),
             trace[-1] if trace else "n/a")
    return 0


def _tune_overrides(args) -> list[str]:
    extra = []
    if args.mode:
        extra.append(f"mode={args.mode}")
    if args.injection:
        extra.append(f"injection={'self_weight' if args.injection == 'self' else args.injection}")
    if args.mu is not None:
        extra.append(f"mu={args.mu}")
    return extra


def _cmd_tune(args) -> int:
    args.set = (args.set or []) + _tune_overrides(args)
    cfg = _load_config(args)
    g = load_graph(args.data)
    state, _ = load_checkpoint(args.ckpt)
    pcfg = cfg.prompt_config()
    if args.task == "node_cls":
        split = sample_k_shot(g, cfg["k"], cfg["n_val_per_class"], cfg["seed"])
        tuned = tune_node_classification(state, g, split, pcfg)
        save_adapter(tuned.projector, args.out, tuned.prototypes.tokens, cfg.hash)
        log.info("adapter %s (best epoch %d)", args.out, tuned.best_epoch)
    else:
        es = split_edges(g, cfg["val_frac"], cfg["test_frac"], cfg["seed"])
        tuned = tune_link_prediction(state, g, es, pcfg)
        save_adapter(tuned.projector, args.out, None, cfg.hash)
        log.info("adapter %s (best epoch %d)", args.out, tuned.best_epoch)
    return 0


def _emit(reports, args, cfg) -> int:
    path = harness.emit_report(reports, args.out, args.format)
    log.info("report %s (%s), config hash %s", path, args.format, cfg.hash)
    return 0


def _cmd_eval(args) -> int:
    cfg = _load_config(args)
    g = load_graph(args.data)
    pcfg = cfg.prompt_config()
    if args.task == "node_cls":
        state, _ = load_checkpoint(args.ckpt)
        if args.mode == "both":
            reports = []
            for mode in ("structural", "semantic"):
                reports.append(harness.run_few_shot(
                    g, state, replace(pcfg, mode=mode), cfg["k"], cfg["n_val_per_class"],
                    cfg["n_repeats"], cfg["seed"]))
            best = max(reports, key=lambda r: r.mean)
            reports.append(replace(best, variant="best"))
            return _emit(reports, args, cfg)
        if args.mode:
            pcfg = replace(pcfg, mode=args.mode)
        if cfg["protocol"] == "semi":
            report = harness.run_semi_supervised(
                g, state, pcfg, cfg["semi_train_per_class"], cfg["semi_n_val"],
                cfg["semi_n_test"], cfg["n_repeats"], cfg["seed"])
        else:
            report = harness.run_few_shot(g, state, pcfg, cfg["k"], cfg["n_val_per_class"],
                                          cfg["n_repeats"], cfg["seed"])
        return _emit(report, args, cfg)
    # link prediction: optionally re-pretrain per repeat on train edges only
    per_repeat = cfg["lp_pretrain_per_repeat"]
    state = None if per_repeat else load_checkpoint(args.ckpt)[0]
    ptcfg = cfg.pretrain_config() if per_repeat else None
    if not per_repeat and not args.ckpt:
        raise ConfigError("link_pred eval needs --ckpt unless lp_pretrain_per_repeat is set")
    reports = harness.run_link_prediction(g, state, pcfg, ptcfg, cfg["val_frac"],
                                          cfg["test_frac"], cfg["n_repeats"], cfg["seed"])
    return _emit([reports["auc"], reports["ap"]], args, cfg)


def _cmd_ablate(args) -> int:
    cfg = _load_config(args)
    g = load_graph(args.data)
    state, _ = load_checkpoint(args.ckpt)
    table = harness.run_ablation(g, state, cfg.prompt_config(), cfg["k"],
                                 cfg["n_val_per_class"], cfg["n_repeats"], cfg["seed"])
    reports = [table[name] for name in harness.ABLATION_VARIANTS]
    if args.plot:
        _plot_bars(reports, args.plot, cfg.hash)
    return _emit(reports, args, cfg)


def _cmd_sweep(args) -> int:
    cfg = _load_config(args)
    g = load_graph(args.data)
    state, _ = load_checkpoint(args.ckpt)
    ks = [int(k) for k in args.ks.split(",")]
    reports = harness.shot_sweep(g, state, cfg.prompt_config(), ks,
                                 cfg["n_val_per_class"], cfg["n_repeats"], cfg["seed"])
    if args.plot:
        _plot_sweep(reports, ks, args.plot, cfg.hash)
    return _emit(reports, args, cfg)


def _cmd_audit(args) -> int:
    state, meta = load_checkpoint(args.ckpt)
    counts = harness.parameter_audit(state)
    print(f"frozen {counts['frozen']}")
    print(f"tuned {counts['tuned']}")
    print(f"added {counts['added']}")
    log.info("checkpoint config hash %s", meta.get("config_hash", ""))
    return 0


def _cmd_config(args) -> int:
    write_template(args.out)
    log.info("wrote config template %s", args.out)
    return 0


def _matplotlib(hashsalt: str):
    import matplotlib

    matplotlib.use("svg")
    matplotlib.rcParams["svg.hashsalt"] = hashsalt
    import matplotlib.pyplot as plt

    return plt


def _plot_bars(reports, path, hashsalt):
    plt = _matplotlib(hashsalt)
    fig, ax = plt.subplots(figsize=(5, 3))
    names = [r.variant for r in reports]
    ax.bar(names, [r.mean for r in reports], yerr=[r.std for r in reports], capsize=3)
    ax.set_ylabel("accuracy")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


def _plot_sweep(reports, ks, path, hashsalt):
    plt = _matplotlib(hashsalt)
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.errorbar(ks[:len(reports)], [r.mean for r in reports],
                yerr=[r.std for r in reports], marker="o", capsize=3)
    ax.set_xlabel("shots per class")
    ax.set_ylabel("accuracy")
    fig.tight_layout()
    fig.savefig(path, metadata={"Date": None})
    plt.close(fig)


# ---------------------------------------------------------------------------
# Parser wiring
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="selfpro", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, ckpt=True, data=True):
        if data:
            p.add_argument("--data", required=True, help="edge_list_dir directory")
        if ckpt:
            p.add_argument("--ckpt", help="checkpoint archive")
        p.add_argument("--config", help="INI config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="config override, repeatable")

    p = sub.add_parser("convert", help="build an edge_list_dir from raw files")
    p.add_argument("--edges", required=True, help="raw edge list, two ids per line")
    p.add_argument("--content", help="optional per-node file: id features... label")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_convert)

    p = sub.add_parser("synth", help="generate a stochastic block model dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--classes", type=int, default=2)
    p.add_argument("--pin", type=float, required=True)
    p.add_argument("--pout", type=float, required=True)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("pretrain", help="pretrain encoder and projector")
    common(p, ckpt=False)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--trace", help="loss trace CSV (default: alongside checkpoint)")
    p.set_defaults(func=_cmd_pretrain)

    p = sub.add_parser("tune", help="prompt-tune the projector for one task")
    common(p)
    p.add_argument("--task", choices=["node_cls", "link_pred"], required=True)
    p.add_argument("--mode", choices=["none", "structural", "semantic"])
    p.add_argument("--injection", choices=["fixed", "self"])
    p.add_argument("--mu", type=float)
    p.add_argument("--out", required=True, help="adapter archive path")
    p.set_defaults(func=_cmd_tune)

    p = sub.add_parser("eval", help="run a full evaluation protocol")
    common(p)
    p.add_argument("--task", choices=["node_cls", "link_pred"], required=True)
    p.add_argument("--mode", choices=["none", "structural", "semantic", "both"])
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["csv", "json", "markdown"], default="csv")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("ablate", help="run the five-variant ablation")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["csv", "json", "markdown"], default="csv")
    p.add_argument("--plot", help="optional SVG bar chart")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("sweep", help="vary the number of shots per class")
    common(p)
    p.add_argument("--ks", default="1,2,3,4,5,6,7,8,9,10")
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=["csv", "json", "markdown"], default="csv")
    p.add_argument("--plot", help="optional SVG line chart")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("audit", help="print frozen/tuned/added parameter counts")
    p.add_argument("--ckpt", required=True)
    p.set_defaults(func=_cmd_audit)

    p = sub.add_parser("config", help="write a template config file with all defaults")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_config)

    return parser


def dispatch(argv) -> int:
    """Parse argv and run the subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as exc:  # argparse uses exit 2 for usage errors
        return int(exc.code) if exc.code is not None else 0
    _setup_runtime()
    try:
        return int(args.func(args))
    except SelfProError as exc:
        log.error("%s", exc)
        return 1


def main(argv=None) -> int:
    return dispatch(sys.argv[1:] if argv is None else argv)


if __name__ == "__main__":
    sys.exit(main())
