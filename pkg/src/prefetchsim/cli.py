"""Command-line front end: file-in, file-out workflows over the library.

Exit codes: 0 success, 2 usage errors (argparse), 3 invalid configuration
(the offending field is named on stderr), 1 other run-time failures.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

from . import __version__
from .classifier import DegenerateDataError, fit_classifier, save_model
from .config import ConfigError, RunConfig, config_hash
from .controller import LabeledSample
from .evalmetrics import (
    CostInputs,
    compare_runs,
    estimate_costs,
    pass_at_1,
)
from .graph import (
    edge_cut,
    generate_graph,
    load_graph,
    partition_graph,
    save_graph,
)
from .pipeline import collect_training_samples, run_training
from .traceio import TraceReadError, TraceSchemaError, export_trace

ENDPOINT_ENV = "PREFETCHSIM_ENDPOINT"


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _meta_sidecar(out_dir: Path) -> None:
    # The single place wall-clock time may appear; everything else is
    # byte-reproducible.
    _write(
        out_dir / "meta.json",
        json.dumps(
            {"created_unix": time.time(), "tool": f"prefetchsim {__version__}"},
            sort_keys=True,
        )
        + "\n",
    )


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = RunConfig.from_dict({**cfg.to_canonical_dict(), "seed": args.seed})
    env_url = os.environ.get(ENDPOINT_ENV)
    if env_url and cfg.controller == "agent":
        cfg.agent_endpoint = env_url
        cfg.agent_script = None
    return cfg


def cmd_gen_graph(args) -> int:
    graph = generate_graph(args.nodes, args.avg_degree, args.skew, args.seed)
    save_graph(
        graph,
        args.out,
        meta={
            "seed": args.seed,
            "avg_degree_requested": args.avg_degree,
            "skew": args.skew,
        },
    )
    print(
        f"graph: {graph.num_nodes} nodes, {graph.num_edges} directed edges "
        f"-> {args.out}"
    )
    return 0


def cmd_partition(args) -> int:
    graph = load_graph(args.graph)
    pm = partition_graph(graph, args.parts, args.strategy)
    cut = edge_cut(graph, pm)
    out = {
        "num_parts": pm.num_parts,
        "strategy": args.strategy,
        "counts": pm.counts().tolist(),
        "edge_cut": cut,
        "owner": pm.owner.tolist(),
    }
    _write(Path(args.out), json.dumps(out, sort_keys=True) + "\n")
    print(
        f"partition: {args.parts} parts ({args.strategy}), "
        f"sizes {pm.counts().tolist()}, edge cut {cut} -> {args.out}"
    )
    return 0


def cmd_run(args) -> int:
    cfg = _load_config(args)
    report, trace = run_training(cfg)
    out_dir = Path(args.out_dir)
    _write(out_dir / "report.json", report.to_json())
    _write(out_dir / "report.csv", report.to_csv())
    export_trace(trace, out_dir / "trace.jsonl")
    _meta_sidecar(out_dir)
    final = report.epochs[-1]
    print(
        f"run: controller={cfg.controller} mode={cfg.mode} "
        f"epochs={cfg.epochs} final_pct_hits={final['pct_hits']:.2f} "
        f"total_comm={report.totals['total_comm']} "
        f"total_time={report.totals['total_time']:.1f} -> {out_dir}"
    )
    return 0


def cmd_trace_collect(args) -> int:
    cfg = _load_config(args)
    result = collect_training_samples(cfg)
    out_dir = Path(args.out_dir)
    lines = [json.dumps(s.to_dict(), sort_keys=True) for s in result.samples]
    _write(out_dir / "samples.jsonl", "\n".join(lines) + ("\n" if lines else ""))
    _write(out_dir / "report.json", result.report.to_json())
    export_trace(result.trace, out_dir / "trace.jsonl")
    _meta_sidecar(out_dir)
    print(
        f"collected {len(result.samples)} labeled samples "
        f"(low_signal={str(result.low_signal).lower()}, "
        f"offline_cost={result.offline_cost:.1f}) -> {out_dir}"
    )
    return 0


def cmd_train_clf(args) -> int:
    samples = []
    for line in Path(args.samples).read_text().splitlines():
        if line.strip():
            samples.append(LabeledSample.from_dict(json.loads(line)))
    try:
        model = fit_classifier(samples, kind=args.kind, seed=args.seed)
    except DegenerateDataError as exc:
        print(f"error: degenerate training data: {exc}", file=sys.stderr)
        return 1
    save_model(model, args.out)
    print(
        f"trained {args.kind} on {len(samples)} samples, "
        f"held-out accuracy {model.heldout_accuracy:.2f}% -> {args.out}"
    )
    return 0


def cmd_eval(args) -> int:
    report = json.loads(Path(args.report).read_text())
    epsilon = args.epsilon
    if epsilon is None:
        epsilon = float(report["config"].get("epsilon", 0.5))
    ev = pass_at_1(
        report["decisions"]["records"],
        epsilon,
        unevaluated=report["decisions"].get("unevaluated", 0),
    )
    out = ev.to_dict()
    out["source_config_hash"] = report["config_hash"]
    text = json.dumps(out, sort_keys=True, indent=2) + "\n"
    if args.out:
        _write(Path(args.out), text)
    else:
        print(text, end="")
    if ev.pass_at_1 is None:
        print("pass@1: undefined (no expectation-stating decisions)")
    else:
        print(
            f"pass@1: {ev.pass_at_1:.2f}% ({ev.passes}/{ev.n_evaluated}) "
            f"CI ({ev.ci_low_delta:+.2f}/{ev.ci_high_delta:+.2f}), "
            f"valid {ev.valid_pct:.1f}%, r_mean "
            + ("n/a" if ev.r_mean is None else f"{ev.r_mean:.2f}")
        )
    return 0


def cmd_compare(args) -> int:
    runs = []
    for path in args.reports:
        label = Path(path).parent.name or Path(path).stem
        runs.append((label, json.loads(Path(path).read_text())))
    csv = compare_runs(runs, epsilon=args.epsilon)
    if args.out:
        _write(Path(args.out), csv)
        print(f"compare: {len(runs)} runs -> {args.out}")
    else:
        print(csv, end="")
    return 0


def cmd_cost_model(args) -> int:
    est = estimate_costs(
        CostInputs(
            s_offline=args.s_offline,
            m_minibatches=args.minibatches,
            e_epochs=args.epochs,
            t_sampling=args.t_sampling,
            t_train_clf=args.t_train_clf,
            t_test_clf=args.t_test_clf,
            t_train_gnn=args.t_train_gnn,
            t_prompt=args.t_prompt,
            t_infer_llm=args.t_infer_llm,
        )
    )
    print(json.dumps(est.to_dict(), sort_keys=True, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="prefetchsim",
        description="Adaptive prefetch-buffer simulation for distributed GNN training",
    )
    p.add_argument("--version", action="version", version=f"prefetchsim {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-graph", help="generate a synthetic power-law graph")
    g.add_argument("--nodes", type=int, required=True)
    g.add_argument("--avg-degree", type=float, default=10.0)
    g.add_argument("--skew", type=float, default=2.1)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_graph)

    pa = sub.add_parser("partition", help="partition a saved graph")
    pa.add_argument("--graph", required=True)
    pa.add_argument("--parts", type=int, required=True)
    pa.add_argument(
        "--strategy",
        choices=["hash", "range", "greedy-edge-cut"],
        default="greedy-edge-cut",
    )
    pa.add_argument("--out", required=True)
    pa.set_defaults(func=cmd_partition)

    r = sub.add_parser("run", help="simulate a training run from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int, help="override the config seed")
    r.add_argument("--out-dir", required=True)
    r.set_defaults(func=cmd_run)

    tc = sub.add_parser(
        "trace-collect", help="trace-only run emitting labeled samples"
    )
    tc.add_argument("--config", required=True)
    tc.add_argument("--seed", type=int, help="override the config seed")
    tc.add_argument("--out-dir", required=True)
    tc.set_defaults(func=cmd_trace_collect)

    tr = sub.add_parser("train-clf", help="fit a replacement classifier")
    tr.add_argument("--samples", required=True)
    tr.add_argument("--kind", choices=["logistic", "small-mlp"], default="logistic")
    tr.add_argument("--seed", type=int, required=True)
    tr.add_argument("--out", required=True)
    tr.set_defaults(func=cmd_train_clf)

    ev = sub.add_parser("eval", help="score decisions from a run report")
    ev.add_argument("--report", required=True)
    ev.add_argument("--epsilon", type=float, default=None)
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_eval)

    cp = sub.add_parser("compare", help="tabulate several run reports")
    cp.add_argument("reports", nargs="+")
    cp.add_argument("--epsilon", type=float, default=0.5)
    cp.add_argument("--out")
    cp.set_defaults(func=cmd_compare)

    cm = sub.add_parser("cost-model", help="supervised vs in-context cost bill")
    cm.add_argument("--s-offline", type=int, required=True)
    cm.add_argument("--minibatches", type=int, required=True)
    cm.add_argument("--epochs", type=int, required=True)
    cm.add_argument("--t-sampling", type=float, default=1.0)
    cm.add_argument("--t-train-clf", type=float, default=1.0)
    cm.add_argument("--t-test-clf", type=float, default=1.0)
    cm.add_argument("--t-train-gnn", type=float, default=1.0)
    cm.add_argument("--t-prompt", type=float, default=1.0)
    cm.add_argument("--t-infer-llm", type=float, default=1.0)
    cm.set_defaults(func=cmd_cost_model)

    return p


def dispatch(argv: list[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (TraceSchemaError, TraceReadError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
