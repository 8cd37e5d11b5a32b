"""Command-line pipeline: synth/ingest -> censuses -> train -> explain -> evaluate.

Every command writes its artifact under --run-dir with a fixed filename
plus a `<artifact>.manifest.json` sidecar (full config, config hash,
package version); reruns with the same manifest are byte-identical.
Failures print machine-readable JSON on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from . import __version__, nn
from .basemodel import BaseConfig, serve_adapter, train_base
from .config import RunConfig, write_manifest
from .errors import DependencyError, MotifxError
from .evaluate import build_eval_query_set, evaluate_explanations
from .explainer import ExplainerConfig, explain, train_explainer
from .graph import TemporalGraph, generate_synthetic, ingest_csv
from .metrics import write_curve_csv
from .motifs import graph_census, null_class_probs

FILES = {
    "graph": "graph.json",
    "census": "census.json",
    "null_census": "null_census.json",
    "base": "base.ckpt",
    "explainer": "explainer.ckpt",
    "explanations": "explanations.json",
    "report": "report.json",
    "curve": "curve.csv",
    "plot": "fidelity_sparsity.csv",
}

ADAPTER_ENV = "MOTIFX_ADAPTER"


def _run_dir(args) -> Path:
    d = Path(args.run_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _need(run_dir: Path, key: str) -> Path:
    path = run_dir / FILES[key]
    if not path.exists():
        raise DependencyError(f"missing {path}; run the command that produces it first")
    return path


def _load_graph(run_dir: Path) -> TemporalGraph:
    return TemporalGraph.from_json(_need(run_dir, "graph").read_text())


def _emit_warnings(cfg: RunConfig) -> None:
    for w in cfg.warnings():
        print(f"warning: {w}", file=sys.stderr)


def _explainer_cfg(cfg: RunConfig) -> ExplainerConfig:
    return ExplainerConfig(
        c=cfg.c, n=cfg.n, l=cfg.l, delta=cfg.delta, d_time=cfg.d_time, h=cfg.h,
        gine_depth=cfg.gine_depth, prior=cfg.prior, p=cfg.p, beta=cfg.beta,
        lam=cfg.lam, lr=cfg.lr, epochs=cfg.expl_epochs, batch=cfg.batch,
        hops=cfg.hops, per_hop_cap=cfg.per_hop_cap, seed=cfg.seed,
        max_train_queries=cfg.max_train_queries)


# -- commands -------------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    run_dir = _run_dir(args)
    g = generate_synthetic(cfg.rule, cfg.nodes, cfg.events, cfg.seed)
    out = run_dir / FILES["graph"]
    out.write_text(g.to_json())
    write_manifest(run_dir / (FILES["graph"] + ".manifest.json"), "synth", cfg)
    print(f"wrote {out} ({g.n_events} events, {g.node_count} nodes)")
    return 0


def cmd_ingest(args, cfg: RunConfig) -> int:
    run_dir = _run_dir(args)
    if not cfg.csv:
        raise DependencyError("ingest needs --csv")
    g, report = ingest_csv(cfg.csv, cfg.has_header)
    out = run_dir / FILES["graph"]
    out.write_text(g.to_json())
    write_manifest(run_dir / (FILES["graph"] + ".manifest.json"), "ingest", cfg)
    print(f"wrote {out} ({g.n_events} events, {g.node_count} nodes, "
          f"{report.self_loops_skipped} self-loops skipped)")
    return 0


def cmd_census(args, cfg: RunConfig) -> int:
    run_dir = _run_dir(args)
    g = _load_graph(run_dir)
    cen = graph_census(g, cfg.n, cfg.l, cfg.c_per_node, cfg.delta, cfg.seed)
    out = run_dir / FILES["census"]
    out.write_text(cen.to_json())
    write_manifest(run_dir / (FILES["census"] + ".manifest.json"), "census", cfg)
    print(f"wrote {out} ({len(cen.counts)} classes over {cen.total} instances)")
    return 0


def cmd_null_census(args, cfg: RunConfig) -> int:
    run_dir = _run_dir(args)
    g = _load_graph(run_dir)
    probs = null_class_probs(g, cfg.n, cfg.l, cfg.c_per_node, cfg.delta, cfg.seed)
    out = run_dir / FILES["null_census"]
    out.write_text(json.dumps(probs, separators=(",", ":"), sort_keys=True) + "\n")
    write_manifest(run_dir / (FILES["null_census"] + ".manifest.json"), "null-census", cfg)
    print(f"wrote {out} ({len(probs)} classes)")
    return 0


def cmd_train_base(args, cfg: RunConfig) -> int:
    run_dir = _run_dir(args)
    g = _load_graph(run_dir)
    bcfg = BaseConfig(h=cfg.h, d_time=cfg.d_time_base, k_nb=cfg.k_nb, lr=cfg.lr,
                      epochs=cfg.base_epochs, batch=cfg.batch, patience=cfg.patience,
                      seed=cfg.seed)
    store, report = train_base(g, bcfg)
    out = run_dir / FILES["base"]
    store.save(out)
    write_manifest(run_dir / (FILES["base"] + ".manifest.json"), "train-base", cfg)
    print(f"wrote {out} (best val AP {report.best_val_ap:.4f} at epoch {report.best_epoch})")
    return 0


def cmd_train_explainer(args, cfg: RunConfig) -> int:
    run_dir = _run_dir(args)
    g = _load_graph(run_dir)
    base = nn.ParameterStore.load(_need(run_dir, "base"))
    ecfg = _explainer_cfg(cfg)
    null_probs = None
    null_path = run_dir / FILES["null_census"]
    if cfg.prior == "empirical":
        if null_path.exists():
            null_probs = json.loads(null_path.read_text())
        else:
            null_probs = null_class_probs(g, cfg.n, cfg.l, cfg.c_per_node, cfg.delta, cfg.seed)
            null_path.write_text(json.dumps(null_probs, separators=(",", ":"), sort_keys=True) + "\n")
            write_manifest(run_dir / (FILES["null_census"] + ".manifest.json"), "null-census", cfg)
    store, report = train_explainer(g, base, ecfg, null_probs)
    out = run_dir / FILES["explainer"]
    store.save(out)
    write_manifest(run_dir / (FILES["explainer"] + ".manifest.json"), "train-explainer", cfg)
    losses = ", ".join(f"{x:.4f}" for x in report.epoch_losses[-3:])
    print(f"wrote {out} ({report.n_queries} queries, last losses [{losses}])")
    return 0


def cmd_explain(args, cfg: RunConfig) -> int:
    run_dir = _run_dir(args)
    g = _load_graph(run_dir)
    base = nn.ParameterStore.load(_need(run_dir, "base"))
    expl = nn.ParameterStore.load(_need(run_dir, "explainer"))
    ecfg = _explainer_cfg(cfg)
    if args.event_id is not None:
        if not (0 <= args.event_id < g.n_events):
            raise DependencyError(f"event id {args.event_id} outside 0..{g.n_events - 1}")
        queries = [g.event(args.event_id)]
    else:
        queries = [q for q, _ in build_eval_query_set(g, cfg.n_queries, cfg.seed)]
    results = [explain(g, base, expl, q, cfg=ecfg, seed=cfg.seed + i)
               for i, q in enumerate(queries)]
    out = run_dir / FILES["explanations"]
    out.write_text("[" + ",".join(r.to_json() for r in results) + "]\n")
    write_manifest(run_dir / (FILES["explanations"] + ".manifest.json"), "explain", cfg)
    print(f"wrote {out} ({len(results)} explanations)")
    return 0


def cmd_evaluate(args, cfg: RunConfig) -> int:
    run_dir = _run_dir(args)
    g = _load_graph(run_dir)
    base = nn.ParameterStore.load(_need(run_dir, "base"))
    expl = nn.ParameterStore.load(_need(run_dir, "explainer"))
    predictor = None
    adapter_cmd = args.adapter or os.environ.get(ADAPTER_ENV)
    if adapter_cmd:
        from .basemodel import ExternalAdapter
        predictor = ExternalAdapter(adapter_cmd.split())
    try:
        report = evaluate_explanations(g, base, expl, n_queries=cfg.n_queries,
                                       cfg=_explainer_cfg(cfg), seed=cfg.seed,
                                       jobs=1 if predictor else cfg.jobs,
                                       predictor=predictor)
    finally:
        if predictor is not None:
            predictor.close()
    out = run_dir / FILES["report"]
    out.write_text(json.dumps(report.to_dict(), separators=(",", ":"), sort_keys=True) + "\n")
    write_curve_csv(run_dir / FILES["curve"], report.rows)
    if args.emit_plot_data:
        with open(run_dir / FILES["plot"], "w", encoding="utf-8") as fh:
            fh.write("level,mean_fidelity,source\n")
            for lv in report.levels:
                fh.write(f"{lv:.2f},{report.mean_fidelity_per_level[lv]!r},model\n")
                fh.write(f"{lv:.2f},{report.baseline_fidelity_per_level[lv]!r},random\n")
    write_manifest(run_dir / (FILES["report"] + ".manifest.json"), "evaluate", cfg)
    print(f"wrote {out} (ACC-AUC {report.acc_auc:.2f} vs random {report.baseline_acc_auc:.2f}, "
          f"{report.explain_seconds_mean * 1000:.1f} ms/explanation)")
    return 0


def cmd_grad_check(args, cfg: RunConfig) -> int:
    from .checks import substrate_grad_checks
    errs = substrate_grad_checks(seed=cfg.seed, points=args.points)
    print(json.dumps(errs, sort_keys=True))
    return 0 if all(v < 1e-4 for v in errs.values()) else 1


def cmd_adapter_serve(args, cfg: RunConfig) -> int:
    run_dir = _run_dir(args)
    g = _load_graph(run_dir)
    base = nn.ParameterStore.load(_need(run_dir, "base"))
    serve_adapter(base, g)
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "census": cmd_census,
    "null-census": cmd_null_census,
    "train-base": cmd_train_base,
    "train-explainer": cmd_train_explainer,
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "grad-check": cmd_grad_check,
    "adapter-serve": cmd_adapter_serve,
}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="JSON config file")
    for f in dataclasses.fields(RunConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type == "bool" or isinstance(f.default, bool):
            parser.add_argument(flag, action="store_true", default=argparse.SUPPRESS)
        else:
            caster = float if f.name in ("p", "beta", "lam", "lr", "delta") else \
                (str if f.name in ("csv", "rule", "prior") else int)
            parser.add_argument(flag, type=caster, default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motifx", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--run-dir", required=(name != "grad-check"),
                       default="run" if name == "grad-check" else None)
        _add_config_flags(p)
        if name == "explain":
            p.add_argument("--event-id", type=int, default=None)
        if name == "evaluate":
            p.add_argument("--emit-plot-data", action="store_true")
            p.add_argument("--adapter", default=None,
                           help=f"external predictor command (default: ${ADAPTER_ENV})")
        if name == "grad-check":
            p.add_argument("--points", type=int, default=1)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {f.name: getattr(args, f.name)
                 for f in dataclasses.fields(RunConfig) if hasattr(args, f.name)}
    try:
        cfg = RunConfig.from_sources(args.config, overrides)
        _emit_warnings(cfg)
        return COMMANDS[args.command](args, cfg)
    except MotifxError as exc:
        code = 2 if isinstance(exc, DependencyError) else 1
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}),
              file=sys.stderr)
        return code
    except (ValueError, OSError) as exc:
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
