"""Command line entry point: generate, train, score, evaluate, grid, report."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import nn
from .encoding import encode_table, load_encoders, save_encoders
from .metrics import evaluate
from .runner import (ConfigError, ExperimentConfig, GraphCache, VARIANTS, aggregate, feature_columns,
                     fit_encoders, format_table, load_table, output_root, read_scores, run_grid,
                     write_json, write_manifest, write_scores)
from .synthgen import generate
from .txgraph import GraphConfig

log = logging.getLogger("graphguard")


def _config(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config)
    return cfg.override(args.set)


def _pick_split(cfg, table, index: int):
    plan = cfg.split_plan(table.n_days)
    try:
        return plan[index]
    except IndexError:
        raise ConfigError(f"split index {index} out of range for {len(plan)} splits") from None


def cmd_generate(args) -> int:
    cfg = _config(args)
    table = generate(cfg.gen_config(seed=args.seed))
    table.write(args.out)
    log.info("wrote %d transactions (%d frauds) to %s", len(table), int(table.frame.label.sum()), args.out)
    return 0


def _graphs_for(cfg, table, split, risk, norm):
    encoded = encode_table(table, risk, norm)
    gcfg = GraphConfig(tuple(cfg["graph"]["relations"]), feature_columns(cfg, table), cfg["graph"]["theta"])
    cache = GraphCache()
    return {d: cache.get(encoded, d, gcfg) for d in (*split.train_days, *split.val_days, split.test_day)}


def cmd_train(args) -> int:
    cfg = _config(args)
    table = load_table(cfg)
    split = _pick_split(cfg, table, args.split)
    seed = cfg["train"]["seeds"][0] if args.seed is None else args.seed
    risk, norm = fit_encoders(cfg, table, split)
    graphs = _graphs_for(cfg, table, split, risk, norm)
    model = cfg.detector(seed).fit([graphs[d] for d in split.train_days])
    out = output_root(cfg, args.out)
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "model.ckpt")
    save_encoders(out / "encoders.tsv", risk, norm)
    with open(out / "loss.csv", "w") as fh:
        fh.write("batch,loss\n")
        for i, loss in enumerate(model.history_["batch_loss"]):
            fh.write(f"{i},{loss!r}\n")
    write_manifest(out / "manifest.json", cfg, seed=seed, split=args.split,
                   train_days=list(split.train_days), val_days=list(split.val_days),
                   test_day=split.test_day)
    log.info("trained on days %s; checkpoint in %s", list(split.train_days), out)
    return 0


def cmd_score(args) -> int:
    run = Path(args.run)
    manifest = json.loads((run / "manifest.json").read_text())
    cfg = ExperimentConfig.from_text(manifest["config"], str(run / "manifest.json")).override(args.set)
    table = load_table(cfg)
    split = _pick_split(cfg, table, manifest["split"])
    risk, norm = load_encoders(run / "encoders.tsv")
    graphs = _graphs_for(cfg, table, split, risk, norm)
    model = cfg.detector(manifest["seed"]).set_fitted_params(nn.load_checkpoint(run / "model.ckpt"))
    write_scores(run / "val_scores.csv", [model.score_day(graphs[d]) for d in split.val_days])
    write_scores(run / "scores.csv", [model.score_day(graphs[split.test_day])])
    log.info("scores written to %s", run)
    return 0


def cmd_evaluate(args) -> int:
    run = Path(args.run)
    manifest = json.loads((run / "manifest.json").read_text())
    cfg = ExperimentConfig.from_text(manifest["config"])
    k = cfg["eval"]["k"] if args.k is None else args.k
    report = evaluate(read_scores(run / "val_scores.csv"), read_scores(run / "scores.csv"), k=k)
    write_json(run / "metrics.json", report.to_dict())
    for d in report.per_day:
        print(f"day {d['day']}: pr_auc={d['pr_auc']} f1={d['f1']:.4f} npr@{k}={d['npr_at_k']} "
              f"(threshold {report.threshold:.6g})")
    return 0


def cmd_grid(args) -> int:
    cfg = _config(args)
    table = load_table(cfg)
    out = output_root(cfg, args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = run_grid(cfg, table, out)
    write_json(out / "results.json", results)
    write_manifest(out / "manifest.json", cfg, seeds=cfg["train"]["seeds"])
    (out / "table.csv").write_text(format_table(results["rows"], results["k"], delimiter=","))
    (out / "table.txt").write_text(format_table(results["rows"], results["k"]))
    sys.stdout.write(format_table(results["rows"], results["k"]))
    return 0


def cmd_report(args) -> int:
    results = json.loads(Path(args.results).read_text())
    rows = aggregate(results["cells"]) if args.recompute else results["rows"]
    sys.stdout.write(format_table(rows, results["k"], delimiter="," if args.csv else None))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="graphguard", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out=True):
        sp.add_argument("--config", help="INI experiment file (defaults apply when omitted)")
        sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                        help="override a config key; repeatable")
        if out:
            sp.add_argument("--out", help="output path (default: [output] dir, under $GRAPHGUARD_OUTPUT)")

    sp = sub.add_parser("generate", help="write a synthetic transaction file")
    common(sp, out=False)
    sp.add_argument("--seed", type=int, default=None)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("train", help="train one split and save a checkpoint")
    common(sp)
    sp.add_argument("--split", type=int, default=-1, help="index into the rolling plan (default: last)")
    sp.add_argument("--seed", type=int, default=None)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("score", help="score validation and test days with a trained run")
    sp.add_argument("--run", required=True, help="directory written by `train`")
    sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    sp.set_defaults(func=cmd_score)

    sp = sub.add_parser("evaluate", help="metrics for a scored run")
    sp.add_argument("--run", required=True)
    sp.add_argument("--k", type=int, default=None)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("grid", help=f"ablation grid over {', '.join(VARIANTS)}")
    common(sp)
    sp.set_defaults(func=cmd_grid)

    sp = sub.add_parser("report", help="render a stored grid result")
    sp.add_argument("--results", required=True)
    sp.add_argument("--csv", action="store_true")
    sp.add_argument("--recompute", action="store_true", help="re-aggregate from the stored cells")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"graphguard {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
