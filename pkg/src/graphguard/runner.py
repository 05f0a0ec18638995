"""Experiment configuration, the daily train/score protocol, the ablation grid and reports."""
from __future__ import annotations

import configparser
import csv
import io
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .encoding import (RISK_SUFFIX, Normalizer, RiskEncoder, Split, SplitPlan, encode_table,
                       make_splits)
from .estimator import GraphGuard
from .metrics import MetricReport, ScoredDay, evaluate
from .synthgen import GenConfig, generate
from .transactions import Schema, TransactionTable, ingest_table
from .txgraph import GraphConfig, TransactionGraph, build_day_graph

log = logging.getLogger(__name__)

OUTPUT_ENV = "GRAPHGUARD_OUTPUT"
BUNDLED_CONFIGS = Path(__file__).parent / "configs"

# section -> key -> default; the default's type is the key's type.
# list values are comma separated, list-of-list values use ';' between groups.
DEFAULTS: dict[str, dict] = {
    "data": {
        "path": "", "delimiter": ",", "time": "time", "card_id": "card_id",
        "merchant_id": "merchant_id", "label": "label", "tx_id": "tx_id",
        "categorical": ["category"], "numeric": ["amount", "hour", "merch_lat", "merch_long"],
    },
    "generator": {k: v for k, v in GenConfig().to_dict().items()},
    "encoding": {"risk_fields": ["category"], "normalize_fields": ["auto"]},
    "graph": {"relations": ["card_id"], "features": ["auto"], "theta": 30},
    "sampler": {"subgraph_size": 2, "restart_prob": 0.5, "weighted": False,
                "multi_relational": False, "rounds": 64, "epsilon": 1e-6},
    "train": {"epochs": 40, "learning_rate": 1e-4, "batch_size": 1024, "embedding_dim": 8,
              "rgcn_batch_size": 0, "rgcn_embedding_dim": 0, "seeds": [0]},
    "eval": {"eta": 7, "n_val": 1, "n_test_days": 5, "k": 100},
    "grid": {"relation_sets": [["card_id"], ["card_id", "merchant_id"]], "thetas": [30, 7],
             "variants": ["GG", "GG+WS", "GG+MR", "GG+WS+MR"]},
    "output": {"dir": "runs"},
}

VARIANTS = {
    "GG": (False, False),
    "GG+WS": (True, False),
    "GG+MR": (False, True),
    "GG+WS+MR": (True, True),
}


class ConfigError(ValueError):
    pass


def _parse_value(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, list):
            if default and isinstance(default[0], list):
                return [[x.strip() for x in grp.split(",") if x.strip()] for grp in raw.split(";") if grp.strip()]
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if default and isinstance(default[0], int):
                return [int(x) for x in items]
            return items
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def _format_value(value) -> str:
    if isinstance(value, list):
        if value and isinstance(value[0], list):
            return "; ".join(", ".join(map(str, g)) for g in value)
        return ", ".join(map(str, value))
    return str(value)


@dataclass
class ExperimentConfig:
    """Typed, strictly validated view of an INI-style experiment file."""

    values: dict = field(default_factory=lambda: {s: dict(d) for s, d in DEFAULTS.items()})

    @classmethod
    def from_text(cls, text: str, source: str = "<config>") -> "ExperimentConfig":
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        parser.read_string(text, source=source)
        cfg = cls()
        for section in parser.sections():
            if section not in DEFAULTS:
                raise ConfigError(f"{source}: unknown section [{section}]")
            for key, raw in parser.items(section):
                cfg.set(section, key, raw, source)
        cfg.validate()
        return cfg

    @classmethod
    def from_file(cls, path: str | Path | None) -> "ExperimentConfig":
        """Load a config file; a bare name like ``small`` picks a bundled config."""
        if path is None:
            return cls()
        path = Path(path)
        if not path.exists():
            bundled = BUNDLED_CONFIGS / f"{path.stem}.ini"
            if path.parent == Path(".") and bundled.exists():
                path = bundled
            else:
                raise FileNotFoundError(path)
        return cls.from_text(path.read_text(), str(path))

    def set(self, section: str, key: str, raw, source: str = "override") -> None:
        if section not in DEFAULTS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        if key not in DEFAULTS[section]:
            raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
        default = DEFAULTS[section][key]
        value = raw if not isinstance(raw, str) else _parse_value(raw, default, f"{source}: [{section}] {key}")
        self.values[section][key] = value

    def override(self, assignments) -> "ExperimentConfig":
        """Apply ``section.key=value`` strings."""
        for a in assignments or ():
            if "=" not in a or "." not in a.split("=", 1)[0]:
                raise ConfigError(f"override {a!r} is not of the form section.key=value")
            lhs, raw = a.split("=", 1)
            section, key = lhs.split(".", 1)
            self.set(section.strip(), key.strip(), raw)
        self.validate()
        return self

    def validate(self) -> None:
        v = self.values
        if not v["train"]["seeds"]:
            raise ConfigError("[train] seeds must not be empty")
        if len(v["grid"]["relation_sets"]) != len(v["grid"]["thetas"]):
            raise ConfigError("[grid] relation_sets and thetas must have the same length")
        for name in v["grid"]["variants"]:
            if name not in VARIANTS:
                raise ConfigError(f"[grid] unknown variant {name!r}; choose from {list(VARIANTS)}")
        if not v["graph"]["relations"]:
            raise ConfigError("[graph] relations must not be empty")

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    def to_text(self) -> str:
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        for section, items in self.values.items():
            parser[section] = {k: _format_value(val) for k, val in items.items()}
        buf = io.StringIO()
        parser.write(buf)
        return buf.getvalue()

    # ---- typed views -------------------------------------------------

    def gen_config(self, seed: int | None = None) -> GenConfig:
        kw = dict(self.values["generator"])
        if seed is not None:
            kw["seed"] = seed
        return GenConfig(**kw)

    def schema(self) -> Schema:
        d = self.values["data"]
        return Schema(time=d["time"], card_id=d["card_id"], merchant_id=d["merchant_id"],
                      label=d["label"], tx_id=d["tx_id"] or None,
                      categorical=tuple(d["categorical"]), numeric=tuple(d["numeric"]),
                      delimiter=d["delimiter"])

    def split_plan(self, n_days: int) -> SplitPlan:
        e = self.values["eval"]
        return make_splits(n_days, e["eta"], e["n_val"], e["n_test_days"])

    def detector(self, seed: int, weighted: bool | None = None,
                 multi_relational: bool | None = None) -> GraphGuard:
        s, t = self.values["sampler"], self.values["train"]
        weighted = s["weighted"] if weighted is None else weighted
        multi_relational = s["multi_relational"] if multi_relational is None else multi_relational
        batch, dim = t["batch_size"], t["embedding_dim"]
        if multi_relational:
            batch = t["rgcn_batch_size"] or batch
            dim = t["rgcn_embedding_dim"] or dim
        return GraphGuard(subgraph_size=s["subgraph_size"], restart_prob=s["restart_prob"],
                          weighted=weighted, multi_relational=multi_relational, rounds=s["rounds"],
                          epsilon=s["epsilon"], epochs=t["epochs"], learning_rate=t["learning_rate"],
                          batch_size=batch, embedding_dim=dim, random_state=seed)


def load_table(config: ExperimentConfig) -> TransactionTable:
    path = config["data"]["path"]
    if path:
        return ingest_table(path, config.schema())
    return generate(config.gen_config())


def output_root(config: ExperimentConfig, explicit: str | None = None) -> Path:
    if explicit:
        return Path(explicit)
    env = os.environ.get(OUTPUT_ENV)
    out = Path(config["output"]["dir"])
    return Path(env) / out if env and not out.is_absolute() else out


# ---- one split ----------------------------------------------------------------

@dataclass
class SplitResult:
    split: Split
    seed: int
    model: GraphGuard
    validation: list[ScoredDay]
    test: ScoredDay
    report: MetricReport
    risk: RiskEncoder | None
    normalizer: Normalizer | None


def fit_encoders(config: ExperimentConfig, table: TransactionTable, split: Split):
    """Encoders fitted on the split's train + validation days only."""
    fit_rows = table.subset(np.isin(table.days, split.fit_days))
    risk_fields = config["encoding"]["risk_fields"]
    norm_fields = config["encoding"]["normalize_fields"]
    if norm_fields == ["auto"]:
        norm_fields = list(table.numeric)
    risk = RiskEncoder(fields=tuple(risk_fields)).fit(fit_rows) if risk_fields else None
    norm = Normalizer(fields=tuple(norm_fields)).fit(fit_rows) if norm_fields else None
    return risk, norm


def feature_columns(config: ExperimentConfig, table: TransactionTable) -> tuple[str, ...]:
    feats = config["graph"]["features"]
    if feats == ["auto"]:
        feats = list(table.numeric) + [f + RISK_SUFFIX for f in config["encoding"]["risk_fields"]]
    return tuple(feats)


class GraphCache:
    """Day-graph topologies keyed by (day, relations, theta); features are re-attached per split."""

    def __init__(self):
        self._graphs: dict = {}

    def get(self, encoded: TransactionTable, day: int, config: GraphConfig) -> TransactionGraph:
        key = (day, config.relations, config.theta)
        if key not in self._graphs:
            self._graphs[key] = build_day_graph(encoded, day, config)
            return self._graphs[key]
        g = self._graphs[key]
        frame = encoded.frame
        rows = pd.Index(frame["tx_id"]).get_indexer(g.tx_ids)
        feats = frame[list(config.features)].to_numpy(dtype=np.float64)[rows]
        return g.with_features(feats)


def split_graphs(config: ExperimentConfig, table: TransactionTable, split: Split,
                 relations=None, theta=None, cache: GraphCache | None = None):
    """Encode with split-local encoders and build the train/val/test day graphs."""
    risk, norm = fit_encoders(config, table, split)
    encoded = encode_table(table, risk, norm)
    gcfg = GraphConfig(relations=tuple(relations or config["graph"]["relations"]),
                       features=feature_columns(config, table),
                       theta=theta or config["graph"]["theta"])
    cache = cache or GraphCache()
    graphs = {d: cache.get(encoded, d, gcfg) for d in (*split.train_days, *split.val_days, split.test_day)}
    return graphs, risk, norm


def run_split(config: ExperimentConfig, table: TransactionTable, split: Split, seed: int, *,
              relations=None, theta=None, weighted=None, multi_relational=None,
              cache: GraphCache | None = None) -> SplitResult:
    """Train on the split's train days, tune the threshold on validation, score the test day."""
    try:
        graphs, risk, norm = split_graphs(config, table, split, relations, theta, cache)
        model = config.detector(seed, weighted, multi_relational)
        model.fit([graphs[d] for d in split.train_days])
        validation = [model.score_day(graphs[d]) for d in split.val_days]
        test = model.score_day(graphs[split.test_day])
        report = evaluate(validation, [test], k=config["eval"]["k"])
    except Exception as exc:
        raise RuntimeError(f"split test_day={split.test_day} seed={seed}: {exc}") from exc
    return SplitResult(split, seed, model, validation, test, report, risk, norm)


# ---- grid ---------------------------------------------------------------------

METRICS = ("pr_auc", "f1", "npr_at_k")


def run_grid(config: ExperimentConfig, table: TransactionTable, out_dir: Path | None = None) -> dict:
    """All variants x relation sets x splits x seeds; a failing cell is recorded and skipped."""
    plan = config.split_plan(table.n_days)
    grid = config["grid"]
    cache = GraphCache()
    cells = []
    for rels, theta in zip(grid["relation_sets"], grid["thetas"]):
        for variant in grid["variants"]:
            weighted, multi = VARIANTS[variant]
            for split in plan:
                for seed in config["train"]["seeds"]:
                    cell = {"variant": variant, "relations": list(rels), "theta": theta,
                            "test_day": split.test_day, "seed": seed}
                    try:
                        res = run_split(config, table, split, seed, relations=rels, theta=theta,
                                        weighted=weighted, multi_relational=multi, cache=cache)
                    except RuntimeError as exc:
                        log.warning("grid cell failed: %s", exc)
                        cell["error"] = str(exc)
                        cells.append(cell)
                        continue
                    day = res.report.per_day[0]
                    cell.update({m: day[m] for m in METRICS})
                    cell["threshold"] = res.report.threshold
                    cell["n_fraud"] = day["n_fraud"]
                    cells.append(cell)
                    if out_dir is not None:
                        cdir = Path(out_dir) / "cells" / cell_name(cell)
                        cdir.mkdir(parents=True, exist_ok=True)
                        write_scores(cdir / "scores.csv", [res.test])
    return {"k": config["eval"]["k"], "cells": cells, "rows": aggregate(cells, grid)}


def cell_name(cell: dict) -> str:
    return f"{cell['variant'].replace('+', '_')}__{'-'.join(cell['relations'])}__day{cell['test_day']}__seed{cell['seed']}"


def _mean_std(vals):
    vals = [v for v in vals if v is not None]
    if not vals:
        return None, None
    return float(np.mean(vals)), float(np.std(vals))


def aggregate(cells: list[dict], grid: dict | None = None) -> list[dict]:
    """One row per (relation set, variant): mean/std over all cells, plus day- and seed-wise spreads."""
    keys = []
    for c in cells:
        key = (tuple(c["relations"]), c["variant"])
        if key not in keys:
            keys.append(key)
    order = list(VARIANTS)
    keys.sort(key=lambda k: (k[0] if grid is None else [tuple(r) for r in grid["relation_sets"]].index(k[0]),
                             order.index(k[1])))
    rows = []
    for rels, variant in keys:
        sel = [c for c in cells if tuple(c["relations"]) == rels and c["variant"] == variant]
        ok = [c for c in sel if "error" not in c]
        weighted, multi = VARIANTS[variant]
        row = {"relations": list(rels), "variant": variant, "GG": True, "WS": weighted, "MR": multi,
               "n_cells": len(sel), "n_failed": len(sel) - len(ok)}
        for m in METRICS:
            row[m], row[m + "_std"] = _mean_std([c.get(m) for c in ok])
            days = sorted({c["test_day"] for c in ok})
            seeds = sorted({c["seed"] for c in ok})
            per_day = [_mean_std([c.get(m) for c in ok if c["test_day"] == d])[0] for d in days]
            per_seed = [_mean_std([c.get(m) for c in ok if c["seed"] == s])[0] for s in seeds]
            row[m + "_std_days"] = _mean_std(per_day)[1]
            row[m + "_std_seeds"] = _mean_std(per_seed)[1]
        row["npr_absent_days"] = sum(1 for c in ok if c.get("npr_at_k") is None)
        rows.append(row)
    return rows


def _pct(mean, std) -> str:
    if mean is None:
        return "n/a"
    return f"{100 * mean:.2f} ± {100 * std:.2f}"


def format_table(rows: list[dict], k: int = 100, delimiter: str | None = None) -> str:
    """Variant table in percent, ``mean ± std``; plain-text or delimited."""
    header = ["Graph Relations", "GG", "WS", "MR", "PR-AUC", "F1-Score", f"NPr@{k}"]
    body = []
    for r in rows:
        rel = " + ".join(r["relations"])
        body.append([rel, "x" if r["GG"] else "", "x" if r["WS"] else "", "x" if r["MR"] else "",
                     _pct(r["pr_auc"], r["pr_auc_std"]), _pct(r["f1"], r["f1_std"]),
                     _pct(r["npr_at_k"], r["npr_at_k_std"])])
    if delimiter is not None:
        buf = io.StringIO()
        w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
        w.writerow(header)
        w.writerows(body)
        return buf.getvalue()
    widths = [max(len(str(x)) for x in col) for col in zip(header, *body)]
    lines = ["  ".join(str(x).ljust(w) for x, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(str(x).ljust(w) for x, w in zip(row, widths)) for row in body]
    lines.append("Percent; mean ± std over test days and seeds. Days without fraud are excluded from NPr@k.")
    return "\n".join(lines) + "\n"


# ---- persistence ----------------------------------------------------------------

def write_scores(path: str | Path, days: list[ScoredDay]) -> None:
    with open(path, "w") as fh:
        fh.write("tx_id,day,score,label\n")
        for d in days:
            for t, s, y in zip(d.tx_ids.tolist(), d.scores.tolist(), d.labels.tolist()):
                fh.write(f"{t},{d.day},{s!r},{y}\n")


def read_scores(path: str | Path) -> list[ScoredDay]:
    frame = pd.read_csv(path, dtype={"tx_id": np.int64, "day": np.int64, "score": np.float64,
                                     "label": np.int64}, float_precision="round_trip")
    return [ScoredDay(day=int(day), tx_ids=g["tx_id"].to_numpy(), scores=g["score"].to_numpy(),
                      labels=g["label"].to_numpy())
            for day, g in frame.groupby("day", sort=True)]


def write_manifest(path: str | Path, config: ExperimentConfig, **extra) -> None:
    manifest = {"version": __version__, "config": config.to_text(), **extra}
    Path(path).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def write_json(path: str | Path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
