"""Command-line entry point: ``sgas search|experiment|ablation|kendall|export-dot|gen-data``."""
from __future__ import annotations

import argparse
import csv
import dataclasses
import itertools
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .datasets import Dataset, DatasetError, load_csv, make_blobs, make_spirals, split
from .evaluation import EvalConfig, run_experiment, tau_by_method, write_csv
from .search import CRITERIA, ConfigError, SearchConfig, run_search
from .supernet import Genotype, SearchSpaceError, config_digest

log = logging.getLogger("sgas")

OUT_ENV = "SGAS_OUT_DIR"
EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- config

DATASET_DEFAULTS = {"kind": "spirals", "n_per_class": 200, "classes": 3, "noise": 0.15,
                    "turns": 1.5, "spread": 0.3, "width": 32, "seed": 0,
                    "fractions": [0.4, 0.4, 0.2], "split_seed": 0, "label_column": "label"}


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(cfg, dict):
        raise UsageError(f"{path}: top level must be an object")
    return cfg


def build_dataset(spec: dict | None) -> Dataset:
    unknown = set(spec or {}) - set(DATASET_DEFAULTS) - {"path"}
    if unknown:
        raise UsageError(f"dataset: unknown fields {sorted(unknown)}")
    d = {**DATASET_DEFAULTS, **(spec or {})}
    kind = d["kind"]
    try:
        if kind == "spirals":
            ds = make_spirals(d["n_per_class"], d["classes"], d["noise"], d["seed"], d["width"], d["turns"])
        elif kind == "blobs":
            ds = make_blobs(d["n_per_class"], d["classes"], d["spread"], d["seed"], d["width"])
        elif kind == "csv":
            if "path" not in d:
                raise UsageError("dataset.path: required for kind 'csv'")
            ds = load_csv(d["path"], d["label_column"])
        else:
            raise UsageError(f"dataset.kind: unknown kind {kind!r}")
        return split(ds, tuple(d["fractions"]), d["split_seed"])
    except DatasetError as exc:
        raise UsageError(f"dataset: {exc}") from None


def parse_search_config(cfg: dict, seed: int | None = None, **overrides) -> SearchConfig:
    fields = {k: v for k, v in cfg.items() if k not in ("dataset", "eval")}
    fields.update({k: v for k, v in overrides.items() if v is not None})
    if seed is not None:
        fields["seed"] = seed
    try:
        return SearchConfig.from_dict(fields)
    except ConfigError as exc:
        raise UsageError(f"config field {exc}") from None
    except TypeError as exc:
        raise UsageError(f"config: {exc}") from None


def parse_eval_config(cfg: dict) -> EvalConfig:
    try:
        return EvalConfig.from_dict(cfg.get("eval", {}))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"eval: {exc}") from None


def out_dir(arg: str | None) -> Path:
    p = Path(arg or os.environ.get(OUT_ENV, "sgas_runs"))
    p.mkdir(parents=True, exist_ok=True)
    return p


def write_manifest(path: Path, config: dict, seed: int, started: float, outputs: list[str]) -> None:
    manifest = {
        "config_digest": config_digest(config),
        "tool_version": __version__,
        "seed": seed,
        "started": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "finished": datetime.now(timezone.utc).isoformat(),
        "wall_clock_s": round(time.time() - started, 3),
        "outputs": outputs,
    }
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- commands

def cmd_search(args) -> int:
    started = time.time()
    raw = load_config(args.config)
    cfg = parse_search_config(raw, args.seed)
    ds = build_dataset(raw.get("dataset"))
    out = out_dir(args.out)
    events_path = out / "events.jsonl"
    with open(events_path, "w") as events:
        def on_event(rec):
            events.write(json.dumps(rec, sort_keys=True) + "\n")
        result = run_search(cfg, ds, on_event=on_event)
    (out / "genotype.json").write_text(result.genotype.to_json())
    (out / "result.json").write_text(result.to_json())
    full = {**raw, **cfg.to_dict()}
    write_manifest(out, full, cfg.seed, started,
                   ["genotype.json", "events.jsonl", "result.json", "manifest.json"])
    print(f"{cfg.criterion}: val_acc={result.final_val_acc:.4f} params={result.num_parameters} "
          f"decisions={len(result.decisions)} -> {out}")
    return EXIT_OK


def _methods(arg: str) -> list[str]:
    methods = [m.strip() for m in arg.split(",") if m.strip()]
    bad = [m for m in methods if m not in CRITERIA]
    if bad or not methods:
        raise UsageError(f"--methods: unknown method(s) {bad}; choose from {list(CRITERIA)}")
    return methods


def cmd_experiment(args) -> int:
    started = time.time()
    raw = load_config(args.config)
    cfg = parse_search_config(raw, args.seed)
    ev = parse_eval_config(raw)
    ds = build_dataset(raw.get("dataset"))
    if args.runs < 2:
        raise UsageError("--runs must be >= 2")
    methods = _methods(args.methods)
    out = out_dir(args.out)
    partial = out / "partial.jsonl"
    partial.unlink(missing_ok=True)
    reports, outputs = [], []
    for m in methods:
        rep = run_experiment(m, args.runs, cfg, ev, ds, jobs=args.jobs,
                             ranking_metric=args.ranking, partial_path=partial)
        name = f"report_{m}.json"
        (out / name).write_text(rep.to_json())
        outputs.append(name)
        reports.append(rep)
        print(f"{m}: tau={rep.tau:.4f} test_err={rep.summary()['test_err_mean']:.4f}")
    write_csv(reports, out / "summary.csv")
    partial.unlink(missing_ok=True)
    write_manifest(out, {**raw, **cfg.to_dict(), "methods": methods, "runs": args.runs},
                   cfg.seed, started, outputs + ["summary.csv", "manifest.json"])
    return EXIT_OK


ABLATION_INTERVALS = (3, 5, 7)
ABLATION_WINDOWS = (2, 4, 6)


def ablation_configs(base: SearchConfig, intervals=ABLATION_INTERVALS, windows=ABLATION_WINDOWS):
    """One SGAS (Cri.2) config per (interval, window); epochs grow if the schedule needs it."""
    for T, K in itertools.product(intervals, windows):
        needed = base.warm_up_epochs + T * (base.decisions_needed - 1) + 1
        yield T, K, dataclasses.replace(base, criterion="cri2", decision_interval=T,
                                        history_window=K, epochs=max(base.epochs, needed))


def cmd_ablation(args) -> int:
    started = time.time()
    raw = load_config(args.config)
    base = parse_search_config({**raw, "criterion": "cri2"}, args.seed)
    ev = parse_eval_config(raw)
    ds = build_dataset(raw.get("dataset"))
    out = out_dir(args.out)
    rows = []
    for T, K, cfg in ablation_configs(base):
        rep = run_experiment("cri2", args.runs, cfg, ev, ds, jobs=args.jobs)
        s = rep.summary()
        rows.append({"T": T, "K": K, "epochs": cfg.epochs, "runs": args.runs,
                     "params_mean": s["params_mean"], "params_std": s["params_std"],
                     "test_err_mean": s["test_err_mean"], "test_err_std": s["test_err_std"],
                     "best_test_err": min(o.test_err for o in rep.outcomes), "tau": rep.tau})
        print(f"T={T} K={K}: test_err={s['test_err_mean']:.4f}±{s['test_err_std']:.4f} tau={rep.tau:.4f}")
    with open(out / "ablation.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    write_manifest(out, {**raw, "runs": args.runs}, base.seed, started, ["ablation.csv", "manifest.json"])
    return EXIT_OK


def cmd_kendall(args) -> int:
    try:
        taus = tau_by_method(args.csv)
    except FileNotFoundError:
        raise UsageError(f"file not found: {args.csv}") from None
    except (ValueError, KeyError) as exc:
        raise UsageError(str(exc)) from None
    if len(taus) == 1:
        print(f"{float(next(iter(taus.values()))):.4f}")
    else:
        for method, tau in taus.items():
            print(f"{method}: {float(tau):.4f}")
    return EXIT_OK


def cmd_export_dot(args) -> int:
    try:
        g = Genotype.from_json(Path(args.genotype).read_text())
    except FileNotFoundError:
        raise UsageError(f"file not found: {args.genotype}") from None
    except SearchSpaceError as exc:
        raise UsageError(str(exc)) from None
    sys.stdout.write(g.to_dot())
    return EXIT_OK


def cmd_gen_data(args) -> int:
    if args.kind == "spirals":
        ds = make_spirals(args.n, args.classes, args.noise, args.seed, args.width, args.turns)
    elif args.kind == "blobs":
        ds = make_blobs(args.n, args.classes, args.spread, args.seed, args.width)
    else:
        raise UsageError(f"unknown kind {args.kind!r}; choose spirals or blobs")
    ds.to_csv(args.out)
    print(f"wrote {len(ds)} rows to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sgas", description="Sequential greedy architecture search on toy data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("search", help="run one search")
    s.add_argument("--config", required=True)
    s.add_argument("--out")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_search)

    e = sub.add_parser("experiment", help="multi-run search/evaluation correlation")
    e.add_argument("--config", required=True)
    e.add_argument("--out")
    e.add_argument("--seed", type=int)
    e.add_argument("--runs", type=int, default=10)
    e.add_argument("--methods", default="cri1,cri2,darts1,random")
    e.add_argument("--jobs", type=int, default=1)
    e.add_argument("--ranking", choices=("final", "best"), default="final",
                   help="which search validation accuracy ranks the runs")
    e.set_defaults(func=cmd_experiment)

    a = sub.add_parser("ablation", help="decision interval / history window grid")
    a.add_argument("--config", required=True)
    a.add_argument("--out")
    a.add_argument("--seed", type=int)
    a.add_argument("--runs", type=int, default=2)
    a.add_argument("--jobs", type=int, default=1)
    a.set_defaults(func=cmd_ablation)

    k = sub.add_parser("kendall", help="Kendall tau of a results CSV")
    k.add_argument("csv")
    k.set_defaults(func=cmd_kendall)

    d = sub.add_parser("export-dot", help="genotype JSON to Graphviz DOT")
    d.add_argument("genotype")
    d.set_defaults(func=cmd_export_dot)

    g = sub.add_parser("gen-data", help="write a synthetic dataset as CSV")
    g.add_argument("--kind", required=True)
    g.add_argument("--n", type=int, default=100, help="samples per class")
    g.add_argument("--classes", type=int, default=3)
    g.add_argument("--noise", type=float, default=0.15)
    g.add_argument("--turns", type=float, default=1.5)
    g.add_argument("--spread", type=float, default=0.3)
    g.add_argument("--width", type=int, default=32)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"sgas: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        log.debug("runtime failure", exc_info=True)
        print(f"sgas: runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
