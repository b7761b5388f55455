"""Retraining, Kendall tau and the multi-run search/evaluation experiment."""
from __future__ import annotations

import csv
import dataclasses
import io
import json
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from .datasets import Dataset
from .estimators import StandaloneClassifier
from .search import SearchConfig, SearchResult, run_search
from .supernet import Genotype

CSV_FIELDS = ("method", "run", "val_err", "test_err", "params", "rank_search", "rank_eval", "tau")


@dataclass
class EvalConfig:
    epochs: int = 100
    batch_size: int = 64
    lr: float = 0.025
    momentum: float = 0.9
    weight_decay: float = 3e-4
    grad_clip: float = 5.0
    cells: int | None = 3
    width: int | None = 32

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown eval config fields: {sorted(unknown)}")
        return cls(**d)


@dataclass
class RunOutcome:
    run_id: int
    seed: int
    val_err: float
    test_err: float
    params: int
    genotype: dict = field(default_factory=dict)
    val_loss: float = 0.0

    def __post_init__(self):
        for name in ("val_err", "test_err"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


def retrain(genotype: Genotype, config: EvalConfig, dataset: Dataset, seed: int = 0) -> dict:
    """Train ``genotype`` from scratch on w_train + alpha_val; score on test."""
    clf = StandaloneClassifier(genotype, cells=config.cells, width=config.width,
                               epochs=config.epochs, batch_size=config.batch_size, lr=config.lr,
                               momentum=config.momentum, weight_decay=config.weight_decay,
                               grad_clip=config.grad_clip, random_state=seed)
    X, y = dataset.train_full()
    clf.fit(X, y)
    Xt, yt = dataset.part("test")
    return {"test_acc": float(clf.score(Xt, yt)), "params": int(clf.n_parameters_),
            "loss_curve": clf.loss_curve_}


# ---------------------------------------------------------------- ranking

def rank(values: Sequence) -> list[int]:
    """1-based ascending ranks; equal values are ordered by position.

    Values may be tuples, which rank lexicographically.
    """
    order = sorted(range(len(values)), key=lambda i: (values[i], i))
    ranks = [0] * len(values)
    for r, i in enumerate(order, start=1):
        ranks[i] = r
    return ranks


def _check_ranking(r: Sequence[int], n: int, label: str) -> None:
    if sorted(int(x) for x in r) != list(range(1, n + 1)):
        raise ValueError(f"{label} is not a permutation of 1..{n}: {list(r)}")


def concordance(a: Sequence[int], b: Sequence[int]) -> tuple[int, int]:
    """Numbers of concordant and discordant pairs."""
    nc = nd = 0
    n = len(a)
    for i in range(n):
        for j in range(i + 1, n):
            s = (a[i] - a[j]) * (b[i] - b[j])
            if s > 0:
                nc += 1
            elif s < 0:
                nd += 1
    return nc, nd


def kendall_tau_exact(a: Sequence[int], b: Sequence[int]) -> Fraction:
    if len(a) != len(b):
        raise ValueError(f"rankings differ in length: {len(a)} vs {len(b)}")
    n = len(a)
    if n < 2:
        raise ValueError("need at least 2 items")
    _check_ranking(a, n, "first ranking")
    _check_ranking(b, n, "second ranking")
    nc, nd = concordance(a, b)
    return Fraction(nc - nd, n * (n - 1) // 2)


def kendall_tau(a: Sequence[int], b: Sequence[int]) -> float:
    return float(kendall_tau_exact(a, b))


# ---------------------------------------------------------------- experiment

def _mean_std(xs: Sequence[float]) -> tuple[float, float]:
    if len(xs) < 2:
        return float(xs[0]), 0.0
    return statistics.fmean(xs), statistics.stdev(xs)


@dataclass
class ExperimentReport:
    method: str
    outcomes: list[RunOutcome]
    ranking_metric: str = "final"

    def __post_init__(self):
        if len(self.outcomes) < 2:
            raise ValueError("an experiment needs at least 2 runs")

    @property
    def search_ranking(self) -> list[int]:
        # a supernet often hits zero validation error; its loss still orders the runs
        return rank([(o.val_err, o.val_loss) for o in self.outcomes])

    @property
    def eval_ranking(self) -> list[int]:
        return rank([o.test_err for o in self.outcomes])

    @property
    def tau(self) -> float:
        return kendall_tau(self.search_ranking, self.eval_ranking)

    def summary(self) -> dict:
        te_m, te_s = _mean_std([o.test_err for o in self.outcomes])
        p_m, p_s = _mean_std([float(o.params) for o in self.outcomes])
        va_m, va_s = _mean_std([o.val_err for o in self.outcomes])
        return {"test_err_mean": te_m, "test_err_std": te_s, "params_mean": p_m,
                "params_std": p_s, "val_err_mean": va_m, "val_err_std": va_s}

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "ranking_metric": self.ranking_metric,
            "val_split": "alpha_val",
            "outcomes": [dataclasses.asdict(o) for o in self.outcomes],
            "search_ranking": self.search_ranking,
            "eval_ranking": self.eval_ranking,
            "kendall_tau": self.tau,
            **self.summary(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def csv_rows(self) -> list[dict]:
        rs, re_, tau = self.search_ranking, self.eval_ranking, self.tau
        return [
            {"method": self.method, "run": o.run_id, "val_err": o.val_err, "test_err": o.test_err,
             "params": o.params, "rank_search": rs[k], "rank_eval": re_[k], "tau": tau}
            for k, o in enumerate(self.outcomes)
        ]


def write_csv(reports: Sequence[ExperimentReport], path=None) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    w.writeheader()
    for rep in reports:
        w.writerows(rep.csv_rows())
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def run_one(method: str, run_id: int, seed: int, search_config: SearchConfig,
            eval_config: EvalConfig, dataset: Dataset,
            ranking_metric: str = "final") -> tuple[RunOutcome, SearchResult]:
    cfg = dataclasses.replace(search_config, criterion=method, seed=seed)
    result = run_search(cfg, dataset)
    ev = retrain(result.genotype, eval_config, dataset, seed=seed)
    outcome = RunOutcome(run_id, seed, 1.0 - result.val_acc(ranking_metric), 1.0 - ev["test_acc"],
                         ev["params"], result.genotype.to_dict(), result.final_val_loss)
    return outcome, result


def run_experiment(method: str, n_runs: int, search_config: SearchConfig, eval_config: EvalConfig,
                   dataset: Dataset, seeds: Sequence[int] | None = None, jobs: int = 1,
                   ranking_metric: str = "final", partial_path=None) -> ExperimentReport:
    """Independent searches, each retrained from scratch, ranked in both phases.

    Run ``k`` uses seed ``seeds[k]`` (default ``search_config.seed + k``).
    Completed outcomes are appended to ``partial_path`` (JSONL) as they
    finish, so a failing run leaves the earlier ones on disk.
    """
    if n_runs < 2:
        raise ValueError("n_runs must be >= 2")
    if ranking_metric not in ("final", "best"):
        raise ValueError("ranking_metric must be 'final' or 'best'")
    seeds = list(seeds) if seeds is not None else [search_config.seed + k for k in range(n_runs)]
    if len(seeds) != n_runs:
        raise ValueError("need one seed per run")

    def job(k):
        outcome, _ = run_one(method, k, seeds[k], search_config, eval_config, dataset, ranking_metric)
        if partial_path is not None:
            with open(partial_path, "a") as fh:
                fh.write(json.dumps({"method": method, **dataclasses.asdict(outcome)}, sort_keys=True) + "\n")
        return outcome

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(job, range(n_runs)))
    else:
        outcomes = [job(k) for k in range(n_runs)]
    outcomes.sort(key=lambda o: o.run_id)
    return ExperimentReport(method, outcomes, ranking_metric)


def ranks_from_table(val_err: Sequence[float], test_err: Sequence[float]) -> tuple[list[int], list[int]]:
    return rank(val_err), rank(test_err)


def _column_ranks(rows: list[dict], rank_col: str, value_col: str, path) -> list[int]:
    if rank_col in rows[0]:
        return [int(r[rank_col]) for r in rows]
    if value_col in rows[0]:
        return rank([float(r[value_col]) for r in rows])
    raise ValueError(f"{path}: need a {value_col} or {rank_col} column")


def tau_by_method(path) -> dict[str, Fraction]:
    """Kendall tau per ``method`` value of a results CSV.

    Explicit ``rank_search``/``rank_eval`` columns take precedence over
    ranking ``val_err``/``test_err``, so tables whose ties were broken by
    hand keep their published order.  Files without a ``method`` column
    form a single group keyed ``""``.
    """
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: no rows")
    groups: dict[str, list[dict]] = {}
    for r in rows:
        groups.setdefault(r.get("method", ""), []).append(r)
    return {m: kendall_tau_exact(_column_ranks(g, "rank_search", "val_err", path),
                                 _column_ranks(g, "rank_eval", "test_err", path))
            for m, g in groups.items()}


def tau_from_csv(path) -> Fraction:
    taus = tau_by_method(path)
    if len(taus) != 1:
        raise ValueError(f"{path}: holds several methods {sorted(taus)}; use tau_by_method")
    return next(iter(taus.values()))
