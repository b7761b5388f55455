"""Sequential greedy search driver plus the DARTS-1st and random baselines."""
from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .criteria import DecisionHistory, nonzero_distribution, score_edges
from .datasets import Dataset
from .rng import stream
from .supernet import (
    AlphaTable,
    Edge,
    Genotype,
    SuperNetwork,
    config_digest,
    derive_genotype,
    genotype_from_determined,
    instantiate_standalone,
    toy_operation_set,
)

log = logging.getLogger(__name__)

CRITERIA = ("cri1", "cri2", "darts1", "random")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class SearchConfig:
    epochs: int = 50
    warm_up_epochs: int = 9
    decision_interval: int = 5
    history_window: int = 4
    criterion: str = "cri2"
    batch_size: int = 64
    batch_growth: int = 8
    w_lr: float = 0.025
    w_momentum: float = 0.9
    w_weight_decay: float = 3e-4
    alpha_lr: float = 3e-4
    alpha_betas: tuple = (0.5, 0.999)
    alpha_weight_decay: float = 1e-3
    grad_clip: float = 5.0
    train_to_end: bool = True
    seed: int = 0
    cells: int = 3
    width: int = 32
    n_intermediate: int = 4

    def __post_init__(self):
        self.alpha_betas = tuple(float(b) for b in self.alpha_betas)
        self.validate()

    @property
    def decisions_needed(self) -> int:
        return 2 * self.n_intermediate

    def decision_epochs(self) -> list[int]:
        first = self.warm_up_epochs + 1
        return [first + k * self.decision_interval for k in range(self.decisions_needed)]

    def validate(self) -> None:
        if self.criterion not in CRITERIA:
            raise ConfigError("criterion", f"must be one of {CRITERIA}, got {self.criterion!r}")
        for name in ("epochs", "warm_up_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(name, "must be >= 0")
        for name in ("decision_interval", "history_window", "batch_size", "cells", "n_intermediate"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if self.width < 2:
            raise ConfigError("width", "must be >= 2")
        if self.batch_growth < 0:
            raise ConfigError("batch_growth", "must be >= 0")
        if len(self.alpha_betas) != 2:
            raise ConfigError("alpha_betas", "needs two values")
        if self.criterion in ("cri1", "cri2"):
            last = self.warm_up_epochs + self.decision_interval * (self.decisions_needed - 1)
            if last >= self.epochs:
                raise ConfigError(
                    "epochs",
                    f"{self.decisions_needed} decisions need warm-up + interval*(decisions-1) "
                    f"= {last} < epochs ({self.epochs})")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["alpha_betas"] = list(self.alpha_betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        known = {f.name: f for f in dataclasses.fields(cls)}
        kwargs = {}
        for k, v in d.items():
            if k not in known:
                raise ConfigError(k, "unknown field")
            default = known[k].default
            if isinstance(default, bool):
                if not isinstance(v, bool):
                    raise ConfigError(k, f"expected boolean, got {v!r}")
                kwargs[k] = v
            elif isinstance(default, int):
                if isinstance(v, bool) or not isinstance(v, int):
                    raise ConfigError(k, f"expected integer, got {v!r}")
                kwargs[k] = v
            elif isinstance(default, float):
                if isinstance(v, bool) or not isinstance(v, (int, float)):
                    raise ConfigError(k, f"expected number, got {v!r}")
                kwargs[k] = float(v)
            elif isinstance(default, str):
                if not isinstance(v, str):
                    raise ConfigError(k, f"expected string, got {v!r}")
                kwargs[k] = v
            else:
                if not isinstance(v, (list, tuple)):
                    raise ConfigError(k, f"expected list, got {v!r}")
                kwargs[k] = tuple(v)
        return cls(**kwargs)

    def digest(self) -> str:
        return config_digest(self.to_dict())


@dataclass
class DecisionRecord:
    epoch: int
    edge: Edge
    op: str
    scores: list[dict]
    pruned: list[Edge]
    freed_parameters: int
    batch_size_after: int

    def to_dict(self) -> dict:
        return {
            "epoch": self.epoch,
            "edge": list(self.edge),
            "op": self.op,
            "scores": self.scores,
            "pruned": [list(e) for e in self.pruned],
            "freed_parameters": self.freed_parameters,
            "batch_size_after": self.batch_size_after,
        }


@dataclass
class PruneSummary:
    edge: Edge
    op_index: int
    pruned: list[Edge]
    removed: list[str]
    freed_parameters: int


@dataclass
class SearchResult:
    genotype: Genotype
    criterion: str
    epochs: list[dict] = field(default_factory=list)
    decisions: list[DecisionRecord] = field(default_factory=list)
    final_val_acc: float = float("nan")
    best_val_acc: float = float("nan")
    final_val_loss: float = float("nan")
    num_parameters: int = 0
    config_digest: str = ""
    wall_clock: float = 0.0
    network: SuperNetwork | None = field(default=None, repr=False)

    def val_acc(self, which: str = "final") -> float:
        return self.best_val_acc if which == "best" else self.final_val_acc

    def to_dict(self) -> dict:
        # wall-clock lives in the run manifest so this stays reproducible
        return {
            "criterion": self.criterion,
            "genotype": self.genotype.to_dict(),
            "epochs": self.epochs,
            "decisions": [d.to_dict() for d in self.decisions],
            "final_val_acc": self.final_val_acc,
            "best_val_acc": self.best_val_acc,
            "final_val_loss": self.final_val_loss,
            "num_parameters": self.num_parameters,
            "config_digest": self.config_digest,
            "val_split": "alpha_val",
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------- helpers

def evaluate(net: SuperNetwork, X: np.ndarray, y: np.ndarray, chunk: int = 512) -> tuple[float, float]:
    """Mean cross-entropy and accuracy of ``net`` on (X, y)."""
    loss_sum = 0.0
    correct = 0
    for start in range(0, len(y), chunk):
        xb, yb = X[start:start + chunk], y[start:start + chunk]
        logits = net.forward(xb)
        loss_sum += ad.cross_entropy(logits, yb).item() * len(yb)
        correct += int(np.sum(np.argmax(logits.data, axis=1) == yb))
    return loss_sum / len(y), correct / len(y)


def prune_after_decision(table: AlphaTable, net: SuperNetwork, edge: Edge, op_index: int) -> PruneSummary:
    """Fix ``edge`` to ``op_index``, drop its other op weights and prune full nodes."""
    table.determine(edge, op_index)
    removed = net.drop_ops(edge, keep=op_index)
    freed = sum(net.edge_op_parameters(edge, o) for o in range(len(net.ops)) if o != op_index)
    pruned = []
    j = edge[1]
    if len(table.determined_into(j)) >= table.topology.edges_per_node:
        for e in table.topology.incoming(j):
            if table.status[e] == "undetermined":
                table.prune(e)
                removed.extend(net.drop_ops(e))
                freed += sum(net.edge_op_parameters(e, o) for o in range(len(net.ops)))
                pruned.append(e)
    return PruneSummary(edge, op_index, pruned, removed, freed)


def choose_op(alpha_row: np.ndarray, zero_index: int) -> int:
    best, best_val = -1, -math.inf
    for o, v in enumerate(alpha_row):
        if o != zero_index and v > best_val:
            best, best_val = o, v
    return best


def _check_splits(cfg: SearchConfig, ds: Dataset) -> None:
    for name in ("w_train", "alpha_val"):
        if name not in ds.splits:
            raise ValueError(f"dataset has no {name!r} split")
        n = len(ds.splits[name])
        if n < cfg.batch_size:
            raise ValueError(f"split {name!r} has {n} samples, fewer than one batch of {cfg.batch_size}")


class _Searcher:
    """Shared alternating-update loop; ``decide`` is None for DARTS."""

    def __init__(self, cfg: SearchConfig, ds: Dataset, greedy: bool,
                 on_event: Callable[[dict], None] | None = None):
        _check_splits(cfg, ds)
        self.cfg = cfg
        self.ds = ds
        self.greedy = greedy
        self.on_event = on_event or (lambda e: None)
        self.net = SuperNetwork(ds.n_features, ds.n_classes, width=cfg.width, cells=cfg.cells,
                                n_intermediate=cfg.n_intermediate, seed=cfg.seed)
        self.w_opt = ad.SGD(cfg.w_lr, cfg.w_momentum, cfg.w_weight_decay)
        self.a_opt = ad.Adam(cfg.alpha_lr, cfg.alpha_betas, cfg.alpha_weight_decay)
        self.history = DecisionHistory(cfg.history_window)
        self.batch_size = cfg.batch_size
        self.decisions: list[DecisionRecord] = []
        self.epochs: list[dict] = []
        self.param_counts: list[int] = [self.net.num_parameters()]

    @property
    def table(self) -> AlphaTable:
        return self.net.alphas

    def _step(self, params, opt, X, y, clip: float = 0.0) -> float:
        ad.Optimizer.zero_grad(params)
        loss = ad.cross_entropy(self.net.forward(X), y)
        ad.backward(loss)
        if clip:
            ad.clip_grad_norm(params, clip)
        opt.step(params)
        return loss.item()

    def run_epoch(self, epoch: int) -> dict:
        Xt, yt = self.ds.part("w_train")
        Xv, yv = self.ds.part("alpha_val")
        bs = min(self.batch_size, len(yt), len(yv))
        rng = stream(self.cfg.seed, f"batches/{epoch}")
        t_order = rng.permutation(len(yt))
        v_order = rng.permutation(len(yv))
        steps = math.ceil(len(yt) / bs)
        losses = []
        for s in range(steps):
            tb = t_order[s * bs:(s + 1) * bs]
            vb = np.take(v_order, range(s * bs, s * bs + len(tb)), mode="wrap")
            alphas = self.net.alpha_parameters()
            weights = self.net.weights()
            if alphas:
                with ad.frozen(weights):
                    self._step(alphas, self.a_opt, Xv[vb], yv[vb])
            with ad.frozen(alphas):
                losses.append(self._step(weights, self.w_opt, Xt[tb], yt[tb], self.cfg.grad_clip))
        val_loss, val_acc = evaluate(self.net, Xv, yv)
        rec = {
            "type": "epoch",
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "val_loss": val_loss,
            "val_acc": val_acc,
            "batch_size": self.batch_size,
            "undetermined": len(self.table.undetermined),
        }
        self.epochs.append(rec)
        self.on_event(rec)
        return rec

    def snapshot(self, epoch: int) -> None:
        for e in self.table.undetermined:
            self.history.record(e, nonzero_distribution(self.table.row(e), self.table.zero_index), epoch)

    def decide(self, epoch: int) -> DecisionRecord:
        table = self.table
        rows = {e: table.row(e) for e in table.undetermined}
        scores = score_edges(rows, table.zero_index, self.history)
        edge = scores.best(self.cfg.criterion)
        op = choose_op(table.row(edge), table.zero_index)
        summary = prune_after_decision(table, self.net, edge, op)
        self.w_opt.forget(summary.removed)
        self.a_opt.forget(table.rows[e].name for e in [edge, *summary.pruned])
        for e in [edge, *summary.pruned]:
            self.history.drop(e)
        self.batch_size += self.cfg.batch_growth
        rec = DecisionRecord(epoch, edge, self.net.ops[op].name, scores.as_records(),
                             summary.pruned, summary.freed_parameters, self.batch_size)
        self.decisions.append(rec)
        self.param_counts.append(self.net.num_parameters())
        self.on_event({"type": "decision", **rec.to_dict()})
        log.debug("epoch %d: %s -> %s, pruned %s", epoch, edge, rec.op, summary.pruned)
        return rec

    def run(self) -> SearchResult:
        cfg = self.cfg
        started = time.perf_counter()
        decision_epochs = set(cfg.decision_epochs()) if self.greedy else set()
        needed = cfg.decisions_needed
        best_acc = -math.inf
        last_epoch = 0
        for epoch in range(1, cfg.epochs + 1):
            rec = self.run_epoch(epoch)
            best_acc = max(best_acc, rec["val_acc"])
            last_epoch = epoch
            if self.greedy:
                self.snapshot(epoch)
                if epoch in decision_epochs and self.table.undetermined:
                    self.decide(epoch)
                done = len(self.decisions) >= needed or not self.table.undetermined
                if done and not cfg.train_to_end:
                    break
        if self.greedy:
            # validation guarantees the schedule fits; this only guards odd configs
            while self.table.undetermined:
                self.decide(last_epoch)
        val_loss, val_acc = evaluate(self.net, *self.ds.part("alpha_val"))
        meta = {"seed": cfg.seed, "criterion": cfg.criterion, "config_digest": cfg.digest()}
        if self.greedy:
            genotype = genotype_from_determined(self.table, self.net.ops, cfg.cells, meta)
        else:
            genotype = derive_genotype(self.table, self.net.ops, cfg.cells, meta)
        return SearchResult(
            genotype=genotype,
            criterion=cfg.criterion,
            epochs=self.epochs,
            decisions=self.decisions,
            final_val_acc=val_acc,
            best_val_acc=max(best_acc, val_acc),
            final_val_loss=val_loss,
            num_parameters=self.net.num_parameters(),
            config_digest=cfg.digest(),
            wall_clock=time.perf_counter() - started,
            network=self.net,
        )


# ---------------------------------------------------------------- public API

def run_sgas(config: SearchConfig, dataset: Dataset, on_event=None) -> SearchResult:
    if config.criterion not in ("cri1", "cri2"):
        raise ConfigError("criterion", f"run_sgas needs cri1 or cri2, got {config.criterion!r}")
    return _Searcher(config, dataset, greedy=True, on_event=on_event).run()


def run_darts_first_order(config: SearchConfig, dataset: Dataset, on_event=None) -> SearchResult:
    return _Searcher(config, dataset, greedy=False, on_event=on_event).run()


def sample_genotype(rng: np.random.Generator, n_intermediate: int, op_names, width: int,
                    cells: int, meta: dict | None = None) -> Genotype:
    nodes = []
    for j in range(2, 2 + n_intermediate):
        sources = rng.choice(j, size=2, replace=False)
        nodes.append([(int(i), str(op_names[rng.integers(len(op_names))])) for i in sources])
    return Genotype(nodes, width=width, cells=cells, meta=dict(meta or {}))


def run_random_search(config: SearchConfig, dataset: Dataset, on_event=None) -> SearchResult:
    """Uniform legal genotype; its untrained network is scored on ``alpha_val``."""
    started = time.perf_counter()
    ops = toy_operation_set(config.width)
    names = [ops[o].name for o in ops.nonzero]
    meta = {"seed": config.seed, "criterion": "random", "config_digest": config.digest()}
    genotype = sample_genotype(stream(config.seed, "random-genotype"), config.n_intermediate,
                               names, config.width, config.cells, meta)
    net = instantiate_standalone(genotype, dataset.n_features, dataset.n_classes, seed=config.seed)
    val_loss, val_acc = evaluate(net, *dataset.part("alpha_val"))
    return SearchResult(
        genotype=genotype,
        criterion="random",
        final_val_acc=val_acc,
        best_val_acc=val_acc,
        final_val_loss=val_loss,
        num_parameters=net.num_parameters(),
        config_digest=config.digest(),
        wall_clock=time.perf_counter() - started,
        network=net,
    )


def run_search(config: SearchConfig, dataset: Dataset, on_event=None) -> SearchResult:
    if config.criterion in ("cri1", "cri2"):
        return run_sgas(config, dataset, on_event)
    if config.criterion == "darts1":
        return run_darts_first_order(config, dataset, on_event)
    return run_random_search(config, dataset, on_event)
