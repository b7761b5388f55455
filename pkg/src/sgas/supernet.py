"""Cell-DAG search space: operation set, mixed edges, alpha table, genotypes.

Feature maps are plain vectors of a fixed width.  A cell has two input
nodes (the outputs of the two previous cells), ``M`` intermediate nodes
and an output node that concatenates the intermediates and projects them
back to the cell width.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .rng import stream

Edge = tuple[int, int]

UNDETERMINED = "undetermined"
DETERMINED = "determined"
PRUNED = "pruned"


class SearchSpaceError(ValueError):
    pass


# ---------------------------------------------------------------- operations

@dataclass(frozen=True)
class Operation:
    name: str
    param_shapes: tuple[tuple[str, tuple[int, ...]], ...]
    apply: Callable[[Tensor, dict], Tensor]

    @property
    def num_parameters(self) -> int:
        return sum(math.prod(shape) for _, shape in self.param_shapes)


@dataclass(frozen=True)
class OperationSet:
    ops: tuple[Operation, ...]
    zero_index: int
    width: int

    def __post_init__(self):
        zeros = [i for i, op in enumerate(self.ops) if op.name == "zero"]
        if zeros != [self.zero_index]:
            raise SearchSpaceError("operation set must contain exactly one zero op")

    def __len__(self):
        return len(self.ops)

    def __getitem__(self, i: int) -> Operation:
        return self.ops[i]

    @property
    def names(self) -> list[str]:
        return [op.name for op in self.ops]

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SearchSpaceError(f"unknown operation {name!r}") from None

    @property
    def nonzero(self) -> list[int]:
        return [i for i in range(len(self.ops)) if i != self.zero_index]


_affine = ad.affine


def toy_operation_set(width: int = 32) -> OperationSet:
    """Default six candidate ops on width-``d`` vectors."""
    if width < 2:
        raise SearchSpaceError("bottleneck op needs width >= 2")
    d, h = width, width // 2

    def zero(x, p):
        return ad.scale(x, 0.0)

    def identity(x, p):
        return x

    def linear(x, p):
        return _affine(x, p["W"], p["b"])

    def relu_linear(x, p):
        return _affine(ad.relu(x), p["W"], p["b"])

    def gated_linear(x, p):
        return ad.mul(x, ad.sigmoid(_affine(x, p["W"], p["b"])))

    def bottleneck_linear(x, p):
        return _affine(ad.relu(_affine(x, p["W1"], p["b1"])), p["W2"], p["b2"])

    sq = (("W", (d, d)), ("b", (d,)))
    ops = (
        Operation("zero", (), zero),
        Operation("identity", (), identity),
        Operation("linear", sq, linear),
        Operation("relu_linear", sq, relu_linear),
        Operation("gated_linear", sq, gated_linear),
        Operation("bottleneck_linear",
                  (("W1", (d, h)), ("b1", (h,)), ("W2", (h, d)), ("b2", (d,))),
                  bottleneck_linear),
    )
    return OperationSet(ops, zero_index=0, width=width)


# ---------------------------------------------------------------- topology

@dataclass(frozen=True)
class CellTopology:
    n_intermediate: int = 4
    edges_per_node: int = 2

    @property
    def n_nodes(self) -> int:
        return self.n_intermediate + 3

    @property
    def intermediate_nodes(self) -> range:
        return range(2, 2 + self.n_intermediate)

    @property
    def edges(self) -> list[Edge]:
        return [(i, j) for j in self.intermediate_nodes for i in range(j)]

    def incoming(self, j: int) -> list[Edge]:
        return [(i, j) for i in range(j)]

    @property
    def decisions_needed(self) -> int:
        return self.edges_per_node * self.n_intermediate


class AlphaTable:
    """Per-edge architecture logits plus determined/pruned bookkeeping."""

    def __init__(self, topology: CellTopology, n_ops: int, zero_index: int):
        self.topology = topology
        self.n_ops = n_ops
        self.zero_index = zero_index
        self.rows: dict[Edge, Tensor] = {
            e: Tensor(np.zeros(n_ops), requires_grad=True, name=f"alpha.{e[0]}-{e[1]}")
            for e in topology.edges
        }
        self.status: dict[Edge, str] = {e: UNDETERMINED for e in topology.edges}
        self.chosen: dict[Edge, int] = {}

    @property
    def edges(self) -> list[Edge]:
        return self.topology.edges

    def edges_with(self, status: str) -> list[Edge]:
        return [e for e in self.edges if self.status[e] == status]

    @property
    def undetermined(self) -> list[Edge]:
        return self.edges_with(UNDETERMINED)

    @property
    def determined(self) -> list[Edge]:
        return self.edges_with(DETERMINED)

    @property
    def pruned(self) -> list[Edge]:
        return self.edges_with(PRUNED)

    def parameters(self) -> list[Tensor]:
        return [self.rows[e] for e in self.undetermined]

    def num_parameters(self) -> int:
        return sum(r.size for r in self.parameters())

    def row(self, edge: Edge) -> np.ndarray:
        return self.rows[edge].data

    def determine(self, edge: Edge, op_index: int) -> None:
        if self.status[edge] != UNDETERMINED:
            raise SearchSpaceError(f"edge {edge} is already {self.status[edge]}")
        self.status[edge] = DETERMINED
        self.chosen[edge] = op_index
        self.rows[edge].requires_grad = False

    def prune(self, edge: Edge) -> None:
        if self.status[edge] != UNDETERMINED:
            raise SearchSpaceError(f"edge {edge} is already {self.status[edge]}")
        self.status[edge] = PRUNED
        self.rows[edge].requires_grad = False

    def determined_into(self, j: int) -> list[Edge]:
        return [e for e in self.topology.incoming(j) if self.status[e] == DETERMINED]

    def counts(self) -> dict[str, int]:
        return {s: len(self.edges_with(s)) for s in (UNDETERMINED, DETERMINED, PRUNED)}


# ---------------------------------------------------------------- genotype

@dataclass
class Genotype:
    nodes: list[list[tuple[int, str]]]
    width: int = 32
    cells: int = 3
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.nodes = [sorted((int(i), str(op)) for i, op in pairs) for pairs in self.nodes]
        self.validate()

    @property
    def n_intermediate(self) -> int:
        return len(self.nodes)

    def validate(self) -> None:
        for k, pairs in enumerate(self.nodes):
            j = k + 2
            if len(pairs) != 2:
                raise SearchSpaceError(f"node {j} needs exactly 2 inputs, got {len(pairs)}")
            sources = [i for i, _ in pairs]
            if len(set(sources)) != 2:
                raise SearchSpaceError(f"node {j} uses source {sources[0]} twice")
            for i, op in pairs:
                if not 0 <= i < j:
                    raise SearchSpaceError(f"node {j} has illegal source {i}")
                if op == "zero":
                    raise SearchSpaceError(f"node {j} uses the zero op")

    def edge_ops(self) -> dict[Edge, str]:
        return {(i, k + 2): op for k, pairs in enumerate(self.nodes) for i, op in pairs}

    def to_dict(self) -> dict:
        return {
            "nodes": [[{"from": i, "op": op} for i, op in pairs] for pairs in self.nodes],
            "width": self.width,
            "cells": self.cells,
            "meta": self.meta,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Genotype":
        try:
            nodes = [[(int(p["from"]), str(p["op"])) for p in pairs] for pairs in d["nodes"]]
            return cls(nodes, width=int(d["width"]), cells=int(d["cells"]),
                       meta=dict(d.get("meta", {})))
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, SearchSpaceError):
                raise
            raise SearchSpaceError(f"malformed genotype: {exc!r}") from None

    @classmethod
    def from_json(cls, text: str) -> "Genotype":
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise SearchSpaceError(f"malformed genotype JSON: {exc}") from None

    def to_dot(self) -> str:
        def node_name(i):
            return {0: "c_{k-2}", 1: "c_{k-1}"}.get(i, str(i - 2))

        lines = ["digraph cell {", "  rankdir=LR;"]
        names = ["c_{k-2}", "c_{k-1}"] + [str(k) for k in range(self.n_intermediate)] + ["c_{k}"]
        for n in names:
            lines.append(f'  "{n}";')
        for k, pairs in enumerate(self.nodes):
            for i, op in pairs:
                lines.append(f'  "{node_name(i)}" -> "{k}" [label="{op}"];')
        for k in range(self.n_intermediate):
            lines.append(f'  "{k}" -> "c_{{k}}";')
        lines.append("}")
        return "\n".join(lines) + "\n"


def genotype_from_determined(table: AlphaTable, ops: OperationSet, cells: int,
                             meta: dict | None = None) -> Genotype:
    nodes = []
    for j in table.topology.intermediate_nodes:
        chosen = table.determined_into(j)
        if len(chosen) != table.topology.edges_per_node:
            raise SearchSpaceError(f"node {j} has {len(chosen)} determined inputs")
        nodes.append([(e[0], ops[table.chosen[e]].name) for e in chosen])
    return Genotype(nodes, width=ops.width, cells=cells, meta=dict(meta or {}))


def derive_genotype(table: AlphaTable, ops: OperationSet, cells: int,
                    meta: dict | None = None) -> Genotype:
    """Argmax derivation over non-zero ops, keeping the two strongest edges per node.

    Determined edges keep their op; pruned edges are unusable.  Ties go to
    the lowest op index and the lowest source node.
    """
    nz = ops.nonzero
    nodes = []
    for j in table.topology.intermediate_nodes:
        scored = []
        for e in table.topology.incoming(j):
            st = table.status[e]
            if st == PRUNED:
                continue
            if st == DETERMINED:
                scored.append((math.inf, e[0], table.chosen[e]))
                continue
            w = ad.softmax_array(table.row(e))
            best = max(nz, key=lambda o: (w[o], -o))
            scored.append((float(w[best]), e[0], best))
        if len(scored) < 2:
            raise SearchSpaceError(f"node {j} has fewer than 2 usable edges")
        scored.sort(key=lambda t: (-t[0], t[1]))
        nodes.append([(i, ops[o].name) for _, i, o in scored[:2]])
    return Genotype(nodes, width=ops.width, cells=cells, meta=dict(meta or {}))


# ---------------------------------------------------------------- network

def _init_param(seed: int, name: str, shape: tuple[int, ...]) -> Tensor:
    if len(shape) == 2:
        bound = math.sqrt(6.0 / shape[0])
        data = stream(seed, "init/" + name).uniform(-bound, bound, size=shape)
    else:
        data = np.zeros(shape)
    return Tensor(data, requires_grad=True, name=name)


class SuperNetwork:
    """Stack of cells sharing one alpha table; each cell owns its weights."""

    def __init__(self, n_features: int, n_classes: int, width: int = 32, cells: int = 3,
                 n_intermediate: int = 4, seed: int = 0, ops: OperationSet | None = None):
        self.n_features = n_features
        self.n_classes = n_classes
        self.width = width
        self.n_cells = cells
        self.seed = seed
        self.ops = ops or toy_operation_set(width)
        if self.ops.width != width:
            raise SearchSpaceError("operation set width does not match network width")
        self.topology = CellTopology(n_intermediate)
        self.alphas = AlphaTable(self.topology, len(self.ops), self.ops.zero_index)
        self.has_alphas = True

        M = n_intermediate
        self.stem = {"W": _init_param(seed, "stem.W", (n_features, width)),
                     "b": _init_param(seed, "stem.b", (width,))}
        self.head = {"W": _init_param(seed, "head.W", (width, n_classes)),
                     "b": _init_param(seed, "head.b", (n_classes,))}
        self.proj = [{"W": _init_param(seed, f"cell{c}.proj.W", (M * width, width)),
                      "b": _init_param(seed, f"cell{c}.proj.b", (width,))}
                     for c in range(cells)]
        # cell -> edge -> op index -> params
        self.edge_weights: list[dict[Edge, dict[int, dict[str, Tensor]]]] = []
        for c in range(cells):
            per_edge = {}
            for e in self.topology.edges:
                per_op = {}
                for o, op in enumerate(self.ops):
                    per_op[o] = {pn: _init_param(seed, f"cell{c}.{e[0]}-{e[1]}.{op.name}.{pn}", shape)
                                 for pn, shape in op.param_shapes}
                per_edge[e] = per_op
            self.edge_weights.append(per_edge)

    # -- parameters

    def weights(self) -> list[Tensor]:
        out = list(self.stem.values())
        for c in range(self.n_cells):
            for e in self.topology.edges:
                for o in sorted(self.edge_weights[c][e]):
                    out.extend(self.edge_weights[c][e][o].values())
            out.extend(self.proj[c].values())
        out.extend(self.head.values())
        return out

    def alpha_parameters(self) -> list[Tensor]:
        return self.alphas.parameters() if self.has_alphas else []

    def num_parameters(self) -> int:
        return sum(p.size for p in self.weights())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {p.name: p.data.copy() for p in self.weights()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for p in self.weights():
            p.data = np.array(state[p.name], dtype=np.float64)

    # -- structural edits

    def drop_ops(self, edge: Edge, keep: int | None = None) -> list[str]:
        """Remove weights of every op on ``edge`` except ``keep`` in all cells.

        Returns the names of the removed parameters.
        """
        removed = []
        for c in range(self.n_cells):
            per_op = self.edge_weights[c][edge]
            for o in list(per_op):
                if o != keep:
                    removed.extend(p.name for p in per_op[o].values())
                    del per_op[o]
        return removed

    def edge_op_parameters(self, edge: Edge, op_index: int) -> int:
        return self.n_cells * self.ops[op_index].num_parameters

    # -- forward

    def mixed_edge_forward(self, cell: int, edge: Edge, x: Tensor) -> Tensor:
        if self.alphas.status[edge] != UNDETERMINED:
            raise SearchSpaceError(f"mixed forward on {self.alphas.status[edge]} edge {edge}")
        w = ad.softmax(self.alphas.rows[edge])
        slots, outs = [], []
        for o, params in self.edge_weights[cell][edge].items():
            # the zero op adds nothing but still takes softmax mass
            if o != self.ops.zero_index:
                slots.append(o)
                outs.append(self.ops[o].apply(x, params))
        if not outs:
            return ad.scale(x, 0.0)
        return ad.weighted_sum(w, outs, slots)

    def determined_edge_forward(self, cell: int, edge: Edge, x: Tensor) -> Tensor:
        o = self.alphas.chosen[edge]
        return self.ops[o].apply(x, self.edge_weights[cell][edge][o])

    def edge_forward(self, cell: int, edge: Edge, x: Tensor) -> Tensor | None:
        st = self.alphas.status[edge]
        if st == PRUNED:
            return None
        if st == DETERMINED:
            return self.determined_edge_forward(cell, edge, x)
        return self.mixed_edge_forward(cell, edge, x)

    def cell_forward(self, cell: int, prev_prev: Tensor, prev: Tensor) -> Tensor:
        for t in (prev_prev, prev):
            if t.shape[-1] != self.width:
                raise ad.ShapeError("cell_forward", t.shape, (self.width,))
        states = [prev_prev, prev]
        for j in self.topology.intermediate_nodes:
            acc = None
            for e in self.topology.incoming(j):
                y = self.edge_forward(cell, e, states[e[0]])
                if y is not None:
                    acc = y if acc is None else ad.add(acc, y)
            states.append(acc if acc is not None else ad.scale(prev, 0.0))
        p = self.proj[cell]
        return _affine(ad.concat(states[2:], axis=-1), p["W"], p["b"])

    def forward(self, X) -> Tensor:
        x = X if isinstance(X, Tensor) else Tensor(np.atleast_2d(np.asarray(X, dtype=np.float64)))
        if x.shape[-1] != self.n_features:
            raise ad.ShapeError("forward", x.shape, (self.n_features,))
        s = _affine(x, self.stem["W"], self.stem["b"])
        prev_prev, prev = s, s
        for c in range(self.n_cells):
            prev_prev, prev = prev, self.cell_forward(c, prev_prev, prev)
        return _affine(prev, self.head["W"], self.head["b"])

    __call__ = forward

    def predict_logits(self, X) -> np.ndarray:
        return self.forward(X).data

    def is_standalone(self) -> bool:
        return not self.alphas.undetermined



def instantiate_standalone(genotype: Genotype, n_features: int, n_classes: int,
                           seed: int = 0, cells: int | None = None,
                           width: int | None = None) -> SuperNetwork:
    """Fresh network containing only the genotype's ops and no alpha parameters."""
    width = width or genotype.width
    net = SuperNetwork(n_features, n_classes, width=width,
                       cells=cells or genotype.cells,
                       n_intermediate=genotype.n_intermediate, seed=seed)
    chosen = genotype.edge_ops()
    for e in net.topology.edges:
        if e in chosen:
            o = net.ops.index(chosen[e])
            net.alphas.determine(e, o)
            net.drop_ops(e, keep=o)
        else:
            net.alphas.prune(e)
            net.drop_ops(e)
    net.has_alphas = False
    return net


def config_digest(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]
