"""Greedy edge-selection scores.

All functions are pure and operate on numpy arrays.  ``alpha`` rows are the
raw architecture logits of one edge; distributions ``p`` live on the
non-zero operations only.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Hashable, Sequence

import numpy as np

from .autodiff import softmax_array


def edge_importance(alpha_row, zero_index: int) -> float:
    """Total softmax mass on the non-zero operations."""
    w = softmax_array(np.asarray(alpha_row, dtype=np.float64))
    return float(np.sum(np.delete(w, zero_index)))


def nonzero_distribution(alpha_row, zero_index: int) -> np.ndarray:
    a = np.delete(np.asarray(alpha_row, dtype=np.float64), zero_index)
    # softmax restricted to the non-zero slots equals softmax(alpha)_o / S_EI
    return softmax_array(a)


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def selection_certainty(p, num_ops: int | None = None) -> float:
    """One minus the entropy of ``p`` normalized by ``log(num_ops - 1)``.

    ``num_ops`` counts the zero op too, so ``p`` normally has length
    ``num_ops - 1``.
    """
    p = np.asarray(p, dtype=np.float64)
    k = (num_ops - 1) if num_ops is not None else p.size
    if k <= 1:
        return 1.0
    return float(np.clip(1.0 - entropy(p) / np.log(k), 0.0, 1.0))


def histogram_intersection(p, q) -> float:
    return float(np.sum(np.minimum(p, q)))


def selection_stability(history: Sequence[np.ndarray], window: int) -> float:
    """Mean histogram intersection of the last snapshot with up to ``window`` earlier ones."""
    if len(history) == 0:
        raise ValueError("selection_stability: empty history")
    current = np.asarray(history[-1], dtype=np.float64)
    past = list(history[:-1])[-window:]
    if not past:
        return 1.0
    vals = [histogram_intersection(np.asarray(q, dtype=np.float64), current) for q in past]
    return float(np.clip(np.mean(vals), 0.0, 1.0))


def min_max_normalize(values) -> np.ndarray:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("min_max_normalize: empty input")
    lo, hi = v.min(), v.max()
    if hi == lo:
        return np.ones_like(v)
    return (v - lo) / (hi - lo)


def criterion1(importance, certainty) -> np.ndarray:
    return min_max_normalize(importance) * min_max_normalize(certainty)


def criterion2(importance, certainty, stability) -> np.ndarray:
    return criterion1(importance, certainty) * min_max_normalize(stability)


def select(scores, edges: Sequence[Hashable]):
    """Edge with the highest score; ties go to the smallest edge id."""
    scores = np.asarray(scores, dtype=np.float64)
    best = max(range(len(edges)), key=lambda k: (scores[k], _neg_key(edges[k])))
    return edges[best]


def _neg_key(edge):
    return tuple(-x for x in edge) if isinstance(edge, tuple) else -edge


class DecisionHistory:
    """Ring buffers of per-edge non-zero distributions, one snapshot per epoch."""

    def __init__(self, window: int):
        if window < 1:
            raise ValueError("history window must be >= 1")
        self.window = window
        self.buffers: dict = {}
        self.epochs: dict = {}

    def record(self, edge, p, epoch: int) -> None:
        buf = self.buffers.setdefault(edge, deque(maxlen=self.window + 1))
        ep = self.epochs.setdefault(edge, deque(maxlen=self.window + 1))
        if ep and epoch <= ep[-1]:
            raise ValueError(f"snapshot for {edge} at epoch {epoch} is not newer than {ep[-1]}")
        buf.append(np.asarray(p, dtype=np.float64).copy())
        ep.append(epoch)

    def drop(self, edge) -> None:
        self.buffers.pop(edge, None)
        self.epochs.pop(edge, None)

    def get(self, edge) -> list[np.ndarray]:
        return list(self.buffers.get(edge, ()))

    def stability(self, edge) -> float:
        h = self.get(edge)
        return selection_stability(h, self.window) if h else 1.0


@dataclass
class CriterionScores:
    edges: list
    importance: np.ndarray
    certainty: np.ndarray
    stability: np.ndarray
    importance_norm: np.ndarray = field(init=False)
    certainty_norm: np.ndarray = field(init=False)
    stability_norm: np.ndarray = field(init=False)
    s1: np.ndarray = field(init=False)
    s2: np.ndarray = field(init=False)

    def __post_init__(self):
        self.importance_norm = min_max_normalize(self.importance)
        self.certainty_norm = min_max_normalize(self.certainty)
        self.stability_norm = min_max_normalize(self.stability)
        self.s1 = self.importance_norm * self.certainty_norm
        self.s2 = self.s1 * self.stability_norm

    def best(self, criterion: str):
        if criterion == "cri1":
            return select(self.s1, self.edges)
        if criterion == "cri2":
            return select(self.s2, self.edges)
        raise ValueError(f"unknown criterion {criterion!r}")

    def as_records(self) -> list[dict]:
        return [
            {
                "edge": list(e),
                "S_EI": float(self.importance[k]),
                "S_SC": float(self.certainty[k]),
                "S_SS": float(self.stability[k]),
                "S_EI_norm": float(self.importance_norm[k]),
                "S_SC_norm": float(self.certainty_norm[k]),
                "S_SS_norm": float(self.stability_norm[k]),
                "S1": float(self.s1[k]),
                "S2": float(self.s2[k]),
            }
            for k, e in enumerate(self.edges)
        ]


def score_edges(alpha_rows: dict, zero_index: int, history: DecisionHistory | None = None) -> CriterionScores:
    """Raw and normalized scores for every edge in ``alpha_rows`` (in its order)."""
    edges = list(alpha_rows)
    if not edges:
        raise ValueError("no candidate edges")
    n_ops = len(next(iter(alpha_rows.values())))
    ei = np.array([edge_importance(alpha_rows[e], zero_index) for e in edges])
    sc = np.array([selection_certainty(nonzero_distribution(alpha_rows[e], zero_index), n_ops)
                   for e in edges])
    ss = np.array([history.stability(e) if history is not None else 1.0 for e in edges])
    return CriterionScores(edges, ei, sc, ss)
