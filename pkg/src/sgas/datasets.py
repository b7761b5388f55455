"""Small classification datasets with the splits the search loop needs."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .rng import stream

SPLITS = ("w_train", "alpha_val", "test")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    splits: dict = field(default_factory=dict)
    classes: tuple = ()

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[0] != self.y.shape[0]:
            raise DatasetError(f"features {self.X.shape} and labels {self.y.shape} disagree")
        if not self.classes:
            object.__setattr__(self, "classes", tuple(range(int(self.y.max()) + 1 if self.y.size else 0)))

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def __len__(self):
        return self.X.shape[0]

    def part(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.splits[name]
        return self.X[idx], self.y[idx]

    def train_full(self) -> tuple[np.ndarray, np.ndarray]:
        idx = np.concatenate([self.splits["w_train"], self.splits["alpha_val"]])
        return self.X[idx], self.y[idx]

    def to_csv(self, path, label_column: str = "label") -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x{k}" for k in range(self.n_features)] + [label_column])
            for row, label in zip(self.X, self.y):
                w.writerow([repr(float(v)) for v in row] + [self.classes[int(label)]])


def _rotation(width: int, seed: int) -> np.ndarray:
    q, r = np.linalg.qr(stream(seed, "embed-rotation").standard_normal((width, width)))
    return q * np.sign(np.diag(r))


def _embed(points: np.ndarray, width: int, seed: int) -> np.ndarray:
    if width < points.shape[1]:
        raise DatasetError(f"width {width} smaller than raw dimension {points.shape[1]}")
    padded = np.zeros((points.shape[0], width))
    padded[:, : points.shape[1]] = points
    return padded @ _rotation(width, seed) if width > points.shape[1] else padded


def _standardize(X: np.ndarray) -> np.ndarray:
    sd = X.std(axis=0)
    return (X - X.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


def make_spirals(n_per_class: int = 200, classes: int = 3, noise: float = 0.15, seed: int = 0,
                 width: int = 32, turns: float = 1.0) -> Dataset:
    """Interleaved 2-D spiral arms, embedded into ``width`` dimensions.

    ``noise`` perturbs the arm angle (radians).  Radii start at 0.2 so the
    arms never meet at the origin.
    """
    if classes < 2:
        raise DatasetError("need at least 2 classes")
    if noise < 0:
        raise DatasetError("noise must be non-negative")
    rng = stream(seed, "spirals")
    r = np.linspace(0.2, 1.0, n_per_class)
    pts, labels = [], []
    for k in range(classes):
        theta = (2 * np.pi * turns * r + 2 * np.pi * k / classes
                 + noise * rng.standard_normal(n_per_class))
        pts.append(np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1))
        labels.append(np.full(n_per_class, k))
    X = _standardize(_embed(np.concatenate(pts), width, seed))
    return Dataset(X, np.concatenate(labels).astype(np.int64))


def make_blobs(n_per_class: int = 100, classes: int = 3, spread: float = 0.3, seed: int = 0,
               width: int = 32) -> Dataset:
    """Gaussian clusters centred on the vertices of a regular simplex."""
    if classes < 2:
        raise DatasetError("need at least 2 classes")
    if spread < 0:
        raise DatasetError("spread must be non-negative")
    dim = classes
    centres = np.eye(classes) * 2.0
    centres -= centres.mean(axis=0)
    rng = stream(seed, "blobs")
    pts = np.concatenate([c + spread * rng.standard_normal((n_per_class, dim)) for c in centres])
    y = np.repeat(np.arange(classes), n_per_class).astype(np.int64)
    return Dataset(_standardize(_embed(pts, max(width, dim), seed)), y)


def load_csv(path, label_column: str = "label", standardize: bool = True) -> Dataset:
    """Read a numeric CSV with a header; labels are indexed by first appearance."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file") from None
        if label_column not in header:
            raise DatasetError(f"{path}: unknown label column {label_column!r}")
        li = header.index(label_column)
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DatasetError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            feats = []
            for k, cell in enumerate(row):
                if k == li:
                    continue
                try:
                    feats.append(float(cell))
                except ValueError:
                    raise DatasetError(
                        f"{path}:{lineno}: non-numeric value {cell!r} in column {header[k]!r}") from None
            rows.append(feats)
            labels.append(row[li])
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    X = np.array(rows, dtype=np.float64)
    if not np.all(np.isfinite(X)):
        raise DatasetError(f"{path}: non-finite feature values")
    if standardize:
        X = _standardize(X)
    classes = tuple(dict.fromkeys(labels))
    lookup = {c: k for k, c in enumerate(classes)}
    y = np.array([lookup[c] for c in labels], dtype=np.int64)
    return Dataset(X, y, classes=classes)


def split(ds: Dataset, fractions=(0.4, 0.4, 0.2), seed: int = 0) -> Dataset:
    """Stratified shuffle split into ``w_train``, ``alpha_val`` and ``test``.

    Per class, counts are allocated by largest remainder so each split holds
    within one sample of its share.
    """
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.shape != (3,) or np.any(fr < 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise DatasetError(f"fractions must be 3 non-negative numbers summing to 1, got {fractions}")
    rng = stream(seed, "split")
    parts = {name: [] for name in SPLITS}
    for k in range(ds.n_classes):
        idx = np.flatnonzero(ds.y == k)
        if idx.size == 0:
            continue
        needed = int(np.count_nonzero(fr))
        if idx.size < needed:
            raise DatasetError(f"class {k} has {idx.size} samples, fewer than {needed} splits")
        idx = rng.permutation(idx)
        exact = fr * idx.size
        counts = np.floor(exact).astype(int)
        order = np.argsort(-(exact - counts), kind="stable")
        for s in order[: idx.size - counts.sum()]:
            counts[s] += 1
        # any split with a positive share gets at least one sample of every class
        for s in range(3):
            if fr[s] > 0 and counts[s] == 0:
                donor = int(np.argmax(counts))
                counts[donor] -= 1
                counts[s] += 1
        start = 0
        for name, c in zip(SPLITS, counts):
            parts[name].append(idx[start:start + c])
            start += c
    splits = {name: np.sort(np.concatenate(v)).astype(np.int64) if v else np.array([], dtype=np.int64)
              for name, v in parts.items()}
    return replace(ds, splits=splits)
