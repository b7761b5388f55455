"""scikit-learn style wrappers around the search and stand-alone networks."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import autodiff as ad
from .datasets import Dataset, split
from .rng import stream
from .search import SearchConfig, run_search
from .supernet import Genotype, SuperNetwork, instantiate_standalone


def train_network(net: SuperNetwork, X: np.ndarray, y: np.ndarray, epochs: int, batch_size: int,
                  lr: float, momentum: float, weight_decay: float, grad_clip: float,
                  seed: int) -> list[float]:
    """Plain SGD training of every weight in ``net``; returns per-epoch mean loss."""
    opt = ad.SGD(lr, momentum, weight_decay)
    bs = min(batch_size, len(y))
    losses = []
    for epoch in range(epochs):
        order = stream(seed, f"retrain-batches/{epoch}").permutation(len(y))
        batch_losses = []
        for start in range(0, len(y), bs):
            b = order[start:start + bs]
            params = net.weights()
            ad.Optimizer.zero_grad(params)
            loss = ad.cross_entropy(net.forward(X[b]), y[b])
            ad.backward(loss)
            if grad_clip:
                ad.clip_grad_norm(params, grad_clip)
            opt.step(params)
            batch_losses.append(loss.item())
        losses.append(float(np.mean(batch_losses)))
    return losses


class _NetworkClassifier(ClassifierMixin, BaseEstimator):
    def _encode(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        return X, y_idx.astype(np.int64)

    def decision_function(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return self.network_.predict_logits(X)

    def predict_proba(self, X):
        return ad.softmax_array(self.decision_function(X), axis=1)

    def predict(self, X):
        scores = self.decision_function(X)
        return self.classes_[np.argmax(scores, axis=1)]


class StandaloneClassifier(_NetworkClassifier):
    """Train a fixed genotype from scratch.

    Parameters
    ----------
    genotype : Genotype or dict
        Architecture to instantiate.  Dicts are parsed with ``Genotype.from_dict``.
    cells, width : int, optional
        Override the genotype's cell count and width.
    epochs, batch_size, lr, momentum, weight_decay, grad_clip :
        SGD training schedule.
    random_state : int
        Seeds weight init and batch order.
    """

    def __init__(self, genotype=None, cells=None, width=None, epochs=100, batch_size=64,
                 lr=0.025, momentum=0.9, weight_decay=3e-4, grad_clip=5.0, random_state=0):
        self.genotype = genotype
        self.cells = cells
        self.width = width
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.grad_clip = grad_clip
        self.random_state = random_state

    def _genotype(self) -> Genotype:
        if self.genotype is None:
            raise ValueError("StandaloneClassifier needs a genotype")
        return self.genotype if isinstance(self.genotype, Genotype) else Genotype.from_dict(self.genotype)

    def build(self, n_features: int, n_classes: int) -> SuperNetwork:
        return instantiate_standalone(self._genotype(), n_features, n_classes,
                                      seed=self.random_state, cells=self.cells, width=self.width)

    def fit(self, X, y):
        X, y_idx = self._encode(X, y)
        self.network_ = self.build(X.shape[1], len(self.classes_))
        self.loss_curve_ = train_network(self.network_, X, y_idx, self.epochs, self.batch_size,
                                         self.lr, self.momentum, self.weight_decay,
                                         self.grad_clip, self.random_state)
        self.n_parameters_ = self.network_.num_parameters()
        return self


class SGASSearch(_NetworkClassifier):
    """Architecture search as an estimator.

    ``fit`` splits the data 50/50 (stratified) into weight-training and
    architecture-validation halves unless explicit validation data is
    given, runs the chosen search strategy and keeps the resulting
    network.  After fitting, ``genotype_`` holds the discovered cell and
    ``search_result_`` the full search record.
    """

    def __init__(self, criterion="cri2", epochs=50, warm_up_epochs=9, decision_interval=5,
                 history_window=4, batch_size=64, batch_growth=8, w_lr=0.025, w_momentum=0.9,
                 w_weight_decay=3e-4, alpha_lr=3e-4, alpha_betas=(0.5, 0.999),
                 alpha_weight_decay=1e-3, grad_clip=5.0, train_to_end=True, cells=3, width=32,
                 n_intermediate=4, random_state=0):
        self.criterion = criterion
        self.epochs = epochs
        self.warm_up_epochs = warm_up_epochs
        self.decision_interval = decision_interval
        self.history_window = history_window
        self.batch_size = batch_size
        self.batch_growth = batch_growth
        self.w_lr = w_lr
        self.w_momentum = w_momentum
        self.w_weight_decay = w_weight_decay
        self.alpha_lr = alpha_lr
        self.alpha_betas = alpha_betas
        self.alpha_weight_decay = alpha_weight_decay
        self.grad_clip = grad_clip
        self.train_to_end = train_to_end
        self.cells = cells
        self.width = width
        self.n_intermediate = n_intermediate
        self.random_state = random_state

    def search_config(self) -> SearchConfig:
        params = self.get_params()
        seed = params.pop("random_state")
        return SearchConfig(seed=seed, **params)

    def fit(self, X, y, X_val=None, y_val=None):
        cfg = self.search_config()
        X, y_idx = self._encode(X, y)
        if X_val is None:
            ds = split(Dataset(X, y_idx, classes=tuple(range(len(self.classes_)))),
                       (0.5, 0.5, 0.0), seed=cfg.seed)
        else:
            X_val, y_val = check_X_y(X_val, y_val, dtype=np.float64)
            lookup = {c: k for k, c in enumerate(self.classes_)}
            yv = np.array([lookup[c] for c in y_val], dtype=np.int64)
            n = len(y_idx)
            ds = Dataset(np.vstack([X, X_val]), np.concatenate([y_idx, yv]),
                         splits={"w_train": np.arange(n), "alpha_val": np.arange(n, n + len(yv)),
                                 "test": np.array([], dtype=np.int64)},
                         classes=tuple(range(len(self.classes_))))
        self.search_result_ = run_search(cfg, ds)
        self.genotype_ = self.search_result_.genotype
        self.network_ = self.search_result_.network
        return self
