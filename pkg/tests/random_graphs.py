"""Seeded random computation graphs touching every autodiff op."""
import numpy as np

from sgas import autodiff as ad
from sgas.autodiff import Tensor


def random_graph(seed: int):
    """Return ``(build, params)`` for a three-layer graph drawn from ``seed``."""
    rng = np.random.default_rng(seed)
    n, d, h = (int(v) for v in rng.integers(2, 5, size=3))
    c = int(rng.integers(2, 4))
    k = int(rng.integers(2, 4))
    labels = rng.integers(0, c, size=n)
    # relu inputs get a fixed offset of magnitude >= 0.2 so finite differences never straddle the kink
    offset = rng.standard_normal((n, h))
    offset = np.sign(offset) * (0.2 + np.abs(offset))
    params = [
        Tensor(rng.standard_normal((n, d)) * 0.5, name="x"),
        Tensor(rng.standard_normal((d, h)) * 0.5, name="W1"),
        Tensor(rng.standard_normal(h) * 0.1, name="b1"),
        Tensor(rng.standard_normal((2 * h, c)) * 0.5, name="W2"),
        Tensor(rng.standard_normal(k), name="a"),
        Tensor(rng.standard_normal((1, c)) * 0.1, name="row"),
        Tensor(rng.standard_normal((c, 2)), name="m"),
    ]
    factor = float(rng.uniform(-2, 2))
    target = int(rng.integers(k))

    def build(ps):
        x, W1, b1, W2, a, row, m = ps
        pre = ad.add(ad.scale(ad.affine(x, W1, b1), 0.05), Tensor(offset))
        h1 = ad.relu(pre)
        gate = ad.sigmoid(ad.matmul(x, W1))
        h2 = ad.mul(h1, gate)
        h3 = ad.concat([h2, ad.scale(h1, factor)], axis=1)
        logits = ad.matmul(h3, W2)
        w = ad.softmax(a)
        branches = [logits, ad.add(logits, row), ad.mul(logits, row)][:k]
        mixed = ad.weighted_sum(w, branches, list(range(k)))
        col = ad.softmax(ad.mul(m, m), axis=0)
        loss = ad.cross_entropy(mixed, labels)
        loss = ad.add(loss, ad.cross_entropy(ad.scale(a, 1.5), target))
        loss = ad.add(loss, ad.scale(ad.mean(ad.mul(x, x)), 0.1))
        loss = ad.add(loss, ad.mul(ad.index(w, k - 1), ad.total(ad.mul(col, col))))
        return loss

    return build, params


OPS_COVERED = {"affine", "add", "scale", "relu", "sigmoid", "matmul", "mul_elementwise", "concat",
               "softmax", "weighted_sum", "cross_entropy", "mean", "index", "sum"}
