"""Randomized gradient-check suite covering every differentiable component.

Each seed builds a tiny random graph and a stack that exercises a trainable
conv layer, a frozen conv layer with a low-rank adapter, the head, and the
masked cross-entropy loss; alternate seeds route through PairNorm as well.
All checks run in float64.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import layers as ly
from .autodiff import Tensor
from .data import generate_sbm
from .sparse import build_adjacency, normalized_laplacian


@dataclass
class SuiteResult:
    seeds: int
    max_error: float
    threshold: float
    per_seed: list = field(default_factory=list)

    @property
    def passed(self):
        return self.max_error < self.threshold


def _case(seed):
    """Random tiny problem: graph, features, labels, train mask."""
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 11))
    f = int(rng.integers(3, 9))
    d = int(rng.integers(2, 9))
    c = int(rng.integers(2, 5))
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < 0.5]
    # keep at least a spanning path so no row of L is trivial
    pairs += [(i, i + 1) for i in range(n - 1)]
    adj = build_adjacency(pairs, n)
    X = rng.standard_normal((n, f))
    labels = rng.integers(0, c, size=n)
    mask = rng.choice(n, size=max(2, n // 2), replace=False)
    return adj, X, labels, mask, (f, d, c), rng


def run_case(seed, eps=1e-5, use_pairnorm=None):
    """Gradient-check one random stack; returns the max relative error."""
    adj, X, labels, mask, (f, d, c), rng = _case(seed)
    L = normalized_laplacian(adj)
    if use_pairnorm is None:
        use_pairnorm = seed % 2 == 0
    rank = 2
    dt = np.float64

    w_in = Tensor(ly.glorot_init(f, d, rng, dt), requires_grad=True)
    frozen = ly.GcnLayer(Tensor(ly.glorot_init(d, d, rng, dt), requires_grad=False),
                         mode=ly.LayerMode.FROZEN)
    adapter = ly.make_adapter(d, d, rank, None, rng, dt)
    # start B away from zero so its gradient path into A is live
    adapter.B.data = rng.standard_normal(adapter.B.data.shape) * 0.1
    frozen.attach_adapter(adapter)
    head = Tensor(ly.glorot_init(d, c, rng, dt), requires_grad=True)
    pn = ly.PairNormConfig(1.0) if use_pairnorm else None

    x0 = Tensor(X)

    def loss_fn():
        h = ad.relu(ad.matmul(ad.spmm(L, x0), w_in))
        if pn is not None:
            h = ly.pairnorm(h, pn)
        h = ly.gcn_forward(L, h, frozen)
        if pn is not None:
            h = ly.pairnorm(h, pn)
        logits = ad.matmul(h, head)
        return ad.masked_cross_entropy(ad.log_softmax_rows(logits), labels, mask)

    params = [w_in, adapter.A, adapter.B, head]
    err = ad.grad_check(loss_fn, params, eps=eps)

    # frozen weight must stay out of the gradient flow entirely
    assert frozen.W.grad is None, "frozen weight accumulated a gradient"
    return err


def run_suite(seeds=100, eps=1e-5, threshold=1e-6, corrupt_backward=False):
    """Run ``seeds`` randomized checks; optionally sabotage relu's backward.

    The corrupt mode exists to prove the checker actually detects wrong
    gradients: it scales relu's backward by 1.05 and the suite must then fail.
    """
    real_relu = ad.relu

    def bad_relu(x):
        mask = x.data > 0
        out = x.data * mask

        def bwd(g):
            ad._accum(x, g * mask * 1.05)

        return ad._compose(out, (x,), bwd)

    if corrupt_backward:
        ad.relu = bad_relu
    try:
        per_seed = [run_case(seed, eps=eps) for seed in range(seeds)]
    finally:
        ad.relu = real_relu
    return SuiteResult(
        seeds=seeds,
        max_error=max(per_seed) if per_seed else 0.0,
        threshold=threshold,
        per_seed=per_seed,
    )


def sgc_head_case(seed, eps=1e-5):
    """Separate check for the propagation-only model's head gradient."""
    ds = generate_sbm(2, 30, 0.5, 0.2, f=4, signal=1.0, seed=seed)
    L = normalized_laplacian(ds.adjacency)
    P = ly.sgc_propagate(L, ds.X, 3)
    rng = np.random.default_rng(seed)
    head = Tensor(ly.glorot_init(ds.f, ds.C, rng, np.float64), requires_grad=True)
    pt = Tensor(P)

    def loss_fn():
        logits = ad.matmul(pt, head)
        return ad.masked_cross_entropy(
            ad.log_softmax_rows(logits), ds.labels, ds.splits.train
        )

    return ad.grad_check(loss_fn, [head], eps=eps)
