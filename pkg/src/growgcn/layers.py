"""Model structure: graph-conv layers, low-rank adapters, and the layer stack."""

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import row_normalize


class LayerMode(str, Enum):
    TRAINABLE = "trainable"
    FROZEN = "frozen"
    FROZEN_LORA = "frozen_lora"


def identity_init(d, dtype=np.float32):
    return np.eye(d, dtype=dtype)


def glorot_init(d_in, d_out, rng, dtype=np.float32):
    """Uniform(-a, a) with a = sqrt(6 / (d_in + d_out))."""
    rng = np.random.default_rng(rng)
    a = math.sqrt(6.0 / (d_in + d_out))
    return rng.uniform(-a, a, size=(d_in, d_out)).astype(dtype)


@dataclass(eq=False)
class LoraAdapter:
    """Low-rank delta W0 + (alpha/rank) * A @ B attached to a frozen weight."""

    A: Tensor
    B: Tensor
    rank: int
    alpha: float

    def __post_init__(self):
        d_in, r_a = self.A.data.shape
        r_b, d_out = self.B.data.shape
        if r_a != self.rank or r_b != self.rank:
            raise ValueError(f"adapter factors have rank {r_a}/{r_b}, declared {self.rank}")
        if not 1 <= self.rank <= min(d_in, d_out):
            raise ValueError(f"rank {self.rank} outside [1, min({d_in}, {d_out})]")

    @property
    def scaling(self):
        return self.alpha / self.rank

    def delta(self):
        return ad.scale(ad.matmul(self.A, self.B), self.scaling)

    def param_count(self):
        return self.A.data.size + self.B.data.size


def make_adapter(d_in, d_out, rank, alpha, rng, dtype=np.float32):
    """Fresh adapter: A ~ N(0, 0.02^2), B = 0, so the initial delta is exactly zero."""
    a = rng.normal(0.0, 0.02, size=(d_in, rank)).astype(dtype)
    b = np.zeros((rank, d_out), dtype=dtype)
    return LoraAdapter(
        A=Tensor(a, requires_grad=True),
        B=Tensor(b, requires_grad=True),
        rank=rank,
        alpha=float(rank) if alpha is None else float(alpha),
    )


def lora_effective_weight(w0, adapter):
    """W0 + (alpha/rank) * A @ B as a graph node; W0 stays gradient-free when frozen."""
    return ad.add(w0, adapter.delta())


@dataclass(eq=False)
class GcnLayer:
    W: Tensor
    mode: LayerMode = LayerMode.TRAINABLE
    adapter: LoraAdapter | None = None

    def __post_init__(self):
        self.check()

    def check(self):
        if (self.adapter is not None) != (self.mode is LayerMode.FROZEN_LORA):
            raise ValueError("adapter present iff mode is frozen_lora")
        if self.mode is LayerMode.TRAINABLE and not self.W.requires_grad:
            raise ValueError("trainable layer weight must require grad")
        if self.mode is not LayerMode.TRAINABLE and self.W.requires_grad:
            raise ValueError("frozen layer weight must not require grad")
        if self.adapter is not None:
            d_in, d_out = self.W.data.shape
            if self.adapter.A.data.shape[0] != d_in or self.adapter.B.data.shape[1] != d_out:
                raise ValueError("adapter shape does not match weight")
        return self

    @property
    def d_in(self):
        return self.W.data.shape[0]

    @property
    def d_out(self):
        return self.W.data.shape[1]

    def effective_weight(self):
        if self.adapter is not None:
            return lora_effective_weight(self.W, self.adapter)
        return self.W

    def freeze(self):
        self.W.requires_grad = False
        self.mode = LayerMode.FROZEN_LORA if self.adapter is not None else LayerMode.FROZEN

    def attach_adapter(self, adapter):
        self.freeze()
        self.adapter = adapter
        self.mode = LayerMode.FROZEN_LORA
        return self.check()

    def merge_adapter(self):
        """Fold the adapter delta into W0 in place and drop the adapter."""
        a = self.adapter
        if a is None:
            return
        w = self.W.data
        w += np.asarray(a.scaling * (a.A.data @ a.B.data), dtype=w.dtype)
        self.adapter = None
        self.mode = LayerMode.FROZEN


@dataclass
class PairNormConfig:
    s: float = 1.0

    def __post_init__(self):
        if self.s <= 0:
            raise ValueError("pairnorm scale must be positive")


def pairnorm(h, cfg):
    """Center columns, then rescale so the Frobenius norm is s * sqrt(n).

    A zero matrix (after centering) maps to zero.
    """
    n = h.data.shape[0]
    centered = h.data - h.data.mean(axis=0, keepdims=True)
    fro = float(np.sqrt((centered * centered).sum()))
    if fro == 0.0:
        def bwd_zero(g):
            ad._accum(h, np.zeros_like(h.data))

        return ad._compose(np.zeros_like(h.data), (h,), bwd_zero)
    c = cfg.s * math.sqrt(n)
    k = c / fro
    out = centered * k

    def bwd(g):
        # d/dH of k(H)*centered(H): project out the radial and column-mean parts
        gc = g * k - centered * (float((g * centered).sum()) * (k / (fro * fro)))
        ad._accum(h, gc - gc.mean(axis=0, keepdims=True))

    return ad._compose(out, (h,), bwd)


def dropout(h, p, training, rng=None):
    """Inverted dropout; identity when not training or p == 0."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout p={p} outside [0, 1)")
    if not training or p == 0.0:
        return h
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = (rng.random(h.data.shape) >= p).astype(h.data.dtype)
    mask = keep * (1.0 / (1.0 - p))
    out = h.data * mask

    def bwd(g):
        ad._accum(h, g * mask)

    return ad._compose(out, (h,), bwd)


def gcn_forward(L, h, layer):
    """One graph convolution: relu(L @ H @ W_eff)."""
    return ad.relu(ad.matmul(ad.spmm(L, h), layer.effective_weight()))


def sgc_propagate(L, X, steps):
    """L^steps @ X computed hop by hop; pure preprocessing, no gradients."""
    if steps < 0:
        raise ValueError("steps must be >= 0")
    out = np.asarray(X)
    m = L.to_scipy(out.dtype)
    for _ in range(steps):
        out = m @ out
    return out


@dataclass(eq=False)
class LayerStack:
    """A depth-K model: optional input layer, square hidden layers, linear head.

    ``sgc_steps > 0`` with no conv layers is the parameter-free propagation
    baseline: features are propagated sgc_steps times, then the head applies.
    """

    input_layer: GcnLayer | None
    hidden_layers: list = field(default_factory=list)
    head: Tensor = None
    dropout_p: float = 0.0
    pairnorm: PairNormConfig | None = None
    sgc_steps: int = 0
    row_normalize: bool = True

    def check(self):
        layers = self.conv_layers()
        if self.input_layer is None and layers:
            raise ValueError("hidden layers require an input layer")
        if self.input_layer is None and self.sgc_steps < 1:
            raise ValueError("a stack needs conv layers or propagation steps")
        d_head = self.head.data.shape[0]
        for i, layer in enumerate(layers):
            layer.check()
            if i > 0 and layer.d_in != layers[i - 1].d_out:
                raise ValueError(f"layer {i} input dim {layer.d_in} != previous output")
        if layers and layers[-1].d_out != d_head:
            raise ValueError("head input dim does not match last layer")
        return self

    def conv_layers(self):
        layers = [] if self.input_layer is None else [self.input_layer]
        return layers + list(self.hidden_layers)

    @property
    def depth(self):
        k = len(self.conv_layers())
        return k if k else self.sgc_steps

    @property
    def hidden_dim(self):
        return self.head.data.shape[0]

    @property
    def n_classes(self):
        return self.head.data.shape[1]

    def parameters(self):
        """Every weight array in the model, adapters included."""
        out = []
        for layer in self.conv_layers():
            out.append(layer.W)
            if layer.adapter is not None:
                out.extend([layer.adapter.A, layer.adapter.B])
        out.append(self.head)
        return out

    def trainable_parameters(self):
        return [p for p in self.parameters() if p.requires_grad]


def prepare_features(stack, X):
    Xp = row_normalize(X) if stack.row_normalize else np.asarray(X)
    return Xp.astype(stack.head.data.dtype, copy=False)


def stack_forward(stack, L, X, *, training=False, rng=None, return_hidden=False,
                  prepared=False):
    """Full forward pass; returns logits (and per-layer features if asked).

    ``hidden[0]`` is the prepared input; ``hidden[k]`` is the output of layer k
    (or of the k-th propagation hop for a propagation-only stack).
    """
    Xp = X if prepared else prepare_features(stack, X)
    h = Tensor(Xp)
    hidden = [h.data]
    for _ in range(stack.sgc_steps):
        h = ad.spmm(L, h)
        hidden.append(h.data)
    for layer in stack.conv_layers():
        h = dropout(h, stack.dropout_p, training, rng)
        h = gcn_forward(L, h, layer)
        if stack.pairnorm is not None:
            h = pairnorm(h, stack.pairnorm)
        hidden.append(h.data)
    h = dropout(h, stack.dropout_p, training, rng)
    logits = ad.matmul(h, stack.head)
    if return_hidden:
        return logits, hidden
    return logits
