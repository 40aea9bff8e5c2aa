"""Training: configs, Adam, early stopping, the standard and staged trainers."""

import json
import time
from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from . import layers as ly
from .autodiff import Tensor
from .errors import NumericalAbort
from .metrics import CollapseReport, collapse_report
from .sparse import normalized_laplacian

VARIANTS = ("gcn", "sgc", "gcn+pairnorm")
TRAINERS = ("standard", "lgt")

# per-trainer dropout defaults, applied when TrainConfig.dropout_p is None
DROPOUT_DEFAULTS = {"standard": 0.5, "lgt": 0.0}


@dataclass
class TrainConfig:
    depth: int = 2
    hidden_dim: int = 64
    lr: float = 0.01
    weight_decay: float = 5e-4
    dropout_p: float | None = None
    max_epochs: int = 500
    patience: int = 50
    lora_rank: int = 10
    lora_alpha: float | None = None
    lora_lr: float | None = None
    seed: int = 0
    loss_reduction: str = "mean"
    merge_adapters: bool = True
    use_lora: bool = True
    new_layer_init: str = "identity"
    pairnorm_s: float = 1.0
    row_normalize_features: bool = True

    def validate(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.dropout_p is not None and not 0.0 <= self.dropout_p < 1.0:
            raise ValueError("dropout_p outside [0, 1)")
        if self.max_epochs < 1:
            raise ValueError("max_epochs must be >= 1")
        if not 1 <= self.patience <= self.max_epochs:
            raise ValueError("patience must be in [1, max_epochs]")
        if self.lora_rank < 1:
            raise ValueError("lora_rank must be >= 1")
        if self.loss_reduction not in ("mean", "sum"):
            raise ValueError("loss_reduction must be 'mean' or 'sum'")
        if self.new_layer_init not in ("identity", "glorot"):
            raise ValueError("new_layer_init must be 'identity' or 'glorot'")
        return self

    def resolved_dropout(self, trainer):
        if self.dropout_p is not None:
            return self.dropout_p
        return DROPOUT_DEFAULTS[trainer]

    def resolved_lora_lr(self):
        return self.lr if self.lora_lr is None else self.lora_lr


def adam_step(param, grad, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8,
              weight_decay=0.0):
    """One Adam update with bias correction and decoupled weight decay, in place."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    param -= lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * param)


class Adam:
    """Adam over parameter groups; each group carries its own lr and weight decay."""

    def __init__(self, groups, beta1=0.9, beta2=0.999, eps=1e-8):
        self.groups = [
            {"params": list(g["params"]), "lr": float(g["lr"]),
             "weight_decay": float(g.get("weight_decay", 0.0))}
            for g in groups
        ]
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self._state = {}
        for g in self.groups:
            for p in g["params"]:
                self._state[id(p)] = (np.zeros_like(p.data), np.zeros_like(p.data))

    def zero_grad(self):
        for g in self.groups:
            for p in g["params"]:
                p.grad = None

    def step(self):
        self.t += 1
        for g in self.groups:
            for p in g["params"]:
                if p.grad is None:
                    continue
                if not np.all(np.isfinite(p.grad)):
                    raise NumericalAbort(
                        f"non-finite gradient for parameter of shape {p.data.shape} "
                        f"at step {self.t}"
                    )
                m, v = self._state[id(p)]
                adam_step(p.data, p.grad, m, v, self.t, g["lr"],
                          self.beta1, self.beta2, self.eps, g["weight_decay"])


class EarlyStopper:
    """Stop after ``patience`` consecutive epochs without strict improvement."""

    def __init__(self, patience):
        if patience < 1:
            raise ValueError("patience must be >= 1")
        self.patience = patience
        self.best = -np.inf
        self.best_epoch = 0
        self.epoch = 0
        self.bad = 0

    def update(self, value):
        """Record one epoch's metric; returns True when training should stop."""
        self.epoch += 1
        if value > self.best:
            self.best = value
            self.best_epoch = self.epoch
            self.bad = 0
        else:
            self.bad += 1
        return self.bad >= self.patience


@dataclass
class StageReport:
    epochs_run: int
    best_val_acc: float
    train_loss: list
    wall_clock_seconds: float


@dataclass
class TrainReport:
    stages: list
    test_acc: float
    collapse: CollapseReport | None
    total_wall_clock: float

    @property
    def total_epochs(self):
        return sum(s.epochs_run for s in self.stages)

    def to_dict(self):
        d = asdict(self)
        d["collapse"] = None if self.collapse is None else self.collapse.to_dict()
        return d

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)

    @staticmethod
    def from_dict(d):
        return TrainReport(
            stages=[StageReport(**s) for s in d["stages"]],
            test_acc=d["test_acc"],
            collapse=None if d["collapse"] is None else CollapseReport.from_dict(d["collapse"]),
            total_wall_clock=d["total_wall_clock"],
        )

    @staticmethod
    def from_json(s):
        return TrainReport.from_dict(json.loads(s))


def _accuracy(logits, labels, idx):
    if idx.size == 0:
        raise ValueError("empty evaluation mask")
    pred = np.argmax(logits[idx], axis=1)
    return float((pred == labels[idx]).mean())


def evaluate(stack, data, mask, L=None):
    """Accuracy of the stack on the given node indices."""
    if L is None:
        L = normalized_laplacian(data.adjacency)
    logits = ly.stack_forward(stack, L, data.X)
    return _accuracy(logits.data, data.labels, np.asarray(mask, dtype=np.int64))


def _snapshot(tensors):
    return [t.data.copy() for t in tensors]


def _restore(tensors, snap):
    for t, s in zip(tensors, snap):
        t.data = s.copy()


def _fit(forward, mutable, groups, data, cfg):
    """Shared epoch loop: optimize, track val accuracy, restore the best weights.

    ``forward(training)`` builds the graph and returns logits. Returns a
    StageReport (wall clock filled in by the caller's timer).
    """
    adam = Adam(groups)
    stopper = EarlyStopper(cfg.patience)
    best_snap = None
    curve = []
    train_idx = data.splits.train
    val_idx = data.splits.val
    for _ in range(cfg.max_epochs):
        logits = forward(True)
        loss = ad.masked_cross_entropy(
            ad.log_softmax_rows(logits), data.labels, train_idx, cfg.loss_reduction
        )
        if not np.isfinite(loss.data):
            raise NumericalAbort(f"non-finite training loss at epoch {len(curve) + 1}")
        adam.zero_grad()
        loss.backward()
        adam.step()
        curve.append(float(loss.data))
        val_acc = _accuracy(forward(False).data, data.labels, val_idx)
        if val_acc > stopper.best:
            best_snap = _snapshot(mutable)
        if stopper.update(val_acc):
            break
    if best_snap is not None:
        _restore(mutable, best_snap)
    return StageReport(
        epochs_run=len(curve),
        best_val_acc=float(stopper.best),
        train_loss=curve,
        wall_clock_seconds=0.0,
    )


def _build_standard_stack(data, cfg, variant, rng, dropout_p):
    d, dtype = cfg.hidden_dim, np.float32
    if variant == "sgc":
        return ly.LayerStack(
            input_layer=None,
            head=Tensor(ly.glorot_init(data.f, data.C, rng, dtype), requires_grad=True),
            dropout_p=dropout_p,
            sgc_steps=cfg.depth,
            row_normalize=cfg.row_normalize_features,
        ).check()
    stack = ly.LayerStack(
        input_layer=ly.GcnLayer(Tensor(ly.glorot_init(data.f, d, rng, dtype), requires_grad=True)),
        hidden_layers=[
            ly.GcnLayer(Tensor(ly.glorot_init(d, d, rng, dtype), requires_grad=True))
            for _ in range(cfg.depth - 1)
        ],
        head=Tensor(ly.glorot_init(d, data.C, rng, dtype), requires_grad=True),
        dropout_p=dropout_p,
        pairnorm=ly.PairNormConfig(cfg.pairnorm_s) if variant == "gcn+pairnorm" else None,
        row_normalize=cfg.row_normalize_features,
    )
    return stack.check()


def train_standard(data, cfg, variant="gcn"):
    """Train the whole depth-K model jointly, with early stopping on val accuracy."""
    cfg.validate()
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    rng = np.random.default_rng(cfg.seed)
    L = normalized_laplacian(data.adjacency)
    if cfg.dropout_p is not None:
        dropout_p = cfg.dropout_p
    else:
        # the propagation-only baseline has a bare linear head, no dropout
        dropout_p = 0.0 if variant == "sgc" else DROPOUT_DEFAULTS["standard"]
    stack = _build_standard_stack(data, cfg, variant, rng, dropout_p)
    Xp = ly.prepare_features(stack, data.X)

    if variant == "sgc":
        # propagation is parameter-free, so hoist it out of the epoch loop
        P = ly.sgc_propagate(L, Xp, cfg.depth)

        def forward(training):
            h = ly.dropout(Tensor(P), stack.dropout_p, training, rng)
            return ad.matmul(h, stack.head)
    else:
        def forward(training):
            return ly.stack_forward(stack, L, Xp, training=training, rng=rng, prepared=True)

    params = stack.trainable_parameters()
    groups = [{"params": params, "lr": cfg.lr, "weight_decay": cfg.weight_decay}]
    t0 = time.perf_counter()
    stage = _fit(forward, params, groups, data, cfg)
    stage.wall_clock_seconds = time.perf_counter() - t0

    test_acc = _accuracy(forward(False).data, data.labels, data.splits.test)
    return stack, TrainReport(
        stages=[stage],
        test_acc=test_acc,
        collapse=collapse_report(stack, data, L),
        total_wall_clock=stage.wall_clock_seconds,
    )


def _stage_caches(stack, L, Xp):
    """Constant work that can be hoisted out of a stage's epoch loop.

    With dropout off, every leading layer that is frozen *without* an adapter
    produces the same features all stage long, and for the first frozen layer
    *with* an adapter both S = L @ H and C = S @ W0 are constant, leaving only
    the low-rank path S @ A @ B to rebuild per epoch. Invalid (and skipped)
    when dropout is active.
    """
    layers = stack.conv_layers()
    if stack.dropout_p > 0.0:
        return {"prefix_out": Xp, "start": 0, "split": None}
    h = Tensor(Xp)
    i = 0
    while i < len(layers) and layers[i].mode is ly.LayerMode.FROZEN:
        h = ly.gcn_forward(L, h, layers[i])
        if stack.pairnorm is not None:
            h = ly.pairnorm(h, stack.pairnorm)
        i += 1
    split = None
    if i < len(layers) and layers[i].mode is ly.LayerMode.FROZEN_LORA:
        S = ad.spmm(L, h).data
        split = {"layer": i, "S": S, "C": S @ layers[i].W.data}
        i += 1
    return {"prefix_out": h.data, "start": i, "split": split}


def _stage_forward(stack, L, caches, training, rng):
    layers = stack.conv_layers()
    h = Tensor(caches["prefix_out"])
    if caches["split"] is not None:
        sp = caches["split"]
        layer = layers[sp["layer"]]
        delta = ad.scale(
            ad.matmul(ad.matmul(Tensor(sp["S"]), layer.adapter.A), layer.adapter.B),
            layer.adapter.scaling,
        )
        h = ad.relu(ad.add(Tensor(sp["C"]), delta))
        if stack.pairnorm is not None:
            h = ly.pairnorm(h, stack.pairnorm)
    for layer in layers[caches["start"]:]:
        h = ly.dropout(h, stack.dropout_p, training, rng)
        h = ly.gcn_forward(L, h, layer)
        if stack.pairnorm is not None:
            h = ly.pairnorm(h, stack.pairnorm)
    h = ly.dropout(h, stack.dropout_p, training, rng)
    return ad.matmul(h, stack.head)


def train_lgt(data, cfg, variant="gcn", on_stage_start=None, on_stage_end=None):
    """Grow the network one layer per stage, adapting frozen layers via LoRA.

    Stage 1 trains the input layer and head jointly. Every later stage appends
    a new hidden layer (identity-initialized by default), attaches fresh
    low-rank adapters to all frozen layers, and trains only the new layer, the
    head, and the adapters. Adapters are folded into their frozen weights at
    stage end when cfg.merge_adapters is set.

    Callbacks, both optional, fire inside each stage: ``on_stage_start(stage,
    stack, L, Xp)`` after growth but before any optimizer step, and
    ``on_stage_end(stage, stack)`` after best-weight restore but before
    merging. The final depth equals cfg.depth.
    """
    cfg.validate()
    if variant not in ("gcn", "gcn+pairnorm"):
        raise ValueError(f"staged training supports gcn variants, not {variant!r}")
    if cfg.use_lora and cfg.depth > 1:
        # adapters attach to the f×d input layer too, so f bounds the rank
        max_rank = min(data.f, cfg.hidden_dim)
        if cfg.lora_rank > max_rank:
            raise ValueError(
                f"lora rank {cfg.lora_rank} exceeds min(feature dim, hidden dim)"
                f" = {max_rank}")
    rng = np.random.default_rng(cfg.seed)
    L = normalized_laplacian(data.adjacency)
    d, dtype = cfg.hidden_dim, np.float32
    dropout_p = cfg.resolved_dropout("lgt")

    stack = ly.LayerStack(
        input_layer=ly.GcnLayer(Tensor(ly.glorot_init(data.f, d, rng, dtype), requires_grad=True)),
        head=Tensor(ly.glorot_init(d, data.C, rng, dtype), requires_grad=True),
        dropout_p=dropout_p,
        pairnorm=ly.PairNormConfig(cfg.pairnorm_s) if variant == "gcn+pairnorm" else None,
        row_normalize=cfg.row_normalize_features,
    ).check()
    Xp = ly.prepare_features(stack, data.X)

    stages = []
    t_total = time.perf_counter()
    for stage_idx in range(1, cfg.depth + 1):
        if stage_idx > 1:
            if cfg.new_layer_init == "identity":
                w = ly.identity_init(d, dtype)
            else:
                w = ly.glorot_init(d, d, rng, dtype)
            stack.hidden_layers.append(ly.GcnLayer(Tensor(w, requires_grad=True)))
            if cfg.use_lora:
                for layer in stack.conv_layers()[:-1]:
                    if layer.adapter is None:
                        layer.attach_adapter(ly.make_adapter(
                            layer.d_in, layer.d_out, cfg.lora_rank, cfg.lora_alpha,
                            rng, dtype,
                        ))
            stack.check()

        if on_stage_start is not None:
            on_stage_start(stage_idx, stack, L, Xp)

        new_layer = stack.conv_layers()[-1]
        main = [new_layer.W, stack.head]
        adapters = []
        for layer in stack.conv_layers()[:-1]:
            if layer.adapter is not None:
                adapters.extend([layer.adapter.A, layer.adapter.B])
        groups = [{"params": main, "lr": cfg.lr, "weight_decay": cfg.weight_decay}]
        if adapters:
            groups.append({"params": adapters, "lr": cfg.resolved_lora_lr(),
                           "weight_decay": 0.0})

        caches = _stage_caches(stack, L, Xp)

        def forward(training):
            return _stage_forward(stack, L, caches, training, rng)

        t0 = time.perf_counter()
        stage = _fit(forward, main + adapters, groups, data, cfg)
        stage.wall_clock_seconds = time.perf_counter() - t0
        stages.append(stage)

        if on_stage_end is not None:
            on_stage_end(stage_idx, stack)

        if cfg.merge_adapters:
            for layer in stack.conv_layers()[:-1]:
                layer.merge_adapter()
        new_layer.freeze()

    total = time.perf_counter() - t_total
    test_acc = evaluate(stack, data, data.splits.test, L)
    return stack, TrainReport(
        stages=stages,
        test_acc=test_acc,
        collapse=collapse_report(stack, data, L),
        total_wall_clock=total,
    )


def train(data, cfg, trainer="standard", variant="gcn", **callbacks):
    """Dispatch to the requested trainer; returns (stack, report)."""
    if trainer == "standard":
        return train_standard(data, cfg, variant)
    if trainer == "lgt":
        return train_lgt(data, cfg, variant, **callbacks)
    raise ValueError(f"unknown trainer {trainer!r}")
