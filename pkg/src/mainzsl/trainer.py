"""Reptile meta-training over the augmented replay pool, plus the direct
(non-meta) optimization path used for ablations."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import numkit as nk
from .continual import Reservoir, TaskView, augmented_pool
from .encoder import HEAD_KINDS, SIA_MODES, MainModel
from .errors import BatchError, ConfigError, NumericError, ProtocolError
from .objective import Batch, LossBreakdown, joint_loss

log = logging.getLogger(__name__)

META_MODES = ("reptile_adam", "reptile_plain", "no_meta")
OPTIMIZERS = ("adam", "sgd")


@dataclass
class TrainConfig:
    lam: float = 5.0
    inner_lr: float = 1e-4
    meta_lr: float = 1e-3
    inner_steps: int = 5
    epochs_per_task: int = 200
    batch_size: int = 64
    meta_mode: str = "reptile_adam"
    inner_optimizer: str = "adam"
    lr_decay: bool = True
    head_kind: str = "cosine"
    sia_mode: str = "self_gating"
    depth: int = 1
    hidden_dim: int = 2048
    regressor_hidden: int | None = 2048
    use_bn: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError(f"lambda must be non-negative, got {self.lam}")
        if self.inner_lr <= 0 or self.meta_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.inner_steps < 1:
            raise ConfigError("inner_steps must be >= 1")
        if self.epochs_per_task < 1 or self.batch_size < 1:
            raise ConfigError("epochs_per_task and batch_size must be >= 1")
        if self.meta_mode not in META_MODES:
            raise ConfigError(f"meta_mode must be one of {META_MODES}")
        if self.inner_optimizer not in OPTIMIZERS:
            raise ConfigError(f"inner_optimizer must be one of {OPTIMIZERS}")
        if self.head_kind not in HEAD_KINDS:
            raise ConfigError(f"head_kind must be one of {HEAD_KINDS}")
        if self.sia_mode not in SIA_MODES:
            raise ConfigError(f"sia_mode must be one of {SIA_MODES}")
        if self.depth < 1 or self.hidden_dim < 1:
            raise ConfigError("depth and hidden_dim must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    def build_model(self, attr_dim: int, feat_dim: int) -> MainModel:
        return MainModel.create(
            attr_dim, feat_dim,
            hidden_dim=self.hidden_dim, depth=self.depth, sia_mode=self.sia_mode,
            head_kind=self.head_kind, use_bn=self.use_bn,
            regressor_hidden=self.regressor_hidden, seed=self.seed,
        )


# Starting point for runs on generated data: a narrow encoder trained for a
# few epochs, with step sizes raised to make up for the much shorter schedule.
# Everything not listed keeps the TrainConfig default, including lam.
SYNTH_DESK_TRAIN = {
    "hidden_dim": 256,
    "regressor_hidden": 256,
    "epochs_per_task": 6,
    "meta_lr": 1e-2,
    "inner_lr": 1e-3,
}


@dataclass
class MetaState:
    outer: nk.AdamState = field(default_factory=nk.AdamState)
    inner: nk.AdamState = field(default_factory=nk.AdamState)
    epoch: int = 0
    multiplier: float = 1.0


def lr_schedule(epoch: int, total_epochs: int, base_lr: float) -> float:
    """Linear decay from ``base_lr`` at epoch 0 to zero at the last epoch."""
    if total_epochs < 2:
        raise ConfigError("lr_schedule needs total_epochs >= 2")
    if not 0 <= epoch < total_epochs:
        raise ConfigError(f"epoch {epoch} outside [0, {total_epochs})")
    return base_lr * (1.0 - epoch / (total_epochs - 1))


def loss_and_grads(model: MainModel, params: dict, batch: Batch, lam: float):
    tape = nk.Tape()
    view = model.with_params(tape.watch(params))
    br = joint_loss(batch, view.encoder, view.regressor, view.head, lam)
    return br, nk.backward(tape, br.graph)


def _step(params, grads, kind, state, lr):
    if kind == "sgd":
        return nk.sgd_update(params, grads, lr), state
    return nk.adam_update(params, grads, state, lr)


def inner_update(model: MainModel, batch: Batch, config: TrainConfig, state: nk.AdamState | None = None):
    """``k`` optimizer steps on the joint loss, starting from a copy of ``model``.

    Returns ``(adapted_model, optimizer_state, losses)`` where ``losses[0]`` is
    the loss at the starting point. ``model`` itself is left untouched.
    """
    if len(batch) == 0:
        raise BatchError("empty batch")
    adapted = model.copy()
    params = adapted.params()
    state = nk.AdamState() if state is None else state
    losses = []
    for _ in range(config.inner_steps):
        br, grads = loss_and_grads(adapted, params, batch, config.lam)
        losses.append(br)
        params, state = _step(params, grads, config.inner_optimizer, state, config.inner_lr)
    adapted = adapted.with_params(params)
    return adapted, state, losses


def _assert_finite(params: dict) -> None:
    for name, p in params.items():
        if not np.isfinite(p).all():
            raise NumericError(f"non-finite value in {name} after meta step")


def reptile_step(model: MainModel, adapted: MainModel, meta: MetaState, config: TrainConfig, lr: float) -> MainModel:
    """Move ``model`` toward ``adapted``.

    ``reptile_plain``: params + lr * (adapted - params).
    ``reptile_adam``: the pseudo-gradient (params - adapted) goes through the outer Adam.
    Batch-norm running statistics are taken from ``adapted``.
    """
    old, new = model.params(), adapted.params()
    for name in old:
        if np.shape(old[name]) != np.shape(new[name]):
            raise nk.ops.DimensionError(f"{name}: shape {np.shape(old[name])} vs {np.shape(new[name])}")
    if config.meta_mode == "reptile_plain":
        updated = {k: old[k] + lr * (new[k] - old[k]) for k in old}
    elif config.meta_mode == "reptile_adam":
        pseudo = {k: old[k] - new[k] for k in old}
        updated, meta.outer = nk.adam_update(old, pseudo, meta.outer, lr)
    else:
        raise ConfigError(f"reptile_step called in {config.meta_mode!r} mode")
    _assert_finite(updated)
    out = model.with_params(updated)
    out.load_buffers(adapted.buffers())
    return out


@dataclass
class EpochTrace:
    epoch: int
    ce: float
    ir: float
    total: float
    lr: float


@dataclass
class TrainResult:
    model: MainModel
    trace: list
    meta: MetaState
    steps: int = 0


def trace_csv(trace, task_id: int | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = ["task"] if task_id is not None else []
    w.writerow(head + ["epoch", "ce", "ir", "total", "lr"])
    for e in trace:
        row = [task_id] if task_id is not None else []
        w.writerow(row + [e.epoch, repr(e.ce), repr(e.ir), repr(e.total), repr(e.lr)])
    return buf.getvalue()


def train_task(
    view: TaskView,
    reservoir: Reservoir | None,
    model: MainModel,
    config: TrainConfig,
    meta: MetaState | None = None,
    rng: np.random.Generator | None = None,
    on_step=None,
) -> TrainResult:
    """Train on one task: ``epochs_per_task`` passes over replay memory plus the task's data.

    ``on_step(model)`` is called after every parameter update when given.
    """
    if not view.seen_class_ids:
        raise ProtocolError(f"task {view.task_id} has no seen classes")
    meta = MetaState() if meta is None else meta
    rng = np.random.default_rng([config.seed, view.task_id]) if rng is None else rng
    pool = augmented_pool(reservoir or Reservoir(0), view.train_set)
    if len(pool) == 0:
        raise BatchError(f"task {view.task_id}: no training samples")
    local = {c: i for i, c in enumerate(view.seen_class_ids)}
    try:
        labels = np.array([local[int(y)] for y in pool.labels], dtype=np.int64)
    except KeyError as exc:
        raise ProtocolError(f"pool label {exc.args[0]} is not a seen class of task {view.task_id}") from None
    A_seen = view.seen_attributes
    E = config.epochs_per_task
    trace, steps = [], 0

    for epoch in range(E):
        lr = lr_schedule(epoch, E, config.meta_lr) if config.lr_decay and E >= 2 else config.meta_lr
        meta.epoch, meta.multiplier = epoch, lr / config.meta_lr
        order = rng.permutation(len(pool))
        sums = np.zeros(3)
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            idx = order[start: start + config.batch_size]
            batch = Batch(pool.features[idx], labels[idx], A_seen)
            if config.meta_mode == "no_meta":
                params = model.params()
                br, grads = loss_and_grads(model, params, batch, config.lam)
                params, meta.outer = _step(params, grads, config.inner_optimizer, meta.outer, lr)
                _assert_finite(params)
                model = model.with_params(params)
            else:
                adapted, meta.inner, losses = inner_update(model, batch, config, meta.inner)
                br = losses[0]
                model = reptile_step(model, adapted, meta, config, lr)
            sums += (br.ce, br.ir, br.total)
            n_batches += 1
            steps += 1
            if on_step is not None:
                on_step(model)
        ce, ir, total = sums / n_batches
        trace.append(EpochTrace(epoch, float(ce), float(ir), float(total), float(lr)))
        log.debug("task %d epoch %d total %.5f lr %.2e", view.task_id, epoch, total, lr)
    return TrainResult(model, trace, meta, steps)


__all__ = [
    "SYNTH_DESK_TRAIN",
    "EpochTrace",
    "LossBreakdown",
    "MetaState",
    "TrainConfig",
    "TrainResult",
    "inner_update",
    "loss_and_grads",
    "lr_schedule",
    "reptile_step",
    "train_task",
    "trace_csv",
]
