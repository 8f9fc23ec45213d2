"""MSE training with Adam and a one-cycle learning-rate schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import nn
from .graphs import build_bundle
from .model import (
    Features,
    GaussianPeak,
    ModelConfig,
    ModelState,
    collate,
    featurize,
    forward_batch,
    init_model,
)

log = logging.getLogger(__name__)

ADAM_EPS = 1e-8


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    epochs: int = 1000
    lr_init: float = 1e-4
    lr_max: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0
    warmup_fraction: float = 0.3
    # stop once validation MSE drops to this value (None: run every epoch)
    target_val_loss: float | None = None

    def __post_init__(self):
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 0.0 < self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in (0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TrainHistory:
    epoch: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    lr: list[float] = field(default_factory=list)
    # per-output validation MSE, shape (epochs, n_outputs)
    val_components: list[np.ndarray] = field(default_factory=list)

    def __len__(self):
        return len(self.epoch)

    @property
    def best_val(self) -> float:
        return min(self.val_loss)

    def rows(self):
        return zip(self.epoch, self.train_loss, self.val_loss, self.lr)

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,val_loss,lr\n")
            for e, tr, va, lr in self.rows():
                fh.write(f"{e},{tr!r},{va!r},{lr!r}\n")


def mse_loss(pred: Sequence[GaussianPeak], target: Sequence[GaussianPeak]) -> float:
    """Mean over samples and the three peak parameters of squared error."""
    if len(pred) != len(target):
        raise ValueError("prediction and target lengths differ")
    if not pred:
        raise ValueError("empty batch")
    p = np.array([x.as_array() for x in pred])
    t = np.array([x.as_array() for x in target])
    return float(np.mean((p - t) ** 2))


def mse_node(pred: nn.Node, target: np.ndarray) -> nn.Node:
    return nn.mean(nn.square(nn.sub(pred, target)))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros(cls, params: Sequence[nn.Parameter]) -> "AdamState":
        return cls(
            {p.name: np.zeros_like(p.value) for p in params},
            {p.name: np.zeros_like(p.value) for p in params},
        )


def adam_step(
    params: Sequence[nn.Parameter],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = ADAM_EPS,
) -> None:
    """In-place Adam update from each parameter's ``grad`` with bias correction."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for p in params:
        g = p.grad
        m = state.m[p.name] = beta1 * state.m[p.name] + (1.0 - beta1) * g
        v = state.v[p.name] = beta2 * state.v[p.name] + (1.0 - beta2) * g * g
        p.value = p.value - lr * (m / c1) / (np.sqrt(v / c2) + eps)


def one_cycle_lr(step: int, total_steps: int, cfg: TrainConfig) -> float:
    """Linear warm-up lr_init -> lr_max, then cosine decay to lr_init / 10."""
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    warm = cfg.warmup_fraction * total_steps
    if step <= warm:
        frac = step / warm if warm > 0 else 1.0
        return cfg.lr_init + frac * (cfg.lr_max - cfg.lr_init)
    floor = cfg.lr_init / 10.0
    frac = (step - warm) / (total_steps - 1 - warm)
    return floor + 0.5 * (cfg.lr_max - floor) * (1.0 + math.cos(math.pi * frac))


def target_array(records, cfg: ModelConfig, component: int = 2) -> np.ndarray:
    """(n, 3) peak targets, or the (n, 1) amplitude for the interpretable head."""
    t = np.array([r.target.as_array() for r in records])
    return t if cfg.head == "peak" else t[:, component : component + 1]


def featurize_records(records, cfg: ModelConfig) -> list[Features]:
    from .data import rules_for

    return [
        featurize(build_bundle(r.structure, cfg.representation, rules_for(r.structure)), cfg)
        for r in records
    ]


def evaluate(feats: list[Features], targets: np.ndarray, state: ModelState, batch_size: int = 512):
    """(mse, per-output mse)."""
    sq = np.zeros(targets.shape[1])
    for i in range(0, len(feats), batch_size):
        out = forward_batch(collate(feats[i : i + batch_size]), state).value
        sq += ((out - targets[i : i + batch_size]) ** 2).sum(axis=0)
    comp = sq / len(feats)
    return float(comp.mean()), comp


def train(
    dataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    on_epoch: Callable[[int, TrainHistory], None] | None = None,
    init_state: ModelState | None = None,
) -> tuple[ModelState, TrainHistory]:
    """Train on ``dataset = (train_records, val_records)``; returns the best-validation state."""
    train_recs, val_recs = dataset
    if not train_recs or not val_recs:
        raise ValueError("training and validation sets must be non-empty")
    state = init_state.copy() if init_state is not None else init_model(model_cfg, train_cfg.seed)
    tr_feats = featurize_records(train_recs, model_cfg)
    va_feats = featurize_records(val_recs, model_cfg)
    tr_y = target_array(train_recs, model_cfg)
    va_y = target_array(val_recs, model_cfg)
    return train_features(
        (tr_feats, tr_y), (va_feats, va_y), state, train_cfg, on_epoch=on_epoch
    )


def train_features(
    train_data, val_data, state: ModelState, cfg: TrainConfig, on_epoch=None
) -> tuple[ModelState, TrainHistory]:
    tr_feats, tr_y = train_data
    va_feats, va_y = val_data
    n = len(tr_feats)
    M = cfg.batch_size
    per_epoch = math.ceil(n / M)
    total = per_epoch * cfg.epochs
    params = state.parameters()
    adam = AdamState.zeros(params)
    hist = TrainHistory()
    best, best_val = state.copy(), math.inf
    step = 0
    for epoch in range(cfg.epochs):
        order = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        run, lr = 0.0, cfg.lr_init
        for b in range(per_epoch):
            idx = order[b * M : (b + 1) * M]
            batch = collate([tr_feats[i] for i in idx])
            tape = nn.Tape()
            loss = mse_node(forward_batch(batch, state, tape), tr_y[idx])
            if not np.isfinite(loss.value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b}")
            state.zero_grad()
            tape.backward(loss)
            lr = one_cycle_lr(step, total, cfg)
            adam_step(params, adam, lr, cfg.beta1, cfg.beta2)
            step += 1
            run += float(loss.value) * len(idx)
        val, comp = evaluate(va_feats, va_y, state)
        if not np.isfinite(val):
            raise TrainingDiverged(f"non-finite validation loss at epoch {epoch}")
        hist.epoch.append(epoch)
        hist.train_loss.append(run / n)
        hist.val_loss.append(val)
        hist.lr.append(lr)
        hist.val_components.append(comp)
        if val < best_val:
            best_val, best = val, state.copy()
        log.info("epoch %d train %.6g val %.6g lr %.3g", epoch, run / n, val, lr)
        # a callback returning True ends training after this epoch
        if on_epoch is not None and on_epoch(epoch, hist):
            break
        if cfg.target_val_loss is not None and val <= cfg.target_val_loss:
            break
    return best, hist
