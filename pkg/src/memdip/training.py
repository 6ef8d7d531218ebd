"""Joint classification/reconstruction training with a masking-ratio curriculum."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .data.corpus import FeatureSet
from .dsp import ConfigError
from .masking import sample_mask_batch
from .model import MemModel, mem_loss, predict_logits, save_model

log = logging.getLogger(__name__)


class NonFiniteLossError(FloatingPointError):
    def __init__(self, message: str, batch_index: int, param_norms: dict[str, float]):
        super().__init__(message)
        self.batch_index = batch_index
        self.param_norms = param_norms


def _default_stages() -> tuple[tuple[float, int | None], ...]:
    ladder = [round(0.05 + 0.1 * k, 2) for k in range(9)]  # 0.05 ... 0.85
    return tuple((r, 200) for r in ladder) + ((0.9, None),)


@dataclass(frozen=True)
class CurriculumSchedule:
    """Ordered (masking ratio, epoch count) stages; a count of None never ends."""

    stages: tuple[tuple[float, int | None], ...] = field(default_factory=_default_stages)

    def __post_init__(self):
        stages = tuple((float(r), None if n is None else int(n)) for r, n in self.stages)
        if not stages:
            raise ConfigError("train.schedule needs at least one stage")
        ratios = [r for r, _ in stages]
        if any(not 0.0 <= r <= 1.0 for r in ratios):
            raise ConfigError("train.schedule ratios must lie in [0, 1]")
        if any(b < a for a, b in zip(ratios, ratios[1:])):
            raise ConfigError("train.schedule ratios must be nondecreasing")
        for _, n in stages[:-1]:
            if n is None or n < 1:
                raise ConfigError("train.schedule: only the last stage may be open-ended")
        if stages[-1][1] is not None and stages[-1][1] < 1:
            raise ConfigError("train.schedule stage lengths must be >= 1")
        object.__setattr__(self, "stages", stages)

    @classmethod
    def fixed(cls, ratio: float) -> "CurriculumSchedule":
        return cls(((ratio, None),))

    @classmethod
    def compressed(cls, epochs_per_stage: int, start: float = 0.05, step: float = 0.1,
                   cap: float = 0.9, cap_epochs: int | None = None) -> "CurriculumSchedule":
        """The default ladder with shorter stages."""
        stages, r = [], start
        while r < cap - 1e-9:
            stages.append((round(r, 6), epochs_per_stage))
            r += step
        stages.append((cap, cap_epochs))
        return cls(tuple(stages))

    def boundaries(self) -> list[int]:
        """First epoch of each stage."""
        out, e = [], 0
        for _, n in self.stages:
            out.append(e)
            if n is not None:
                e += n
        return out

    @property
    def total_epochs(self) -> int | None:
        if self.stages[-1][1] is None:
            return None
        return sum(n for _, n in self.stages)

    def to_list(self) -> list:
        return [[r, n] for r, n in self.stages]


def ratio_for_epoch(schedule: CurriculumSchedule, epoch: int) -> float:
    """Masking ratio active at ``epoch`` (the last stage repeats forever)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    start = 0
    for ratio, n in schedule.stages:
        if n is None or epoch < start + n:
            return ratio
        start += n
    return schedule.stages[-1][0]


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    seed: int = 0
    rec_weight: float = 0.1
    cls_weight: float = 1.0
    masked_only: bool = False
    schedule: CurriculumSchedule = field(default_factory=CurriculumSchedule)
    max_epochs: int | None = None
    checkpoint_every: int = 0
    early_stop_patience: int | None = None

    def __post_init__(self):
        if isinstance(self.schedule, (list, tuple)):
            object.__setattr__(self, "schedule", CurriculumSchedule(tuple(tuple(s) for s in self.schedule)))
        if self.batch_size < 1:
            raise ConfigError("train.batch_size must be >= 1")
        if self.rec_weight < 0:
            raise ConfigError("train.rec_weight must be >= 0")
        if self.lr < 0:
            raise ConfigError("train.lr must be >= 0")

    @property
    def epochs(self) -> int:
        if self.max_epochs is not None:
            return self.max_epochs
        total = self.schedule.total_epochs
        if total is None:
            raise ConfigError("train.max_epochs is required when the schedule is open-ended")
        return total

    def to_dict(self) -> dict:
        d = asdict(self)
        d["schedule"] = self.schedule.to_list()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train fields: {sorted(unknown)}")
        d = dict(d)
        if "schedule" in d:
            d["schedule"] = CurriculumSchedule(tuple(tuple(s) for s in d["schedule"]))
        return cls(**d)


class Adam:
    """Adaptive-moment updates over a fixed, ordered parameter list."""

    def __init__(self, params: Sequence[ad.Tensor], lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class EpochMetrics:
    epoch: int
    ratio: float
    train_loss_cls: float
    train_loss_mse: float
    train_acc: float
    val_acc: float | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def _param_norms(model: MemModel) -> dict[str, float]:
    return {k: float(np.linalg.norm(p.data)) for k, p in model.named_parameters()}


def train_epoch(model: MemModel, opt: Adam, data: FeatureSet, cfg: TrainConfig, epoch: int,
                ratio: float | None = None) -> EpochMetrics:
    """One pass over ``data`` with a fresh random mask per sample.

    Shuffling and masks derive from (seed, epoch) only, so an epoch is
    reproducible regardless of what ran before it.
    """
    if len(data) == 0:
        raise ValueError("training split is empty")
    if ratio is None:
        ratio = ratio_for_epoch(cfg.schedule, epoch)
    rng = np.random.default_rng([cfg.seed, epoch])
    order = rng.permutation(len(data))
    k = model.cfg.n_tokens
    params = list(model.parameters())
    sum_ce = sum_mse = 0.0
    correct = 0
    for bi, a in enumerate(range(0, len(order), cfg.batch_size)):
        rows = order[a : a + cfg.batch_size]
        x, y = data.x[rows], data.y[rows]
        visible, masked = sample_mask_batch(len(rows), k, ratio, rng)
        try:
            out = model.forward(x, visible, masked)
            total, ce, mse = mem_loss(out, y, x, rec_weight=cfg.rec_weight, cls_weight=cfg.cls_weight,
                                      masked_only=cfg.masked_only, strategy=model.cfg.strategy)
            grads = ad.backward(total, params)
        except (ad.NonFiniteError, FloatingPointError) as exc:
            raise NonFiniteLossError(f"non-finite value at epoch {epoch}, batch {bi}: {exc}",
                                     bi, _param_norms(model)) from exc
        opt.step([grads[p] for p in params])
        sum_ce += float(ce.data) * len(rows)
        sum_mse += (0.0 if mse is None else float(mse.data)) * len(rows)
        correct += int((out.predictions == y).sum())
    n = len(order)
    return EpochMetrics(epoch, ratio, sum_ce / n, sum_mse / n, correct / n)


def accuracy(model: MemModel, data: FeatureSet) -> float:
    if len(data) == 0:
        return float("nan")
    return float((predict_logits(model, data.x).argmax(axis=1) == data.y).mean())


@dataclass
class FitResult:
    best_state: dict[str, np.ndarray]
    best_epoch: int
    best_val_acc: float
    last_state: dict[str, np.ndarray]
    log: list[EpochMetrics]


def fit(model: MemModel, train: FeatureSet, val: FeatureSet, cfg: TrainConfig, *,
        log_path=None, checkpoint_dir=None, config_hash: str = "", quiet: bool = True) -> FitResult:
    """Run the schedule, selecting the epoch with the highest validation accuracy.

    Ties keep the earliest epoch. The model is left holding the best weights.
    """
    opt = Adam(list(model.parameters()), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    history: list[EpochMetrics] = []
    best_state, best_epoch, best_acc = model.state_dict(), -1, -np.inf
    stale = 0
    fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(cfg.epochs):
            m = train_epoch(model, opt, train, cfg, epoch)
            m.val_acc = accuracy(model, val) if len(val) else m.train_acc
            history.append(m)
            if fh:
                fh.write(json.dumps(m.to_dict(), sort_keys=True) + "\n")
            if not quiet:
                log.info("epoch %d ratio %.2f cls %.4f mse %.4f acc %.3f val %.3f", epoch, m.ratio,
                         m.train_loss_cls, m.train_loss_mse, m.train_acc, m.val_acc)
            if m.val_acc > best_acc:
                best_state, best_epoch, best_acc = model.state_dict(), epoch, m.val_acc
                stale = 0
            else:
                stale += 1
            if checkpoint_dir and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
                save_model(model, Path(checkpoint_dir) / f"epoch{epoch + 1:05d}.ckpt", config_hash=config_hash,
                           extra={"epoch": epoch})
            if cfg.early_stop_patience is not None and stale >= cfg.early_stop_patience:
                break
    finally:
        if fh:
            fh.close()
    last_state = model.state_dict()
    model.load_state_dict(best_state)
    return FitResult(best_state, best_epoch, float(best_acc), last_state, history)
