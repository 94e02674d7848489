"""Immutable run configuration consumed by the training harness"""
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

from ..constants import (BATCH_SIZE, BN_EPSILON, BN_MOMENTUM, BOOTSTRAP_DECAY, DIVERGENCE_NORM,
                         EMA_DECAYS, EMA_SAMPLING_PERIOD, NESTEROV_MOMENTUM, SWA_START_FRACTION,
                         TRAIN_SPLIT)
from ..core.averaging import BnPolicy
from ..core.network import MlpSpec
from ..core.optim import Schedule, ScheduleKind
from .data import DatasetSpec, NoiseSpec


@dataclass(frozen=True)
class ScheduleSpec:
    """Learning-rate schedule in epochs; steps per epoch are fixed by the data"""
    kind: ScheduleKind = ScheduleKind.WARMUP_COSINE
    base_lr: float = 0.1
    total_epochs: int = 60
    warmup_epochs: int = 3
    step_milestones: Tuple[int, ...] = ()
    step_factor: float = 0.2
    freeze_epoch: Optional[int] = None

    def build(self, steps_per_epoch: int) -> Schedule:
        schedule = Schedule(self.kind, self.base_lr, self.total_epochs, steps_per_epoch,
                            self.warmup_epochs, self.step_milestones, self.step_factor)
        if self.freeze_epoch is not None:
            # Rate of the last step of the freeze epoch holds for the rest of training.
            schedule = schedule.frozen_at(max(self.freeze_epoch * steps_per_epoch - 1, 0))
        return schedule


@dataclass(frozen=True)
class SgdSpec:
    momentum: float = NESTEROV_MOMENTUM
    weight_decay: float = 1e-4
    nesterov: bool = True


@dataclass(frozen=True)
class EmaSpec:
    """EMA bank; ``after_step`` picks whether a sampled step is absorbed after or before it moves"""
    decays: Tuple[float, ...] = tuple(EMA_DECAYS)
    period: int = EMA_SAMPLING_PERIOD
    warmup: bool = True
    after_step: bool = True


@dataclass(frozen=True)
class SwaSpec:
    enabled: bool = True
    start_epoch: Optional[int] = None

    def resolved_start(self, total_epochs: int) -> int:
        if self.start_epoch is not None:
            return self.start_epoch
        return math.ceil(SWA_START_FRACTION * total_epochs)


@dataclass(frozen=True)
class BootstrapSpec:
    """Once-per-epoch replacement of the iterate by one EMA of the bank"""
    enabled: bool = False
    decay: float = BOOTSTRAP_DECAY
    reset_momentum: bool = True


@dataclass(frozen=True)
class RunConfig:
    """Everything that determines a run, given one master seed"""
    name: str
    dataset: DatasetSpec
    n_test: int
    model: MlpSpec
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    sgd: SgdSpec = field(default_factory=SgdSpec)
    ema: EmaSpec = field(default_factory=EmaSpec)
    swa: SwaSpec = field(default_factory=SwaSpec)
    bootstrap: BootstrapSpec = field(default_factory=BootstrapSpec)
    noise: Optional[NoiseSpec] = None
    bn_policies: Tuple[BnPolicy, ...] = (BnPolicy.BATCH_EMA, BnPolicy.RECOMPUTE_ONCE_FINAL)
    bn_momentum: float = BN_MOMENTUM
    bn_epsilon: float = BN_EPSILON
    batch_size: int = BATCH_SIZE
    split: float = TRAIN_SPLIT
    split_seed: int = 0
    divergence_norm: float = DIVERGENCE_NORM
    seeds: Tuple[int, ...] = (0, 1, 2)

    @property
    def n_train_pool(self) -> int:
        return self.dataset.n_samples - self.n_test

    @property
    def has_noise(self) -> bool:
        return self.noise is not None and self.noise.rate > 0

    @property
    def recompute_each_epoch(self) -> bool:
        return BnPolicy.RECOMPUTE_EACH_EPOCH in self.bn_policies

    def with_lr(self, lr: float) -> "RunConfig":
        return replace(self, schedule=replace(self.schedule, base_lr=lr))

    def with_freeze(self, epoch: int) -> "RunConfig":
        return replace(self, schedule=replace(self.schedule, freeze_epoch=epoch))

    def with_bootstrap(self, enabled: bool) -> "RunConfig":
        return replace(self, bootstrap=replace(self.bootstrap, enabled=enabled))

    def with_averaging(self, enabled: bool) -> "RunConfig":
        """Same run with the EMA bank and SWA detached (or attached)"""
        if enabled:
            return self
        return replace(self, ema=replace(self.ema, decays=()), swa=replace(self.swa, enabled=False))

    def with_split(self, split: float) -> "RunConfig":
        return replace(self, split=split)
