"""Nesterov SGD and learning-rate schedules"""
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

from ..constants import NESTEROV_MOMENTUM
from ..exceptions import ContractError, InputError
from .network import ParamVector

logger = logging.getLogger(__name__)


class ScheduleKind(Enum):
    """Learning-rate policy"""
    WARMUP_COSINE = "warmup_cosine"
    STEP = "step"
    CONSTANT = "constant"


@dataclass(frozen=True)
class Schedule:
    """Learning-rate schedule evaluated per optimizer step

    ``freeze_step`` pins the rate at its value on that step for every later
    step (constant learning rate after a stopping epoch).
    """
    kind: ScheduleKind
    base_lr: float
    total_epochs: int
    steps_per_epoch: int
    warmup_epochs: int = 0
    step_milestones: Tuple[int, ...] = ()
    step_factor: float = 0.2
    freeze_step: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        object.__setattr__(self, "step_milestones", tuple(int(m) for m in self.step_milestones))
        if self.base_lr <= 0:
            raise InputError("base_lr must be positive")
        if self.total_epochs <= 0 or self.steps_per_epoch <= 0:
            raise InputError("total_epochs and steps_per_epoch must be positive")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise InputError("warmup_epochs must be in [0, total_epochs)")
        milestones = self.step_milestones
        if any(b <= a for a, b in zip(milestones, milestones[1:])):
            raise InputError("step milestones must be strictly increasing")
        if milestones and (milestones[0] < 0 or milestones[-1] >= self.total_epochs):
            raise InputError("step milestones must lie in [0, total_epochs)")
        if self.step_factor <= 0:
            raise InputError("step_factor must be positive")

    @property
    def total_steps(self) -> int:
        return self.total_epochs * self.steps_per_epoch

    @property
    def warmup_steps(self) -> int:
        return self.warmup_epochs * self.steps_per_epoch

    def frozen_at(self, step: int) -> "Schedule":
        """Copy of this schedule whose rate stays constant from ``step`` on"""
        return replace(self, freeze_step=step)


def lr_at(schedule: Schedule, global_step: int) -> float:
    """Learning rate for a 0-based optimizer step

    Warmup ramps linearly from base_lr / warmup_steps up to base_lr; cosine
    annealing then covers the remaining steps.
    """
    if not 0 <= global_step < schedule.total_steps:
        raise ContractError(f"step {global_step} outside schedule budget {schedule.total_steps}")
    if schedule.freeze_step is not None and global_step > schedule.freeze_step:
        global_step = schedule.freeze_step

    eta = schedule.base_lr
    warmup = schedule.warmup_steps
    if global_step < warmup:
        return eta * (global_step + 1) / warmup

    if schedule.kind is ScheduleKind.WARMUP_COSINE:
        progress = (global_step - warmup) / (schedule.total_steps - warmup)
        return eta * 0.5 * (1.0 + math.cos(math.pi * progress))
    if schedule.kind is ScheduleKind.STEP:
        epoch = global_step // schedule.steps_per_epoch
        passed = sum(1 for m in schedule.step_milestones if epoch >= m)
        return eta * schedule.step_factor ** passed
    return eta


@dataclass
class SgdState:
    """Momentum buffer and hyperparameters of Nesterov SGD"""
    momentum_buffer: ParamVector
    momentum_coeff: float = NESTEROV_MOMENTUM
    weight_decay: float = 0.0
    nesterov: bool = True

    def __post_init__(self):
        if not 0.0 <= self.momentum_coeff < 1.0:
            raise InputError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise InputError("weight_decay must be non-negative")

    @classmethod
    def for_params(cls, params: ParamVector, momentum: float = NESTEROV_MOMENTUM,
                   weight_decay: float = 0.0, nesterov: bool = True) -> "SgdState":
        return cls(ParamVector.zeros(params.layout), momentum, weight_decay, nesterov)

    def reset(self) -> None:
        self.momentum_buffer.values[...] = 0.0


def sgd_step(params: ParamVector, grad: ParamVector, state: SgdState, lr: float) -> ParamVector:
    """One Nesterov SGD update with L2 weight decay folded into the gradient

    Updates ``state`` in place and returns the new parameters.
    """
    params.check_layout(grad)
    params.check_layout(state.momentum_buffer)
    mu = state.momentum_coeff
    g = grad.values + state.weight_decay * params.values
    buffer = state.momentum_buffer.values
    buffer *= mu
    buffer += g
    if state.nesterov:
        direction = g + mu * buffer
    else:
        direction = buffer
    return params.with_values(params.values - lr * direction)


def bootstrap_swap(params: ParamVector, ema_params: ParamVector, state: SgdState,
                   reset_momentum: bool = True) -> ParamVector:
    """Replace the training iterate with averaged parameters

    The momentum buffer is zeroed unless ``reset_momentum`` is False.
    """
    params.check_layout(ema_params)
    if reset_momentum:
        state.reset()
    logger.info(f"bootstrapped iterate from averaged weights (momentum reset: {reset_momentum})")
    return ema_params.copy()
