"""Weight averaging: EMA banks, SWA and batch-norm statistics policies"""
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..constants import EMA_SAMPLING_PERIOD, EMA_WARMUP_OFFSET
from ..exceptions import ContractError, InputError
from .network import (BnLayerStats, BnStats, Mode, MlpSpec, Network, ParamVector,
                      as_tensor2)

logger = logging.getLogger(__name__)


class BnPolicy(Enum):
    """Where an averaged model's BN statistics come from"""
    BATCH_EMA = "batch_ema"
    RECOMPUTE_EACH_EPOCH = "recompute_each_epoch"
    RECOMPUTE_ONCE_FINAL = "recompute_once_final"

    @property
    def recomputes(self) -> bool:
        return self is not BnPolicy.BATCH_EMA


def ema_key(decay: float) -> str:
    """Model name used in records for the EMA with this decay"""
    return f"ema_{decay!r}"


def effective_decay(alpha: float, from_T: int, to_T: int) -> float:
    """Decay with the same forgetting horizon when the sampling period changes

    An EMA sampled every ``from_T`` steps forgets at ``alpha ** (1 / from_T)``
    per step, so sampling every ``to_T`` steps needs ``alpha ** (to_T / from_T)``.
    """
    if not 0.0 < alpha < 1.0:
        raise InputError("alpha must be in (0, 1)")
    if from_T <= 0 or to_T <= 0:
        raise InputError("sampling periods must be positive")
    return alpha ** (to_T / from_T)


def period_equivalence(decays: Sequence[float], from_T: int = EMA_SAMPLING_PERIOD,
                       to_T: int = 1) -> List[Tuple[float, float]]:
    """(decay at from_T, equivalent decay at to_T) pairs"""
    return [(alpha, effective_decay(alpha, from_T, to_T)) for alpha in decays]


def _blend(old: np.ndarray, new: np.ndarray, keep: float) -> np.ndarray:
    return keep * old + (1.0 - keep) * new


def _blend_bn(old: BnStats, new: BnStats, keep: float) -> BnStats:
    old.check_layout(new)
    layers = [
        BnLayerStats(_blend(a.running_mean, b.running_mean, keep),
                     _blend(a.running_var, b.running_var, keep))
        for a, b in zip(old.layers, new.layers)
    ]
    return BnStats(layers, old.momentum, old.epsilon)


# ── EMA ──

@dataclass
class EmaState:
    """Exponential moving average of a parameter trajectory and its BN stats"""
    decay: float
    params: ParamVector
    bn: BnStats
    period: int = EMA_SAMPLING_PERIOD
    warmup: bool = True
    count: int = 0

    @classmethod
    def start(cls, decay: float, params: ParamVector, bn: BnStats,
              period: int = EMA_SAMPLING_PERIOD, warmup: bool = True) -> "EmaState":
        """EMA initialized at the current iterate"""
        return cls(decay, params.copy(), bn.copy(), period, warmup)

    @property
    def key(self) -> str:
        return ema_key(self.decay)

    def current_decay(self) -> float:
        """Decay applied by the next update, after warm-up"""
        if self.warmup:
            t = self.count
            return min(self.decay, (t + 1) / (t + EMA_WARMUP_OFFSET))
        return self.decay


def ema_update(state: EmaState, current_params: ParamVector, current_bn: BnStats) -> EmaState:
    """Fold the current iterate into the average

    The caller fires this once every ``state.period`` optimizer steps.
    """
    state.params.check_layout(current_params)
    keep = state.current_decay()
    state.params = state.params.with_values(_blend(state.params.values, current_params.values, keep))
    state.bn = _blend_bn(state.bn, current_bn, keep)
    state.count += 1
    return state


class EmaBank:
    """Parallel EMAs with different decays over one training trajectory"""

    def __init__(self, decays: Sequence[float], params: ParamVector, bn: BnStats,
                 period: int = EMA_SAMPLING_PERIOD, warmup: bool = True):
        decays = [float(d) for d in decays]
        if not decays:
            raise InputError("an EMA bank needs at least one decay")
        if any(not 0.0 <= d < 1.0 for d in decays):
            raise InputError("EMA decays must lie in [0, 1)")
        if any(b <= a for a, b in zip(decays, decays[1:])):
            raise InputError("EMA decays must be strictly increasing")
        if period <= 0:
            raise InputError("sampling period must be positive")
        self.period = period
        self.states = [EmaState.start(d, params, bn, period, warmup) for d in decays]

    @property
    def decays(self) -> List[float]:
        return [s.decay for s in self.states]

    def __iter__(self) -> Iterator[EmaState]:
        return iter(self.states)

    def __len__(self) -> int:
        return len(self.states)

    def state_for(self, decay: float) -> EmaState:
        for state in self.states:
            if state.decay == decay:
                return state
        raise KeyError(f"no EMA with decay {decay}")

    def is_sampling_step(self, steps_done: int) -> bool:
        return steps_done > 0 and steps_done % self.period == 0

    def maybe_update(self, steps_done: int, params: ParamVector, bn: BnStats) -> bool:
        """Update every EMA when ``steps_done`` falls on the sampling period"""
        if not self.is_sampling_step(steps_done):
            return False
        for state in self.states:
            ema_update(state, params, bn)
        return True


# ── SWA ──

@dataclass
class SwaState:
    """Uniform average of checkpoints absorbed from ``start_epoch`` on"""
    start_epoch: int
    count: int = 0
    params: Optional[ParamVector] = None
    bn: Optional[BnStats] = None


def swa_update(state: SwaState, checkpoint: ParamVector, bn: Optional[BnStats] = None,
               epoch: Optional[int] = None) -> SwaState:
    """Absorb one checkpoint into the running uniform mean"""
    if epoch is not None and epoch < state.start_epoch:
        raise ContractError(f"SWA starts at epoch {state.start_epoch}, got {epoch}")
    n = state.count
    if n == 0:
        state.params = checkpoint.copy()
        state.bn = bn.copy() if bn is not None else None
    else:
        state.params.check_layout(checkpoint)
        mean = state.params.values
        state.params = state.params.with_values(mean + (checkpoint.values - mean) / (n + 1))
        if bn is not None and state.bn is not None:
            state.bn = _blend_bn(state.bn, bn, n / (n + 1))
    state.count = n + 1
    return state


# ── BN statistics ──

class _Moments:
    """Streaming per-feature mean and variance, merged batch by batch"""

    def __init__(self):
        self.count = 0
        self.mean = None
        self.m2 = None

    def push(self, batch: np.ndarray) -> None:
        rows = batch.shape[0]
        batch_mean = batch.mean(axis=0)
        batch_m2 = ((batch - batch_mean) ** 2).sum(axis=0)
        if self.count == 0:
            self.count, self.mean, self.m2 = rows, batch_mean, batch_m2
            return
        total = self.count + rows
        delta = batch_mean - self.mean
        self.mean = self.mean + delta * rows / total
        self.m2 = self.m2 + batch_m2 + delta ** 2 * self.count * rows / total
        self.count = total

    @property
    def var(self) -> np.ndarray:
        return self.m2 / self.count


def recompute_bn(params: ParamVector, spec: MlpSpec, batches: Iterable,
                 template: Optional[BnStats] = None) -> BnStats:
    """Rebuild BN statistics with one gradient-free train-mode pass

    Each BN layer receives the exact mean and (biased) variance of its inputs
    over the whole pass. Inputs of the first BN layer do not depend on batch
    composition, so its statistics equal whole-dataset statistics; deeper
    layers see activations normalized per batch.
    """
    fresh = BnStats.fresh(spec.bn_widths)
    if template is not None:
        fresh.momentum, fresh.epsilon = template.momentum, template.epsilon
    network = Network(spec, params, fresh)
    moments = [_Moments() for _ in spec.bn_widths]
    n_batches = 0
    for batch in batches:
        x = as_tensor2(batch, spec.input_width)
        if x.shape[0] == 0:
            continue
        _, cache = network.forward(x, Mode.TRAIN, update_stats=False)
        for acc, inputs in zip(moments, cache.bn_inputs()):
            acc.push(inputs)
        n_batches += 1
    if n_batches == 0:
        raise InputError("cannot recompute BN statistics on an empty dataset")
    if not moments:
        return fresh
    logger.debug(f"recomputed BN statistics over {n_batches} batches ({moments[0].count} samples)")
    layers = [BnLayerStats(acc.mean, acc.var) for acc in moments]
    return BnStats(layers, fresh.momentum, fresh.epsilon)


Averager = Union[EmaState, SwaState]


def materialize(averager: Averager, spec: MlpSpec, policy: BnPolicy,
                train_batches: Optional[Iterable] = None) -> Network:
    """Evaluable model from averaged parameters and policy-selected BN stats

    Args:
        averager: EMA or SWA state with at least one applied update
        spec: Model specification of the averaged trajectory
        policy: BN statistics policy
        train_batches: Feature batches for the recompute pass (recompute policies)
    """
    if averager.count == 0 or averager.params is None:
        raise ContractError("cannot materialize an average with no updates")
    policy = BnPolicy(policy)
    params = averager.params.copy()
    if not spec.has_batchnorm:
        return Network(spec, params, BnStats.fresh([]))
    if policy is BnPolicy.BATCH_EMA:
        return Network(spec, params, averager.bn.copy())
    if train_batches is None:
        raise InputError(f"{policy.value} needs training batches")
    return Network(spec, params, recompute_bn(params, spec, train_batches, averager.bn))
