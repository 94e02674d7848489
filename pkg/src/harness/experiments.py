"""Experiment protocols built on train_run: ablations, sweeps, churn, record analyses"""
import itertools
import logging
from dataclasses import dataclass, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np
from joblib import Parallel, delayed

from ..constants import STOPPING_FRACTION_WARN
from ..core.averaging import BnPolicy, ema_key
from ..core.metrics import MetricsCalculator, PredictionSet
from ..database.models import BEST_VAL_ACC, RunRecord
from ..exceptions import ConfigError, ContractError, InputError
from .settings import RunConfig
from .trainer import BASELINE, RECOMPUTED, PreparedData, RunResult, prepare_data, train_run

logger = logging.getLogger(__name__)

T = TypeVar("T")

Curve = List[Tuple[int, float, float]]


def run_seeds(fn: Callable[[int], T], seeds: Sequence[int], threads: int = 1) -> List[T]:
    """Apply ``fn`` to every seed, ``threads`` at a time; results follow ``seeds`` order"""
    if threads <= 1 or len(seeds) <= 1:
        return [fn(seed) for seed in seeds]
    return Parallel(n_jobs=threads, prefer="threads")(delayed(fn)(seed) for seed in seeds)


# ── Record analyses ──

def ema_keys(record: RunRecord) -> List[str]:
    """EMA model keys present in the record, by increasing decay"""
    keys = {k for entry in record for k in entry.val_acc if k.startswith("ema_")}
    if not keys:
        keys = {k for entry in record for k in entry.train_acc if k.startswith("ema_")}
    return sorted(keys, key=lambda k: float(k[len("ema_"):]))


def memorization_curve(record: RunRecord, decay: Optional[float] = None) -> Dict[str, Curve]:
    """Per-epoch (epoch, clean train acc, noisy train acc) for the baseline and one EMA

    The EMA defaults to the winning decay of the best-accuracy verdict, or the
    largest decay of the bank when the run has no verdict.
    """
    if not record.has_noise:
        raise ContractError("memorization curves need a run with label noise")
    if decay is None:
        verdict = record.verdicts.get(BEST_VAL_ACC)
        keys = ema_keys(record)
        if verdict is not None:
            decay = verdict.decay
        elif keys:
            decay = float(keys[-1][len("ema_"):])
    models = [BASELINE] + ([ema_key(decay)] if decay is not None else [])
    curves = {}
    for model in models:
        curves[model] = [
            (entry.epoch, entry.train_acc_clean[model], entry.train_acc_noisy[model])
            for entry in record
            if model in entry.train_acc_clean and model in entry.train_acc_noisy
        ]
    return curves


def noisy_accuracy_at_clean(curve: Curve, target: float = 0.9) -> Optional[float]:
    """Noisy-label train accuracy where clean accuracy first reaches ``target``

    Linear interpolation between the two epochs that bracket the crossing;
    None when the clean series never reaches the target.
    """
    previous = None
    for epoch, clean, noisy in curve:
        if clean >= target:
            if previous is None:
                return noisy
            _, clean0, noisy0 = previous
            w = (target - clean0) / (clean - clean0)
            return noisy0 + w * (noisy - noisy0)
        previous = (epoch, clean, noisy)
    return None


@dataclass
class DecaySensitivity:
    decay: float
    best_val_acc: float
    best_epoch: int
    best_val_acc_recomputed: Optional[float] = None
    best_epoch_recomputed: Optional[int] = None


def _argbest(points: List[Tuple[int, float]]) -> Tuple[int, float]:
    """Highest value, earliest epoch on ties"""
    epoch, value = points[0]
    for e, v in points[1:]:
        if v > value:
            epoch, value = e, v
    return epoch, value


def decay_sensitivity(record: RunRecord) -> List[DecaySensitivity]:
    """Best validation accuracy and its epoch for every decay of the bank"""
    rows = []
    for key in ema_keys(record):
        points = [p for p in record.series("val_acc", key) if p[0] > 0]
        if not points:
            continue
        epoch, value = _argbest(points)
        row = DecaySensitivity(float(key[len("ema_"):]), value, epoch)
        recomputed = record.series("val_acc_recomputed", key)
        if recomputed:
            row.best_epoch_recomputed, row.best_val_acc_recomputed = _argbest(recomputed)
        rows.append(row)
    return rows


def best_ema_envelope(record: RunRecord) -> List[Tuple[int, float]]:
    """Per epoch, the best validation accuracy among the bank's EMAs"""
    keys = ema_keys(record)
    envelope = []
    for entry in record:
        values = [entry.val_acc[k] for k in keys if k in entry.val_acc]
        if values:
            envelope.append((entry.epoch, max(values)))
    return envelope


def stopping_fraction(record: RunRecord) -> Dict[str, float]:
    """Verdict epoch over the epoch budget, per criterion"""
    fractions = {}
    for criterion, verdict in record.verdicts.items():
        fraction = verdict.epoch / record.total_epochs
        fractions[criterion] = fraction
        if fraction >= STOPPING_FRACTION_WARN:
            logger.warning(f"{record.run_id}: {criterion} verdict at epoch {verdict.epoch} "
                           f"of {record.total_epochs} (fraction {fraction:.2f})")
    return fractions


def final_val_acc(record: RunRecord, model: str = BASELINE) -> Optional[float]:
    points = record.series("val_acc", model)
    return points[-1][1] if points else None


def best_val_acc(record: RunRecord, model: str) -> Optional[float]:
    points = [p for p in record.series("val_acc", model) if p[0] > 0]
    return _argbest(points)[1] if points else None


def best_ema_val_acc(record: RunRecord) -> Optional[float]:
    envelope = [p for p in best_ema_envelope(record) if p[0] > 0]
    return max(v for _, v in envelope) if envelope else None


def recompute_win_fraction(record: RunRecord, decay: float, after_epoch: int = 0) -> Optional[float]:
    """Share of epochs past ``after_epoch`` where the recomputed-BN EMA is at least as accurate"""
    key = ema_key(decay)
    wins = total = 0
    for entry in record:
        if entry.epoch <= after_epoch or key not in entry.val_acc_recomputed:
            continue
        total += 1
        wins += entry.val_acc_recomputed[key] >= entry.val_acc[key]
    return wins / total if total else None


# ── Ablations ──

@dataclass
class PairedRuns:
    """Two runs of one seed differing in a single switch"""
    seed: int
    reference: RunResult
    variant: RunResult


def constant_lr_ablation(config: RunConfig, seed: int,
                         data: Optional[PreparedData] = None) -> PairedRuns:
    """Base run, then a rerun whose lr stays constant from the EMA best-accuracy epoch on"""
    if not config.has_noise:
        raise ConfigError("the constant learning-rate ablation needs label noise", "noise.rate")
    data = data if data is not None else prepare_data(config)
    base = train_run(config, seed, data)
    verdict = base.record.verdicts.get(BEST_VAL_ACC)
    if base.failed or verdict is None:
        raise ContractError(f"seed {seed}: base run has no best-accuracy verdict to freeze at")
    logger.info(f"seed {seed}: freezing the learning rate from epoch {verdict.epoch}")
    frozen = train_run(config.with_freeze(verdict.epoch), seed, data)
    return PairedRuns(seed, base, frozen)


def bootstrap_ablation(config: RunConfig, seed: int,
                       data: Optional[PreparedData] = None) -> PairedRuns:
    """Unswapped run against one bootstrapped from its EMA once per epoch"""
    data = data if data is not None else prepare_data(config)
    plain = train_run(config.with_bootstrap(False), seed, data)
    swapped = train_run(config.with_bootstrap(True), seed, data)
    return PairedRuns(seed, plain, swapped)


@dataclass
class BnPolicyRow:
    seed: int
    decay: float
    policy: BnPolicy
    final_val_acc: Optional[float]
    best_val_acc: Optional[float]
    best_epoch: Optional[int]


def bn_policy_ablation(config: RunConfig, seed: int,
                       data: Optional[PreparedData] = None) -> Tuple[RunResult, List[BnPolicyRow]]:
    """One run with per-epoch recompute on; one row per (decay, BN policy)"""
    policies = tuple(dict.fromkeys(config.bn_policies + (BnPolicy.RECOMPUTE_EACH_EPOCH,)))
    result = train_run(replace(config, bn_policies=policies), seed, data)
    record = result.record
    rows = []
    for key in ema_keys(record):
        decay = float(key[len("ema_"):])
        batch = [p for p in record.series("val_acc", key) if p[0] > 0]
        each = record.series("val_acc_recomputed", key)
        for policy, points in ((BnPolicy.BATCH_EMA, batch),
                               (BnPolicy.RECOMPUTE_EACH_EPOCH, each)):
            if points:
                epoch, value = _argbest(points)
                rows.append(BnPolicyRow(seed, decay, policy, points[-1][1], value, epoch))
            else:
                rows.append(BnPolicyRow(seed, decay, policy, None, None, None))
        # A single recompute after training scores like the last per-epoch recompute.
        rows.append(BnPolicyRow(seed, decay, BnPolicy.RECOMPUTE_ONCE_FINAL,
                                each[-1][1] if each else None, None, None))
    return result, rows


@dataclass
class SweepRow:
    lr: float
    seed: int
    baseline_best: Optional[float]
    ema_best: Optional[float]
    diverged: bool = False


def lr_sweep(config: RunConfig, lrs: Sequence[float], seeds: Sequence[int],
             threads: int = 1) -> List[SweepRow]:
    """One run per (lr, seed); diverged runs carry a flag instead of numbers"""
    if not lrs:
        raise InputError("an lr sweep needs at least one learning rate")
    if len(lrs) == 1:
        logger.warning("lr sweep with a single learning rate")
    data = prepare_data(config)
    points = list(itertools.product(lrs, seeds))
    logger.info(f"lr sweep: {len(points)} runs scheduled")

    def one(index: int) -> SweepRow:
        lr, seed = points[index]
        record = train_run(config.with_lr(lr), seed, data).record
        if record.failed:
            return SweepRow(lr, seed, None, None, diverged=True)
        return SweepRow(lr, seed, best_val_acc(record, BASELINE), best_ema_val_acc(record))

    return run_seeds(one, list(range(len(points))), threads)


def sweep_argmax(rows: Sequence[SweepRow]) -> Dict[int, Tuple[Optional[float], Optional[float]]]:
    """Per seed, the lr maximizing baseline and EMA best accuracy"""
    winners = {}
    for seed in sorted({r.seed for r in rows}):
        ok = [r for r in rows if r.seed == seed and not r.diverged]
        base = max(ok, key=lambda r: r.baseline_best).lr if ok else None
        ema = max(ok, key=lambda r: r.ema_best if r.ema_best is not None else -1.0).lr if ok else None
        winners[seed] = (base, ema)
    return winners


# ── Churn ──

@dataclass
class PairMetrics:
    model: str
    seed_a: int
    seed_b: int
    churn: float
    js: float


@dataclass
class ChurnSummary:
    pairs: List[PairMetrics]

    def stats(self, model: str) -> Dict[str, float]:
        """Mean and standard deviation of churn and JS over the pairs of ``model``"""
        churn = np.array([p.churn for p in self.pairs if p.model == model])
        js = np.array([p.js for p in self.pairs if p.model == model])
        if churn.size == 0:
            raise KeyError(model)
        return {"churn_mean": float(churn.mean()), "churn_std": float(churn.std()),
                "js_mean": float(js.mean()), "js_std": float(js.std()), "pairs": int(churn.size)}

    @property
    def models(self) -> List[str]:
        return list(dict.fromkeys(p.model for p in self.pairs))


def pairwise_consistency(model: str, predictions: Dict[int, PredictionSet]) -> List[PairMetrics]:
    """Churn and JS divergence for every unordered pair of distinct seeds"""
    pairs = []
    for a, b in itertools.combinations(sorted(predictions), 2):
        pa, pb = predictions[a], predictions[b]
        pairs.append(PairMetrics(model, a, b, MetricsCalculator.churn(pa, pb),
                                 MetricsCalculator.js_divergence(pa, pb)))
    return pairs


CHURN_MODELS = (BASELINE, "ema_loss" + RECOMPUTED)


def churn_experiment(config: RunConfig, seeds: Sequence[int], threads: int = 1,
                     models: Sequence[str] = CHURN_MODELS) -> Tuple[ChurnSummary, List[RunResult]]:
    """Train every seed, then compare test predictions across seeds

    Test predictions are computed only after all runs finished.
    """
    if len(set(seeds)) < 2:
        raise InputError("churn needs at least two distinct seeds")
    data = prepare_data(config)
    results = run_seeds(lambda seed: train_run(config, seed, data), list(seeds), threads)
    pairs = []
    for model in models:
        predictions = {}
        for seed, result in zip(seeds, results):
            if result.failed or model not in result.checkpoints:
                logger.warning(f"seed {seed}: no {model} model, left out of churn")
                continue
            network, _ = result.checkpoints[model]
            predictions[seed] = PredictionSet.from_logits(
                network.predict_logits(data.test.features), data.test.labels, f"{model}-{seed}")
        pairs.extend(pairwise_consistency(model, predictions))
    return ChurnSummary(pairs), results


def effect_summary(values: Sequence[Optional[float]]) -> Tuple[Optional[float], Optional[float]]:
    """(mean, std) over the non-missing values"""
    present = np.array([v for v in values if v is not None], dtype=np.float64)
    if present.size == 0:
        return None, None
    return float(present.mean()), float(present.std())

