"""Training driver: mini-batch Nesterov SGD with an EMA bank and SWA attached"""
import copy
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from ..core.averaging import (BnPolicy, EmaBank, EmaState, SwaState, ema_key, materialize,
                              swa_update)
from ..core.network import Network, iterate_batches, softmax_cross_entropy
from ..core.optim import SgdState, bootstrap_swap, lr_at, sgd_step
from ..database.models import BEST_VAL_ACC, LOWEST_VAL_LOSS, EpochRecord, RunRecord, Verdict
from ..exceptions import DivergenceError
from ..utils.seeding import ResolvedSeedState, derive_seed
from .data import LabeledData, inject_noise, split_80_20, stratified_split, synthesize
from .settings import RunConfig

logger = logging.getLogger(__name__)

BASELINE = "baseline"
SWA = "swa"
RECOMPUTED = "_recomputed"
CRITERION_MODELS = {BEST_VAL_ACC: "ema_acc", LOWEST_VAL_LOSS: "ema_loss"}


@dataclass
class PreparedData:
    """Splits of one run; labels of ``train``/``val`` are the observed ones"""
    train: LabeledData
    val: LabeledData
    test: LabeledData
    train_clean: np.ndarray
    val_clean: np.ndarray
    noisy_mask: np.ndarray
    n_classes: int

    @property
    def has_val(self) -> bool:
        return len(self.val) > 0


def prepare_data(config: RunConfig) -> PreparedData:
    """Synthesize the pool, hold out the test split, inject noise, split train/val

    Every step is seeded from the configuration alone, so all master seeds of
    an experiment see the same data.
    """
    features, labels = synthesize(config.dataset)
    test_idx, pool_idx = stratified_split(
        labels, config.n_test, np.random.default_rng(derive_seed(config.dataset.seed, "test"))
    )
    pool = LabeledData(features[pool_idx], labels[pool_idx])
    test = LabeledData(features[test_idx], labels[test_idx])

    clean = pool.labels
    if config.has_noise:
        observed, mask = inject_noise(clean, config.noise, config.dataset.n_classes)
    else:
        observed, mask = clean.copy(), np.zeros(clean.shape[0], dtype=bool)

    train_idx, val_idx = split_80_20(observed, config.split_seed, config.split)
    return PreparedData(
        train=LabeledData(pool.features[train_idx], observed[train_idx]),
        val=LabeledData(pool.features[val_idx], observed[val_idx]),
        test=test,
        train_clean=clean[train_idx],
        val_clean=clean[val_idx],
        noisy_mask=mask[train_idx],
        n_classes=config.dataset.n_classes,
    )


def score(network: Network, features: np.ndarray, labels: np.ndarray) -> Tuple[float, float]:
    """(accuracy, mean cross-entropy) of eval-mode predictions"""
    if labels.shape[0] == 0:
        return 0.0, 0.0
    logits = network.predict_logits(features)
    loss, _ = softmax_cross_entropy(logits, labels)
    return float(np.mean(np.argmax(logits, axis=1) == labels)), loss


@dataclass
class Snapshot:
    """Frozen copy of one EMA taken at a verdict epoch"""
    state: EmaState
    epoch: int
    value: float


@dataclass
class RunResult:
    """Outcome of train_run: the record and the emitted models"""
    record: RunRecord
    checkpoints: Dict[str, Tuple[Network, dict]] = field(default_factory=dict)
    data: Optional[PreparedData] = None
    final: Optional[Network] = None

    @property
    def failed(self) -> bool:
        return self.record.failed


class TrainingRun:
    """One seeded training run of a RunConfig

    Args:
        config: Run configuration
        seed: Master seed (init and shuffling streams derive from it)
        data: Pre-built splits; built from the config when omitted
        capture: Epoch -> decays whose EMA is snapshotted at the end of that epoch
    """

    def __init__(self, config: RunConfig, seed: int, data: Optional[PreparedData] = None,
                 capture: Optional[Dict[int, List[float]]] = None):
        self.config = config
        self.seed = seed
        self.seeds = ResolvedSeedState.resolve(
            seed, data=config.dataset.seed, split=config.split_seed,
            noise=config.noise.seed if config.noise is not None else None,
        )
        self.data = data if data is not None else prepare_data(config)
        self.capture = capture or {}
        self.run_id = f"{config.name}-seed{seed}"
        self.min_rows = 2 if config.model.has_batchnorm else 1

        n_train = len(self.data.train)
        full, rest = divmod(n_train, config.batch_size)
        self.steps_per_epoch = full + (1 if rest >= self.min_rows else 0)
        self.schedule = config.schedule.build(self.steps_per_epoch)

        self.network = Network.initialize(config.model, self.seeds.rng("init"))
        self.network.bn.momentum = config.bn_momentum
        self.network.bn.epsilon = config.bn_epsilon
        self.sgd = SgdState.for_params(self.network.params, config.sgd.momentum,
                                       config.sgd.weight_decay, config.sgd.nesterov)
        self.shuffle_rng = self.seeds.rng("shuffle")

        ema = config.ema
        self.bank = (EmaBank(ema.decays, self.network.params, self.network.bn, ema.period, ema.warmup)
                     if ema.decays else None)
        self.swa = SwaState(config.swa.resolved_start(config.schedule.total_epochs)) if config.swa.enabled else None
        self.best: Dict[str, Snapshot] = {}
        self.captured: Dict[Tuple[int, float], EmaState] = {}
        self.step = 0

    # ── evaluation ──

    def train_batches(self) -> Iterator[np.ndarray]:
        """Feature batches in storage order, for BN recompute passes"""
        train = self.data.train
        for xb, _ in iterate_batches(train.features, train.labels, self.config.batch_size,
                                     min_rows=2):
            yield xb

    def updated_emas(self) -> List[EmaState]:
        """EMAs with at least one applied update; the others have no model yet"""
        if self.bank is None:
            return []
        return [state for state in self.bank if state.count > 0]

    def models(self) -> Dict[str, Network]:
        """Every tracked model, EMA and SWA with their averaged BN stats"""
        models = {BASELINE: self.network}
        for state in self.updated_emas():
            models[state.key] = Network(self.config.model, state.params, state.bn)
        if self.swa is not None and self.swa.count > 0:
            models[SWA] = materialize(self.swa, self.config.model, BnPolicy.BATCH_EMA)
        return models

    def evaluate(self, entry: EpochRecord) -> None:
        data = self.data
        clean_rows = ~data.noisy_mask
        for key, network in self.models().items():
            train_logits = network.predict_logits(data.train.features)
            predicted = np.argmax(train_logits, axis=1)
            entry.train_acc[key] = float(np.mean(predicted == data.train.labels))
            entry.train_acc_clean[key] = float(np.mean(predicted[clean_rows] == data.train_clean[clean_rows])) \
                if clean_rows.any() else 0.0
            if self.config.has_noise and data.noisy_mask.any():
                entry.train_acc_noisy[key] = float(
                    np.mean(predicted[data.noisy_mask] == data.train.labels[data.noisy_mask]))

            if not data.has_val:
                continue
            val_logits = network.predict_logits(data.val.features)
            entry.val_loss[key], _ = softmax_cross_entropy(val_logits, data.val.labels)
            val_pred = np.argmax(val_logits, axis=1)
            entry.val_acc[key] = float(np.mean(val_pred == data.val.labels))
            if self.config.has_noise:
                entry.val_acc_clean[key] = float(np.mean(val_pred == data.val_clean))

        if self.config.recompute_each_epoch and data.has_val and entry.epoch > 0:
            self._evaluate_recomputed(entry)

    def _evaluate_recomputed(self, entry: EpochRecord) -> None:
        averagers = list(self.updated_emas())
        if self.swa is not None and self.swa.count > 0:
            averagers.append(self.swa)
        for averager in averagers:
            key = averager.key if isinstance(averager, EmaState) else SWA
            network = materialize(averager, self.config.model, BnPolicy.RECOMPUTE_EACH_EPOCH,
                                  self.train_batches())
            entry.val_acc_recomputed[key], entry.val_loss_recomputed[key] = score(
                network, self.data.val.features, self.data.val.labels)

    def _track_verdicts(self, entry: EpochRecord) -> None:
        """Keep the best EMA per criterion; ties go to the earlier epoch, then the larger decay"""
        if not entry.val_acc:
            return
        for state in sorted(self.updated_emas(), key=lambda s: -s.decay):
            acc, loss = entry.val_acc[state.key], entry.val_loss[state.key]
            for criterion, value, better in ((BEST_VAL_ACC, acc, lambda a, b: a > b),
                                             (LOWEST_VAL_LOSS, loss, lambda a, b: a < b)):
                current = self.best.get(criterion)
                if current is None or better(value, current.value):
                    self.best[criterion] = Snapshot(copy.deepcopy(state), entry.epoch, value)

    # ── training ──

    def _check_norm(self, epoch: int) -> None:
        norm = self.network.params.norm
        if not math.isfinite(norm) or norm > self.config.divergence_norm:
            raise DivergenceError(f"parameter norm {norm:.3g} exceeds threshold", epoch, self.step)

    def _train_epoch(self, epoch: int) -> Tuple[float, float]:
        """Run one epoch of SGD steps; returns (mean loss, lr of the last step)"""
        train = self.data.train
        order = self.shuffle_rng.permutation(len(train))
        losses = []
        lr = 0.0
        for xb, yb in iterate_batches(train.features, train.labels, self.config.batch_size,
                                      order, self.min_rows):
            lr = lr_at(self.schedule, self.step)
            logits, cache = self.network.forward(xb)
            loss, grad_logits = softmax_cross_entropy(logits, yb)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite training loss {loss}", epoch, self.step)
            grad = self.network.backward(cache, grad_logits)
            # Sampling always counts the step being taken; only the absorbed iterate moves.
            if self.bank is not None and not self.config.ema.after_step:
                self.bank.maybe_update(self.step + 1, self.network.params, self.network.bn)
            self.network.params = sgd_step(self.network.params, grad, self.sgd, lr)
            self.step += 1
            self._check_norm(epoch)
            if self.bank is not None and self.config.ema.after_step:
                self.bank.maybe_update(self.step, self.network.params, self.network.bn)
            losses.append(loss)
        return float(np.mean(losses)) if losses else 0.0, lr

    def _end_of_epoch(self, epoch: int) -> bool:
        """SWA absorption, snapshots and the optional bootstrap swap"""
        if self.swa is not None and epoch >= self.swa.start_epoch:
            swa_update(self.swa, self.network.params, self.network.bn, epoch)
        if self.bank is not None:
            for decay in self.capture.get(epoch, []):
                state = self.bank.state_for(decay)
                if state.count == 0:
                    logger.warning(f"{self.run_id}: EMA {decay} has no update by epoch {epoch}, not captured")
                    continue
                self.captured[(epoch, decay)] = copy.deepcopy(state)
        boot = self.config.bootstrap
        if boot.enabled and self.bank is not None and epoch < self.config.schedule.total_epochs:
            source = self.bank.state_for(boot.decay)
            if source.count == 0:
                return False
            self.network.params = bootstrap_swap(self.network.params, source.params, self.sgd,
                                                 boot.reset_momentum)
            return True
        return False

    def run(self) -> RunResult:
        config = self.config
        total = config.schedule.total_epochs
        record = RunRecord(self.run_id, self.seed, total, has_noise=config.has_noise)
        logger.info(f"Starting run {self.run_id}: {len(self.data.train)} train, "
                    f"{len(self.data.val)} val, {self.steps_per_epoch} steps/epoch")

        start = EpochRecord(epoch=0)
        self.evaluate(start)
        record.append(start)

        try:
            for epoch in range(1, total + 1):
                train_loss, lr = self._train_epoch(epoch)
                bootstrapped = self._end_of_epoch(epoch)
                entry = EpochRecord(epoch=epoch, lr=lr, steps=self.step, train_loss=train_loss,
                                    bootstrapped=bootstrapped)
                self.evaluate(entry)
                record.append(entry)
                self._track_verdicts(entry)
                logger.debug(f"{self.run_id} epoch {epoch}: lr={lr:.5f} loss={train_loss:.4f} "
                             f"val_acc={entry.val_acc.get(BASELINE, float('nan')):.4f}")
        except DivergenceError as e:
            logger.error(f"Run {self.run_id} diverged: {e}")
            record.failed = True
            record.diagnostic = str(e)
            return RunResult(record, data=self.data, final=self.network)

        for criterion, snapshot in self.best.items():
            record.verdicts[criterion] = Verdict(criterion, snapshot.epoch, snapshot.state.decay,
                                                 snapshot.value)
            logger.info(f"{self.run_id} verdict {criterion}: epoch {snapshot.epoch}, "
                        f"decay {snapshot.state.decay}, value {snapshot.value:.4f}")

        result = RunResult(record, data=self.data, final=self.network)
        result.checkpoints = self._emit_checkpoints()
        logger.info(f"Finished run {self.run_id}")
        return result

    # ── checkpoints ──

    def _metadata(self, model: str, **extra) -> dict:
        meta = {"model": model, "run_id": self.run_id, "seed": self.seed,
                "epoch": self.config.schedule.total_epochs}
        meta.update(extra)
        return meta

    def _emit_averaged(self, out: Dict[str, Tuple[Network, dict]], name: str,
                       averager, **extra) -> None:
        spec = self.config.model
        base = {"update_count": averager.count, **extra}
        out[name] = (materialize(averager, spec, BnPolicy.BATCH_EMA),
                     self._metadata(name, bn_policy=BnPolicy.BATCH_EMA.value, **base))
        out[name + RECOMPUTED] = (
            materialize(averager, spec, BnPolicy.RECOMPUTE_ONCE_FINAL, self.train_batches()),
            self._metadata(name + RECOMPUTED, bn_policy=BnPolicy.RECOMPUTE_ONCE_FINAL.value, **base),
        )

    def _emit_checkpoints(self) -> Dict[str, Tuple[Network, dict]]:
        """Baseline final, EMA at each verdict and SWA, with and without BN recompute"""
        out = {BASELINE: (self.network.copy(), self._metadata(BASELINE, bn_policy="running"))}
        for criterion, snapshot in self.best.items():
            state = snapshot.state
            self._emit_averaged(out, CRITERION_MODELS[criterion], state, decay=state.decay,
                                period=state.period, criterion=criterion, epoch=snapshot.epoch)
        for (epoch, decay), state in sorted(self.captured.items()):
            self._emit_averaged(out, f"{ema_key(decay)}_epoch{epoch}", state, decay=decay,
                                period=state.period, epoch=epoch)
        if self.swa is not None and self.swa.count > 0:
            self._emit_averaged(out, SWA, self.swa, start_epoch=self.swa.start_epoch)
        return out


def train_run(config: RunConfig, seed: int, data: Optional[PreparedData] = None) -> RunResult:
    """Train one seed and return its record plus emitted checkpoints"""
    return TrainingRun(config, seed, data).run()


def final_fit(config: RunConfig, seed: int, verdicts: Dict[str, Verdict]) -> RunResult:
    """Retrain on the whole training pool and snapshot the EMA at each verdict epoch

    Validation data is absent, so no verdict search happens; the snapshots
    are emitted with and without a final BN recompute.
    """
    full = config.with_split(1.0)
    capture: Dict[int, List[float]] = {}
    for verdict in verdicts.values():
        capture.setdefault(verdict.epoch, [])
        if verdict.decay not in capture[verdict.epoch]:
            capture[verdict.epoch].append(verdict.decay)
    logger.info(f"Final fit of {config.name} seed {seed} on the full training pool")
    return TrainingRun(full, seed, capture=capture).run()

