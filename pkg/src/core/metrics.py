"""Evaluation metrics: accuracy, NLL, churn, JS divergence, ECE, temperature scaling"""
import logging
import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import log_softmax, rel_entr, softmax

from ..constants import (ECE_BINS, PROB_FLOOR, TEMPERATURE_MAX, TEMPERATURE_MIN,
                         TEMPERATURE_TOL)
from ..exceptions import InputError

logger = logging.getLogger(__name__)

PROB_SUM_TOL = 1e-9


@dataclass
class PredictionSet:
    """Per-sample class probabilities of one model on one split"""
    probs: np.ndarray
    labels: np.ndarray
    run_id: str = ""
    logits: Optional[np.ndarray] = None

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.probs.ndim != 2:
            raise InputError("probs must be a (samples, classes) matrix")
        if self.labels.shape != (self.probs.shape[0],):
            raise InputError("labels length must equal the number of samples")
        if np.any(self.probs < 0) or np.any(np.abs(self.probs.sum(axis=1) - 1.0) > PROB_SUM_TOL):
            raise InputError("every probs row must be a probability vector")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.n_classes):
            raise InputError("label out of range")
        if self.logits is not None:
            self.logits = np.asarray(self.logits, dtype=np.float64)
            if self.logits.shape != self.probs.shape:
                raise InputError("logits and probs shapes differ")

    @classmethod
    def from_logits(cls, logits, labels, run_id: str = "") -> "PredictionSet":
        logits = np.asarray(logits, dtype=np.float64)
        return cls(softmax(logits, axis=1), labels, run_id, logits)

    @property
    def n_samples(self) -> int:
        return self.probs.shape[0]

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]

    @property
    def predictions(self) -> np.ndarray:
        """Top-1 classes; ties go to the lowest class index"""
        return np.argmax(self.probs, axis=1)

    @property
    def confidences(self) -> np.ndarray:
        return self.probs.max(axis=1)

    def scaled(self, temperature: float) -> "PredictionSet":
        """Predictions after dividing the logits by ``temperature``"""
        if self.logits is None:
            raise InputError(f"{self.run_id or 'prediction set'} has no logits")
        return PredictionSet.from_logits(self.logits / temperature, self.labels, self.run_id)


@dataclass(frozen=True)
class EceConfig:
    """Equal-mass binning settings"""
    n_bins: int = ECE_BINS
    binning: str = "equal_mass"

    def __post_init__(self):
        if self.n_bins <= 0:
            raise InputError("n_bins must be positive")
        if self.binning != "equal_mass":
            raise InputError(f"unsupported binning: {self.binning}")


def _check_aligned(a: PredictionSet, b: PredictionSet) -> None:
    if a.probs.shape != b.probs.shape:
        raise InputError(f"prediction sets differ in shape: {a.probs.shape} vs {b.probs.shape}")


def _nll_from_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    log_probs = log_softmax(logits, axis=1)
    return -float(log_probs[np.arange(labels.shape[0]), labels].mean())


class MetricsCalculator:
    """Compare and score prediction sets"""

    @staticmethod
    def accuracy_nll(preds: PredictionSet) -> Tuple[float, float]:
        """Top-1 accuracy and mean negative log-likelihood of the true class

        Returns:
            (accuracy in [0, 1], mean NLL in nats)
        """
        if preds.n_samples == 0:
            return 0.0, 0.0
        accuracy = float(np.mean(preds.predictions == preds.labels))
        p_true = preds.probs[np.arange(preds.n_samples), preds.labels]
        nll = float(np.mean(-np.log(np.maximum(p_true, PROB_FLOOR))))
        return accuracy, nll

    @staticmethod
    def churn(a: PredictionSet, b: PredictionSet) -> float:
        """Fraction of samples whose top-1 predictions disagree"""
        _check_aligned(a, b)
        if a.n_samples == 0:
            return 0.0
        return float(np.mean(a.predictions != b.predictions))

    @staticmethod
    def js_divergence(a: PredictionSet, b: PredictionSet) -> float:
        """Mean per-sample Jensen-Shannon divergence in nats, bounded by ln 2"""
        _check_aligned(a, b)
        if a.n_samples == 0:
            return 0.0
        p, q = a.probs, b.probs
        m = 0.5 * (p + q)
        per_sample = 0.5 * rel_entr(p, m).sum(axis=1) + 0.5 * rel_entr(q, m).sum(axis=1)
        per_sample = np.clip(per_sample, 0.0, math.log(2.0))
        return float(per_sample.mean())

    @staticmethod
    def ece_equal_mass(preds: PredictionSet, cfg: EceConfig = EceConfig()) -> float:
        """Expected calibration error with equal-mass bins

        Samples are sorted by confidence (ties by correctness, which keeps the
        result independent of input order) and split into ``cfg.n_bins``
        contiguous bins whose sizes differ by at most one; the larger bins hold
        the lowest confidences.
        """
        n = preds.n_samples
        if cfg.n_bins > n:
            raise InputError(f"{cfg.n_bins} bins need at least as many samples, got {n}")
        confidences = preds.confidences
        correct = (preds.predictions == preds.labels).astype(np.float64)
        order = np.lexsort((correct, confidences))
        ece = 0.0
        for members in np.array_split(order, cfg.n_bins):
            gap = abs(correct[members].mean() - confidences[members].mean())
            ece += members.shape[0] / n * gap
        return float(ece)

    @staticmethod
    def fit_temperature(holdout: PredictionSet) -> float:
        """Temperature minimizing holdout NLL over log-temperature in [ln 0.05, ln 20]

        A flat or non-improving objective returns 1.0, so the fitted value
        never raises holdout NLL above the unscaled one.
        """
        if holdout.logits is None:
            raise InputError(f"{holdout.run_id or 'holdout'} has no logits")
        logits, labels = holdout.logits, holdout.labels

        def objective(log_t: float) -> float:
            return _nll_from_logits(logits / math.exp(log_t), labels)

        result = minimize_scalar(
            objective,
            bounds=(math.log(TEMPERATURE_MIN), math.log(TEMPERATURE_MAX)),
            method="bounded",
            options={"xatol": TEMPERATURE_TOL},
        )
        baseline = objective(0.0)
        if result.fun >= baseline - PROB_FLOOR * max(1.0, abs(baseline)):
            return 1.0
        return float(math.exp(result.x))

    @staticmethod
    def temperature_scale(holdout: PredictionSet, evaluation: PredictionSet,
                          cfg: EceConfig = EceConfig()) -> Tuple[float, float]:
        """Fit a temperature on ``holdout`` and score ``evaluation`` with it

        Returns:
            (temperature, ECE of the rescaled evaluation predictions)
        """
        if evaluation.logits is None:
            raise InputError(f"{evaluation.run_id or 'evaluation set'} has no logits")
        temperature = MetricsCalculator.fit_temperature(holdout)
        scaled = evaluation.scaled(temperature)
        return temperature, MetricsCalculator.ece_equal_mass(scaled, cfg)

    @staticmethod
    def holdout_nll(preds: PredictionSet, temperature: float = 1.0) -> float:
        if preds.logits is None:
            raise InputError("holdout NLL needs logits")
        return _nll_from_logits(preds.logits / temperature, preds.labels)
