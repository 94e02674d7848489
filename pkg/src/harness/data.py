"""Synthetic classification data, label noise and stratified splits"""
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Tuple

import numpy as np

from ..constants import TRAIN_SPLIT
from ..exceptions import ContractError, InputError

logger = logging.getLogger(__name__)

MIN_SAMPLES_PER_CLASS = 10
RING_NOISE = 0.5


class DatasetKind(Enum):
    GAUSSIAN_BLOBS = "gaussian_blobs"
    CONCENTRIC_RINGS = "concentric_rings"


@dataclass(frozen=True)
class DatasetSpec:
    """Recipe for a deterministic synthetic dataset"""
    kind: DatasetKind
    n_samples: int
    n_features: int
    n_classes: int
    class_separation: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "kind", DatasetKind(self.kind))


@dataclass(frozen=True)
class NoiseSpec:
    """Symmetric label noise: a fixed fraction flipped to a different class"""
    rate: float
    seed: int
    kind: str = "symmetric"

    def __post_init__(self):
        if not 0.0 <= self.rate <= 1.0:
            raise InputError("noise rate must be in [0, 1]")
        if self.kind != "symmetric":
            raise InputError(f"unsupported noise kind: {self.kind}")


@dataclass
class LabeledData:
    """Features with their class labels"""
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]


def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def synthesize(spec: DatasetSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Generate a balanced, standardized dataset

    Returns:
        (features of shape (n_samples, n_features), labels)
    """
    if spec.n_classes <= 0 or spec.n_features <= 0:
        raise InputError("n_classes and n_features must be positive")
    if spec.n_samples < spec.n_classes * MIN_SAMPLES_PER_CLASS:
        raise InputError(
            f"need at least {MIN_SAMPLES_PER_CLASS} samples per class, got {spec.n_samples}"
        )
    if spec.class_separation <= 0:
        raise InputError("class_separation must be positive")
    if spec.kind is DatasetKind.CONCENTRIC_RINGS and spec.n_features < 2:
        raise InputError("concentric rings need at least 2 features")

    rng = np.random.default_rng(spec.seed)
    n, c = spec.n_samples, spec.n_classes
    counts = [n // c + (1 if k < n % c else 0) for k in range(c)]
    labels = rng.permutation(np.repeat(np.arange(c), counts))

    if spec.kind is DatasetKind.GAUSSIAN_BLOBS:
        centers = rng.standard_normal((c, spec.n_features))
        centers *= spec.class_separation / np.linalg.norm(centers, axis=1, keepdims=True)
        features = centers[labels] + rng.standard_normal((n, spec.n_features))
    else:
        radius = spec.class_separation * (labels + 1)
        angle = rng.uniform(0.0, 2.0 * np.pi, size=n)
        features = rng.standard_normal((n, spec.n_features))
        features[:, 0] = radius * np.cos(angle) + RING_NOISE * features[:, 0]
        features[:, 1] = radius * np.sin(angle) + RING_NOISE * features[:, 1]

    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std[std == 0] = 1.0
    return (features - mean) / std, labels.astype(np.int64)


def inject_noise(labels: np.ndarray, spec: NoiseSpec, n_classes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Flip exactly round(rate * N) labels, each to a uniformly chosen other class

    Returns:
        (noisy labels, boolean mask of flipped samples)
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    n_flips = _round_half_up(spec.rate * n)
    if n_flips and n_classes < 2:
        raise InputError("label noise needs at least two classes")
    rng = np.random.default_rng(spec.seed)
    flipped = rng.choice(n, size=n_flips, replace=False)
    offsets = rng.integers(1, n_classes, size=n_flips) if n_flips else np.zeros(0, dtype=np.int64)
    noisy = labels.copy()
    noisy[flipped] = (labels[flipped] + offsets) % n_classes
    mask = np.zeros(n, dtype=bool)
    mask[flipped] = True
    logger.debug(f"flipped {n_flips} of {n} labels")
    return noisy, mask


def stratified_split(labels: np.ndarray, n_first: int, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    """Partition indices into (first, rest) with ``n_first`` in the first part

    Every class contributes within one sample of its proportional share
    (largest-remainder apportionment). Both index arrays are sorted.
    """
    labels = np.asarray(labels)
    n = labels.shape[0]
    if not 0 <= n_first <= n:
        raise InputError(f"cannot take {n_first} of {n} samples")
    classes, counts = np.unique(labels, return_counts=True)
    ideal = counts * (n_first / n) if n else counts * 0.0
    take = np.floor(ideal).astype(np.int64)
    remaining = n_first - int(take.sum())
    if remaining > 0:
        fractions = ideal - take
        order = sorted(range(len(classes)), key=lambda k: (-fractions[k], k))
        for k in order[:remaining]:
            take[k] += 1

    first, rest = [], []
    for cls, k in zip(classes, take):
        members = rng.permutation(np.flatnonzero(labels == cls))
        first.append(members[:k])
        rest.append(members[k:])
    if not first:
        return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
    return np.sort(np.concatenate(first)), np.sort(np.concatenate(rest))


def split_80_20(labels: np.ndarray, seed: int, train_fraction: float = TRAIN_SPLIT) -> Tuple[np.ndarray, np.ndarray]:
    """Stratified (train, validation) index split, deterministic per seed"""
    n = np.asarray(labels).shape[0]
    if n < 10:
        raise ContractError("a train/validation split needs at least 10 samples")
    if not 0.0 < train_fraction <= 1.0:
        raise InputError("train fraction must be in (0, 1]")
    return stratified_split(labels, _round_half_up(train_fraction * n), np.random.default_rng(seed))
