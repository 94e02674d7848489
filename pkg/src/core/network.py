"""Multilayer perceptron engine: parameters, batch norm, forward/backward, loss"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import log_softmax

from ..constants import BN_EPSILON, BN_MOMENTUM, GRAD_CHECK_FLOOR, GRAD_CHECK_STEP
from ..exceptions import ContractError, DegenerateBatchError, InputError

logger = logging.getLogger(__name__)

# Row-major (rows, cols) float64 array; rows are samples.
Tensor2 = np.ndarray


class Mode(Enum):
    """Forward pass mode"""
    TRAIN = "train"
    EVAL = "eval"


def as_tensor2(data, cols: Optional[int] = None) -> Tensor2:
    """Coerce ``data`` to a float64 matrix, checking the column count"""
    array = np.asarray(data, dtype=np.float64)
    if array.ndim != 2:
        raise InputError(f"expected a 2-D batch, got shape {array.shape}")
    if cols is not None and array.shape[1] != cols:
        raise InputError(f"batch has {array.shape[1]} columns, model expects {cols}")
    return array


def as_labels(labels, rows: int, n_classes: int) -> np.ndarray:
    """Validate a vector of class indices against a batch"""
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != rows:
        raise InputError(f"expected {rows} labels, got shape {labels.shape}")
    if labels.size and not np.issubdtype(labels.dtype, np.integer):
        raise InputError("labels must be integer class indices")
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise InputError(f"label out of range for {n_classes} classes")
    return labels.astype(np.int64, copy=False)


# ── Parameter layout ──

@dataclass(frozen=True)
class Segment:
    """One named parameter inside a flat vector"""
    layer: str
    name: str
    offset: int
    length: int
    shape: Tuple[int, ...]


@dataclass(frozen=True)
class ParamLayout:
    """Ordered, contiguous segments covering a ParamVector exactly"""
    segments: Tuple[Segment, ...] = ()

    @classmethod
    def from_shapes(cls, entries: Sequence[Tuple[str, str, Tuple[int, ...]]]) -> "ParamLayout":
        segments = []
        offset = 0
        for layer, name, shape in entries:
            length = int(np.prod(shape))
            segments.append(Segment(layer, name, offset, length, tuple(shape)))
            offset += length
        return cls(tuple(segments))

    @property
    def size(self) -> int:
        if not self.segments:
            return 0
        last = self.segments[-1]
        return last.offset + last.length

    def find(self, layer: str, name: str) -> Segment:
        for segment in self.segments:
            if segment.layer == layer and segment.name == name:
                return segment
        raise KeyError(f"{layer}.{name}")


@dataclass
class ParamVector:
    """Flat vector of every trainable parameter of a model"""
    values: np.ndarray
    layout: ParamLayout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if self.values.shape[0] != self.layout.size:
            raise InputError(
                f"vector of length {self.values.shape[0]} does not match layout size {self.layout.size}"
            )

    @classmethod
    def zeros(cls, layout: ParamLayout) -> "ParamVector":
        return cls(np.zeros(layout.size), layout)

    def view(self, layer: str, name: str) -> np.ndarray:
        """Writable view of one parameter, reshaped to its natural shape"""
        seg = self.layout.find(layer, name)
        return self.values[seg.offset:seg.offset + seg.length].reshape(seg.shape)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def with_values(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(values, self.layout)

    def check_layout(self, other: "ParamVector") -> None:
        """Raise InputError unless ``other`` shares this layout"""
        if self.layout != other.layout:
            raise InputError("parameter layouts differ")

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def __len__(self) -> int:
        return self.values.shape[0]


# ── Batch-norm statistics ──

@dataclass
class BnLayerStats:
    """Running statistics of one BN layer"""
    running_mean: np.ndarray
    running_var: np.ndarray

    def copy(self) -> "BnLayerStats":
        return BnLayerStats(self.running_mean.copy(), self.running_var.copy())


@dataclass
class BnStats:
    """Running statistics of every BN layer of a model, in layer order"""
    layers: List[BnLayerStats] = field(default_factory=list)
    momentum: float = BN_MOMENTUM
    epsilon: float = BN_EPSILON

    @classmethod
    def fresh(cls, widths: Sequence[int], momentum: float = BN_MOMENTUM,
              epsilon: float = BN_EPSILON) -> "BnStats":
        """Zero means and unit variances for layers of the given widths"""
        layers = [BnLayerStats(np.zeros(w), np.ones(w)) for w in widths]
        return cls(layers, momentum, epsilon)

    def copy(self) -> "BnStats":
        return BnStats([layer.copy() for layer in self.layers], self.momentum, self.epsilon)

    def widths(self) -> List[int]:
        return [layer.running_mean.shape[0] for layer in self.layers]

    def check_layout(self, other: "BnStats") -> None:
        if self.widths() != other.widths():
            raise InputError("BN statistics layouts differ")

    def __len__(self) -> int:
        return len(self.layers)


# ── Model description ──

@dataclass(frozen=True)
class MlpSpec:
    """Layer widths from input to classes, plus a BN flag per hidden layer

    ``layer_widths[0]`` is the input width and ``layer_widths[-1]`` the number
    of classes. A spec with two widths is a linear model (used by the linear
    evaluation head); training configs require at least one hidden layer.
    """
    layer_widths: Tuple[int, ...]
    use_batchnorm: Tuple[bool, ...]
    n_classes: int
    activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        object.__setattr__(self, "use_batchnorm", tuple(bool(b) for b in self.use_batchnorm))
        if len(self.layer_widths) < 2:
            raise InputError("an MLP needs an input and an output width")
        if any(w <= 0 for w in self.layer_widths):
            raise InputError("layer widths must be positive")
        if self.layer_widths[-1] != self.n_classes:
            raise InputError(
                f"last width {self.layer_widths[-1]} must equal n_classes {self.n_classes}"
            )
        if len(self.use_batchnorm) != self.n_hidden:
            raise InputError(
                f"need one batchnorm flag per hidden layer ({self.n_hidden}), got {len(self.use_batchnorm)}"
            )
        if self.activation != "relu":
            raise InputError(f"unsupported activation: {self.activation}")

    @property
    def n_hidden(self) -> int:
        return len(self.layer_widths) - 2

    @property
    def n_affine(self) -> int:
        return len(self.layer_widths) - 1

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    @property
    def feature_width(self) -> int:
        """Width of the representation fed to the classification layer"""
        return self.layer_widths[-2]

    @property
    def has_batchnorm(self) -> bool:
        return any(self.use_batchnorm)

    @property
    def bn_widths(self) -> List[int]:
        return [self.layer_widths[i + 1] for i, flag in enumerate(self.use_batchnorm) if flag]

    def layout(self) -> ParamLayout:
        entries = []
        for i in range(self.n_affine):
            fan_in, fan_out = self.layer_widths[i], self.layer_widths[i + 1]
            entries.append((f"fc{i}", "W", (fan_in, fan_out)))
            entries.append((f"fc{i}", "b", (fan_out,)))
            if i < self.n_hidden and self.use_batchnorm[i]:
                entries.append((f"bn{i}", "gamma", (fan_out,)))
                entries.append((f"bn{i}", "beta", (fan_out,)))
        return ParamLayout.from_shapes(entries)

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "use_batchnorm": list(self.use_batchnorm),
            "n_classes": self.n_classes,
        }


def init_params(spec: MlpSpec, rng: np.random.Generator) -> ParamVector:
    """He-style fan-in scaled normal weights, zero biases, unit BN scales"""
    params = ParamVector.zeros(spec.layout())
    for i in range(spec.n_affine):
        fan_in = spec.layer_widths[i]
        weights = params.view(f"fc{i}", "W")
        weights[...] = rng.standard_normal(weights.shape) * np.sqrt(2.0 / fan_in)
        if i < spec.n_hidden and spec.use_batchnorm[i]:
            params.view(f"bn{i}", "gamma")[...] = 1.0
    return params


# ── Forward cache ──

@dataclass
class BnCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray
    batch_mean: np.ndarray
    batch_var: np.ndarray


@dataclass
class LayerCache:
    inputs: np.ndarray
    pre_activation: np.ndarray
    weights: np.ndarray
    bn: Optional[BnCache] = None
    mask: Optional[np.ndarray] = None


@dataclass
class ForwardCache:
    """Every intermediate needed by backward"""
    mode: Mode
    layers: List[LayerCache] = field(default_factory=list)

    def relu_masks(self) -> List[np.ndarray]:
        return [layer.mask for layer in self.layers if layer.mask is not None]

    def bn_inputs(self) -> List[np.ndarray]:
        """Pre-normalization activations of each BN layer, in layer order"""
        return [layer.pre_activation for layer in self.layers if layer.bn is not None]


# ── Network ──

class Network:
    """An MLP's specification together with its parameters and BN statistics"""

    def __init__(self, spec: MlpSpec, params: ParamVector, bn: Optional[BnStats] = None):
        if params.layout != spec.layout():
            raise InputError("parameter layout does not match the model specification")
        if bn is None:
            bn = BnStats.fresh(spec.bn_widths)
        if bn.widths() != spec.bn_widths:
            raise InputError("BN statistics do not match the model specification")
        self.spec = spec
        self.params = params
        self.bn = bn

    @classmethod
    def initialize(cls, spec: MlpSpec, rng: np.random.Generator) -> "Network":
        return cls(spec, init_params(spec, rng), BnStats.fresh(spec.bn_widths))

    def copy(self) -> "Network":
        return Network(self.spec, self.params.copy(), self.bn.copy())

    def forward(self, batch, mode=Mode.TRAIN, update_stats: bool = True) -> Tuple[Tensor2, ForwardCache]:
        """Run the network on a batch

        Args:
            batch: Matrix of shape (rows, input width)
            mode: Mode.TRAIN normalizes by batch statistics, Mode.EVAL by running ones
            update_stats: In train mode, fold batch statistics into the running ones

        Returns:
            (logits, cache)
        """
        mode = Mode(mode)
        x = as_tensor2(batch, self.spec.input_width)
        train = mode is Mode.TRAIN
        if train and self.spec.has_batchnorm and x.shape[0] < 2:
            raise DegenerateBatchError("train-mode batch norm needs at least 2 rows")

        cache = ForwardCache(mode)
        h = x
        bn_index = 0
        for i in range(self.spec.n_affine):
            weights = self.params.view(f"fc{i}", "W")
            z = h @ weights + self.params.view(f"fc{i}", "b")
            record = LayerCache(inputs=h, pre_activation=z, weights=weights)
            cache.layers.append(record)
            if i == self.spec.n_hidden:
                return z, cache

            if self.spec.use_batchnorm[i]:
                stats = self.bn.layers[bn_index]
                bn_index += 1
                if train:
                    mean = z.mean(axis=0)
                    var = z.var(axis=0)
                    if update_stats:
                        m = self.bn.momentum
                        stats.running_mean = (1.0 - m) * stats.running_mean + m * mean
                        stats.running_var = (1.0 - m) * stats.running_var + m * var
                else:
                    mean, var = stats.running_mean, stats.running_var
                inv_std = 1.0 / np.sqrt(var + self.bn.epsilon)
                xhat = (z - mean) * inv_std
                gamma = self.params.view(f"bn{i}", "gamma")
                z = gamma * xhat + self.params.view(f"bn{i}", "beta")
                record.bn = BnCache(xhat, inv_std, gamma.copy(), mean, var)

            record.mask = z > 0
            h = np.where(record.mask, z, 0.0)
        raise AssertionError("unreachable")

    def backward(self, cache: ForwardCache, grad_logits) -> ParamVector:
        """Gradient of the loss with respect to every parameter

        Args:
            cache: Cache of a train-mode forward on the current parameters
            grad_logits: dLoss/dlogits, shape (rows, n_classes)
        """
        if cache.mode is not Mode.TRAIN:
            raise ContractError("backward requires a train-mode forward cache")
        rows = cache.layers[0].inputs.shape[0]
        d = as_tensor2(grad_logits, self.spec.n_classes)
        if d.shape[0] != rows:
            raise InputError("grad_logits rows do not match the cached batch")

        grad = ParamVector.zeros(self.params.layout)
        for i in reversed(range(self.spec.n_affine)):
            record = cache.layers[i]
            if i < self.spec.n_hidden:
                d = np.where(record.mask, d, 0.0)
                if record.bn is not None:
                    bn = record.bn
                    grad.view(f"bn{i}", "gamma")[...] = (d * bn.xhat).sum(axis=0)
                    grad.view(f"bn{i}", "beta")[...] = d.sum(axis=0)
                    dxhat = d * bn.gamma
                    d = (bn.inv_std / rows) * (
                        rows * dxhat
                        - dxhat.sum(axis=0)
                        - bn.xhat * (dxhat * bn.xhat).sum(axis=0)
                    )
            grad.view(f"fc{i}", "W")[...] = record.inputs.T @ d
            grad.view(f"fc{i}", "b")[...] = d.sum(axis=0)
            if i > 0:
                d = d @ record.weights.T
        return grad

    def predict_logits(self, batch, batch_size: int = 4096) -> Tensor2:
        """Eval-mode logits, computed in chunks"""
        x = as_tensor2(batch, self.spec.input_width)
        chunks = [self.forward(x[s:s + batch_size], Mode.EVAL)[0]
                  for s in range(0, x.shape[0], batch_size)]
        if not chunks:
            return np.zeros((0, self.spec.n_classes))
        return np.vstack(chunks)

    def features(self, batch) -> Tensor2:
        """Eval-mode activations feeding the classification layer"""
        if self.spec.n_hidden == 0:
            return as_tensor2(batch, self.spec.input_width)
        _, cache = self.forward(batch, Mode.EVAL)
        return cache.layers[-1].inputs


def softmax_cross_entropy(logits, labels) -> Tuple[float, Tensor2]:
    """Mean negative log-likelihood and its gradient with respect to the logits"""
    logits = as_tensor2(logits)
    rows, n_classes = logits.shape
    labels = as_labels(labels, rows, n_classes)
    log_probs = log_softmax(logits, axis=1)
    loss = -float(log_probs[np.arange(rows), labels].mean()) if rows else 0.0
    grad = np.exp(log_probs)
    grad[np.arange(rows), labels] -= 1.0
    return loss, grad / max(rows, 1)


def iterate_batches(features: Tensor2, labels: np.ndarray, batch_size: int,
                    order: Optional[np.ndarray] = None,
                    min_rows: int = 1) -> Iterator[Tuple[Tensor2, np.ndarray]]:
    """Yield (features, labels) mini-batches in ``order``

    A trailing batch smaller than ``min_rows`` is dropped.
    """
    if order is None:
        order = np.arange(features.shape[0])
    for start in range(0, order.shape[0], batch_size):
        idx = order[start:start + batch_size]
        if idx.shape[0] < min_rows:
            break
        yield features[idx], labels[idx]


def grad_check(network: Network, batch, labels, step: float = GRAD_CHECK_STEP) -> float:
    """Worst relative error between analytic and central-difference gradients

    Coordinates whose perturbation flips a rectifier on or off are skipped,
    since the loss is not differentiable across the kink.
    """
    if step <= 0:
        raise InputError("finite-difference step must be positive")
    net = network.copy()
    if len(net.params) == 0:
        return 0.0

    def evaluate():
        logits, cache = net.forward(batch, Mode.TRAIN, update_stats=False)
        loss, grad_logits = softmax_cross_entropy(logits, labels)
        return loss, grad_logits, cache

    _, grad_logits, base_cache = evaluate()
    analytic = net.backward(base_cache, grad_logits).values
    base_masks = base_cache.relu_masks()

    def same_pattern(cache: ForwardCache) -> bool:
        return all(np.array_equal(a, b) for a, b in zip(base_masks, cache.relu_masks()))

    values = net.params.values
    worst = 0.0
    skipped = 0
    for k in range(values.shape[0]):
        original = values[k]
        values[k] = original + step
        loss_plus, _, cache_plus = evaluate()
        values[k] = original - step
        loss_minus, _, cache_minus = evaluate()
        values[k] = original
        if not (same_pattern(cache_plus) and same_pattern(cache_minus)):
            skipped += 1
            continue
        numeric = (loss_plus - loss_minus) / (2.0 * step)
        denom = max(abs(analytic[k]) + abs(numeric), GRAD_CHECK_FLOOR)
        worst = max(worst, abs(analytic[k] - numeric) / denom)

    if skipped:
        logger.debug(f"grad_check skipped {skipped} coordinates at rectifier kinks")
    return worst
