"""Linear evaluation: train a fresh linear head on a frozen backbone"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from ..constants import BATCH_SIZE, LINEAR_EVAL_EPOCHS, LINEAR_EVAL_LR, NESTEROV_MOMENTUM
from ..core.network import MlpSpec, Network, iterate_batches, softmax_cross_entropy
from ..core.optim import Schedule, ScheduleKind, SgdState, lr_at, sgd_step
from ..exceptions import InputError
from ..utils.seeding import derive_seed
from .data import DatasetKind, DatasetSpec, LabeledData, stratified_split, synthesize

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HeadSpec:
    """Optimizer settings of the linear head (no warmup, no weight decay, no EMA)"""
    epochs: int = LINEAR_EVAL_EPOCHS
    lr: float = LINEAR_EVAL_LR
    momentum: float = NESTEROV_MOMENTUM
    batch_size: int = BATCH_SIZE


def target_task(kind: DatasetKind, n_features: int, n_classes: int, n_train: int, n_test: int,
                class_separation: float, seed: int) -> Tuple[LabeledData, LabeledData]:
    """Shifted synthetic target sharing the source's input space

    Returns:
        (head training data, held-out target test data)
    """
    spec = DatasetSpec(kind, n_train + n_test, n_features, n_classes, class_separation, seed)
    features, labels = synthesize(spec)
    test_idx, train_idx = stratified_split(
        labels, n_test, np.random.default_rng(derive_seed(seed, "test")))
    return (LabeledData(features[train_idx], labels[train_idx]),
            LabeledData(features[test_idx], labels[test_idx]))


def linear_eval(backbone: Network, train: LabeledData, test: LabeledData, seed: int,
                head_spec: HeadSpec = HeadSpec(), head: Optional[Network] = None) -> float:
    """Target-set accuracy of a linear head trained on frozen backbone features

    The backbone runs in eval mode only, so neither its parameters nor its
    BN statistics change.
    """
    width = backbone.spec.feature_width
    n_classes = int(max(train.labels.max(), test.labels.max())) + 1
    if head is None:
        spec = MlpSpec((width, n_classes), (), n_classes)
        head = Network.initialize(spec, np.random.default_rng(derive_seed(seed, "head")))
    elif head.spec.input_width != width:
        raise InputError(f"head expects {head.spec.input_width} features, backbone gives {width}")

    train_features = backbone.features(train.features)
    test_features = backbone.features(test.features)

    steps_per_epoch = -(-len(train) // head_spec.batch_size)
    schedule = Schedule(ScheduleKind.CONSTANT, head_spec.lr, head_spec.epochs, steps_per_epoch)
    state = SgdState.for_params(head.params, head_spec.momentum, weight_decay=0.0, nesterov=True)
    rng = np.random.default_rng(derive_seed(seed, "shuffle"))
    step = 0
    for _ in range(head_spec.epochs):
        order = rng.permutation(len(train))
        for xb, yb in iterate_batches(train_features, train.labels, head_spec.batch_size, order):
            logits, cache = head.forward(xb)
            _, grad_logits = softmax_cross_entropy(logits, yb)
            head.params = sgd_step(head.params, head.backward(cache, grad_logits), state,
                                   lr_at(schedule, step))
            step += 1

    predictions = np.argmax(head.predict_logits(test_features), axis=1)
    accuracy = float(np.mean(predictions == test.labels))
    logger.info(f"linear head accuracy {accuracy:.4f} after {head_spec.epochs} epochs")
    return accuracy
