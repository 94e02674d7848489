"""Numerical core: network engine, optimizer, averaging and metrics"""
from .network import BnStats, MlpSpec, Mode, Network, ParamVector, softmax_cross_entropy
from .optim import Schedule, ScheduleKind, SgdState, lr_at, sgd_step
from .averaging import BnPolicy, EmaBank, EmaState, SwaState, materialize
from .metrics import EceConfig, MetricsCalculator, PredictionSet
