"""Configuration management"""
import os
import toml
import logging
from pathlib import Path
from typing import Any, Iterable, List, Optional, get_args, get_type_hints
from dataclasses import dataclass, field, asdict, fields

from ..constants import (BATCH_SIZE, BN_EPSILON, BN_MOMENTUM, BOOTSTRAP_DECAY, CONFIGS_SUBDIR,
                         DEFAULT_CLASSES, DEFAULT_DATA_DIR, DEFAULT_EPOCHS, DEFAULT_FEATURES,
                         DEFAULT_HIDDEN, DEFAULT_LR, DEFAULT_OUT_DIR, DEFAULT_TEST_SAMPLES,
                         DEFAULT_TRAIN_SAMPLES, DEFAULT_WARMUP_EPOCHS, DIVERGENCE_NORM, ECE_BINS,
                         EMA_DECAYS, EMA_SAMPLING_PERIOD, LINEAR_EVAL_EPOCHS, LINEAR_EVAL_LR,
                         NESTEROV_MOMENTUM, STEP_FACTOR, THREADS_ENV, TRAIN_SPLIT,
                         WEIGHT_DECAY_RESNET)
from ..exceptions import ConfigError, InputError

logger = logging.getLogger(__name__)

# -1 stands for "unset" wherever TOML has no null.
UNSET = -1


@dataclass
class ExperimentSettings:
    """Experiment identity and output location"""
    name: str = "default"
    out_dir: str = DEFAULT_OUT_DIR
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    threads: int = 1


@dataclass
class DatasetSettings:
    """Synthetic task; ``kind`` has no default and must be given"""
    kind: str = ""
    n_train: int = DEFAULT_TRAIN_SAMPLES
    n_test: int = DEFAULT_TEST_SAMPLES
    n_features: int = DEFAULT_FEATURES
    n_classes: int = DEFAULT_CLASSES
    class_separation: float = 3.0
    seed: int = 0


@dataclass
class NoiseSettings:
    rate: float = 0.0
    kind: str = "symmetric"
    seed: int = 0


@dataclass
class ModelSettings:
    """Hidden widths; input and output widths come from the dataset"""
    hidden: List[int] = field(default_factory=lambda: list(DEFAULT_HIDDEN))
    batchnorm: bool = True
    batchnorm_layers: List[bool] = field(default_factory=list)  # per hidden layer, overrides batchnorm


@dataclass
class ScheduleSettings:
    kind: str = "warmup_cosine"
    lr: float = DEFAULT_LR
    epochs: int = DEFAULT_EPOCHS
    warmup_epochs: int = DEFAULT_WARMUP_EPOCHS
    milestones: List[int] = field(default_factory=list)
    factor: float = STEP_FACTOR
    freeze_epoch: int = UNSET


@dataclass
class SgdSettings:
    momentum: float = NESTEROV_MOMENTUM
    weight_decay: float = WEIGHT_DECAY_RESNET
    nesterov: bool = True


@dataclass
class EmaSettings:
    decays: List[float] = field(default_factory=lambda: list(EMA_DECAYS))
    period: int = EMA_SAMPLING_PERIOD
    warmup: bool = True
    after_step: bool = True  # false: the sampled iterate is the one before the step


@dataclass
class SwaSettings:
    enabled: bool = True
    start_epoch: int = UNSET  # unset: ceil(0.75 * epochs)


@dataclass
class BnSettings:
    momentum: float = BN_MOMENTUM
    epsilon: float = BN_EPSILON
    policies: List[str] = field(default_factory=lambda: ["batch_ema", "recompute_once_final"])


@dataclass
class TrainingSettings:
    batch_size: int = BATCH_SIZE
    split: float = TRAIN_SPLIT
    split_seed: int = 0
    bootstrap: bool = False
    bootstrap_decay: float = BOOTSTRAP_DECAY
    bootstrap_reset_momentum: bool = True
    divergence_norm: float = DIVERGENCE_NORM


@dataclass
class EceSettings:
    n_bins: int = ECE_BINS
    binning: str = "equal_mass"


@dataclass
class SweepSettings:
    lrs: List[float] = field(default_factory=lambda: [0.025, 0.05, 0.1, 0.2])


@dataclass
class TransferSettings:
    """Target task for linear evaluation of frozen backbones"""
    n_train: int = 2000
    n_test: int = 1000
    n_classes: int = DEFAULT_CLASSES
    class_separation: float = 3.0
    seed: int = 1
    epochs: int = LINEAR_EVAL_EPOCHS
    lr: float = LINEAR_EVAL_LR
    momentum: float = NESTEROV_MOMENTUM
    batch_size: int = BATCH_SIZE
    backbones: List[str] = field(default_factory=lambda: ["baseline", "ema_acc_recomputed"])


@dataclass
class AppConfig:
    """Complete experiment configuration"""
    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    dataset: DatasetSettings = field(default_factory=DatasetSettings)
    noise: NoiseSettings = field(default_factory=NoiseSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    schedule: ScheduleSettings = field(default_factory=ScheduleSettings)
    sgd: SgdSettings = field(default_factory=SgdSettings)
    ema: EmaSettings = field(default_factory=EmaSettings)
    swa: SwaSettings = field(default_factory=SwaSettings)
    bn: BnSettings = field(default_factory=BnSettings)
    training: TrainingSettings = field(default_factory=TrainingSettings)
    ece: EceSettings = field(default_factory=EceSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)
    transfer: TransferSettings = field(default_factory=TransferSettings)


SECTIONS = tuple(f.name for f in fields(AppConfig))


def _coerce(value: Any, default: Any, key: str, element: Optional[type] = None) -> Any:
    """Check ``value`` against the type of ``default``

    ``element`` is the item type of a list field, used when the default list is empty.
    """
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"expected a boolean, got {value!r}", key)
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"expected an integer, got {value!r}", key)
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"expected a number, got {value!r}", key)
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"expected a string, got {value!r}", key)
        return value
    if isinstance(default, list):
        if not isinstance(value, list):
            value = [value]
        template = default[0] if default else (element() if element is not None else None)
        if template is not None:
            return [_coerce(v, template, key) for v in value]
        return list(value)
    return value


def parse_override(text: str):
    """Split ``section.key=value``; the value is a TOML literal or a bare string"""
    if "=" not in text:
        raise ConfigError(f"override must look like section.key=value, got {text!r}")
    dotted, raw = text.split("=", 1)
    dotted = dotted.strip()
    if dotted.count(".") != 1:
        raise ConfigError(f"override key must be section.key, got {dotted!r}")
    section, key = dotted.split(".")
    try:
        value = toml.loads(f"v = {raw.strip()}")["v"]
    except toml.TomlDecodeError:
        value = raw.strip()
    return section, key, value


def configs_dir() -> Path:
    """Directory holding the bundled configs"""
    return Path(__file__).parent.parent.parent / DEFAULT_DATA_DIR / CONFIGS_SUBDIR


class Config:
    """Configuration manager"""

    def __init__(self, config_path: Optional[str] = None, overrides: Iterable[str] = ()):
        """Initialize configuration manager

        Args:
            config_path: Path to a TOML config. If None, every section keeps its defaults.
            overrides: ``section.key=value`` strings applied after loading
        """
        self.config_path = Path(config_path) if config_path is not None else None
        self.config = AppConfig()
        if self.config_path is not None:
            self.load()
        for text in overrides:
            self.set(*parse_override(text))

    @classmethod
    def from_name(cls, name: str, overrides: Iterable[str] = ()) -> "Config":
        """Load a config by path, or by name from the bundled configs"""
        path = Path(name)
        if not path.is_file():
            bundled = configs_dir() / f"{name}.toml"
            if not bundled.is_file():
                raise ConfigError(f"no config file or bundled config named {name!r}")
            path = bundled
        return cls(str(path), overrides)

    def load(self) -> None:
        """Load configuration from file, rejecting unknown sections and keys"""
        try:
            data = toml.load(self.config_path)
        except (toml.TomlDecodeError, IOError) as e:
            logger.error(f"Error loading config: {e}")
            raise ConfigError(f"cannot read {self.config_path}: {e}") from e

        for section, values in data.items():
            if section not in SECTIONS:
                raise ConfigError("unknown section", section)
            if not isinstance(values, dict):
                raise ConfigError("expected a table", section)
            for key, value in values.items():
                self.set(section, key, value)

    def set(self, section: str, key: str, value: Any) -> None:
        """Set a configuration value

        Args:
            section: Config section
            key: Key within section
            value: Value to set, checked against the default's type
        """
        dotted = f"{section}.{key}"
        section_obj = getattr(self.config, section, None) if section in SECTIONS else None
        if section_obj is None:
            raise ConfigError("unknown section", section)
        if key not in {f.name for f in fields(section_obj)}:
            raise ConfigError("unknown key", dotted)
        hint = get_type_hints(type(section_obj))[key]
        element = next(iter(get_args(hint)), None)
        setattr(section_obj, key, _coerce(value, getattr(type(section_obj)(), key), dotted, element))

    def get(self, section: str, key: str, default: Any = None) -> Any:
        section_obj = getattr(self.config, section, None)
        if section_obj:
            return getattr(section_obj, key, default)
        return default

    def to_dict(self) -> dict:
        """Fully resolved configuration, every default included"""
        return {name: asdict(getattr(self.config, name)) for name in SECTIONS}

    def save(self, path: str) -> None:
        """Write the resolved configuration to ``path``"""
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(path, 'w') as f:
                toml.dump(self.to_dict(), f)
        except (IOError, OSError) as e:
            logger.error(f"Failed to save config: {e}")
            raise

    @property
    def threads(self) -> int:
        """Seeds run concurrently; the environment variable wins over the file"""
        raw = os.environ.get(THREADS_ENV)
        if raw:
            try:
                return max(1, int(raw))
            except ValueError:
                raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}")
        return max(1, self.config.experiment.threads)

    def validate(self) -> None:
        """Check every value; raises ConfigError naming the offending key"""
        c = self.config
        from ..core.averaging import BnPolicy
        from ..core.optim import ScheduleKind
        from ..harness.data import DatasetKind

        def check(ok: bool, key: str, message: str) -> None:
            if not ok:
                logger.error(f"Invalid config value {key}: {message}")
                raise ConfigError(message, key)

        check(bool(c.experiment.name), "experiment.name", "must not be empty")
        check(bool(c.experiment.seeds), "experiment.seeds", "need at least one seed")
        check(all(s >= 0 for s in c.experiment.seeds), "experiment.seeds", "seeds must be non-negative")
        check(len(set(c.experiment.seeds)) == len(c.experiment.seeds), "experiment.seeds", "duplicate seed")

        check(c.dataset.kind != "", "dataset.kind", "missing required key")
        check(c.dataset.kind in {k.value for k in DatasetKind}, "dataset.kind",
              f"unknown dataset kind {c.dataset.kind!r}")
        check(c.dataset.n_classes >= 2, "dataset.n_classes", "need at least 2 classes")
        check(c.dataset.n_features > 0, "dataset.n_features", "must be positive")
        check(c.dataset.n_train >= 10 * c.dataset.n_classes, "dataset.n_train",
              "need at least 10 samples per class")
        check(c.dataset.n_test > 0, "dataset.n_test", "must be positive")
        check(c.dataset.class_separation > 0, "dataset.class_separation", "must be positive")

        check(0.0 <= c.noise.rate <= 1.0, "noise.rate", "must be in [0, 1]")
        check(c.noise.kind == "symmetric", "noise.kind", "only symmetric noise is supported")

        check(len(c.model.hidden) >= 1, "model.hidden", "need at least one hidden layer")
        check(all(w > 0 for w in c.model.hidden), "model.hidden", "widths must be positive")
        check(not c.model.batchnorm_layers or len(c.model.batchnorm_layers) == len(c.model.hidden),
              "model.batchnorm_layers", "need one flag per hidden layer")

        s = c.schedule
        check(s.kind in {k.value for k in ScheduleKind}, "schedule.kind", f"unknown schedule {s.kind!r}")
        check(s.lr > 0, "schedule.lr", "must be positive")
        check(s.epochs > 0, "schedule.epochs", "must be positive")
        check(0 <= s.warmup_epochs < s.epochs, "schedule.warmup_epochs", "must be in [0, epochs)")
        check(all(b > a for a, b in zip(s.milestones, s.milestones[1:])), "schedule.milestones",
              "must be strictly increasing")
        check(all(0 <= m < s.epochs for m in s.milestones), "schedule.milestones", "must lie in [0, epochs)")
        check(s.factor > 0, "schedule.factor", "must be positive")
        check(s.freeze_epoch == UNSET or 1 <= s.freeze_epoch <= s.epochs, "schedule.freeze_epoch",
              "must be in [1, epochs] or -1")

        check(0.0 <= c.sgd.momentum < 1.0, "sgd.momentum", "must be in [0, 1)")
        check(c.sgd.weight_decay >= 0, "sgd.weight_decay", "must be non-negative")

        d = c.ema.decays
        check(bool(d), "ema.decays", "need at least one decay")
        check(all(0.0 <= a < 1.0 for a in d), "ema.decays", "must lie in [0, 1)")
        check(all(b > a for a, b in zip(d, d[1:])), "ema.decays", "must be strictly increasing")
        check(c.ema.period > 0, "ema.period", "must be positive")

        check(c.swa.start_epoch == UNSET or 1 <= c.swa.start_epoch <= s.epochs, "swa.start_epoch",
              "must be in [1, epochs] or -1")

        check(bool(c.bn.policies), "bn.policies", "need at least one policy")
        check(all(p in {b.value for b in BnPolicy} for p in c.bn.policies), "bn.policies",
              "unknown BN policy")
        check(0.0 < c.bn.momentum <= 1.0, "bn.momentum", "must be in (0, 1]")
        check(c.bn.epsilon > 0, "bn.epsilon", "must be positive")

        t = c.training
        check(t.batch_size > 0, "training.batch_size", "must be positive")
        check(0.0 < t.split <= 1.0, "training.split", "must be in (0, 1]")
        check(0.0 <= t.bootstrap_decay < 1.0, "training.bootstrap_decay", "must be in [0, 1)")
        check(not t.bootstrap or t.bootstrap_decay in d, "training.bootstrap_decay",
              "must be one of ema.decays")
        check(t.divergence_norm > 0, "training.divergence_norm", "must be positive")

        check(c.ece.n_bins > 0, "ece.n_bins", "must be positive")
        check(c.ece.n_bins <= c.dataset.n_test, "ece.n_bins", "must not exceed dataset.n_test")
        check(c.ece.binning == "equal_mass", "ece.binning", "only equal_mass binning is supported")

        check(bool(c.sweep.lrs) and all(lr > 0 for lr in c.sweep.lrs), "sweep.lrs",
              "need positive learning rates")

        tr = c.transfer
        check(tr.n_classes >= 2, "transfer.n_classes", "need at least 2 classes")
        check(tr.n_train >= 10 * tr.n_classes, "transfer.n_train", "need at least 10 samples per class")
        check(tr.n_test > 0, "transfer.n_test", "must be positive")
        check(tr.epochs > 0, "transfer.epochs", "must be positive")
        check(tr.lr > 0, "transfer.lr", "must be positive")

    def to_run_config(self):
        """Immutable RunConfig consumed by the training harness"""
        from ..core.averaging import BnPolicy
        from ..core.network import MlpSpec
        from ..harness.data import DatasetSpec, NoiseSpec
        from ..harness.settings import (BootstrapSpec, EmaSpec, RunConfig, ScheduleSpec, SgdSpec,
                                        SwaSpec)

        self.validate()
        c = self.config
        hidden = list(c.model.hidden)
        flags = list(c.model.batchnorm_layers) or [c.model.batchnorm] * len(hidden)
        try:
            return RunConfig(
                name=c.experiment.name,
                dataset=DatasetSpec(c.dataset.kind, c.dataset.n_train + c.dataset.n_test,
                                    c.dataset.n_features, c.dataset.n_classes,
                                    c.dataset.class_separation, c.dataset.seed),
                n_test=c.dataset.n_test,
                model=MlpSpec((c.dataset.n_features, *hidden, c.dataset.n_classes), tuple(flags),
                              c.dataset.n_classes),
                schedule=ScheduleSpec(c.schedule.kind, c.schedule.lr, c.schedule.epochs,
                                      c.schedule.warmup_epochs, tuple(c.schedule.milestones),
                                      c.schedule.factor,
                                      None if c.schedule.freeze_epoch == UNSET else c.schedule.freeze_epoch),
                sgd=SgdSpec(c.sgd.momentum, c.sgd.weight_decay, c.sgd.nesterov),
                ema=EmaSpec(tuple(c.ema.decays), c.ema.period, c.ema.warmup, c.ema.after_step),
                swa=SwaSpec(c.swa.enabled, None if c.swa.start_epoch == UNSET else c.swa.start_epoch),
                bootstrap=BootstrapSpec(c.training.bootstrap, c.training.bootstrap_decay,
                                        c.training.bootstrap_reset_momentum),
                noise=NoiseSpec(c.noise.rate, c.noise.seed, c.noise.kind) if c.noise.rate > 0 else None,
                bn_policies=tuple(BnPolicy(p) for p in c.bn.policies),
                bn_momentum=c.bn.momentum,
                bn_epsilon=c.bn.epsilon,
                batch_size=c.training.batch_size,
                split=c.training.split,
                split_seed=c.training.split_seed,
                divergence_norm=c.training.divergence_norm,
                seeds=tuple(c.experiment.seeds),
            )
        except InputError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e)) from e

    @property
    def experiment(self) -> ExperimentSettings:
        return self.config.experiment

    @property
    def dataset(self) -> DatasetSettings:
        return self.config.dataset

    @property
    def noise(self) -> NoiseSettings:
        return self.config.noise

    @property
    def ece(self) -> EceSettings:
        return self.config.ece

    @property
    def sweep(self) -> SweepSettings:
        return self.config.sweep

    @property
    def transfer(self) -> TransferSettings:
        return self.config.transfer
