"""Data models for training runs"""
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Tuple

from ..core.averaging import ema_key

BEST_VAL_ACC = "best_val_acc"
LOWEST_VAL_LOSS = "lowest_val_loss"
CRITERIA = (BEST_VAL_ACC, LOWEST_VAL_LOSS)


@dataclass
class EpochRecord:
    """Metrics of every tracked model after one completed epoch

    Each metric maps a model key ("baseline", "ema_<decay>", "swa") to its
    value. Epoch 0 is the evaluation before the first optimizer step.
    """
    epoch: int
    lr: float = 0.0
    steps: int = 0
    train_loss: Optional[float] = None
    train_acc: Dict[str, float] = field(default_factory=dict)
    train_acc_clean: Dict[str, float] = field(default_factory=dict)
    train_acc_noisy: Dict[str, float] = field(default_factory=dict)
    val_acc: Dict[str, float] = field(default_factory=dict)
    val_loss: Dict[str, float] = field(default_factory=dict)
    val_acc_clean: Dict[str, float] = field(default_factory=dict)
    val_acc_recomputed: Dict[str, float] = field(default_factory=dict)
    val_loss_recomputed: Dict[str, float] = field(default_factory=dict)
    bootstrapped: bool = False

    def to_dict(self) -> dict:
        """Convert to a JSON-ready dictionary"""
        return {
            'kind': 'epoch',
            'epoch': self.epoch,
            'lr': self.lr,
            'steps': self.steps,
            'train_loss': self.train_loss,
            'train_acc': self.train_acc,
            'train_acc_clean': self.train_acc_clean,
            'train_acc_noisy': self.train_acc_noisy,
            'val_acc': self.val_acc,
            'val_loss': self.val_loss,
            'val_acc_clean': self.val_acc_clean,
            'val_acc_recomputed': self.val_acc_recomputed,
            'val_loss_recomputed': self.val_loss_recomputed,
            'bootstrapped': self.bootstrapped,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EpochRecord":
        data = {k: v for k, v in data.items() if k != 'kind'}
        return cls(**data)


@dataclass
class Verdict:
    """Early-stopping choice made on validation data"""
    criterion: str
    epoch: int
    decay: float
    value: float

    @property
    def model_key(self) -> str:
        return ema_key(self.decay)

    def to_dict(self) -> dict:
        return {'criterion': self.criterion, 'epoch': self.epoch,
                'decay': self.decay, 'value': self.value}


@dataclass
class RunRecord:
    """Append-only per-epoch log of one training run plus its verdicts"""
    run_id: str
    seed: int
    total_epochs: int
    epochs: List[EpochRecord] = field(default_factory=list)
    verdicts: Dict[str, Verdict] = field(default_factory=dict)
    has_noise: bool = False
    failed: bool = False
    diagnostic: Optional[str] = None

    def append(self, entry: EpochRecord) -> None:
        if self.epochs and entry.epoch <= self.epochs[-1].epoch:
            raise ValueError(f"epoch {entry.epoch} out of order after {self.epochs[-1].epoch}")
        self.epochs.append(entry)

    def __iter__(self) -> Iterator[EpochRecord]:
        return iter(self.epochs)

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def last(self) -> Optional[EpochRecord]:
        return self.epochs[-1] if self.epochs else None

    def series(self, metric: str, model: str) -> List[Tuple[int, float]]:
        """(epoch, value) pairs of one metric for one model, skipping absent epochs"""
        points = []
        for entry in self.epochs:
            values = getattr(entry, metric)
            if model in values:
                points.append((entry.epoch, values[model]))
        return points

    def at_epoch(self, epoch: int) -> EpochRecord:
        for entry in self.epochs:
            if entry.epoch == epoch:
                return entry
        raise KeyError(f"epoch {epoch} not in record")

    def header(self) -> dict:
        return {
            'kind': 'run',
            'run_id': self.run_id,
            'seed': self.seed,
            'total_epochs': self.total_epochs,
            'has_noise': self.has_noise,
        }

    def footer(self) -> dict:
        return {
            'kind': 'verdicts',
            'failed': self.failed,
            'diagnostic': self.diagnostic,
            'verdicts': {name: v.to_dict() for name, v in self.verdicts.items()},
        }

    def to_dicts(self) -> List[dict]:
        """Header line, one line per epoch, verdict line"""
        return [self.header()] + [e.to_dict() for e in self.epochs] + [self.footer()]

    @classmethod
    def from_dicts(cls, rows: List[dict]) -> "RunRecord":
        header = rows[0]
        record = cls(header['run_id'], header['seed'], header['total_epochs'],
                     has_noise=header.get('has_noise', False))
        for row in rows[1:]:
            if row.get('kind') == 'epoch':
                record.append(EpochRecord.from_dict(row))
            elif row.get('kind') == 'verdicts':
                record.failed = row['failed']
                record.diagnostic = row['diagnostic']
                record.verdicts = {name: Verdict(**v) for name, v in row['verdicts'].items()}
        return record
