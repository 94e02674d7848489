"""Run directory manager: records, resolved configs, predictions, checkpoints"""
import csv
import json
import logging
import re
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np
import toml

from ..constants import (CONFIG_FILENAME, DEFAULT_OUT_DIR, RECORD_FILENAME, REPORT_SUBDIR)
from ..core.network import Network
from ..exceptions import InputError
from .checkpoint import load_checkpoint, save_checkpoint
from .models import RunRecord

logger = logging.getLogger(__name__)

SEED_DIR = re.compile(r"^seed_(\d+)$")


def _fmt(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


class RunStore:
    """Manages the on-disk layout of one experiment

    Layout::

        <out>/<experiment>/seed_<seed>/config.toml
        <out>/<experiment>/seed_<seed>/record.jsonl
        <out>/<experiment>/seed_<seed>/ckpt_<model>.npz
        <out>/<experiment>/seed_<seed>/preds_<split>_<model>.csv
        <out>/<experiment>/report/*.csv
    """

    def __init__(self, out_dir: Optional[str] = None, experiment: str = "default"):
        """Initialize the store

        Args:
            out_dir: Root output directory. If None, uses ``runs`` under the working directory.
            experiment: Experiment name (subdirectory of out_dir)
        """
        self.root = Path(out_dir if out_dir is not None else DEFAULT_OUT_DIR)
        self.experiment = experiment
        self.experiment_dir = self.root / experiment

    @classmethod
    def open(cls, experiment_dir: str) -> "RunStore":
        """Store for an existing experiment directory"""
        path = Path(experiment_dir)
        if not path.is_dir():
            raise InputError(f"experiment directory not found: {path}")
        return cls(str(path.parent), path.name)

    def run_dir(self, seed: int, create: bool = True) -> Path:
        path = self.experiment_dir / f"seed_{seed}"
        if create:
            path.mkdir(parents=True, exist_ok=True)
        return path

    def report_dir(self) -> Path:
        path = self.experiment_dir / REPORT_SUBDIR
        path.mkdir(parents=True, exist_ok=True)
        return path

    def list_seeds(self) -> List[int]:
        """Seeds with a record on disk, ascending"""
        if not self.experiment_dir.is_dir():
            return []
        seeds = []
        for child in self.experiment_dir.iterdir():
            match = SEED_DIR.match(child.name)
            if match and (child / RECORD_FILENAME).is_file():
                seeds.append(int(match.group(1)))
        return sorted(seeds)

    # ── records ──

    def save_record(self, seed: int, record: RunRecord) -> Path:
        path = self.run_dir(seed) / RECORD_FILENAME
        with open(path, "w", encoding="utf-8") as f:
            for row in record.to_dicts():
                f.write(json.dumps(row, sort_keys=True) + "\n")
        return path

    def load_record(self, seed: int) -> RunRecord:
        path = self.run_dir(seed, create=False) / RECORD_FILENAME
        try:
            with open(path, "r", encoding="utf-8") as f:
                rows = [json.loads(line) for line in f if line.strip()]
        except (OSError, json.JSONDecodeError) as e:
            logger.error(f"Failed to read record {path}: {e}")
            raise InputError(f"{path}: unreadable record ({e})") from e
        if not rows or rows[0].get("kind") != "run":
            raise InputError(f"{path}: missing run header")
        return RunRecord.from_dicts(rows)

    # ── resolved config ──

    def save_config(self, seed: int, resolved: dict) -> Path:
        path = self.run_dir(seed) / CONFIG_FILENAME
        with open(path, "w", encoding="utf-8") as f:
            toml.dump(resolved, f)
        return path

    def config_path(self, seed: int) -> Path:
        return self.run_dir(seed, create=False) / CONFIG_FILENAME

    # ── predictions ──

    def save_predictions(self, seed: int, split: str, model: str,
                         logits: np.ndarray, labels: np.ndarray) -> Path:
        """Write ``preds_<split>_<model>.csv`` (sample_id,label,logit_0..)"""
        path = self.run_dir(seed) / f"preds_{split}_{model}.csv"
        n_classes = logits.shape[1]
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["sample_id", "label"] + [f"logit_{k}" for k in range(n_classes)])
            for i, (label, row) in enumerate(zip(labels, logits)):
                writer.writerow([i, int(label)] + [_fmt(v) for v in row])
        return path

    def load_predictions(self, seed: int, split: str, model: str) -> Tuple[np.ndarray, np.ndarray]:
        """(logits, labels) of a prediction dump"""
        path = self.run_dir(seed, create=False) / f"preds_{split}_{model}.csv"
        if not path.is_file():
            raise InputError(f"prediction dump not found: {path}")
        with open(path, "r", newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            next(reader, None)
            rows = [r for r in reader if r]
        if not rows:
            raise InputError(f"{path}: empty prediction dump")
        labels = np.array([int(r[1]) for r in rows], dtype=np.int64)
        logits = np.array([[float(v) for v in r[2:]] for r in rows], dtype=np.float64)
        return logits, labels

    def has_predictions(self, seed: int, split: str, model: str) -> bool:
        return (self.run_dir(seed, create=False) / f"preds_{split}_{model}.csv").is_file()

    # ── checkpoints ──

    def save_checkpoint(self, seed: int, model: str, network: Network,
                        metadata: Optional[dict] = None) -> Path:
        return save_checkpoint(self.run_dir(seed) / f"ckpt_{model}.npz", network, metadata)

    def load_checkpoint(self, seed: int, model: str) -> Tuple[Network, dict]:
        path = self.run_dir(seed, create=False) / f"ckpt_{model}.npz"
        if not path.is_file():
            raise InputError(f"checkpoint not found: {path}")
        return load_checkpoint(path)

    def list_checkpoints(self, seed: int) -> List[str]:
        run = self.run_dir(seed, create=False)
        if not run.is_dir():
            return []
        return sorted(p.stem[len("ckpt_"):] for p in run.glob("ckpt_*.npz"))

    # ── report tables ──

    def write_table(self, name: str, header: Sequence[str], rows: Iterable[Sequence],
                    directory: Optional[Path] = None) -> Path:
        """Comma-separated table under the report directory (or ``directory``)"""
        target = directory if directory is not None else self.report_dir()
        target.mkdir(parents=True, exist_ok=True)
        path = target / f"{name}.csv"
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(list(header))
            for row in rows:
                writer.writerow(["" if v is None else _fmt(v) for v in row])
        logger.info(f"Wrote {path}")
        return path
