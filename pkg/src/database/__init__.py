"""Persistence: run records, checkpoints and run directories"""
from .checkpoint import load_checkpoint, save_checkpoint
from .models import CRITERIA, BEST_VAL_ACC, LOWEST_VAL_LOSS, EpochRecord, RunRecord, Verdict
from .run_store import RunStore
