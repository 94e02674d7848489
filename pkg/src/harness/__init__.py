"""Experiment harness: data, training driver, ablations, transfer"""
from .data import DatasetKind, DatasetSpec, LabeledData, NoiseSpec, inject_noise, split_80_20, synthesize
from .settings import RunConfig
from .trainer import PreparedData, RunResult, TrainingRun, final_fit, prepare_data, train_run
from .transfer import HeadSpec, linear_eval, target_task
