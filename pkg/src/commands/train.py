"""train: run every seed of a config and persist its artifacts"""
import logging
from typing import Dict, Optional, Tuple

import numpy as np
from rich.console import Console

from ..constants import EXIT_FAILED_RUN, EXIT_OK
from ..core.network import softmax_cross_entropy
from ..database.run_store import RunStore
from ..harness.experiments import run_seeds, stopping_fraction
from ..harness.trainer import RunResult, final_fit, prepare_data, train_run
from ..utils.config import Config
from .summary import run_summary

logger = logging.getLogger(__name__)

Scores = Dict[str, Tuple[Optional[float], Optional[float]]]


def resolved_for_seed(config: Config, seed: int) -> dict:
    """Resolved config that reproduces exactly this seed's run"""
    resolved = config.to_dict()
    resolved['experiment']['seeds'] = [seed]
    return resolved


def persist_result(store: RunStore, config: Config, seed: int, result: RunResult) -> Scores:
    """Write config, record, checkpoints and validation predictions

    Returns:
        Model key -> (val acc, val loss), None when there is no validation split
    """
    store.save_config(seed, resolved_for_seed(config, seed))
    store.save_record(seed, result.record)
    scores: Scores = {}
    data = result.data
    for name in sorted(result.checkpoints):
        network, metadata = result.checkpoints[name]
        store.save_checkpoint(seed, name, network, metadata)
        if data is None or not data.has_val:
            scores[name] = (None, None)
            continue
        logits = network.predict_logits(data.val.features)
        store.save_predictions(seed, "val", name, logits, data.val.labels)
        loss, _ = softmax_cross_entropy(logits, data.val.labels)
        scores[name] = (float(np.mean(np.argmax(logits, axis=1) == data.val.labels)), loss)
    return scores


def run_train(config: Config, console: Console, with_final_fit: bool = False) -> int:
    """Train all seeds, persist artifacts, print one summary table per seed

    Returns:
        Exit status (failed runs keep their partial artifacts)
    """
    run_config = config.to_run_config()
    store = RunStore(config.experiment.out_dir, config.experiment.name)
    data = prepare_data(run_config)
    seeds = list(run_config.seeds)
    logger.info(f"Training {config.experiment.name} for seeds {seeds}")

    results = run_seeds(lambda seed: train_run(run_config, seed, data), seeds, config.threads)

    status = EXIT_OK
    for seed, result in zip(seeds, results):
        scores = persist_result(store, config, seed, result)
        console.print(run_summary(result.record, scores))
        if result.failed:
            status = EXIT_FAILED_RUN
            continue
        stopping_fraction(result.record)
        if with_final_fit and result.record.verdicts:
            fit = final_fit(run_config, seed, result.record.verdicts)
            if fit.failed:
                status = EXIT_FAILED_RUN
                continue
            for name in sorted(fit.checkpoints):
                network, metadata = fit.checkpoints[name]
                store.save_checkpoint(seed, f"final_{name}", network, metadata)
            console.print(f"[#6c7086]seed {seed}: final fit saved {len(fit.checkpoints)} models[/]")
    console.print(f"[#89b4fa]Artifacts in {store.experiment_dir}[/]")
    return status
