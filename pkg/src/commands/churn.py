"""churn: train independent seeds and compare their test predictions"""
import logging

from rich.console import Console

from ..constants import EXIT_FAILED_RUN, EXIT_OK
from ..database.run_store import RunStore
from ..harness.experiments import churn_experiment
from ..utils.config import Config
from .summary import comparison_table, fmt_mean_std, model_label
from .train import persist_result

logger = logging.getLogger(__name__)


def run_churn(config: Config, console: Console) -> int:
    """Pairwise churn and JS divergence of baseline and EMA(loss) models"""
    run_config = config.to_run_config()
    store = RunStore(config.experiment.out_dir, config.experiment.name)
    seeds = list(run_config.seeds)
    summary, results = churn_experiment(run_config, seeds, config.threads)

    status = EXIT_OK
    for seed, result in zip(seeds, results):
        persist_result(store, config, seed, result)
        if result.failed:
            status = EXIT_FAILED_RUN

    out_dir = store.experiment_dir / "churn"
    store.write_table("pairs", ["model", "seed_a", "seed_b", "churn", "js"],
                      [[p.model, p.seed_a, p.seed_b, p.churn, p.js] for p in summary.pairs], out_dir)
    rows, display = [], []
    for model in summary.models:
        st = summary.stats(model)
        rows.append([model, st["churn_mean"], st["churn_std"], st["js_mean"], st["js_std"], st["pairs"]])
        display.append([model_label(model), fmt_mean_std(st["churn_mean"], st["churn_std"]),
                        fmt_mean_std(st["js_mean"], st["js_std"], digits=3), str(st["pairs"])])
    store.write_table("summary", ["model", "churn_mean", "churn_std", "js_mean", "js_std", "pairs"],
                      rows, out_dir)
    console.print(comparison_table("Prediction churn across seeds (test)",
                                   ["Model", "Churn (%)", "JS (×100)", "Pairs"], display))
    return status
