"""linear-eval: fit linear heads on frozen backbones of a trained experiment"""
import logging
from typing import Optional

from rich.console import Console

from ..constants import EXIT_OK
from ..database.checkpoint import load_checkpoint
from ..database.run_store import RunStore
from ..exceptions import InputError
from ..harness.data import DatasetKind
from ..harness.experiments import effect_summary
from ..harness.transfer import HeadSpec, linear_eval, target_task
from ..utils.config import Config
from .summary import comparison_table, fmt_mean_std, fmt_pct, model_label

logger = logging.getLogger(__name__)


def run_linear_eval(config: Config, console: Console, checkpoint: Optional[str] = None) -> int:
    """Head accuracy on the transfer target for every (seed, backbone)

    Backbones come from the experiment's run directories, or from a single
    ``checkpoint`` file when one is given.
    """
    config.validate()
    tr = config.transfer
    ds = config.dataset
    train, test = target_task(DatasetKind(ds.kind), ds.n_features, tr.n_classes, tr.n_train,
                              tr.n_test, tr.class_separation, tr.seed)
    head_spec = HeadSpec(tr.epochs, tr.lr, tr.momentum, tr.batch_size)
    store = RunStore(config.experiment.out_dir, config.experiment.name)

    jobs = []
    if checkpoint is not None:
        network, metadata = load_checkpoint(checkpoint)
        jobs.append((int(metadata.get("seed", 0)), metadata.get("model", "checkpoint"), network))
    else:
        for seed in config.experiment.seeds:
            for backbone in tr.backbones:
                network, _ = store.load_checkpoint(seed, backbone)
                jobs.append((seed, backbone, network))
    if not jobs:
        raise InputError("no backbones to evaluate")

    rows = []
    for seed, backbone, network in jobs:
        if network.spec.input_width != ds.n_features:
            raise InputError(f"{backbone}: backbone takes {network.spec.input_width} features, "
                             f"target has {ds.n_features}")
        accuracy = linear_eval(network, train, test, seed, head_spec)
        rows.append([seed, backbone, accuracy])

    out_dir = store.experiment_dir / "transfer"
    store.write_table("linear_eval", ["seed", "backbone", "accuracy"], rows, out_dir)
    display = [[model_label(b), str(s), fmt_pct(a)] for s, b, a in rows]
    for backbone in dict.fromkeys(r[1] for r in rows):
        mean, std = effect_summary([r[2] for r in rows if r[1] == backbone])
        display.append([model_label(backbone), "mean ± std", fmt_mean_std(mean, std)])
    console.print(comparison_table("Linear evaluation (target acc %)", ["Backbone", "Seed", "Acc"], display))
    return EXIT_OK
