"""ablate: paired comparisons (bootstrap, constant lr, BN policy, lr sweep)"""
import logging
from typing import Callable, Dict, List, Optional, Sequence

from rich.console import Console

from ..constants import EXIT_OK
from ..core.averaging import ema_key
from ..database.models import BEST_VAL_ACC, RunRecord
from ..database.run_store import RunStore
from ..exceptions import ConfigError
from ..harness.experiments import (best_ema_val_acc, bn_policy_ablation, bootstrap_ablation,
                                   constant_lr_ablation, effect_summary, final_val_acc,
                                   lr_sweep, recompute_win_fraction, run_seeds, sweep_argmax)
from ..harness.trainer import prepare_data
from ..utils.config import Config
from .summary import comparison_table, fmt_mean_std, fmt_num, fmt_pct

logger = logging.getLogger(__name__)

KINDS = ("bootstrap", "constant_lr", "bn_policy", "lr_sweep")
MEAN_STD = "mean ± std"


def summary_rows(rows: Sequence[list], label_col: int, group_cols: Sequence[int],
                 value_cols: Sequence[int]) -> List[list]:
    """A ``mean`` and a ``std`` row per group of ``rows``, other columns left empty

    Groups keep the order of their first row; missing values are skipped.
    """
    out = []
    for group in dict.fromkeys(tuple(r[i] for i in group_cols) for r in rows):
        members = [r for r in rows if tuple(r[i] for i in group_cols) == group]
        stats = {i: effect_summary([r[i] for r in members]) for i in value_cols}
        for label, pick in (("mean", 0), ("std", 1)):
            row = [None] * len(members[0])
            row[label_col] = label
            for i, value in zip(group_cols, group):
                row[i] = value
            for i in value_cols:
                row[i] = stats[i][pick]
            out.append(row)
    return out


def display_summary(summary: Sequence[list], label_col: int,
                    formats: Dict[int, Callable[[Optional[float], Optional[float]], str]]) -> List[list]:
    """Console rows ``mean ± std`` from the output of summary_rows"""
    display = []
    for mean_row, std_row in zip(summary[::2], summary[1::2]):
        row = []
        for i, value in enumerate(mean_row):
            if i == label_col:
                row.append(MEAN_STD)
            elif i in formats:
                row.append(formats[i](value, std_row[i]))
            else:
                row.append("-" if value is None else str(value))
        display.append(row)
    return display


def _pct(mean: Optional[float], std: Optional[float]) -> str:
    return fmt_mean_std(mean, std)


def _plain(mean: Optional[float], std: Optional[float]) -> str:
    return fmt_mean_std(mean, std, scale=1.0, digits=1)


def _value_at(record: RunRecord, metric: str, model: str, epoch: int) -> Optional[float]:
    for e, v in record.series(metric, model):
        if e == epoch:
            return v
    return None


def _last(record: RunRecord, metric: str, model: str) -> Optional[float]:
    points = record.series(metric, model)
    return points[-1][1] if points else None


def _drop(before: Optional[float], after: Optional[float]) -> Optional[float]:
    if before is None or after is None:
        return None
    return before - after


def ablate_bootstrap(run_config, seeds, threads, store, out_dir, console) -> None:
    if run_config.bootstrap.decay not in run_config.ema.decays:
        raise ConfigError("must be one of ema.decays", "training.bootstrap_decay")
    data = prepare_data(run_config)
    pairs = run_seeds(lambda s: bootstrap_ablation(run_config, s, data), seeds, threads)
    header = ["seed", "final_val_acc_unswapped", "final_val_acc_swapped",
              "best_ema_val_acc_unswapped", "best_ema_val_acc_swapped"]
    rows = []
    for pair in pairs:
        plain, swapped = pair.reference.record, pair.variant.record
        rows.append([pair.seed, final_val_acc(plain), final_val_acc(swapped),
                     best_ema_val_acc(plain), best_ema_val_acc(swapped)])
    values = range(1, 5)
    summary = summary_rows(rows, 0, (), values)
    store.write_table("bootstrap", header, rows + summary, out_dir)
    display = [[str(r[0])] + [fmt_pct(v) for v in r[1:]] for r in rows]
    display += display_summary(summary, 0, {i: _pct for i in values})
    console.print(comparison_table("Bootstrap ablation (val acc %)", header, display))


def ablate_constant_lr(run_config, seeds, threads, store, out_dir, console) -> None:
    if not run_config.has_noise:
        raise ConfigError("the constant_lr ablation needs label noise", "noise.rate")
    data = prepare_data(run_config)
    pairs = run_seeds(lambda s: constant_lr_ablation(run_config, s, data), seeds, threads)
    header = ["seed", "freeze_epoch", "decay", "cosine_at_freeze", "cosine_final", "cosine_drop",
              "constant_at_freeze", "constant_final", "constant_drop"]
    rows = []
    for pair in pairs:
        verdict = pair.reference.record.verdicts[BEST_VAL_ACC]
        key = ema_key(verdict.decay)
        row = [pair.seed, verdict.epoch, verdict.decay]
        for result in (pair.reference, pair.variant):
            at_freeze = _value_at(result.record, "val_acc_clean", key, verdict.epoch)
            final = _last(result.record, "val_acc_clean", key)
            row += [at_freeze, final, _drop(at_freeze, final)]
        rows.append(row)
    values = range(3, 9)
    summary = summary_rows(rows, 0, (), [1, *values])
    store.write_table("constant_lr", header, rows + summary, out_dir)
    display = [[str(r[0]), str(r[1]), str(r[2])] + [fmt_pct(v) for v in r[3:]] for r in rows]
    display += display_summary(summary, 0, {1: _plain, **{i: _pct for i in values}})
    console.print(comparison_table("Constant lr after stopping (EMA clean val acc %)", header, display))


def ablate_bn_policy(run_config, seeds, threads, store, out_dir, console) -> None:
    data = prepare_data(run_config)
    outcomes = run_seeds(lambda s: bn_policy_ablation(run_config, s, data), seeds, threads)
    header = ["seed", "decay", "policy", "final_val_acc", "best_val_acc", "best_epoch"]
    rows = [[r.seed, r.decay, r.policy.value, r.final_val_acc, r.best_val_acc, r.best_epoch]
            for _, policy_rows in outcomes for r in policy_rows]
    summary = summary_rows(rows, 0, (1, 2), (3, 4, 5))
    store.write_table("bn_policy", header, rows + summary, out_dir)

    warmup = run_config.schedule.warmup_epochs
    wins = []
    for seed, (result, _) in zip(seeds, outcomes):
        for decay in run_config.ema.decays:
            wins.append([seed, decay, recompute_win_fraction(result.record, decay, warmup)])
    store.write_table("bn_policy_wins", ["seed", "decay", "recompute_win_fraction"],
                      wins + summary_rows(wins, 0, (1,), (2,)), out_dir)

    display = [[str(r[0]), str(r[1]), r[2], fmt_pct(r[3]), fmt_pct(r[4]),
                "-" if r[5] is None else str(r[5])] for r in rows]
    display += display_summary(summary, 0, {3: _pct, 4: _pct, 5: _plain})
    console.print(comparison_table("BN statistics policy (val acc %)", header, display))


def ablate_lr_sweep(config, run_config, seeds, threads, store, out_dir, console) -> None:
    lrs = list(config.sweep.lrs)
    rows = lr_sweep(run_config, lrs, seeds, threads)
    header = ["lr", "seed", "baseline_best_val_acc", "ema_best_val_acc", "diverged"]
    table = [[r.lr, r.seed, r.baseline_best, r.ema_best, r.diverged] for r in rows]
    summary = summary_rows(table, 1, (0,), (2, 3))
    for mean_row in summary[::2]:
        mean_row[4] = sum(1 for r in rows if r.lr == mean_row[0] and r.diverged)
    store.write_table("lr_sweep", header, table + summary, out_dir)
    winners = sweep_argmax(rows)
    store.write_table("lr_sweep_argmax", ["seed", "baseline_lr", "ema_lr"],
                      [[seed, b, e] for seed, (b, e) in winners.items()], out_dir)

    display = [[fmt_num(r.lr), str(r.seed),
                "diverged" if r.diverged else fmt_pct(r.baseline_best),
                "diverged" if r.diverged else fmt_pct(r.ema_best), str(r.diverged)] for r in rows]
    for row in display_summary(summary, 1, {2: _pct, 3: _pct}):
        row[0] = fmt_num(float(row[0]))
        display.append(row)
    console.print(comparison_table("Learning-rate sweep (best val acc %)", header, display))


def run_ablate(kind: str, config: Config, console: Console) -> int:
    """Dispatch one ablation and write its tables under ``<experiment>/ablate_<kind>/``"""
    if kind not in KINDS:
        raise ConfigError(f"unknown ablation {kind!r}; expected one of {', '.join(KINDS)}")
    run_config = config.to_run_config()
    store = RunStore(config.experiment.out_dir, config.experiment.name)
    out_dir = store.experiment_dir / f"ablate_{kind}"
    seeds = list(run_config.seeds)
    threads = config.threads
    logger.info(f"Ablation {kind} over seeds {seeds}")

    if kind == "bootstrap":
        ablate_bootstrap(run_config, seeds, threads, store, out_dir, console)
    elif kind == "constant_lr":
        ablate_constant_lr(run_config, seeds, threads, store, out_dir, console)
    elif kind == "bn_policy":
        ablate_bn_policy(run_config, seeds, threads, store, out_dir, console)
    else:
        ablate_lr_sweep(config, run_config, seeds, threads, store, out_dir, console)
    return EXIT_OK
