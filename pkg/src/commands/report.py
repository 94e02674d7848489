"""report: consolidate an experiment directory into comma-separated tables"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

from rich.console import Console

from ..constants import EXIT_OK
from ..core.averaging import period_equivalence
from ..core.metrics import EceConfig, MetricsCalculator, PredictionSet
from ..database.run_store import RunStore
from ..exceptions import InputError
from ..harness.experiments import (ChurnSummary, best_ema_envelope, decay_sensitivity,
                                   effect_summary, memorization_curve, noisy_accuracy_at_clean,
                                   pairwise_consistency, stopping_fraction)
from ..harness.trainer import BASELINE, PreparedData, prepare_data
from ..utils.config import Config
from .summary import comparison_table, fmt_mean_std, model_label

logger = logging.getLogger(__name__)

TABLE_MODELS = ("baseline", "ema_acc_recomputed", "ema_loss_recomputed", "swa_recomputed")
MATCHED_CLEAN_ACC = 0.9


@dataclass
class ModelScore:
    seed: int
    model: str
    accuracy: float
    loss: float
    ece: float
    temperature: Optional[float] = None
    ece_scaled: Optional[float] = None


@dataclass
class ReportData:
    scores: List[ModelScore] = field(default_factory=list)
    test_predictions: Dict[str, Dict[int, PredictionSet]] = field(default_factory=dict)


def _load_data(store: RunStore, seed: int, cache: Dict[str, PreparedData]) -> tuple:
    config = Config(str(store.config_path(seed)))
    key = repr(sorted((k, v) for k, v in config.to_dict().items() if k != "experiment"))
    if key not in cache:
        cache[key] = prepare_data(config.to_run_config())
    return config, cache[key]


def score_seed(store: RunStore, seed: int, config: Config, data: PreparedData,
               report: ReportData) -> None:
    """Test metrics of every checkpoint of one seed; dumps test predictions"""
    ece_cfg = EceConfig(config.ece.n_bins, config.ece.binning)
    for model in store.list_checkpoints(seed):
        network, _ = store.load_checkpoint(seed, model)
        logits = network.predict_logits(data.test.features)
        store.save_predictions(seed, "test", model, logits, data.test.labels)
        preds = PredictionSet.from_logits(logits, data.test.labels, f"{model}-seed{seed}")
        accuracy, loss = MetricsCalculator.accuracy_nll(preds)
        score = ModelScore(seed, model, accuracy, loss, MetricsCalculator.ece_equal_mass(preds, ece_cfg))
        if store.has_predictions(seed, "val", model):
            val_logits, val_labels = store.load_predictions(seed, "val", model)
            holdout = PredictionSet.from_logits(val_logits, val_labels, f"{model}-seed{seed}-val")
            score.temperature, score.ece_scaled = MetricsCalculator.temperature_scale(holdout, preds, ece_cfg)
        report.scores.append(score)
        report.test_predictions.setdefault(model, {})[seed] = preds


def write_summary(store: RunStore, report: ReportData, seeds: List[int], console: Console) -> None:
    models = [m for m in TABLE_MODELS if m in report.test_predictions]
    header = ["seed"] + [f"{m}_{metric}" for m in models for metric in ("acc", "loss")]
    by_key = {(s.seed, s.model): s for s in report.scores}
    rows = []
    for seed in seeds:
        row = [seed]
        for m in models:
            s = by_key.get((seed, m))
            row += [s.accuracy if s else None, s.loss if s else None]
        rows.append(row)
    for label, pick in (("mean", 0), ("std", 1)):
        summary_row = [label]
        for i in range(1, len(header)):
            summary_row.append(effect_summary([r[i] for r in rows])[pick])
        rows.append(summary_row)
    store.write_table("summary", header, rows)

    display = []
    for m in models:
        accs = [by_key[(s, m)].accuracy for s in seeds if (s, m) in by_key]
        losses = [by_key[(s, m)].loss for s in seeds if (s, m) in by_key]
        eces = [by_key[(s, m)].ece for s in seeds if (s, m) in by_key]
        scaled = [by_key[(s, m)].ece_scaled for s in seeds if (s, m) in by_key]
        display.append([model_label(m), fmt_mean_std(*effect_summary(accs)),
                        fmt_mean_std(*effect_summary(losses), scale=1.0, digits=4),
                        fmt_mean_std(*effect_summary(eces)), fmt_mean_std(*effect_summary(scaled))])
    console.print(comparison_table("Test accuracy and loss",
                                   ["Model", "Acc (%)", "Loss", "ECE (×100)", "ECE+TS (×100)"], display))

    store.write_table("models", ["seed", "model", "test_acc", "test_loss", "ece", "temperature", "ece_scaled"],
                      [[s.seed, s.model, s.accuracy, s.loss, s.ece, s.temperature, s.ece_scaled]
                       for s in sorted(report.scores, key=lambda s: (s.seed, s.model))])


def write_churn(store: RunStore, report: ReportData, console: Console) -> None:
    pairs = []
    for model in sorted(report.test_predictions):
        predictions = report.test_predictions[model]
        if len(predictions) >= 2:
            pairs.extend(pairwise_consistency(model, predictions))
    summary = ChurnSummary(pairs)
    store.write_table("churn", ["model", "seed_a", "seed_b", "churn", "js"],
                      [[p.model, p.seed_a, p.seed_b, p.churn, p.js] for p in pairs])
    header = ["model", "churn_mean", "churn_std", "js_mean", "js_std", "pairs"]
    if not pairs:
        store.write_table("churn_summary", header, [["unavailable (needs >= 2 seeds)"]])
        console.print("[#f9e2af]Churn unavailable: needs at least 2 completed seeds[/]")
        return
    rows, display = [], []
    for model in summary.models:
        st = summary.stats(model)
        rows.append([model, st["churn_mean"], st["churn_std"], st["js_mean"], st["js_std"], st["pairs"]])
        display.append([model_label(model), fmt_mean_std(st["churn_mean"], st["churn_std"]),
                        fmt_mean_std(st["js_mean"], st["js_std"], digits=3), str(st["pairs"])])
    store.write_table("churn_summary", header, rows)
    console.print(comparison_table("Prediction churn across seeds (test)",
                                   ["Model", "Churn (%)", "JS (×100)", "Pairs"], display))


def write_record_tables(store: RunStore, seeds: List[int], config: Config) -> None:
    """Tables derived from the per-epoch records alone"""
    sensitivity, stopping, curves, memo, memo_at = [], [], [], [], []
    for seed in seeds:
        record = store.load_record(seed)
        if record.failed:
            continue
        for row in decay_sensitivity(record):
            sensitivity.append([seed, row.decay, row.best_val_acc, row.best_epoch,
                                row.best_val_acc_recomputed, row.best_epoch_recomputed])
        fractions = stopping_fraction(record)
        for criterion, verdict in sorted(record.verdicts.items()):
            stopping.append([seed, criterion, verdict.epoch, verdict.decay, verdict.value,
                             fractions[criterion]])
        envelope = dict(best_ema_envelope(record))
        for entry in record:
            curves.append([seed, entry.epoch, entry.lr, entry.val_acc.get(BASELINE),
                           envelope.get(entry.epoch)])
        if record.has_noise:
            for model, curve in memorization_curve(record).items():
                memo += [[seed, model, e, clean, noisy] for e, clean, noisy in curve]
                memo_at.append([seed, model, noisy_accuracy_at_clean(curve, MATCHED_CLEAN_ACC)])

    store.write_table("decay_sensitivity", ["seed", "decay", "best_val_acc", "best_epoch",
                                            "best_val_acc_recomputed", "best_epoch_recomputed"], sensitivity)
    store.write_table("stopping", ["seed", "criterion", "epoch", "decay", "value", "fraction"], stopping)
    store.write_table("curves", ["seed", "epoch", "lr", "baseline_val_acc", "best_ema_val_acc"], curves)
    if memo:
        store.write_table("memorization", ["seed", "model", "epoch", "clean_train_acc", "noisy_train_acc"], memo)
        store.write_table("memorization_at_clean",
                          ["seed", "model", f"noisy_train_acc_at_clean_{MATCHED_CLEAN_ACC}"], memo_at)

    period = config.get("ema", "period")
    store.write_table("period_equivalence", [f"decay_T{period}", "decay_T1"],
                      period_equivalence([d for d in config.get("ema", "decays") if d > 0], period, 1))


def run_report(experiment_dir: str, console: Console) -> int:
    """Regenerate every report table of an experiment directory"""
    store = RunStore.open(experiment_dir)
    seeds = store.list_seeds()
    if not seeds:
        raise InputError(f"no completed runs in {experiment_dir}")

    report = ReportData()
    cache: Dict[str, PreparedData] = {}
    completed = []
    config = None
    for seed in seeds:
        record = store.load_record(seed)
        if record.failed:
            logger.warning(f"seed {seed} failed ({record.diagnostic}); left out of the report")
            continue
        config, data = _load_data(store, seed, cache)
        score_seed(store, seed, config, data, report)
        completed.append(seed)
    if not completed:
        raise InputError(f"no completed runs in {experiment_dir}")

    write_summary(store, report, completed, console)
    write_churn(store, report, console)
    write_record_tables(store, completed, config)
    console.print(f"[#89b4fa]Report in {store.report_dir()}[/]")
    return EXIT_OK

