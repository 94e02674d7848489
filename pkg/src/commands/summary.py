"""Rich tables for per-model summaries and comparison results"""
from typing import Dict, Iterable, Optional, Sequence, Tuple

from rich.style import Style
from rich.table import Table
from rich.text import Text

from ..database.models import RunRecord

COLORS = {
    'accent': '#89b4fa',
    'good': '#a6e3a1',
    'bad': '#f38ba8',
    'warning': '#f9e2af',
    'label': '#6c7086',
    'value': '#cdd6f4',
    'header': '#cba6f7',
}

# Display names of the emitted models, in summary order
MODEL_LABELS = {
    'baseline': 'SGD',
    'ema_acc': 'EMA-acc',
    'ema_acc_recomputed': 'EMA-acc (BN recomputed)',
    'ema_loss': 'EMA-loss',
    'ema_loss_recomputed': 'EMA-loss (BN recomputed)',
    'swa': 'SWA',
    'swa_recomputed': 'SWA (BN recomputed)',
}


def fmt_pct(value: Optional[float], digits: int = 2) -> str:
    """Fraction in [0, 1] as a percentage"""
    if value is None:
        return "-"
    return f"{100.0 * value:.{digits}f}"


def fmt_num(value: Optional[float], digits: int = 4) -> str:
    if value is None:
        return "-"
    return f"{value:.{digits}f}"


def fmt_mean_std(mean: Optional[float], std: Optional[float], scale: float = 100.0,
                 digits: int = 2) -> str:
    """``mean ± std`` as in multi-seed result tables"""
    if mean is None:
        return "-"
    return f"{scale * mean:.{digits}f} ± {scale * (std or 0.0):.{digits}f}"


def model_label(key: str) -> str:
    return MODEL_LABELS.get(key, key)


def run_summary(record: RunRecord, scores: Dict[str, Tuple[Optional[float], Optional[float]]]) -> Table:
    """One line per emitted model: validation accuracy and loss

    Args:
        record: Run record (for its id, verdicts and failure state)
        scores: Model key -> (val acc, val loss)
    """
    table = Table(title=f"{record.run_id}", title_style=Style(color=COLORS['header'], bold=True))
    table.add_column("Model", style=Style(color=COLORS['label']))
    table.add_column("Val Acc (%)", justify="right")
    table.add_column("Val Loss", justify="right")
    table.add_column("Verdict", justify="right", style=Style(color=COLORS['label']))

    verdict_of = {'ema_acc': 'best_val_acc', 'ema_loss': 'lowest_val_loss'}
    baseline_acc = scores.get('baseline', (None, None))[0]
    for key in sorted(scores, key=_model_order):
        acc, loss = scores[key]
        color = COLORS['value']
        if baseline_acc is not None and acc is not None and key != 'baseline':
            color = COLORS['good'] if acc >= baseline_acc else COLORS['bad']
        verdict = record.verdicts.get(verdict_of.get(key.replace('_recomputed', ''), ''))
        note = f"epoch {verdict.epoch}, α={verdict.decay}" if verdict else ""
        table.add_row(model_label(key), Text(fmt_pct(acc), Style(color=color)), fmt_num(loss), note)

    if record.failed:
        table.caption = Text(f"FAILED: {record.diagnostic}", Style(color=COLORS['bad'], bold=True))
    return table


def _model_order(key: str) -> Tuple[int, str]:
    order = list(MODEL_LABELS)
    return (order.index(key) if key in order else len(order), key)


def comparison_table(title: str, header: Sequence[str], rows: Iterable[Sequence]) -> Table:
    """Generic right-aligned table; the first column is a row label"""
    table = Table(title=title, title_style=Style(color=COLORS['header'], bold=True))
    for i, name in enumerate(header):
        table.add_column(name, justify="left" if i == 0 else "right",
                         style=Style(color=COLORS['label']) if i == 0 else None)
    for row in rows:
        table.add_row(*[cell if isinstance(cell, Text) else str(cell) for cell in row])
    return table
