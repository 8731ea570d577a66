"""Delimited outputs: per-epoch metrics, membership-inference tables, text report.

Floats are written with ``repr`` (shortest round-tripping form) so the files
are byte-stable; missing values are empty fields.
"""

from __future__ import annotations

import csv
import io
import math
from typing import Iterable, Sequence

import numpy as np

from .mia import MIAReport
from .trainer import EpochRecord

METRIC_COLUMNS = ("epoch", "regime", "train_acc", "test_acc", "adv_acc", "train_loss", "test_loss", "epsilon")
MIA_COLUMNS = ("regime", "scope", "group", "accuracy", "precision", "recall", "f1", "threshold",
               "n_members", "n_nonmembers")


def smooth(series: Sequence[float], window: int = 10) -> list[float]:
    """Trailing running mean; the first ``window-1`` points average what is available."""
    if window < 1:
        raise ValueError("window must be >= 1")
    values = np.asarray(series, dtype=np.float64)
    if window == 1:
        return values.tolist()
    return [float(np.mean(values[max(0, i - window + 1):i + 1])) for i in range(len(values))]


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return repr(value)
    return str(value)


def _csv(rows: Iterable[Sequence], header: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) for v in row])
    return buf.getvalue()


def metric_rows(regime: str, history: list[EpochRecord], window: int = 1):
    cols = {name: [getattr(r, name) for r in history]
            for name in ("train_acc", "test_acc", "adv_acc", "train_loss", "test_loss", "epsilon")}
    if window > 1:
        for name, values in cols.items():
            if name == "epsilon" or any(v is None for v in values):
                continue
            cols[name] = smooth(values, window)
    for i, rec in enumerate(history):
        yield [rec.epoch, regime] + [cols[name][i] for name in METRIC_COLUMNS[2:]]


def metrics_csv(histories: dict[str, list[EpochRecord]], window: int = 1) -> str:
    rows = []
    for regime, history in histories.items():
        rows.extend(metric_rows(regime, history, window))
    return _csv(rows, METRIC_COLUMNS)


def mia_row(regime: str, scope: str, group, report: MIAReport):
    return [regime, scope, group, report.accuracy, report.precision, report.recall, report.f1,
            report.threshold, report.n_members, report.n_nonmembers]


def mia_csv(rows: list[list]) -> str:
    return _csv(rows, MIA_COLUMNS)


def text_report(summary: dict) -> str:
    """Plain-text summary: one block per regime."""
    lines = [f"dpadv report  seed={summary['seed']}  epochs={summary['epochs']}"]
    if summary.get("noise_multiplier") is not None:
        lines.append(f"noise_multiplier={summary['noise_multiplier']!r}  "
                     f"sample_rate={summary['sample_rate']!r}  delta={summary['delta']!r}")
    for regime, block in summary["regimes"].items():
        last = block["last"]
        lines.append("")
        lines.append(f"[{regime}]")
        lines.append(f"  train_acc {fmt(last.train_acc)}  test_acc {fmt(last.test_acc)}  "
                     f"adv_acc {fmt(last.adv_acc)}  epsilon {fmt(last.epsilon)}")
        r = block["individual"]
        lines.append(f"  mia accuracy {r.accuracy:.4f}  precision {r.precision:.4f}  "
                     f"recall {r.recall:.4f}  f1 {r.f1:.4f}  threshold {fmt(r.threshold)}")
        for scope in ("class", "perturbed_class"):
            groups = block.get(scope)
            if groups:
                accs = "  ".join(f"{c}:{g.accuracy:.4f}" for c, g in sorted(groups.items()))
                lines.append(f"  {scope} mia  {accs}")
    return "\n".join(lines) + "\n"
