"""Distribution comparisons, metric tables and ID/OOD degradation reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from crossalign import imgio
from crossalign.errors import ValidationError
from crossalign.imgio import CHANNELS
from crossalign.metrics import METRIC_NAMES, MetricReport


@dataclass
class DistributionComparison:
    target: np.ndarray  # (3, 256) frequencies
    before: np.ndarray
    after: np.ndarray

    @property
    def before_distance(self) -> np.ndarray:
        return l1_distance(self.target, self.before)

    @property
    def after_distance(self) -> np.ndarray:
        return l1_distance(self.target, self.after)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["channel", "bin", "target_freq", "before_freq", "after_freq"])
        for c, name in enumerate(CHANNELS):
            for b in range(256):
                writer.writerow(
                    [name, b, f"{self.target[c, b]:.10f}", f"{self.before[c, b]:.10f}", f"{self.after[c, b]:.10f}"]
                )
        return buf.getvalue()

    def summary(self) -> dict:
        return {
            name: {"before_distance": float(self.before_distance[c]), "after_distance": float(self.after_distance[c])}
            for c, name in enumerate(CHANNELS)
        }


@dataclass(frozen=True)
class DegradationRow:
    method: str
    metric: str
    id_value: float
    ood_value: float
    percent_change: float | None  # None when the in-distribution value is 0

    @property
    def undefined(self) -> bool:
        return self.percent_change is None


def l1_distance(p: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Per-row L1 distance between frequency histograms (0 to 2)."""
    return np.abs(np.asarray(p) - np.asarray(q)).sum(axis=-1)


def channel_histograms(directory: str | Path) -> np.ndarray:
    """Per-channel counts aggregated over every image in ``directory``."""
    paths = imgio.list_images(directory)
    if not paths:
        raise ValidationError(f"{directory}: no images")
    counts = np.zeros((3, 256), dtype=np.int64)
    for path in paths:
        raster = imgio.load_rgb(path)
        for c in range(3):
            counts[c] += imgio.histogram(raster[:, :, c])
    return counts


def _normalize(counts: np.ndarray) -> np.ndarray:
    return counts / counts.sum(axis=1, keepdims=True)


def distribution_compare(target_dir, before_dir, after_dir) -> DistributionComparison:
    return DistributionComparison(
        target=_normalize(channel_histograms(target_dir)),
        before=_normalize(channel_histograms(before_dir)),
        after=_normalize(channel_histograms(after_dir)),
    )


def write_distribution(comparison: DistributionComparison, csv_path: str | Path, json_path: str | Path) -> None:
    Path(csv_path).write_text(comparison.to_csv())
    Path(json_path).write_text(json.dumps(comparison.summary(), indent=2, sort_keys=True) + "\n")


def metric_table(reports: list[tuple[str, MetricReport]]) -> str:
    """CSV with one row per stem (sorted), 4 decimals, and a trailing MEAN row."""
    if not reports:
        raise ValidationError("metric_table needs at least one report")
    rows = sorted(reports, key=lambda item: item[0])
    values = np.array([r.values() for _, r in rows], dtype=np.float64)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["stem", *METRIC_NAMES])
    for (stem, _), row in zip(rows, values):
        writer.writerow([stem, *(f"{v:.4f}" for v in row)])
    writer.writerow(["MEAN", *(f"{v:.4f}" for v in values.mean(axis=0))])
    return buf.getvalue()


def read_mean_row(path: str | Path) -> dict[str, float]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty table") from None
        if header != ["stem", *METRIC_NAMES]:
            raise ValidationError(f"{path}: unexpected header {header}")
        for row in reader:
            if row and row[0] == "MEAN":
                if len(row) != len(METRIC_NAMES) + 1:
                    raise ValidationError(f"{path}: MEAN row has {len(row)} fields")
                try:
                    return dict(zip(METRIC_NAMES, (float(v) for v in row[1:])))
                except ValueError as exc:
                    raise ValidationError(f"{path}: malformed MEAN row") from exc
    raise ValidationError(f"{path}: missing MEAN row")


def percent_change(id_value: float, ood_value: float) -> float | None:
    if id_value == 0:
        return None
    # + 0.0 folds -0.0 (negative id, no change) into 0.0
    return (ood_value - id_value) / id_value * 100.0 + 0.0


def degradation_report(id_table, ood_table, method: str = "method") -> list[DegradationRow]:
    """Percent change of each metric's MEAN from the ID table to the OOD table."""
    id_means = read_mean_row(id_table)
    ood_means = read_mean_row(ood_table)
    return [
        DegradationRow(method, name, id_means[name], ood_means[name], percent_change(id_means[name], ood_means[name]))
        for name in METRIC_NAMES
    ]


def degradation_csv(rows: list[DegradationRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["method", "metric", "id", "ood", "percent_change"])
    for row in rows:
        change = "undefined" if row.undefined else f"{row.percent_change:.4f}"
        writer.writerow([row.method, row.metric, f"{row.id_value:.4f}", f"{row.ood_value:.4f}", change])
    return buf.getvalue()
