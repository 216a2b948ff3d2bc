"""Confusion matrix, overall/average accuracy and Cohen's kappa."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, Sequence

import numpy as np

from .errors import DataError, EmptyReportError, ShapeError


@dataclass
class ConfusionMatrix:
    """``counts[g, p]``: pixels of groundtruth class g+1 predicted as p+1."""

    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return self.counts.shape[0]

    @property
    def total(self) -> int:
        return int(self.counts.sum())


@dataclass
class MetricsReport:
    oa: float
    aa: float
    kappa: float
    per_class: np.ndarray  # nan for classes absent from the groundtruth
    total_samples: int

    def as_rows(self):
        rows = [("oa", self.oa), ("aa", self.aa), ("kappa", self.kappa)]
        rows += [(f"class_{i + 1}", float(v)) for i, v in enumerate(self.per_class)]
        rows.append(("total_samples", self.total_samples))
        return rows


def _labels(x):
    return np.asarray(getattr(x, "labels", x))


def confusion(pred, gt, num_classes=None, pixels=None) -> ConfusionMatrix:
    """Count (groundtruth, prediction) pairs over labeled pixels.

    ``pixels`` optionally restricts the evaluation to the given flat indices
    (for instance a held-out test split); unlabeled pixels are always skipped.
    """
    p, g = _labels(pred), _labels(gt)
    if p.shape != g.shape:
        raise ShapeError(f"prediction {p.shape} and groundtruth {g.shape} differ in shape")
    p, g = p.ravel().astype(np.int64), g.ravel().astype(np.int64)
    if pixels is not None:
        p, g = p[pixels], g[pixels]
    keep = g > 0
    p, g = p[keep], g[keep]
    if np.any(p < 1):
        raise DataError("prediction leaves labeled pixels unassigned")
    if num_classes is None:
        num_classes = int(max(g.max(initial=0), p.max(initial=0)))
    counts = np.bincount((g - 1) * num_classes + (p - 1), minlength=num_classes * num_classes)
    return ConfusionMatrix(counts.reshape(num_classes, num_classes))


def report(cm: ConfusionMatrix) -> MetricsReport:
    counts = np.asarray(cm.counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise EmptyReportError("no labeled pixels to evaluate")
    diag = np.diag(counts)
    row = counts.sum(axis=1)
    col = counts.sum(axis=0)
    oa = diag.sum() / total
    present = row > 0
    per_class = np.full(len(row), np.nan)
    per_class[present] = diag[present] / row[present]
    aa = per_class[present].mean()
    p_e = float((row / total) @ (col / total))
    if np.isclose(p_e, 1.0, rtol=0, atol=1e-15):
        kappa = 1.0 if oa == 1.0 else 0.0
    else:
        kappa = (oa - p_e) / (1.0 - p_e)
    return MetricsReport(float(oa), float(aa), float(kappa), per_class, int(total))


def evaluate(pred, gt, pixels=None, num_classes=None) -> MetricsReport:
    return report(confusion(pred, gt, num_classes=num_classes, pixels=pixels))


# -- serialization -------------------------------------------------------------


def write_report_csv(rep: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "value"])
        for name, value in rep.as_rows():
            writer.writerow([name, value])


def format_table(rep: MetricsReport, title="DML-CRF") -> str:
    """Plain-text table: OA and AA in percent, kappa as a fraction."""
    lines = [f"{'':<10}{title:>16}", f"{'OA(%)':<10}{100 * rep.oa:>16.2f}",
             f"{'AA(%)':<10}{100 * rep.aa:>16.2f}", f"{'kappa':<10}{rep.kappa:>16.4f}"]
    for i, v in enumerate(rep.per_class):
        lines.append(f"{'class ' + str(i + 1):<10}{100 * v:>16.2f}")
    return "\n".join(lines) + "\n"


def aggregate(reports: Sequence[MetricsReport]) -> Dict[str, tuple]:
    """Mean and sample standard deviation (n-1) of each metric across runs."""
    if not reports:
        raise EmptyReportError("no runs to aggregate")
    out = {}
    for name in ("oa", "aa", "kappa"):
        vals = np.array([getattr(r, name) for r in reports])
        std = float(vals.std(ddof=1)) if len(vals) > 1 else 0.0
        out[name] = (float(vals.mean()), std)
    return out


def write_aggregate_csv(stats: Dict[str, tuple], runs: int, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "mean", "std", "runs"])
        for name, (mean, std) in stats.items():
            writer.writerow([name, mean, std, runs])


def format_aggregate_table(stats: Dict[str, tuple], title="DML-CRF") -> str:
    oa, aa, kappa = stats["oa"], stats["aa"], stats["kappa"]
    return (f"{'':<10}{title:>20}\n"
            f"{'OA(%)':<10}{f'{100 * oa[0]:.2f}±{100 * oa[1]:.2f}':>20}\n"
            f"{'AA(%)':<10}{f'{100 * aa[0]:.2f}±{100 * aa[1]:.2f}':>20}\n"
            f"{'kappa':<10}{f'{kappa[0]:.4f}±{kappa[1]:.4f}':>20}\n")
