"""Empirical quantiles and QQ comparison of log-percentiles.

Quantiles interpolate linearly between order statistics (Hyndman-Fan type 7).
Values are clamped at ``eps`` before taking logs so zero volumes stay finite.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import EmptyDistributionError, EmptySelectionError, MissingMetricsError

if TYPE_CHECKING:
    from .cohort import CohortManifest

DEFAULT_EPS_ML = 1e-4
DEFAULT_NUM_POINTS = 99
METRIC_UNITS = {"fpv_ml": "mL", "fnv_ml": "mL", "dice": "", "loss": ""}


@dataclass(frozen=True)
class DistributionSummary:
    sorted_values: tuple[float, ...]
    units: str = ""

    def __post_init__(self):
        vals = tuple(float(v) for v in self.sorted_values)
        if any(b < a for a, b in zip(vals, vals[1:])):
            raise ValueError("sorted_values must be ascending; use from_values()")
        object.__setattr__(self, "sorted_values", vals)

    @classmethod
    def from_values(cls, values: Iterable[float], units: str = "") -> DistributionSummary:
        return cls(tuple(sorted(float(v) for v in values)), units)

    @property
    def count(self) -> int:
        return len(self.sorted_values)

    @property
    def mean(self) -> float:
        return math.fsum(self.sorted_values) / self.count

    @property
    def median(self) -> float:
        return quantile(self, 0.5)


def quantile(dist: DistributionSummary, q: float) -> float:
    """Linear-interpolation quantile at level ``q`` in [0, 1]."""
    v = dist.sorted_values
    n = len(v)
    if n == 0:
        raise EmptyDistributionError("quantile of an empty distribution")
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"quantile level {q} outside [0, 1]")
    h = q * (n - 1)
    i = math.floor(h)
    if i >= n - 1:
        return v[-1]
    return v[i] + (h - i) * (v[i + 1] - v[i])


@dataclass(frozen=True)
class QQSeries:
    levels: tuple[float, ...]
    log_before: tuple[float, ...]
    log_after: tuple[float, ...]
    epsilon_clamp: float = DEFAULT_EPS_ML

    @property
    def points(self) -> list[tuple[float, float, float]]:
        return list(zip(self.levels, self.log_before, self.log_after))

    def fraction_below_identity(self) -> float:
        """Share of points where the second distribution is strictly smaller."""
        below = sum(1 for a, b in zip(self.log_before, self.log_after) if b < a)
        return below / len(self.levels)


def log_percentile_qq(
    before: DistributionSummary,
    after: DistributionSummary,
    num_points: int = DEFAULT_NUM_POINTS,
    eps: float = DEFAULT_EPS_ML,
) -> QQSeries:
    """Paired ``log(max(quantile, eps))`` at levels ``i / (num_points + 1)``."""
    if before.count == 0 or after.count == 0:
        raise EmptyDistributionError("both distributions need at least one value")
    if num_points < 2:
        raise ValueError("num_points must be >= 2")
    if not eps > 0:
        raise ValueError("eps must be positive")
    levels = tuple(i / (num_points + 1) for i in range(1, num_points + 1))
    lb = tuple(math.log(max(quantile(before, q), eps)) for q in levels)
    la = tuple(math.log(max(quantile(after, q), eps)) for q in levels)
    return QQSeries(levels, lb, la, eps)


@dataclass(frozen=True)
class MetricComparison:
    metric: str
    tracer: str
    series: QQSeries
    before: DistributionSummary
    after: DistributionSummary

    @property
    def mean_delta(self) -> float:
        return self.after.mean - self.before.mean

    @property
    def median_delta(self) -> float:
        return self.after.median - self.before.median

    def summary(self) -> dict:
        return {
            "metric": self.metric,
            "tracer": self.tracer,
            "n_before": self.before.count,
            "n_after": self.after.count,
            "mean_before": self.before.mean,
            "mean_after": self.after.mean,
            "mean_delta": self.mean_delta,
            "median_before": self.before.median,
            "median_after": self.after.median,
            "median_delta": self.median_delta,
            "fraction_below_identity": self.series.fraction_below_identity(),
            "eps": self.series.epsilon_clamp,
            "quantile_rule": "linear (type 7)",
        }


def _metric_values(manifest: CohortManifest, metric: str, tracer: str) -> list[float]:
    from .cohort import Tracer

    recs = [r for r in manifest if tracer == "ALL" or r.tracer is Tracer(tracer)]
    if not recs:
        raise EmptySelectionError(f"no {tracer} records in manifest")
    missing = [r.sample_id for r in recs if r.metrics is None]
    if missing:
        raise MissingMetricsError(missing, metric)
    return [float(getattr(r.metrics, metric)) for r in recs]


def compare_cohort_metric(
    before: CohortManifest,
    after: CohortManifest,
    metric: str = "fpv_ml",
    tracer: str = "PSMA",
    num_points: int = DEFAULT_NUM_POINTS,
    eps: float = DEFAULT_EPS_ML,
) -> MetricComparison:
    """QQ of one metric between two manifests restricted to a tracer.

    ``tracer`` is ``"FDG"``, ``"PSMA"`` or ``"ALL"`` (case-insensitive).
    """
    if metric not in METRIC_UNITS:
        raise ValueError(f"unknown metric {metric!r}; choose from {sorted(METRIC_UNITS)}")
    tracer = tracer.upper()
    units = METRIC_UNITS[metric]
    d_before = DistributionSummary.from_values(_metric_values(before, metric, tracer), units)
    d_after = DistributionSummary.from_values(_metric_values(after, metric, tracer), units)
    series = log_percentile_qq(d_before, d_after, num_points, eps)
    return MetricComparison(metric, tracer, series, d_before, d_after)


def write_qq_csv(series: QQSeries, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["quantile", "log_before", "log_after"])
        for q, a, b in series.points:
            writer.writerow([repr(q), repr(a), repr(b)])


def read_qq_csv(path) -> QQSeries:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return QQSeries(
        tuple(float(r["quantile"]) for r in rows),
        tuple(float(r["log_before"]) for r in rows),
        tuple(float(r["log_after"]) for r in rows),
    )


def render_qq_svg(series: QQSeries, title: str = "", size: int = 480) -> str:
    """Standalone SVG scatter of the QQ points with a dashed identity line."""
    margin = 48
    xs: Sequence[float] = series.log_before
    ys: Sequence[float] = series.log_after
    lo = min(min(xs), min(ys))
    hi = max(max(xs), max(ys))
    if hi - lo < 1e-12:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    lo, hi = lo - pad, hi + pad
    span = size - 2 * margin

    def px(v):
        return margin + (v - lo) / (hi - lo) * span

    def py(v):
        return size - margin - (v - lo) / (hi - lo) * span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
        f'<rect x="{margin}" y="{margin}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        f'<line x1="{px(lo):.2f}" y1="{py(lo):.2f}" x2="{px(hi):.2f}" y2="{py(hi):.2f}" '
        'stroke="red" stroke-dasharray="6,4" stroke-width="1.5"/>',
    ]
    for x, y in zip(xs, ys):
        parts.append(f'<circle cx="{px(x):.2f}" cy="{py(y):.2f}" r="2.5" fill="steelblue"/>')
    for tick in np.linspace(lo + pad, hi - pad, 5):
        parts.append(
            f'<text x="{px(tick):.2f}" y="{size - margin + 16}" font-size="10" '
            f'text-anchor="middle">{tick:.2f}</text>'
        )
        parts.append(
            f'<text x="{margin - 6}" y="{py(tick) + 3:.2f}" font-size="10" '
            f'text-anchor="end">{tick:.2f}</text>'
        )
    parts.append(
        f'<text x="{size / 2}" y="{size - 8}" font-size="12" text-anchor="middle">'
        "log quantile (before)</text>"
    )
    parts.append(
        f'<text x="14" y="{size / 2}" font-size="12" text-anchor="middle" '
        f'transform="rotate(-90 14 {size / 2})">log quantile (after)</text>'
    )
    if title:
        parts.append(f'<text x="{size / 2}" y="24" font-size="14" text-anchor="middle">{_escape(title)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
