"""Bootstrap confidence intervals, interval-overlap tests and GUM display rounding."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from enum import Enum
from fractions import Fraction
from typing import Sequence

import numpy as np

from . import rng
from .errors import EmptyCategory, MetricMismatch, TooFewDesigns
from .metrics_core import (
    DECOMPOSABLE,
    DEFAULT_EPS,
    DesignData,
    design_stats,
    metric_value,
    physical_prediction,
    stats_matrix,
    weighted_metrics,
)

MIN_REPLICATES = 100
STRATUM_ORDER = ("F", "E", "N", "U")
DEFAULT_METRICS = ("mse", "mae", "rmse", "r2", "rel_l2", "max_error")
_CHUNK = 256  # replicates per weighted-sum block


@dataclass(frozen=True)
class BootstrapConfig:
    B: int = 2000
    confidence: float = 0.95
    master_seed: int = 0
    stratify_by_category: bool = True
    unit: str = "design"  # "design" resamples whole geometries, "point" resamples single points
    store_replicates: bool = True
    max_stored_values: int = 10_000_000
    check_strata: bool = False  # assert exact per-category counts in every replicate

    def __post_init__(self):
        if self.B < 2:
            raise ValueError("B must be at least 2")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if self.unit not in ("design", "point"):
            raise ValueError(f"unknown resampling unit {self.unit!r}")

    @property
    def alpha(self) -> Fraction:
        return 1 - Fraction(str(self.confidence))


def ci_indices(B: int, confidence: float = 0.95) -> tuple[int, int]:
    """0-based positions of the CI bounds in the sorted replicate array."""
    alpha = 1 - Fraction(str(confidence))
    return math.floor(alpha / 2 * B), math.floor((1 - alpha / 2) * B)


@dataclass
class BootstrapSummary:
    metric_name: str
    mean: float
    std: float
    ci_lower: float
    ci_upper: float
    B: int = 0
    confidence: float = 0.95
    point_estimate: float | None = None
    replicate_values: np.ndarray | None = None
    display: str = ""

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_upper - self.ci_lower)

    @classmethod
    def from_half_width(cls, metric_name: str, mean: float, half_width: float) -> "BootstrapSummary":
        return cls(metric_name, mean, half_width, mean - half_width, mean + half_width)

    def to_dict(self, include_replicates: bool = True) -> dict:
        doc = {
            "metric": self.metric_name,
            "mean": _finite(self.mean),
            "std": _finite(self.std),
            "ci_lower": _finite(self.ci_lower),
            "ci_upper": _finite(self.ci_upper),
            "B": self.B,
            "confidence": self.confidence,
            "point_estimate": _finite(self.point_estimate),
            "display": self.display,
        }
        if include_replicates and self.replicate_values is not None:
            doc["replicates"] = [_finite(v) for v in self.replicate_values.tolist()]
        return doc


def _finite(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def summarize(metric_name: str, theta, confidence: float = 0.95) -> BootstrapSummary:
    """Mean, std (B-1 denominator) and percentile CI of replicate values."""
    theta = np.asarray(theta, dtype=np.float64)
    B = len(theta)
    if np.all(theta == theta[0]):
        mean, std = float(theta[0]), 0.0
    else:
        mean = math.fsum(theta.tolist()) / B
        std = math.sqrt(math.fsum(((theta - mean) ** 2).tolist()) / (B - 1))
    ordered = np.sort(theta)
    lo, hi = ci_indices(B, confidence)
    return BootstrapSummary(metric_name, mean, std, float(ordered[lo]), float(ordered[hi]), B, confidence)


def strata_of(categories: Sequence[str], stratify: bool) -> list[np.ndarray]:
    """Unit positions grouped per stratum, in the fixed F, E, N, U order."""
    categories = [str(c) if c else "U" for c in categories]
    if not stratify:
        return [np.arange(len(categories))]
    order = list(STRATUM_ORDER) + sorted(set(categories) - set(STRATUM_ORDER))
    cats = np.array(categories)
    return [np.flatnonzero(cats == c) for c in order if np.any(cats == c)]


def replicate_draws(strata: Sequence[np.ndarray], b: int, master_seed: int) -> np.ndarray:
    """Unit positions drawn for replicate ``b`` (1-based), with replacement per stratum."""
    gen = rng.generator(master_seed, "bootstrap", b)
    parts = [members[gen.integers(0, len(members), size=len(members))] for members in strata]
    return np.concatenate(parts)


def _draw_all(strata, B, config: BootstrapConfig, n_units: int) -> np.ndarray:
    draws = np.empty((B, n_units), dtype=np.int64)
    for b in range(1, B + 1):
        draws[b - 1] = replicate_draws(strata, b, config.master_seed)
    if config.check_strata:
        for row in draws:
            for members in strata:
                assert np.isin(row, members).sum() == len(members), "stratum count changed"
    return draws


def bootstrap_from_draws(
    designs: Sequence[DesignData],
    metrics: Sequence[str],
    draws: np.ndarray,
    stats=None,
    eps: float = DEFAULT_EPS,
    unit: str = "design",
) -> dict:
    """Replicate values theta^(b) for given resampling draws.

    ``draws[b]`` lists the resampled units (design positions in id order, or
    point positions in the pooled array for ``unit='point'``); a unit drawn k
    times contributes k copies of its points.
    """
    designs = sorted(designs, key=lambda d: d.design_id)
    draws = np.asarray(draws, dtype=np.int64)
    ys = [np.asarray(d.truth, dtype=np.float64) for d in designs]
    yhs = [physical_prediction(d.design_id, d.prediction, stats) for d in designs]
    if unit == "design":
        matrix = stats_matrix(design_stats(designs, stats))
    else:
        y_all, yh_all = np.concatenate(ys), np.concatenate(yhs)
        matrix = _point_matrix(y_all, yh_all)
    n_units = len(matrix)
    out = {}
    decomposable = [m for m in metrics if m in DECOMPOSABLE]
    if decomposable:
        cols = {m: np.empty(len(draws)) for m in decomposable}
        for start in range(0, len(draws), _CHUNK):
            block = draws[start:start + _CHUNK]
            W = np.zeros((len(block), n_units))
            for r, row in enumerate(block):
                W[r] = np.bincount(row, minlength=n_units)
            values = weighted_metrics(matrix, W, decomposable)
            for m in decomposable:
                cols[m][start:start + len(block)] = values[m]
        out.update(cols)
    for m in metrics:
        if m in out:
            continue
        theta = np.empty(len(draws))
        for b, row in enumerate(draws):
            if unit == "design":
                y = np.concatenate([ys[i] for i in row])
                yh = np.concatenate([yhs[i] for i in row])
            else:
                y, yh = y_all[row], yh_all[row]
            theta[b] = metric_value(m, y, yh, eps)
        out[m] = theta
    return {m: out[m] for m in metrics}


def _point_matrix(y: np.ndarray, y_hat: np.ndarray) -> np.ndarray:
    err = np.abs(y_hat - y)
    return np.column_stack(
        [np.ones_like(y), err, err ** 2, y, np.zeros_like(y), y ** 2, np.abs(y), err]
    )


def bootstrap_metrics(
    designs: Sequence[DesignData],
    metrics: Sequence[str] = DEFAULT_METRICS,
    config: BootstrapConfig = BootstrapConfig(),
    stats=None,
    eps: float = DEFAULT_EPS,
    expected_categories: Sequence[str] | None = None,
) -> dict:
    """Paired stratified bootstrap; every metric sees the same B replicates.

    Returns ``{metric: BootstrapSummary}``.  Replicate ``b`` uses its own
    generator keyed by ``(master_seed, b)``, so results do not depend on how
    replicates are scheduled.
    """
    designs = sorted(designs, key=lambda d: d.design_id)
    if len(designs) < 2:
        raise TooFewDesigns(f"bootstrap needs at least 2 designs, got {len(designs)}")
    if config.stratify_by_category and expected_categories:
        present = {str(d.category) for d in designs}
        for cat in expected_categories:
            if str(cat) not in present:
                raise EmptyCategory(f"no test designs in stratum {cat}")
    if config.unit == "design":
        categories = [d.category for d in designs]
    else:
        categories = [d.category for d in designs for _ in range(len(d.truth))]
    strata = strata_of(categories, config.stratify_by_category)
    draws = _draw_all(strata, config.B, config, len(categories))
    thetas = bootstrap_from_draws(designs, metrics, draws, stats, eps, config.unit)
    keep = config.store_replicates and config.B * len(metrics) <= config.max_stored_values
    point = _point_estimates(designs, metrics, stats, eps)
    out = {}
    for m in metrics:
        summary = summarize(m, thetas[m], config.confidence)
        summary.point_estimate = point[m]
        summary.replicate_values = thetas[m] if keep else None
        out[m] = summary
    return out


def bootstrap_metric(designs, metric: str, config: BootstrapConfig = BootstrapConfig(), stats=None, eps=DEFAULT_EPS):
    return bootstrap_metrics(designs, [metric], config, stats, eps)[metric]


def _point_estimates(designs, metrics, stats, eps) -> dict:
    y = np.concatenate([np.asarray(d.truth, dtype=np.float64) for d in designs])
    yh = np.concatenate([physical_prediction(d.design_id, d.prediction, stats) for d in designs])
    out = {}
    for m in metrics:
        try:
            out[m] = metric_value(m, y, yh, eps)
        except Exception:
            out[m] = None
    return out


# ---------------------------------------------------------------------------
# significance
# ---------------------------------------------------------------------------


class Significance(str, Enum):
    SEPARATED = "Separated"
    OVERLAPPING = "Overlapping"


def significance_by_overlap(a: BootstrapSummary, b: BootstrapSummary) -> Significance:
    if a.metric_name != b.metric_name:
        raise MetricMismatch(f"{a.metric_name} vs {b.metric_name}")
    if a.ci_upper < b.ci_lower or b.ci_upper < a.ci_lower:
        return Significance.SEPARATED
    return Significance.OVERLAPPING


# ---------------------------------------------------------------------------
# GUM rounding
# ---------------------------------------------------------------------------

PLUS_MINUS = " ± "


def _decimal(x: float) -> Decimal:
    return Decimal(repr(float(x)))


def uncertainty_place(u: float) -> int | None:
    """Power of ten of the last kept digit when ``u`` is rounded to 2 significant digits."""
    if u is None or u == 0 or not math.isfinite(u):
        return None
    if u < 0:
        raise ValueError("uncertainty must be >= 0")
    d = _decimal(u)
    place = d.adjusted() - 1
    q = d.quantize(Decimal(1).scaleb(place), rounding=ROUND_HALF_UP)
    if q.adjusted() > d.adjusted():  # e.g. 0.0999 -> 0.10
        place += 1
    return place


def format_at(x: float, place: int) -> str:
    if x is None:
        return "—"
    if not math.isfinite(x):
        return str(float(x))
    s = format(_decimal(x).quantize(Decimal(1).scaleb(place), rounding=ROUND_HALF_UP), "f")
    if s.startswith("-") and Decimal(s) == 0:
        s = s[1:]
    return s


def gum_round(mean: float, uncertainty: float, default_precision: int = 3) -> tuple[str, str | None]:
    """Uncertainty to 2 significant digits, mean to the same decimal place.

    Zero uncertainty returns the mean at ``default_precision`` decimals and
    ``None`` for the uncertainty.
    """
    place = uncertainty_place(uncertainty)
    if place is None:
        return format_at(mean, -default_precision), None
    return format_at(mean, place), format_at(uncertainty, place)


def format_pair(mean_text: str, unc_text: str | None) -> str:
    return mean_text if unc_text is None else f"{mean_text}{PLUS_MINUS}{unc_text}"


def gum_display(mean: float, uncertainty: float, default_precision: int = 3) -> str:
    return format_pair(*gum_round(mean, uncertainty, default_precision))


def column_place(uncertainties: Sequence[float | None]) -> int | None:
    nonzero = [float(u) for u in uncertainties if u is not None and u > 0 and math.isfinite(u)]
    return uncertainty_place(max(nonzero)) if nonzero else None


def gum_round_column(
    pairs: Sequence[tuple[float | None, float | None]], default_precision: int = 3
) -> list[str]:
    """Display strings for one table column sharing a single decimal place.

    The place comes from the largest uncertainty in the column after rounding
    it to two significant digits; every mean and uncertainty is rounded there.
    """
    place = column_place([u for _, u in pairs])
    out = []
    for mean, unc in pairs:
        if mean is None:
            out.append("—")
        elif place is None:
            out.append(format_at(mean, -default_precision))
        elif unc is None:
            out.append(format_at(mean, place))
        else:
            out.append(format_pair(format_at(mean, place), format_at(unc, place)))
    return out


def summary_json(summary: BootstrapSummary, config: BootstrapConfig, extra: dict | None = None) -> str:
    doc = {
        "config": {
            "B": config.B,
            "confidence": config.confidence,
            "master_seed": config.master_seed,
            "stratify_by_category": config.stratify_by_category,
            "unit": config.unit,
            "ci_indices": list(ci_indices(config.B, config.confidence)),
        },
        "summary": summary.to_dict(include_replicates=False),
    }
    if summary.replicate_values is not None:
        doc["replicates"] = [_finite(v) for v in summary.replicate_values.tolist()]
    if extra:
        doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False)
