"""Error metrics in physical units (kinematic pressure, m^2/s^2).

Scalar functions take a truth vector ``y`` and a prediction ``y_hat``.
Sums use ``math.fsum`` so pooled totals over hundreds of millions of points
keep their digits and do not depend on summation order.

Pooled metrics over several designs are built from per-design sufficient
statistics (:class:`DesignStats`); the same decomposition lets the
bootstrap evaluate thousands of replicates as weighted sums.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import (
    EmptyInput,
    LengthMismatch,
    MissingPrediction,
    ZeroNormTruth,
    ZeroVarianceTruth,
)
from .fields import FieldPrediction

DEFAULT_EPS = 1e-8  # m^2/s^2, denominator guard for median relative error
PERCENTILE_LEVELS = (50, 90, 95, 99)

UNITS = {
    "mae": "m2_per_s2",
    "mse": "m4_per_s4",
    "rmse": "m2_per_s2",
    "r2": "dimensionless",
    "rel_l2": "dimensionless",
    "rel_l1": "dimensionless",
    "max_error": "m2_per_s2",
    "median_rel_error": "dimensionless",
    "p50": "m2_per_s2",
    "p90": "m2_per_s2",
    "p95": "m2_per_s2",
    "p99": "m2_per_s2",
}

# metrics expressible through per-design sums
DECOMPOSABLE = ("mae", "mse", "rmse", "r2", "rel_l2", "rel_l1", "max_error")
POINTWISE = ("median_rel_error", "p50", "p90", "p95", "p99")
ALL_METRICS = DECOMPOSABLE + POINTWISE


class Resolution(str, Enum):
    SUBSAMPLED = "Subsampled"
    FULL_MESH = "FullMesh"


def _fsum(a: np.ndarray) -> float:
    return math.fsum(a.tolist())


def _pair(y, y_hat) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if len(y) != len(y_hat):
        raise LengthMismatch(f"truth has {len(y)} values, prediction {len(y_hat)}")
    if len(y) == 0:
        raise EmptyInput("metrics need at least one point")
    return y, y_hat


def mae(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return _fsum(np.abs(y_hat - y)) / len(y)


def mse(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return _fsum((y_hat - y) ** 2) / len(y)


def rmse(y, y_hat) -> float:
    return math.sqrt(mse(y, y_hat))


def r2(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    if len(y) < 2:
        raise EmptyInput("R^2 needs at least two points")
    y_bar = _fsum(y) / len(y)
    ss_tot = _fsum((y - y_bar) ** 2)
    if ss_tot == 0.0:
        raise ZeroVarianceTruth("R^2 undefined for constant truth")
    return 1.0 - _fsum((y - y_hat) ** 2) / ss_tot


def rel_l2(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    den = _fsum(y ** 2)
    if den == 0.0:
        raise ZeroNormTruth("relative L2 undefined for all-zero truth")
    return math.sqrt(_fsum((y_hat - y) ** 2) / den)


def rel_l1(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    den = _fsum(np.abs(y))
    if den == 0.0:
        raise ZeroNormTruth("relative L1 undefined for all-zero truth")
    return _fsum(np.abs(y_hat - y)) / den


def max_error(y, y_hat) -> float:
    y, y_hat = _pair(y, y_hat)
    return float(np.max(np.abs(y_hat - y)))


def percentile_errors(y, y_hat, levels: Sequence[float] = PERCENTILE_LEVELS) -> dict:
    """Percentiles of |y_hat - y|, linear interpolation between order statistics."""
    y, y_hat = _pair(y, y_hat)
    values = np.percentile(np.abs(y_hat - y), list(levels), method="linear")
    return {float(lv): float(v) for lv, v in zip(levels, values)}


def median_rel_error(y, y_hat, eps: float = DEFAULT_EPS) -> float:
    y, y_hat = _pair(y, y_hat)
    if eps < 0:
        raise ValueError("eps must be >= 0")
    return float(np.median(np.abs(y_hat - y) / (np.abs(y) + eps)))


def metric_value(name: str, y, y_hat, eps: float = DEFAULT_EPS) -> float:
    if name in ("p50", "p90", "p95", "p99"):
        return percentile_errors(y, y_hat, [float(name[1:])])[float(name[1:])]
    if name == "median_rel_error":
        return median_rel_error(y, y_hat, eps)
    return _SCALAR[name](y, y_hat)


_SCALAR = {
    "mae": mae,
    "mse": mse,
    "rmse": rmse,
    "r2": r2,
    "rel_l2": rel_l2,
    "rel_l1": rel_l1,
    "max_error": max_error,
}


# ---------------------------------------------------------------------------
# sufficient statistics
# ---------------------------------------------------------------------------

STAT_COLUMNS = ("n", "sum_abs_err", "sum_sq_err", "mean_y", "m2_y", "sum_sq_y", "sum_abs_y", "max_abs_err")


@dataclass(frozen=True)
class DesignStats:
    design_id: str
    category: str
    n: int
    sum_abs_err: float
    sum_sq_err: float
    mean_y: float
    m2_y: float  # sum of squared deviations from the design mean
    sum_sq_y: float
    sum_abs_y: float
    max_abs_err: float

    @classmethod
    def from_arrays(cls, design_id: str, category: str, y, y_hat) -> "DesignStats":
        y, y_hat = _pair(y, y_hat)
        err = np.abs(y_hat - y)
        mean_y = _fsum(y) / len(y)
        return cls(
            design_id,
            category,
            len(y),
            _fsum(err),
            _fsum(err ** 2),
            mean_y,
            _fsum((y - mean_y) ** 2),
            _fsum(y ** 2),
            _fsum(np.abs(y)),
            float(err.max()),
        )

    def row(self) -> list[float]:
        return [float(getattr(self, c)) for c in STAT_COLUMNS]


def stats_matrix(stats: Sequence[DesignStats]) -> np.ndarray:
    return np.array([s.row() for s in stats], dtype=np.float64).reshape(-1, len(STAT_COLUMNS))


def pooled_metrics(stats: Sequence[DesignStats]) -> dict:
    """Decomposable metrics over the concatenation of all designs' points."""
    stats = sorted(stats, key=lambda s: s.design_id)
    n = sum(s.n for s in stats)
    if n == 0:
        raise EmptyInput("no points to score")
    sum_abs = math.fsum(s.sum_abs_err for s in stats)
    sum_sq = math.fsum(s.sum_sq_err for s in stats)
    y_bar = math.fsum(s.n * s.mean_y for s in stats) / n
    ss_tot = math.fsum(s.m2_y + s.n * (s.mean_y - y_bar) ** 2 for s in stats)
    sum_sq_y = math.fsum(s.sum_sq_y for s in stats)
    sum_abs_y = math.fsum(s.sum_abs_y for s in stats)
    mse_ = sum_sq / n
    return {
        "mae": sum_abs / n,
        "mse": mse_,
        "rmse": math.sqrt(mse_),
        "r2": 1.0 - sum_sq / ss_tot if ss_tot > 0 else None,
        "rel_l2": math.sqrt(sum_sq / sum_sq_y) if sum_sq_y > 0 else None,
        "rel_l1": sum_abs / sum_abs_y if sum_abs_y > 0 else None,
        "max_error": max(s.max_abs_err for s in stats),
    }


def weighted_metrics(matrix: np.ndarray, weights: np.ndarray, names: Sequence[str]) -> dict:
    """Decomposable metrics for each row of ``weights`` (design multiplicities).

    ``matrix`` is ``stats_matrix(...)`` (D x 8), ``weights`` is (B x D).  A
    design with weight k counts as k copies of its points.  Row sums are
    plain numpy reductions along a fixed axis, so results are bit-stable.
    """
    W = np.asarray(weights, dtype=np.float64)
    n, s_abs, s_sq, mean_y, m2_y, s_y2, s_absy, max_abs = matrix.T
    N = (W * n).sum(axis=1)
    sum_abs = (W * s_abs).sum(axis=1)
    sum_sq = (W * s_sq).sum(axis=1)
    out = {}
    for name in names:
        if name == "mae":
            out[name] = sum_abs / N
        elif name == "mse":
            out[name] = sum_sq / N
        elif name == "rmse":
            out[name] = np.sqrt(sum_sq / N)
        elif name == "r2":
            y_bar = (W * (n * mean_y)).sum(axis=1) / N
            ss_tot = (W * (m2_y + n * (mean_y - y_bar[:, None]) ** 2)).sum(axis=1)
            with np.errstate(divide="ignore", invalid="ignore"):
                out[name] = 1.0 - sum_sq / ss_tot
        elif name == "rel_l2":
            with np.errstate(divide="ignore", invalid="ignore"):
                out[name] = np.sqrt(sum_sq / (W * s_y2).sum(axis=1))
        elif name == "rel_l1":
            with np.errstate(divide="ignore", invalid="ignore"):
                out[name] = sum_abs / (W * s_absy).sum(axis=1)
        elif name == "max_error":
            out[name] = np.where(W > 0, max_abs[None, :], -np.inf).max(axis=1)
        else:
            raise KeyError(f"{name} is not decomposable")
    return out


# ---------------------------------------------------------------------------
# evaluation records
# ---------------------------------------------------------------------------


@dataclass
class DesignData:
    """Truth and prediction for one design at one resolution."""

    design_id: str
    category: str
    truth: np.ndarray
    prediction: "FieldPrediction | np.ndarray"


@dataclass
class EvaluationRecord:
    model_name: str
    split_name: str
    resolution: Resolution
    n_designs: int
    n_points_total: int
    mae: float
    mse: float
    rmse: float
    r2: float | None
    rel_l2: float | None
    rel_l1: float | None
    max_error: float
    median_rel_error: float
    p50: float
    p90: float
    p95: float
    p99: float
    per_design: list = field(default_factory=list)
    eps: float = DEFAULT_EPS

    def metric(self, name: str):
        return getattr(self, name)

    def to_dict(self) -> dict:
        metrics = {name: {"value": getattr(self, name), "unit": UNITS[name]} for name in ALL_METRICS}
        return {
            "model_name": self.model_name,
            "split_name": self.split_name,
            "resolution": self.resolution.value,
            "n_designs": self.n_designs,
            "n_points_total": self.n_points_total,
            "metrics": metrics,
            "per_design": self.per_design,
            "protocol": {
                "pooling": "points",
                "percentile_method": "linear",
                "median_rel_error_denominator": "|y| + eps",
                "eps_m2_per_s2": self.eps,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)


def _per_design_entry(s: DesignStats) -> dict:
    mse_ = s.sum_sq_err / s.n
    return {
        "design_id": s.design_id,
        "category": s.category,
        "n_points": s.n,
        "mae": s.sum_abs_err / s.n,
        "mse": mse_,
        "rmse": math.sqrt(mse_),
        "r2": 1.0 - s.sum_sq_err / s.m2_y if s.m2_y > 0 else None,
        "rel_l2": math.sqrt(s.sum_sq_err / s.sum_sq_y) if s.sum_sq_y > 0 else None,
        "rel_l1": s.sum_abs_err / s.sum_abs_y if s.sum_abs_y > 0 else None,
        "max_error": s.max_abs_err,
    }


def physical_prediction(design_id: str, prediction, stats=None) -> np.ndarray:
    if isinstance(prediction, FieldPrediction):
        return prediction.to_physical(stats)
    return np.asarray(prediction, dtype=np.float64)


def design_stats(designs: Sequence[DesignData], stats=None) -> list[DesignStats]:
    out = []
    for d in designs:
        if d.prediction is None:
            raise MissingPrediction(d.design_id)
        y_hat = physical_prediction(d.design_id, d.prediction, stats)
        if len(y_hat) != len(d.truth):
            raise LengthMismatch(f"{d.design_id}: {len(y_hat)} predictions for {len(d.truth)} points")
        out.append(DesignStats.from_arrays(d.design_id, d.category, d.truth, y_hat))
    return out


def evaluate(
    designs: Sequence[DesignData],
    resolution: Resolution = Resolution.SUBSAMPLED,
    model_name: str = "",
    split_name: str = "",
    stats=None,
    eps: float = DEFAULT_EPS,
) -> EvaluationRecord:
    """Score every design and pool all points into one record.

    Normalised predictions are converted to physical units with ``stats``;
    without stats they are refused.
    """
    designs = sorted(designs, key=lambda d: d.design_id)
    if not designs:
        raise EmptyInput("no designs to evaluate")
    per = design_stats(designs, stats)
    pooled = pooled_metrics(per)
    truths = np.concatenate([np.asarray(d.truth, dtype=np.float64) for d in designs])
    preds = np.concatenate([physical_prediction(d.design_id, d.prediction, stats) for d in designs])
    pct = percentile_errors(truths, preds)
    return EvaluationRecord(
        model_name=model_name,
        split_name=split_name,
        resolution=Resolution(resolution),
        n_designs=len(designs),
        n_points_total=len(truths),
        mae=pooled["mae"],
        mse=pooled["mse"],
        rmse=pooled["rmse"],
        r2=pooled["r2"],
        rel_l2=pooled["rel_l2"],
        rel_l1=pooled["rel_l1"],
        max_error=pooled["max_error"],
        median_rel_error=median_rel_error(truths, preds, eps),
        p50=pct[50.0],
        p90=pct[90.0],
        p95=pct[95.0],
        p99=pct[99.0],
        per_design=[_per_design_entry(s) for s in per],
        eps=eps,
    )
