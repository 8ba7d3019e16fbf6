"""Result tables, design-space PCA and deterministic CSV/JSON/Markdown output."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import __version__, rng
from .errors import MissingPair, NoConvergence, NoModels, RankDeficient
from .mesh_io import SurfaceMesh
from .uncertainty_stats import format_at, gum_round_column, significance_by_overlap

DASH = "—"
ARROW = " → "

# display headers carry units; keys are metric names
METRIC_HEADERS = {
    "mse": "MSE (m⁴/s⁴)",
    "mae": "MAE (m²/s²)",
    "rmse": "RMSE (m²/s²)",
    "r2": "R² (dimensionless)",
    "rel_l2": "Rel L2 (dimensionless)",
    "rel_l1": "Rel L1 (dimensionless)",
    "max_error": "Max Error (m²/s²)",
    "median_rel_error": "Median Rel. Error (dimensionless)",
    "p50": "P50 Error (m²/s²)",
    "p90": "P90 Error (m²/s²)",
    "p95": "P95 Error (m²/s²)",
    "p99": "P99 Error (m²/s²)",
}
LEADERBOARD_METRICS = ("mse", "mae", "rmse", "r2", "rel_l2")
HIGHER_IS_BETTER = {"r2"}
EFFICIENCY_COLUMNS = (
    ("params_m", "Parameters (M)"),
    ("peak_memory_gb", "Peak Memory (GB)"),
    ("mean_latency_ms", "Mean Latency (ms)"),
    ("throughput_sps", "Throughput (sps)"),
)
DESCRIPTOR_VERSION = "coordhist-v1"


def _metric(record, name: str):
    if isinstance(record, Mapping):
        return record.get(name)
    return getattr(record, name)


def _fixed(x, decimals: int) -> str:
    if x is None or (isinstance(x, float) and not math.isfinite(x)):
        return DASH
    return format_at(float(x), -decimals)


def _sort_value(value, higher_better: bool) -> float:
    if value is None:
        return math.inf
    return -value if higher_better else value


# ---------------------------------------------------------------------------
# leaderboard
# ---------------------------------------------------------------------------


@dataclass
class LeaderboardRow:
    rank: int
    name: str
    efficiency: dict  # column key -> float or None
    values: dict  # metric -> point estimate
    uncertainties: dict  # metric -> uncertainty or None
    displays: dict = field(default_factory=dict)  # metric -> GUM string
    significance: str | None = None


@dataclass
class Leaderboard:
    rows: list
    sort_key: str = "rel_l2"
    metrics: tuple = LEADERBOARD_METRICS
    uncertainty: str = "std"

    def headers(self) -> list[str]:
        return (
            ["Rank", "Model"]
            + [h for _, h in EFFICIENCY_COLUMNS]
            + [METRIC_HEADERS[m] for m in self.metrics]
            + [f"vs Rank 1 ({METRIC_HEADERS[self.sort_key].split(' (')[0]})"]
        )

    def table(self) -> list[list[str]]:
        out = []
        for row in self.rows:
            eff = [_fixed(row.efficiency.get(k), 2) for k, _ in EFFICIENCY_COLUMNS]
            out.append(
                [str(row.rank), row.name]
                + eff
                + [row.displays[m] for m in self.metrics]
                + [row.significance or DASH]
            )
        return out

    def to_dict(self) -> dict:
        return {
            "sort_key": self.sort_key,
            "uncertainty": self.uncertainty,
            "rows": [
                {
                    "rank": r.rank,
                    "model": r.name,
                    **{k: r.efficiency.get(k) for k, _ in EFFICIENCY_COLUMNS},
                    "metrics": {
                        m: {"value": r.values.get(m), "uncertainty": r.uncertainties.get(m), "display": r.displays[m]}
                        for m in self.metrics
                    },
                    "significance_vs_rank1": r.significance,
                }
                for r in self.rows
            ],
        }


def _uncertainty_of(summary, mode: str):
    if summary is None:
        return None
    return summary.half_width if mode == "half_width" else summary.std


def build_leaderboard(
    records: Mapping,
    summaries: Mapping | None = None,
    profiles: Mapping | None = None,
    params_m: Mapping | None = None,
    sort_key: str = "rel_l2",
    uncertainty: str = "std",
    metrics: Sequence[str] = LEADERBOARD_METRICS,
) -> Leaderboard:
    """One row per model, best first by ``sort_key`` (ties by model name).

    ``records`` maps model name to an EvaluationRecord (or a plain metric
    dict); ``summaries`` to ``{metric: BootstrapSummary}``; ``profiles`` to
    an EfficiencyProfile.  The uncertainty shown is the bootstrap standard
    deviation or, with ``uncertainty='half_width'``, the CI half-width.
    """
    if not records:
        raise NoModels("nothing to rank")
    summaries = summaries or {}
    profiles = profiles or {}
    params_m = params_m or {}
    metrics = tuple(metrics)
    if sort_key not in metrics:
        metrics = metrics + (sort_key,)
    higher = sort_key in HIGHER_IS_BETTER
    names = sorted(records, key=lambda n: (_sort_value(_metric(records[n], sort_key), higher), n))
    rows = []
    for rank, name in enumerate(names, start=1):
        prof = profiles.get(name)
        eff = {
            "params_m": params_m.get(name),
            "peak_memory_gb": prof.peak_memory_gb if prof else None,
            "mean_latency_ms": prof.mean_latency_ms if prof else None,
            "throughput_sps": prof.throughput_sps if prof else None,
        }
        model_summaries = summaries.get(name, {})
        values = {m: _metric(records[name], m) for m in metrics}
        uncs = {m: _uncertainty_of(model_summaries.get(m), uncertainty) for m in metrics}
        rows.append(LeaderboardRow(rank, name, eff, values, uncs))
    for m in metrics:
        column = gum_round_column([(r.values[m], r.uncertainties[m]) for r in rows])
        for r, text in zip(rows, column):
            r.displays[m] = text
    best = summaries.get(rows[0].name, {}).get(sort_key)
    for r in rows[1:]:
        other = summaries.get(r.name, {}).get(sort_key)
        if best is not None and other is not None:
            r.significance = significance_by_overlap(best, other).value
    return Leaderboard(rows, sort_key, metrics, uncertainty)


# ---------------------------------------------------------------------------
# percentile, dual-resolution and cross-category tables
# ---------------------------------------------------------------------------

PERCENTILE_COLUMNS = ("median_rel_error", "p50", "p90", "p95", "p99")


def percentile_table(records: Mapping) -> tuple[list[str], list[list[str]]]:
    """Worst to best by median relative error, two decimals throughout."""
    if not records:
        raise NoModels("nothing to tabulate")
    names = sorted(records, key=lambda n: (-(_metric(records[n], "median_rel_error") or 0.0), n))
    headers = ["Model"] + [METRIC_HEADERS[m] for m in PERCENTILE_COLUMNS]
    rows = [[n] + [_fixed(_metric(records[n], m), 2) for m in PERCENTILE_COLUMNS] for n in names]
    return headers, rows


DUAL_METRICS = (("mae", 1), ("rmse", 1), ("rel_l2", 3), ("r2", 3))


@dataclass
class DualResolutionRow:
    name: str
    subsampled: dict
    full: dict

    @property
    def degradation_pct(self) -> float | None:
        a, b = self.subsampled.get("rel_l2"), self.full.get("rel_l2")
        if a is None or b is None or a == 0:
            return None
        return (b - a) / a * 100.0


def dual_resolution_table(sub_records: Mapping, full_records: Mapping) -> list[DualResolutionRow]:
    """Paired rows, worst to best by subsampled rel_l2 (ties by name)."""
    names = set(sub_records) | set(full_records)
    if not names:
        raise NoModels("nothing to tabulate")
    missing = sorted(n for n in names if n not in sub_records or n not in full_records)
    if missing:
        raise MissingPair(f"no record at both resolutions for: {', '.join(missing)}")
    rows = [
        DualResolutionRow(
            n,
            {m: _metric(sub_records[n], m) for m, _ in DUAL_METRICS},
            {m: _metric(full_records[n], m) for m, _ in DUAL_METRICS},
        )
        for n in names
    ]
    rows.sort(key=lambda r: (-(r.subsampled["rel_l2"] if r.subsampled["rel_l2"] is not None else -math.inf), r.name))
    return rows


def dual_resolution_columns(rows: Sequence[DualResolutionRow], arrow: bool = False):
    """CSV layout (separate 10k/Full columns) or Markdown layout (``a → b`` cells)."""
    label = {"mae": "MAE (m²/s²)", "rmse": "RMSE (m²/s²)", "rel_l2": "Rel L2 (dimensionless)", "r2": "R² (dimensionless)"}
    headers = ["Model"]
    for m, _ in DUAL_METRICS:
        headers += [f"{label[m]} Sampled → Full"] if arrow else [f"{label[m]} Sampled", f"{label[m]} Full"]
    headers.append("Rel L2 Degradation (%)")
    out = []
    for r in rows:
        cells = [r.name]
        for m, dec in DUAL_METRICS:
            a, b = _fixed(r.subsampled[m], dec), _fixed(r.full[m], dec)
            cells += [a + ARROW + b] if arrow else [a, b]
        cells.append(_fixed(r.degradation_pct, 1))
        out.append(cells)
    return headers, out


@dataclass
class CrossCatRow:
    train_label: str
    test_label: str
    train_size: int
    test_size: int
    results: dict  # model -> {"rel_l2": x, "r2": y}

    @property
    def ratio(self) -> float:
        return self.train_size / self.test_size if self.test_size else math.inf


def crosscat_columns(rows: Sequence[CrossCatRow], models: Sequence[str]):
    headers = ["Train", "Test"]
    for m in models:
        headers += [f"{m} Rel L2 (dimensionless)", f"{m} R² (dimensionless)"]
    headers += ["Train Size (designs)", "Test Size (designs)", "Ratio (dimensionless)"]
    out = []
    for r in rows:
        cells = [r.train_label, r.test_label]
        for m in models:
            res = r.results.get(m, {})
            cells += [_fixed(res.get("rel_l2"), 4), _fixed(res.get("r2"), 4)]
        cells += [str(r.train_size), str(r.test_size), _fixed(r.ratio, 2)]
        out.append(cells)
    return headers, out


# ---------------------------------------------------------------------------
# PCA of design descriptors
# ---------------------------------------------------------------------------


def design_descriptor(mesh: SurfaceMesh, bins: int = 64) -> np.ndarray:
    """Per-axis histograms of bounding-box normalised vertex coordinates (3 x bins)."""
    v = mesh.vertices
    lo, hi = v.min(axis=0), v.max(axis=0)
    extent = np.where(hi > lo, hi - lo, 1.0)
    unit = (v - lo) / extent
    parts = [np.histogram(unit[:, a], bins=bins, range=(0.0, 1.0))[0] / len(v) for a in range(3)]
    return np.concatenate(parts)


@dataclass
class PcaResult:
    coords: np.ndarray  # (n, k)
    components: np.ndarray  # (k, d), unit rows
    eigenvalues: np.ndarray
    explained_ratio: np.ndarray
    mean: np.ndarray
    iterations: list


def _power_iteration(C: np.ndarray, v: np.ndarray, tol: float, max_iter: int):
    scale = np.abs(C).max()
    if scale == 0.0:
        return 0.0, v, 0
    for it in range(1, max_iter + 1):
        w = C @ v
        norm = np.linalg.norm(w)
        if norm <= 1e-14 * scale:
            return 0.0, v, it
        w /= norm
        if w @ v < 0:
            w = -w
        if np.linalg.norm(w - v) < tol:
            return float(w @ C @ w), w, it
        v = w
    raise NoConvergence(f"power iteration did not converge in {max_iter} iterations")


def pca_projection(features, n_components: int = 2, tol: float = 1e-10, max_iter: int = 10_000) -> PcaResult:
    """Top principal components by power iteration with deflation.

    The covariance uses an n-1 denominator.  Each component's first loading
    with magnitude above 1e-12 is made positive.
    """
    X = np.asarray(features, dtype=np.float64)
    n, d = X.shape
    if n < 3 or n_components > min(n - 1, d):
        raise RankDeficient(f"{n} designs with {d} features cannot give {n_components} components")
    mean = X.mean(axis=0)
    Xc = X - mean
    C = (Xc.T @ Xc) / (n - 1)
    total = float(np.trace(C))
    start = rng.generator(0, "pca-start").standard_normal((n_components, d))
    comps, eigs, iters = [], [], []
    work = C.copy()
    for i in range(n_components):
        v = start[i]
        for u in comps:  # start orthogonal to what was already found
            v = v - (v @ u) * u
        v /= np.linalg.norm(v)
        lam, v, it = _power_iteration(work, v, tol, max_iter)
        nz = np.flatnonzero(np.abs(v) > 1e-12)
        if len(nz) and v[nz[0]] < 0:
            v = -v
        comps.append(v)
        eigs.append(lam)
        iters.append(it)
        work = work - lam * np.outer(v, v)
    components = np.array(comps)
    eigenvalues = np.array(eigs)
    ratio = eigenvalues / total if total > 0 else np.zeros_like(eigenvalues)
    return PcaResult(Xc @ components.T, components, eigenvalues, ratio, mean, iters)


_CATEGORY_COLOURS = {"F": "#1f77b4", "E": "#d62728", "N": "#2ca02c", "U": "#7f7f7f"}


def svg_scatter(xy, labels: Sequence[str], title: str = "", x_label: str = "PC1", y_label: str = "PC2",
                size: int = 480) -> str:
    """Small static scatter plot; colours by the first letter of each label."""
    xy = np.asarray(xy, dtype=np.float64)
    pad = 48
    lo, hi = xy.min(axis=0), xy.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    inner = size - 2 * pad
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect x="0" y="0" width="{size}" height="{size}" fill="white"/>',
        f'<rect x="{pad}" y="{pad}" width="{inner}" height="{inner}" fill="none" stroke="black"/>',
        f'<text x="{size / 2:.1f}" y="{pad / 2:.1f}" text-anchor="middle" font-size="14">{_xml(title)}</text>',
        f'<text x="{size / 2:.1f}" y="{size - 12}" text-anchor="middle" font-size="12">{_xml(x_label)}</text>',
        f'<text x="14" y="{size / 2:.1f}" text-anchor="middle" font-size="12" '
        f'transform="rotate(-90 14 {size / 2:.1f})">{_xml(y_label)}</text>',
    ]
    for (x, y), label in zip(xy, labels):
        px = pad + (x - lo[0]) / span[0] * inner
        py = size - pad - (y - lo[1]) / span[1] * inner
        colour = _CATEGORY_COLOURS.get(str(label)[:1], "#7f7f7f")
        lines.append(f'<circle cx="{px:.2f}" cy="{py:.2f}" r="3" fill="{colour}"><title>{_xml(label)}</title></circle>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def _xml(text) -> str:
    return str(text).replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


# ---------------------------------------------------------------------------
# emitters
# ---------------------------------------------------------------------------


def header_block(master_seed: int, split_name: str, resolution: str, extra: Mapping | None = None) -> dict:
    """Provenance carried by every emitted file."""
    meta = {
        "harness_version": __version__,
        "master_seed": master_seed,
        "split": split_name,
        "resolution": resolution,
        "interpolation": "1NN",
        "pooling": "points",
        "eps_m2_per_s2": 1e-8,
        "percentile_method": "linear",
    }
    if extra:
        meta.update(extra)
    return meta


def _meta_lines(meta: Mapping) -> list[str]:
    return [f"{k}: {json.dumps(v, sort_keys=True, ensure_ascii=False)}" for k, v in meta.items()]


def to_csv(headers, rows, meta: Mapping) -> str:
    buf = io.StringIO()
    for line in _meta_lines(meta):
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(headers)
    writer.writerows(rows)
    return buf.getvalue()


def to_markdown(headers, rows, meta: Mapping, title: str = "") -> str:
    out = []
    if title:
        out += [f"# {title}", ""]
    out += [f"- {line}" for line in _meta_lines(meta)]
    out.append("")
    out.append("| " + " | ".join(headers) + " |")
    out.append("|" + "|".join("---" for _ in headers) + "|")
    out += ["| " + " | ".join(str(c) for c in row) + " |" for row in rows]
    return "\n".join(out) + "\n"


def to_json(doc: Mapping, meta: Mapping) -> str:
    return json.dumps({"meta": dict(meta), **doc}, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n"


def write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def emit_table(base, headers, rows, meta: Mapping, formats=("csv", "json", "md"), json_doc: Mapping | None = None,
               title: str = "") -> list[Path]:
    """Write ``base.csv`` / ``base.json`` / ``base.md``; returns the paths written."""
    base = Path(base)
    written = []
    for fmt in formats:
        path = base.with_name(base.name + "." + fmt)
        if fmt == "csv":
            write_text(path, to_csv(headers, rows, meta))
        elif fmt == "md":
            write_text(path, to_markdown(headers, rows, meta, title))
        elif fmt == "json":
            doc = dict(json_doc) if json_doc is not None else {}
            doc.setdefault("columns", list(headers))
            doc.setdefault("table", [list(r) for r in rows])
            write_text(path, to_json(doc, meta))
        else:
            raise ValueError(f"unknown format {fmt!r}")
        written.append(path)
    return written
