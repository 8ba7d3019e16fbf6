"""Command implementations behind the CLI.

Every command builds its outputs from the config and seed alone: no
timestamps, absolute paths or completion-order effects reach the run tree,
so repeated runs and different worker counts give identical files.
"""

from __future__ import annotations

import json
import logging
import shlex
import statistics
import sys
import tempfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .adapters import make_predictor
from .analysis_report import (
    DESCRIPTOR_VERSION,
    CrossCatRow,
    build_leaderboard,
    crosscat_columns,
    design_descriptor,
    dual_resolution_columns,
    dual_resolution_table,
    emit_table,
    header_block,
    pca_projection,
    percentile_table,
    svg_scatter,
    write_text,
)
from .config import RunConfig
from .dataset_registry import (
    Manifest,
    Split,
    compute_pressure_stats,
    load_manifest,
    load_split,
    make_cross_category_split,
    read_stats_cache,
    train_ids_hash,
    write_stats_cache,
)
from .errors import AeroBenchError, ConfigError
from .fields import FieldPrediction
from .geometry_sampling import interpolate_to_full, sample_vertices
from .mesh_io import Category, geometry_stats, write_native
from .metrics_core import DEFAULT_EPS, DesignData, Resolution, evaluate
from .model_adapter import (
    ApfRecord,
    command_argv,
    profile,
    run_batch,
    sample_to_apf,
    save_apf,
)
from .physics_checks import FlowReference, drag_consistency_report
from .synth_baseline import pool_from_samples
from .uncertainty_stats import BootstrapConfig, bootstrap_metrics, summary_json

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL, EXIT_IO = 0, 2, 3, 4


@dataclass
class Outcome:
    exit_code: int
    run_dir: Path | None = None
    failures: dict = field(default_factory=dict)
    detail: dict = field(default_factory=dict)


def _map(fn, items, workers: int):
    items = list(items)
    if workers > 1 and len(items) > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False, allow_nan=False) + "\n"


def resolve_split(cfg: RunConfig, manifest: Manifest) -> Split:
    s = cfg.split
    if "path" in s:
        return load_split(cfg.path(s["path"]), manifest, name=s.get("name"))
    return make_cross_category_split(
        manifest, s["train"], s["test"], s.get("val_fraction", 0.1), cfg.master_seed, s.get("max_train")
    )


def _split_meta(split: Split) -> dict:
    return {
        "name": split.name,
        "train_size": len(split.train),
        "val_size": len(split.val),
        "test_size": len(split.test),
        "train_ids_sha256": train_ids_hash(split.train),
        **{k: v for k, v in split.meta.items() if k not in ("duplicates",)},
    }


def _stats(cfg: RunConfig, manifest, split, workers):
    if cfg.stats_cache and cfg.path(cfg.stats_cache).exists():
        try:
            return read_stats_cache(cfg.path(cfg.stats_cache), split, cfg.field)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    return compute_pressure_stats(manifest, split.train, cfg.field, workers)


def _sample(cfg: RunConfig, manifest: Manifest, ids, workers, keep_mesh: bool):
    def one(design_id):
        mesh = manifest.load(design_id)
        s = sample_vertices(mesh, cfg.sample_n, cfg.master_seed, cfg.field, cfg.sample_mode)
        return design_id, s, (mesh if keep_mesh else None)

    out = _map(one, sorted(ids), workers)
    return {d: s for d, s, _ in out}, {d: m for d, _, m in out if m is not None}


def _needs_pool(model: dict) -> bool:
    return model.get("builtin") == "idw" or "{pool}" in str(model.get("command", ""))


def _pool_record(samples) -> ApfRecord:
    points, values = pool_from_samples(samples)
    return ApfRecord("__pool__", arrays={"points": points, "truth": values})


def builtin_command(model: dict) -> list[str]:
    """Out-of-process invocation of a built-in model (used for profiling)."""
    argv = [sys.executable, "-m", "aerobench.adapters", model["builtin"]]
    params = model.get("params", {})
    if model["builtin"] == "idw":
        argv += ["--pool", "{pool}", "--k", str(params.get("k", 8)), "--power", str(params.get("power", 2.0))]
    elif model["builtin"] == "constant":
        argv += ["--value", str(params.get("value", 0.0))]
    elif model["builtin"] == "sleep":
        for key in ("delay_ms", "slow_first", "slow_factor"):
            if key in params:
                argv += ["--" + key.replace("_", "-"), str(params[key])]
    return argv


def _substitute(command, pool_path, stats_path) -> list[str]:
    argv = command_argv(command)
    return [a.replace("{pool}", str(pool_path)).replace("{stats}", str(stats_path)) for a in argv]


def predict_model(model: dict, samples: dict, pool, stats, work_dir: Path, workers: int):
    """Predictions for every sample; returns ``(predictions, failures)`` keyed by design id."""
    name = model["name"]
    expose = bool(model.get("expose_truth", False))
    if "builtin" in model:
        params = dict(model.get("params", {}))
        predictor = make_predictor(model["builtin"], params, pool=pool, stats=stats)

        def one(design_id):
            sample = samples[design_id]
            try:
                values, space = predictor(sample_to_apf(sample, expose))
            except Exception as exc:  # a model failure is recorded per design
                return design_id, None, f"{type(exc).__name__}: {exc}"
            if len(values) != sample.n:
                return design_id, None, f"{len(values)} predictions for {sample.n} points"
            return design_id, FieldPrediction(design_id, values, space, sample.seed, name), None

        out = _map(one, sorted(samples), workers)
        return {d: p for d, p, e in out if e is None}, {d: e for d, p, e in out if e is not None}
    work_dir.mkdir(parents=True, exist_ok=True)
    pool_path = work_dir / "pool.apf"
    if pool is not None and not pool_path.exists():
        save_apf(ApfRecord("__pool__", arrays={"points": pool[0], "truth": pool[1]}), pool_path)
    stats_path = work_dir / "stats.json"
    if stats is not None and not stats_path.exists():
        stats_path.write_text(_json({**stats.to_dict(), "field": "", "train_ids_sha256": ""}), encoding="utf-8")
    argv = _substitute(model["command"], pool_path, stats_path)
    result = run_batch(
        argv,
        [samples[d] for d in sorted(samples)],
        work_dir / name,
        timeout=float(model.get("timeout_s", 300)),
        workers=workers,
        model_name=name,
        include_truth=expose,
    )
    return result.predictions, result.failures


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "._+-" else "_" for c in name)


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------


def cmd_evaluate(cfg: RunConfig, workers: int = 1, seed_override: dict | None = None) -> Outcome:
    cfg.require_models()
    manifest = load_manifest(cfg.path(cfg.manifest))
    split = resolve_split(cfg, manifest)
    if not split.test:
        raise ConfigError("the test split is empty")
    stats = _stats(cfg, manifest, split, workers)
    run_dir = cfg.run_dir
    run_dir.mkdir(parents=True, exist_ok=True)
    resolutions = [Resolution(r) for r in cfg.resolutions]
    need_full = Resolution.FULL_MESH in resolutions
    samples, meshes = _sample(cfg, manifest, split.test, workers, keep_mesh=True)
    categories = {d: manifest.category_of(d).value for d in samples}
    pool = None
    if any(_needs_pool(m) for m in cfg.models):
        train_samples, _ = _sample(cfg, manifest, split.train, workers, keep_mesh=False)
        pool = pool_from_samples(list(train_samples.values()))
    ref = FlowReference.from_dict(cfg.flow_reference)
    boot_cfg = BootstrapConfig(
        B=cfg.bootstrap["B"],
        confidence=cfg.bootstrap["confidence"],
        master_seed=cfg.master_seed,
        stratify_by_category=cfg.bootstrap["stratify_by_category"],
        unit=cfg.bootstrap["unit"],
        store_replicates=cfg.bootstrap["store_replicates"],
    )
    records = {r: {} for r in resolutions}
    summaries, failures, physics = {}, {}, {}
    meta = header_block(cfg.master_seed, split.name, resolutions[0].value, {"eps_m2_per_s2": DEFAULT_EPS})
    with tempfile.TemporaryDirectory(prefix="aerobench-") as tmp:
        for model in cfg.models:
            name = model["name"]
            preds, fails = predict_model(model, samples, pool, stats, Path(tmp), workers)
            failures[name] = fails
            if not preds:
                log.warning("model %s produced no predictions", name)
                continue
            ok = sorted(preds)
            per_res = {Resolution.SUBSAMPLED: [
                DesignData(d, categories[d], samples[d].truth, preds[d]) for d in ok
            ]}
            if need_full:
                def full(d):
                    physical = preds[d].to_physical(stats)
                    values = interpolate_to_full(meshes[d], samples[d], physical)
                    return DesignData(d, categories[d], meshes[d].field(cfg.field), values)

                per_res[Resolution.FULL_MESH] = _map(full, ok, workers)
            for r in resolutions:
                records[r][name] = evaluate(per_res[r], r, name, split.name, stats)
            primary = per_res[resolutions[0]]
            if len(primary) >= 2:
                summaries[name] = bootstrap_metrics(primary, cfg.bootstrap["metrics"], boot_cfg, stats)
                for metric, summary in summaries[name].items():
                    extra = {"meta": {**meta, "model": name}}
                    write_text(run_dir / "bootstrap" / _safe(name) / f"{metric}.json",
                               summary_json(summary, boot_cfg, extra) + "\n")
            if need_full:
                physics[name] = _physics(per_res[Resolution.FULL_MESH], meshes, cfg.field, ref, workers)
                write_text(run_dir / "physics" / f"{_safe(name)}.json",
                           _json({"meta": {**meta, "model": name, "resolution": "FullMesh"},
                                  "flow_reference": ref.to_dict(), **physics[name]}))
    _emit_evaluation(cfg, run_dir, meta, records, resolutions, summaries, failures)
    if cfg.pca.get("enabled", True):
        _emit_pca(cfg, manifest, run_dir, meta, workers)
    n_failed = sum(len(f) for f in failures.values())
    run_meta = {
        "harness_version": __version__,
        "command": "evaluate",
        "config": cfg.to_dict(),
        "seed_override": seed_override or None,
        "split": _split_meta(split),
        "pressure_stats": stats.to_dict(),
        "failures": {m: f for m, f in sorted(failures.items())},
        "protocol": {k: v for k, v in meta.items() if k not in ("split", "master_seed")},
    }
    write_text(run_dir / "run_meta.json", _json(run_meta))
    return Outcome(EXIT_PARTIAL if n_failed else EXIT_OK, run_dir, failures)


def _physics(designs, meshes, field_name, ref, workers) -> dict:
    def one(d):
        mesh = meshes[d.design_id]
        return drag_consistency_report(mesh, mesh.field(field_name), d.prediction, ref)

    reports = _map(one, designs, workers)
    rel = [r["rel_diff"] for r in reports if r["rel_diff"] is not None]
    return {
        "designs": reports,
        "summary": {
            "n_designs": len(reports),
            "mean_rel_diff": statistics.fmean(rel) if rel else None,
            "median_rel_diff": statistics.median(rel) if rel else None,
            "max_rel_diff": max(rel) if rel else None,
        },
    }


def _emit_evaluation(cfg, run_dir, meta, records, resolutions, summaries, failures) -> None:
    primary = records[resolutions[0]]
    params_m = {m["name"]: m.get("params_m") for m in cfg.models}
    if primary:
        lb = build_leaderboard(primary, summaries, None, params_m, uncertainty=cfg.bootstrap["uncertainty"])
        lb_meta = {**meta, "uncertainty": "bootstrap std" if lb.uncertainty == "std" else "CI half-width",
                   "bootstrap_B": cfg.bootstrap["B"], "confidence": cfg.bootstrap["confidence"]}
        doc = lb.to_dict()
        doc["failures"] = {m: f for m, f in sorted(failures.items()) if f}
        emit_table(run_dir / "leaderboard", lb.headers(), lb.table(), lb_meta, json_doc=doc, title="Leaderboard")
        headers, rows = percentile_table(primary)
        emit_table(run_dir / "percentiles", headers, rows, meta, formats=("csv", "md"), title="Error percentiles")
    for r in resolutions:
        for name, rec in records[r].items():
            write_text(run_dir / "records" / f"{_safe(name)}.{r.value}.json", rec.to_json() + "\n")
    if Resolution.SUBSAMPLED in records and Resolution.FULL_MESH in records and records[Resolution.SUBSAMPLED]:
        rows = dual_resolution_table(records[Resolution.SUBSAMPLED], records[Resolution.FULL_MESH])
        dmeta = {**meta, "resolution": "Subsampled+FullMesh"}
        h, cells = dual_resolution_columns(rows)
        emit_table(run_dir / "dual_resolution", h, cells, dmeta, formats=("csv",))
        h, cells = dual_resolution_columns(rows, arrow=True)
        emit_table(run_dir / "dual_resolution", h, cells, dmeta, formats=("md",), title="Subsampled vs full mesh")


def _emit_pca(cfg, manifest, run_dir, meta, workers) -> None:
    ids = sorted(manifest.ids)
    if len(ids) < 3:
        return
    bins = cfg.pca.get("bins", 64)
    feats = np.array(_map(lambda d: design_descriptor(manifest.load(d), bins), ids, workers))
    res = pca_projection(feats, 2)
    pmeta = {**meta, "descriptor": f"{DESCRIPTOR_VERSION} ({bins} bins per axis)",
             "explained_variance_ratio": [float(x) for x in res.explained_ratio]}
    headers = ["design_id", "category", "PC1 (dimensionless)", "PC2 (dimensionless)"]
    rows = [[d, manifest.category_of(d).value, repr(float(x)), repr(float(y))] for d, (x, y) in zip(ids, res.coords)]
    emit_table(run_dir / "pca", headers, rows, pmeta, formats=("csv",))
    ratio = res.explained_ratio
    svg = svg_scatter(res.coords, [manifest.category_of(d).value for d in ids],
                      title="Design-space PCA", x_label=f"PC1 ({ratio[0]:.1%})", y_label=f"PC2 ({ratio[1]:.1%})")
    write_text(run_dir / "pca.svg", svg)


# ---------------------------------------------------------------------------
# crosscat
# ---------------------------------------------------------------------------


def cmd_crosscat(cfg: RunConfig, workers: int = 1, seed_override: dict | None = None) -> Outcome:
    cfg.require_models()
    if not cfg.crosscat:
        raise ConfigError("crosscat needs a 'crosscat.rows' section")
    manifest = load_manifest(cfg.path(cfg.manifest))
    val_fraction = cfg.crosscat.get("val_fraction", 0.1)
    splits = [
        make_cross_category_split(manifest, row["train"], row["test"], val_fraction, cfg.master_seed,
                                  row.get("max_train"))
        for row in cfg.crosscat["rows"]
    ]
    needed = sorted({d for s in splits for d in s.train + s.test})
    samples, _ = _sample(cfg, manifest, needed, workers, keep_mesh=False)
    categories = {d: manifest.category_of(d).value for d in needed}
    rows, failures = [], {}
    with tempfile.TemporaryDirectory(prefix="aerobench-") as tmp:
        for i, split in enumerate(splits):
            pool = pool_from_samples([samples[d] for d in split.train])
            stats = None
            if any(m.get("params", {}).get("normalized") for m in cfg.models):
                stats = compute_pressure_stats(manifest, split.train, cfg.field, workers)
            test_samples = {d: samples[d] for d in split.test}
            results = {}
            for model in cfg.models:
                preds, fails = predict_model(model, test_samples, pool, stats, Path(tmp) / f"row{i}", workers)
                if fails:
                    failures.setdefault(split.name, {})[model["name"]] = fails
                if preds:
                    rec = evaluate([DesignData(d, categories[d], samples[d].truth, preds[d]) for d in sorted(preds)],
                                   Resolution.SUBSAMPLED, model["name"], split.name, stats)
                    results[model["name"]] = {"rel_l2": rec.rel_l2, "r2": rec.r2}
            train_label, test_label = split.name.split("->")
            rows.append(CrossCatRow(train_label, test_label, len(split.train), len(split.test), results))
    run_dir = cfg.run_dir
    meta = header_block(cfg.master_seed, "cross-category", Resolution.SUBSAMPLED.value,
                        {"eps_m2_per_s2": DEFAULT_EPS, "val_fraction": val_fraction})
    models = [m["name"] for m in cfg.models]
    headers, cells = crosscat_columns(rows, models)
    doc = {
        "rows": [
            {"train": r.train_label, "test": r.test_label, "train_size": r.train_size, "test_size": r.test_size,
             "ratio": r.ratio, "results": r.results}
            for r in rows
        ],
        "splits": [_split_meta(s) for s in splits],
        "failures": failures,
    }
    emit_table(run_dir / "crosscat_matrix", headers, cells, meta, json_doc=doc, title="Cross-category generalisation")
    write_text(run_dir / "run_meta.json", _json({
        "harness_version": __version__,
        "command": "crosscat",
        "config": cfg.to_dict(),
        "seed_override": seed_override or None,
        "failures": failures,
    }))
    return Outcome(EXIT_PARTIAL if failures else EXIT_OK, run_dir, failures, {"rows": rows})


# ---------------------------------------------------------------------------
# ingest, stats, profile
# ---------------------------------------------------------------------------


def cmd_ingest(cfg: RunConfig, workers: int = 1, seed_override: dict | None = None) -> Outcome:
    """Parse every manifest file, cache it as ABM1 and summarise vertex counts."""
    manifest = load_manifest(cfg.path(cfg.manifest))
    run_dir = cfg.run_dir
    cache = run_dir / "cache"
    cache.mkdir(parents=True, exist_ok=True)

    def one(entry):
        try:
            mesh = manifest.load(entry.design_id)
        except (AeroBenchError, OSError) as exc:
            return entry, None, f"{type(exc).__name__}: {exc}"
        (cache / f"{_safe(entry.design_id)}.abm").write_bytes(write_native(mesh))
        return entry, geometry_stats(mesh), None

    results = _map(one, sorted(manifest.entries, key=lambda e: e.design_id), workers)
    ok = [(e, g) for e, g, err in results if err is None]
    failures = {e.design_id: err for e, g, err in results if err is not None}
    meta = header_block(cfg.master_seed, "", "", {"command": "ingest"})
    headers = ["design_id", "category", "n_points (count)", "n_cells (count)", "surface_area (m²)"]
    rows = [[e.design_id, e.category.value, str(g.n_points), str(g.n_cells), repr(g.surface_area)] for e, g in ok]
    emit_table(run_dir / "geometry_stats", headers, rows, meta, formats=("csv",))
    counts = [g.n_points for _, g in ok]
    summary = {
        "n_designs": len(ok),
        "n_failed": len(failures),
        "failures": failures,
        "n_points": _describe(counts),
        "by_category": {
            cat.value: _describe([g.n_points for e, g in ok if e.category == cat])
            for cat in Category if any(e.category == cat for e, _ in ok)
        },
    }
    if counts:
        hist, edges = np.histogram(counts, bins=20)
        summary["n_points_histogram"] = {"edges": [float(x) for x in edges], "counts": [int(c) for c in hist]}
    write_text(run_dir / "geometry_summary.json", _json({"meta": meta, **summary}))
    cached = [{"id": e.design_id, "category": e.category.value, "path": f"cache/{_safe(e.design_id)}.abm"}
              for e, _ in ok]
    write_text(run_dir / "manifest.cache.json", _json({"dataset": manifest.dataset_name, "entries": cached}))
    return Outcome(EXIT_IO if failures else EXIT_OK, run_dir, failures)


def _describe(values) -> dict | None:
    if not values:
        return None
    return {
        "mean": statistics.fmean(values),
        "median": float(statistics.median(values)),
        "std": statistics.pstdev(values),
        "min": min(values),
        "max": max(values),
    }


def cmd_stats(cfg: RunConfig, workers: int = 1, seed_override: dict | None = None) -> Outcome:
    manifest = load_manifest(cfg.path(cfg.manifest))
    split = resolve_split(cfg, manifest)
    stats = compute_pressure_stats(manifest, split.train, cfg.field, workers)
    path = cfg.path(cfg.stats_cache) if cfg.stats_cache else cfg.run_dir / "pressure_stats.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = write_stats_cache(stats, split, cfg.field, path)
    return Outcome(EXIT_OK, path.parent, {}, {"path": path, "stats": doc})


def cmd_profile(cfg: RunConfig, model_name: str, workers: int = 1, seed_override: dict | None = None) -> Outcome:
    model = cfg.model(model_name)
    manifest = load_manifest(cfg.path(cfg.manifest))
    split = resolve_split(cfg, manifest)
    samples, _ = _sample(cfg, manifest, split.test, workers, keep_mesh=False)
    with tempfile.TemporaryDirectory(prefix="aerobench-profile-") as tmp:
        tmp = Path(tmp)
        pool_path = tmp / "pool.apf"
        if _needs_pool(model):
            train_samples, _ = _sample(cfg, manifest, split.train, workers, keep_mesh=False)
            save_apf(_pool_record(list(train_samples.values())), pool_path)
        command = builtin_command(model) if "builtin" in model else model["command"]
        argv = _substitute(command, pool_path, tmp / "stats.json")
        prof = profile(
            argv,
            [samples[d] for d in sorted(samples)],
            n_warmup=cfg.profile["n_warmup"],
            n_timed=cfg.profile["n_timed"],
            timeout=float(model.get("timeout_s", 300)),
            memory_semantics=model.get("memory_semantics", "unspecified"),
        )
    run_dir = cfg.run_dir
    meta = header_block(cfg.master_seed, split.name, Resolution.SUBSAMPLED.value,
                        {"command": "profile", "model": model_name, "batch_size": 1,
                         "command_line": " ".join(shlex.quote(a) for a in argv[:1]) + " ..."})
    doc = {"meta": meta, "profile": prof.to_dict(include_latencies=True),
           "units": {"latency": "ms", "throughput": "sps", "peak_memory": "GB"}}
    write_text(run_dir / "profile" / f"{_safe(model_name)}.json", _json(doc))
    return Outcome(EXIT_OK, run_dir, {}, {"profile": prof})
