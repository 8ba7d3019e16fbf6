"""Run configuration: JSON or a plain YAML subset, validated before any work."""

from __future__ import annotations

import copy
import json
import os
import re
from dataclasses import dataclass, fields
from dataclasses import field as _field
from pathlib import Path

import yaml

from .adapters import BUILTINS as _BUILTINS
from .errors import ConfigError, InvalidFlowReference
from .metrics_core import ALL_METRICS, Resolution
from .model_adapter import MIN_TIMED_RUNS
from .physics_checks import FlowReference
from .uncertainty_stats import DEFAULT_METRICS, MIN_REPLICATES

SEED_ENV = "AEROBENCH_SEED"
_NAME = re.compile(r"^[A-Za-z0-9][A-Za-z0-9_.+-]*$")

DEFAULT_BOOTSTRAP = {
    "B": 2000,
    "confidence": 0.95,
    "stratify_by_category": True,
    "unit": "design",
    "metrics": list(DEFAULT_METRICS),
    "uncertainty": "std",
    "store_replicates": True,
}
DEFAULT_FLOW = {"p_inf": 0.0, "u_inf": 30.0, "a_ref": 2.17, "x_hat": [1.0, 0.0, 0.0]}
DEFAULT_PROFILE = {"n_warmup": 10, "n_timed": 100}
DEFAULT_PCA = {"enabled": True, "bins": 64}
MODEL_KEYS = {"name", "builtin", "command", "params", "params_m", "timeout_s", "memory_semantics", "expose_truth"}


@dataclass
class RunConfig:
    manifest: str
    split: dict
    field: str = "p"
    sample_n: int = 10_000
    sample_mode: str = "uniform"
    master_seed: int = 0
    bootstrap: dict = _field(default_factory=lambda: copy.deepcopy(DEFAULT_BOOTSTRAP))
    flow_reference: dict = _field(default_factory=lambda: copy.deepcopy(DEFAULT_FLOW))
    models: list = _field(default_factory=list)
    resolutions: list = _field(default_factory=lambda: [Resolution.SUBSAMPLED.value, Resolution.FULL_MESH.value])
    output_dir: str = "runs"
    run_id: str = "run"
    stats_cache: str | None = None
    profile: dict = _field(default_factory=lambda: dict(DEFAULT_PROFILE))
    crosscat: dict = _field(default_factory=dict)
    pca: dict = _field(default_factory=lambda: dict(DEFAULT_PCA))
    base_dir: Path = _field(default=Path("."), compare=True, repr=False)

    # -- paths -------------------------------------------------------------

    def path(self, value) -> Path:
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def run_dir(self) -> Path:
        return self.path(self.output_dir) / self.run_id

    # -- (de)serialisation ---------------------------------------------------

    def to_dict(self) -> dict:
        """Everything needed to re-run, without the runtime-only base directory."""
        return {f.name: copy.deepcopy(getattr(self, f.name)) for f in fields(self) if f.name != "base_dir"}

    @classmethod
    def from_dict(cls, doc: dict, base_dir=".") -> "RunConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config must be a mapping")
        known = {f.name for f in fields(cls)} - {"base_dir"}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        for key in ("manifest", "split"):
            if key not in doc:
                raise ConfigError(f"missing required key {key!r}")
        doc = copy.deepcopy(doc)
        doc["bootstrap"] = {**DEFAULT_BOOTSTRAP, **(doc.get("bootstrap") or {})}
        doc["flow_reference"] = {**DEFAULT_FLOW, **(doc.get("flow_reference") or {})}
        doc["profile"] = {**DEFAULT_PROFILE, **(doc.get("profile") or {})}
        doc["pca"] = {**DEFAULT_PCA, **(doc.get("pca") or {})}
        cfg = cls(**doc, base_dir=Path(base_dir))
        cfg.validate()
        return cfg

    # -- validation --------------------------------------------------------------

    def validate(self) -> None:
        _check(isinstance(self.manifest, str) and self.manifest, "manifest must be a path string")
        _check(isinstance(self.field, str) and self.field, "field must be a non-empty string")
        _check(_is_int(self.sample_n) and self.sample_n >= 1, "sample_n must be a positive integer")
        _check(self.sample_mode in ("uniform", "area"), "sample_mode must be 'uniform' or 'area'")
        _check(_is_int(self.master_seed) and 0 <= self.master_seed < 2 ** 64, "master_seed must be a u64")
        self._validate_split()
        self._validate_bootstrap()
        try:
            FlowReference.from_dict(self.flow_reference)
        except (InvalidFlowReference, TypeError, ValueError) as exc:
            raise ConfigError(f"flow_reference: {exc}") from None
        _check(isinstance(self.resolutions, list) and self.resolutions, "resolutions must be a non-empty list")
        for r in self.resolutions:
            _check(r in [x.value for x in Resolution], f"unknown resolution {r!r}")
        _check(len(set(self.resolutions)) == len(self.resolutions), "duplicate resolution")
        _check(isinstance(self.run_id, str) and _NAME.match(self.run_id), "run_id must be a simple name")
        prof = self.profile
        _check(_is_int(prof.get("n_warmup")) and prof["n_warmup"] >= 0, "profile.n_warmup must be >= 0")
        _check(_is_int(prof.get("n_timed")) and prof["n_timed"] >= MIN_TIMED_RUNS,
               f"profile.n_timed must be >= {MIN_TIMED_RUNS}")
        _check(_is_int(self.pca.get("bins")) and self.pca["bins"] >= 2, "pca.bins must be >= 2")
        self._validate_models()
        self._validate_crosscat()

    def _validate_split(self):
        s = self.split
        _check(isinstance(s, dict), "split must be a mapping")
        if "path" in s:
            _check(set(s) <= {"path", "name"}, "official split takes only 'path' and 'name'")
        else:
            _check("train" in s and "test" in s, "split needs 'path' or 'train'/'test' categories")
            _check(set(s) <= {"train", "test", "val_fraction", "max_train"}, "unknown cross-category split key")
            _check_categories(s["train"], "split.train")
            _check_categories(s["test"], "split.test")

    def _validate_bootstrap(self):
        b = self.bootstrap
        unknown = set(b) - set(DEFAULT_BOOTSTRAP)
        _check(not unknown, f"unknown bootstrap key(s): {', '.join(sorted(unknown))}")
        _check(_is_int(b["B"]) and b["B"] >= MIN_REPLICATES, f"bootstrap.B must be >= {MIN_REPLICATES}")
        _check(isinstance(b["confidence"], (int, float)) and 0 < b["confidence"] < 1,
               "bootstrap.confidence must lie in (0, 1)")
        _check(b["unit"] in ("design", "point"), "bootstrap.unit must be 'design' or 'point'")
        _check(b["uncertainty"] in ("std", "half_width"), "bootstrap.uncertainty must be 'std' or 'half_width'")
        for m in b["metrics"]:
            _check(m in ALL_METRICS, f"unknown bootstrap metric {m!r}")

    def _validate_models(self):
        _check(isinstance(self.models, list), "models must be a list")
        names = set()
        for i, m in enumerate(self.models):
            _check(isinstance(m, dict), f"models[{i}] must be a mapping")
            unknown = set(m) - MODEL_KEYS
            _check(not unknown, f"models[{i}]: unknown key(s) {', '.join(sorted(unknown))}")
            name = m.get("name")
            _check(isinstance(name, str) and _NAME.match(name), f"models[{i}]: name must be a simple identifier")
            _check(name not in names, f"duplicate model name {name!r}")
            names.add(name)
            _check(("builtin" in m) != ("command" in m), f"model {name}: give exactly one of builtin / command")
            if "builtin" in m:
                _check(m["builtin"] in _BUILTINS, f"model {name}: unknown builtin {m['builtin']!r}")
                if m["builtin"] == "identity":
                    _check(m.get("expose_truth") is True, f"model {name}: identity needs expose_truth: true")
            else:
                _check(isinstance(m["command"], (str, list)) and m["command"], f"model {name}: empty command")
            _check(isinstance(m.get("params", {}), dict), f"model {name}: params must be a mapping")
            t = m.get("timeout_s", 300)
            _check(isinstance(t, (int, float)) and t > 0, f"model {name}: timeout_s must be positive")

    def _validate_crosscat(self):
        c = self.crosscat
        if not c:
            return
        _check(set(c) <= {"rows", "val_fraction"}, "crosscat takes 'rows' and 'val_fraction'")
        rows = c.get("rows")
        _check(isinstance(rows, list) and rows, "crosscat.rows must be a non-empty list")
        for i, row in enumerate(rows):
            _check(isinstance(row, dict) and "train" in row and "test" in row, f"crosscat.rows[{i}] needs train/test")
            _check(set(row) <= {"train", "test", "max_train"}, f"crosscat.rows[{i}]: unknown key")
            _check_categories(row["train"], f"crosscat.rows[{i}].train")
            _check_categories(row["test"], f"crosscat.rows[{i}].test")

    def require_models(self) -> None:
        _check(self.models, "at least one model is required")

    def model(self, name: str) -> dict:
        for m in self.models:
            if m["name"] == name:
                return m
        raise ConfigError(f"no model named {name!r}")


def _is_int(x) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def _check(ok, message: str) -> None:
    if not ok:
        raise ConfigError(message)


def _check_categories(value, where: str) -> None:
    _check(isinstance(value, list) and value, f"{where} must be a non-empty list of categories")
    for c in value:
        _check(str(c).upper() in ("F", "E", "N", "FASTBACK", "ESTATEBACK", "NOTCHBACK"),
               f"{where}: unknown category {c!r}")


def _reject_aliases(text: str) -> None:
    for event in yaml.parse(text):
        if isinstance(event, yaml.AliasEvent) or getattr(event, "anchor", None):
            raise ConfigError("YAML anchors and aliases are not supported in configs")


def parse_config_text(text: str, suffix: str = ".json"):
    if suffix.lower() == ".json":
        try:
            return json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
    try:
        _reject_aliases(text)
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML: {exc}") from None


def load_config(path, env=None) -> tuple[RunConfig, dict]:
    """Read and validate a config; returns it with a note on any seed override."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    doc = parse_config_text(text, path.suffix)
    env = os.environ if env is None else env
    override = {}
    if env.get(SEED_ENV):
        try:
            seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer") from None
        if isinstance(doc, dict):
            override = {"variable": SEED_ENV, "config_value": doc.get("master_seed", 0), "used_value": seed}
            doc["master_seed"] = seed
    return RunConfig.from_dict(doc, base_dir=path.resolve().parent), override
