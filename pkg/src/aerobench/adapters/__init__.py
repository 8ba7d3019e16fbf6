"""Built-in predictors shared by in-process runs and the adapter executable.

Run as ``python -m aerobench.adapters <model> [options] predict|serve``.
Every predictor maps a decoded sample file to ``(values, space)``, so the
in-process path and the subprocess path run the same code on the same
float64 inputs.
"""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np

from ..dataset_registry import PressureStats, normalize
from ..errors import ConfigError, EmptyTrainingPool, ProtocolViolation
from ..fields import Space
from ..model_adapter import ApfRecord, load_apf, points_of
from ..synth_baseline import IdwModel

BUILTINS = ("identity", "constant", "idw", "sleep")


class Predictor:
    def __init__(self, fail_on=()):
        self.fail_on = set(fail_on)

    def __call__(self, record: ApfRecord):
        if record.design_id in self.fail_on:
            raise RuntimeError(f"configured to fail on {record.design_id}")
        return self.predict(record)

    def predict(self, record: ApfRecord):
        raise NotImplementedError


class Identity(Predictor):
    """Echoes the truth array; only useful when samples expose truth."""

    def predict(self, record):
        if "truth" not in record.arrays:
            raise ProtocolViolation(f"{record.design_id}: sample file carries no truth")
        return record.arrays["truth"].copy(), Space.PHYSICAL


class Constant(Predictor):
    def __init__(self, value: float = 0.0, **kw):
        super().__init__(**kw)
        self.value = float(value)

    def predict(self, record):
        return np.full(len(points_of(record)), self.value), Space.PHYSICAL


class Idw(Predictor):
    def __init__(self, pool, k: int = 8, power: float = 2.0, stats: PressureStats | None = None,
                 normalized: bool = False, **kw):
        super().__init__(**kw)
        if pool is None:
            raise EmptyTrainingPool("the idw model needs a training pool")
        points, values = pool
        self.model = IdwModel(points, values, k, power)
        if normalized and stats is None:
            raise ConfigError("normalized output needs pressure statistics")
        self.stats = stats if normalized else None

    def predict(self, record):
        values = self.model.predict(points_of(record))
        if self.stats is not None:
            return normalize(values, self.stats), Space.NORMALIZED
        return values, Space.PHYSICAL


class Sleep(Predictor):
    """Sleeps ``delay_ms`` per call (``slow_factor`` times longer for the first ``slow_first``)."""

    def __init__(self, delay_ms: float = 50.0, slow_first: int = 0, slow_factor: float = 10.0, **kw):
        super().__init__(**kw)
        self.delay_ms = float(delay_ms)
        self.slow_first = int(slow_first)
        self.slow_factor = float(slow_factor)
        self.calls = 0

    def predict(self, record):
        factor = self.slow_factor if self.calls < self.slow_first else 1.0
        self.calls += 1
        time.sleep(self.delay_ms * factor / 1000.0)
        return np.zeros(len(points_of(record))), Space.PHYSICAL


def load_pool(path) -> tuple[np.ndarray, np.ndarray]:
    record = load_apf(path)
    if "truth" not in record.arrays:
        raise EmptyTrainingPool(f"{path}: pool file has no 'truth' array")
    return points_of(record), record.arrays["truth"]


def make_predictor(name: str, params: dict | None = None, pool=None, stats=None) -> Predictor:
    try:
        return _make(name, dict(params or {}), pool, stats)
    except TypeError as exc:
        raise ConfigError(f"model {name!r}: {exc}") from None


def _make(name, params, pool, stats) -> Predictor:
    fail_on = params.pop("fail_on", ())
    if isinstance(fail_on, str):
        fail_on = [fail_on]
    if name == "identity":
        return Identity(fail_on=fail_on, **params)
    if name == "constant":
        return Constant(fail_on=fail_on, **params)
    if name == "idw":
        if pool is None and params.get("pool"):
            pool = load_pool(Path(params["pool"]))
        params.pop("pool", None)
        return Idw(pool, stats=stats, fail_on=fail_on, **params)
    if name == "sleep":
        return Sleep(fail_on=fail_on, **params)
    raise ConfigError(f"unknown built-in model {name!r}; choose from {', '.join(BUILTINS)}")
