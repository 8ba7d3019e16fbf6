"""Manifests, train/val/test splits and training-only pressure statistics."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from . import rng
from .errors import (
    EmptyCategory,
    EmptyTrainSplit,
    MissingField,
    OverlappingSplits,
    UnknownDesignId,
    ZeroVariance,
)
from .mesh_io import Category, SurfaceMesh, load_mesh

log = logging.getLogger(__name__)

SPLIT_FILE_NAMES = {
    "train": ("train_design_ids.txt", "train.txt"),
    "val": ("val_design_ids.txt", "val.txt"),
    "test": ("test_design_ids.txt", "test.txt"),
}


@dataclass(frozen=True)
class ManifestEntry:
    design_id: str
    category: Category
    path: Path


@dataclass
class Manifest:
    dataset_name: str
    entries: list[ManifestEntry]
    missing: list[str] = field(default_factory=list)  # ids whose file does not exist

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            if e.design_id in seen:
                raise ValueError(f"duplicate design id {e.design_id!r} in manifest")
            seen.add(e.design_id)
        self._by_id = {e.design_id: e for e in self.entries}

    def __contains__(self, design_id: str) -> bool:
        return design_id in self._by_id

    def __getitem__(self, design_id: str) -> ManifestEntry:
        try:
            return self._by_id[design_id]
        except KeyError:
            raise UnknownDesignId(design_id) from None

    @property
    def ids(self) -> list[str]:
        return [e.design_id for e in self.entries]

    def category_of(self, design_id: str) -> Category:
        return self[design_id].category

    def load(self, design_id: str) -> SurfaceMesh:
        entry = self[design_id]
        return load_mesh(entry.path, design_id=entry.design_id, category=entry.category)

    def to_dict(self, relative_to: Path | None = None) -> dict:
        def rel(p: Path) -> str:
            if relative_to is not None:
                try:
                    return p.relative_to(relative_to).as_posix()
                except ValueError:
                    pass
            return p.as_posix()

        return {
            "dataset": self.dataset_name,
            "entries": [
                {"id": e.design_id, "category": e.category.value, "path": rel(e.path)}
                for e in self.entries
            ],
        }


def load_manifest(path) -> Manifest:
    path = Path(path)
    raw = json.loads(path.read_text(encoding="utf-8"))
    base = path.parent
    entries = []
    for item in raw["entries"]:
        design_id = item["id"]
        cat = item.get("category")
        category = Category.parse(cat) if cat else Category.from_design_id(design_id)
        p = Path(item["path"])
        entries.append(ManifestEntry(design_id, category, p if p.is_absolute() else base / p))
    missing = [e.design_id for e in entries if not e.path.exists()]
    return Manifest(raw.get("dataset", path.stem), entries, missing)


def write_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    text = json.dumps(manifest.to_dict(relative_to=path.parent.resolve()), indent=2, sort_keys=True)
    path.write_text(text + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------


@dataclass
class Split:
    name: str
    train: list[str]
    val: list[str]
    test: list[str]
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        parts = {"train": set(self.train), "val": set(self.val), "test": set(self.test)}
        for a, b in (("train", "val"), ("train", "test"), ("val", "test")):
            both = parts[a] & parts[b]
            if both:
                raise OverlappingSplits(f"{len(both)} id(s) in both {a} and {b}, e.g. {sorted(both)[0]!r}")

    def check_against(self, manifest: Manifest) -> None:
        for part in (self.train, self.val, self.test):
            for design_id in part:
                if design_id not in manifest:
                    raise UnknownDesignId(f"split id {design_id!r} not in manifest")


def _dedupe(ids: list[str]) -> tuple[list[str], int]:
    out = list(dict.fromkeys(ids))
    return out, len(ids) - len(out)


def _read_id_list(path: Path) -> list[str]:
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def load_split(path, manifest: Manifest | None = None, name: str | None = None) -> Split:
    """Read a split from a JSON file or a directory of newline-delimited id lists.

    A directory must hold ``train``/``val``/``test`` lists named either
    ``<part>_design_ids.txt`` or ``<part>.txt``.  Duplicates inside one list
    are dropped and counted in ``meta['duplicates']``.
    """
    path = Path(path)
    if path.is_dir():
        lists = {}
        for part, candidates in SPLIT_FILE_NAMES.items():
            for fname in candidates:
                if (path / fname).exists():
                    lists[part] = _read_id_list(path / fname)
                    break
            else:
                lists[part] = []
        split_name = name or path.name
    else:
        raw = json.loads(path.read_text(encoding="utf-8"))
        lists = {part: [str(i) for i in raw.get(part, [])] for part in ("train", "val", "test")}
        split_name = name or raw.get("name", path.stem)
    duplicates = {}
    for part in ("train", "val", "test"):
        lists[part], duplicates[part] = _dedupe(lists[part])
        if duplicates[part]:
            log.warning("split %s: dropped %d duplicate id(s) from %s", split_name, duplicates[part], part)
    split = Split(split_name, lists["train"], lists["val"], lists["test"], {"duplicates": duplicates})
    if manifest is not None:
        split.check_against(manifest)
    return split


def write_split(split: Split, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for part in ("train", "val", "test"):
        ids = getattr(split, part)
        (directory / f"{part}_design_ids.txt").write_text("".join(i + "\n" for i in ids), encoding="utf-8")


def make_cross_category_split(
    manifest: Manifest,
    train_categories,
    test_categories,
    val_fraction: float = 0.1,
    seed: int = 0,
    max_train: int | None = None,
) -> Split:
    """Zero-shot split: train on some archetypes, test on disjoint ones.

    Candidates for training are shuffled with a seeded generator; at least
    ``round(val_fraction * n)`` go to validation, and when ``max_train`` caps
    the training size the remainder also lands in validation so that every
    listed id sits in exactly one part.
    """
    train_cats = {Category.parse(c) for c in train_categories}
    test_cats = {Category.parse(c) for c in test_categories}
    if train_cats & test_cats:
        raise ValueError("train and test categories must be disjoint")
    candidates = sorted(e.design_id for e in manifest.entries if e.category in train_cats)
    test = sorted(e.design_id for e in manifest.entries if e.category in test_cats)
    present = {e.category for e in manifest.entries}
    for cat in sorted(train_cats | test_cats, key=lambda c: c.value):
        if cat not in present:
            raise EmptyCategory(f"no designs of category {cat.long_name}")
    order = rng.generator(seed, "cross-category", *sorted(c.value for c in train_cats)).permutation(len(candidates))
    shuffled = [candidates[i] for i in order]
    n_train = len(shuffled) - int(round(val_fraction * len(shuffled)))
    if max_train is not None:
        n_train = min(n_train, int(max_train))
    train = sorted(shuffled[:n_train])
    val = sorted(shuffled[n_train:])
    label = "+".join(c.long_name for c in sorted(train_cats, key=lambda c: c.value))
    label += "->" + "+".join(c.long_name for c in sorted(test_cats, key=lambda c: c.value))
    meta = {
        "train_size": len(train),
        "val_size": len(val),
        "test_size": len(test),
        "ratio": len(train) / len(test) if test else math.inf,
        "val_fraction": val_fraction,
        "seed": seed,
        "max_train": max_train,
    }
    return Split(label, train, val, test, meta)


# ---------------------------------------------------------------------------
# pressure statistics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PressureStats:
    """Pooled population statistics of a field over the training designs (m^2/s^2)."""

    mean: float
    std: float
    min: float
    max: float
    median: float
    q25: float
    q75: float
    n_points_total: int
    n_designs: int

    def to_dict(self) -> dict:
        return asdict(self)


def train_ids_hash(train_ids: Iterable[str]) -> str:
    body = "\n".join(sorted(set(train_ids))).encode("utf-8")
    return hashlib.sha256(body).hexdigest()


def pooled_stats(values: np.ndarray, n_designs: int) -> PressureStats:
    values = np.asarray(values, dtype=np.float64)
    n = len(values)
    # correctly rounded sums: identical result for any ordering of the pool
    mean = math.fsum(values.tolist()) / n
    var = math.fsum(((values - mean) ** 2).tolist()) / n
    q25, median, q75 = np.percentile(values, [25, 50, 75], method="linear")
    return PressureStats(
        mean=mean,
        std=math.sqrt(var),
        min=float(values.min()),
        max=float(values.max()),
        median=float(median),
        q25=float(q25),
        q75=float(q75),
        n_points_total=n,
        n_designs=n_designs,
    )


def compute_pressure_stats(
    manifest: Manifest, train_ids: Iterable[str], field_name: str = "p", workers: int = 1
) -> PressureStats:
    """Statistics over the concatenation of every training design's field.

    Only the listed training files are opened; validation and test files are
    never read, so they cannot leak into normalisation.
    """
    train_ids = list(train_ids)
    if not train_ids:
        raise EmptyTrainSplit("training split is empty")

    def values_of(design_id):
        mesh = manifest.load(design_id)
        if field_name not in mesh.point_fields:
            raise MissingField(f"{design_id}: no point field {field_name!r}")
        return mesh.point_fields[field_name]

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(values_of, train_ids))
    else:
        parts = [values_of(i) for i in train_ids]
    return pooled_stats(np.concatenate(parts), len(train_ids))


def write_stats_cache(stats: PressureStats, split: Split, field_name: str, path) -> dict:
    doc = {
        **stats.to_dict(),
        "field": field_name,
        "split": split.name,
        "train_ids_sha256": train_ids_hash(split.train),
        "std_convention": "population",
        "quantile_method": "linear",
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return doc


def read_stats_cache(path, split: Split | None = None, field_name: str | None = None) -> PressureStats:
    """Load cached stats; refuses a cache built from a different train list or field."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if split is not None and doc.get("train_ids_sha256") != train_ids_hash(split.train):
        raise ValueError(f"stats cache {path} was computed from a different training id list")
    if field_name is not None and doc.get("field") != field_name:
        raise ValueError(f"stats cache {path} is for field {doc.get('field')!r}, not {field_name!r}")
    names = PressureStats.__dataclass_fields__
    return PressureStats(**{k: doc[k] for k in names})


def normalize(values, stats: PressureStats) -> np.ndarray:
    if not stats.std > 0:
        raise ZeroVariance("cannot normalise with zero standard deviation")
    return (np.asarray(values, dtype=np.float64) - stats.mean) / stats.std


def denormalize(values, stats: PressureStats) -> np.ndarray:
    return np.asarray(values, dtype=np.float64) * stats.std + stats.mean
