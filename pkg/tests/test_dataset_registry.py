import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerobench.dataset_registry import (
    Manifest,
    ManifestEntry,
    PressureStats,
    Split,
    compute_pressure_stats,
    denormalize,
    load_manifest,
    load_split,
    make_cross_category_split,
    normalize,
    pooled_stats,
    read_stats_cache,
    train_ids_hash,
    write_manifest,
    write_stats_cache,
)
from aerobench.errors import EmptyCategory, EmptyTrainSplit, MissingField, OverlappingSplits, UnknownDesignId, ZeroVariance
from aerobench.mesh_io import Category, SurfaceMesh, write_native


def _tiny(design_id, values, field="p"):
    n = len(values)
    v = np.column_stack([np.arange(n, dtype=float), np.zeros(n), np.zeros(n)])
    return SurfaceMesh(design_id, v, np.zeros((0, 3), dtype=int), {field: values})


def make_manifest(root: Path, designs: dict) -> Manifest:
    """designs: id -> values; writes ABM1 files and a manifest.json."""
    root.mkdir(parents=True, exist_ok=True)
    entries = []
    for design_id, values in designs.items():
        path = root / f"{design_id}.abm"
        path.write_bytes(write_native(_tiny(design_id, np.asarray(values, dtype=float))))
        entries.append(ManifestEntry(design_id, Category.from_design_id(design_id), path))
    manifest = Manifest("tiny", entries)
    write_manifest(manifest, root / "manifest.json")
    return load_manifest(root / "manifest.json")


def _write_lists(directory: Path, train, val, test):
    directory.mkdir(parents=True, exist_ok=True)
    for name, ids in (("train", train), ("val", val), ("test", test)):
        (directory / f"{name}_design_ids.txt").write_text("".join(i + "\n" for i in ids))


def test_manifest_round_trip_and_duplicates(tmp_path):
    m = make_manifest(tmp_path, {"F_1": [1.0], "E_1": [2.0]})
    assert m.ids == ["F_1", "E_1"]
    assert m.category_of("E_1") is Category.ESTATEBACK
    doc = json.loads((tmp_path / "manifest.json").read_text())
    assert doc["entries"][0] == {"category": "F", "id": "F_1", "path": "F_1.abm"}
    with pytest.raises(ValueError):
        Manifest("x", [ManifestEntry("a", Category.UNKNOWN, Path("a")), ManifestEntry("a", Category.UNKNOWN, Path("b"))])
    with pytest.raises(UnknownDesignId):
        m["nope"]


def test_missing_files_are_flagged(tmp_path):
    (tmp_path / "manifest.json").write_text(json.dumps({"dataset": "d", "entries": [{"id": "a", "path": "a.vtk"}]}))
    assert load_manifest(tmp_path / "manifest.json").missing == ["a"]


def test_load_split_valid_and_overlapping(tmp_path):
    _write_lists(tmp_path / "ok", ["a"], ["b"], ["c"])
    s = load_split(tmp_path / "ok")
    assert (s.train, s.val, s.test) == (["a"], ["b"], ["c"])
    _write_lists(tmp_path / "bad", ["a"], [], ["a"])
    with pytest.raises(OverlappingSplits):
        load_split(tmp_path / "bad")


def test_load_split_json_dedupes_and_checks_manifest(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps({"train": ["a", "a", "b"], "val": [], "test": ["c"]}))
    s = load_split(tmp_path / "s.json")
    assert s.train == ["a", "b"] and s.meta["duplicates"]["train"] == 1
    m = make_manifest(tmp_path / "m", {"a": [1.0], "b": [1.0]})
    with pytest.raises(UnknownDesignId):
        load_split(tmp_path / "s.json", m)


def test_pooled_stats_hand_values(tmp_path):
    m = make_manifest(tmp_path, {"a": [1.0, 3.0], "b": [5.0, 7.0], "t": [1e6, -1e6]})
    s = compute_pressure_stats(m, ["a", "b"])
    assert (s.mean, s.std, s.median) == (4.0, math.sqrt(5.0), 4.0)
    assert (s.min, s.max, s.n_points_total, s.n_designs) == (1.0, 7.0, 4, 2)
    zero = compute_pressure_stats(make_manifest(tmp_path / "z", {"z": [0.0] * 4}), ["z"])
    assert (zero.mean, zero.std, zero.median, zero.q25, zero.q75) == (0.0, 0.0, 0.0, 0.0, 0.0)


def test_stats_ignore_test_files(tmp_path):
    m = make_manifest(tmp_path, {"a": [1.0, 3.0], "b": [5.0, 7.0], "t": [9.0]})
    before = compute_pressure_stats(m, ["a", "b"])
    (tmp_path / "t.abm").write_bytes(b"garbage")
    assert compute_pressure_stats(m, ["a", "b"]) == before
    (tmp_path / "t.abm").unlink()
    assert compute_pressure_stats(m, ["a", "b"], workers=4) == before


def test_stats_errors(tmp_path):
    m = make_manifest(tmp_path, {"a": [1.0]})
    with pytest.raises(EmptyTrainSplit):
        compute_pressure_stats(m, [])
    with pytest.raises(MissingField):
        compute_pressure_stats(m, ["a"], field_name="cp")


def test_normalize_examples():
    stats = PressureStats(-94.5, 269.3, 0, 0, 0, 0, 0, 1, 1)
    assert normalize([-94.5], stats)[0] == 0.0
    assert abs(normalize([174.8], stats)[0] - 1.0) < 1e-4
    with pytest.raises(ZeroVariance):
        normalize([1.0], PressureStats(1.0, 0.0, 0, 0, 0, 0, 0, 1, 1))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-1e4, 1e4), min_size=1, max_size=50), st.floats(-500, 500), st.floats(1e-2, 1e3))
def test_denormalize_inverts_normalize(values, mean, std):
    stats = PressureStats(mean, std, 0, 0, 0, 0, 0, 1, 1)
    v = np.array(values)
    back = denormalize(normalize(v, stats), stats)
    np.testing.assert_allclose(back, v, rtol=1e-12, atol=1e-12 * (abs(mean) + std))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_stats_order_independent(seed):
    gen = np.random.default_rng(seed)
    parts = [gen.normal(gen.uniform(-100, 100), 50, gen.integers(1, 40)) for _ in range(5)]
    a = pooled_stats(np.concatenate(parts), 5)
    b = pooled_stats(np.concatenate([parts[i] for i in gen.permutation(5)]), 5)
    assert abs(a.mean - b.mean) <= 1e-12 * max(1.0, abs(a.mean))
    assert abs(a.std - b.std) <= 1e-12 * a.std
    assert (a.min, a.q25, a.median, a.q75, a.max) == (b.min, b.q25, b.median, b.q75, b.max)
    assert a.min <= a.q25 <= a.median <= a.q75 <= a.max


def test_stats_cache_guards_train_list(tmp_path):
    stats = PressureStats(1.0, 2.0, 0, 3, 1, 0.5, 2, 10, 2)
    split = Split("s", ["a", "b"], [], ["c"])
    doc = write_stats_cache(stats, split, "p", tmp_path / "stats.json")
    assert doc["train_ids_sha256"] == train_ids_hash(["b", "a"])
    assert read_stats_cache(tmp_path / "stats.json", split, "p") == stats
    with pytest.raises(ValueError):
        read_stats_cache(tmp_path / "stats.json", Split("s", ["a"], ["b"], ["c"]), "p")
    with pytest.raises(ValueError):
        read_stats_cache(tmp_path / "stats.json", split, "cp")


@settings(max_examples=100, deadline=None)
@given(st.lists(st.sampled_from("abcdefg"), max_size=7), st.lists(st.sampled_from("abcdefg"), max_size=7))
def test_train_hash_changes_iff_set_changes(a, b):
    assert (train_ids_hash(a) == train_ids_hash(b)) == (set(a) == set(b))


def _counted_manifest(counts: dict) -> Manifest:
    entries = [ManifestEntry(f"{c}_{i:05d}", Category.parse(c), Path(f"{c}_{i}.vtk"))
               for c, n in counts.items() for i in range(n)]
    return Manifest("counts", entries)


def test_cross_category_counts():
    m = _counted_manifest({"F": 10, "E": 5, "N": 5})
    s = make_cross_category_split(m, ["F"], ["E", "N"])
    assert len(s.test) == 10
    assert len(s.train) + len(s.val) == 10 and len(s.val) == 1
    assert s.meta["ratio"] == len(s.train) / 10


def test_cross_category_counts_at_full_scale():
    # category totals of the full-size dataset
    m = _counted_manifest({"F": 5332, "E": 1386, "N": 1403})
    row1 = make_cross_category_split(m, ["F", "N"], ["E"], max_train=5376)
    assert (len(row1.train), len(row1.test), round(row1.meta["ratio"], 2)) == (5376, 1386, 3.88)
    row3 = make_cross_category_split(m, ["E", "N"], ["F"], max_train=2176)
    assert (len(row3.train), len(row3.test), round(row3.meta["ratio"], 2)) == (2176, 5332, 0.41)


def test_cross_category_errors():
    m = _counted_manifest({"F": 3, "E": 2})
    with pytest.raises(EmptyCategory):
        make_cross_category_split(m, ["F"], ["N"])
    with pytest.raises(ValueError):
        make_cross_category_split(m, ["F"], ["F", "E"])


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 30), st.integers(0, 30), st.integers(1, 30), st.floats(0, 0.5), st.integers(0, 2**32 - 1))
def test_cross_category_partitions(nf, ne, nn, val_fraction, seed):
    m = _counted_manifest({"F": nf, "E": ne, "N": nn})
    s = make_cross_category_split(m, ["F"], ["N"], val_fraction, seed)
    listed = [d for d in m.ids if d[0] in "FN"]
    assert sorted(s.train + s.val + s.test) == sorted(listed)
    assert not (set(s.train) & set(s.val) or set(s.train) & set(s.test) or set(s.val) & set(s.test))
