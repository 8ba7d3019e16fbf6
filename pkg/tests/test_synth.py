import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerobench.dataset_registry import load_manifest
from aerobench.errors import EmptyTrainingPool
from aerobench.geometry_sampling import SpatialIndex, sample_vertices
from aerobench.mesh_io import load_mesh
from aerobench.metrics_core import rel_l2
from aerobench.physics_checks import orientation_consistent
from aerobench.synth_baseline import (
    IdwModel,
    SyntheticSpec,
    analytic_field,
    draw_params,
    generate,
    load_meta,
    synth_design,
)

SMALL = dict(designs={"F": 3, "E": 2, "N": 2}, vertex_range=(300, 400))


def tree_digest(root):
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        h.update(str(path.relative_to(root)).encode() + b"\0" + path.read_bytes())
    return h.hexdigest()


def test_generation_is_byte_identical(tmp_path):
    a = generate(SyntheticSpec(**SMALL), 7, tmp_path / "a", workers=1)
    generate(SyntheticSpec(**SMALL), 7, tmp_path / "b", workers=3)
    assert tree_digest(tmp_path / "a" / "meshes") == tree_digest(tmp_path / "b" / "meshes")
    generate(SyntheticSpec(**SMALL), 8, tmp_path / "c")
    assert tree_digest(tmp_path / "a" / "meshes") != tree_digest(tmp_path / "c" / "meshes")
    spec, params, seed = load_meta(a.meta_path)
    assert seed == 7 and spec == SyntheticSpec(**SMALL) and params == a.params
    manifest = load_manifest(a.manifest_path)
    assert manifest.ids == ["E_0001", "E_0002", "F_0001", "F_0002", "F_0003", "N_0001", "N_0002"]
    assert not manifest.missing
    assert sorted(a.split.train + a.split.val + a.split.test) == manifest.ids


def test_zero_noise_matches_analytic_field():
    spec = SyntheticSpec(**SMALL, noise_sigma=0.0)
    p = draw_params(spec, "N_0001", "N", 3)
    mesh = synth_design(spec, p, 3)
    np.testing.assert_allclose(mesh.field("p"), analytic_field(p, spec, mesh.vertices), rtol=0, atol=1e-12)


def test_noise_is_centred():
    spec = SyntheticSpec(**SMALL, noise_sigma=5.0)
    residuals = []
    for i in range(1, 4):
        p = draw_params(spec, f"F_{i:04d}", "F", 0)
        mesh = synth_design(spec, p, 0)
        residuals.append(mesh.field("p") - analytic_field(p, spec, mesh.vertices))
    r = np.concatenate(residuals)
    assert abs(r.mean()) < 3 * 5.0 / np.sqrt(len(r))
    assert r.std() == pytest.approx(5.0, rel=0.1)


def test_meshes_are_closed_and_oriented(tmp_path):
    ds = generate(SyntheticSpec(**SMALL), 1, tmp_path)
    for entry in load_manifest(ds.manifest_path).entries:
        mesh = load_mesh(entry.path)
        t = mesh.triangles
        edges = np.sort(np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        _, counts = np.unique(edges, axis=0, return_counts=True)
        assert np.all(counts == 2)
        assert orientation_consistent(mesh)
        assert len(mesh.degenerate_faces()) == 0
        assert 0.7 * 300 <= mesh.n_points <= 1.3 * 400  # grid resolution approximates the target count


def test_categories_differ_in_rear_slope():
    spec = SyntheticSpec(**SMALL)
    for cat in "FEN":
        for i in range(1, 3):
            p = draw_params(spec, f"{cat}_{i:04d}", cat, 0)
            lo, hi = spec.slope_ranges[cat]
            assert lo <= p.slope_deg <= hi


def test_idw_basics():
    g = np.random.default_rng(0)
    pts = g.random((200, 3))
    vals = g.normal(size=200)
    model = IdwModel(pts, vals)
    assert np.array_equal(model.predict(pts), vals)
    q = g.random((50, 3))
    nn, _ = SpatialIndex(pts).nearest_many(q)
    assert np.array_equal(IdwModel(pts, vals, k=1).predict(q), vals[nn])
    assert np.all(IdwModel(pts, np.full(200, 4.2)).predict(q) == 4.2)
    with pytest.raises(EmptyTrainingPool):
        IdwModel(np.zeros((0, 3)), [])
    with pytest.raises(ValueError):
        IdwModel(pts, vals, k=0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 16))
def test_idw_is_a_convex_combination(seed, k):
    g = np.random.default_rng(seed)
    pts, vals, q = g.random((60, 3)), g.normal(size=60), g.random((20, 3))
    idx, _ = SpatialIndex(pts).knn(q, k)
    pred = IdwModel(pts, vals, k=k).predict(q)
    assert np.all(vals[idx].min(axis=1) <= pred) and np.all(pred <= vals[idx].max(axis=1))


def test_more_training_designs_help():
    spec = SyntheticSpec(designs={"F": 180}, vertex_range=(400, 600), noise_sigma=0.0)
    meshes = [synth_design(spec, draw_params(spec, f"F_{i:04d}", "F", 0), 0) for i in range(1, 181)]
    train = [sample_vertices(m, 300, seed=0, with_normals=False) for m in meshes[:160]]
    test = [sample_vertices(m, 300, seed=0, with_normals=False) for m in meshes[160:]]
    y = np.concatenate([s.truth for s in test])
    q = np.concatenate([s.points for s in test])
    errors = []
    for n in (10, 40, 160):
        pool = train[:n]
        model = IdwModel(np.concatenate([s.points for s in pool]), np.concatenate([s.truth for s in pool]))
        errors.append(rel_l2(y, model.predict(q)))
    assert errors[0] > errors[1] > errors[2]
