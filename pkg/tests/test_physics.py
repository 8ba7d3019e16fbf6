import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aerobench.errors import InvalidFlowReference, LengthMismatch, OrientationInconsistent
from aerobench.mesh_io import SurfaceMesh
from aerobench.physics_checks import (
    FlowReference,
    drag_coefficient,
    drag_consistency_report,
    orientation_consistent,
    pressure_drag,
)
from aerobench.shapes import hemisphere_cap, icosphere


def test_hemisphere_cap_constant_pressure():
    # constant pressure on an open cap pushes on the projected rim polygon
    n, r, p = 16, 1.5, 2.0
    cap = hemisphere_cap(8, n, r)
    polygon = 0.5 * n * r * r * math.sin(2 * math.pi / n)
    d = pressure_drag(cap, np.full(cap.n_points, p), orientation_check="full")
    assert d == pytest.approx(-p * polygon, rel=1e-12)
    ref = FlowReference(u_inf=2.0, a_ref=polygon)
    assert drag_coefficient(d, ref) == pytest.approx(-p / (0.5 * 4.0), rel=1e-12)


def test_linear_pressure_gives_enclosed_volume():
    # with p = x the drag is minus the volume enclosed by the polyhedron
    mesh = icosphere(3)
    v, t = mesh.vertices, mesh.triangles
    volume = abs(np.einsum("ij,ij->i", v[t[:, 0]], np.cross(v[t[:, 1]], v[t[:, 2]])).sum()) / 6.0
    assert pressure_drag(mesh, v[:, 0]) == pytest.approx(-volume, rel=1e-12)


def test_convergence_on_jittered_spheres():
    exact = -4.0 / 3.0 * math.pi
    h, err = [], []
    for level in range(1, 6):
        base = icosphere(level)
        g = np.random.default_rng(level)
        v = base.vertices + g.normal(0, 0.1 / 2 ** level, base.vertices.shape)
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        mesh = SurfaceMesh("s", v, base.triangles)
        h.append(np.linalg.norm(v[base.triangles[:, 0]] - v[base.triangles[:, 1]], axis=1).mean())
        err.append(abs(pressure_drag(mesh, v[:, 0]) - exact))
    slope = np.polyfit(np.log(h), np.log(err), 1)[0]
    assert slope >= 1.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-5, 5), st.floats(-5, 5), st.floats(-1e3, 1e3))
def test_linearity_and_offset_invariance(seed, a, b, c):
    mesh = icosphere(2)
    g = np.random.default_rng(seed)
    p, q = g.normal(size=mesh.n_points), g.normal(size=mesh.n_points)
    lhs = pressure_drag(mesh, a * p + b * q)
    rhs = a * pressure_drag(mesh, p) + b * pressure_drag(mesh, q)
    assert abs(lhs - rhs) <= 1e-10 * (1 + abs(a) + abs(b))
    # a closed surface feels no net force from uniform pressure
    assert abs(pressure_drag(mesh, p + c) - pressure_drag(mesh, p)) <= 1e-10 * (1 + abs(c))


def test_free_stream_pressure_is_subtracted():
    cap = hemisphere_cap(4, 12)
    p = np.full(cap.n_points, 3.0)
    assert pressure_drag(cap, p, FlowReference(p_inf=3.0)) == 0.0


def test_consistency_report():
    mesh = icosphere(2)
    truth = mesh.vertices[:, 0]
    report = drag_consistency_report(mesh, truth, 1.1 * truth, FlowReference(a_ref=1.0))
    assert report["rel_diff"] == pytest.approx(0.1, rel=1e-12)
    assert report["cd_pred"] == pytest.approx(1.1 * report["cd_true"], rel=1e-12)
    assert "unavailable" in report["friction_drag"]
    with pytest.raises(LengthMismatch):
        pressure_drag(mesh, truth[:-1])


def test_orientation_check():
    mesh = icosphere(2)
    assert orientation_consistent(mesh)
    t = mesh.triangles.copy()
    t[0] = t[0][::-1]
    flipped = SurfaceMesh("flip", mesh.vertices, t)
    assert not orientation_consistent(flipped)
    with pytest.raises(OrientationInconsistent):
        pressure_drag(flipped, mesh.vertices[:, 0], orientation_check="full")


def test_flow_reference_validation():
    with pytest.raises(InvalidFlowReference):
        FlowReference(u_inf=0.0)
    with pytest.raises(InvalidFlowReference):
        FlowReference(a_ref=-1.0)
    with pytest.raises(InvalidFlowReference):
        FlowReference(x_hat=(1.0, 1.0, 0.0))
    with pytest.raises(InvalidFlowReference):
        FlowReference.from_dict({"u_inf": 30.0})
    ref = FlowReference.from_dict({"a_ref": 2.0, "x_hat": [0, 1, 0]})
    assert FlowReference.from_dict(ref.to_dict()) == ref
