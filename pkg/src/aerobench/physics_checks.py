"""Pressure-drag integration as a physical sanity check on predicted fields.

Fields are kinematic pressure (p/rho), so the integrated force is kinematic
too (m^4/s^2); multiply by the fluid density to get Newtons.  Friction drag
needs wall shear stress, which surface pressure files do not carry, so only
the pressure part of D = D_p + D_f is computed.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import rng
from .errors import InvalidFlowReference, LengthMismatch, OrientationInconsistent
from .mesh_io import DEGENERATE_AREA, SurfaceMesh


@dataclass(frozen=True)
class FlowReference:
    p_inf: float = 0.0  # m^2/s^2, gauge kinematic pressure by default
    u_inf: float = 30.0  # m/s
    a_ref: float = 2.17  # m^2
    x_hat: tuple = (1.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.u_inf > 0:
            raise InvalidFlowReference("u_inf must be positive")
        if not self.a_ref > 0:
            raise InvalidFlowReference("a_ref must be positive")
        if abs(math.sqrt(sum(c * c for c in self.x_hat)) - 1.0) > 1e-9:
            raise InvalidFlowReference("x_hat must be a unit vector")
        object.__setattr__(self, "x_hat", tuple(float(c) for c in self.x_hat))

    @classmethod
    def from_dict(cls, doc: dict) -> "FlowReference":
        if "a_ref" not in doc:
            raise InvalidFlowReference("a_ref is required")
        return cls(
            p_inf=float(doc.get("p_inf", 0.0)),
            u_inf=float(doc.get("u_inf", 30.0)),
            a_ref=float(doc["a_ref"]),
            x_hat=tuple(doc.get("x_hat", (1.0, 0.0, 0.0))),
        )

    def to_dict(self) -> dict:
        return {"p_inf": self.p_inf, "u_inf": self.u_inf, "a_ref": self.a_ref, "x_hat": list(self.x_hat)}


def orientation_consistent(mesh: SurfaceMesh, mode: str = "full", fraction: float = 0.05, seed: int = 0) -> bool:
    """True when no directed edge is used twice (neighbours agree on winding).

    ``mode='spot'`` only inspects a seeded random ``fraction`` of the edges.
    """
    t = mesh.triangles
    if len(t) == 0:
        return True
    n = np.int64(mesh.n_points)
    keys = np.concatenate([t[:, 0] * n + t[:, 1], t[:, 1] * n + t[:, 2], t[:, 2] * n + t[:, 0]])
    keys = np.sort(keys)
    if mode == "full":
        return not np.any(keys[1:] == keys[:-1])
    gen = rng.generator(seed, "orientation-spot", mesh.design_id)
    probe = keys[gen.choice(len(keys), size=max(1, int(fraction * len(keys))), replace=False)]
    counts = np.searchsorted(keys, probe, side="right") - np.searchsorted(keys, probe, side="left")
    return not np.any(counts > 1)


def face_contributions(mesh: SurfaceMesh, field, ref: FlowReference) -> np.ndarray:
    """Per-face (p_face - p_inf) (n . x_hat) A; faces below the degenerate area give 0."""
    values = np.asarray(field, dtype=np.float64).reshape(-1)
    if len(values) != mesh.n_points:
        raise LengthMismatch(f"{mesh.design_id}: field has {len(values)} values for {mesh.n_points} vertices")
    cross = mesh.face_cross()
    area2 = np.linalg.norm(cross, axis=1)
    degenerate = 0.5 * area2 <= DEGENERATE_AREA
    if np.any(degenerate):
        warnings.warn(f"{mesh.design_id}: skipping {int(degenerate.sum())} degenerate face(s)", stacklevel=3)
    p_face = values[mesh.triangles].mean(axis=1)
    # n A = cross / 2 for a flat triangle
    projected = 0.5 * (cross @ np.asarray(ref.x_hat))
    contrib = (p_face - ref.p_inf) * projected
    contrib[degenerate] = 0.0
    return contrib


def pressure_drag(
    mesh: SurfaceMesh, field, ref: FlowReference = FlowReference(), orientation_check: str = "spot"
) -> float:
    """D_p = -sum_f (p_f - p_inf) (n_f . x_hat) A_f with face-mean pressure p_f."""
    if orientation_check != "off" and not orientation_consistent(mesh, orientation_check):
        raise OrientationInconsistent(f"{mesh.design_id}: adjacent faces disagree on winding")
    return -math.fsum(face_contributions(mesh, field, ref).tolist())


def drag_coefficient(drag: float, ref: FlowReference) -> float:
    return drag / (0.5 * ref.u_inf ** 2 * ref.a_ref)


def drag_consistency_report(
    mesh: SurfaceMesh, truth_field, predicted_field, ref: FlowReference, orientation_check: str = "spot"
) -> dict:
    """Pressure drag of truth and prediction on the full mesh, and their gap."""
    d_true = pressure_drag(mesh, truth_field, ref, orientation_check)
    d_pred = pressure_drag(mesh, predicted_field, ref, "off")
    abs_diff = abs(d_pred - d_true)
    return {
        "design_id": mesh.design_id,
        "d_true": d_true,
        "d_pred": d_pred,
        "abs_diff": abs_diff,
        "rel_diff": abs_diff / abs(d_true) if d_true != 0 else None,
        "cd_true": drag_coefficient(d_true, ref),
        "cd_pred": drag_coefficient(d_pred, ref),
        "units": "m4_per_s2 (kinematic; multiply by density for N)",
        "p_inf_assumption": "gauge kinematic pressure" if ref.p_inf == 0.0 else "user supplied",
        "friction_drag": "unavailable (no wall shear stress in surface files)",
    }
