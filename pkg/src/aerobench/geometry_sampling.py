"""Seeded vertex subsampling, exact nearest-neighbour queries and 1-NN upsampling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from . import rng
from .errors import EmptyPointSet, LengthMismatch, SampleLargerThanMesh
from .mesh_io import SurfaceMesh

DEFAULT_SAMPLE_SIZE = 10_000
# relative slack for "could be a tie" when checking k-d tree candidates
_TIE_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class SampleSet:
    design_id: str
    indices: np.ndarray  # sorted vertex indices into the source mesh
    points: np.ndarray  # (n, 3)
    truth: np.ndarray | None  # (n,) m^2/s^2, None when the mesh has no such field
    seed: int
    normals: np.ndarray | None = None
    field_name: str | None = None
    mode: str = "uniform"

    @property
    def n(self) -> int:
        return len(self.indices)


def vertex_normals(mesh: SurfaceMesh) -> np.ndarray:
    """Area-weighted average of incident face normals, unit length.

    Vertices that belong to no face get a zero vector.
    """
    cross = mesh.face_cross()  # norm = 2 * area, so summing weights by area
    acc = np.zeros_like(mesh.vertices)
    for corner in range(3):
        np.add.at(acc, mesh.triangles[:, corner], cross)
    norm = np.linalg.norm(acc, axis=1, keepdims=True)
    return np.divide(acc, norm, out=np.zeros_like(acc), where=norm > 0)


def vertex_areas(mesh: SurfaceMesh) -> np.ndarray:
    """One third of the area of every incident face, per vertex."""
    areas = mesh.face_areas() / 3.0
    out = np.zeros(mesh.n_points)
    for corner in range(3):
        np.add.at(out, mesh.triangles[:, corner], areas)
    return out


def sample_vertices(
    mesh: SurfaceMesh,
    n: int = DEFAULT_SAMPLE_SIZE,
    seed: int = 0,
    field: str | None = "p",
    mode: str = "uniform",
    with_normals: bool = True,
) -> SampleSet:
    """Draw ``n`` distinct vertices without replacement.

    The generator is keyed by ``(seed, design_id)`` only, so the draw for a
    design is the same whatever else is being sampled and on any machine.
    ``mode='area'`` weights vertices by their share of surface area
    (Efraimidis-Spirakis keys); the standard protocol uses ``'uniform'``.
    """
    if n > mesh.n_points:
        raise SampleLargerThanMesh(f"{mesh.design_id}: asked for {n} of {mesh.n_points} vertices")
    gen = rng.generator(seed, mesh.design_id)
    if mode == "uniform":
        idx = gen.choice(mesh.n_points, size=n, replace=False)
    elif mode == "area":
        weights = vertex_areas(mesh)
        u = gen.random(mesh.n_points)
        with np.errstate(divide="ignore"):
            keys = np.where(weights > 0, np.log(u) / weights, -np.inf)
        idx = np.argsort(-keys, kind="stable")[:n]
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    idx = np.sort(idx).astype(np.int64)
    truth = None
    if field is not None:
        truth = mesh.field(field)[idx].copy()
    normals = vertex_normals(mesh)[idx] if with_normals and mesh.n_cells else None
    return SampleSet(
        design_id=mesh.design_id,
        indices=idx,
        points=mesh.vertices[idx].copy(),
        truth=truth,
        seed=seed,
        normals=normals,
        field_name=field,
        mode=mode,
    )


class SpatialIndex:
    """Exact nearest-neighbour index over 3D points; ties go to the lowest index.

    Candidate search uses a balanced scipy k-d tree; candidates are then
    re-ranked on exactly computed squared distances so results agree with a
    brute-force scan.
    """

    def __init__(self, points, leaf_size: int = 16):
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(pts) == 0:
            raise EmptyPointSet("cannot index an empty point set")
        self.points = pts.copy()
        self.points.setflags(write=False)
        self.leaf_size = leaf_size
        self._tree = cKDTree(self.points, leafsize=leaf_size, balanced_tree=True)

    def __len__(self) -> int:
        return len(self.points)

    def _exact_d2(self, idx: np.ndarray, q: np.ndarray) -> np.ndarray:
        diff = self.points[idx] - q[..., None, :] if idx.ndim == 2 else self.points[idx] - q
        return np.einsum("...j,...j->...", diff, diff)

    def nearest_many(self, queries) -> tuple[np.ndarray, np.ndarray]:
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        k = min(4, n)
        dist, idx = self._tree.query(q, k=k)
        if k == 1:
            dist, idx = dist[:, None], idx[:, None]
        d2 = self._exact_d2(idx, q)
        best_col = _argmin_lex(d2, idx)
        rows = np.arange(len(q))
        best = idx[rows, best_col]
        best_d2 = d2[rows, best_col]
        if k < n:
            # the k candidates might not contain every point tied with the best
            unsure = np.flatnonzero(dist[:, -1] <= dist[:, 0] * (1 + _TIE_SLACK))
            for r in unsure:
                cand = np.asarray(
                    self._tree.query_ball_point(q[r], dist[r, 0] * (1 + _TIE_SLACK) + 1e-300), dtype=np.int64
                )
                cd2 = self._exact_d2(cand, q[r])
                j = _argmin_lex(cd2[None, :], cand[None, :])[0]
                best[r], best_d2[r] = cand[j], cd2[j]
        return best.astype(np.int64), np.sqrt(best_d2)

    def nearest(self, query) -> tuple[int, float]:
        idx, dist = self.nearest_many(np.asarray(query, dtype=np.float64).reshape(1, 3))
        return int(idx[0]), float(dist[0])

    def knn(self, queries, k: int) -> tuple[np.ndarray, np.ndarray]:
        """``k`` nearest points per query, ordered by (distance, index)."""
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        k = min(k, len(self.points))
        if k == 1:
            idx, dist = self.nearest_many(q)
            return idx[:, None], dist[:, None]
        _, idx = self._tree.query(q, k=k)
        d2 = self._exact_d2(idx, q)
        order = np.lexsort((idx, d2), axis=-1)
        idx = np.take_along_axis(idx, order, axis=1)
        d2 = np.take_along_axis(d2, order, axis=1)
        return idx.astype(np.int64), np.sqrt(d2)


def _argmin_lex(d2: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Column of the smallest d2 per row, smallest index among equal d2."""
    order = np.lexsort((idx, d2), axis=-1)
    return order[:, 0]


def build_index(points, leaf_size: int = 16) -> SpatialIndex:
    return SpatialIndex(points, leaf_size)


def nearest(index: SpatialIndex, query) -> tuple[int, float]:
    return index.nearest(query)


def interpolate_to_full(mesh: SurfaceMesh, sample: SampleSet, predictions) -> np.ndarray:
    """Give every mesh vertex the prediction of its nearest sampled point."""
    predictions = np.asarray(predictions, dtype=np.float64).reshape(-1)
    if len(predictions) != sample.n:
        raise LengthMismatch(f"{sample.design_id}: {len(predictions)} predictions for {sample.n} samples")
    index = SpatialIndex(sample.points)
    nn, _ = index.nearest_many(mesh.vertices)
    full = predictions[nn]
    # sampled vertices keep their own value even if a coincident sample has a lower index
    full[sample.indices] = predictions
    return full
