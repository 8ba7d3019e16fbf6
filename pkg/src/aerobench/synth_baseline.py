"""Synthetic car-like bodies with analytic pressure fields, and an IDW baseline.

Each body is the surface of a box whose top is pulled down onto a piecewise
linear side profile (nose, hood, windshield, roof, rear slope).  The rear
slope angle sets the archetype: shallow and long for fastbacks, a short
slope onto a trunk deck for notchbacks, nearly vertical for estates.

The field imitates the usual surface pattern of a road car: a stagnation
peak at the nose and suction over the windshield/roof and in the wake,
where the wake suction grows with the rear slope angle.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .dataset_registry import Manifest, ManifestEntry, Split, write_manifest, write_split
from .errors import EmptyTrainingPool
from .geometry_sampling import SampleSet, SpatialIndex
from .mesh_io import Category, SurfaceMesh, write_native, write_vtk_polydata

# rear slope angle ranges in degrees
DEFAULT_SLOPES = {"F": (14.0, 24.0), "N": (26.0, 38.0), "E": (60.0, 80.0)}


@dataclass
class SyntheticSpec:
    designs: dict = field(default_factory=lambda: {"F": 40, "E": 30, "N": 30})
    vertex_range: tuple = (1500, 2500)
    length_range: tuple = (4.4, 4.6)  # m
    width_range: tuple = (1.8, 1.9)
    height_range: tuple = (1.4, 1.45)
    slope_ranges: dict = field(default_factory=lambda: dict(DEFAULT_SLOPES))
    stag_amplitude: float = 450.0  # m^2/s^2, about u^2/2 at 30 m/s
    stag_length: float = 0.6  # m
    deficit: float = 350.0  # m^2/s^2
    wake_base: float = 0.4  # wake suction strength = base + gain * sin(slope)
    wake_gain: float = 0.1
    noise_sigma: float = 2.0  # m^2/s^2
    split_fractions: tuple = (0.7, 0.1, 0.2)  # train, val, test per category
    dataset_name: str = "synthetic"
    field_name: str = "p"

    def __post_init__(self):
        self.vertex_range = tuple(self.vertex_range)
        self.length_range = tuple(self.length_range)
        self.width_range = tuple(self.width_range)
        self.height_range = tuple(self.height_range)
        self.split_fractions = tuple(self.split_fractions)
        self.slope_ranges = {k: tuple(v) for k, v in self.slope_ranges.items()}
        for cat in self.designs:
            Category.parse(cat)
            if cat not in self.slope_ranges:
                raise ValueError(f"no slope range for category {cat}")
        if self.vertex_range[0] < 100 or self.vertex_range[0] > self.vertex_range[1]:
            raise ValueError("vertex_range must be an increasing pair >= 100")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")

    def to_dict(self) -> dict:
        doc = asdict(self)
        for key in ("vertex_range", "length_range", "width_range", "height_range", "split_fractions"):
            doc[key] = list(doc[key])
        doc["slope_ranges"] = {k: list(v) for k, v in sorted(doc["slope_ranges"].items())}
        doc["designs"] = dict(sorted(doc["designs"].items()))
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "SyntheticSpec":
        return cls(**doc)


@dataclass(frozen=True)
class DesignParams:
    design_id: str
    category: str
    length: float
    width: float
    height: float
    slope_deg: float
    target_vertices: int
    knots_x: tuple  # profile knots along the body
    knots_z: tuple
    roof_end: float
    windshield_top: float

    def to_dict(self) -> dict:
        doc = asdict(self)
        doc["knots_x"], doc["knots_z"] = list(self.knots_x), list(self.knots_z)
        return doc

    @classmethod
    def from_dict(cls, doc: dict) -> "DesignParams":
        doc = dict(doc)
        doc["knots_x"], doc["knots_z"] = tuple(doc["knots_x"]), tuple(doc["knots_z"])
        return cls(**doc)

    def top(self, x) -> np.ndarray:
        return np.interp(x, self.knots_x, self.knots_z)


def _uniform(gen, lo_hi) -> float:
    lo, hi = lo_hi
    return float(lo + (hi - lo) * gen.random())


def draw_params(spec: SyntheticSpec, design_id: str, category: str, seed: int) -> DesignParams:
    gen = rng.generator(seed, "synth", design_id)
    L = _uniform(gen, spec.length_range)
    W = _uniform(gen, spec.width_range)
    H = _uniform(gen, spec.height_range)
    alpha = _uniform(gen, spec.slope_ranges[category])
    lo, hi = spec.vertex_range
    target = int(lo + gen.integers(0, hi - lo + 1))
    tan = math.tan(math.radians(alpha))
    h_nose, h_hood = 0.45 * H, 0.55 * H
    x_hood, x_ws = 0.25 * L, 0.42 * L
    if category == "N":
        deck = 0.2 * L
        drop = 0.3 * H
        run = drop / tan
        x_roof = L - deck - run
        xs = (0.0, x_hood, x_ws, x_roof, L - deck, L)
        zs = (h_nose, h_hood, H, H, H - drop, H - drop)
    else:
        drop = 0.5 * H
        run = min(0.4 * L, drop / tan)
        x_roof = L - run
        xs = (0.0, x_hood, x_ws, x_roof, L)
        zs = (h_nose, h_hood, H, H, H - run * tan)
    return DesignParams(design_id, category, L, W, H, alpha, target, xs, zs, x_roof, x_ws)


def _grid_shape(p: DesignParams) -> tuple[int, int, int]:
    area = 2.0 * (p.length * p.width + p.length * p.height + p.width * p.height)
    s = math.sqrt(area / p.target_vertices)
    return (
        max(2, round(p.length / s)),
        max(2, round(p.width / s)),
        max(2, round(p.height / s)),
    )


def box_surface(nx: int, ny: int, nz: int) -> tuple[np.ndarray, np.ndarray]:
    """Surface lattice of the unit box [0,1]^3 with outward-wound triangles.

    Returns unit-box vertex coordinates and triangles; the vertex count is
    (nx+1)(ny+1)(nz+1) - (nx-1)(ny-1)(nz-1).
    """
    i, j, k = np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1), indexing="ij")
    on_surface = (i == 0) | (i == nx) | (j == 0) | (j == ny) | (k == 0) | (k == nz)
    lookup = np.full(i.shape, -1, dtype=np.int64)
    lookup[on_surface] = np.arange(int(on_surface.sum()))
    unit = np.stack([i[on_surface] / nx, j[on_surface] / ny, k[on_surface] / nz], axis=1)

    tris = []
    # (fixed axis, level, outward sign, the two in-plane axes)
    for axis, a1, a2 in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
        n = (nx, ny, nz)
        for level, sign in ((0, -1.0), (n[axis], 1.0)):
            u, v = np.meshgrid(np.arange(n[a1]), np.arange(n[a2]), indexing="ij")
            u, v = u.ravel(), v.ravel()

            def vid(du, dv):
                idx = [None, None, None]
                idx[axis] = np.full_like(u, level)
                idx[a1], idx[a2] = u + du, v + dv
                return lookup[idx[0], idx[1], idx[2]]

            a, b, c, d = vid(0, 0), vid(1, 0), vid(1, 1), vid(0, 1)
            # (a1, a2, axis) is a right-handed cycle, so a->b->c winds towards +axis
            if sign > 0:
                tris += [np.stack([a, b, c], 1), np.stack([a, c, d], 1)]
            else:
                tris += [np.stack([a, c, b], 1), np.stack([a, d, c], 1)]
    return unit, np.concatenate(tris)


def body_mesh(p: DesignParams) -> SurfaceMesh:
    nx, ny, nz = _grid_shape(p)
    unit, tris = box_surface(nx, ny, nz)
    x = unit[:, 0] * p.length
    y = (unit[:, 1] - 0.5) * p.width
    z = unit[:, 2] * p.top(x)
    return SurfaceMesh(p.design_id, np.stack([x, y, z], axis=1), tris, {}, Category.parse(p.category))


def _sigmoid(t):
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def analytic_field(p: DesignParams, spec: SyntheticSpec, points) -> np.ndarray:
    """Noise-free pressure A exp(-|x - x_stag|^2 / l^2) - B s(x)."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
    stag = np.array([0.0, 0.0, 0.5 * p.knots_z[0]])
    r2 = ((pts - stag) ** 2).sum(axis=1)
    peak = spec.stag_amplitude * np.exp(-r2 / spec.stag_length ** 2)
    zr = z / p.height
    roof = np.exp(-(((x - p.windshield_top) / (0.25 * p.length)) ** 2)) * zr ** 2
    strength = spec.wake_base + spec.wake_gain * math.sin(math.radians(p.slope_deg))
    wake = strength * _sigmoid((x - 0.8 * p.length) / 0.15) * (0.5 + 0.5 * zr)
    side = 0.1 * (2.0 * y / p.width) ** 2
    return peak - spec.deficit * (roof + wake + side)


def synth_design(spec: SyntheticSpec, p: DesignParams, seed: int) -> SurfaceMesh:
    mesh = body_mesh(p)
    values = analytic_field(p, spec, mesh.vertices)
    if spec.noise_sigma > 0:
        gen = rng.generator(seed, "synth-noise", p.design_id)
        values = values + gen.normal(0.0, spec.noise_sigma, size=len(values))
    return mesh.with_fields(**{spec.field_name: values})


@dataclass
class SyntheticDataset:
    root: Path
    manifest_path: Path
    split_dir: Path
    meta_path: Path
    params: list  # DesignParams in id order
    split: Split
    min_vertices: int = 0  # smallest generated mesh


def design_ids(spec: SyntheticSpec) -> list[tuple[str, str]]:
    out = []
    for cat in sorted(spec.designs):
        out += [(f"{cat}_{i:04d}", cat) for i in range(1, spec.designs[cat] + 1)]
    return out


def _official_split(spec: SyntheticSpec, ids, seed: int) -> Split:
    f_train, f_val, _ = spec.split_fractions
    parts = {"train": [], "val": [], "test": []}
    for cat in sorted(spec.designs):
        members = [d for d, c in ids if c == cat]
        order = rng.generator(seed, "synth-split", cat).permutation(len(members))
        shuffled = [members[i] for i in order]
        n_train = int(round(f_train * len(members)))
        n_val = int(round(f_val * len(members)))
        parts["train"] += shuffled[:n_train]
        parts["val"] += shuffled[n_train:n_train + n_val]
        parts["test"] += shuffled[n_train + n_val:]
    return Split("synthetic-official", sorted(parts["train"]), sorted(parts["val"]), sorted(parts["test"]))


def generate(spec: SyntheticSpec, seed: int, out_dir, fmt: str = "abm", workers: int = 1) -> SyntheticDataset:
    """Write meshes, manifest.json, split lists and synth_meta.json under ``out_dir``."""
    root = Path(out_dir)
    (root / "meshes").mkdir(parents=True, exist_ok=True)
    ids = design_ids(spec)
    params = [draw_params(spec, d, c, seed) for d, c in ids]
    suffix = {"abm": ".abm", "vtk": ".vtk"}[fmt]

    def build(p: DesignParams) -> tuple[ManifestEntry, int]:
        mesh = synth_design(spec, p, seed)
        path = root / "meshes" / f"{p.design_id}{suffix}"
        data = write_native(mesh) if fmt == "abm" else write_vtk_polydata(mesh, binary=True)
        path.write_bytes(data)
        return ManifestEntry(p.design_id, Category.parse(p.category), path.resolve()), mesh.n_points

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            built = list(pool.map(build, params))
    else:
        built = [build(p) for p in params]
    entries = [e for e, _ in built]
    manifest_path = root / "manifest.json"
    write_manifest(Manifest(spec.dataset_name, entries), manifest_path)
    split = _official_split(spec, ids, seed)
    split_dir = root / "split"
    write_split(split, split_dir)
    meta = {
        "seed": seed,
        "spec": spec.to_dict(),
        "designs": [p.to_dict() for p in params],
    }
    meta_path = root / "synth_meta.json"
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return SyntheticDataset(root, manifest_path, split_dir, meta_path, params, split, min(n for _, n in built))


def load_meta(path) -> tuple[SyntheticSpec, list[DesignParams], int]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return SyntheticSpec.from_dict(doc["spec"]), [DesignParams.from_dict(d) for d in doc["designs"]], doc["seed"]


# ---------------------------------------------------------------------------
# inverse-distance weighting baseline
# ---------------------------------------------------------------------------


def pool_from_samples(samples) -> tuple[np.ndarray, np.ndarray]:
    """Stack training samples (in design-id order) into one point/value pool."""
    samples = sorted(samples, key=lambda s: s.design_id)
    samples = [s for s in samples if s.n]
    if not samples:
        raise EmptyTrainingPool("no training points")
    for s in samples:
        if s.truth is None:
            raise EmptyTrainingPool(f"{s.design_id}: sample carries no field values")
    return np.concatenate([s.points for s in samples]), np.concatenate([s.truth for s in samples])


class IdwModel:
    """k-nearest inverse-distance weighting over a fixed point pool."""

    def __init__(self, points, values, k: int = 8, power: float = 2.0):
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if len(values) == 0:
            raise EmptyTrainingPool("no training points")
        if k < 1:
            raise ValueError("k must be >= 1")
        self.index = SpatialIndex(points)
        if len(values) != len(self.index):
            raise ValueError("points and values differ in length")
        self.values = values
        self.k = int(k)
        self.power = float(power)

    def predict(self, queries) -> np.ndarray:
        idx, dist = self.index.knn(queries, self.k)
        v = self.values[idx]
        exact = dist[:, 0] == 0.0
        with np.errstate(divide="ignore"):
            w = np.where(exact[:, None], 0.0, dist ** -self.power)
        wsum = w.sum(axis=1)
        blended = (w * v).sum(axis=1) / np.where(exact, 1.0, wsum)
        # keep the convex-combination bound despite rounding in the division
        blended = np.clip(blended, v.min(axis=1), v.max(axis=1))
        return np.where(exact, v[:, 0], blended)


def idw_predict(train_samples, query_points, k: int = 8, power: float = 2.0) -> np.ndarray:
    points, values = pool_from_samples(train_samples)
    return IdwModel(points, values, k, power).predict(query_points)


def sample_of(mesh: SurfaceMesh, indices=None, field: str = "p", seed: int = 0) -> SampleSet:
    """All vertices (or the given ones) of a mesh as a SampleSet."""
    idx = np.arange(mesh.n_points) if indices is None else np.sort(np.asarray(indices, dtype=np.int64))
    return SampleSet(mesh.design_id, idx, mesh.vertices[idx].copy(), mesh.field(field)[idx].copy(), seed, None, field)
