"""Closed and open reference surfaces with outward-oriented triangles."""

from __future__ import annotations

import numpy as np

from .mesh_io import Category, SurfaceMesh


def _icosahedron():
    t = (1.0 + 5.0 ** 0.5) / 2.0
    v = np.array(
        [
            [-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
            [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
            [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1],
        ],
        dtype=np.float64,
    )
    f = np.array(
        [
            [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
            [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
            [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
            [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
        ],
        dtype=np.int64,
    )
    return v / np.linalg.norm(v, axis=1, keepdims=True), f


def icosphere_arrays(subdivisions: int, radius: float = 1.0):
    vertices, faces = _icosahedron()
    for _ in range(subdivisions):
        edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        edges.sort(axis=1)
        unique, inverse = np.unique(edges, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        mids = vertices[unique[:, 0]] + vertices[unique[:, 1]]
        mids /= np.linalg.norm(mids, axis=1, keepdims=True)
        m = len(faces)
        base = len(vertices)
        a = base + inverse[:m]
        b = base + inverse[m:2 * m]
        c = base + inverse[2 * m:]
        v0, v1, v2 = faces[:, 0], faces[:, 1], faces[:, 2]
        faces = np.concatenate(
            [
                np.stack([v0, a, c], axis=1),
                np.stack([v1, b, a], axis=1),
                np.stack([v2, c, b], axis=1),
                np.stack([a, b, c], axis=1),
            ]
        )
        vertices = np.concatenate([vertices, mids])
    return vertices * radius, faces


def icosphere(subdivisions: int, radius: float = 1.0, design_id: str = "icosphere", **fields) -> SurfaceMesh:
    v, f = icosphere_arrays(subdivisions, radius)
    return SurfaceMesh(design_id, v, f, fields, Category.UNKNOWN)


def cube(side: float = 2.0, design_id: str = "cube") -> SurfaceMesh:
    h = side / 2.0
    v = np.array(
        [[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)], dtype=np.float64
    )
    # index = 4*ix + 2*iy + iz
    quads = [
        (0, 1, 3, 2),  # x = -h
        (4, 6, 7, 5),  # x = +h
        (0, 4, 5, 1),  # y = -h
        (2, 3, 7, 6),  # y = +h
        (0, 2, 6, 4),  # z = -h
        (1, 5, 7, 3),  # z = +h
    ]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return SurfaceMesh(design_id, v, np.array(tris), {}, Category.UNKNOWN)


def hemisphere_cap(n_rings: int, n_segments: int, radius: float = 1.0, design_id: str = "cap") -> SurfaceMesh:
    """Open half sphere around +x; the rim is an n-gon lying exactly in x = 0."""
    polar = np.linspace(0.0, np.pi / 2.0, n_rings + 1)[1:]
    azim = np.linspace(0.0, 2.0 * np.pi, n_segments, endpoint=False)
    pts = [np.array([radius, 0.0, 0.0])]
    for th in polar:
        x = radius * np.cos(th) if th < np.pi / 2 else 0.0
        r = radius * np.sin(th)
        pts.extend(np.stack([np.full_like(azim, x), r * np.cos(azim), r * np.sin(azim)], axis=1))
    v = np.vstack(pts)

    def ring(i, j):
        return 1 + i * n_segments + (j % n_segments)

    tris = [(0, ring(0, j), ring(0, j + 1)) for j in range(n_segments)]
    for i in range(n_rings - 1):
        for j in range(n_segments):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris += [(a, c, d), (a, d, b)]
    return SurfaceMesh(design_id, v, np.array(tris), {}, Category.UNKNOWN)


def uv_sphere(n_rings: int, n_segments: int, radius: float = 1.0, design_id: str = "uv_sphere") -> SurfaceMesh:
    """Latitude/longitude sphere with poles on the z axis (closed)."""
    polar = np.linspace(0.0, np.pi, n_rings + 1)[1:-1]
    azim = np.linspace(0.0, 2.0 * np.pi, n_segments, endpoint=False)
    pts = [np.array([0.0, 0.0, radius])]
    for th in polar:
        r = radius * np.sin(th)
        pts.extend(np.stack([r * np.cos(azim), r * np.sin(azim), np.full_like(azim, radius * np.cos(th))], axis=1))
    pts.append(np.array([0.0, 0.0, -radius]))
    v = np.vstack(pts)
    south = len(v) - 1

    def ring(i, j):
        return 1 + i * n_segments + (j % n_segments)

    tris = [(0, ring(0, j), ring(0, j + 1)) for j in range(n_segments)]
    for i in range(n_rings - 2):
        for j in range(n_segments):
            a, b = ring(i, j), ring(i, j + 1)
            c, d = ring(i + 1, j), ring(i + 1, j + 1)
            tris += [(a, c, d), (a, d, b)]
    last = n_rings - 2
    tris += [(south, ring(last, j + 1), ring(last, j)) for j in range(n_segments)]
    return SurfaceMesh(design_id, v, np.array(tris), {}, Category.UNKNOWN)


def rotation_matrix(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    x, y, z = axis
    c, s = np.cos(angle), np.sin(angle)
    C = 1.0 - c
    return np.array(
        [
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ]
    )
