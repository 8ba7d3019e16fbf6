"""Surface-mesh ingestion: legacy VTK polydata, the ABM1 cache format, geometry stats.

Pressure fields are kinematic (p/rho, m^2/s^2) and attached to vertices.
All coordinates and field values are held as float64 regardless of how the
file stored them.
"""

from __future__ import annotations

import math
import re
import struct
import zlib
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    CellDataOnly,
    ChecksumMismatch,
    IndexOutOfRange,
    InvalidMesh,
    MeshFormatError,
    MissingField,
    NonTriangleFace,
    TruncatedStream,
    UnsupportedSection,
    VersionMismatch,
)

DEGENERATE_AREA = 1e-12


class Category(str, Enum):
    FASTBACK = "F"
    ESTATEBACK = "E"
    NOTCHBACK = "N"
    UNKNOWN = "U"

    @classmethod
    def parse(cls, text: "str | Category") -> "Category":
        if isinstance(text, Category):
            return text
        key = str(text).strip().lower()
        for cat in cls:
            if key in (cat.value.lower(), cat.name.lower(), cat.long_name.lower()):
                return cat
        raise ValueError(f"unknown category {text!r}")

    @classmethod
    def from_design_id(cls, design_id: str) -> "Category":
        prefix = design_id[:2].upper()
        return {"F_": cls.FASTBACK, "E_": cls.ESTATEBACK, "N_": cls.NOTCHBACK}.get(prefix, cls.UNKNOWN)

    @property
    def long_name(self) -> str:
        return {"F": "Fastback", "E": "Estateback", "N": "Notchback", "U": "Unknown"}[self.value]


# ABM1 category codes
_CATEGORY_CODE = {Category.UNKNOWN: 0, Category.FASTBACK: 1, Category.ESTATEBACK: 2, Category.NOTCHBACK: 3}
_CODE_CATEGORY = {v: k for k, v in _CATEGORY_CODE.items()}


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Triangulated surface with per-vertex scalar fields. Immutable once built."""

    design_id: str
    vertices: np.ndarray
    triangles: np.ndarray
    point_fields: dict = field(default_factory=dict)
    category: Category = Category.UNKNOWN

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
            raise IndexOutOfRange(
                f"{self.design_id}: triangle index outside [0, {len(vertices)})"
            )
        fields = {}
        for name, values in self.point_fields.items():
            values = np.asarray(values, dtype=np.float64).reshape(-1)
            if len(values) != len(vertices):
                raise InvalidMesh(
                    f"{self.design_id}: field {name!r} has {len(values)} values for {len(vertices)} vertices"
                )
            fields[str(name)] = _frozen(values)
        object.__setattr__(self, "vertices", _frozen(vertices))
        object.__setattr__(self, "triangles", _frozen(triangles))
        object.__setattr__(self, "point_fields", fields)
        object.__setattr__(self, "category", Category.parse(self.category))

    @property
    def n_points(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.triangles)

    def field(self, name: str) -> np.ndarray:
        try:
            return self.point_fields[name]
        except KeyError:
            raise MissingField(f"{self.design_id}: no point field {name!r}") from None

    def face_cross(self) -> np.ndarray:
        """(v1 - v0) x (v2 - v0) per face; its norm is twice the face area."""
        v = self.vertices
        t = self.triangles
        return np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self.face_cross(), axis=1)

    def degenerate_faces(self, tol: float = DEGENERATE_AREA) -> np.ndarray:
        return np.flatnonzero(self.face_areas() <= tol)

    def with_fields(self, **fields) -> "SurfaceMesh":
        merged = dict(self.point_fields)
        merged.update(fields)
        return SurfaceMesh(self.design_id, self.vertices, self.triangles, merged, self.category)

    def equals(self, other: "SurfaceMesh") -> bool:
        """Exact (bitwise for floats) equality of every stored attribute."""
        if (self.design_id, self.category) != (other.design_id, other.category):
            return False
        if list(self.point_fields) != list(other.point_fields):
            return False
        if self.vertices.shape != other.vertices.shape or self.triangles.shape != other.triangles.shape:
            return False
        if self.vertices.tobytes() != other.vertices.tobytes():
            return False
        if not np.array_equal(self.triangles, other.triangles):
            return False
        return all(
            self.point_fields[k].tobytes() == other.point_fields[k].tobytes() for k in self.point_fields
        )


@dataclass(frozen=True)
class GeometryStats:
    n_points: int
    n_cells: int
    surface_area: float  # m^2


def geometry_stats(mesh: SurfaceMesh) -> GeometryStats:
    # fsum makes the total independent of face order
    area = math.fsum(mesh.face_areas().tolist()) if mesh.n_cells else 0.0
    return GeometryStats(mesh.n_points, mesh.n_cells, area)


# ---------------------------------------------------------------------------
# legacy VTK polydata
# ---------------------------------------------------------------------------

_VTK_DTYPES = {
    "unsigned_char": "u1",
    "char": "i1",
    "unsigned_short": "u2",
    "short": "i2",
    "unsigned_int": "u4",
    "int": "i4",
    "unsigned_long": "u8",
    "long": "i8",
    "float": "f4",
    "double": "f8",
    "vtktypeint32": "i4",
    "vtktypeuint32": "u4",
    "vtktypeint64": "i8",
    "vtktypeuint64": "u8",
    "vtkidtype": "i8",
}

_TOKEN = re.compile(rb"\S+")


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0
        self.binary = False

    def line(self) -> str:
        if self.pos >= len(self.data):
            raise TruncatedStream("unexpected end of stream")
        end = self.data.find(b"\n", self.pos)
        if end < 0:
            end = len(self.data)
        raw = self.data[self.pos:end]
        self.pos = end + 1
        return raw.decode("latin-1").strip()

    def keyword_line(self) -> list[str] | None:
        """Next non-blank line split into tokens, or None at end of stream."""
        while self.pos < len(self.data):
            text = self.line()
            if text:
                return text.split()
        return None

    def startswith(self, prefix: bytes) -> bool:
        return self.data.startswith(prefix, self.pos)

    def values(self, count: int, vtk_type: str) -> np.ndarray:
        code = _VTK_DTYPES.get(vtk_type.lower())
        if code is None:
            raise UnsupportedSection(f"unsupported VTK data type {vtk_type!r}")
        if count == 0:
            return np.empty(0, dtype=code)
        if self.binary:
            dtype = np.dtype(">" + code)
            nbytes = count * dtype.itemsize
            if self.pos + nbytes > len(self.data):
                raise TruncatedStream(f"need {nbytes} bytes of {vtk_type}, stream ends first")
            out = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.pos)
            self.pos += nbytes
            return out.astype(code)
        tokens = []
        end = self.pos
        for match in _TOKEN.finditer(self.data, self.pos):
            tokens.append(match.group())
            end = match.end()
            if len(tokens) == count:
                break
        if len(tokens) < count:
            raise TruncatedStream(f"expected {count} {vtk_type} values, found {len(tokens)}")
        self.pos = end
        text = np.array(tokens)
        try:
            if code.startswith("f"):
                return text.astype(np.float64)
            return text.astype(np.int64)
        except ValueError as exc:
            raise MeshFormatError(f"malformed {vtk_type} value: {exc}") from None


def _triangulate(counts: np.ndarray, connectivity: np.ndarray, strict: bool) -> np.ndarray:
    if len(counts) == 0:
        return np.empty((0, 3), dtype=np.int64)
    if np.all(counts == 3):
        return connectivity.reshape(-1, 3)
    bad = counts[counts != 3]
    if strict:
        raise NonTriangleFace(f"polygon with {int(bad[0])} vertices in strict mode")
    if np.any(counts < 3):
        raise NonTriangleFace("polygon with fewer than 3 vertices")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    tris = []
    for start, arity in zip(starts.tolist(), counts.tolist()):
        poly = connectivity[start:start + arity]
        for i in range(1, arity - 1):
            tris.append((poly[0], poly[i], poly[i + 1]))
    return np.asarray(tris, dtype=np.int64)


def _legacy_cells(flat: np.ndarray, n_cells: int) -> tuple[np.ndarray, np.ndarray]:
    flat = flat.astype(np.int64)
    if len(flat) == 4 * n_cells and np.all(flat[0::4] == 3):
        return np.full(n_cells, 3, dtype=np.int64), flat.reshape(-1, 4)[:, 1:].reshape(-1)
    counts = np.empty(n_cells, dtype=np.int64)
    keep = np.ones(len(flat), dtype=bool)
    pos = 0
    for i in range(n_cells):
        if pos >= len(flat):
            raise TruncatedStream("polygon list shorter than declared")
        counts[i] = flat[pos]
        keep[pos] = False
        pos += int(flat[pos]) + 1
    if pos != len(flat):
        raise MeshFormatError("polygon list size does not match its cell counts")
    return counts, flat[keep]


def parse_vtk_polydata(
    data: bytes,
    design_id: str = "",
    category: "Category | str | None" = None,
    strict: bool = False,
) -> SurfaceMesh:
    """Parse a legacy VTK (ASCII or big-endian BINARY) POLYDATA byte stream.

    Handles both the classic ``POLYGONS n size`` cell list and the
    OFFSETS/CONNECTIVITY layout written by VTK >= 9.  Single-component point
    scalars (SCALARS and FIELD arrays) become ``point_fields``; vectors,
    normals, tensors and cell data are read and discarded.  Polygons with
    more than three vertices are fan-triangulated unless ``strict``.
    """
    reader = _Reader(bytes(data))
    header = reader.line()
    if not header.lower().startswith("# vtk datafile"):
        raise BadMagic("missing '# vtk DataFile Version' header")
    reader.line()  # title
    fmt = reader.line().upper()
    if fmt not in ("ASCII", "BINARY"):
        raise MeshFormatError(f"unknown legacy VTK format {fmt!r}")
    reader.binary = fmt == "BINARY"
    dataset = reader.keyword_line()
    if not dataset or dataset[0].upper() != "DATASET":
        raise MeshFormatError("missing DATASET line")
    if len(dataset) < 2 or dataset[1].upper() != "POLYDATA":
        raise UnsupportedSection(f"dataset type {' '.join(dataset[1:])!r} is not POLYDATA")

    vertices = None
    counts = np.empty(0, dtype=np.int64)
    connectivity = np.empty(0, dtype=np.int64)
    fields: dict[str, np.ndarray] = {}
    attribute = None  # "POINT" or "CELL"
    attr_count = 0
    saw_cell_data = False

    def store(name, values, ncomp):
        if attribute == "POINT" and ncomp == 1:
            fields[name] = values.astype(np.float64)

    while True:
        words = reader.keyword_line()
        if words is None:
            break
        key = words[0].upper()
        if key == "POINTS":
            n = int(words[1])
            vertices = reader.values(3 * n, words[2]).astype(np.float64).reshape(n, 3)
        elif key == "POLYGONS":
            n_cells, size = int(words[1]), int(words[2])
            if reader.startswith(b"OFFSETS"):
                off_words = reader.keyword_line()
                offsets = reader.values(n_cells, off_words[1]).astype(np.int64)
                conn_words = reader.keyword_line()
                if not conn_words or conn_words[0].upper() != "CONNECTIVITY":
                    raise MeshFormatError("OFFSETS not followed by CONNECTIVITY")
                connectivity = reader.values(size, conn_words[1]).astype(np.int64)
                counts = np.diff(offsets)
            else:
                flat = reader.values(size, "int")
                counts, connectivity = _legacy_cells(flat, n_cells)
        elif key in ("VERTICES", "LINES", "TRIANGLE_STRIPS"):
            raise UnsupportedSection(f"{key} cells are not supported")
        elif key in ("POINT_DATA", "CELL_DATA"):
            attribute = key.split("_")[0]
            attr_count = int(words[1])
            saw_cell_data |= attribute == "CELL"
        elif key == "SCALARS":
            name, vtk_type = words[1], words[2]
            ncomp = int(words[3]) if len(words) > 3 else 1
            if reader.startswith(b"LOOKUP_TABLE"):
                reader.line()
            store(name, reader.values(attr_count * ncomp, vtk_type), ncomp)
        elif key in ("VECTORS", "NORMALS"):
            reader.values(3 * attr_count, words[2])
        elif key == "TENSORS":
            reader.values(9 * attr_count, words[2])
        elif key == "TEXTURE_COORDINATES":
            reader.values(int(words[2]) * attr_count, words[3])
        elif key == "COLOR_SCALARS":
            reader.values(int(words[2]) * attr_count, "unsigned_char" if reader.binary else "float")
        elif key == "LOOKUP_TABLE":
            reader.values(4 * int(words[2]), "unsigned_char" if reader.binary else "float")
        elif key == "FIELD":
            for _ in range(int(words[2])):
                arr = reader.keyword_line()
                if arr is None:
                    raise TruncatedStream("FIELD section ends early")
                name, ncomp, ntup, vtk_type = arr[0], int(arr[1]), int(arr[2]), arr[3]
                values = reader.values(ncomp * ntup, vtk_type)
                if ntup == attr_count:
                    store(name, values, ncomp)
                if reader.startswith(b"METADATA"):
                    _skip_metadata(reader)
        elif key == "METADATA":
            _skip_metadata(reader, consumed_keyword=True)
        else:
            raise UnsupportedSection(f"unsupported section {words[0]!r}")

    if vertices is None:
        raise MeshFormatError("no POINTS section")
    if saw_cell_data and not fields:
        raise CellDataOnly("file carries CELL_DATA only; point-associated pressure is required")
    triangles = _triangulate(counts, connectivity, strict)
    if triangles.size and (triangles.min() < 0 or triangles.max() >= len(vertices)):
        raise IndexOutOfRange(f"polygon index >= point count {len(vertices)}")
    if category is None:
        category = Category.from_design_id(design_id)
    return SurfaceMesh(design_id, vertices, triangles, fields, Category.parse(category))


def _skip_metadata(reader: _Reader, consumed_keyword: bool = False) -> None:
    if not consumed_keyword:
        reader.line()
    while reader.pos < len(reader.data):
        if not reader.line():
            return


def write_vtk_polydata(
    mesh: SurfaceMesh, binary: bool = False, layout: str = "4.2", title: str | None = None
) -> bytes:
    """Serialise a mesh as legacy VTK polydata (layout '4.2' or '5.1')."""
    parts: list[bytes] = []

    def text(s: str):
        parts.append(s.encode("ascii") + b"\n")

    def block(values: np.ndarray, code: str):
        if binary:
            parts.append(np.ascontiguousarray(values, dtype=">" + code).tobytes() + b"\n")
        else:
            fmt = "%.17g" if code.startswith("f") else "%d"
            flat = np.asarray(values).reshape(-1)
            rows = [" ".join(fmt % v for v in flat[i:i + 9]) for i in range(0, len(flat), 9)]
            parts.append(("\n".join(rows) + "\n").encode("ascii") if rows else b"")

    version = "5.1" if layout == "5.1" else "4.2"
    text(f"# vtk DataFile Version {version}")
    text(title or mesh.design_id or "aerobench mesh")
    text("BINARY" if binary else "ASCII")
    text("DATASET POLYDATA")
    text(f"POINTS {mesh.n_points} double")
    block(mesh.vertices, "f8")
    m = mesh.n_cells
    if layout == "5.1":
        text(f"POLYGONS {m + 1} {3 * m}")
        text("OFFSETS vtktypeint64")
        block(np.arange(0, 3 * m + 1, 3, dtype=np.int64), "i8")
        text("CONNECTIVITY vtktypeint64")
        block(mesh.triangles, "i8")
    else:
        text(f"POLYGONS {m} {4 * m}")
        cells = np.hstack([np.full((m, 1), 3, dtype=np.int64), mesh.triangles])
        block(cells, "i4")
    if mesh.point_fields:
        text(f"POINT_DATA {mesh.n_points}")
        for name, values in mesh.point_fields.items():
            text(f"SCALARS {name} double 1")
            text("LOOKUP_TABLE default")
            block(values, "f8")
    return b"".join(parts)


# ---------------------------------------------------------------------------
# ABM1 native cache format
# ---------------------------------------------------------------------------

ABM_MAGIC = b"ABM1"
ABM_VERSION = 1


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def write_native(mesh: SurfaceMesh) -> bytes:
    """Encode ``mesh`` as ABM1.

    Layout (little-endian): magic, u32 version, then the payload
    (u32-length-prefixed design id, u8 category, u64 vertex count, f64 xyz,
    u64 triangle count, u32 index triples, u32 field count, fields), then a
    CRC32 of the payload.
    """
    if mesh.n_points and mesh.triangles.size and mesh.triangles.max() > 0xFFFFFFFF:
        raise InvalidMesh("vertex index does not fit in u32")
    payload = [
        _pack_str(mesh.design_id),
        struct.pack("<B", _CATEGORY_CODE[mesh.category]),
        struct.pack("<Q", mesh.n_points),
        np.ascontiguousarray(mesh.vertices, dtype="<f8").tobytes(),
        struct.pack("<Q", mesh.n_cells),
        np.ascontiguousarray(mesh.triangles, dtype="<u4").tobytes(),
        struct.pack("<I", len(mesh.point_fields)),
    ]
    for name, values in mesh.point_fields.items():
        payload.append(_pack_str(name))
        payload.append(struct.pack("<Q", len(values)))
        payload.append(np.ascontiguousarray(values, dtype="<f8").tobytes())
    body = b"".join(payload)
    return ABM_MAGIC + struct.pack("<I", ABM_VERSION) + body + struct.pack("<I", zlib.crc32(body))


class _Buffer:
    def __init__(self, data: bytes, start: int, end: int):
        self.data, self.pos, self.end = data, start, end

    def take(self, n: int) -> bytes:
        if self.pos + n > self.end:
            raise TruncatedStream("stream ends inside a record")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))[0]

    def string(self) -> str:
        return self.take(self.unpack("<I")).decode("utf-8")

    def array(self, count: int, dtype: str) -> np.ndarray:
        itemsize = np.dtype(dtype).itemsize
        return np.frombuffer(self.take(count * itemsize), dtype=dtype)


def parse_native(data: bytes) -> SurfaceMesh:
    data = bytes(data)
    if len(data) < 12:
        raise TruncatedStream("ABM1 stream shorter than its header")
    if data[:4] != ABM_MAGIC:
        raise BadMagic(f"expected {ABM_MAGIC!r}, got {data[:4]!r}")
    (version,) = struct.unpack("<I", data[4:8])
    if version != ABM_VERSION:
        raise VersionMismatch(f"ABM1 version {version}, reader supports {ABM_VERSION}")
    body_end = len(data) - 4
    (crc,) = struct.unpack("<I", data[body_end:])
    if zlib.crc32(data[8:body_end]) != crc:
        raise ChecksumMismatch("ABM1 payload CRC32 mismatch")
    buf = _Buffer(data, 8, body_end)
    design_id = buf.string()
    code = buf.unpack("<B")
    if code not in _CODE_CATEGORY:
        raise MeshFormatError(f"unknown category code {code}")
    nv = buf.unpack("<Q")
    vertices = buf.array(3 * nv, "<f8").reshape(nv, 3)
    nt = buf.unpack("<Q")
    triangles = buf.array(3 * nt, "<u4").astype(np.int64).reshape(nt, 3)
    fields = {}
    for _ in range(buf.unpack("<I")):
        name = buf.string()
        count = buf.unpack("<Q")
        fields[name] = buf.array(count, "<f8")
    if buf.pos != buf.end:
        raise MeshFormatError("trailing bytes after ABM1 payload")
    return SurfaceMesh(design_id, vertices, triangles, fields, _CODE_CATEGORY[code])


def load_mesh(path, design_id: str | None = None, category=None, strict: bool = False) -> SurfaceMesh:
    """Load a ``.vtk`` or ``.abm`` file; the manifest's id/category win over file contents."""
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == ABM_MAGIC:
        mesh = parse_native(data)
        if design_id is None and category is None:
            return mesh
        return SurfaceMesh(
            design_id if design_id is not None else mesh.design_id,
            mesh.vertices,
            mesh.triangles,
            mesh.point_fields,
            Category.parse(category) if category is not None else mesh.category,
        )
    design_id = design_id if design_id is not None else path.stem
    return parse_vtk_polydata(data, design_id, category, strict=strict)
