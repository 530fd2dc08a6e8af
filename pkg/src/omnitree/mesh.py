"""Triangle meshes: STL/OBJ ingestion, unit-cube normalization, containment."""
from __future__ import annotations

import math
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np


class MeshError(ValueError):
    pass


class NonWatertightMesh(MeshError):
    pass


@dataclass(frozen=True)
class TriangleMesh:
    vertices: np.ndarray  # (V, 3) float
    faces: np.ndarray  # (F, 3) int

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        f = np.asarray(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3 or f.ndim != 2 or f.shape[1] != 3:
            raise MeshError("vertices must be (V, 3) and faces (F, 3)")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


def _merge_vertices(corners: np.ndarray) -> TriangleMesh:
    """Merge bit-identical corner coordinates of a triangle soup."""
    flat = corners.reshape(-1, 3)
    verts, inverse = np.unique(flat, axis=0, return_inverse=True)
    return TriangleMesh(verts, inverse.reshape(-1, 3))


def _read_stl(data: bytes) -> TriangleMesh:
    if len(data) >= 84:
        (count,) = struct.unpack_from("<I", data, 80)
        if len(data) == 84 + 50 * count:
            rec = np.dtype([("normal", "<f4", 3), ("corners", "<f4", (3, 3)), ("attr", "<u2")])
            tris = np.frombuffer(data, dtype=rec, count=count, offset=84)
            return _merge_vertices(tris["corners"].astype(float))
    text = data.decode("ascii", errors="replace")
    if not text.lstrip().lower().startswith("solid"):
        raise MeshError("not a binary or ASCII STL file")
    coords = [list(map(float, line.split()[1:4]))
              for line in text.splitlines() if line.strip().lower().startswith("vertex")]
    if not coords or len(coords) % 3:
        raise MeshError("malformed ASCII STL")
    return _merge_vertices(np.array(coords, dtype=float).reshape(-1, 3, 3))


def _read_obj(text: str) -> TriangleMesh:
    verts, faces = [], []
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "v":
            verts.append([float(p) for p in parts[1:4]])
        elif parts[0] == "f":
            idx = []
            for p in parts[1:]:
                i = int(p.split("/")[0])
                idx.append(i - 1 if i > 0 else len(verts) + i)
            for k in range(1, len(idx) - 1):  # fan triangulation
                faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts or not faces:
        raise MeshError("OBJ file without vertices or faces")
    return TriangleMesh(np.array(verts), np.array(faces))


def load_mesh(path) -> TriangleMesh:
    """Read an STL (binary or ASCII) or OBJ file and check it is watertight."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise MeshError(f"cannot read mesh {path}: {exc}") from exc
    suffix = path.suffix.lower()
    if suffix == ".stl":
        reader = _read_stl
    elif suffix == ".obj":
        reader = lambda b: _read_obj(b.decode("utf-8", errors="replace"))
    else:
        raise MeshError(f"unsupported mesh format {suffix!r}")
    try:
        mesh = reader(data)
    except (ValueError, IndexError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    validate_watertight(mesh)
    return mesh


def validate_watertight(mesh: TriangleMesh) -> None:
    """Every undirected edge must border exactly two triangles."""
    f = mesh.faces
    if len(f) == 0:
        raise NonWatertightMesh("mesh has no faces")
    edges = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    _, counts = np.unique(np.sort(edges, axis=1), axis=0, return_counts=True)
    if np.any(counts != 2):
        raise NonWatertightMesh(f"{int(np.sum(counts != 2))} edges are not shared by exactly two triangles")


def is_consistently_oriented(mesh: TriangleMesh) -> bool:
    f = mesh.faces
    directed = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    return len(np.unique(directed, axis=0)) == len(directed)


def normalize_mesh(mesh: TriangleMesh) -> TriangleMesh:
    """Scale uniformly so the largest extent spans [0, 1]; center the rest at 0.5."""
    if len(mesh.vertices) == 0:
        raise MeshError("empty mesh")
    lo, hi = mesh.bounds
    extent = float(np.max(hi - lo))
    if not extent > 0:
        raise MeshError("degenerate mesh with zero extent")
    center = 0.5 * (lo + hi)
    return TriangleMesh((mesh.vertices - center) / extent + 0.5, mesh.faces)


def box_mesh(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0)) -> TriangleMesh:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    corners = np.array([[(hi if (k >> j) & 1 else lo)[j] for j in range(3)] for k in range(8)])
    faces = np.array([
        [0, 2, 1], [1, 2, 3],  # z = lo
        [4, 5, 6], [5, 7, 6],  # z = hi
        [0, 1, 4], [1, 5, 4],  # y = lo
        [2, 6, 3], [3, 6, 7],  # y = hi
        [0, 4, 2], [2, 4, 6],  # x = lo
        [1, 3, 5], [3, 7, 5],  # x = hi
    ])
    return TriangleMesh(corners, faces)


def icosphere(subdivisions: int = 4, radius: float = 1.0, center=(0.0, 0.0, 0.0)) -> TriangleMesh:
    """Geodesic sphere from a subdivided icosahedron."""
    p = (1 + math.sqrt(5)) / 2
    verts = [(-1, p, 0), (1, p, 0), (-1, -p, 0), (1, -p, 0), (0, -1, p), (0, 1, p),
             (0, -1, -p), (0, 1, -p), (p, 0, -1), (p, 0, 1), (-p, 0, -1), (-p, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = np.array(verts) * radius + np.asarray(center, float)
    return TriangleMesh(v, np.array(faces))


def save_stl(mesh: TriangleMesh, path) -> None:
    """Write a binary STL."""
    tri = mesh.vertices[mesh.faces]
    normals = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    rec = np.dtype([("normal", "<f4", 3), ("corners", "<f4", (3, 3)), ("attr", "<u2")])
    out = np.zeros(len(tri), dtype=rec)
    out["normal"] = normals
    out["corners"] = tri
    with open(path, "wb") as fh:
        fh.write(b"\0" * 80 + struct.pack("<I", len(tri)) + out.tobytes())


PRIMARY_DIRECTION = (1.0, math.sqrt(2) - 1.0, math.sqrt(3) - 1.5)
FALLBACK_DIRECTIONS = (
    (math.sqrt(5) - 2.0, 1.0, math.pi - 3.0),
    (math.e - 2.5, math.sqrt(7) - 2.5, 1.0),
    (-1.0, math.sqrt(11) - 3.0, math.sqrt(2) / 3.0),
    (math.sqrt(13) - 3.5, -1.0, math.log(3.0) - 1.0),
    (math.pi / 10.0, math.sqrt(17) - 4.0, -1.0),
    (1.0, -math.sqrt(19) + 4.5, math.sqrt(23) - 4.5),
    (-math.sqrt(29) + 5.0, math.log(5.0) - 1.5, 1.0),
)

_EPS = 1e-9


class _DirectionGrid:
    """Triangles projected along a ray direction, binned on a uniform 2-d grid."""

    def __init__(self, mesh: TriangleMesh, direction):
        d = np.asarray(direction, float)
        d /= np.linalg.norm(d)
        helper = np.array([1.0, 0.0, 0.0]) if abs(d[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        u = np.cross(d, helper)
        u /= np.linalg.norm(u)
        v = np.cross(d, u)
        self.dir, self.basis = d, np.stack([u, v], axis=1)  # (3, 2)
        tri = mesh.vertices[mesh.faces]  # (F, 3, 3)
        self.v0 = tri[:, 0]
        self.normal = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        self.p2 = tri @ self.basis  # (F, 3, 2)
        self.area2 = ((self.p2[:, 1, 0] - self.p2[:, 0, 0]) * (self.p2[:, 2, 1] - self.p2[:, 0, 1])
                      - (self.p2[:, 1, 1] - self.p2[:, 0, 1]) * (self.p2[:, 2, 0] - self.p2[:, 0, 0]))
        lo, hi = self.p2.min(axis=1), self.p2.max(axis=1)
        self.lo = lo.min(axis=0) - 1e-12
        span = np.maximum(hi.max(axis=0) - self.lo, 1e-12)
        g = int(np.clip(math.ceil(math.sqrt(len(tri))), 8, 512))
        self.g, self.cell = g, span * (1 + 1e-9) / g
        c0 = np.clip(((lo - self.lo) / self.cell).astype(np.int64), 0, g - 1)
        c1 = np.clip(((hi - self.lo) / self.cell).astype(np.int64), 0, g - 1)
        nx, ny = c1[:, 0] - c0[:, 0] + 1, c1[:, 1] - c0[:, 1] + 1
        count = nx * ny
        tri_id = np.repeat(np.arange(len(tri)), count)
        local = np.arange(count.sum()) - np.repeat(np.cumsum(count) - count, count)
        cx = np.repeat(c0[:, 0], count) + local % np.repeat(nx, count)
        cy = np.repeat(c0[:, 1], count) + local // np.repeat(nx, count)
        cell_id = cx * g + cy
        order = np.argsort(cell_id, kind="stable")
        self.cell_tris = tri_id[order]
        self.cell_start = np.searchsorted(cell_id[order], np.arange(g * g + 1))

    def cast(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Crossing parity and ambiguity flag per point."""
        pp = points @ self.basis
        c = np.floor((pp - self.lo) / self.cell).astype(np.int64)
        inside = np.all((c >= 0) & (c < self.g), axis=1)
        cid = np.where(inside, c[:, 0] * self.g + c[:, 1], 0)
        start = self.cell_start[cid]
        count = np.where(inside, self.cell_start[cid + 1] - start, 0)
        pt = np.repeat(np.arange(len(points)), count)
        offs = np.arange(count.sum()) - np.repeat(np.cumsum(count) - count, count)
        tri = self.cell_tris[np.repeat(start, count) + offs]

        q = pp[pt]
        a, b, cc = self.p2[tri, 0], self.p2[tri, 1], self.p2[tri, 2]

        def edge(p0, p1):
            return (p1[:, 0] - p0[:, 0]) * (q[:, 1] - p0[:, 1]) - (p1[:, 1] - p0[:, 1]) * (q[:, 0] - p0[:, 0])

        area = self.area2[tri]
        degenerate = np.abs(area) <= _EPS * np.max(np.abs(self.area2))
        safe = np.where(degenerate, 1.0, area)
        w = np.stack([edge(b, cc), edge(cc, a), edge(a, b)], axis=1) / safe[:, None]
        hit = np.all(w >= 0, axis=1) & ~degenerate
        near_edge = np.all(w >= -_EPS, axis=1) & np.any(np.abs(w) <= _EPS, axis=1)
        # ray parameter along the direction from the query point to the plane
        nrm = self.normal[tri]
        denom = nrm @ self.dir
        tpar = np.einsum("ij,ij->i", nrm, self.v0[tri] - points[pt]) / np.where(denom == 0, 1.0, denom)
        scale = np.linalg.norm(nrm, axis=1)
        on_surface = hit & (np.abs(tpar) * np.abs(denom) <= _EPS * scale)
        crossing = hit & (tpar > 0)
        ambiguous_pair = near_edge | on_surface | (degenerate & np.all(w >= -_EPS, axis=1))

        parity = np.bincount(pt, weights=crossing, minlength=len(points)).astype(np.int64) % 2 == 1
        ambiguous = np.bincount(pt, weights=ambiguous_pair, minlength=len(points)) > 0
        return parity, ambiguous


class RayCaster:
    """Deterministic ray-parity containment with fallback directions.

    Points whose primary ray grazes a vertex or edge (within 1e-9 in
    barycentric terms) are re-cast along all fallback directions and decided
    by majority vote over the unambiguous casts.
    """

    def __init__(self, mesh: TriangleMesh, primary=PRIMARY_DIRECTION, fallbacks=FALLBACK_DIRECTIONS):
        self.mesh = mesh
        self._directions = (primary, *fallbacks)
        self._grids: dict[int, _DirectionGrid] = {0: _DirectionGrid(mesh, primary)}
        self._lock = threading.Lock()

    def _grid(self, k: int) -> _DirectionGrid:
        with self._lock:
            if k not in self._grids:
                self._grids[k] = _DirectionGrid(self.mesh, self._directions[k])
            return self._grids[k]

    def contains(self, points, chunk: int = 1 << 15) -> np.ndarray:
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        out = np.empty(len(points), dtype=bool)
        for s in range(0, len(points), chunk):
            out[s:s + chunk] = self._contains(points[s:s + chunk])
        return out

    def _contains(self, points: np.ndarray) -> np.ndarray:
        parity, ambiguous = self._grids[0].cast(points)
        idx = np.flatnonzero(ambiguous)
        if idx.size:
            votes = np.zeros(idx.size)
            valid = np.zeros(idx.size)
            for k in range(1, len(self._directions)):
                p, a = self._grid(k).cast(points[idx])
                votes += p & ~a
                valid += ~a
            parity[idx] = np.where(valid > 0, votes * 2 > valid, parity[idx])
        return parity
