"""Ground-truth membership functions on the unit cube.

Oracles are vectorized: ``oracle(points)`` takes an (n, d) array and returns
a boolean array. Three-dimensional base shapes also report the bounding box
of their rotated copies, which the time-rotation lift needs to re-normalize
at every time.
"""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np
from scipy.spatial import ConvexHull

from .mesh import MeshError, RayCaster, TriangleMesh, load_mesh, normalize_mesh

CENTER = np.full(3, 0.5)
ROTATION_AXIS = np.ones(3) / math.sqrt(3.0)


class ShapeError(ValueError):
    pass


class ShapeOracle:
    d = 3
    name = "shape"

    def __call__(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        if points.ndim != 2 or points.shape[1] != self.d:
            raise ValueError(f"{self.name} expects points of shape (n, {self.d})")
        return self._contains(points)

    def evaluate(self, x) -> int:
        return int(self(np.asarray(x, dtype=float).reshape(1, -1))[0])

    def _contains(self, p: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def rotated_bounds(self, rot: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Bounding boxes of the shape rotated by each of ``rot`` (n, 3, 3) about the cube center."""
        raise NotImplementedError(f"{self.name} cannot be time-rotated")

    def __repr__(self):
        return f"<{type(self).__name__} {self.name} d={self.d}>"


def _vertex_bounds(vertices: np.ndarray, rot: np.ndarray, chunk: int = 4096):
    rel = vertices - CENTER
    lo = np.empty((len(rot), 3))
    hi = np.empty((len(rot), 3))
    for s in range(0, len(rot), chunk):
        r = np.einsum("nij,vj->nvi", rot[s:s + chunk], rel)
        lo[s:s + chunk] = r.min(axis=1) + CENTER
        hi[s:s + chunk] = r.max(axis=1) + CENTER
    return lo, hi


def _in_box(p: np.ndarray) -> np.ndarray:
    return np.all((p >= 0.0) & (p <= 1.0), axis=1)


class Empty(ShapeOracle):
    name = "empty"

    def __init__(self, d: int = 3):
        self.d = d

    def _contains(self, p):
        return np.zeros(len(p), dtype=bool)


class Cube(ShapeOracle):
    """The whole unit cube."""

    name = "cube"
    _vertices = np.array([[(k >> j) & 1 for j in range(3)] for k in range(8)], dtype=float)

    def __init__(self, d: int = 3):
        self.d = d

    def _contains(self, p):
        return _in_box(p)

    def rotated_bounds(self, rot):
        return _vertex_bounds(self._vertices, rot)


class Sphere(ShapeOracle):
    """Ball of radius 0.5 around the cube center."""

    name = "sphere"

    def __init__(self, d: int = 3):
        self.d = d

    def _contains(self, p):
        return np.sum((p - 0.5) ** 2, axis=1) <= 0.25

    def rotated_bounds(self, rot):
        n = len(rot)
        return np.zeros((n, 3)), np.ones((n, 3))


class Tetrahedron(ShapeOracle):
    """Corner simplex x0 + x1 + x2 <= 1 with x >= 0."""

    name = "tetrahedron"
    _vertices = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)

    def _contains(self, p):
        return np.all(p >= 0.0, axis=1) & (p.sum(axis=1) <= 1.0)

    def rotated_bounds(self, rot):
        return _vertex_bounds(self._vertices, rot)


class HalfSpace(ShapeOracle):
    """Points of the unit cube with ``x[axis] < c``."""

    def __init__(self, c: float, axis: int = 0, d: int = 3):
        if not 0.0 < c < 1.0:
            raise ShapeError("halfspace threshold must lie in (0, 1)")
        if not 0 <= axis < d:
            raise ShapeError(f"axis {axis} out of range for d={d}")
        self.c, self.axis, self.d = float(c), int(axis), d
        self.name = f"halfspace:{axis}:{c:g}"

    def _contains(self, p):
        return _in_box(p) & (p[:, self.axis] < self.c)

    def rotated_bounds(self, rot):
        if self.d != 3:
            raise NotImplementedError("only 3-d halfspaces can be time-rotated")
        v = Cube._vertices.copy()
        v[:, self.axis] *= self.c
        return _vertex_bounds(v, rot)


class Rod(ShapeOracle):
    """Cylinder of radius 0.05 and length 1, tilted and fitted to the unit cube.

    The cylinder starts along the z axis, is rotated by pi/4 about (1, 1, 0)
    and then scaled so its largest bounding-box extent is exactly 1.
    """

    name = "rod"

    def __init__(self, radius: float = 0.05, length: float = 1.0):
        tilt = rotation_matrices(np.array([math.pi / 4]), np.array([1.0, 1.0, 0.0]) / math.sqrt(2.0))[0]
        self.axis = tilt @ np.array([0.0, 0.0, 1.0])
        ext = self._extent(self.axis[None, :], 0.5 * length, radius)[0]
        self.scale = 1.0 / ext.max()
        self.half_length = 0.5 * length * self.scale
        self.radius = radius * self.scale

    @staticmethod
    def _extent(axes, half_length, radius):
        return 2 * (half_length * np.abs(axes) + radius * np.sqrt(np.clip(1 - axes ** 2, 0, None)))

    def _contains(self, p):
        v = p - CENTER
        axial = v @ self.axis
        radial2 = np.einsum("ij,ij->i", v, v) - axial ** 2
        return (np.abs(axial) <= self.half_length) & (radial2 <= self.radius ** 2)

    def rotated_bounds(self, rot):
        half = 0.5 * self._extent(rot @ self.axis, self.half_length, self.radius)
        return CENTER - half, CENTER + half


class MeshShape(ShapeOracle):
    """Watertight mesh, normalized to the unit cube on construction."""

    def __init__(self, mesh: TriangleMesh, name: str = "mesh"):
        self.mesh = normalize_mesh(mesh)
        self.name = name
        self._caster = RayCaster(self.mesh)
        try:
            hull = ConvexHull(self.mesh.vertices)
            self._hull = self.mesh.vertices[hull.vertices]
        except Exception:  # flat or degenerate hulls: fall back to all vertices
            self._hull = self.mesh.vertices

    @classmethod
    def from_file(cls, path) -> MeshShape:
        return cls(load_mesh(path), name=f"mesh:{path}")

    def _contains(self, p):
        inside = _in_box(p)
        out = np.zeros(len(p), dtype=bool)
        if inside.any():
            out[inside] = self._caster.contains(p[inside])
        return out

    def rotated_bounds(self, rot):
        return _vertex_bounds(self._hull, rot)


def rotation_matrices(angles: np.ndarray, axis: np.ndarray) -> np.ndarray:
    """Rodrigues rotation matrices, shape (n, 3, 3), about a unit ``axis``."""
    k = np.asarray(axis, dtype=float)
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    c = np.cos(angles)[:, None, None]
    s = np.sin(angles)[:, None, None]
    return c * np.eye(3) + s * kx + (1 - c) * np.outer(k, k)


class TimeRotated(ShapeOracle):
    """4-d oracle: the base shape rotated by 2*pi*t about the main diagonal.

    At every time the rotated shape is re-fitted to the unit cube the same
    way meshes are normalized. Queries are mapped back by undoing the fit and
    applying the inverse rotation.
    """

    d = 4

    def __init__(self, base: ShapeOracle):
        if base.d != 3:
            raise ShapeError("only 3-d shapes can be time-rotated")
        self.base = base
        self.name = f"{base.name}+time"

    def _contains(self, p):
        x, t = p[:, :3], p[:, 3]
        rot = rotation_matrices(2 * math.pi * t, ROTATION_AXIS)
        lo, hi = self.base.rotated_bounds(rot)
        extent = (hi - lo).max(axis=1, keepdims=True)
        y = (x - 0.5) * extent + 0.5 * (lo + hi)
        # inverse rotation: R^T (y - c)
        z = np.einsum("nji,nj->ni", rot, y - CENTER) + CENTER
        return self.base(z)


def rotate_time(base: ShapeOracle) -> TimeRotated:
    return TimeRotated(base)


def analytic_oracle(name: str, *args, **kwargs) -> ShapeOracle:
    shapes = {"cube": Cube, "sphere": Sphere, "tetrahedron": Tetrahedron,
              "rod": Rod, "halfspace": HalfSpace, "empty": Empty}
    if name not in shapes:
        raise ShapeError(f"unknown shape {name!r}")
    return shapes[name](*args, **kwargs)


def parse_shape(text: str, time_rotate: bool = False) -> ShapeOracle:
    """Parse ``cube | sphere | tetrahedron | rod | halfspace:<axis>:<c> | mesh:<path>``."""
    text = text.strip()
    if text in ("cube", "sphere", "tetrahedron", "rod"):
        base = analytic_oracle(text)
    elif text.startswith("halfspace:"):
        parts = text.split(":")
        if len(parts) != 3:
            raise ShapeError("halfspace shapes must be halfspace:<axis>:<c>")
        try:
            axis, c = int(parts[1]), float(parts[2])
        except ValueError as exc:
            raise ShapeError(f"bad halfspace shape {text!r}") from exc
        base = HalfSpace(c, axis)
    elif text.startswith("mesh:"):
        path = Path(text[len("mesh:"):])
        try:
            base = MeshShape.from_file(path)
        except MeshError as exc:
            raise ShapeError(str(exc)) from exc
    else:
        raise ShapeError(f"unknown shape {text!r}")
    return TimeRotated(base) if time_rotate else base
