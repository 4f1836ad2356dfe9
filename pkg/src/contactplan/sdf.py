"""Signed distance fields: analytic primitives, baked voxel grids, scenes.

Objects are unions of primitives. Bounded unions are usually baked into a
discrete grid (trilinear interpolation inside, clamped-boundary value plus
Euclidean distance outside); unions containing a half-space stay analytic.
All query entry points are vectorized over (..., 3) point arrays.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .se3 import Pose

# Snap tolerance, in voxel units, for exact node reproduction in query().
_NODE_SNAP = 1e-9

_GRID_HEADER = struct.Struct("<3dd3I")


@dataclass(frozen=True)
class Sphere:
    radius: float

    def __post_init__(self):
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")

    def local_distance(self, pts: np.ndarray) -> np.ndarray:
        return np.linalg.norm(pts, axis=-1) - self.radius

    def local_bounds(self):
        r = self.radius
        return -r * np.ones(3), r * np.ones(3)


@dataclass(frozen=True)
class Box:
    half_extents: tuple

    def __post_init__(self):
        he = tuple(float(v) for v in self.half_extents)
        if len(he) != 3 or any(v <= 0 for v in he):
            raise ValueError("box half_extents must be 3 positive values")
        object.__setattr__(self, "half_extents", he)

    def local_distance(self, pts: np.ndarray) -> np.ndarray:
        q = np.abs(pts) - np.asarray(self.half_extents)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside

    def local_bounds(self):
        he = np.asarray(self.half_extents)
        return -he, he.copy()


@dataclass(frozen=True)
class Cylinder:
    """Solid cylinder with its axis along local z."""

    radius: float
    half_height: float

    def __post_init__(self):
        if self.radius <= 0 or self.half_height <= 0:
            raise ValueError("cylinder radius and half_height must be positive")

    def local_distance(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        dr = np.linalg.norm(pts[..., :2], axis=-1) - self.radius
        dz = np.abs(pts[..., 2]) - self.half_height
        q = np.stack([dr, dz], axis=-1)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.maximum(dr, dz), 0.0)
        return outside + inside

    def local_bounds(self):
        r, h = self.radius, self.half_height
        return np.array([-r, -r, -h]), np.array([r, r, h])


@dataclass(frozen=True)
class HalfSpace:
    """Material fills ``normal . p <= offset``."""

    normal: tuple
    offset: float

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=float).reshape(3)
        norm = np.linalg.norm(n)
        if norm < 1e-12:
            raise ValueError("half-space normal must be nonzero")
        object.__setattr__(self, "normal", tuple(n / norm))
        object.__setattr__(self, "offset", float(self.offset))

    def local_distance(self, pts: np.ndarray) -> np.ndarray:
        return np.asarray(pts, dtype=float) @ np.asarray(self.normal) - self.offset

    def local_bounds(self):
        raise ValueError("half-space has no bounded extent")


Geometry = Union[Sphere, Box, Cylinder, HalfSpace]


@dataclass(frozen=True)
class PlacedPrimitive:
    geom: Geometry
    pose: Pose = field(default_factory=Pose.identity)

    def distance(self, pts: np.ndarray) -> np.ndarray:
        return self.geom.local_distance(self.pose.inverse().transform_point(pts))


@dataclass(frozen=True)
class ShapeUnion:
    """Union of placed primitives; distance is the member-wise minimum.

    The minimum is exact outside the union and a lower bound inside
    overlapping members.
    """

    members: tuple

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("shape union needs at least one member")
        object.__setattr__(self, "members", members)

    def distance(self, pts: np.ndarray) -> np.ndarray:
        values = [m.distance(pts) for m in self.members]
        return np.minimum.reduce(values)

    def bounds(self):
        """Axis-aligned bounds of the union in the shape frame."""
        los, his = [], []
        for m in self.members:
            lo, hi = m.geom.local_bounds()
            corners = np.array(
                [[x, y, z] for x in (lo[0], hi[0]) for y in (lo[1], hi[1]) for z in (lo[2], hi[2])]
            )
            world = m.pose.transform_point(corners)
            los.append(world.min(axis=0))
            his.append(world.max(axis=0))
        return np.min(los, axis=0), np.max(his, axis=0)


def analytic_sdf(shape, pts: np.ndarray) -> np.ndarray:
    """Signed distance of point(s) to a primitive, placed primitive, or union."""
    pts = np.asarray(pts, dtype=float)
    if isinstance(shape, ShapeUnion):
        return shape.distance(pts)
    if isinstance(shape, PlacedPrimitive):
        return shape.distance(pts)
    return shape.local_distance(pts)


@dataclass
class SdfGrid:
    """Discrete SDF sampled on a regular lattice.

    `origin` is the position of node (0, 0, 0); nodes sit at
    ``origin + index * resolution`` and carry the field value there.
    """

    origin: np.ndarray
    resolution: float
    values: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float).reshape(3)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3:
            raise ValueError("values must be a 3D array")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @property
    def dims(self) -> tuple:
        return self.values.shape

    def node_position(self, index) -> np.ndarray:
        return self.origin + np.asarray(index, dtype=float) * self.resolution

    def upper_corner(self) -> np.ndarray:
        return self.origin + (np.asarray(self.dims) - 1) * self.resolution

    def query(self, pts: np.ndarray) -> np.ndarray:
        """Trilinear interpolation inside the node lattice.

        Outside, returns the value at the clamped boundary point plus the
        Euclidean distance to it, which keeps the field continuous and grows
        it at the Lipschitz rate in the far field.
        """
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        p = np.atleast_2d(pts).reshape(-1, 3)
        lo = self.origin
        hi = self.upper_corner()
        clamped = np.clip(p, lo, hi)
        extra = np.linalg.norm(p - clamped, axis=1)
        q = (clamped - lo) / self.resolution
        # Snap near-integer coordinates so exact node queries return the
        # stored value bit-for-bit.
        qr = np.round(q)
        snap = np.abs(q - qr) < _NODE_SNAP
        q = np.where(snap, qr, q)
        dims = np.asarray(self.dims)
        i0 = np.clip(np.floor(q).astype(int), 0, np.maximum(dims - 2, 0))
        f = q - i0
        i1 = np.minimum(i0 + 1, dims - 1)
        v = self.values
        out = np.zeros(len(p))
        for dx in (0, 1):
            wx = f[:, 0] if dx else 1.0 - f[:, 0]
            ix = i1[:, 0] if dx else i0[:, 0]
            for dy in (0, 1):
                wy = f[:, 1] if dy else 1.0 - f[:, 1]
                iy = i1[:, 1] if dy else i0[:, 1]
                for dz in (0, 1):
                    wz = f[:, 2] if dz else 1.0 - f[:, 2]
                    iz = i1[:, 2] if dz else i0[:, 2]
                    out += wx * wy * wz * v[ix, iy, iz]
        out += extra
        if single:
            return float(out[0])
        return out.reshape(pts.shape[:-1])

    def save(self, path) -> None:
        """Write the binary container (see README for the byte layout)."""
        path = Path(path)
        dims = self.values.shape
        header = _GRID_HEADER.pack(*self.origin, float(self.resolution), *dims)
        payload = np.ascontiguousarray(self.values, dtype="<f4").tobytes()
        path.write_bytes(header + payload)

    @staticmethod
    def load(path) -> "SdfGrid":
        raw = Path(path).read_bytes()
        if len(raw) < _GRID_HEADER.size:
            raise ValueError(f"not an SDF grid file: {path}")
        ox, oy, oz, res, nx, ny, nz = _GRID_HEADER.unpack_from(raw)
        expected = _GRID_HEADER.size + 4 * nx * ny * nz
        if len(raw) != expected:
            raise ValueError(
                f"SDF grid file size mismatch: got {len(raw)} bytes, expected {expected}"
            )
        values = np.frombuffer(raw, dtype="<f4", offset=_GRID_HEADER.size)
        values = values.reshape(nx, ny, nz).astype(float)
        return SdfGrid(np.array([ox, oy, oz]), float(res), values)


def bake_grid(shape, resolution: float, padding: float) -> SdfGrid:
    """Sample a shape's analytic SDF on a lattice covering its padded bounds."""
    if resolution <= 0:
        raise ValueError("resolution must be positive")
    if padding < 0:
        raise ValueError("padding must be nonnegative")
    if not isinstance(shape, ShapeUnion):
        shape = ShapeUnion((shape if isinstance(shape, PlacedPrimitive) else PlacedPrimitive(shape),))
    lo, hi = shape.bounds()
    lo = lo - padding
    hi = hi + padding
    dims = np.maximum(np.ceil((hi - lo) / resolution - 1e-12).astype(int) + 1, 1)
    axes = [lo[k] + resolution * np.arange(dims[k]) for k in range(3)]
    nodes = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    values = shape.distance(nodes.reshape(-1, 3)).reshape(tuple(dims))
    return SdfGrid(lo, resolution, values)


@dataclass
class SceneObject:
    """One rigid object: analytic shape, optional baked grid, world pose."""

    name: str
    shape: ShapeUnion
    pose: Pose
    grid: Optional[SdfGrid] = None

    def local_distance(self, pts_local: np.ndarray) -> np.ndarray:
        if self.grid is not None:
            return self.grid.query(pts_local)
        return self.shape.distance(pts_local)


class Scene:
    """Immutable collection of posed objects with a grasp target.

    All distance queries are read-only and safe to share across threads.
    """

    def __init__(
        self,
        objects: Sequence[SceneObject],
        target_index: int,
        grasp_in_target: Pose,
        up_axis=(0.0, 0.0, 1.0),
        sdf_resolution: float = 0.01,
    ):
        self.objects = list(objects)
        if not self.objects:
            raise ValueError("empty scene")
        if not 0 <= target_index < len(self.objects):
            raise ValueError(f"target_index {target_index} out of range")
        self.target_index = int(target_index)
        self.grasp_in_target = grasp_in_target
        self.up_axis = np.asarray(up_axis, dtype=float) / np.linalg.norm(up_axis)
        self.sdf_resolution = float(sdf_resolution)
        self._inverse_poses = [obj.pose.inverse() for obj in self.objects]

    def __len__(self) -> int:
        return len(self.objects)

    def grasp_pose_world(self) -> Pose:
        return self.objects[self.target_index].pose.compose(self.grasp_in_target)

    def with_object_poses(self, poses: Sequence[Pose]) -> "Scene":
        """New scene sharing geometry but with replaced object poses."""
        if len(poses) != len(self.objects):
            raise ValueError("pose count mismatch")
        objects = [
            SceneObject(o.name, o.shape, pose, o.grid) for o, pose in zip(self.objects, poses)
        ]
        return Scene(
            objects,
            self.target_index,
            self.grasp_in_target,
            self.up_axis,
            self.sdf_resolution,
        )

    def object_distance(self, index: int, pts_world: np.ndarray) -> np.ndarray:
        """Signed distance to one object for world-frame point(s)."""
        obj = self.objects[index]
        local = self._inverse_poses[index].transform_point(pts_world)
        return obj.local_distance(local)

    def distance(self, pts_world: np.ndarray) -> np.ndarray:
        """Signed distance to the nearest object (minimum over objects)."""
        values = [self.object_distance(i, pts_world) for i in range(len(self.objects))]
        return np.minimum.reduce(values)

    def distance_gradient(self, pts_world: np.ndarray, step: Optional[float] = None) -> np.ndarray:
        """Central finite-difference gradient of the environment distance."""
        return _fd_gradient(self.distance, pts_world, self._gradient_step(step))

    def object_distance_gradient(
        self, index: int, pts_world: np.ndarray, step: Optional[float] = None
    ) -> np.ndarray:
        return _fd_gradient(
            lambda p: self.object_distance(index, p), pts_world, self._gradient_step(step)
        )

    def _gradient_step(self, step: Optional[float]) -> float:
        h = self.sdf_resolution / 2.0 if step is None else float(step)
        if h <= 0:
            raise ValueError("gradient step must be positive")
        return h


def _fd_gradient(fn, pts: np.ndarray, h: float) -> np.ndarray:
    pts = np.asarray(pts, dtype=float)
    single = pts.ndim == 1
    p = np.atleast_2d(pts).reshape(-1, 3)
    n = len(p)
    probes = np.repeat(p[:, None, :], 6, axis=1)
    for k in range(3):
        probes[:, 2 * k, k] += h
        probes[:, 2 * k + 1, k] -= h
    vals = fn(probes.reshape(-1, 3)).reshape(n, 6)
    grad = np.stack([(vals[:, 2 * k] - vals[:, 2 * k + 1]) / (2.0 * h) for k in range(3)], axis=1)
    return grad[0] if single else grad.reshape(pts.shape)
