"""Parallel-jaw gripper modeled as point clouds in the task frame.

The task frame sits at the center of one fingertip's distal face, with the
finger extending along +z toward the palm and the second finger offset along
+x by the jaw opening. Surface points carry outward normals and drive the
contact-wrench estimate; the sparse volume points drive the collision cost.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .se3 import Pose
from .sdf import Box, PlacedPrimitive, ShapeUnion, analytic_sdf

DEFAULT_FINGER_SIZE = (0.02, 0.02, 0.05)
DEFAULT_PALM_SIZE = (0.06, 0.08, 0.03)
DEFAULT_MAX_OPENING = 0.08

# Accept a sampled face point only if probing along its normal clearly leaves
# the union, which rejects points buried in or flush against another box.
_NORMAL_PROBE = 1e-4
_SURFACE_TOL = 1e-9


@dataclass(frozen=True)
class GripperModel:
    surface_points: np.ndarray
    surface_normals: np.ndarray
    volume_points: np.ndarray
    shape: ShapeUnion
    opening: float
    max_opening: float
    finger_size: tuple
    palm_size: tuple
    n_surface: int
    n_volume: int
    seed: int

    def __post_init__(self):
        for name in ("surface_points", "surface_normals", "volume_points"):
            arr = np.asarray(getattr(self, name), dtype=float).reshape(-1, 3)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


def _jaw_boxes(finger_size, palm_size, opening):
    fx, fy, fz = finger_size
    px, py, pz = palm_size
    finger_half = (fx / 2.0, fy / 2.0, fz / 2.0)
    second_x = opening + fx
    boxes = [
        (Box(finger_half), np.array([0.0, 0.0, fz / 2.0])),
        (Box(finger_half), np.array([second_x, 0.0, fz / 2.0])),
        (Box((px / 2.0, py / 2.0, pz / 2.0)), np.array([second_x / 2.0, 0.0, fz + pz / 2.0])),
    ]
    return boxes


def _box_faces(box: Box, center: np.ndarray):
    """(normal, face center, in-plane half extents u/v) for all 6 faces."""
    he = np.asarray(box.half_extents)
    faces = []
    for axis in range(3):
        for sign in (-1.0, 1.0):
            normal = np.zeros(3)
            normal[axis] = sign
            face_center = center + normal * he[axis]
            u_axis, v_axis = [a for a in range(3) if a != axis]
            u = np.zeros(3)
            v = np.zeros(3)
            u[u_axis] = he[u_axis]
            v[v_axis] = he[v_axis]
            area = 4.0 * he[u_axis] * he[v_axis]
            faces.append((normal, face_center, u, v, area))
    return faces


def build_parallel_jaw(
    finger_size=DEFAULT_FINGER_SIZE,
    palm_size=DEFAULT_PALM_SIZE,
    opening: float = 0.04,
    n_surface: int = 1000,
    n_volume: int = 50,
    seed: int = 0,
    max_opening: float = DEFAULT_MAX_OPENING,
) -> GripperModel:
    """Build the two-finger + palm model and sample its point sets.

    Surface points are area-uniform over the visible union surface with
    analytic outward normals; volume points are uniform over the union volume.
    Deterministic for a fixed seed.
    """
    finger_size = tuple(float(v) for v in finger_size)
    palm_size = tuple(float(v) for v in palm_size)
    if opening < 0 or opening > max_opening:
        raise ValueError("opening exceeds gripper limit")
    if n_surface < 1:
        raise ValueError("n_surface must be >= 1")
    if n_volume < 0:
        raise ValueError("n_volume must be >= 0")

    boxes = _jaw_boxes(finger_size, palm_size, opening)
    shape = ShapeUnion(
        tuple(PlacedPrimitive(box, Pose(center, np.eye(3))) for box, center in boxes)
    )
    rng = np.random.default_rng(seed)

    faces = [f for box, center in boxes for f in _box_faces(box, center)]
    areas = np.array([f[4] for f in faces])
    cdf = np.cumsum(areas / areas.sum())

    surf_pts = []
    surf_nrm = []
    while len(surf_pts) < n_surface:
        k = max(4 * (n_surface - len(surf_pts)), 64)
        picks = np.searchsorted(cdf, rng.random(k))
        uv = rng.uniform(-1.0, 1.0, size=(k, 2))
        for j in range(k):
            normal, fc, u, v, _ = faces[picks[j]]
            p = fc + uv[j, 0] * u + uv[j, 1] * v
            if analytic_sdf(shape, p) < -_SURFACE_TOL:
                continue
            if analytic_sdf(shape, p + _NORMAL_PROBE * normal) < _NORMAL_PROBE - _SURFACE_TOL:
                continue
            surf_pts.append(p)
            surf_nrm.append(normal)
            if len(surf_pts) == n_surface:
                break

    lo = np.min([c - np.asarray(b.half_extents) for b, c in boxes], axis=0)
    hi = np.max([c + np.asarray(b.half_extents) for b, c in boxes], axis=0)
    vol_pts = np.zeros((0, 3))
    while len(vol_pts) < n_volume:
        k = max(8 * (n_volume - len(vol_pts)), 64)
        cand = rng.uniform(lo, hi, size=(k, 3))
        inside = cand[analytic_sdf(shape, cand) <= 0.0]
        vol_pts = np.vstack([vol_pts, inside])
    vol_pts = vol_pts[:n_volume]

    return GripperModel(
        surface_points=np.array(surf_pts),
        surface_normals=np.array(surf_nrm),
        volume_points=vol_pts,
        shape=shape,
        opening=float(opening),
        max_opening=float(max_opening),
        finger_size=finger_size,
        palm_size=palm_size,
        n_surface=int(n_surface),
        n_volume=int(n_volume),
        seed=int(seed),
    )


def set_opening(model: GripperModel, opening: float) -> GripperModel:
    """Rebuild the model at a new jaw opening; the task frame stays put."""
    if opening < 0 or opening > model.max_opening:
        raise ValueError("opening exceeds gripper limit")
    return build_parallel_jaw(
        finger_size=model.finger_size,
        palm_size=model.palm_size,
        opening=opening,
        n_surface=model.n_surface,
        n_volume=model.n_volume,
        seed=model.seed,
        max_opening=model.max_opening,
    )
