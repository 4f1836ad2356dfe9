"""Refine a positional path into a full SE(3) path by collision minimization.

Projected gradient descent with backtracking: the terminal waypoint is pinned
to the grasp pose by construction, every other waypoint position is projected
back into a tube around the grid-search path after each step, and orientations
move along local rotation vectors from a geodesic initial guess. The accepted
objective sequence is non-increasing by construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .errors import RefinementError
from .gripper import GripperModel
from .sdf import Scene
from .se3 import (
    DEFAULT_ROTATION_WEIGHT,
    Pose,
    matrix_to_rotvec,
    rotation_angle,
    rotvec_to_matrix,
    slerp,
)


@dataclass(frozen=True)
class RefineParams:
    margin: float = 0.01  # collision margin, m
    tube_radius: float = 0.02  # max positional deviation from the grid path, m
    rotation_weight: float = DEFAULT_ROTATION_WEIGHT
    max_iters: int = 100
    step_init: float = 0.005
    tol: float = 1e-10
    gradient_step: Optional[float] = None  # SDF finite-difference step

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.tube_radius < 0:
            raise ValueError("tube_radius must be nonnegative")


@dataclass(frozen=True)
class GeometricPath:
    """T world-frame waypoints, the last one equal to the grasp pose."""

    positions: np.ndarray
    rotations: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        rot = np.asarray(self.rotations, dtype=float).reshape(-1, 3, 3)
        if len(pos) != len(rot):
            raise ValueError("positions and rotations length mismatch")
        pos.flags.writeable = False
        rot.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "rotations", rot)

    def __len__(self) -> int:
        return len(self.positions)

    def pose(self, t: int) -> Pose:
        return Pose(self.positions[t].copy(), self.rotations[t].copy())

    @property
    def poses(self) -> List[Pose]:
        return [self.pose(t) for t in range(len(self))]


@dataclass(frozen=True)
class RefineResult:
    path: GeometricPath
    objective_trace: np.ndarray
    iterations: int


def chomp_cost(distance, margin: float):
    """Piecewise collision cost: linear inside, quadratic in the margin band,
    zero beyond the margin. Continuous at 0 and at the margin."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    d = np.asarray(distance, dtype=float)
    inside = -d + margin / 2.0
    band = (d - margin) ** 2 / (2.0 * margin)
    out = np.where(d < 0.0, inside, np.where(d < margin, band, 0.0))
    return float(out) if np.isscalar(distance) else out


def chomp_cost_derivative(distance, margin: float):
    d = np.asarray(distance, dtype=float)
    out = np.where(d < 0.0, -1.0, np.where(d < margin, (d - margin) / margin, 0.0))
    return float(out) if np.isscalar(distance) else out


def collision_cost(scene: Scene, gripper: GripperModel, pose: Pose, margin: float) -> float:
    """Sum of the collision cost over objects and gripper volume points.

    The sum is per object (not against the environment minimum), so
    overlapping obstacles each contribute.
    """
    world = pose.transform_point(gripper.volume_points)
    total = 0.0
    for i in range(len(scene)):
        total += float(np.sum(chomp_cost(scene.object_distance(i, world), margin)))
    return total


def _collision_cost_many(scene, gripper, positions, rotations, margin) -> float:
    world = np.einsum("tij,mj->tmi", rotations, gripper.volume_points) + positions[:, None, :]
    flat = world.reshape(-1, 3)
    total = 0.0
    for i in range(len(scene)):
        total += float(np.sum(chomp_cost(scene.object_distance(i, flat), margin)))
    return total


def _collision_gradients(scene, gripper, positions, rotations, margin, fd_step):
    """Position and left-rotation-vector gradients of the collision term."""
    T = len(positions)
    rotated = np.einsum("tij,mj->tmi", rotations, gripper.volume_points)
    world = rotated + positions[:, None, :]
    flat = world.reshape(-1, 3)
    force = np.zeros_like(flat)
    for i in range(len(scene)):
        d = scene.object_distance(i, flat)
        slope = chomp_cost_derivative(d, margin)
        active = slope != 0.0
        if np.any(active):
            grad = scene.object_distance_gradient(i, flat[active], fd_step)
            force[active] += slope[active, None] * grad
    force = force.reshape(T, -1, 3)
    g_pos = force.sum(axis=1)
    g_rot = np.cross(rotated, force).sum(axis=1)
    return g_pos, g_rot


def _smoothing_cost(chain_pos, chain_rot, rotation_weight) -> float:
    dp = np.diff(chain_pos, axis=0)
    theta = rotation_angle(chain_rot[:-1], chain_rot[1:])
    return float(np.sum(dp * dp) + rotation_weight * np.sum(theta * theta))


def _smoothing_gradients(chain_pos, chain_rot, rotation_weight):
    """Gradients for interior chain entries 1..T-1 (free waypoints)."""
    inner_pos = chain_pos[1:-1]
    g_pos = 2.0 * (inner_pos - chain_pos[:-2]) + 2.0 * (inner_pos - chain_pos[2:])
    rel_prev = matrix_to_rotvec(chain_rot[1:-1] @ np.swapaxes(chain_rot[:-2], -1, -2))
    rel_next = matrix_to_rotvec(chain_rot[1:-1] @ np.swapaxes(chain_rot[2:], -1, -2))
    g_rot = 2.0 * rotation_weight * (rel_prev + rel_next)
    return g_pos, g_rot


def refine_path(
    scene: Scene,
    gripper: GripperModel,
    positional,
    start_pose: Pose,
    goal_pose: Pose,
    params: RefineParams,
) -> RefineResult:
    """Minimize collision plus smoothing cost over the SE(3) waypoints.

    The first chain element is anchored to `start_pose` (not a variable), the
    terminal waypoint is pinned to `goal_pose`, and free waypoint positions
    stay within `tube_radius` of the positional path via projection.
    """
    ref = np.asarray(getattr(positional, "points", positional), dtype=float).reshape(-1, 3)
    T = len(ref)
    if T < 2:
        raise RefinementError(f"positional path too short: {T} waypoints")
    if np.linalg.norm(goal_pose.position - ref[-1]) > params.tube_radius + 1e-9:
        raise RefinementError(
            "goal position lies outside the tube around the final path waypoint"
        )

    positions = ref.copy()
    positions[-1] = goal_pose.position
    rotations = np.stack(
        [slerp(start_pose.rotation, goal_pose.rotation, (t + 1) / T) for t in range(T)]
    )
    rotations[-1] = goal_pose.rotation

    fd_step = params.gradient_step
    rw = params.rotation_weight

    def objective(pos, rot):
        chain_pos = np.vstack([start_pose.position[None, :], pos])
        chain_rot = np.concatenate([start_pose.rotation[None, :, :], rot], axis=0)
        return _collision_cost_many(scene, gripper, pos, rot, params.margin) + _smoothing_cost(
            chain_pos, chain_rot, rw
        )

    def project(pos):
        d = pos[:-1] - ref[:-1]
        r = np.linalg.norm(d, axis=1)
        over = r > params.tube_radius
        if np.any(over):
            scale = params.tube_radius / r[over]
            pos[:-1][over] = ref[:-1][over] + d[over] * scale[:, None]
        return pos

    obj = objective(positions, rotations)
    if not np.isfinite(obj):
        raise RefinementError("refinement diverged")
    trace = [obj]
    step = params.step_init
    iterations = 0
    for _ in range(params.max_iters):
        iterations += 1
        g_pos_c, g_rot_c = _collision_gradients(
            scene, gripper, positions, rotations, params.margin, fd_step
        )
        chain_pos = np.vstack([start_pose.position[None, :], positions])
        chain_rot = np.concatenate([start_pose.rotation[None, :, :], rotations], axis=0)
        g_pos_s, g_rot_s = _smoothing_gradients(chain_pos, chain_rot, rw)
        g_pos = g_pos_c[:-1] + g_pos_s
        g_rot = g_rot_c[:-1] + g_rot_s
        grad_norm = np.sqrt(np.sum(g_pos * g_pos) + np.sum(g_rot * g_rot))
        if grad_norm < 1e-14:
            break
        improved = False
        alpha = step
        for _ in range(40):
            cand_pos = positions.copy()
            cand_pos[:-1] = positions[:-1] - alpha * g_pos
            cand_pos = project(cand_pos)
            cand_rot = rotations.copy()
            cand_rot[:-1] = rotvec_to_matrix(-alpha * g_rot) @ rotations[:-1]
            cand_obj = objective(cand_pos, cand_rot)
            if np.isfinite(cand_obj) and cand_obj < obj - 1e-15:
                positions, rotations, obj = cand_pos, cand_rot, cand_obj
                improved = True
                break
            alpha *= 0.5
        if not improved:
            break
        trace.append(obj)
        step = min(alpha * 1.5, 0.5)
        if trace[-2] - trace[-1] < params.tol:
            break

    path = GeometricPath(positions, rotations)
    return RefineResult(path=path, objective_trace=np.asarray(trace), iterations=iterations)
