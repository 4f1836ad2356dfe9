"""Generate impedance equilibrium poses that track a geometric path.

Shooting formulation: decision variables are 6-vector perturbations of the
equilibria around the warm start (each equilibrium aimed at the next path
waypoint). The predicted rollout uses external wrenches precomputed at the
planned waypoints, so the objective is smooth; gradients come from central
finite differences (one rollout per probe, batched), descent uses parallel
backtracking, and only improving iterates are accepted.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List

import numpy as np

from .dynamics import (
    ImpedanceParams,
    TaskState,
    estimate_external_wrench,
    rollout_batch,
)
from .errors import SynthesisError
from .gripper import GripperModel
from .refine import GeometricPath
from .sdf import Scene
from .se3 import DEFAULT_ROTATION_WEIGHT, Pose, rotation_angle, rotvec_to_matrix


@dataclass(frozen=True)
class ControlGenParams:
    max_speed_sq: float = 0.04  # bound on the squared stacked 6-twist norm
    boundary_weight: float = 1.0
    overspeed_weight: float = 10.0
    fd_step: float = 1e-4
    max_iters: int = 15
    tol: float = 1e-8
    rotation_weight: float = DEFAULT_ROTATION_WEIGHT

    def __post_init__(self):
        if self.max_speed_sq <= 0:
            raise ValueError("max_speed_sq must be positive")
        if self.fd_step <= 0:
            raise ValueError("fd_step must be positive")


@dataclass(frozen=True)
class ControlSequence:
    """T equilibrium poses plus the impedance parameters they assume."""

    positions: np.ndarray
    rotations: np.ndarray
    params: ImpedanceParams

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
class SynthesisResult:
    controls: ControlSequence
    objective_trace: np.ndarray
    predicted_positions: np.ndarray
    predicted_rotations: np.ndarray
    predicted_velocities: np.ndarray
    external_schedule: np.ndarray


def synthesize_controls(
    scene: Scene,
    gripper: GripperModel,
    path: GeometricPath,
    x0: TaskState,
    impedance: ImpedanceParams,
    params: ControlGenParams,
) -> SynthesisResult:
    """Solve for equilibria whose predicted rollout tracks the path."""
    if np.linalg.norm(x0.twist.as_vector()) > 1e-12:
        raise ValueError("synthesis requires a zero initial twist")
    T = len(path)
    if T < 1:
        raise ValueError("path must contain at least one waypoint")

    # External wrench schedule at the planned poses: the step from state t to
    # t+1 uses the wrench estimated at the waypoint where the step begins.
    schedule_poses = [x0.pose] + path.poses[:-1]
    wrench6 = np.stack(
        [
            estimate_external_wrench(
                scene, gripper, p, impedance.penetration_stiffness
            ).as_vector()
            for p in schedule_poses
        ]
    )

    warm_pos = path.positions.copy()
    warm_rot = path.rotations.copy()
    path_pos = path.positions
    path_rot = path.rotations
    rw = params.rotation_weight

    def make_equilibria(u: np.ndarray):
        # u: (B, T, 6) perturbations; rotations perturbed on the left.
        B = u.shape[0]
        eq_pos = warm_pos[None, :, :] + u[:, :, :3]
        d_rot = rotvec_to_matrix(u[:, :, 3:].reshape(-1, 3)).reshape(B, T, 3, 3)
        eq_rot = d_rot @ warm_rot[None, :, :, :]
        return eq_pos, eq_rot

    def evaluate(u: np.ndarray):
        eq_pos, eq_rot = make_equilibria(u)
        pos, rot, vel = rollout_batch(x0, eq_pos, eq_rot, wrench6, impedance)
        dp = pos - path_pos[None, :, :]
        ang = rotation_angle(rot, path_rot[None, :, :, :])
        track = np.sum(dp * dp, axis=(1, 2)) + rw * np.sum(ang * ang, axis=1)
        speed_sq = np.sum(vel * vel, axis=2)
        terminal = params.boundary_weight * speed_sq[:, -1]
        over = np.maximum(0.0, speed_sq[:, :-1] - params.max_speed_sq)
        penalty = params.overspeed_weight * np.sum(over * over, axis=1)
        obj = track + terminal + penalty
        obj = np.where(np.isfinite(obj), obj, np.inf)
        return obj, (pos, rot, vel)

    u = np.zeros((T, 6))
    obj, rollout = evaluate(u[None, ...])
    best_obj = float(obj[0])
    if not np.isfinite(best_obj):
        raise SynthesisError("synthesis failed: warm-start objective not finite")
    trace = [best_obj]

    h = params.fd_step
    n_vars = 6 * T
    step = 0.25
    for _ in range(params.max_iters):
        if best_obj < 1e-12:
            break
        probes = np.repeat(u[None, ...], 2 * n_vars, axis=0)
        flat = probes.reshape(2 * n_vars, n_vars)
        idx = np.arange(n_vars)
        flat[2 * idx, idx] += h
        flat[2 * idx + 1, idx] -= h
        probe_obj, _ = evaluate(probes)
        grad = (probe_obj[0::2] - probe_obj[1::2]) / (2.0 * h)
        grad = grad.reshape(T, 6)
        gn = float(np.linalg.norm(grad))
        if not np.isfinite(gn) or gn < 1e-14:
            break
        scales = step * np.array([1.0, 0.3, 0.1, 0.03]) / gn
        cands = u[None, ...] - scales[:, None, None] * grad[None, ...]
        cand_obj, _ = evaluate(cands)
        k = int(np.argmin(cand_obj))
        if cand_obj[k] < best_obj - 1e-15:
            improvement = best_obj - float(cand_obj[k])
            u = cands[k]
            best_obj = float(cand_obj[k])
            trace.append(best_obj)
            step = min(step * (1.6 if k == 0 else 1.0), 4.0)
            if improvement < params.tol * max(1.0, best_obj):
                break
        else:
            step *= 0.2
            if step < 1e-8:
                break

    if not np.isfinite(best_obj):
        raise SynthesisError("synthesis failed")
    obj, (pos, rot, vel) = evaluate(u[None, ...])
    eq_pos, eq_rot = make_equilibria(u[None, ...])
    controls = ControlSequence(eq_pos[0], eq_rot[0], impedance)
    return SynthesisResult(
        controls=controls,
        objective_trace=np.asarray(trace),
        predicted_positions=pos[0],
        predicted_rotations=rot[0],
        predicted_velocities=vel[0],
        external_schedule=wrench6,
    )
