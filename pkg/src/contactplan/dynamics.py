"""Task-space impedance model and its approximate forward rollout.

The virtual spring-damper acts on the 6-vector pose error (position plus
axis-angle), with diagonal stiffness, damping, and effective inertia. Per
integration substep the error coordinates evolve by the exact flow of the
per-axis linear spring-damper (a cached matrix-exponential propagator), and
orientation advances by the exponential map of the integrated angular
velocity. The external wrench is held constant over each control step.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Sequence

import numpy as np
from scipy.linalg import expm

from .gripper import GripperModel
from .sdf import Scene
from .se3 import Pose, Twist, matrix_to_rotvec, pose_error, rotvec_to_matrix

DEFAULT_STIFFNESS = (400.0, 400.0, 400.0, 30.0, 30.0, 30.0)
DEFAULT_INERTIA = (1.5, 1.5, 1.5, 0.05, 0.05, 0.05)


@dataclass(frozen=True)
class ImpedanceParams:
    """Diagonal impedance gains plus integration settings.

    `damping=None` selects critical damping in the paper's unit-mass sense,
    D = 2*sqrt(K) per axis.
    """

    stiffness: tuple = DEFAULT_STIFFNESS
    damping: Optional[tuple] = None
    inertia: tuple = DEFAULT_INERTIA
    penetration_stiffness: float = 1000.0
    dt: float = 0.002
    step_duration: float = 0.5

    def __post_init__(self):
        k = tuple(float(v) for v in np.broadcast_to(np.asarray(self.stiffness, float), (6,)))
        m = tuple(float(v) for v in np.broadcast_to(np.asarray(self.inertia, float), (6,)))
        if self.damping is None:
            d = tuple(2.0 * np.sqrt(v) for v in k)
        else:
            d = tuple(float(v) for v in np.broadcast_to(np.asarray(self.damping, float), (6,)))
        if any(v < 0 for v in k) or any(v < 0 for v in d):
            raise ValueError("stiffness and damping must be nonnegative")
        if any(v <= 0 for v in m):
            raise ValueError("inertia must be positive")
        if self.dt <= 0 or self.step_duration < self.dt:
            raise ValueError("need dt > 0 and step_duration >= dt")
        object.__setattr__(self, "stiffness", k)
        object.__setattr__(self, "damping", d)
        object.__setattr__(self, "inertia", m)
        object.__setattr__(self, "penetration_stiffness", float(self.penetration_stiffness))

    @property
    def substeps(self) -> int:
        return max(1, int(round(self.step_duration / self.dt)))

    def with_penetration_stiffness(self, value: float) -> "ImpedanceParams":
        return ImpedanceParams(
            self.stiffness, self.damping, self.inertia, value, self.dt, self.step_duration
        )


@dataclass(frozen=True)
class TaskState:
    pose: Pose
    twist: Twist


@dataclass(frozen=True)
class Wrench:
    force: np.ndarray
    torque: np.ndarray

    def __post_init__(self):
        f = np.array(self.force, dtype=float).reshape(3)
        t = np.array(self.torque, dtype=float).reshape(3)
        f.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "force", f)
        object.__setattr__(self, "torque", t)

    @staticmethod
    def zero() -> "Wrench":
        return Wrench(np.zeros(3), np.zeros(3))

    @staticmethod
    def from_vector(v: np.ndarray) -> "Wrench":
        v = np.asarray(v, dtype=float).reshape(6)
        return Wrench(v[:3], v[3:])

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.force, self.torque])


@lru_cache(maxsize=64)
def _propagators(stiffness: tuple, damping: tuple, inertia: tuple, dt: float):
    """Exact substep propagator per axis: z+ = Phi z + Gamma u.

    z = (error coordinate, velocity), u = constant external generalized force.
    Built from expm of the augmented system, so k = 0 and d = 0 are handled
    uniformly.
    """
    phi = np.zeros((6, 2, 2))
    gamma = np.zeros((6, 2))
    for i in range(6):
        k, d, m = stiffness[i], damping[i], inertia[i]
        M = np.array(
            [
                [0.0, 1.0, 0.0],
                [-k / m, -d / m, 1.0 / m],
                [0.0, 0.0, 0.0],
            ]
        )
        E = expm(M * dt)
        phi[i] = E[:2, :2]
        gamma[i] = E[:2, 2]
    return phi, gamma


class _BatchState:
    """Mutable rollout state for a batch of B independent trajectories."""

    __slots__ = ("pos", "rot", "vel", "ang")

    def __init__(self, pos, rot, vel, ang):
        self.pos = pos
        self.rot = rot
        self.vel = vel
        self.ang = ang

    @staticmethod
    def from_state(state: TaskState, batch: int) -> "_BatchState":
        return _BatchState(
            np.repeat(state.pose.position[None, :], batch, axis=0),
            np.repeat(state.pose.rotation[None, :, :], batch, axis=0),
            np.repeat(state.twist.linear[None, :], batch, axis=0),
            np.repeat(state.twist.angular[None, :], batch, axis=0),
        )

    def state(self, b: int) -> TaskState:
        return TaskState(
            Pose(self.pos[b].copy(), self.rot[b].copy()),
            Twist(self.vel[b].copy(), self.ang[b].copy()),
        )


def _step_batch(
    bs: _BatchState,
    eq_pos: np.ndarray,
    eq_rot: np.ndarray,
    wrench6: np.ndarray,
    params: ImpedanceParams,
    record: Optional[list] = None,
) -> None:
    """Advance one control step in place; equilibria and wrench are (B, ...)."""
    from ._rollout_kernel import roll_control_step, roll_control_step_recorded

    phi, gamma = _propagators(params.stiffness, params.damping, params.inertia, params.dt)
    pos = np.ascontiguousarray(bs.pos)
    rot = np.ascontiguousarray(bs.rot)
    vel = np.ascontiguousarray(bs.vel)
    ang = np.ascontiguousarray(bs.ang)
    eq_pos = np.ascontiguousarray(eq_pos)
    eq_rot = np.ascontiguousarray(eq_rot)
    wrench6 = np.ascontiguousarray(wrench6)
    n = params.substeps
    if record is None:
        roll_control_step(pos, rot, vel, ang, eq_pos, eq_rot, wrench6, phi, gamma, n)
    else:
        B = pos.shape[0]
        rec_pos = np.empty((n, B, 3))
        rec_rot = np.empty((n, B, 3, 3))
        rec_vel = np.empty((n, B, 3))
        rec_ang = np.empty((n, B, 3))
        roll_control_step_recorded(
            pos, rot, vel, ang, eq_pos, eq_rot, wrench6, phi, gamma, n,
            rec_pos, rec_rot, rec_vel, rec_ang,
        )
        for s in range(n):
            record.append((rec_pos[s], rec_rot[s], rec_vel[s], rec_ang[s]))
    bs.pos, bs.rot, bs.vel, bs.ang = pos, rot, vel, ang


def _step_batch_numpy(
    bs: _BatchState,
    eq_pos: np.ndarray,
    eq_rot: np.ndarray,
    wrench6: np.ndarray,
    params: ImpedanceParams,
) -> None:
    """Pure-numpy reference for the JIT kernel; used by consistency tests."""
    phi, gamma = _propagators(params.stiffness, params.damping, params.inertia, params.dt)
    p00, p01 = phi[:3, 0, 0], phi[:3, 0, 1]
    p10, p11 = phi[:3, 1, 0], phi[:3, 1, 1]
    g0, g1 = gamma[:3, 0], gamma[:3, 1]
    r00, r01 = phi[3:, 0, 0], phi[3:, 0, 1]
    r10, r11 = phi[3:, 1, 0], phi[3:, 1, 1]
    h0, h1 = gamma[3:, 0], gamma[3:, 1]
    force = wrench6[:, :3]
    torque = wrench6[:, 3:]
    for _ in range(params.substeps):
        y = bs.pos - eq_pos
        y_new = p00 * y + p01 * bs.vel + g0 * force
        bs.vel = p10 * y + p11 * bs.vel + g1 * force
        bs.pos = eq_pos + y_new
        # Rotation error e = log(R_eq R^T); its negation evolves like the
        # translational error, and R advances by the integrated rotation.
        e = matrix_to_rotvec(eq_rot @ np.swapaxes(bs.rot, -1, -2))
        y_rot = -e
        y_rot_new = r00 * y_rot + r01 * bs.ang + h0 * torque
        bs.ang = r10 * y_rot + r11 * bs.ang + h1 * torque
        bs.rot = rotvec_to_matrix(y_rot_new - y_rot) @ bs.rot


def impedance_wrench(target: Pose, state: TaskState, params: ImpedanceParams) -> Wrench:
    """Virtual spring-damper wrench K (target - x) - D xdot, world frame."""
    K = np.asarray(params.stiffness)
    D = np.asarray(params.damping)
    e = pose_error(target, state.pose)
    f = K * e - D * state.twist.as_vector()
    return Wrench.from_vector(f)


def estimate_external_wrench(
    scene: Scene,
    gripper: GripperModel,
    pose: Pose,
    penetration_stiffness: Optional[float] = None,
) -> Wrench:
    """Averaged reaction wrench from surface points penetrating the scene.

    Each penetrating surface point contributes a force along the negative
    outward normal, proportional to the penetration depth; force and torque
    sums are averaged over the number of penetrating points and rotated into
    the world frame. No penetration yields the zero wrench.
    """
    k = penetration_stiffness
    if k is None:
        raise ValueError("penetration_stiffness is required")
    world = pose.transform_point(gripper.surface_points)
    dist = scene.distance(world)
    mask = dist < 0.0
    count = int(np.count_nonzero(mask))
    if count == 0:
        return Wrench.zero()
    local_force = k * dist[mask, None] * gripper.surface_normals[mask]
    force = pose.rotation @ local_force.sum(axis=0) / count
    torque = pose.rotation @ np.cross(gripper.surface_points[mask], local_force).sum(axis=0) / count
    return Wrench(force, torque)


def rollout_step(
    state: TaskState,
    target: Pose,
    external: Wrench,
    params: ImpedanceParams,
) -> TaskState:
    """Propagate the impedance dynamics over one control step.

    The external wrench is held constant for the whole step.
    """
    bs = _BatchState.from_state(state, 1)
    _step_batch(
        bs,
        target.position[None, :],
        target.rotation[None, :, :],
        external.as_vector()[None, :],
        params,
    )
    out = bs.state(0)
    if not (
        np.all(np.isfinite(out.pose.position))
        and np.all(np.isfinite(out.pose.rotation))
        and np.all(np.isfinite(out.twist.as_vector()))
    ):
        raise RuntimeError("dynamics diverged")
    return out


def rollout_step_dense(
    state: TaskState,
    target: Pose,
    external: Wrench,
    params: ImpedanceParams,
) -> List[TaskState]:
    """Like rollout_step but returns the state after every substep."""
    bs = _BatchState.from_state(state, 1)
    rec: list = []
    _step_batch(
        bs,
        target.position[None, :],
        target.rotation[None, :, :],
        external.as_vector()[None, :],
        params,
        record=rec,
    )
    return [
        TaskState(Pose(pos[0].copy(), rot[0].copy()), Twist(vel[0].copy(), ang[0].copy()))
        for pos, rot, vel, ang in rec
    ]


def rollout_sequence(
    state: TaskState,
    targets: Sequence[Pose],
    externals: Sequence[Wrench],
    params: ImpedanceParams,
) -> List[TaskState]:
    """Chain rollout_step over a control sequence; returns the state after
    each of the T steps."""
    if len(targets) != len(externals):
        raise ValueError("targets and externals must have the same length")
    out = []
    current = state
    for target, wrench in zip(targets, externals):
        current = rollout_step(current, target, wrench, params)
        out.append(current)
    return out


def rollout_batch(
    state: TaskState,
    eq_pos: np.ndarray,
    eq_rot: np.ndarray,
    wrench6: np.ndarray,
    params: ImpedanceParams,
):
    """Vectorized rollout of B control sequences from a shared initial state.

    eq_pos: (B, T, 3), eq_rot: (B, T, 3, 3), wrench6: (T, 6) shared schedule.
    Returns (positions (B, T, 3), rotations (B, T, 3, 3), velocities (B, T, 6)).
    """
    B, T = eq_pos.shape[0], eq_pos.shape[1]
    bs = _BatchState.from_state(state, B)
    positions = np.empty((B, T, 3))
    rotations = np.empty((B, T, 3, 3))
    velocities = np.empty((B, T, 6))
    for t in range(T):
        w = np.repeat(wrench6[t][None, :], B, axis=0)
        _step_batch(bs, eq_pos[:, t], eq_rot[:, t], w, params)
        positions[:, t] = bs.pos
        rotations[:, t] = bs.rot
        velocities[:, t, :3] = bs.vel
        velocities[:, t, 3:] = bs.ang
    return positions, rotations, velocities
