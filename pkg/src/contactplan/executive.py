"""Repetition executive: observe, sample a pre-grasp, plan, execute, retry.

Each repetition plans against a freshly noise-perturbed view of the scene and
executes against the true scene in the quasi-static simulator, terminating
early when the simulated pose deviates too far from the planned path. Failed
repetitions leave the scene untouched, so retries explore the same funnel.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .dynamics import ImpedanceParams, TaskState, Wrench, estimate_external_wrench, rollout_step
from .errors import PlanningError, PregraspError
from .gripper import GripperModel
from .refine import GeometricPath, RefineParams, collision_cost, refine_path
from .sdf import Scene
from .se3 import DEFAULT_ROTATION_WEIGHT, Pose, Twist, pose_error, rotvec_to_matrix, se3_distance
from .search import AStarParams, find_positional_path
from .synthesis import ControlGenParams, ControlSequence, synthesize_controls

OUTCOME_SUCCESS = "grasp_success"
OUTCOME_DEVIATED = "deviated"
OUTCOME_MISSED = "missed_grasp"
OUTCOME_DIVERGED = "diverged"


@dataclass(frozen=True)
class NoiseModel:
    position_sigma: float = 0.005  # m, per axis, object poses
    rotation_sigma: float = 0.02  # rad, rotation-vector perturbation
    stiffness_sigma: float = 0.1  # multiplicative, penetration stiffness

    def scaled(self, factor: float) -> "NoiseModel":
        return NoiseModel(
            self.position_sigma * factor,
            self.rotation_sigma * factor,
            self.stiffness_sigma * factor,
        )


@dataclass(frozen=True)
class ExecutiveConfig:
    max_repetitions: int = 10
    sample_radius: float = 0.03
    sample_standoff: float = 0.10
    deviation_limit: float = 0.0025  # se3_distance units (m^2)
    success_pos_tol: float = 0.01
    success_rot_tol: float = 0.15
    noise: NoiseModel = field(default_factory=NoiseModel)
    seed: int = 0

    def __post_init__(self):
        if self.max_repetitions < 1:
            raise ValueError("max_repetitions must be >= 1")
        if min(self.deviation_limit, self.success_pos_tol, self.success_rot_tol) <= 0:
            raise ValueError("tolerances must be positive")


@dataclass(frozen=True)
class StepRecord:
    step: int
    equilibrium: Pose
    pose: Pose
    twist: Twist
    external: Wrench
    deviation: float


@dataclass(frozen=True)
class ExecutionTrace:
    records: List[StepRecord]
    object_poses_before: List[Pose]
    object_poses_after: List[Pose]
    outcome: str
    final_position_error: float
    final_rotation_error: float


@dataclass(frozen=True)
class RepetitionRecord:
    index: int
    outcome: str
    solve_times: dict
    penetration: float = 0.0
    relaxation_steps: int = 0
    executed_steps: int = 0
    final_position_error: float = float("nan")
    final_rotation_error: float = float("nan")
    trace: Optional[ExecutionTrace] = None


@dataclass(frozen=True)
class TrialReport:
    success: bool
    repetitions_used: int
    repetitions: List[RepetitionRecord]
    seed: int


def sample_pregrasp(
    scene: Scene,
    gripper: GripperModel,
    grasp_pose_world: Pose,
    config: ExecutiveConfig,
    rng: np.random.Generator,
    margin: float = 0.01,
) -> Pose:
    """Sample a collision-free pre-grasp pose above the grasp.

    Standoff along the scene up-axis plus a uniform-ball positional
    perturbation and a small random rotation; rejected while the gripper has
    nonzero collision cost.
    """
    for _ in range(100):
        direction = rng.standard_normal(3)
        direction /= np.linalg.norm(direction)
        radius = config.sample_radius * rng.random() ** (1.0 / 3.0)
        pos = grasp_pose_world.position + config.sample_standoff * scene.up_axis
        pos = pos + radius * direction
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        angle = 0.1 * rng.random()
        rot = rotvec_to_matrix(angle * axis) @ grasp_pose_world.rotation
        candidate = Pose(pos, rot)
        if collision_cost(scene, gripper, candidate, margin) == 0.0:
            return candidate
    raise PregraspError("no collision-free pre-grasp found")


def execute_in_sim(
    true_scene: Scene,
    gripper: GripperModel,
    controls: ControlSequence,
    planned: GeometricPath,
    x0: TaskState,
    config: ExecutiveConfig,
    impedance: Optional[ImpedanceParams] = None,
):
    """Roll the controls out against the true scene.

    Unlike the planner's prediction, the external wrench is re-estimated each
    control step from the current simulated pose. Execution stops early when
    the pose deviates from the planned waypoint by more than the limit.
    Returns (trace, outcome).
    """
    if len(controls) != len(planned):
        raise ValueError("controls and planned path length mismatch")
    params = impedance if impedance is not None else controls.params
    poses_before = [obj.pose for obj in true_scene.objects]
    records: List[StepRecord] = []
    state = x0
    outcome = None
    for t in range(len(controls)):
        wrench = estimate_external_wrench(
            true_scene, gripper, state.pose, params.penetration_stiffness
        )
        target = controls.pose(t)
        try:
            state = rollout_step(state, target, wrench, params)
        except RuntimeError:
            outcome = OUTCOME_DIVERGED
            break
        deviation = se3_distance(state.pose, planned.pose(t), DEFAULT_ROTATION_WEIGHT)
        records.append(
            StepRecord(
                step=t,
                equilibrium=target,
                pose=state.pose,
                twist=state.twist,
                external=wrench,
                deviation=deviation,
            )
        )
        if deviation > config.deviation_limit:
            outcome = OUTCOME_DEVIATED
            break
    final_pos_err = float("nan")
    final_rot_err = float("nan")
    if outcome is None:
        err = pose_error(state.pose, true_scene.grasp_pose_world())
        final_pos_err = float(np.linalg.norm(err[:3]))
        final_rot_err = float(np.linalg.norm(err[3:]))
        reached = final_pos_err <= config.success_pos_tol and final_rot_err <= config.success_rot_tol
        outcome = OUTCOME_SUCCESS if reached else OUTCOME_MISSED
    poses_after = [obj.pose for obj in true_scene.objects]
    trace = ExecutionTrace(
        records=records,
        object_poses_before=poses_before,
        object_poses_after=poses_after,
        outcome=outcome,
        final_position_error=final_pos_err,
        final_rotation_error=final_rot_err,
    )
    return trace, outcome


def _observe(scene: Scene, noise: NoiseModel, rng: np.random.Generator) -> Scene:
    """Apply fresh perception noise to all object poses."""
    poses = []
    for obj in scene.objects:
        dp = noise.position_sigma * rng.standard_normal(3)
        drot = noise.rotation_sigma * rng.standard_normal(3)
        poses.append(Pose(obj.pose.position + dp, rotvec_to_matrix(drot) @ obj.pose.rotation))
    return scene.with_object_poses(poses)


def run_repetitions(
    scene: Scene,
    gripper: GripperModel,
    astar_params: AStarParams,
    refine_params: RefineParams,
    impedance: ImpedanceParams,
    synthesis_params: ControlGenParams,
    config: ExecutiveConfig,
    keep_traces: bool = False,
) -> TrialReport:
    """Run the repeat-until-grasped loop, up to `config.max_repetitions`."""
    rng = np.random.default_rng(config.seed)
    records: List[RepetitionRecord] = []
    for k in range(1, config.max_repetitions + 1):
        observed = _observe(scene, config.noise, rng)
        stiffness_factor = max(0.1, 1.0 + config.noise.stiffness_sigma * rng.standard_normal())
        plan_impedance = impedance.with_penetration_stiffness(
            impedance.penetration_stiffness * stiffness_factor
        )
        grasp_plan = observed.grasp_pose_world()
        times = {"astar": 0.0, "refine": 0.0, "synthesis": 0.0, "total": 0.0}
        t_start = time.perf_counter()
        try:
            start_pose = sample_pregrasp(
                observed, gripper, grasp_plan, config, rng, margin=refine_params.margin
            )
            t0 = time.perf_counter()
            positional = find_positional_path(
                observed, start_pose.position, grasp_plan.position, astar_params
            )
            times["astar"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            refined = refine_path(
                observed, gripper, positional, start_pose, grasp_plan, refine_params
            )
            times["refine"] = time.perf_counter() - t0
            t0 = time.perf_counter()
            synth = synthesize_controls(
                observed,
                gripper,
                refined.path,
                TaskState(start_pose, Twist.zero()),
                plan_impedance,
                synthesis_params,
            )
            times["synthesis"] = time.perf_counter() - t0
        except PlanningError as exc:
            times["total"] = time.perf_counter() - t_start
            records.append(
                RepetitionRecord(index=k, outcome=f"planning_failed:{exc}", solve_times=times)
            )
            continue
        trace, outcome = execute_in_sim(
            scene,
            gripper,
            synth.controls,
            refined.path,
            TaskState(start_pose, Twist.zero()),
            config,
            impedance=impedance,
        )
        times["total"] = time.perf_counter() - t_start
        records.append(
            RepetitionRecord(
                index=k,
                outcome=outcome,
                solve_times=times,
                penetration=positional.penetration,
                relaxation_steps=positional.relaxation_steps,
                executed_steps=len(trace.records),
                final_position_error=trace.final_position_error,
                final_rotation_error=trace.final_rotation_error,
                trace=trace if keep_traces else None,
            )
        )
        if outcome == OUTCOME_SUCCESS:
            return TrialReport(True, k, records, config.seed)
    return TrialReport(False, config.max_repetitions, records, config.seed)
