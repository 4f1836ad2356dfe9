"""Constraint-exploiting positional path-finding on a voxel lattice.

A* over the 26-connected grid of voxel centers. The edge cost rewards
staying close to object surfaces (weighted squared signed distance at the
destination voxel) plus the squared step length, so the cheapest routes hug
the environment. Voxels penetrating deeper than the current allowance are
obstacles; the allowance relaxes iteratively until a path exists.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import NoPathError
from .sdf import Scene
from .se3 import resample_positions

HEURISTIC_SQUARED_GOAL = "squared_goal_distance"
HEURISTIC_ZERO = "zero"

_SNAP_RADIUS_VOXELS = 3


@dataclass(frozen=True)
class AStarParams:
    workspace_min: tuple
    workspace_max: tuple
    resolution: float = 0.01
    contact_weight: Optional[float] = None  # default 1 / resolution^2
    penetration_init: float = 0.0
    penetration_step: float = 0.001
    penetration_cap: float = 0.02
    heuristic: str = HEURISTIC_SQUARED_GOAL
    waypoints: int = 20

    def __post_init__(self):
        lo = tuple(float(v) for v in self.workspace_min)
        hi = tuple(float(v) for v in self.workspace_max)
        if len(lo) != 3 or len(hi) != 3 or any(h <= l for l, h in zip(lo, hi)):
            raise ValueError("workspace bounds must be a nonempty box")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")
        if self.penetration_step <= 0:
            raise ValueError("penetration_step must be positive")
        if self.waypoints < 2:
            raise ValueError("waypoints must be >= 2")
        if self.heuristic not in (HEURISTIC_SQUARED_GOAL, HEURISTIC_ZERO):
            raise ValueError(f"unknown heuristic mode: {self.heuristic}")
        object.__setattr__(self, "workspace_min", lo)
        object.__setattr__(self, "workspace_max", hi)

    @property
    def weight(self) -> float:
        if self.contact_weight is not None:
            return float(self.contact_weight)
        return 1.0 / (self.resolution * self.resolution)


@dataclass(frozen=True)
class PositionalPath:
    """T waypoints for the fingertip plus search diagnostics."""

    points: np.ndarray
    penetration: float
    relaxation_steps: int
    expanded: int

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)


class VoxelLattice:
    """Voxel centers covering the workspace box at a fixed resolution."""

    def __init__(self, params: AStarParams):
        lo = np.asarray(params.workspace_min)
        hi = np.asarray(params.workspace_max)
        res = params.resolution
        self.lo = lo
        self.res = res
        self.dims = np.maximum(np.floor((hi - lo) / res + 1e-12).astype(int), 1)
        self.strides = np.array(
            [self.dims[1] * self.dims[2], self.dims[2], 1], dtype=np.int64
        )

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def centers(self) -> np.ndarray:
        axes = [self.lo[k] + self.res * (np.arange(self.dims[k]) + 0.5) for k in range(3)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        return grid.reshape(-1, 3)

    def center(self, flat: int) -> np.ndarray:
        idx = np.array(np.unravel_index(flat, tuple(self.dims)))
        return self.lo + self.res * (idx + 0.5)

    def containing_index(self, p: np.ndarray) -> np.ndarray:
        idx = np.floor((np.asarray(p, float) - self.lo) / self.res).astype(int)
        return np.clip(idx, 0, self.dims - 1)

    def contains(self, p: np.ndarray) -> bool:
        p = np.asarray(p, float)
        hi = self.lo + self.dims * self.res
        return bool(np.all(p >= self.lo) and np.all(p <= hi))

    def snap_to_free(self, p: np.ndarray, free: np.ndarray) -> Optional[int]:
        """Nearest free voxel with center within 3 resolutions of `p`."""
        base = self.containing_index(p)
        r = _SNAP_RADIUS_VOXELS
        offs = np.arange(-r, r + 1)
        window = np.stack(np.meshgrid(offs, offs, offs, indexing="ij"), axis=-1).reshape(-1, 3)
        cand = base + window
        ok = np.all((cand >= 0) & (cand < self.dims), axis=1)
        cand = cand[ok]
        flat = cand @ self.strides
        centers = self.lo + self.res * (cand + 0.5)
        dist = np.linalg.norm(centers - np.asarray(p, float), axis=1)
        keep = (dist <= r * self.res + 1e-12) & free[flat]
        if not np.any(keep):
            return None
        flat = flat[keep]
        dist = dist[keep]
        order = np.lexsort((flat, dist))
        return int(flat[order[0]])


def _neighbor_table(lattice: VoxelLattice, res: float):
    offsets = np.array(
        [
            (dx, dy, dz)
            for dx in (-1, 0, 1)
            for dy in (-1, 0, 1)
            for dz in (-1, 0, 1)
            if (dx, dy, dz) != (0, 0, 0)
        ],
        dtype=np.int64,
    )
    flat_offsets = offsets @ lattice.strides
    step_sq = (res * res) * np.sum(offsets * offsets, axis=1).astype(float)
    return offsets, flat_offsets, step_sq


def _run_astar(lattice, phi, free, start_flat, goal_flat, params: AStarParams):
    """A* over precomputed per-voxel distances; returns (flat path, expanded)."""
    w = params.weight
    node_cost = w * phi * phi
    dims = lattice.dims
    offsets, flat_offsets, step_sq = _neighbor_table(lattice, lattice.res)
    if params.heuristic == HEURISTIC_SQUARED_GOAL:
        centers = lattice.centers()
        diff = centers - lattice.center(goal_flat)
        h = np.sum(diff * diff, axis=1)
    else:
        h = np.zeros(lattice.size)

    n = lattice.size
    g = np.full(n, np.inf)
    came = np.full(n, -1, dtype=np.int64)
    closed = np.zeros(n, dtype=bool)
    g[start_flat] = 0.0
    heap = [(h[start_flat], 0, start_flat)]
    counter = 1
    expanded = 0
    nyz = dims[1] * dims[2]
    nz = dims[2]
    while heap:
        _, _, cur = heapq.heappop(heap)
        if closed[cur]:
            continue
        closed[cur] = True
        expanded += 1
        if cur == goal_flat:
            path = []
            node = cur
            while node != -1:
                path.append(node)
                node = came[node]
            path.reverse()
            return path, expanded
        cx, rem = divmod(cur, nyz)
        cy, cz = divmod(rem, nz)
        coords = offsets + (cx, cy, cz)
        valid = np.all((coords >= 0) & (coords < dims), axis=1)
        nbrs = cur + flat_offsets[valid]
        steps = step_sq[valid]
        open_mask = free[nbrs] & ~closed[nbrs]
        nbrs = nbrs[open_mask]
        steps = steps[open_mask]
        tentative = g[cur] + node_cost[nbrs] + steps
        improved = tentative < g[nbrs]
        for nb, tg in zip(nbrs[improved], tentative[improved]):
            g[nb] = tg
            came[nb] = cur
            heapq.heappush(heap, (tg + h[nb], counter, int(nb)))
            counter += 1
    return None, expanded


def astar_search(
    scene: Scene,
    start: np.ndarray,
    goal: np.ndarray,
    penetration: float,
    params: AStarParams,
) -> Optional[np.ndarray]:
    """Single A* query at a fixed penetration allowance.

    Returns the voxel-center sequence from the snapped start to the snapped
    goal, or None when either endpoint cannot be snapped to a free voxel or
    the goal is unreachable.
    """
    lattice = VoxelLattice(params)
    if not (lattice.contains(start) and lattice.contains(goal)):
        raise ValueError("start and goal must lie inside the workspace bounds")
    phi = scene.distance(lattice.centers())
    free = phi >= -penetration
    path, _ = _astar_with_field(lattice, phi, free, start, goal, params)
    if path is None:
        return None
    return np.array([lattice.center(f) for f in path])


def _astar_with_field(lattice, phi, free, start, goal, params):
    s = lattice.snap_to_free(start, free)
    t = lattice.snap_to_free(goal, free)
    if s is None or t is None:
        return None, 0
    return _run_astar(lattice, phi, free, s, t, params)


def astar_path_cost(points: np.ndarray, phi_of_points: np.ndarray, weight: float) -> float:
    """Accumulated edge cost of a voxel-center path under the search metric."""
    pts = np.asarray(points, float)
    phi = np.asarray(phi_of_points, float)
    steps = np.sum(np.diff(pts, axis=0) ** 2, axis=1)
    return float(np.sum(weight * phi[1:] * phi[1:] + steps))


def find_positional_path(
    scene: Scene,
    start: np.ndarray,
    goal: np.ndarray,
    params: AStarParams,
) -> PositionalPath:
    """Iteratively relaxed A*: raise the penetration allowance until a path
    exists, then resample it to exactly `params.waypoints` points."""
    lattice = VoxelLattice(params)
    if not (lattice.contains(start) and lattice.contains(goal)):
        raise ValueError("start and goal must lie inside the workspace bounds")
    phi = scene.distance(lattice.centers())
    allowance = params.penetration_init
    relaxations = 0
    while allowance <= params.penetration_cap + 1e-12:
        free = phi >= -allowance
        path, expanded = _astar_with_field(lattice, phi, free, start, goal, params)
        if path is not None:
            centers = np.array([lattice.center(f) for f in path])
            pts = resample_positions(centers, params.waypoints)
            return PositionalPath(
                points=pts,
                penetration=allowance,
                relaxation_steps=relaxations,
                expanded=expanded,
            )
        allowance += params.penetration_step
        relaxations += 1
    raise NoPathError(
        "no path within penetration cap "
        f"(cap {params.penetration_cap:.4f} m, final allowance {allowance:.4f} m)"
    )
