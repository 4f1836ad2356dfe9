"""JIT-compiled inner loop for batched impedance rollouts.

Scalar so(3) log/exp plus per-axis linear propagation, written loop-style for
numba. Mirrors the numpy reference in dynamics._step_batch_numpy; a unit test
keeps the two in agreement.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _log_so3(m, out):
    """Rotation vector of a 3x3 rotation matrix; angle in [0, pi]."""
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    c = (tr - 1.0) * 0.5
    if c > 1.0:
        c = 1.0
    elif c < -1.0:
        c = -1.0
    th = math.acos(c)
    w0 = m[2, 1] - m[1, 2]
    w1 = m[0, 2] - m[2, 0]
    w2 = m[1, 0] - m[0, 1]
    if th < 1e-8:
        out[0] = 0.5 * w0
        out[1] = 0.5 * w1
        out[2] = 0.5 * w2
        return
    if th > math.pi - 1e-6:
        # Skew part degenerates; recover the axis from (R + I) / 2.
        a00 = (m[0, 0] + 1.0) * 0.5
        a11 = (m[1, 1] + 1.0) * 0.5
        a22 = (m[2, 2] + 1.0) * 0.5
        if a00 >= a11 and a00 >= a22:
            k = 0
        elif a11 >= a22:
            k = 1
        else:
            k = 2
        ax0 = (m[0, k] + (1.0 if k == 0 else 0.0)) * 0.5
        ax1 = (m[1, k] + (1.0 if k == 1 else 0.0)) * 0.5
        ax2 = (m[2, k] + (1.0 if k == 2 else 0.0)) * 0.5
        n = math.sqrt(ax0 * ax0 + ax1 * ax1 + ax2 * ax2)
        if n < 1e-12:
            out[0] = 0.0
            out[1] = 0.0
            out[2] = 0.0
            return
        ax0 /= n
        ax1 /= n
        ax2 /= n
        if ax0 * w0 + ax1 * w1 + ax2 * w2 < 0.0:
            ax0 = -ax0
            ax1 = -ax1
            ax2 = -ax2
        out[0] = th * ax0
        out[1] = th * ax1
        out[2] = th * ax2
        return
    s = th / (2.0 * math.sin(th))
    out[0] = s * w0
    out[1] = s * w1
    out[2] = s * w2


@njit(cache=True)
def _exp_so3(v, out):
    """Rotation matrix of a rotation vector via Rodrigues' formula."""
    th2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
    th = math.sqrt(th2)
    if th < 1e-10:
        a = 1.0 - th2 / 6.0
        b = 0.5 - th2 / 24.0
    else:
        a = math.sin(th) / th
        b = (1.0 - math.cos(th)) / th2
    out[0, 0] = 1.0 - b * (v[1] * v[1] + v[2] * v[2])
    out[0, 1] = -a * v[2] + b * v[0] * v[1]
    out[0, 2] = a * v[1] + b * v[0] * v[2]
    out[1, 0] = a * v[2] + b * v[0] * v[1]
    out[1, 1] = 1.0 - b * (v[0] * v[0] + v[2] * v[2])
    out[1, 2] = -a * v[0] + b * v[1] * v[2]
    out[2, 0] = -a * v[1] + b * v[0] * v[2]
    out[2, 1] = a * v[0] + b * v[1] * v[2]
    out[2, 2] = 1.0 - b * (v[0] * v[0] + v[1] * v[1])


@njit(cache=True)
def roll_control_step(pos, rot, vel, ang, eq_pos, eq_rot, wrench, phi, gamma, substeps):
    """Advance all B states through one control step of `substeps` substeps.

    Arrays are modified in place. phi is (6, 2, 2) and gamma (6, 2): the exact
    per-axis substep propagator, translation axes 0..2 and rotation axes 3..5.
    """
    B = pos.shape[0]
    m = np.empty((3, 3))
    e = np.empty(3)
    d = np.empty(3)
    E = np.empty((3, 3))
    newrot = np.empty((3, 3))
    for _ in range(substeps):
        for b in range(B):
            for k in range(3):
                y = pos[b, k] - eq_pos[b, k]
                f = wrench[b, k]
                yn = phi[k, 0, 0] * y + phi[k, 0, 1] * vel[b, k] + gamma[k, 0] * f
                vel[b, k] = phi[k, 1, 0] * y + phi[k, 1, 1] * vel[b, k] + gamma[k, 1] * f
                pos[b, k] = eq_pos[b, k] + yn
            # m = eq_rot[b] @ rot[b].T
            for i in range(3):
                for j in range(3):
                    m[i, j] = (
                        eq_rot[b, i, 0] * rot[b, j, 0]
                        + eq_rot[b, i, 1] * rot[b, j, 1]
                        + eq_rot[b, i, 2] * rot[b, j, 2]
                    )
            _log_so3(m, e)
            for k in range(3):
                y = -e[k]
                t = wrench[b, k + 3]
                kk = k + 3
                yn = phi[kk, 0, 0] * y + phi[kk, 0, 1] * ang[b, k] + gamma[kk, 0] * t
                ang[b, k] = phi[kk, 1, 0] * y + phi[kk, 1, 1] * ang[b, k] + gamma[kk, 1] * t
                d[k] = yn - y
            _exp_so3(d, E)
            for i in range(3):
                for j in range(3):
                    newrot[i, j] = (
                        E[i, 0] * rot[b, 0, j] + E[i, 1] * rot[b, 1, j] + E[i, 2] * rot[b, 2, j]
                    )
            for i in range(3):
                for j in range(3):
                    rot[b, i, j] = newrot[i, j]


@njit(cache=True)
def roll_control_step_recorded(
    pos, rot, vel, ang, eq_pos, eq_rot, wrench, phi, gamma, substeps,
    rec_pos, rec_rot, rec_vel, rec_ang,
):
    """Like roll_control_step but stores the state after every substep."""
    for s in range(substeps):
        roll_control_step(pos, rot, vel, ang, eq_pos, eq_rot, wrench, phi, gamma, 1)
        rec_pos[s] = pos
        rec_rot[s] = rot
        rec_vel[s] = vel
        rec_ang[s] = ang
