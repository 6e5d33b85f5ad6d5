"""Compiled feedback laws. Outputs are raw (unclamped) controls."""

import math

from numba import njit

CONSTANT = 0
PIECEWISE = 1
SINUSOID = 2
DI_PD = 10
DI_STOP = 11
VEH_LANE = 20
VEH_BRAKE = 21
QUAD_WAYPOINT = 30
QUAD_VELOCITY = 31


@njit(cache=True, nogil=True)
def _quad_track(x, ax, ay, az, p, k, out):
    # p[k:] = a_max, k_att, k_rate, m, g, jx, jy, jz
    a_max = p[k]
    k_att = p[k + 1]
    k_rate = p[k + 2]
    m = p[k + 3]
    g = p[k + 4]
    norm = math.sqrt(ax * ax + ay * ay + az * az)
    if norm > a_max:
        s = a_max / norm
        ax *= s
        ay *= s
        az *= s
    fx = m * ax
    fy = m * ay
    fz = max(m * (az + g), 0.2 * m * g)
    psi = x[8]
    cpsi = math.cos(psi)
    spsi = math.sin(psi)
    fwd = fx * cpsi + fy * spsi
    side = fx * spsi - fy * cpsi
    theta_d = math.atan2(fwd, fz)
    phi_d = math.atan2(side, math.sqrt(fwd * fwd + fz * fz))
    out[0] = math.sqrt(fx * fx + fy * fy + fz * fz)
    out[1] = p[k + 5] * (k_att * (phi_d - x[6]) - k_rate * x[9])
    out[2] = p[k + 6] * (k_att * (theta_d - x[7]) - k_rate * x[10])
    out[3] = p[k + 7] * (k_att * (0.0 - x[8]) - k_rate * x[11])


@njit(cache=True, nogil=True)
def action(kind, x, t, p, out):
    nu = out.shape[0]
    if kind == CONSTANT:
        for j in range(nu):
            out[j] = p[j]
    elif kind == PIECEWISE:
        seg = p[0]
        nseg = int(p[1])
        i = int(math.floor(t / seg)) if seg > 0.0 else 0
        if i < 0:
            i = 0
        if i > nseg - 1:
            i = nseg - 1
        for j in range(nu):
            out[j] = p[2 + i * nu + j]
    elif kind == SINUSOID:
        for j in range(nu):
            out[j] = p[j] + p[nu + j] * math.sin(p[2 * nu + j] * t + p[3 * nu + j])
    elif kind == DI_PD:
        kp = p[0]
        kd = p[1]
        out[0] = kp * (p[2] - x[0]) - kd * x[2]
        out[1] = kp * (p[3] - x[1]) - kd * x[3]
    elif kind == DI_STOP:
        out[0] = -p[0] * x[2]
        out[1] = -p[0] * x[3]
    elif kind == VEH_LANE:
        # y_ref, v_ref, k_y, k_psi, k_r, k_v, x_stop, a_comf, m, rw
        vx = x[3]
        ey = x[1] - p[0]
        out[0] = -p[3] * x[2] - math.atan2(p[2] * ey, max(vx, 1.0)) - p[4] * x[5]
        v_target = p[1]
        if p[6] < math.inf:
            gap = max(p[6] - x[0], 0.0)
            v_target = min(v_target, math.sqrt(2.0 * p[7] * gap))
        out[1] = p[8] * p[9] * p[5] * (v_target - vx)
        if out[1] < 0.0:
            # friction brake: fades as the wheel stops, never drives it backwards
            out[1] *= max(math.tanh(p[9] * x[7]), 0.0)
    elif kind == VEH_BRAKE:
        # k_psi, k_r, torque, rw, omega_scale
        out[0] = -p[0] * x[2] - p[1] * x[5]
        out[1] = -p[2] * math.tanh(p[3] * x[7] / p[4])
    elif kind == QUAD_WAYPOINT:
        # gx gy gz kp kd | a_max k_att k_rate m g jx jy jz
        kp = p[3]
        kd = p[4]
        ax = kp * (p[0] - x[0]) - kd * x[3]
        ay = kp * (p[1] - x[1]) - kd * x[4]
        az = kp * (p[2] - x[2]) - kd * x[5]
        _quad_track(x, ax, ay, az, p, 5, out)
    elif kind == QUAD_VELOCITY:
        # vx vy vz kv | a_max k_att k_rate m g jx jy jz
        kv = p[3]
        ax = kv * (p[0] - x[3])
        ay = kv * (p[1] - x[4])
        az = kv * (p[2] - x[5])
        _quad_track(x, ax, ay, az, p, 4, out)
    else:
        for j in range(nu):
            out[j] = math.nan


@njit(cache=True, nogil=True)
def clamp(u, lo, hi):
    for j in range(u.shape[0]):
        if u[j] < lo[j]:
            u[j] = lo[j]
        elif u[j] > hi[j]:
            u[j] = hi[j]
