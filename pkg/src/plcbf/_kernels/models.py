"""Compiled right-hand sides for the built-in control-affine models.

Every kernel writes ``f(x) + g(x) u`` into ``out`` and returns a status code
(``OK`` or ``GUARD`` when the model leaves its valid chart).
"""

import math

import numpy as np
from numba import njit

DOUBLE_INTEGRATOR = 0
VEHICLE = 1
QUADROTOR = 2

OK = 0
GUARD = 1

# Vehicle8 parameter layout
V_M, V_IZ, V_LF, V_LR, V_MU, V_B, V_C, V_TAU, V_RW, V_IW, V_BX, V_CX, V_G, V_VREG = range(14)
VEHICLE_NPARAM = 14

# Quadrotor12 parameter layout
Q_M, Q_G, Q_JX, Q_JY, Q_JZ, Q_PITCH_MAX = range(6)
QUAD_NPARAM = 6


@njit(cache=True, nogil=True)
def _double_integrator(x, u, out):
    out[0] = x[2]
    out[1] = x[3]
    out[2] = u[0]
    out[3] = u[1]
    return OK


@njit(cache=True, nogil=True)
def _vehicle_drift(x, p, out):
    # state: px, py, psi, vx, vy, r, delta, omega
    psi = x[2]
    vx = x[3]
    vy = x[4]
    r = x[5]
    delta = x[6]
    omega = x[7]
    m = p[V_M]
    lf = p[V_LF]
    lr = p[V_LR]
    mu = p[V_MU]
    g = p[V_G]
    vden = max(vx, p[V_VREG])
    fzf = m * g * lr / (lf + lr)
    fzr = m * g * lf / (lf + lr)

    alpha_f = delta - math.atan2(vy + lf * r, vden)
    alpha_r = -math.atan2(vy - lr * r, vden)
    fyf = mu * fzf * math.sin(p[V_C] * math.atan(p[V_B] * alpha_f))
    fyr = mu * fzr * math.sin(p[V_C] * math.atan(p[V_B] * alpha_r))

    kappa = (p[V_RW] * omega - vx) / max(abs(vx), p[V_VREG])
    fxr = mu * fzr * math.sin(p[V_CX] * math.atan(p[V_BX] * kappa))

    cd = math.cos(delta)
    sd = math.sin(delta)
    out[0] = vx * math.cos(psi) - vy * math.sin(psi)
    out[1] = vx * math.sin(psi) + vy * math.cos(psi)
    out[2] = r
    out[3] = (fxr - fyf * sd) / m + vy * r
    out[4] = (fyr + fyf * cd) / m - vx * r
    out[5] = (lf * fyf * cd - lr * fyr) / p[V_IZ]
    out[6] = -delta / p[V_TAU]
    out[7] = -p[V_RW] * fxr / p[V_IW]


@njit(cache=True, nogil=True)
def _vehicle(x, u, p, out):
    _vehicle_drift(x, p, out)
    out[6] += u[0] / p[V_TAU]
    out[7] += u[1] / p[V_IW]
    return OK


@njit(cache=True, nogil=True)
def _quad_drift(x, p, out):
    # state: p(3), v(3), phi theta psi, p q r (body rates)
    phi = x[6]
    theta = x[7]
    wx = x[9]
    wy = x[10]
    wz = x[11]
    if abs(theta) > p[Q_PITCH_MAX]:
        return GUARD
    sphi = math.sin(phi)
    cphi = math.cos(phi)
    ctheta = math.cos(theta)
    ttheta = math.tan(theta)
    jx = p[Q_JX]
    jy = p[Q_JY]
    jz = p[Q_JZ]
    out[0] = x[3]
    out[1] = x[4]
    out[2] = x[5]
    out[3] = 0.0
    out[4] = 0.0
    out[5] = -p[Q_G]
    out[6] = wx + sphi * ttheta * wy + cphi * ttheta * wz
    out[7] = cphi * wy - sphi * wz
    out[8] = (sphi * wy + cphi * wz) / ctheta
    out[9] = (jy - jz) * wy * wz / jx
    out[10] = (jz - jx) * wz * wx / jy
    out[11] = (jx - jy) * wx * wy / jz
    return OK


@njit(cache=True, nogil=True)
def _quad_thrust_axis(x, axis):
    # third column of R = Rz(psi) Ry(theta) Rx(phi)
    phi = x[6]
    theta = x[7]
    psi = x[8]
    sphi = math.sin(phi)
    cphi = math.cos(phi)
    sth = math.sin(theta)
    cth = math.cos(theta)
    spsi = math.sin(psi)
    cpsi = math.cos(psi)
    axis[0] = cpsi * sth * cphi + spsi * sphi
    axis[1] = spsi * sth * cphi - cpsi * sphi
    axis[2] = cth * cphi


@njit(cache=True, nogil=True)
def _quadrotor(x, u, p, out):
    status = _quad_drift(x, p, out)
    if status != OK:
        return status
    axis = np.empty(3)
    _quad_thrust_axis(x, axis)
    m = p[Q_M]
    out[3] += axis[0] * u[0] / m
    out[4] += axis[1] * u[0] / m
    out[5] += axis[2] * u[0] / m
    out[9] += u[1] / p[Q_JX]
    out[10] += u[2] / p[Q_JY]
    out[11] += u[3] / p[Q_JZ]
    return OK


@njit(cache=True, nogil=True)
def derivative(kind, x, u, p, out):
    if kind == DOUBLE_INTEGRATOR:
        return _double_integrator(x, u, out)
    elif kind == VEHICLE:
        return _vehicle(x, u, p, out)
    else:
        return _quadrotor(x, u, p, out)


@njit(cache=True, nogil=True)
def actuation(kind, x, p, out):
    """Fill ``out`` (state_dim x control_dim) with g(x)."""
    out[:, :] = 0.0
    if kind == DOUBLE_INTEGRATOR:
        out[2, 0] = 1.0
        out[3, 1] = 1.0
        return OK
    elif kind == VEHICLE:
        out[6, 0] = 1.0 / p[V_TAU]
        out[7, 1] = 1.0 / p[V_IW]
        return OK
    else:
        if abs(x[7]) > p[Q_PITCH_MAX]:
            return GUARD
        axis = np.empty(3)
        _quad_thrust_axis(x, axis)
        out[3, 0] = axis[0] / p[Q_M]
        out[4, 0] = axis[1] / p[Q_M]
        out[5, 0] = axis[2] / p[Q_M]
        out[9, 1] = 1.0 / p[Q_JX]
        out[10, 2] = 1.0 / p[Q_JY]
        out[11, 3] = 1.0 / p[Q_JZ]
        return OK


@njit(cache=True, nogil=True)
def drift(kind, x, p, out):
    if kind == DOUBLE_INTEGRATOR:
        out[0] = x[2]
        out[1] = x[3]
        out[2] = 0.0
        out[3] = 0.0
        return OK
    elif kind == VEHICLE:
        _vehicle_drift(x, p, out)
        return OK
    else:
        return _quad_drift(x, p, out)
