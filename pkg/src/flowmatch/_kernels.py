"""Compiled inner loops: bump profiles, closed-form fields, flow integration.

A field is packed into one float64 row (see ``layout``) so that a whole
program is a 2-D array and can be applied without leaving compiled code.
"""

import math

import numba as nb
import numpy as np

GENERAL, HAMILTONIAN, DIVFREE, CONTACT = 0, 1, 2, 3
EXPONENTIAL, POLYNOMIAL, PLATEAU = 0, 1, 2
PLATEAU_CORE = 0.5
#: relative step of the field-gradient stencil
JAC_STEP = 1e-4
RK45, RK4 = 0, 1

OK, MAX_STEPS = 0, 1

# header slots
I_CLASS, I_PROFILE, I_RADIUS, I_SCALE, I_TORUS, I_DIM, I_F0, I_W = range(8)
HEADER = 8


def layout(m):
    """Offsets of the per-coordinate blocks (center, periods, v1, v2)."""
    return HEADER, HEADER + m, HEADER + 2 * m, HEADER + 3 * m


def row_length(m):
    return HEADER + 4 * m


_jit = nb.njit(cache=True, nogil=True)


@_jit
def bump(kind, s):
    """Return (phi(s), phi'(s), phi'(s)/s); the last is smooth through s = 0."""
    if s >= 1.0:
        return 0.0, 0.0, 0.0
    if kind == EXPONENTIAL:
        q = 1.0 - s * s
        phi = math.exp(1.0 - 1.0 / q)
        g = -2.0 * phi / (q * q)
        return phi, g * s, g
    if kind == PLATEAU:
        if s <= PLATEAU_CORE:
            return 1.0, 0.0, 0.0
        # smooth step e(1-v) / (e(1-v) + e(v)) with e(t) = exp(-1/t)
        w = 1.0 - PLATEAU_CORE
        v = (s - PLATEAU_CORE) / w
        ex = 1.0 / (1.0 - v) - 1.0 / v
        if ex > 700.0:
            return 0.0, 0.0, 0.0
        if ex < -700.0:
            return 1.0, 0.0, 0.0
        q = math.exp(ex)
        phi = 1.0 / (1.0 + q)
        dphi = -(1.0 / (v * v) + 1.0 / ((1.0 - v) * (1.0 - v))) / (q + 2.0 + 1.0 / q) / w
        return phi, dphi, dphi / s
    one_s = 1.0 - s
    phi = 1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    g = -30.0 * s * one_s * one_s
    return phi, g * s, g


@_jit
def field_at(p, x, out):
    """Evaluate the packed field ``p`` at ``x`` into ``out``; returns False outside the support."""
    m = x.shape[0]
    oc, op, o1, o2 = HEADER, HEADER + m, HEADER + 2 * m, HEADER + 3 * m
    r = p[I_RADIUS]
    torus = p[I_TORUS] != 0.0
    u = np.empty(m)
    rho2 = 0.0
    for i in range(m):
        d = x[i] - p[oc + i]
        if torus:
            P = p[op + i]
            d = d - P * np.round(d / P)
        u[i] = d
        rho2 += d * d
    s = math.sqrt(rho2) / r
    if s >= 1.0:
        for i in range(m):
            out[i] = 0.0
        return False
    phi, _, g = bump(int(p[I_PROFILE]), s)
    gr = g / (r * r)
    scale = p[I_SCALE]
    kind = int(p[I_CLASS])
    if kind == GENERAL:
        for i in range(m):
            out[i] = scale * (phi * p[o1 + i])
    elif kind == HAMILTONIAN:
        d = m // 2
        au = 0.0
        for i in range(m):
            au += p[o1 + i] * u[i]
        # X = J grad f with f = phi <a, u>, i_X sigma = df
        for i in range(d):
            gx = phi * p[o1 + i] + au * gr * u[i]
            gy = phi * p[o1 + d + i] + au * gr * u[d + i]
            out[i] = scale * gy
            out[d + i] = -scale * gx
    elif kind == DIVFREE:
        p1 = 0.0
        p2 = 0.0
        for i in range(m):
            p1 += p[o1 + i] * u[i]
            p2 += p[o2 + i] * u[i]
        # rotated gradient of psi = phi <u2, u> in the (Y, u2) plane, with
        # <u2,u2> = 1 and <u2,Y> = 0 substituted so the center value is exact
        cy = phi + p2 * p2 * gr
        cu = p2 * p1 * gr
        for i in range(m):
            out[i] = scale * (cy * p[o1 + i] - cu * p[o2 + i])
    else:
        d = m // 2
        f0 = p[I_F0]
        lin = f0
        for i in range(m):
            lin += p[o1 + i] * u[i]
        dz = phi * p[o1 + 2 * d] + lin * gr * u[2 * d]
        # X_z = phi*(f0 - sum c_y a_y) + phi*<a,u> - phi*sum u_y a_y - lin*gr*sum y u_y
        au_y = 0.0
        yu_y = 0.0
        au = 0.0
        for i in range(m):
            au += p[o1 + i] * u[i]
        for i in range(d):
            y = x[d + i]
            gxi = phi * p[o1 + i] + lin * gr * u[i]
            gyi = phi * p[o1 + d + i] + lin * gr * u[d + i]
            out[i] = -scale * gyi
            out[d + i] = scale * (gxi + y * dz)
            au_y += p[o1 + d + i] * u[d + i]
            yu_y += y * u[d + i]
        xz = phi * p[I_W] + phi * au - phi * au_y - lin * gr * yu_y
        out[2 * d] = scale * xz
    return True


@_jit
def field_many(p, X):
    k, m = X.shape
    out = np.zeros((k, m))
    buf = np.empty(m)
    for j in range(k):
        field_at(p, X[j], buf)
        out[j] = buf
    return out


@_jit
def _canon(p, x):
    m = x.shape[0]
    op = HEADER + m
    for i in range(m):
        P = p[op + i]
        v = x[i] - P * math.floor(x[i] / P)
        if v >= P or v < 0.0:
            v = 0.0
        x[i] = v


@_jit
def in_support(p, x):
    m = x.shape[0]
    oc, op = HEADER, HEADER + m
    torus = p[I_TORUS] != 0.0
    rho2 = 0.0
    for i in range(m):
        d = x[i] - p[oc + i]
        if torus:
            P = p[op + i]
            d = d - P * np.round(d / P)
        rho2 += d * d
    return math.sqrt(rho2) / p[I_RADIUS] < 1.0


# Dormand-Prince 5(4)
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71 / 57600,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)


@_jit
def field_jac(p, x, J):
    """Gradient of the closed-form field, J[i, j] = dX_i/dx_j, by the fourth-order
    central stencil; steps are re-measured after rounding so they are exact."""
    m = x.shape[0]
    eta = JAC_STEP * p[I_RADIUS]
    xp = x.copy()
    a = np.empty(m)
    b = np.empty(m)
    c = np.empty(m)
    e = np.empty(m)
    for j in range(m):
        xp[j] = x[j] + eta
        h1 = xp[j] - x[j]
        field_at(p, xp, a)
        xp[j] = x[j] - h1
        field_at(p, xp, b)
        xp[j] = x[j] + 2.0 * h1
        h2 = xp[j] - x[j]
        field_at(p, xp, c)
        xp[j] = x[j] - h2
        field_at(p, xp, e)
        xp[j] = x[j]
        for i in range(m):
            d1 = (a[i] - b[i]) / (2.0 * h1)
            d2 = (c[i] - e[i]) / (2.0 * h2)
            J[i, j] = (4.0 * d1 - d2) / 3.0


@_jit
def rhs(p, y, m, out):
    """Right-hand side of the flow; with len(y) = m + m*m also the variational equation dV/dt = DX V."""
    x = y[:m]
    field_at(p, x, out[:m])
    if y.shape[0] > m:
        J = np.empty((m, m))
        field_jac(p, x, J)
        for i in range(m):
            for j in range(m):
                acc = 0.0
                for k in range(m):
                    acc += J[i, k] * y[m + k * m + j]
                out[m + i * m + j] = acc


@_jit
def flow_rk45(p, y0, m, t, atol, rtol, max_step, max_steps):
    """Adaptive Dormand-Prince flow of the packed field for time ``t`` (either sign).

    ``y0`` holds the point, optionally followed by a row-major m x m tangent matrix.
    Step control takes the larger of the point and tangent error norms.
    """
    n = y0.shape[0]
    y = y0.copy()
    if t == 0.0 or not in_support(p, y[:m]):
        return y, OK
    direction = 1.0 if t > 0 else -1.0
    T = abs(t)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    tmp = np.empty(n)
    yn = np.empty(n)
    rhs(p, y, m, k1)
    speed = 0.0
    for i in range(m):
        speed = max(speed, abs(k1[i]))
    h = min(T, max_step, 0.05 * p[I_RADIUS] / max(speed, 1e-300))
    h = max(h, 1e-12 * T)
    done = 0.0
    steps = 0
    while done < T:
        if steps >= max_steps:
            return y, MAX_STEPS
        steps += 1
        if done + h >= T:
            h = T - done
        hd = h * direction
        for i in range(n):
            tmp[i] = y[i] + hd * _A21 * k1[i]
        rhs(p, tmp, m, k2)
        for i in range(n):
            tmp[i] = y[i] + hd * (_A31 * k1[i] + _A32 * k2[i])
        rhs(p, tmp, m, k3)
        for i in range(n):
            tmp[i] = y[i] + hd * (_A41 * k1[i] + _A42 * k2[i] + _A43 * k3[i])
        rhs(p, tmp, m, k4)
        for i in range(n):
            tmp[i] = y[i] + hd * (_A51 * k1[i] + _A52 * k2[i] + _A53 * k3[i] + _A54 * k4[i])
        rhs(p, tmp, m, k5)
        for i in range(n):
            tmp[i] = y[i] + hd * (
                _A61 * k1[i] + _A62 * k2[i] + _A63 * k3[i] + _A64 * k4[i] + _A65 * k5[i]
            )
        rhs(p, tmp, m, k6)
        for i in range(n):
            yn[i] = y[i] + hd * (
                _B1 * k1[i] + _B3 * k3[i] + _B4 * k4[i] + _B5 * k5[i] + _B6 * k6[i]
            )
        rhs(p, yn, m, k7)
        err = 0.0
        for i in range(m):
            e = hd * (
                _E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i] + _E5 * k5[i] + _E6 * k6[i] + _E7 * k7[i]
            )
            sc = atol + rtol * max(abs(y[i]), abs(yn[i]))
            err += (e / sc) ** 2
        err = math.sqrt(err / m)
        if n > m:
            # the tangent block gets its own norm so the point does not drown it
            errv = 0.0
            for i in range(m, n):
                e = hd * (
                    _E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i] + _E5 * k5[i] + _E6 * k6[i] + _E7 * k7[i]
                )
                sc = atol + rtol * max(abs(y[i]), abs(yn[i]))
                errv += (e / sc) ** 2
            err = max(err, math.sqrt(errv / (n - m)))
        if err <= 1.0:
            done += h
            for i in range(n):
                y[i] = yn[i]
                k1[i] = k7[i]
            fac = 5.0 if err == 0.0 else min(5.0, 0.9 * err ** -0.2)
        else:
            fac = max(0.2, 0.9 * err ** -0.2)
        h = min(h * fac, max_step)
    return y, OK


@_jit
def flow_rk4(p, y0, m, t, h_max):
    """Classical RK4 with ``ceil(|t| / h_max)`` equal steps."""
    n = y0.shape[0]
    y = y0.copy()
    if t == 0.0 or not in_support(p, y[:m]):
        return y, OK
    nsteps = max(1, int(math.ceil(abs(t) / h_max)))
    h = t / nsteps
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for _ in range(nsteps):
        rhs(p, y, m, k1)
        for i in range(n):
            tmp[i] = y[i] + 0.5 * h * k1[i]
        rhs(p, tmp, m, k2)
        for i in range(n):
            tmp[i] = y[i] + 0.5 * h * k2[i]
        rhs(p, tmp, m, k3)
        for i in range(n):
            tmp[i] = y[i] + h * k3[i]
        rhs(p, tmp, m, k4)
        for i in range(n):
            y[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
    return y, OK


@_jit
def flow_one(p, y0, m, t, method, atol, rtol, max_step, max_steps):
    if method == RK4:
        y, status = flow_rk4(p, y0, m, t, max_step)
    else:
        y, status = flow_rk45(p, y0, m, t, atol, rtol, max_step, max_steps)
    if p[I_TORUS] != 0.0 and t != 0.0:
        moved = False
        for i in range(m):
            if y[i] != y0[i]:
                moved = True
        if moved:
            x = y[:m]
            _canon(p, x)
    return y, status


@_jit
def apply_point(P, times, y0, m, method, atol, rtol, max_step, max_steps):
    """Apply stages in composition order: the last row acts first."""
    y = y0.copy()
    for k in range(P.shape[0] - 1, -1, -1):
        if times[k] == 0.0:
            continue
        y, status = flow_one(P[k], y, m, times[k], method, atol, rtol, max_step, max_steps)
        if status != OK:
            return y, status
    return y, OK


@_jit
def apply_many(P, times, X, method, atol, rtol, max_step, max_steps):
    out = np.empty_like(X)
    m = X.shape[1]
    worst = OK
    for j in range(X.shape[0]):
        y, status = apply_point(P, times, X[j], m, method, atol, rtol, max_step, max_steps)
        out[j] = y
        if status != OK:
            worst = status
    return out, worst


@_jit
def tangent_many(P, times, X, method, atol, rtol, max_step, max_steps):
    """Images and tangent maps (k, m) and (k, m, m) from the variational equation."""
    k, m = X.shape
    imgs = np.empty((k, m))
    jacs = np.empty((k, m, m))
    y0 = np.zeros(m + m * m)
    worst = OK
    for j in range(k):
        y0[:m] = X[j]
        y0[m:] = 0.0
        for i in range(m):
            y0[m + i * m + i] = 1.0
        y, status = apply_point(P, times, y0, m, method, atol, rtol, max_step, max_steps)
        imgs[j] = y[:m]
        jacs[j] = y[m:].reshape((m, m))
        if status != OK:
            worst = status
    return imgs, jacs, worst
