"""Hot loops: series evaluation, the coupled moment/Riccati right-hand side, an
embedded Runge-Kutta integrator, the Euler-Maruyama ensemble and grid
classification.

Every kernel is written so that it runs unchanged as plain Python/numpy when
numba is disabled; the ensemble and the grid classifier additionally have
vectorised numpy twins that the dispatchers below pick on the fallback path.
"""

import math

import numpy as np

from ._accel import HAS_NUMBA, jit, jit_parallel, prange

# slots in the per-era parameter vector
# radiation free mode: P_GER/P_GEI = c1, P_GPR/P_GPI = c2 (see coupling.radiation_mode_coefficients)
P_ERA, P_G, P_K, P_XE, P_C2, P_GER, P_GEI, P_GPR, P_GPI, P_PART = range(10)
N_PAR = 10

# P_PART: which block of the state evolves (the other is frozen)
PART_ALL, PART_MOMENTS, PART_OMEGA = 0.0, 1.0, 2.0

# series order (see coupling.SERIES_NAMES)
S_UA, S_UB, S_B, S_M, S_N, S_BT, S_BTT, S_MT, S_S, S_W, S_A0N, S_A0D = range(12)
N_SER = 12

# integration state: relative moment corrections and Riccati deviations
Y_D1, Y_D2, Y_D3, Y_L, Y_I = range(5)
N_Y = 5

SQRT3 = math.sqrt(3.0)


@jit
def eval_series(tab, cnt, lam, z, u, out):
    lz = math.log(z)
    eu = math.exp(-0.5 * u)
    eu2 = eu * eu
    for i in range(cnt.shape[0]):
        acc = 0.0
        for j in range(cnt[i]):
            kj = tab[1, i, j]
            t = tab[2, i, j] * math.exp(tab[0, i, j] * lz)
            if kj != 0.0:
                t *= u ** kj
            acc += t
        li = lam[i]
        if li == 0.5:
            acc *= eu
        elif li == 1.0:
            acc *= eu2
        elif li != 0.0:
            acc *= math.exp(-li * u)
        out[i] = acc


@jit
def smearing_u(par, z):
    if par[P_ERA] == 0.0:
        return par[P_K] * z * z
    return par[P_K] / (z * z)


@jit
def free_functions(par, z, out):
    """out = (P0vv, P0c, P0pp, R0, I0) in k = 1 units at era variable z."""
    if par[P_ERA] == 0.0:
        x2 = z * z
        ix2 = 1.0 / x2
        out[0] = 0.5 * (1.0 + ix2)
        out[1] = ix2 / z
        out[2] = 0.5 * (1.0 - ix2 + ix2 * ix2)
        out[3] = 0.5 * x2 / (1.0 + x2)
        out[4] = -0.5 / (z * (1.0 + x2))
        return
    # g = c1 sqrt3 sin(y/sqrt3) + c2 cos(y/sqrt3), coefficients in P_GER.. P_GPI
    th = z / SQRT3
    u1 = SQRT3 * math.sin(th)
    u2 = math.cos(th)
    d2 = -u1 / 3.0
    gr = par[P_GER] * u1 + par[P_GPR] * u2
    gi = par[P_GEI] * u1 + par[P_GPI] * u2
    pr = par[P_GER] * u2 + par[P_GPR] * d2
    pi = par[P_GEI] * u2 + par[P_GPI] * d2
    g2 = gr * gr + gi * gi
    re_pg = pr * gr + pi * gi
    c2 = par[P_C2]
    out[0] = c2 * g2
    out[1] = 2.0 * c2 * re_pg
    out[2] = c2 * (pr * pr + pi * pi)
    out[3] = 0.25 / g2
    out[4] = -0.5 * re_pg / g2


@jit
def dtau_ds(par, z):
    return -z if par[P_ERA] == 0.0 else z


@jit
def _moment_rates(jac, g, w, ser, p0v, p0c, p0p, d1, d2, d3, dy):
    dy[0] = jac * (p0c * (d2 - d1) + g * ser[S_B]) / p0v
    dy[1] = jac * (-2.0 * w * p0v * (d1 - d2) + 2.0 * p0p * (d3 - d2) - 2.0 * g * ser[S_M]) / p0c
    dy[2] = jac * (-w * p0c * (d2 - d3) + g * ser[S_N]) / p0p


@jit
def rhs(s, y, par, tab, cnt, lam, dy, ser, fr):
    z = math.exp(s)
    u = smearing_u(par, z)
    eval_series(tab, cnt, lam, z, u, ser)
    free_functions(par, z, fr)
    g = par[P_G]
    w = ser[S_W]
    p0v, p0c, p0p, r0, i0 = fr[0], fr[1], fr[2], fr[3], fr[4]
    d1, d2, d3, ell, io = y[0], y[1], y[2], y[3], y[4]
    jac = dtau_ds(par, z)
    part = par[P_PART]
    if part == PART_OMEGA:
        dy[0] = 0.0
        dy[1] = 0.0
        dy[2] = 0.0
    else:
        _moment_rates(jac, g, w, ser, p0v, p0c, p0p, d1, d2, d3, dy)
    if part == PART_MOMENTS:
        dy[3] = 0.0
        dy[4] = 0.0
        return
    R = r0 * math.exp(ell)
    I = i0 * (1.0 + io)
    ub = ser[S_UB]
    # A = ua - 2 ub ImOmega, with the free part taken from the cancellation-free ratio
    A = ser[S_A0N] / ser[S_A0D] - 2.0 * ub * i0 * io
    dy[3] = jac * (4.0 * i0 * io + g * (A * A - 4.0 * ub * ub * R * R) / R)
    jt = (-2.0 * r0 * r0 * math.expm1(2.0 * ell) + 2.0 * i0 * i0 * io * (2.0 + io)
          + 4.0 * g * ub * R * A)
    i0t = 0.5 * w - 2.0 * (r0 * r0 - i0 * i0)
    dy[4] = jac * (jt - i0t * io) / i0


# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
_A21 = 1.0 / 5.0
_A31, _A32 = 3.0 / 40.0, 9.0 / 40.0
_A41, _A42, _A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
_A51, _A52, _A53, _A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
_A61, _A62, _A63, _A64, _A65 = 9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0
_B1, _B3, _B4, _B5, _B6 = 35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)


@jit
def dopri5(par, tab, cnt, lam, y0, s_out, rtol, atol, h0, max_steps):
    """Integrate the coupled system through the grid ``s_out`` (monotone, s_out[0] = start).

    Returns (Y, status, n_steps, last_s); status 0 ok, 1 step underflow,
    2 too many steps, 3 non-finite state.
    """
    n = y0.shape[0]
    n_out = s_out.shape[0]
    Y = np.empty((n_out, n))
    y = y0.copy()
    Y[0, :] = y
    ser = np.empty(N_SER)
    fr = np.empty(5)
    k1 = np.empty(n); k2 = np.empty(n); k3 = np.empty(n); k4 = np.empty(n)
    k5 = np.empty(n); k6 = np.empty(n); k7 = np.empty(n)
    yt = np.empty(n); yn = np.empty(n)
    s = s_out[0]
    direction = 1.0 if s_out[n_out - 1] >= s else -1.0
    h = abs(h0) if h0 != 0.0 else 1e-3
    rhs(s, y, par, tab, cnt, lam, k1, ser, fr)
    steps = 0
    err_prev = 1e-4
    status = 0
    for j in range(1, n_out):
        target = s_out[j]
        while direction * (target - s) > 0.0:
            if steps >= max_steps:
                return Y, 2, steps, s
            hh = min(h, direction * (target - s))
            if hh < 1e-14 * max(1.0, abs(s)):
                return Y, 1, steps, s
            hs = direction * hh
            for i in range(n):
                yt[i] = y[i] + hs * _A21 * k1[i]
            rhs(s + _C2 * hs, yt, par, tab, cnt, lam, k2, ser, fr)
            for i in range(n):
                yt[i] = y[i] + hs * (_A31 * k1[i] + _A32 * k2[i])
            rhs(s + _C3 * hs, yt, par, tab, cnt, lam, k3, ser, fr)
            for i in range(n):
                yt[i] = y[i] + hs * (_A41 * k1[i] + _A42 * k2[i] + _A43 * k3[i])
            rhs(s + _C4 * hs, yt, par, tab, cnt, lam, k4, ser, fr)
            for i in range(n):
                yt[i] = y[i] + hs * (_A51 * k1[i] + _A52 * k2[i] + _A53 * k3[i] + _A54 * k4[i])
            rhs(s + _C5 * hs, yt, par, tab, cnt, lam, k5, ser, fr)
            for i in range(n):
                yt[i] = y[i] + hs * (_A61 * k1[i] + _A62 * k2[i] + _A63 * k3[i] + _A64 * k4[i]
                                     + _A65 * k5[i])
            rhs(s + hs, yt, par, tab, cnt, lam, k6, ser, fr)
            for i in range(n):
                yn[i] = y[i] + hs * (_B1 * k1[i] + _B3 * k3[i] + _B4 * k4[i] + _B5 * k5[i]
                                     + _B6 * k6[i])
            rhs(s + hs, yn, par, tab, cnt, lam, k7, ser, fr)
            err = 0.0
            finite = True
            # error scale shared within a block (moments 0..2, Riccati 3..4): a
            # component far below its partner is not resolved beyond round-off
            mb = 0.0
            ob = 0.0
            for i in range(n):
                v = max(abs(y[i]), abs(yn[i]))
                if i < 3:
                    mb = max(mb, v)
                else:
                    ob = max(ob, v)
            for i in range(n):
                e = hs * (_E1 * k1[i] + _E3 * k3[i] + _E4 * k4[i] + _E5 * k5[i] + _E6 * k6[i]
                          + _E7 * k7[i])
                sc = atol + rtol * (mb if i < 3 else ob)
                r = e / sc
                err += r * r
                if not math.isfinite(yn[i]):
                    finite = False
            err = math.sqrt(err / n)
            steps += 1
            if not finite or not math.isfinite(err):
                h = 0.25 * hh
                if h < 1e-14:
                    return Y, 3, steps, s
                continue
            if err <= 1.0:
                # land exactly on a clipped target; s + (target - s) may round short
                s = target if hh >= direction * (target - s) else s + hs
                for i in range(n):
                    y[i] = yn[i]
                    k1[i] = k7[i]
                # PI controller (Hairer & Wanner II.4)
                if err == 0.0:
                    fac = 5.0
                else:
                    fac = 0.9 * err ** (-0.7 / 5.0) * err_prev ** (0.4 / 5.0)
                    fac = min(5.0, max(0.2, fac))
                err_prev = max(err, 1e-4)
                if hh < h:
                    # step was clipped to hit an output point; keep the old size
                    h = max(h, hh * fac)
                else:
                    h = hh * fac
            else:
                h = hh * max(0.2, 0.9 * err ** (-0.2))
        for i in range(n):
            Y[j, i] = y[i]
    return Y, status, steps, s


@jit
def eval_point(par, tab, cnt, lam, z):
    """Series values and free functions at one point (for callers outside the integrator)."""
    ser = np.empty(N_SER)
    fr = np.empty(5)
    eval_series(tab, cnt, lam, z, smearing_u(par, z), ser)
    free_functions(par, z, fr)
    return ser, fr


@jit
def linear_rhs(s, y, par, tab, cnt, lam):
    """u'' + C1 u' + C2 u = 0 in s = ln z; y = (Re u, Im u, Re u_tau, Im u_tau)."""
    z = math.exp(s)
    ser = np.empty(N_SER)
    eval_series(tab, cnt, lam, z, smearing_u(par, z), ser)
    g = par[P_G]
    b, m, n = ser[S_B], ser[S_M], ser[S_N]
    bt, w = ser[S_BT], ser[S_W]
    d = 1.0 - 2j * g * b
    c1 = -2j * g * (2.0 * m - bt / d)
    c2 = d * (w - 2j * g * n)
    u = complex(y[0], y[1])
    p = complex(y[2], y[3])
    jac = dtau_ds(par, z)
    dp = -c1 * p - c2 * u
    out = np.empty(4)
    out[0] = jac * p.real
    out[1] = jac * p.imag
    out[2] = jac * dp.real
    out[3] = jac * dp.imag
    return out


@jit
def eval_series_grid(tab, cnt, lam, par, z):
    out = np.empty((z.shape[0], N_SER))
    ser = np.empty(N_SER)
    for i in range(z.shape[0]):
        eval_series(tab, cnt, lam, z[i], smearing_u(par, z[i]), ser)
        out[i, :] = ser
    return out


# -- Green functions (k = 1) ----------------------------------------------------------

@jit
def _sin_minus_xcos(d):
    # sin d - d cos d, with a series where the difference cancels
    if abs(d) < 0.1:
        d2 = d * d
        return d * d2 * (1.0 / 3.0 - d2 * (1.0 / 30.0 - d2 * (1.0 / 840.0 - d2 / 45360.0)))
    return math.sin(d) - d * math.cos(d)


@jit
def green_inflation(tau, taub):
    """G(tau, taub) and dG/dtau for the de Sitter mode, tau > taub."""
    d = tau - taub
    if d <= 0.0:
        return 0.0, 0.0
    tt = tau * taub
    f = _sin_minus_xcos(d)
    G = math.sin(d) + f / tt
    dG = math.cos(d) + d * math.sin(d) / tt - f / (tau * tt)
    return G, dG


@jit
def green_radiation(y, yb):
    if y <= yb:
        return 0.0
    return SQRT3 * math.sin((y - yb) / SQRT3)


# -- stochastic ensemble -----------------------------------------------------------------

_GOLD = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_SALT_A = np.uint64(0x243F6A8885A308D3)
_SALT_B = np.uint64(0x13198A2E03707344)
_INV53 = 1.0 / 9007199254740992.0


@jit
def mix64(z):
    """SplitMix64 finaliser; works on uint64 scalars and arrays."""
    z = z + _GOLD
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def stream_key(seed, part):
    """Per-(seed, mode part) stream key; plain integers so no overflow warnings."""
    mask = (1 << 64) - 1
    z = ((int(seed) & mask) ^ ((int(part) * 0x9E3779B97F4A7C15) & mask)) & mask
    return int(mix64(np.array([z], dtype=np.uint64))[0])


@jit
def _normal_scalar(key, traj, step):
    base = mix64(mix64(key + np.uint64(traj)) + np.uint64(step))
    u1 = (np.float64(mix64(base ^ _SALT_A) >> _S11) + 0.5) * _INV53
    u2 = (np.float64(mix64(base ^ _SALT_B) >> _S11) + 0.5) * _INV53
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


def normals_vector(key, traj, step):
    """Numpy twin of the scalar generator for an array of trajectory indices."""
    base = mix64(mix64(np.uint64(key) + traj.astype(np.uint64)) + np.uint64(step))
    u1 = ((mix64(base ^ _SALT_A) >> _S11).astype(np.float64) + 0.5) * _INV53
    u2 = ((mix64(base ^ _SALT_B) >> _S11).astype(np.float64) + 0.5) * _INV53
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


@jit_parallel
def _ensemble_loop(key, traj0, n_traj, dtau, R, I, ua, ub, out_idx):
    n_out = out_idx.shape[0]
    V = np.zeros((n_out, n_traj))
    X = np.zeros((n_out, n_traj))
    SG = np.zeros((n_out, n_traj))
    n_steps = dtau.shape[0]
    for t in prange(n_traj):
        v = 0.0
        chi = 0.0
        sig = 0.0
        o = 0
        while o < n_out and out_idx[o] == 0:
            o += 1
        for n in range(n_steps):
            dt = dtau[n]
            r = R[n]
            i = I[n]
            a = ua[n] - 2.0 * ub[n] * i
            bb = ub[n]
            dw = math.sqrt(dt) * _normal_scalar(key, traj0 + t, n)
            v_new = v + (chi - 2.0 * i * v) * dt + a / (2.0 * r) * dw
            chi_new = chi + (2.0 * i * chi - 4.0 * r * r * v + 8.0 * bb * r * v * a) * dt + 2.0 * bb * r * dw
            sig += ((-r + 2.0 * r * r * v * v - 0.5 * chi * chi + 0.5 * bb * a * (1.0 - 8.0 * r * v * v)) * dt
                    - 2.0 * bb * r * v * dw)
            v = v_new
            chi = chi_new
            while o < n_out and out_idx[o] == n + 1:
                V[o, t] = v
                X[o, t] = chi
                SG[o, t] = sig
                o += 1
    return V, X, SG


def _ensemble_vector(key, traj0, n_traj, dtau, R, I, ua, ub, out_idx):
    n_out = out_idx.shape[0]
    V = np.zeros((n_out, n_traj))
    X = np.zeros((n_out, n_traj))
    SG = np.zeros((n_out, n_traj))
    trajs = np.arange(traj0, traj0 + n_traj, dtype=np.int64)
    v = np.zeros(n_traj)
    chi = np.zeros(n_traj)
    sig = np.zeros(n_traj)
    o = 0
    while o < n_out and out_idx[o] == 0:
        o += 1
    for n in range(dtau.shape[0]):
        dt = dtau[n]
        r = R[n]
        i = I[n]
        a = ua[n] - 2.0 * ub[n] * i
        bb = ub[n]
        dw = math.sqrt(dt) * normals_vector(key, trajs, n)
        v_new = v + (chi - 2.0 * i * v) * dt + a / (2.0 * r) * dw
        chi_new = chi + (2.0 * i * chi - 4.0 * r * r * v + 8.0 * bb * r * v * a) * dt + 2.0 * bb * r * dw
        sig = sig + ((-r + 2.0 * r * r * v * v - 0.5 * chi * chi + 0.5 * bb * a * (1.0 - 8.0 * r * v * v)) * dt
                     - 2.0 * bb * r * v * dw)
        v, chi = v_new, chi_new
        while o < n_out and out_idx[o] == n + 1:
            V[o] = v
            X[o] = chi
            SG[o] = sig
            o += 1
    return V, X, SG


def run_sde_ensemble(key, traj0, n_traj, dtau, R, I, ua, ub, out_idx, backend=None):
    backend = backend or ("numba" if HAS_NUMBA else "numpy")
    args = (np.uint64(key), int(traj0), int(n_traj), np.ascontiguousarray(dtau), np.ascontiguousarray(R),
            np.ascontiguousarray(I), np.ascontiguousarray(ua), np.ascontiguousarray(ub),
            np.ascontiguousarray(out_idx, dtype=np.int64))
    if backend == "numba":
        return _ensemble_loop(*args)
    return _ensemble_vector(*args)


# -- exclusion grid ------------------------------------------------------------------------

@jit
def _inside(px, py, vx, vy):
    inside = False
    n = vx.shape[0]
    j = n - 1
    for i in range(n):
        if (vy[i] > py) != (vy[j] > py):
            xc = vx[i] + (py - vy[i]) * (vx[j] - vx[i]) / (vy[j] - vy[i])
            if px < xc:
                inside = not inside
        j = i
    return inside


@jit_parallel
def _lab_mask_loop(px, py, vx, vy, starts, counts, allowed_flags):
    """True where a point is laboratory-excluded."""
    m = px.shape[0]
    out = np.zeros(m, dtype=np.bool_)
    n_poly = starts.shape[0]
    has_allowed = False
    for k in range(n_poly):
        if allowed_flags[k]:
            has_allowed = True
    for i in prange(m):
        excl = False
        in_allowed = False
        for k in range(n_poly):
            a = starts[k]
            b = a + counts[k]
            ins = _inside(px[i], py[i], vx[a:b], vy[a:b])
            if allowed_flags[k]:
                if ins:
                    in_allowed = True
            elif ins:
                excl = True
        if has_allowed and not in_allowed:
            excl = True
        out[i] = excl
    return out


def _inside_vector(px, py, vx, vy):
    inside = np.zeros(px.shape, dtype=bool)
    n = vx.shape[0]
    j = n - 1
    for i in range(n):
        crosses = (vy[i] > py) != (vy[j] > py)
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = vx[i] + (py - vy[i]) * (vx[j] - vx[i]) / (vy[j] - vy[i])
        inside ^= crosses & (px < xc)
        j = i
    return inside


def _lab_mask_vector(px, py, vx, vy, starts, counts, allowed_flags):
    excl = np.zeros(px.shape, dtype=bool)
    in_allowed = np.zeros(px.shape, dtype=bool)
    for k in range(starts.shape[0]):
        a, b = starts[k], starts[k] + counts[k]
        ins = _inside_vector(px, py, vx[a:b], vy[a:b])
        if allowed_flags[k]:
            in_allowed |= ins
        else:
            excl |= ins
    if np.any(allowed_flags):
        excl |= ~in_allowed
    return excl


def lab_excluded_mask(px, py, vx, vy, starts, counts, allowed_flags, backend=None):
    backend = backend or ("numba" if HAS_NUMBA else "numpy")
    args = tuple(np.ascontiguousarray(a) for a in (px, py, vx, vy, starts, counts, allowed_flags))
    if backend == "numba":
        return _lab_mask_loop(*args)
    return _lab_mask_vector(*args)
