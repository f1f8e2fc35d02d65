"""Wavefunction route: the Gaussian state of one mode under CSL.

The state is psi ~ N exp(-Omega (v - v_bar)^2 + i chi v + i sigma). Omega obeys
a deterministic Riccati equation, the remaining parameters an Ito system
driven by the collapse noise. Three Omega solvers are provided (nonlinear
Riccati, linearised second-order equation, first order in gamma) together
with an Euler-Maruyama ensemble for (v_bar, chi, sigma).

Dimensionless quantities follow :mod:`csl_cosmo.moments`: k = 1, tau = k eta
shifted per era, g = gamma H^2 / m0^2.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import _kernels as K
from .background import CosmologyParams, Era, MatchingData, frequency_squared, scale_factor
from .coupling import CslParams, couplings_inflation, couplings_radiation
from .moments import IntegrationError, Mode, ModeSetup, _breaks, integrate_moments

log = logging.getLogger(__name__)

BACKENDS = ("riccati", "linearized")
POLE_THRESHOLD = 1e-3  # |g| below this fraction of its running maximum counts as a pole
MAX_HALVINGS = 40


# -- state and coefficients ------------------------------------------------------------------


@dataclass(frozen=True)
class WavefunctionState:
    re_omega: float
    im_omega: float
    v_bar: float = 0.0
    chi: float = 0.0
    sigma: float = 0.0
    log_norm: float | None = None

    def __post_init__(self):
        if not self.re_omega > 0:
            raise ValueError("re_omega must be positive")
        if self.log_norm is None:
            object.__setattr__(self, "log_norm", self.norm_expected())

    @property
    def omega(self):
        return complex(self.re_omega, self.im_omega)

    def norm_expected(self):
        """ln |N| = ln (2 ReOmega / pi)^{1/4}."""
        return 0.25 * math.log(2.0 * self.re_omega / math.pi)

    def norm_drift(self):
        return self.log_norm - self.norm_expected()


@dataclass(frozen=True)
class LinearizedCoeffs:
    c1: complex
    c2: complex
    delta_omega_sq: complex


def linearized_coeffs(mode: Mode, era: Era, z, w_free=None):
    """C1, C2 and Delta omega^2 = -C1'/2 - C1^2/4 + C2 - omega^2 at era variable z."""
    ser, _ = mode.point(era, z)
    g = mode.setup.g
    b, m, n = ser[K.S_B], ser[K.S_M], ser[K.S_N]
    bt, btt, mt, w = ser[K.S_BT], ser[K.S_BTT], ser[K.S_MT], ser[K.S_W]
    d = 1.0 - 2j * g * b
    c1 = -2j * g * (2.0 * m - bt / d)
    c1p = -4j * g * mt + 2j * g * btt / d + 2j * g * bt * (2j * g * bt) / (d * d)
    c2 = d * (w - 2j * g * n)
    dw2 = -0.5 * c1p - 0.25 * c1 * c1 + (c2 - w)
    return LinearizedCoeffs(c1, c2, dw2)


def delta_omega_check(setup: ModeSetup, era: Era, zs):
    """max |Delta omega^2 + i g S| over the era variables ``zs``."""
    mode = Mode(setup)
    worst = 0.0
    for z in zs:
        lc = linearized_coeffs(mode, era, z)
        s = mode.point(era, z)[0][K.S_S]
        worst = max(worst, abs(lc.delta_omega_sq + 1j * setup.g * s))
    return worst


@dataclass(frozen=True)
class NoiseStream:
    """Counter-based Gaussian increments keyed by (seed, part, trajectory, step).

    ``part`` separates the real and imaginary parts of the mode, which see
    independent noises.
    """

    seed: int
    part: int = 0

    @property
    def key(self):
        return K.stream_key(self.seed, self.part)

    def normals(self, traj, step):
        traj = np.atleast_1d(np.asarray(traj, dtype=np.int64))
        return K.normals_vector(np.uint64(self.key), traj, int(step))

    def increments(self, traj, dtau):
        """dW for every step of ``dtau`` (rows) and trajectory (columns)."""
        dtau = np.asarray(dtau, float)
        return np.vstack([math.sqrt(dt) * self.normals(traj, n) for n, dt in enumerate(dtau)])


# -- physical-unit Riccati and Ito step ------------------------------------------------------


def _couplings(k, eta, era, cosmo, csl, match):
    if era is Era.INFLATION:
        c = couplings_inflation(k, eta, cosmo, csl)
        a = scale_factor(era, eta, cosmo)
    else:
        match = match or MatchingData.from_cosmology(cosmo)
        c = couplings_radiation(k, eta, cosmo, match, csl)
        a = scale_factor(era, eta, cosmo, match)
    return c.alpha, c.beta, a


def riccati_rhs(omega, k, eta, era: Era, cosmo: CosmologyParams, csl: CslParams, match=None):
    """dOmega/deta = -2(i + 2 gt a^4 beta^2) Omega^2 + 4 i gt a^4 alpha beta Omega
    + gt a^4 alpha^2 + i omega^2 / 2, with gt = gamma / m0^2."""
    w2 = frequency_squared(era, k, eta, match)
    if csl.gamma == 0.0:
        return -2j * omega * omega + 0.5j * w2
    al, be, a = _couplings(k, eta, era, cosmo, csl, match)
    gt = csl.gamma_tilde
    a4 = a**4
    return (-2.0 * (1j + 2.0 * gt * a4 * be * be) * omega * omega + 4j * gt * a4 * al * be * omega
            + gt * a4 * al * al + 0.5j * w2)


def _ito_rates(st: WavefunctionState, w2, gt, a, al, be):
    """Drifts and noise coefficients of the six-equation Ito system."""
    r, i, v, chi = st.re_omega, st.im_omega, st.v_bar, st.chi
    a4 = a**4
    A = al - 2.0 * be * i
    sg = math.sqrt(gt) * a * a
    dr = gt * a4 * al * al - 4.0 * gt * a4 * be * be * (r * r - i * i) + 4.0 * r * i - 4.0 * gt * a4 * al * be * i
    di = 0.5 * w2 - 2.0 * (r * r - i * i) - 8.0 * gt * a4 * be * be * r * i + 4.0 * gt * a4 * al * be * r
    drift = {
        "re_omega": dr,
        "im_omega": di,
        "log_norm": dr / (4.0 * r),
        "v_bar": chi - 2.0 * v * i,
        "sigma": -r + 2.0 * r * r * v * v - 0.5 * chi * chi + 0.5 * gt * a4 * be * A * (1.0 - 8.0 * r * v * v),
        "chi": 2.0 * i * chi - 4.0 * r * r * v + 8.0 * gt * a4 * be * r * v * A,
    }
    noise = {
        "v_bar": sg * A / (2.0 * r),
        "sigma": -2.0 * sg * be * r * v,
        "chi": 2.0 * sg * be * r,
    }
    return drift, noise


def sde_step(state: WavefunctionState, dW, k, eta, deta, era: Era, cosmo: CosmologyParams,
             csl: CslParams, match=None):
    """One Euler-Maruyama step of the Ito system (physical units).

    (ReOmega, ImOmega) take no noise. If ReOmega would become non-positive the
    step is redone as 2, 4, ... equal sub-steps (up to 2^40) sharing the
    increment equally; only the deterministic block can cause this.
    """
    w2 = frequency_squared(era, k, eta, match)
    if csl.gamma == 0.0:
        al = be = 0.0
        a = 1.0
    else:
        al, be, a = _couplings(k, eta, era, cosmo, csl, match)
    gt = csl.gamma_tilde
    for halving in range(MAX_HALVINGS + 1):
        n_sub = 1 << halving
        h = deta / n_sub
        dw = dW / n_sub
        st = state
        ok = True
        for j in range(n_sub):
            if j:
                w2 = frequency_squared(era, k, eta + j * h, match)
                if csl.gamma != 0.0:
                    al, be, a = _couplings(k, eta + j * h, era, cosmo, csl, match)
            drift, noise = _ito_rates(st, w2, gt, a, al, be)
            new = {f: getattr(st, f) + drift[f] * h + noise.get(f, 0.0) * dw for f in drift}
            if not new["re_omega"] > 0:
                ok = False
                break
            st = WavefunctionState(**new)
        if ok:
            if halving:
                log.info("sde_step: ReOmega positivity required %d sub-steps", n_sub)
            return st
    raise IntegrationError(f"sde_step: ReOmega stays non-positive after {MAX_HALVINGS} halvings")


# -- deterministic Omega ----------------------------------------------------------------------


@dataclass
class OmegaTrajectory:
    """Omega (k = 1 units) on a time grid, with its free counterpart."""

    z: np.ndarray
    era: np.ndarray
    omega: np.ndarray
    omega_free: np.ndarray
    backend: str
    events: list = field(default_factory=list)

    @property
    def re_omega(self):
        return self.omega.real

    @property
    def im_omega(self):
        return self.omega.imag

    @property
    def inv_r_minus_one(self):
        return self.omega.real / self.omega_free.real - 1.0


def _free_omega(mode, era_code, z):
    fr = mode.point(Era.RADIATION if era_code else Era.INFLATION, z)[1]
    return complex(fr[3], fr[4])


def _riccati_omega(setup, y_end, n_inf, n_rad, rtol, atol, radiation):
    tr = integrate_moments(setup, y_end=y_end, n_inf=n_inf, n_rad=n_rad, rtol=rtol, atol=atol,
                           radiation=radiation)
    omega = tr.re_omega + 1j * tr.im_omega
    free = tr.free[:, 3] + 1j * tr.free[:, 4]
    return OmegaTrajectory(tr.z, tr.era, omega, free, "riccati", list(tr.events))


class _Pole(Exception):
    pass


class _Stiff(Exception):
    pass


MAX_LINEAR_EVALS = 200_000


def _linear_leg(mode, era, u0, s_grid, rtol):
    """u'' + C1 u' + C2 u = 0 in s = ln z; returns (u, u_tau) on the grid."""
    par, tab, cnt, lam = mode.era_data(era)

    calls = [0]

    def f(s, y):
        calls[0] += 1
        if calls[0] > MAX_LINEAR_EVALS:
            raise _Stiff(era.value)
        return K.linear_rhs(s, y, par, tab, cnt, lam)

    y0 = [u0[0].real, u0[0].imag, u0[1].real, u0[1].imag]
    sol = integrate.solve_ivp(f, (s_grid[0], s_grid[-1]), y0, method="DOP853", t_eval=s_grid,
                              rtol=rtol, atol=1e-20)
    if not sol.success:
        raise IntegrationError(f"linearised {era.value} leg failed: {sol.message}")
    u = sol.y[0] + 1j * sol.y[1]
    p = sol.y[2] + 1j * sol.y[3]
    mag = np.abs(u)
    if np.any(mag < POLE_THRESHOLD * np.maximum.accumulate(mag)):
        raise _Pole(era.value)
    return u, p


def _linearized_omega(setup, y_end, n_inf, n_rad, rtol, radiation):
    mode = Mode(setup)
    g = setup.g
    sx = np.linspace(math.log(setup.x_ini), math.log(setup.x_end), max(n_inf, 2))
    om0 = _free_omega(mode, 0, setup.x_ini)
    b0 = g * mode.point(Era.INFLATION, setup.x_ini)[0][K.S_B]
    u, p = _linear_leg(mode, Era.INFLATION, (1.0 + 0j, 2.0 * (1j + 2.0 * b0) * om0), sx, rtol)
    zs, eras, us, ps = [np.exp(sx)], [np.zeros(len(sx), np.int8)], [u], [p]
    if radiation:
        sy = np.linspace(math.log(setup.x_end), math.log(y_end), max(n_rad, 2))
        lm = linearized_coeffs(mode, Era.INFLATION, setup.x_end)
        lp = linearized_coeffs(mode, Era.RADIATION, setup.x_end)
        # g = u exp(int C1/2) and g' continuous across eta_end
        ratio = p[-1] / u[-1] + 0.5 * (lm.c1 - lp.c1)
        ur, pr = _linear_leg(mode, Era.RADIATION, (1.0 + 0j, ratio), sy, rtol)
        zs.append(np.exp(sy))
        eras.append(np.ones(len(sy), np.int8))
        us.append(ur)
        ps.append(pr)
    z = np.concatenate(zs)
    era = np.concatenate(eras)
    u = np.concatenate(us)
    p = np.concatenate(ps)
    omega = np.empty(len(z), complex)
    free = np.empty(len(z), complex)
    for j, (zj, ej) in enumerate(zip(z, era)):
        e = Era.RADIATION if ej else Era.INFLATION
        b = g * mode.point(e, zj)[0][K.S_B]
        omega[j] = p[j] / (2.0 * (1j + 2.0 * b) * u[j])
        free[j] = _free_omega(mode, ej, zj)
    return OmegaTrajectory(z, era, omega, free, "linearized", [])


def integrate_omega(setup: ModeSetup, backend="riccati", y_end=1e-2, n_inf=200, n_rad=200,
                    rtol=1e-10, atol=1e-14, radiation=True):
    """Omega from Bunch-Davies at x_ini through eta_end.

    ``riccati`` integrates ln ReOmega and ImOmega directly and resolves
    ReOmega on super-Hubble scales; ``linearized`` integrates the second-order
    equation behind the Riccati flow, well conditioned only while
    ReOmega / |Omega| is not tiny. A zero of the linearised mode function
    (a pole of the Riccati solution), or a stiff stretch where the CSL terms
    dominate, switches to the other backend with a logged event.
    """
    if backend not in BACKENDS:
        raise ValueError(f"backend must be one of {BACKENDS}")
    if backend == "riccati":
        return _riccati_omega(setup, y_end, n_inf, n_rad, rtol, atol, radiation)
    try:
        return _linearized_omega(setup, y_end, n_inf, n_rad, max(rtol, 1e-13), radiation)
    except (_Pole, _Stiff) as exc:
        why = "passed near a zero" if isinstance(exc, _Pole) else "became too stiff"
        msg = f"linearised mode function {why} during {exc}; switched to the riccati backend"
        log.warning(msg)
        out = _riccati_omega(setup, y_end, n_inf, n_rad, rtol, atol, radiation)
        out.events.append(msg)
        return out


def perturbative_omega(setup: ModeSetup, z, era: Era, rel=1e-11, limit=400):
    """Omega to first order in gamma, g = g0 + h with h'' + omega^2 h = i g S g0.

    h is a Green-function quadrature started at x_ini, where the Riccati
    integration starts from Bunch-Davies; the homogeneous piece fixes that
    initial condition. g and g' are continuous across eta_end (the same rule
    the Riccati matching uses). Returns Omega in k = 1 units.
    """
    mode = Mode(setup)
    g = setup.g
    s = setup
    g0, g0p = mode.free_mode(era, z)
    om0 = g0p / (2j * g0)
    if g == 0.0:
        return om0
    wr = g0 * g0p.conjugate() - g0p * g0.conjugate()
    parts = [(Era.INFLATION, s.x_ini, s.x_end if era is Era.RADIATION else z)]
    if era is Era.RADIATION:
        parts.append((Era.RADIATION, s.x_end, z))
    I1 = 0j
    I2 = 0.0
    for e, za, zb in parts:
        lo, hi = sorted((za, zb))
        if hi <= lo:
            continue
        pts = ([1.0 / s.h, 3.0 / s.h, 0.3 / s.h, 1.0] if e is Era.INFLATION else [s.q, 3.0 * s.q, 0.3 * s.q])
        edges = _breaks(math.log(lo), math.log(hi), [math.log(p) for p in pts])

        def f(lz, which, e=e):
            zz = math.exp(lz)
            gg = mode.free_mode(e, zz)[0]
            sv = mode.point(e, zz)[0][K.S_S] * zz
            if which == 0:
                return (gg * gg).real * sv
            if which == 1:
                return (gg * gg).imag * sv
            return abs(gg) ** 2 * sv

        vals = []
        for which in range(3):
            tot = 0.0
            for a, b in zip(edges[:-1], edges[1:]):
                tot += integrate.quad(f, a, b, args=(which,), epsabs=0.0, epsrel=rel, limit=limit)[0]
            vals.append(tot)
        I1 += complex(vals[0], vals[1])
        I2 += vals[2]
    # G(t, tb) = (g0(tb) g0*(t) - g0(t) g0*(tb)) / W,  W = g0 g0*' - g0' g0*
    h = 1j * g * (g0.conjugate() * I1 - g0 * I2) / wr
    hp = 1j * g * (g0p.conjugate() * I1 - g0p * I2) / wr
    # homogeneous piece for the initial condition Omega(x_ini) = Omega_BD
    gi, gip = mode.free_mode(Era.INFLATION, s.x_ini)
    li = linearized_coeffs(mode, Era.INFLATION, s.x_ini)
    bi = g * mode.point(Era.INFLATION, s.x_ini)[0][K.S_B]
    D = gip * (-2j * bi) + 0.5 * li.c1 * gi
    h += D * (gi * g0.conjugate() - g0 * gi.conjugate()) / wr
    hp += D * (gi * g0p.conjugate() - g0p * gi.conjugate()) / wr
    ser = mode.point(era, z)[0]
    m, b, bt = ser[K.S_M], ser[K.S_B], ser[K.S_BT]
    corr = -(h / g0 - hp / g0p) + 1j * (g0 / g0p) * g * (2.0 * m - bt) + 2j * g * b
    return om0 * (1.0 + corr)


# -- Monte Carlo ensemble ---------------------------------------------------------------------


@dataclass
class EnsembleResult:
    """Ensemble statistics on the output grid (k = 1 units, inflation)."""

    x: np.ndarray
    mean_v: np.ndarray
    se_v: np.ndarray
    mean_v2: np.ndarray
    se_v2: np.ndarray
    re_omega: np.ndarray
    im_omega: np.ndarray
    re_omega_free: np.ndarray
    n_traj: int
    seed: int
    n_steps: int
    backend: str

    @property
    def spread(self):
        """(4 ReOmega)^-1, the quantum width of each member."""
        return 0.25 / self.re_omega

    @property
    def p_vv(self):
        """E[v_bar^2] + (4 ReOmega)^-1, to be compared with the Lindblad P_vv."""
        return self.mean_v2 + self.spread

    @property
    def r_value(self):
        return self.re_omega_free / self.re_omega


def ensemble_grid(setup: ModeSetup, x_out, ds_max=1e-3, dtau_max=2e-3, x_start=None):
    """Step grid in x (decreasing) with |d ln x| <= ds_max and |d tau| <= dtau_max,
    containing every output time."""
    s = setup
    x0 = x_start or min(s.x_ini, 30.0 / s.h if s.h > 0.3 else s.x_ini)
    x0 = max(x0, max(x_out))
    nodes = [x0]
    x = x0
    targets = sorted(set(float(v) for v in x_out), reverse=True)
    for t in targets:
        while x > t * (1.0 + 1e-14):
            dx = min(x * ds_max, dtau_max)
            if x - dx < t + 0.5 * dx:
                # split the remainder instead of leaving a sliver step
                x = t if x - t <= dx else 0.5 * (x + t)
            else:
                x = x - dx
            nodes.append(x)
    return np.array(nodes)


def run_ensemble(setup: ModeSetup, n_traj, seed, x_out, ds_max=1e-3, dtau_max=2e-3, backend=None,
                 rtol=1e-10, chunk=1024):
    """Euler-Maruyama ensemble of (v_bar, chi, sigma) during inflation.

    Omega is integrated once by the Riccati route and shared by every member.
    Trajectory t uses the counter-based stream (seed, t, step), so results
    do not depend on chunking or thread count. Statistics use compensated
    sums (math.fsum).
    """
    if n_traj < 2:
        raise ValueError("n_traj must be at least 2")
    x_out = np.sort(np.asarray(x_out, float))[::-1]
    if np.any(x_out < setup.x_end) or np.any(x_out > setup.x_ini):
        raise ValueError("output times must lie inside inflation")
    xs = ensemble_grid(setup, x_out, ds_max, dtau_max)
    tr = integrate_moments(setup, n_inf=2, x_out=xs, radiation=False, rtol=rtol)
    # integrate_moments may add x_ini and x_end rows; keep the grid rows only
    lz = np.log(tr.z)
    idx = np.array([int(np.argmin(np.abs(lz - math.log(x)))) for x in xs])
    R = tr.re_omega[idx]
    I = tr.im_omega[idx]
    Rf = tr.free[idx, 3]
    mode = Mode(setup)
    sg = math.sqrt(setup.g)
    ser = np.array([mode.point(Era.INFLATION, x)[0] for x in xs])
    ua = sg * ser[:, K.S_UA]
    ub = sg * ser[:, K.S_UB]
    dtau = xs[:-1] - xs[1:]
    out_pos = np.searchsorted(-xs, -x_out)
    key = K.stream_key(seed, 0)
    V = np.empty((len(x_out), n_traj))
    for t0 in range(0, n_traj, chunk):
        n = min(chunk, n_traj - t0)
        v, _, _ = K.run_sde_ensemble(key, t0, n, dtau, R[:-1], I[:-1], ua[:-1], ub[:-1], out_pos, backend)
        V[:, t0:t0 + n] = v
    mean_v, se_v, mean_v2, se_v2 = (np.empty(len(x_out)) for _ in range(4))
    for j in range(len(x_out)):
        row = V[j].tolist()
        m1 = math.fsum(row) / n_traj
        sq = [r * r for r in row]
        m2 = math.fsum(sq) / n_traj
        var1 = math.fsum((r - m1) ** 2 for r in row) / (n_traj - 1)
        var2 = math.fsum((q - m2) ** 2 for q in sq) / (n_traj - 1)
        mean_v[j], mean_v2[j] = m1, m2
        se_v[j], se_v2[j] = math.sqrt(var1 / n_traj), math.sqrt(var2 / n_traj)
    Rout = R[out_pos]
    return EnsembleResult(
        x=x_out, mean_v=mean_v, se_v=se_v, mean_v2=mean_v2, se_v2=se_v2, re_omega=Rout,
        im_omega=I[out_pos], re_omega_free=Rf[out_pos],
        n_traj=int(n_traj), seed=int(seed), n_steps=len(dtau),
        backend=backend or ("numba" if K.HAS_NUMBA else "numpy"),
    )


__all__ = [
    "BACKENDS", "EnsembleResult", "LinearizedCoeffs", "NoiseStream", "OmegaTrajectory", "WavefunctionState",
    "delta_omega_check", "ensemble_grid", "integrate_omega", "linearized_coeffs", "perturbative_omega",
    "riccati_rhs", "run_ensemble", "sde_step",
]
