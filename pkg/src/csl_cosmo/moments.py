"""Deterministic route: Lindblad moments of one Fourier mode.

The noise-averaged state of a mode is Gaussian and fully described by the
second moments P_vv, P_vp + P_pv and P_pp. They obey a linear system driven by
gamma a^4 (beta^2, alpha beta, alpha^2); eliminating the cross terms gives a
third-order equation for P_vv with source S whose solution is the free value
plus a Green-function quadrature. Both routes live here.

Integration runs in the dimensionless variables x = -k eta (inflation) and
y = k (eta - eta_r) (radiation) and stores *relative* deviations from the free
theory, which keeps corrections of order 1e-12 resolvable next to moments that
grow like x^-2.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate

from . import _kernels as K
from .background import CosmologyParams, Era, MatchingData, frequency_squared, scale_factor
from .coupling import CslParams, inflation_series, pack_series, radiation_mode_coefficients, radiation_series

MATCHING_RULES = ("rescaled", "continuous")
JUMP_LIMIT = 1.0  # largest |Delta Omega / Omega| for which the first-order matching is applied


class IntegrationError(RuntimeError):
    """Raised when the adaptive integrator gives up; carries the last good state."""

    def __init__(self, message, last_state=None, last_z=None, era=None):
        super().__init__(message)
        self.last_state = last_state
        self.last_z = last_z
        self.era = era


@dataclass(frozen=True)
class MomentState:
    p_vv: float
    p_cross: float
    p_pp: float

    def uncertainty(self):
        """P_vv P_pp - (P_cross/2)^2, bounded below by 1/4 for a physical state."""
        return self.p_vv * self.p_pp - 0.25 * self.p_cross**2


@dataclass(frozen=True)
class FreeMode:
    g0: complex
    g0_prime: complex

    @property
    def wronskian(self):
        return self.g0_prime * self.g0.conjugate() - self.g0 * self.g0_prime.conjugate()


# -- the per-mode dimensionless problem ---------------------------------------------


@dataclass(frozen=True)
class ModeSetup:
    """One mode, reduced to its k-independent dimensionless parameters.

    g = gamma H^2 / m0^2, h = H r_c, x_end = -k eta_end. Moments are in
    units of k (P_vv k, P_cross, P_pp / k). ``matching`` selects how the
    mode function is continued into the radiation era: ``rescaled`` keeps
    the curvature perturbation continuous (the free v jumps by the ratio of
    the two pump fields), ``continuous`` carries v and its momentum across.
    """

    eps1: float
    g: float
    h: float
    x_end: float
    eps2: float = 0.0
    p: float = 0.0
    leading_order: bool = False
    x_ini: float = 100.0
    matching: str = "rescaled"

    def __post_init__(self):
        if not 0.0 < self.eps1 < 1.0:
            raise ValueError("eps1 must lie in (0, 1)")
        if self.g < 0:
            raise ValueError("gamma must be non-negative")
        if not self.h > 0:
            raise ValueError("r_c must be positive")
        if not 0.0 < self.x_end < self.x_ini:
            raise ValueError("need 0 < -k eta_end < x_ini")
        if self.matching not in MATCHING_RULES:
            raise ValueError(f"matching must be one of {MATCHING_RULES}")

    @classmethod
    def from_physical(cls, k, cosmo: CosmologyParams, csl: CslParams, **kw):
        return cls(
            eps1=cosmo.epsilon1,
            eps2=cosmo.epsilon2,
            g=csl.gamma_tilde * cosmo.H_inf**2,
            h=cosmo.H_inf * csl.r_c,
            x_end=-k * cosmo.eta_end,
            p=csl.p_index,
            **kw,
        )

    @property
    def q(self):
        """Smearing constant of the radiation era: k r_c / a = q / y."""
        return self.h * self.x_end**2

    @property
    def c2(self):
        return 6.0 / self.eps1 if self.matching == "rescaled" else 1.0


class Mode:
    """Packed series and free-mode data for both eras of a :class:`ModeSetup`."""

    def __init__(self, setup: ModeSetup):
        self.setup = s = setup
        self.inf = inflation_series(s.eps1, s.eps2, s.h, s.p, s.leading_order)
        self.rad = radiation_series(s.x_end, s.h, s.p)
        self.tab_inf = pack_series(self.inf)
        self.tab_rad = pack_series(self.rad)
        xe = s.x_end
        c1, c2 = radiation_mode_coefficients(xe)
        self.par_inf = np.zeros(K.N_PAR)
        self.par_inf[K.P_ERA] = 0.0
        self.par_inf[K.P_G] = s.g
        self.par_inf[K.P_K] = self.inf.K
        self.par_inf[K.P_XE] = xe
        self.par_inf[K.P_C2] = 1.0
        self.par_rad = np.zeros(K.N_PAR)
        self.par_rad[K.P_ERA] = 1.0
        self.par_rad[K.P_G] = s.g
        self.par_rad[K.P_K] = self.rad.K
        self.par_rad[K.P_XE] = xe
        self.par_rad[K.P_C2] = s.c2
        self.par_rad[K.P_GER], self.par_rad[K.P_GEI] = c1.real, c1.imag
        self.par_rad[K.P_GPR], self.par_rad[K.P_GPI] = c2.real, c2.imag
        self.c1, self.c2 = c1, c2

    def era_data(self, era: Era):
        if era is Era.INFLATION:
            return (self.par_inf, *self.tab_inf)
        return (self.par_rad, *self.tab_rad)

    def point(self, era: Era, z):
        """(series values without the gamma factor, free functions) at era variable z."""
        par, tab, cnt, lam = self.era_data(era)
        return K.eval_point(par, tab, cnt, lam, float(z))

    def free_mode(self, era: Era, z):
        """Unit-normalised (k = 1, no pump rescaling) free mode and its tau-derivative."""
        if era is Era.INFLATION:
            tau = -z
            g0 = cmath.exp(1j * tau) * (1.0 + 1j / tau) / math.sqrt(2.0)
            gp = cmath.exp(1j * tau) * (1j - 1.0 / tau - 1j / tau**2) / math.sqrt(2.0)
            return g0, gp
        th = z / K.SQRT3
        u1, u2 = K.SQRT3 * math.sin(th), math.cos(th)
        return self.c1 * u1 + self.c2 * u2, self.c1 * u2 - self.c2 * u1 / 3.0

    def matching_jump(self, y_minus):
        """Map the deviation state across eta_end (inflation -> radiation)."""
        s = self.setup
        xe, g, c2 = s.x_end, s.g, s.c2
        sm, fm = self.point(Era.INFLATION, xe)
        sp, _ = self.point(Era.RADIATION, xe)
        p0 = fm[:3]
        r0, i0 = fm[3], fm[4]

        def bvec(ser):
            return np.array([0.0, -g * ser[K.S_B], g * (ser[K.S_M] - 0.5 * ser[K.S_BT])])

        yp = np.array(y_minus, dtype=float)
        yp[:3] = y_minus[:3] + (bvec(sp) / c2 - bvec(sm)) / p0
        bm, bp = g * sm[K.S_B], g * sp[K.S_B]

        def c1(ser):
            return -4j * g * ser[K.S_M] + 2j * g * ser[K.S_BT]

        # Omega: continuity of the linearised mode function (g, g') across eta_end,
        # g = u exp(int C1/2) with Omega = (g'/g - C1/2) / (2 (i + 2 gamma b)).
        # Only its first order in gamma is kept: the exact map is meaningful only
        # while 2 gamma b << 1 and otherwise drives ReOmega negative.
        delta1 = (c1(sm) - c1(sp)) / 4.0
        r_m = r0 * math.exp(y_minus[K.Y_L])
        i_m = i0 * (1.0 + y_minus[K.Y_I])
        jump = -1j * (2.0 * (bm - bp) * complex(r_m, i_m) + delta1)
        if abs(jump) > JUMP_LIMIT * abs(complex(r_m, i_m)):
            # collapse regime: the expansion is meaningless, carry the Gaussian
            # across and let the Riccati flow relax it onto its attractor
            self.last_jump = "continuous"
            return yp
        arg = math.expm1(y_minus[K.Y_L]) + jump.real / r0
        if not arg > -1.0:
            # |ImOmega| >> ReOmega on super-Hubble scales, so |jump| < |Omega| can
            # still hide a first-order shift that overshoots ReOmega: not first order
            self.last_jump = "continuous"
            return yp
        self.last_jump = "linearised"
        yp[K.Y_L] = math.log1p(arg)
        yp[K.Y_I] = y_minus[K.Y_I] + jump.imag / i0
        return yp


# -- trajectories ---------------------------------------------------------------------------


@dataclass
class MomentTrajectory:
    """Dense output of :func:`integrate_moments` in k = 1 units.

    ``delta`` holds the relative corrections of (P_vv, P_cross, P_pp),
    ``ell`` = ln(ReOmega / ReOmega_free) and ``iota`` the relative shift of
    ImOmega. Rows are ordered in time; ``era`` is 0 (inflation) or 1.
    """

    setup: ModeSetup
    z: np.ndarray
    era: np.ndarray
    delta: np.ndarray
    ell: np.ndarray
    iota: np.ndarray
    free: np.ndarray
    n_steps: int = 0
    events: list = field(default_factory=list)

    @property
    def p_vv(self):
        return self.free[:, 0] * (1.0 + self.delta[:, 0])

    @property
    def p_cross(self):
        return self.free[:, 1] * (1.0 + self.delta[:, 1])

    @property
    def p_pp(self):
        return self.free[:, 2] * (1.0 + self.delta[:, 2])

    @property
    def re_omega(self):
        return self.free[:, 3] * np.exp(self.ell)

    @property
    def im_omega(self):
        return self.free[:, 4] * (1.0 + self.iota)

    @property
    def correction_rel(self):
        """P_vv / P_vv(gamma = 0) - 1."""
        return self.delta[:, 0]

    @property
    def inv_r_minus_one(self):
        """1/R - 1 = ReOmega / ReOmega(gamma = 0) - 1."""
        return np.expm1(self.ell)

    def state(self, i, k=1.0):
        return MomentState(self.p_vv[i] / k, self.p_cross[i], self.p_pp[i] * k)

    def tau(self):
        """k eta_bar-like time coordinate: -x in inflation, y in radiation."""
        return np.where(self.era == 0, -self.z, self.z)


def _grid(z0, z1, n):
    return np.linspace(math.log(z0), math.log(z1), max(int(n), 2))


def _run_era(mode, era, y0, s_out, rtol, atol, max_steps, part=K.PART_ALL):
    par, tab, cnt, lam = mode.era_data(era)
    par = par.copy()
    par[K.P_PART] = part
    h0 = 1e-2 * abs(s_out[-1] - s_out[0]) / max(len(s_out), 1) or 1e-3
    Y, status, steps, last_s = K.dopri5(par, tab, cnt, lam, np.asarray(y0, float), s_out, rtol, atol,
                                        h0, max_steps)
    if status != 0:
        why = {1: "step size underflow", 2: "step budget exhausted", 3: "non-finite state"}[status]
        done = s_out <= last_s if s_out[-1] > s_out[0] else s_out >= last_s
        good = Y[np.nonzero(done)[0][-1]] if np.any(done) else np.asarray(y0)
        raise IntegrationError(f"{era.value} integration failed ({why}) at ln z = {last_s:.6g}",
                               last_state=good.copy(), last_z=math.exp(last_s), era=era)
    return Y, steps


def _run_omega_inverse(mode, era, y0, s_out, rtol):
    """Riccati block in Z = 1/Omega, for the collapse regime.

    There ReOmega is so large that ln ReOmega relaxes faster than ln z can
    resolve, while Z' = 2(i + 2 gamma b) - 4 i gamma m Z - (gamma n + i w/2) Z^2
    stays bounded; its fast relaxation onto the collapse attractor is left to
    an implicit (Radau) stepper.
    """
    par, tab, cnt, lam = mode.era_data(era)
    g = mode.setup.g
    ser0, fr0 = K.eval_point(par, tab, cnt, lam, math.exp(s_out[0]))
    om0 = complex(fr0[3] * math.exp(y0[K.Y_L]), fr0[4] * (1.0 + y0[K.Y_I]))
    z0 = 1.0 / om0

    def f(sv, w):
        z = math.exp(sv)
        ser = K.eval_point(par, tab, cnt, lam, z)[0]
        Z = complex(w[0], w[1])
        d = (2.0 * (1j + 2.0 * g * ser[K.S_B]) - 4j * g * ser[K.S_M] * Z
             - (g * ser[K.S_N] + 0.5j * ser[K.S_W]) * Z * Z) * K.dtau_ds(par, z)
        return [d.real, d.imag]

    sol = integrate.solve_ivp(f, (s_out[0], s_out[-1]), [z0.real, z0.imag], method="Radau",
                              t_eval=s_out, rtol=max(rtol, 1e-12), atol=1e-3 * rtol * abs(z0))
    if not sol.success:
        raise IntegrationError(f"{era.value} Riccati integration failed: {sol.message}",
                               last_state=np.asarray(y0, float), era=era)
    Y = np.tile(np.asarray(y0, float), (len(s_out), 1))
    for j, sv in enumerate(s_out):
        om = 1.0 / complex(sol.y[0, j], sol.y[1, j])
        fr = K.eval_point(par, tab, cnt, lam, math.exp(sv))[1]
        if not om.real > 0:
            raise IntegrationError(f"{era.value}: ReOmega became non-positive", last_state=Y[j - 1], era=era)
        Y[j, K.Y_L] = math.log(om.real / fr[3])
        Y[j, K.Y_I] = om.imag / fr[4] - 1.0
    return Y, int(sol.nfev)


def _run_split(mode, era, y0, s_out, rtol, atol, max_steps, events):
    """Moments and Omega integrated as separate blocks; Omega may switch variables."""
    Ym, n1 = _run_era(mode, era, y0, s_out, rtol, atol, max_steps, K.PART_MOMENTS)
    # the moment block is linear in gamma and its size is not known up front:
    # rerun until atol sits well below the deviations actually reached
    for _ in range(6):
        mag = float(np.max(np.abs(Ym[:, :3])))
        if not mag > 0 or atol <= 1e-2 * rtol * mag or atol < 1e-290:
            break
        atol = max(1e-4 * rtol * mag, 1e-300)
        Ym, n = _run_era(mode, era, y0, s_out, rtol, atol, max_steps, K.PART_MOMENTS)
        n1 += n
    try:
        Yo, n2 = _run_era(mode, era, y0, s_out, rtol, atol, max_steps // 4, K.PART_OMEGA)
    except IntegrationError as exc:
        events.append(f"{era.value}: Riccati step failed in deviation form ({exc}); "
                      "continued in the inverse variable 1/Omega")
        Yo, n2 = _run_omega_inverse(mode, era, y0, s_out, rtol)
    Y = Ym
    Y[:, 3:] = Yo[:, 3:]
    return Y, n1 + n2


def integrate_moments(setup: ModeSetup, y_end=1e-2, n_inf=200, n_rad=200, x_out=None, y_out=None,
                      rtol=1e-10, atol=1e-14, max_steps=2_000_000, radiation=True,
                      atol_scaled=True):
    """Integrate from Bunch-Davies at ``x_ini`` through eta_end to ``y = y_end``.

    Output times are log-spaced unless ``x_out`` / ``y_out`` are given. The
    radiation leg stops at y_end <= 1 (super-Hubble), where the free
    quantities used for normalisation stay away from zero.
    """
    s = setup
    mode = Mode(s)
    if atol_scaled:
        atol = atol * min(1.0, s.g) if s.g > 0 else atol
    if x_out is None:
        sx = _grid(s.x_ini, s.x_end, n_inf)
    else:
        x_out = np.asarray(x_out, float)
        if np.any(x_out > s.x_ini) or np.any(x_out < s.x_end):
            raise ValueError("inflation output times must lie in [x_end, x_ini]")
        sx = np.unique(np.concatenate([[math.log(s.x_ini), math.log(s.x_end)], np.log(x_out)]))[::-1]
    y0 = np.zeros(K.N_Y)
    events = []
    Yi, steps = _run_split(mode, Era.INFLATION, y0, sx, rtol, atol, max_steps, events)
    zs = [np.exp(sx)]
    eras = [np.zeros(len(sx), dtype=np.int8)]
    Ys = [Yi]
    if radiation:
        if not s.x_end < y_end <= 1.0:
            raise ValueError("y_end must lie in (x_end, 1]")
        yp = mode.matching_jump(Yi[-1])
        if mode.last_jump == "continuous":
            events.append("matching: Omega correction beyond first order; Omega carried continuously")
        if y_out is None:
            sy = _grid(s.x_end, y_end, n_rad)
        else:
            y_out = np.asarray(y_out, float)
            if np.any(y_out < s.x_end) or np.any(y_out > y_end):
                raise ValueError("radiation output times must lie in [x_end, y_end]")
            sy = np.unique(np.concatenate([[math.log(s.x_end), math.log(y_end)], np.log(y_out)]))
        Yr, st2 = _run_split(mode, Era.RADIATION, yp, sy, rtol, atol, max_steps, events)
        steps += st2
        zs.append(np.exp(sy))
        eras.append(np.ones(len(sy), dtype=np.int8))
        Ys.append(Yr)
    z = np.concatenate(zs)
    era = np.concatenate(eras)
    Y = np.vstack(Ys)
    free = np.empty((len(z), 5))
    for i, (zi, ei) in enumerate(zip(z, era)):
        free[i] = mode.point(Era.RADIATION if ei else Era.INFLATION, zi)[1]
    return MomentTrajectory(s, z, era, Y[:, :3].copy(), Y[:, 3].copy(), Y[:, 4].copy(), free, steps, events)


# -- source, free modes, Green functions (physical units) ----------------------------------------


def _era_variable(era, k, eta, cosmo, match):
    if era is Era.INFLATION:
        scale_factor(era, eta, cosmo)
        return -k * eta
    match = match or MatchingData.from_cosmology(cosmo)
    scale_factor(era, eta, cosmo, match)
    return k * (eta - match.eta_r)


def source_S(k, eta, era: Era, cosmo: CosmologyParams, csl: CslParams, match=None, leading_order=False):
    """S = (gamma/m0^2) [2 a^4 (alpha^2 + omega^2 beta^2) - 2 (a^4 alpha beta)' + (a^4 beta^2)''].

    Built from exact derivatives of the closed-form couplings. ``leading_order``
    drops eps2 and every subleading power of eps1 (inflation only).
    """
    if csl.gamma == 0.0:
        return 0.0
    z = _era_variable(era, k, eta, cosmo, match)
    h = cosmo.H_inf * csl.r_c
    if era is Era.INFLATION:
        es = inflation_series(cosmo.epsilon1, cosmo.epsilon2, h, csl.p_index, leading_order)
    else:
        es = radiation_series(-k * cosmo.eta_end, h, csl.p_index)
    val = float(es.evaluate("S", z))
    return csl.gamma_tilde * cosmo.H_inf**2 * k * k * val


def source_inflation_closed(k, eta, cosmo: CosmologyParams, csl: CslParams):
    """Leading slow-roll source during inflation, as a bracket in (l_H/lambda, r_c/lambda).

    The (l_H/lambda)^2 (r_c/lambda)^4 term carries a factor eps1 (it comes from
    the beta^2 eps1 cross terms); this is what the exact derivative gives.
    """
    if not eta <= cosmo.eta_end:
        raise ValueError("eta lies outside inflation")
    if csl.p_index:
        _closed_p_error()
    e1 = cosmo.epsilon1
    L = -k * eta
    Rl = cosmo.H_inf * csl.r_c * L
    L2, R2 = L * L, Rl * Rl
    br = (126 * e1**2 - 75 * e1 * L2 + 81 * e1**2 * R2 + 18 * L2**2 - 48 * e1 * L2 * R2
          + 18 * e1**2 * R2**2 + L2**3 + 7 * L2**2 * R2 - 12 * e1 * L2 * R2**2 + 2 * L2**2 * R2**2)
    pref = 4.0 * csl.gamma_tilde * e1 * cosmo.H_inf**2 * k * k * math.exp(-R2)
    return pref * br / L2**3


def _closed_p_error():
    raise ValueError("the closed-form source is only available for p = 0; use source_S")


def source_radiation_closed(k, eta, cosmo: CosmologyParams, csl: CslParams, match=None):
    """Radiation-era source as a bracket in l_H/lambda, a_end/a and (r_c/lambda)_end.

    The 6-coefficient term is (a_end/a)^4 (l_H/lambda)^4 (r_c/lambda)_end^4,
    which is what the exact derivative gives.
    """
    if csl.p_index:
        _closed_p_error()
    match = match or MatchingData.from_cosmology(cosmo)
    y = _era_variable(Era.RADIATION, k, eta, cosmo, match)
    xe = -k * cosmo.eta_end
    ra = xe / y
    rle = cosmo.H_inf * csl.r_c * xe
    L2 = y * y
    A2 = (ra * rle) ** 2
    br = (3024 - 414 * L2 + L2**3 - 1836 * A2 + 216 * A2**2 - 72 * L2 * A2**2 + 432 * L2 * A2
          + 6 * L2**2 * A2**2 - 21 * L2**2 * A2)
    pref = 8.0 * csl.gamma_tilde * cosmo.H_inf**2 * k * k * math.exp(-A2) * ra**4
    return pref * br / L2**3


def free_mode(era: Era, k, eta, cosmo: CosmologyParams, match=None, matching="rescaled"):
    """Bunch-Davies mode during inflation and its continuation into radiation.

    The radiation branch is the exact solution of v'' + k^2 v/3 = 0 matched to
    the inflationary mode at eta_end; with ``matching="rescaled"`` it carries
    the factor sqrt(6/eps1) that keeps the curvature perturbation continuous.
    Its super-Hubble form is -3i sin(k(eta - eta_r)/sqrt 3)/(sqrt(k eps1)(k eta_end)^2).
    """
    if not k > 0:
        raise ValueError("k must be positive")
    z = _era_variable(era, k, eta, cosmo, match)
    setup = ModeSetup(eps1=cosmo.epsilon1, g=0.0, h=1.0, x_end=-k * cosmo.eta_end,
                      x_ini=max(100.0, 2.0 * (-k * cosmo.eta_end)), matching=matching)
    g0, gp = Mode(setup).free_mode(era, z)
    c = math.sqrt(setup.c2) if era is Era.RADIATION else 1.0
    return FreeMode(c * g0 / math.sqrt(k), c * gp * math.sqrt(k))


def green_function(era: Era, k, eta, eta_bar, cosmo: CosmologyParams | None = None, match=None,
                   super_hubble=False):
    """Retarded Green function of v'' + omega^2 v within one era.

    Inflation uses the exact de Sitter form; ``super_hubble`` switches to
    (eta^3 - eta_bar^3)/(3 eta eta_bar). Radiation: sqrt(3)/k sin(k(eta - eta_bar)/sqrt 3).
    """
    if eta <= eta_bar:
        return 0.0
    if era is Era.INFLATION:
        if super_hubble:
            return (eta**3 - eta_bar**3) / (3.0 * eta * eta_bar)
        return K.green_inflation(k * eta, k * eta_bar)[0] / k
    return K.green_radiation(k * eta, k * eta_bar) / k


# -- quadrature oracle -------------------------------------------------------------------------


def _breaks(lo, hi, pts):
    pts = sorted(p for p in set(pts) if lo < p < hi)
    return [lo, *pts, hi]


def _quad_pieces(f, edges, rel, limit):
    tot, err = 0.0, 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        v, e = integrate.quad(f, a, b, epsabs=0.0, epsrel=rel, limit=limit)
        tot += v
        err += e
    return tot, err


def quadrature_solution(setup: ModeSetup, z, era: Era, rel=1e-12, limit=500, check=1e-8):
    """Relative correction of P_vv at (era, z) from P_vv = |g0|^2 + 1/2 int S G^2.

    Integrates in the log of the era variable, split at smearing and Hubble
    crossing and at eta_end. Returns (delta, estimated absolute error);
    raises if the error estimate exceeds ``check`` times the result.
    """
    s = setup
    mode = Mode(s)
    par_i, tab_i, cnt_i, lam_i = mode.era_data(Era.INFLATION)
    par_r, tab_r, cnt_r, lam_r = mode.era_data(Era.RADIATION)
    g = s.g
    if g == 0.0:
        return 0.0, 0.0
    xe = s.x_end

    def S_inf(xb):
        return K.eval_point(par_i, tab_i, cnt_i, lam_i, xb)[0][K.S_S]

    def S_rad(yb):
        return K.eval_point(par_r, tab_r, cnt_r, lam_r, yb)[0][K.S_S]

    inf_pts = [math.log(1.0 / s.h), 0.0, math.log(3.0 / s.h), math.log(0.3 / s.h)]
    if era is Era.INFLATION:
        if not xe <= z <= s.x_ini:
            raise ValueError("z outside the inflation window")
        tau = -z

        def f(lx):
            xb = math.exp(lx)
            G = K.green_inflation(tau, -xb)[0]
            return 0.5 * S_inf(xb) * G * G * xb

        val, err = _quad_pieces(f, _breaks(math.log(z), math.log(s.x_ini), inf_pts), rel, limit)
        p0 = mode.point(Era.INFLATION, z)[1][0]
    else:
        if not xe <= z <= 10.0:
            raise ValueError("z outside the radiation window")
        th = (z - xe) / K.SQRT3
        c, sn = math.cos(th), math.sin(th)

        def f(lx):
            xb = math.exp(lx)
            G, dG = K.green_inflation(-xe, -xb)
            Gx = G * c + K.SQRT3 * dG * sn
            return 0.5 * S_inf(xb) * Gx * Gx * xb

        v1, e1 = _quad_pieces(f, _breaks(math.log(xe), math.log(s.x_ini), inf_pts), rel, limit)
        v1 *= s.c2

        def fr(ly):
            yb = math.exp(ly)
            G = K.green_radiation(z, yb)
            return 0.5 * S_rad(yb) * G * G * yb

        rad_pts = [math.log(s.q), math.log(3.0 * s.q), math.log(0.3 * s.q)]
        v2, e2 = _quad_pieces(fr, _breaks(math.log(xe), math.log(z), rad_pts), rel, limit) if z > xe else (0.0, 0.0)
        val, err = v1 + v2, s.c2 * e1 + e2
        p0 = mode.point(Era.RADIATION, z)[1][0]
    delta = g * val / p0
    aerr = g * err / p0
    if aerr > check * max(abs(delta), 1e-300):
        raise IntegrationError(f"quadrature did not converge: error {aerr:.3g} on {delta:.3g}")
    return delta, aerr


def third_order_residual(traj: MomentTrajectory, era_code=0):
    """Residual of P''' + 4 w P' + 2 w' P - S for one era, from the moment system.

    Uses the dense output and analytic rates: with the moment equations
    P' = P_c + b, this equals the combination the three equations imply and
    is returned relative to the largest retained term.
    """
    s = traj.setup
    mode = Mode(s)
    era = Era.RADIATION if era_code else Era.INFLATION
    sel = np.nonzero(traj.era == era_code)[0]
    tau = np.where(era_code == 0, -traj.z[sel], traj.z[sel])
    order = np.argsort(tau)
    sel, tau = sel[order], tau[order]
    P = traj.p_vv[sel]
    ser = np.array([mode.point(era, z)[0] for z in traj.z[sel]])
    w = ser[:, K.S_W]
    S = s.g * ser[:, K.S_S]
    d1 = np.gradient(P, tau, edge_order=2)
    d2 = np.gradient(d1, tau, edge_order=2)
    d3 = np.gradient(d2, tau, edge_order=2)
    dw = np.gradient(w, tau, edge_order=2)
    res = d3 + 4.0 * w * d1 + 2.0 * dw * P - S
    scale = np.max(np.abs(np.vstack([d3, 4.0 * w * d1, 2.0 * dw * P, S])), axis=0)
    return tau, res, scale


def omega_free(era: Era, k, eta, cosmo: CosmologyParams, match=None):
    """Free-theory Omega = g0'/(2 i g0) (physical units)."""
    fm = free_mode(era, k, eta, cosmo, match)
    return fm.g0_prime / (2j * fm.g0)


__all__ = [
    "FreeMode", "IntegrationError", "MomentState", "MomentTrajectory", "Mode", "ModeSetup",
    "free_mode", "green_function", "integrate_moments", "omega_free", "quadrature_solution",
    "source_S", "source_inflation_closed", "source_radiation_closed", "third_order_residual",
    "frequency_squared",
]
