"""Observables: power spectrum, collapse criterion, closed forms and index fits.

Closed forms are kept as exact rational prefactors and evaluated as natural
logarithms, because at Delta N = 50 factors like exp(10 Delta N) leave the
double range. Two bookkeepings of the same coefficients coexist, one written
per energy density rho = 3 H^2 and one per H^2; both are provided and their
factor-3 equivalence is checked exactly.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from fractions import Fraction

import mpmath
import numpy as np

from .background import CosmologyParams, Era, PhysicalConstants, convert_units, load_constants
from .coupling import CslParams, gamma_of_lambda
from .moments import ModeSetup, integrate_moments

ROUTES = ("lindblad", "sde", "closed_form")
WHEN = ("radiation", "end_of_inflation")
FORMS = ("main", "supplement")

# reference values of the measured scalar spectrum (annotations only)
LN_1E10_AS = 3.044
N_S = 0.9649

# relative-correction prefactors; "main" multiplies rho = 3 H^2, "supplement" multiplies H^2
COEFFICIENTS = {
    ("end_of_inflation", "main"): Fraction(6),
    ("end_of_inflation", "supplement"): Fraction(36),
    ("inflation_crossing", "main"): Fraction(448, 3),
    ("inflation_crossing", "supplement"): Fraction(448),
    ("radiation_crossing", "main"): Fraction(35408, 429),
    ("radiation_crossing", "supplement"): Fraction(35408, 143),
}
# 1/R - 1 prefactors, per rho in both bookkeepings
COLLAPSE_COEFFICIENTS = {
    "inflation_crossing": Fraction(1152),
    "radiation_crossing": Fraction(7264, 11),
}
# source bracket of the radiation era for smearing crossing after inflation:
# S ~ sum_j c_j (q / y)^(2 j) y^-10 exp(-(q/y)^2) at leading order
RADIATION_BRACKET = (3024, -1836, 216)


class Regime(enum.Enum):
    INFLATION_CROSSING = "InflationCrossing"
    RADIATION_CROSSING = "RadiationCrossing"

    @classmethod
    def of(cls, h, x_end):
        """Branch rule H_end r_c < exp(Delta N), with x_end = exp(-Delta N)."""
        return cls.INFLATION_CROSSING if math.log(h) < -math.log(x_end) else cls.RADIATION_CROSSING

    @classmethod
    def of_physical(cls, k, cosmo: CosmologyParams, csl: CslParams):
        return cls.of(cosmo.H_end * csl.r_c, -k * cosmo.eta_end)

    @property
    def key(self):
        return "inflation_crossing" if self is Regime.INFLATION_CROSSING else "radiation_crossing"


@dataclass(frozen=True)
class SpectrumPoint:
    k: float
    p_v: float
    correction_rel: float
    r_value: float
    regime: Regime
    route: str = "lindblad"
    stderr: float = 0.0

    def __post_init__(self):
        if not self.p_v >= 0.0:
            raise ValueError("p_v must be non-negative")
        if not self.r_value > 0.0:
            raise ValueError("R must be positive")

    def as_row(self):
        return {
            "k": self.k, "P_v": self.p_v, "correction_rel": self.correction_rel, "R": self.r_value,
            "regime": self.regime.value, "route": self.route,
        }


@dataclass(frozen=True)
class ClosedForm:
    """A closed-form quantity stored as its natural logarithm."""

    ln_value: float
    coefficient: Fraction
    regime: str
    form: str

    @property
    def log10(self):
        return self.ln_value / math.log(10.0)

    @property
    def value(self):
        return math.exp(self.ln_value) if self.ln_value < 709.0 else math.inf


def _ln(q: Fraction):
    return math.log(q.numerator) - math.log(q.denominator)


def _check_p(csl: CslParams):
    if csl.p_index != 0:
        raise ValueError("closed forms are available for p = 0 only")


def _ln_x_end(k, cosmo: CosmologyParams):
    return -(cosmo.delta_N if k is None else cosmo.delta_N_of_k(k))


def correction_coefficient(regime: Regime, cosmo: CosmologyParams, csl: CslParams, k=None,
                           form="main") -> ClosedForm:
    """ln of the relative CSL correction to P_vv after the transition (p = 0).

    inflation crossing: c gamma/m0^2 rho_end eps1 (k/aH)_end^-1
    radiation crossing: c gamma/m0^2 rho_end eps1 (H r_c)^-9 (k/aH)_end^-10
    with (k/aH)_end = exp(-Delta N(k)); ``k`` defaults to the pivot of ``cosmo``.
    """
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")
    _check_p(csl)
    c = COEFFICIENTS[(regime.key, form)]
    if csl.gamma == 0.0:
        return ClosedForm(-math.inf, c, regime.key, form)
    scale = math.log(3.0) if form == "main" else 0.0
    lx = _ln_x_end(k, cosmo)
    ln = _ln(c) + math.log(csl.gamma_tilde) + scale + 2.0 * math.log(cosmo.H_end) + math.log(cosmo.epsilon1)
    if regime is Regime.INFLATION_CROSSING:
        ln -= lx
    else:
        ln += -9.0 * math.log(cosmo.H_end * csl.r_c) - 10.0 * lx
    return ClosedForm(ln, c, regime.key, form)


def end_of_inflation_correction(cosmo: CosmologyParams, csl: CslParams, k=None, form="supplement"):
    """ln of the correction at the end of inflation, c gamma/m0^2 eps1^3 X (k/aH)_end^-1.

    X is rho_inf for ``main`` (c = 6) and H^2 for ``supplement`` (c = 36); the two
    differ by a factor 2 and the integrator sides with the second.
    """
    if form not in FORMS:
        raise ValueError(f"form must be one of {FORMS}")
    _check_p(csl)
    c = COEFFICIENTS[("end_of_inflation", form)]
    if csl.gamma == 0.0:
        return ClosedForm(-math.inf, c, "end_of_inflation", form)
    scale = math.log(3.0) if form == "main" else 0.0
    ln = (_ln(c) + math.log(csl.gamma_tilde) + scale + 2.0 * math.log(cosmo.H_inf)
          + 3.0 * math.log(cosmo.epsilon1) - _ln_x_end(k, cosmo))
    return ClosedForm(ln, c, "end_of_inflation", form)


def collapse_closed_form(regime: Regime, cosmo: CosmologyParams, csl: CslParams, k=None) -> ClosedForm:
    """ln(1/R - 1): 1152 gamma/m0^2 rho_end x_end^-7, or (7264/11) gamma/m0^2 rho_end x_end^-14 (H r_c)^-7."""
    _check_p(csl)
    c = COLLAPSE_COEFFICIENTS[regime.key]
    if csl.gamma == 0.0:
        return ClosedForm(-math.inf, c, regime.key, "main")
    lx = _ln_x_end(k, cosmo)
    ln = _ln(c) + math.log(csl.gamma_tilde) + math.log(3.0) + 2.0 * math.log(cosmo.H_end)
    if regime is Regime.INFLATION_CROSSING:
        ln -= 7.0 * lx
    else:
        ln += -14.0 * lx - 7.0 * math.log(cosmo.H_end * csl.r_c)
    return ClosedForm(ln, c, regime.key, "main")


def _half_gamma(m):
    """Gamma(m / 2) for odd m > 0, as the rational multiple of sqrt(pi)."""
    out = Fraction(1)
    x = Fraction(1, 2)
    while x < Fraction(m, 2):
        out *= x
        x += 1
    return out


def window_coefficients(window="gaussian"):
    """Radiation-crossing coefficients (per H^2) from the leading source bracket.

    The smearing factor enters the source as exp(-(q/y)^2). Integrated exactly
    (``gaussian``) each bracket term j contributes Gamma(j + n/2) / 2 for a
    y^-(n + 1 + 2 j) integrand; replaced by a sharp cutoff at y = q (``step``)
    it contributes 1 / (n + 2 j). Returns (correction, collapse) with n = 9 for
    the P_vv correction (times 4/3 eps1) and n = 7 for 1/R - 1 (times 8).
    The step window reproduces 35408/143 and 21792/11 = 3 x 7264/11 exactly;
    the Gaussian gives 945 sqrt(pi) / 2 and an exactly vanishing collapse term.
    Gaussian values are returned as (rational, "sqrt(pi)") pairs.
    """
    if window == "step":
        corr = Fraction(4, 3) * sum(Fraction(c, 9 + 2 * j) for j, c in enumerate(RADIATION_BRACKET))
        coll = 8 * sum(Fraction(c, 7 + 2 * j) for j, c in enumerate(RADIATION_BRACKET))
        return corr, coll
    if window != "gaussian":
        raise ValueError("window must be 'gaussian' or 'step'")
    corr = Fraction(4, 3) * sum(c * _half_gamma(9 + 2 * j) / 2 for j, c in enumerate(RADIATION_BRACKET))
    coll = 8 * sum(c * _half_gamma(7 + 2 * j) / 2 for j, c in enumerate(RADIATION_BRACKET))
    return (corr, "sqrt(pi)"), (coll, "sqrt(pi)")


def window_coefficient_values(window="gaussian"):
    """Floating values of :func:`window_coefficients`."""
    out = window_coefficients(window)
    if window == "step":
        return tuple(float(v) for v in out)
    return tuple(float(v * mpmath.sqrt(mpmath.pi)) for v, _ in out)


# -- numerical routes ---------------------------------------------------------------------------


def evaluation_time(setup: ModeSetup):
    """Radiation-era y at which spectra are read off.

    The relative correction approaches its frozen value like 1 - O(x_end / y)
    after the transition and like exp(-(q/y)^2) after smearing crossing, so
    y = max(1e4 x_end, 100 q) settles it to about 1e-4; capped at re-entry.
    """
    return min(1.0, max(1e4 * setup.x_end, 100.0 * setup.q))


def _clip(value, what):
    if value < 0.0:
        warnings.warn(f"negative {what} ({value:.3g}) from noise or round-off clipped to 0", RuntimeWarning,
                      stacklevel=3)
        return 0.0
    return float(value)


def _free_pvv(setup: ModeSetup, era: Era, z):
    from .moments import Mode

    return Mode(setup).point(era, z)[1][0]


def power_spectrum(k, route="lindblad", cosmo: CosmologyParams | None = None, csl: CslParams | None = None,
                   when="radiation", form="main", n_traj=4096, seed=0, rtol=1e-10, setup_kw=None) -> SpectrumPoint:
    """P_v(k) by one of three routes.

    lindblad:    k^3 (P_vv - 1/(4 ReOmega)) / (2 pi^2) from the moment and Riccati integration;
    sde:         k^3 (E[vbar^2] - E[vbar]^2) / (2 pi^2) from the trajectory ensemble
                 (end of inflation only);
    closed_form: standard spectrum times (1 + correction - R), R from the closed 1/R - 1.

    ``correction_rel`` is P_vv / P_vv(gamma = 0) - 1 (sde: estimated as
    (Var vbar + 1/(4 ReOmega)) / P_vv(gamma = 0) - 1). In the radiation era the
    mode is continued with a rescaled amplitude, and ReOmega refers to the
    same rescaled variable, so that gamma = 0 gives P_v = 0 in every era.
    """
    if route not in ROUTES:
        raise ValueError(f"route must be one of {ROUTES}")
    if when not in WHEN:
        raise ValueError(f"when must be one of {WHEN}")
    cosmo = cosmo or CosmologyParams()
    csl = csl or CslParams()
    setup = ModeSetup.from_physical(k, cosmo, csl, **(setup_kw or {}))
    regime = Regime.of(setup.h, setup.x_end)
    pref = k * k / (2.0 * math.pi**2)
    if route == "closed_form":
        if when != "radiation":
            raise ValueError("the closed forms give R only after the transition")
        y = evaluation_time(setup)
        p0 = _free_pvv(setup, Era.RADIATION, y)
        corr = correction_coefficient(regime, cosmo, csl, k=k, form=form).value
        inv_r = collapse_closed_form(regime, cosmo, csl, k=k).value
        r = 1.0 / (1.0 + inv_r)
        p_v = _clip(pref * p0 * (1.0 + corr - r), "variance")
        return SpectrumPoint(k, p_v, corr, r, regime, route)
    if route == "sde":
        if when != "end_of_inflation":
            raise ValueError("the trajectory ensemble covers inflation only; use when='end_of_inflation'")
        from .wavefunction import run_ensemble

        ens = run_ensemble(setup, n_traj, seed, [setup.x_end])
        var = ens.mean_v2[0] - ens.mean_v[0] ** 2
        p0 = _free_pvv(setup, Era.INFLATION, setup.x_end)
        corr = (var + 0.25 / ens.re_omega[0]) / p0 - 1.0
        r = ens.re_omega_free[0] / ens.re_omega[0]
        return SpectrumPoint(k, _clip(pref * var, "variance"), corr, r, regime, route, pref * ens.se_v2[0])
    if when == "radiation":
        tr = integrate_moments(setup, y_end=evaluation_time(setup), n_inf=2, n_rad=2, rtol=rtol)
        scale = setup.c2
    else:
        tr = integrate_moments(setup, n_inf=2, radiation=False, rtol=rtol)
        scale = 1.0
    pvv = tr.p_vv[-1]
    re = tr.re_omega[-1] / scale
    p_v = _clip(pref * (pvv - 0.25 / re), "variance")
    return SpectrumPoint(k, p_v, float(tr.delta[-1, 0]), math.exp(-tr.ell[-1]), regime, route)


def _collapse_ell(k, cosmo, csl, when, rtol):
    if when not in WHEN:
        raise ValueError(f"when must be one of {WHEN}")
    setup = ModeSetup.from_physical(k, cosmo, csl)
    if csl.gamma == 0.0:
        return 0.0
    if when == "radiation":
        tr = integrate_moments(setup, y_end=evaluation_time(setup), n_inf=2, n_rad=2, rtol=rtol)
    else:
        tr = integrate_moments(setup, n_inf=2, radiation=False, rtol=rtol)
    return float(tr.ell[-1])


def collapse_R(k, cosmo: CosmologyParams | None = None, csl: CslParams | None = None, when="radiation",
               rtol=1e-10) -> float:
    """R = ReOmega(gamma = 0) / ReOmega from the Riccati integration."""
    return math.exp(-_collapse_ell(k, cosmo or CosmologyParams(), csl or CslParams(), when, rtol))


def collapse_excess(k, cosmo: CosmologyParams | None = None, csl: CslParams | None = None, when="radiation",
                    rtol=1e-10) -> float:
    """1/R - 1, kept accurate when it is far below double-precision epsilon."""
    return math.expm1(_collapse_ell(k, cosmo or CosmologyParams(), csl or CslParams(), when, rtol))


# -- fits ------------------------------------------------------------------------------------------


@dataclass(frozen=True)
class IndexFit:
    slope: float
    intercept: float
    residual: float
    n_points: int
    regime: Regime | None
    mode: str = "total"


def fit_power_law(x, y):
    """Least-squares slope of ln|y| against ln x; returns (slope, intercept, rms residual)."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("need at least two matching points")
    if np.any(x <= 0) or np.any(y == 0) or not np.all(np.isfinite(y)):
        raise ValueError("power-law fit needs positive abscissae and finite non-zero values")
    if np.any(np.sign(y) != np.sign(y[0])):
        raise ValueError("values change sign; no single power law")
    lx, ly = np.log(x), np.log(np.abs(y))
    (slope, icpt), res = np.polyfit(lx, ly, 1, full=True)[:2]
    rms = math.sqrt(res[0] / len(x)) if len(res) else 0.0
    return float(slope), float(icpt), rms


def fit_correction_index(spectrum, mode="total") -> IndexFit:
    """Log-log slope of correction_rel against k.

    ``total`` fits the correction itself. ``scale_dependent`` fits its
    increments between neighbouring k (on a log-uniform grid), which removes a
    k-independent part such as the one generated at Hubble crossing when the
    couplings carry (k/aH)^p with p >= 1.
    """
    pts = sorted(spectrum, key=lambda p: p.k)
    if len(pts) < 5:
        raise ValueError("need at least 5 k-points")
    ks = np.array([p.k for p in pts])
    if math.log10(ks[-1] / ks[0]) < 1.0 - 1e-9:
        raise ValueError("k-points must span at least one decade")
    regimes = {p.regime for p in pts}
    if len(regimes) != 1:
        raise ValueError("k-points mix the inflation- and radiation-crossing regimes")
    corr = np.array([p.correction_rel for p in pts])
    if mode == "total":
        slope, icpt, rms = fit_power_law(ks, corr)
    elif mode == "scale_dependent":
        lk = np.log(ks)
        dl = np.diff(lk)
        if np.max(dl) - np.min(dl) > 1e-6 * np.mean(dl):
            raise ValueError("scale_dependent fits need a log-uniform k-grid")
        inc = np.diff(corr)
        slope, icpt, rms = fit_power_law(np.sqrt(ks[1:] * ks[:-1]), inc)
    else:
        raise ValueError("mode must be 'total' or 'scale_dependent'")
    return IndexFit(slope, icpt, rms, len(pts), regimes.pop(), mode)


def expected_index(regime: Regime, p=0.0):
    """2p - 1 (inflation crossing) or 4p - 10 (radiation crossing)."""
    return 2.0 * p - 1.0 if regime is Regime.INFLATION_CROSSING else 4.0 * p - 10.0


# -- p-index viability -------------------------------------------------------------------------------

#: laboratory-allowed window (r_c in m, lambda in 1/s) used by the growth indicator
LAB_WINDOW = ((1e-8, 1e-4), (1e-18, 1e-10))


def growth_indicator(p, cosmo: CosmologyParams | None = None, constants: PhysicalConstants | None = None,
                     window=LAB_WINDOW, n_rc=5, probe_g=1e-100):
    """log10 of the smallest super-Hubble correction P_vv/P_vv(0) - 1 over the lab window.

    The correction is evaluated at the pivot Delta N of ``cosmo`` for couplings
    carrying (k/aH)^p, by linear response: one integration per r_c at a tiny
    probe strength, scaled to gamma(lambda, r_c). Its minimum over the window
    sits at the smallest lambda. A positive value means the correction exceeds
    unity everywhere in the window (the window is excluded by scale
    invariance); a negative value leaves part of it open.
    """
    cosmo = cosmo or CosmologyParams()
    c = constants or load_constants()
    (rc_lo, rc_hi), (lam_lo, _) = window
    k = cosmo.k_ref
    best = math.inf
    for rc_m in np.geomspace(rc_lo, rc_hi, n_rc):
        rc = convert_units(float(rc_m), "si", "length", c)
        gam = gamma_of_lambda(convert_units(lam_lo, "si", "rate", c), rc)
        csl = CslParams(gamma=gam, r_c=rc, m0=c.nucleon_mass, p_index=p)
        s = ModeSetup.from_physical(k, cosmo, csl)
        probe = ModeSetup(eps1=s.eps1, eps2=s.eps2, g=probe_g, h=s.h, x_end=s.x_end, p=p)
        tr = integrate_moments(probe, y_end=evaluation_time(probe), n_inf=2, n_rad=2)
        d = tr.delta[-1, 0]
        if d <= 0.0:
            continue
        best = min(best, math.log10(d) - math.log10(probe_g) + math.log10(s.g))
    return best


__all__ = [
    "COEFFICIENTS", "COLLAPSE_COEFFICIENTS", "ClosedForm", "FORMS", "IndexFit", "LAB_WINDOW", "LN_1E10_AS",
    "N_S", "RADIATION_BRACKET", "ROUTES", "Regime", "SpectrumPoint", "collapse_R", "collapse_closed_form",
    "collapse_excess",
    "correction_coefficient", "end_of_inflation_correction", "evaluation_time", "expected_index",
    "fit_correction_index", "fit_power_law", "growth_indicator", "power_spectrum", "window_coefficient_values",
    "window_coefficients",
]
