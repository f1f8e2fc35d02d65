"""CSL collapse operator in Fourier space.

The smeared density contrast of mode k couples to the noise through
C_k = alpha_k v_k + beta_k p_k. This module gives alpha, beta in closed form
for both eras and builds the dimensionless series the integrators use.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import mpmath
import numpy as np

from ._series import GLSeries
from .background import CosmologyParams, Era, MatchingData, scale_factor

NUCLEON_MASS_PLANCK = 3.8527622769071327e-19  # CODATA 2018 proton mass / reduced Planck mass


@dataclass(frozen=True)
class CslParams:
    gamma: float = 0.0
    r_c: float = 1.0
    m0: float = NUCLEON_MASS_PLANCK
    p_index: float = 0.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("gamma must be non-negative")
        if not self.r_c > 0:
            raise ValueError("r_c must be positive")
        if not self.m0 > 0:
            raise ValueError("m0 must be positive")

    @property
    def lam(self):
        """Collapse rate lambda = gamma / (8 pi^{3/2} r_c^3)."""
        return lambda_of_gamma(self.gamma, self.r_c)

    @property
    def gamma_tilde(self):
        return self.gamma / (self.m0 * self.m0)

    def with_gamma_tilde(self, gt):
        return replace(self, gamma=gt * self.m0 * self.m0)


def lambda_of_gamma(gamma, r_c):
    return gamma / (8.0 * math.pi**1.5 * r_c**3)


def gamma_of_lambda(lam, r_c):
    return lam * 8.0 * math.pi**1.5 * r_c**3


@dataclass(frozen=True)
class CouplingCoefficients:
    alpha: float
    beta: float
    era: Era
    eta: float


def _hubble_phys(era, eta, cosmo, match):
    if era is Era.INFLATION:
        return cosmo.H_inf
    a = scale_factor(era, eta, cosmo, match)
    return 1.0 / (a * (eta - match.eta_r))


def smearing_factor(k, eta, era: Era, r_c, cosmo: CosmologyParams, match: MatchingData | None = None):
    """exp(-k^2 r_c^2 / (2 a^2))."""
    if not r_c > 0:
        raise ValueError("r_c must be positive")
    a = scale_factor(era, eta, cosmo, match)
    return math.exp(-0.5 * (k * r_c / a) ** 2)


def couplings_inflation(k, eta, cosmo: CosmologyParams, csl: CslParams, leading_order=False):
    if not cosmo.epsilon1 > 0:
        raise ValueError("epsilon1 must be positive (z vanishes otherwise)")
    if not eta <= cosmo.eta_end:
        raise ValueError("eta lies outside inflation")
    H, e1 = cosmo.H_inf, cosmo.epsilon1
    e2 = 0.0 if leading_order else cosmo.epsilon2
    a = scale_factor(Era.INFLATION, eta, cosmo)
    z = a * math.sqrt(2.0 * e1)
    E = smearing_factor(k, eta, Era.INFLATION, csl.r_c, cosmo)
    r2 = (a * H / k) ** 2
    alpha = H * H * e1 / z * E * (-8.0 - e2 + 6.0 * r2 * e1 * (1.0 + 0.5 * e2))
    beta = 2.0 * H * e1 / (a * z) * E * (1.0 - 3.0 * e1 * r2)
    out = CouplingCoefficients(alpha, beta, Era.INFLATION, eta)
    return apply_p_index(out, k, eta, csl.p_index, cosmo)


def couplings_radiation(k, eta, cosmo: CosmologyParams, match: MatchingData | None, csl: CslParams):
    match = match or MatchingData.from_cosmology(cosmo)
    a = scale_factor(Era.RADIATION, eta, cosmo, match)
    H = _hubble_phys(Era.RADIATION, eta, cosmo, match)
    z = 2.0 * math.sqrt(3.0) * a
    E = smearing_factor(k, eta, Era.RADIATION, csl.r_c, cosmo, match)
    r2 = (a * H / k) ** 2
    alpha = 24.0 * H * H / z * E * (3.0 * r2 - 1.0)
    beta = 12.0 * H / (a * z) * E * (1.0 - 6.0 * r2)
    out = CouplingCoefficients(alpha, beta, Era.RADIATION, eta)
    return apply_p_index(out, k, eta, csl.p_index, cosmo, match)


def apply_p_index(coeffs: CouplingCoefficients, k, eta, p, cosmo: CosmologyParams, match=None):
    """Rescale both coefficients by (k / aH)^p for the density contrast delta_p."""
    if p == 0:
        return coeffs
    match = match or MatchingData.from_cosmology(cosmo)
    a = scale_factor(coeffs.era, eta, cosmo, match)
    ratio = k / (a * _hubble_phys(coeffs.era, eta, cosmo, match))
    f = ratio**p
    return replace(coeffs, alpha=coeffs.alpha * f, beta=coeffs.beta * f)


# -- dimensionless series ---------------------------------------------------------

#: Order of the series in :class:`EraSeries`.
SERIES_NAMES = ("ua", "ub", "b", "m", "n", "b_t", "b_tt", "m_t", "S", "w", "a0_num", "a0_den")


@dataclass
class EraSeries:
    """Per-era building blocks in units where k = 1 and gamma/m0^2 H^2 = 1.

    ua = sqrt(gt) a^2 alpha / k, ub = sqrt(gt) a^2 beta, b = ub^2, m = ua ub,
    n = ua^2, ``_t`` suffixes are derivatives in k*eta and S = S_phys/(k^2 gt H^2).
    K is the smearing constant so that u = K z^{2 sgn} = (k r_c/a)^2.
    ``a0_num / a0_den`` is ua - 2 ub ImOmega_free, the combination that drives
    ReOmega; it nearly cancels on super-Hubble scales, so it is assembled as a
    ratio of series whose leading terms cancel exactly.
    """

    era: Era
    K: float
    eps1: float
    series: dict

    @property
    def sgn(self):
        return 1 if self.era is Era.INFLATION else -1

    def __getitem__(self, name):
        return self.series[name]

    def evaluate(self, name, z):
        return self.series[name].evaluate(z, self.K, self.eps1)


def _derivs(era_sign_tau, b, m):
    # d/dtau = (dz/dtau) d/dz with dz/dtau = -1 (x = -tau) or +1 (y = tau)
    b_t = b.deriv() * era_sign_tau
    b_tt = b_t.deriv() * era_sign_tau
    m_t = m.deriv() * era_sign_tau
    return b_t, b_tt, m_t


def inflation_series(eps1, eps2, h, p=0.0, leading_order=False):
    """Series in x = -k eta; h = H r_c."""
    sg = 1
    if leading_order:
        eps2 = 0.0
    M = lambda c, e=0.0, n=0, lam=0.0: GLSeries.monomial(c, e, 0, n, lam, sg)  # noqa: E731
    A = M(-8.0 - eps2) + M(6.0 * (1.0 + 0.5 * eps2), -2.0, 2)
    B = M(1.0) + M(-3.0, -2.0, 2)
    b = M(2.0, 2 * p, 2, 1.0) * B * B
    m = M(1.0, 2 * p - 1, 2, 1.0) * A * B
    n = M(0.5, 2 * p - 2, 2, 1.0) * A * A
    ua = M(math.sqrt(0.5), p - 1, 1, 0.5) * A
    ub = M(math.sqrt(2.0), p, 1, 0.5) * B
    w = M(1.0) + M(-2.0, -2.0)
    b_t, b_tt, m_t = _derivs(-1.0, b, m)
    S = 2.0 * n + 2.0 * (w * b) - 2.0 * m_t + b_tt
    if leading_order:
        S = S.leading_order()
    # ImOmega_free = -1/(2 x (1 + x^2))
    a0_den = M(1.0, 1.0) + M(1.0, 3.0)
    a0_num = ua.shift(1.0) + ua.shift(3.0) + ub
    ser = dict(ua=ua, ub=ub, b=b, m=m, n=n, b_t=b_t, b_tt=b_tt, m_t=m_t, S=S, w=w,
               a0_num=a0_num, a0_den=a0_den)
    return EraSeries(Era.INFLATION, h * h, eps1, ser)


def radiation_mode_coefficients(x_end):
    """Free radiation mode g = c1 sqrt3 sin(y/sqrt3) + c2 cos(y/sqrt3), matched at y = x_end.

    c2 (the decaying branch) is a cancellation of order x_end^3 between terms of
    order 1/x_end, so both are computed in 40-digit arithmetic.
    """
    with mpmath.workdps(40):
        x = mpmath.mpf(x_end)
        ph = mpmath.expj(-x) / mpmath.sqrt(2)
        ge = ph * (1 - 1j / x)
        gp = ph * (1j + 1 / x - 1j / x**2)
        th = x / mpmath.sqrt(3)
        u1, u2 = mpmath.sqrt(3) * mpmath.sin(th), mpmath.cos(th)
        c1 = ge * u1 / 3 + gp * u2
        c2 = ge * u2 - gp * u1
        return complex(c1), complex(c2)


_TRIG_TERMS = 14


def _trig_series(sg):
    """sqrt3 sin(y/sqrt3) and cos(y/sqrt3) as truncated power series (y <= a few)."""
    u1 = GLSeries({}, sgn=sg)
    u2 = GLSeries({}, sgn=sg)
    for j in range(_TRIG_TERMS):
        u1 = u1 + GLSeries.monomial((-1) ** j / (3.0**j * math.factorial(2 * j + 1)), 2 * j + 1, sgn=sg)
        u2 = u2 + GLSeries.monomial((-1) ** j / (3.0**j * math.factorial(2 * j)), 2 * j, sgn=sg)
    return u1, u2


def radiation_series(x_end, h, p=0.0):
    """Series in y = k(eta - eta_r); x_end = -k eta_end, smearing constant q = h x_end^2."""
    sg = -1
    X2 = x_end * x_end
    M = lambda c, e=0.0, lam=0.0: GLSeries.monomial(c, e, 0, 0, lam, sg)  # noqa: E731
    A = M(3.0, -2.0) + M(-1.0)
    B = M(1.0) + M(-6.0, -2.0)
    b = M(12.0 * X2 * X2, 2 * p - 4, 1.0) * B * B
    m = M(24.0 * X2 * X2, 2 * p - 5, 1.0) * A * B
    n = M(48.0 * X2 * X2, 2 * p - 6, 1.0) * A * A
    ua = M(4.0 * math.sqrt(3.0) * X2, p - 3, 0.5) * A
    ub = M(2.0 * math.sqrt(3.0) * X2, p - 2, 0.5) * B
    w = M(1.0 / 3.0)
    b_t, b_tt, m_t = _derivs(1.0, b, m)
    S = 2.0 * n + 2.0 * (w * b) - 2.0 * m_t + b_tt
    q = h * X2
    # ImOmega_free = -Re(g' g*) / (2 |g|^2) with g expanded on (u1, u2)
    c1, c2 = radiation_mode_coefficients(x_end)
    n1 = abs(c1) ** 2
    rho = (c1 * c2.conjugate()).real / n1
    kap = abs(c2) ** 2 / n1
    u1, u2 = _trig_series(sg)
    du1, du2 = u2, u1 * (-1.0 / 3.0)
    a0_den = u1 * u1 + (2.0 * rho) * (u1 * u2) + kap * (u2 * u2)
    re_gpg = u1 * du1 + rho * (du1 * u2 + u1 * du2) + kap * (u2 * du2)
    a0_num = ua * a0_den + ub * re_gpg
    ser = dict(ua=ua, ub=ub, b=b, m=m, n=n, b_t=b_t, b_tt=b_tt, m_t=m_t, S=S, w=w,
               a0_num=a0_num, a0_den=a0_den)
    return EraSeries(Era.RADIATION, q * q, 1.0, ser)


def pack_series(es: EraSeries):
    """Flatten an era's series into (3, n_series, max_terms) array + term counts."""
    flats = [es.series[name].flatten(es.eps1) for name in SERIES_NAMES]
    nmax = max(1, max(len(f[0]) for f in flats))
    tab = np.zeros((3, len(flats), nmax))
    cnt = np.zeros(len(flats), dtype=np.int64)
    for i, (e, kk, c) in enumerate(flats):
        cnt[i] = len(e)
        tab[0, i, : len(e)] = e
        tab[1, i, : len(e)] = kk
        tab[2, i, : len(e)] = c
    lam = np.array([es.series[name].lam for name in SERIES_NAMES])
    return tab, cnt, lam
