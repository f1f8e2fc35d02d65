import json
import math

import numpy as np
import pytest
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st

from csl_cosmo.background import CosmologyParams
from csl_cosmo.config import load_config
from csl_cosmo.coupling import CslParams, gamma_of_lambda, lambda_of_gamma
from csl_cosmo.exclusion import points_in_polygon
from csl_cosmo.moments import ModeSetup, integrate_moments
from csl_cosmo.spectrum import Regime, collapse_closed_form, correction_coefficient, fit_power_law
from csl_cosmo.wavefunction import NoiseStream

SLOW = settings(max_examples=15, deadline=None, suppress_health_check=[HealthCheck.too_slow])
FAST = settings(max_examples=100, deadline=None)


@SLOW
@given(lg1=st.floats(-12, -4), lg2=st.floats(-12, -4), lx=st.floats(-1.7, -0.3), lh=st.floats(-1, 1))
def test_correction_linear_in_gamma(lg1, lg2, lx, lh):
    d = []
    for lg in (lg1, lg2):
        s = ModeSetup(eps1=0.005, g=10.0**lg, h=10.0**lh, x_end=10.0**lx)
        d.append(integrate_moments(s, n_inf=2, radiation=False).delta[-1, 0] / s.g)
    assert d[0] == pytest.approx(d[1], rel=1e-6)


@SLOW
@given(lg=st.floats(-6, 0), lx=st.floats(-1.7, -0.3), lh=st.floats(-1, 1))
def test_uncertainty_bound(lg, lx, lh):
    s = ModeSetup(eps1=0.005, g=10.0**lg, h=10.0**lh, x_end=10.0**lx)
    tr = integrate_moments(s, n_inf=10, radiation=False)
    for i in range(len(tr.z)):
        assert tr.state(i).uncertainty() >= 0.25 * (1 - 1e-10)


@FAST
@given(lam=st.floats(1e-300, 1e300), rc=st.floats(1e-50, 1e50))
def test_lambda_gamma_round_trip(lam, rc):
    g = gamma_of_lambda(lam, rc)
    if 0 < g < math.inf and lambda_of_gamma(g, rc) > 0:
        assert lambda_of_gamma(g, rc) == pytest.approx(lam, rel=1e-12)


def _star(n, seed):
    rng = np.random.default_rng(seed)
    ang = np.sort(rng.uniform(0, 2 * np.pi, n))
    rad = rng.uniform(0.5, 2.0, n)
    return np.c_[rad * np.cos(ang), rad * np.sin(ang)]


@FAST
@given(n=st.integers(3, 12), seed=st.integers(0, 2**31), shift=st.integers(0, 11),
       px=st.floats(-3, 3), py=st.floats(-3, 3))
def test_point_in_polygon_invariances(n, seed, shift, px, py):
    v = _star(n, seed)
    base = points_in_polygon(v, px, py)
    assert points_in_polygon(np.roll(v, shift % n, axis=0), px, py) == base
    assert points_in_polygon(v[::-1], px, py) == base
    assert points_in_polygon(v + [5.0, -2.0], px + 5.0, py - 2.0) == base
    # [DERIVED] winding-number oracle, away from the boundary
    d = v - [px, py]
    a, b = d, np.roll(d, -1, axis=0)
    seg = b - a
    t = np.clip(-np.einsum("ij,ij->i", a, seg) / np.einsum("ij,ij->i", seg, seg), 0.0, 1.0)
    if np.min(np.hypot(*(a + t[:, None] * seg).T)) > 1e-9:
        wind = np.sum(np.arctan2(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0], np.einsum("ij,ij->i", a, b)))
        assert bool(base) == (abs(wind) > np.pi)


@FAST
@given(dn=st.floats(5, 60), step=st.floats(0.01, 5), lg=st.floats(-200, -1))
def test_closed_forms_monotone_and_linear(dn, step, lg):
    m0 = CslParams().m0
    csl = CslParams(gamma=10.0**lg * m0**2, r_c=1e5)
    a = CosmologyParams(delta_N=dn)
    b = CosmologyParams(delta_N=dn + step)
    for reg in Regime:
        assert correction_coefficient(reg, b, csl).ln_value > correction_coefficient(reg, a, csl).ln_value
        assert collapse_closed_form(reg, b, csl).ln_value > collapse_closed_form(reg, a, csl).ln_value
    csl2 = CslParams(gamma=2 * csl.gamma, r_c=1e5)
    diff = (correction_coefficient(Regime.INFLATION_CROSSING, a, csl2).ln_value
            - correction_coefficient(Regime.INFLATION_CROSSING, a, csl).ln_value)
    assert diff == pytest.approx(math.log(2.0), abs=1e-10)


@FAST
@given(slope=st.floats(-12, 12), amp=st.floats(1e-30, 1e30), sign=st.sampled_from([-1.0, 1.0]))
def test_power_law_fit_recovers_slope(slope, amp, sign):
    x = np.geomspace(1e-3, 1e-1, 8)
    assert fit_power_law(x, sign * amp * x**slope)[0] == pytest.approx(slope, abs=1e-8)


@FAST
@given(seed=st.integers(0, 2**63), step=st.integers(0, 10**6), idx=st.lists(st.integers(0, 10**6), min_size=1,
                                                                             max_size=20))
def test_noise_depends_only_on_trajectory_index(seed, step, idx):
    ns = NoiseStream(seed)
    full = ns.normals(np.array(idx), step)
    single = [ns.normals([i], step)[0] for i in idx]
    assert np.array_equal(full, single)


@settings(max_examples=30, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(h=st.floats(1e-8, 1e-3), e1=st.floats(1e-4, 0.1), seed=st.integers(0, 2**31))
def test_resolved_config_round_trip(tmp_path, h, e1, seed):
    cfg = load_config(None, {"cosmology.H_inf": f"{h!r} planck", "cosmology.epsilon1": repr(e1),
                             "numerics.seed": str(seed)})
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"config": cfg.resolved()}))
    assert load_config(p).values == cfg.values
