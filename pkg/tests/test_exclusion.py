import math

import numpy as np
import pytest

from csl_cosmo.background import CosmologyParams, load_constants
from csl_cosmo.exclusion import (CellStatus, LabOverlay, OverlayError, branch_break_rc, gamma_bounds,
                                 lambda_max_si, load_lab_overlay, parse_lab_overlay, points_in_polygon,
                                 sample_overlay, scan_grid, self_intersections)
from csl_cosmo.spectrum import Regime

HEAD = "polygon_id,vertex_index,log10_rc_m,log10_lambda_s,region\n"


def _slope(rcs, vals):
    return np.polyfit(np.log10(rcs), vals, 1)[0]


def test_bound_slopes_per_branch():
    # [DERIVED] inflation crossing: no r_c dependence; radiation crossing: gamma_max ~ r_c^9, gamma_min ~ r_c^7
    c = CosmologyParams()
    rb = branch_break_rc(c)
    lo = np.geomspace(rb * 1e-6, rb * 1e-2, 5)
    hi = np.geomspace(rb * 1e2, rb * 1e6, 5)
    bl = [gamma_bounds(r, c) for r in lo]
    bh = [gamma_bounds(r, c) for r in hi]
    assert all(b.branch is Regime.INFLATION_CROSSING for b in bl)
    assert all(b.branch is Regime.RADIATION_CROSSING for b in bh)
    assert _slope(lo, [b.log10_gamma_max for b in bl]) == pytest.approx(0.0, abs=1e-10)
    assert _slope(lo, [b.log10_gamma_min for b in bl]) == pytest.approx(0.0, abs=1e-10)
    assert _slope(hi, [b.log10_gamma_max for b in bh]) == pytest.approx(9.0, abs=1e-10)
    assert _slope(hi, [b.log10_gamma_min for b in bh]) == pytest.approx(7.0, abs=1e-10)


def test_branches_at_the_break_differ_by_coefficient_ratio():
    # [DERIVED] at H r_c = exp(Delta N) both branch formulas carry exp(Delta N); only 448/3 vs 35408/429 differs
    c = CosmologyParams()
    b = gamma_bounds(branch_break_rc(c), c)
    gi = b.branches[Regime.INFLATION_CROSSING.value][0]
    gr = b.branches[Regime.RADIATION_CROSSING.value][0]
    assert gr - gi == pytest.approx(math.log10((448 / 3) / (35408 / 429)), abs=1e-9)


def test_bounds_scale_with_eps1_and_safety():
    # [DERIVED] the spectrum correction is proportional to eps1; the collapse term is not
    r = 1e10
    a = gamma_bounds(r, CosmologyParams(epsilon1=0.001))
    b = gamma_bounds(r, CosmologyParams(epsilon1=0.01))
    assert a.log10_gamma_max - b.log10_gamma_max == pytest.approx(1.0, abs=1e-10)
    assert a.log10_gamma_min == pytest.approx(b.log10_gamma_min, abs=1e-10)
    s = gamma_bounds(r, CosmologyParams(epsilon1=0.01), safety=100.0)
    assert b.log10_gamma_max - s.log10_gamma_max == pytest.approx(2.0, abs=1e-12)
    for bad in ((0.0,), (1.0, None, None, 0.0)):
        with pytest.raises(ValueError):
            gamma_bounds(*bad)


def test_lambda_max_si_matches_grid_curve():
    m = scan_grid(rc_range=(-9.0, -3.0), resolution=(4, 3))
    for x, lm in zip(m.log10_rc, m.log10_lambda_max):
        assert lambda_max_si(10.0**x) == pytest.approx(lm, abs=1e-9)


def test_points_in_polygon():
    sq = [(0, 0), (1, 0), (1, 1), (0, 1)]
    pts = np.array([(0.5, 0.5), (2.0, 2.0), (-0.1, 0.5), (0.5, 1.2), (0.99, 0.01)])
    assert points_in_polygon(sq, pts[:, 0], pts[:, 1]).tolist() == [True, False, False, False, True]
    ell = [(0, 0), (2, 0), (2, 1), (1, 1), (1, 2), (0, 2)]
    assert points_in_polygon(ell, [0.5, 1.5, 1.5], [1.5, 0.5, 1.5]).tolist() == [True, True, False]


def test_self_intersection_detection():
    assert self_intersections([(0, 0), (1, 1), (1, 0), (0, 1)])
    assert self_intersections([(0, 0), (1, 0), (1, 1), (0, 1)]) == []


@pytest.mark.parametrize("body,needle", [
    ("a,0,1,1,excluded\na,1,2,1,excluded\n", "fewer than 3"),
    ("a,0,0,0,excluded\na,1,1,0,excluded\na,1,1,1,excluded\n", "record 4"),
    ("a,0,0,0,excluded\na,2,1,0,excluded\na,3,1,1,excluded\n", "0..n-1"),
    ("a,0,0,0,inside\n", "region"),
    ("a,0,0,0,excluded\na,1,1,1,excluded\na,2,1,0,excluded\na,3,0,1,excluded\n", "self-intersects"),
    ("a,0,x,0,excluded\n", "polygon 'a'"),
    ("a,0,0,0,excluded\na,1,1,0,allowed\n", "region differs"),
])
def test_overlay_errors_name_the_record(body, needle):
    with pytest.raises(OverlayError, match=needle):
        parse_lab_overlay(HEAD + body, "t.csv")


def test_overlay_header_errors(tmp_path):
    with pytest.raises(OverlayError, match="lacks"):
        parse_lab_overlay("polygon_id,vertex_index,log10_rc_m\n")
    with pytest.raises(OverlayError, match="unknown"):
        parse_lab_overlay(HEAD.strip() + ",colour\n")
    with pytest.raises(OverlayError, match="does not exist"):
        load_lab_overlay(tmp_path / "none.csv")
    assert parse_lab_overlay("# only a comment\n").empty


def test_sample_overlay_containment():
    ov = sample_overlay()
    assert len(ov.polygons) == 1 and ov.polygons[0].region == "allowed"
    x = [-7.0, -5.0, -2.0, -10.0, -7.0]
    y = [-14.0, -12.0, -12.0, -14.0, -19.0]
    assert ov.excluded(x, y).tolist() == [False, False, True, True, True]


def test_excluded_region_polygon():
    ov = parse_lab_overlay(HEAD + "b,0,0,0,excluded\nb,1,1,0,excluded\nb,2,1,1,excluded\nb,3,0,1,excluded\n")
    assert ov.excluded([0.5, 1.5], [0.5, 0.5]).tolist() == [True, False]


def test_scan_grid_small_and_verdicts():
    m = scan_grid(resolution=2)
    assert len(m.cells) == 4
    assert m.verdict == "no-lab-data"
    assert sum(m.counts().values()) == 4
    with pytest.raises(ValueError):
        scan_grid(resolution=(1, 5))
    with pytest.raises(ValueError):
        scan_grid(rc_range=(2.0, -1.0))
    full = scan_grid(resolution=(60, 60), overlay=sample_overlay())
    assert full.verdict in ("compatible", "incompatible")
    counts = full.counts()
    assert counts[CellStatus.LAB_EXCLUDED.value] + counts[CellStatus.BOTH_EXCLUDED.value] > 0


def test_grid_classification_consistent_with_bounds():
    m = scan_grid(resolution=(30, 40))
    names = list(CellStatus)
    for i, x in enumerate(m.log10_rc):
        for j, y in enumerate(m.log10_lambda):
            st = names[m.status[i, j]]
            if y >= m.log10_lambda_max[i]:
                assert st is CellStatus.CMB_EXCLUDED_SPECTRUM
            elif y <= m.log10_lambda_min[i]:
                assert st is CellStatus.CMB_EXCLUDED_NO_COLLAPSE
            else:
                assert st is CellStatus.CMB_ALLOWED
    assert m.log10_rc_break == pytest.approx(
        math.log10(branch_break_rc(CosmologyParams())) + math.log10(load_constants().length_unit_m))
