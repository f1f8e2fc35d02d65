"""Scanner of the (r_c, lambda) plane.

CMB scale invariance bounds gamma from above, collapse before CMB emission
bounds it from below, and the branch depends on whether the pivot mode leaves
the smearing scale during inflation (H_end r_c < exp(Delta N)) or after it.
All bound arithmetic is done in log10 with rational prefactors. Laboratory
constraints enter only as user-supplied polygons.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .background import CosmologyParams, PhysicalConstants, load_constants
from .coupling import CslParams, gamma_of_lambda, lambda_of_gamma
from .spectrum import Regime, collapse_closed_form, correction_coefficient

LN10 = math.log(10.0)
REGIONS = ("excluded", "allowed")


class CellStatus(enum.Enum):
    CMB_ALLOWED = "CmbAllowed"
    CMB_EXCLUDED_SPECTRUM = "CmbExcludedSpectrum"
    CMB_EXCLUDED_NO_COLLAPSE = "CmbExcludedNoCollapse"
    LAB_EXCLUDED = "LabExcluded"
    BOTH_EXCLUDED = "BothExcluded"


_STATUS_ORDER = list(CellStatus)


@dataclass(frozen=True)
class BoundSet:
    """log10 of gamma_max and gamma_min (reduced Planck units) at one r_c.

    ``branches`` holds both branch formulas, keyed by regime value, so that
    the boundary point can report them side by side.
    """

    log10_gamma_max: float
    log10_gamma_min: float
    branch: Regime
    r_c: float
    cosmo: CosmologyParams
    branches: dict = field(default_factory=dict, compare=False)

    @property
    def empty(self):
        return self.log10_gamma_min >= self.log10_gamma_max


def _branch_bounds(regime: Regime, r_c, cosmo: CosmologyParams, m0):
    unit = CslParams(gamma=m0 * m0, r_c=r_c, m0=m0)  # gamma / m0^2 = 1
    # both corrections are linear in gamma: bound = 1 / (value at gamma / m0^2 = 1)
    lg_max = (2.0 * math.log(m0) - correction_coefficient(regime, cosmo, unit).ln_value) / LN10
    lg_min = (2.0 * math.log(m0) - collapse_closed_form(regime, cosmo, unit).ln_value) / LN10
    return lg_max, lg_min


def gamma_bounds(r_c, cosmo: CosmologyParams | None = None, m0=None, safety=1.0) -> BoundSet:
    """gamma_max and gamma_min at the pivot (k/aH)_end = exp(-Delta N) for r_c in Planck units.

    ``safety`` divides gamma_max (the "much less than" of the upper bound).
    """
    if not r_c > 0:
        raise ValueError("r_c must be positive")
    if not safety > 0:
        raise ValueError("safety factor must be positive")
    cosmo = cosmo or CosmologyParams()
    m0 = m0 if m0 is not None else CslParams().m0
    both = {}
    for reg in Regime:
        gmax, gmin = _branch_bounds(reg, r_c, cosmo, m0)
        both[reg.value] = (gmax - math.log10(safety), gmin)
    branch = Regime.of(cosmo.H_end * r_c, math.exp(-cosmo.delta_N))
    gmax, gmin = both[branch.value]
    return BoundSet(gmax, gmin, branch, r_c, cosmo, both)


def branch_break_rc(cosmo: CosmologyParams):
    """r_c (Planck units) at which H_end r_c = exp(Delta N)."""
    return math.exp(cosmo.delta_N) / cosmo.H_end


# -- laboratory overlay ----------------------------------------------------------------------------


class OverlayError(ValueError):
    pass


@dataclass(frozen=True)
class Polygon:
    pid: str
    vertices: np.ndarray  # (n, 2): log10 r_c [m], log10 lambda [1/s]
    region: str  # "excluded": inside is lab-excluded; "allowed": outside is

    def contains(self, x, y):
        return points_in_polygon(self.vertices, x, y)


@dataclass(frozen=True)
class LabOverlay:
    polygons: tuple = ()
    source: str = ""

    @property
    def empty(self):
        return not self.polygons

    def excluded(self, x, y):
        """Lab-excluded mask at log10 coordinates (broadcast arrays)."""
        x = np.asarray(x, float)
        y = np.asarray(y, float)
        out = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        allowed = [p for p in self.polygons if p.region == "allowed"]
        for p in self.polygons:
            if p.region == "excluded":
                out |= p.contains(x, y)
        if allowed:
            inside_any = np.zeros_like(out)
            for p in allowed:
                inside_any |= p.contains(x, y)
            out |= ~inside_any
        return out


def points_in_polygon(vertices, x, y):
    """Even-odd ray casting, vectorised over points."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    inside = np.zeros(np.broadcast(x, y).shape, dtype=bool)
    v = np.asarray(vertices, float)
    n = len(v)
    for i in range(n):
        x1, y1 = v[i]
        x2, y2 = v[(i + 1) % n]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xi = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xi)
    return inside


def _orient(a, b, c):
    v = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    return 0 if v == 0 else (1 if v > 0 else -1)


def _on_segment(a, b, c):
    return min(a[0], b[0]) <= c[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= c[1] <= max(a[1], b[1])


def _segments_cross(p1, p2, p3, p4):
    o1, o2, o3, o4 = _orient(p1, p2, p3), _orient(p1, p2, p4), _orient(p3, p4, p1), _orient(p3, p4, p2)
    if o1 != o2 and o3 != o4:
        return True
    return ((o1 == 0 and _on_segment(p1, p2, p3)) or (o2 == 0 and _on_segment(p1, p2, p4))
            or (o3 == 0 and _on_segment(p3, p4, p1)) or (o4 == 0 and _on_segment(p3, p4, p2)))


def self_intersections(vertices):
    """Pairs of non-adjacent edges (i, j) that touch or cross."""
    v = [tuple(p) for p in np.asarray(vertices, float)]
    n = len(v)
    bad = []
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue
            if _segments_cross(v[i], v[(i + 1) % n], v[j], v[(j + 1) % n]):
                bad.append((i, j))
    return bad


def parse_lab_overlay(text, source="<string>") -> LabOverlay:
    """Parse overlay CSV: polygon_id, vertex_index, log10_rc_m, log10_lambda_s[, region]."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        return LabOverlay((), source)
    reader = csv.DictReader(io.StringIO("\n".join(lines)))
    need = ["polygon_id", "vertex_index", "log10_rc_m", "log10_lambda_s"]
    fields = [f.strip() for f in (reader.fieldnames or [])]
    missing = [f for f in need if f not in fields]
    if missing:
        raise OverlayError(f"{source}: header lacks column(s) {missing}")
    extra = sorted(set(fields) - set(need) - {"region"})
    if extra:
        raise OverlayError(f"{source}: unknown column(s) {extra}")
    groups = {}
    order = []
    for n, row in enumerate(reader, start=2):
        row = {k.strip(): (v or "").strip() for k, v in row.items() if k is not None}
        pid = row["polygon_id"]
        where = f"{source}: record {n} (polygon {pid!r})"
        try:
            idx = int(row["vertex_index"])
            x = float(row["log10_rc_m"])
            y = float(row["log10_lambda_s"])
        except ValueError as exc:
            raise OverlayError(f"{where}: {exc}") from None
        if not (math.isfinite(x) and math.isfinite(y)):
            raise OverlayError(f"{where}: non-finite coordinate")
        region = row.get("region") or "excluded"
        if region not in REGIONS:
            raise OverlayError(f"{where}: region must be one of {REGIONS}, got {region!r}")
        if pid not in groups:
            groups[pid] = {"verts": {}, "region": region}
            order.append(pid)
        g = groups[pid]
        if g["region"] != region:
            raise OverlayError(f"{where}: region differs from earlier vertices of the polygon")
        if idx in g["verts"]:
            raise OverlayError(f"{where}: duplicate vertex index {idx}")
        g["verts"][idx] = (x, y)
    polys = []
    for pid in order:
        g = groups[pid]
        idx = sorted(g["verts"])
        if idx != list(range(len(idx))):
            raise OverlayError(f"{source}: polygon {pid!r} vertex indices are not 0..n-1")
        if len(idx) < 3:
            raise OverlayError(f"{source}: polygon {pid!r} has fewer than 3 vertices")
        verts = np.array([g["verts"][i] for i in idx])
        bad = self_intersections(verts)
        if bad:
            i, j = bad[0]
            raise OverlayError(f"{source}: polygon {pid!r} self-intersects (edges {i}-{i + 1} and "
                               f"{j}-{(j + 1) % len(verts)})")
        polys.append(Polygon(pid, verts, g["region"]))
    return LabOverlay(tuple(polys), source)


def load_lab_overlay(path) -> LabOverlay:
    path = Path(path)
    if not path.exists():
        raise OverlayError(f"overlay file {path} does not exist")
    return parse_lab_overlay(path.read_text(), str(path))


def sample_overlay() -> LabOverlay:
    """The shipped, non-authoritative example outline."""
    from importlib import resources

    text = resources.files("csl_cosmo").joinpath("data/sample_lab_overlay.csv").read_text()
    return parse_lab_overlay(text, "builtin:sample_lab_overlay.csv")


# -- grid scan ---------------------------------------------------------------------------------------


@dataclass(frozen=True)
class ExclusionCell:
    log10_rc: float
    log10_lambda: float
    status: CellStatus


@dataclass
class ExclusionMap:
    """Classified grid plus the two boundary curves.

    Axes are log10 r_c [m] and log10 lambda [1/s]; ``status`` has shape
    (n_rc, n_lambda) and holds indices into :class:`CellStatus`. Boundary
    curves are given both as log10 gamma (reduced Planck units) and as
    log10 lambda [1/s] against log10 r_c [m].
    """

    log10_rc: np.ndarray
    log10_lambda: np.ndarray
    status: np.ndarray
    log10_gamma_max: np.ndarray
    log10_gamma_min: np.ndarray
    log10_lambda_max: np.ndarray
    log10_lambda_min: np.ndarray
    branch: np.ndarray
    log10_rc_break: float
    cosmo: CosmologyParams
    overlay: LabOverlay
    safety: float = 1.0

    @property
    def cells(self):
        names = _STATUS_ORDER
        return [ExclusionCell(float(x), float(y), names[self.status[i, j]])
                for i, x in enumerate(self.log10_rc) for j, y in enumerate(self.log10_lambda)]

    def counts(self):
        return {s.value: int(np.count_nonzero(self.status == i)) for i, s in enumerate(_STATUS_ORDER)}

    @property
    def jointly_allowed(self):
        return int(np.count_nonzero(self.status == _STATUS_ORDER.index(CellStatus.CMB_ALLOWED)))

    @property
    def verdict(self):
        if self.overlay.empty:
            return "no-lab-data"
        return "incompatible" if self.jointly_allowed == 0 else "compatible"

    def polylines(self):
        x = [float(v) for v in self.log10_rc]
        return {
            "gamma_max": [[a, float(b)] for a, b in zip(x, self.log10_gamma_max)],
            "gamma_min": [[a, float(b)] for a, b in zip(x, self.log10_gamma_min)],
            "lambda_max": [[a, float(b)] for a, b in zip(x, self.log10_lambda_max)],
            "lambda_min": [[a, float(b)] for a, b in zip(x, self.log10_lambda_min)],
        }


def scan_grid(rc_range=(-12.0, 2.0), lambda_range=(-240.0, 0.0), resolution=(200, 200),
              cosmo: CosmologyParams | None = None, overlay: LabOverlay | None = None,
              constants: PhysicalConstants | None = None, m0=None, safety=1.0) -> ExclusionMap:
    """Classify a log-uniform grid in (log10 r_c [m], log10 lambda [1/s])."""
    if isinstance(resolution, int):
        resolution = (resolution, resolution)
    nx, ny = (int(r) for r in resolution)
    if nx < 2 or ny < 2:
        raise ValueError("resolution must be at least 2 per axis")
    for lo, hi in (rc_range, lambda_range):
        if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
            raise ValueError("log ranges must be finite with lo < hi")
    cosmo = cosmo or CosmologyParams()
    overlay = overlay or LabOverlay()
    c = constants or load_constants()
    m0 = m0 if m0 is not None else c.nucleon_mass
    lx = np.linspace(rc_range[0], rc_range[1], nx)
    ly = np.linspace(lambda_range[0], lambda_range[1], ny)
    l10_len = math.log10(c.length_unit_m)
    l10_rate = -math.log10(c.time_unit_s)
    gmax = np.empty(nx)
    gmin = np.empty(nx)
    branch = np.empty(nx, dtype=np.int8)
    for i, x in enumerate(lx):
        b = gamma_bounds(10.0 ** (x - l10_len), cosmo, m0, safety)
        gmax[i], gmin[i] = b.log10_gamma_max, b.log10_gamma_min
        branch[i] = 0 if b.branch is Regime.INFLATION_CROSSING else 1
    # gamma = 8 pi^1.5 r_c^3 lambda, all in Planck units
    l10_conv = math.log10(8.0 * math.pi**1.5) + 3.0 * (lx - l10_len)
    lam_max = gmax - l10_conv + l10_rate
    lam_min = gmin - l10_conv + l10_rate
    LY = ly[None, :]
    over = LY >= lam_max[:, None]
    under = LY <= lam_min[:, None]
    # gamma_min > gamma_max leaves no window: every cell fails one of the two
    spectrum = over
    no_collapse = under & ~over
    lab = overlay.excluded(lx[:, None], LY) if not overlay.empty else np.zeros((nx, ny), dtype=bool)
    idx = {s: _STATUS_ORDER.index(s) for s in CellStatus}
    status = np.full((nx, ny), idx[CellStatus.CMB_ALLOWED], dtype=np.int8)
    status[spectrum] = idx[CellStatus.CMB_EXCLUDED_SPECTRUM]
    status[no_collapse] = idx[CellStatus.CMB_EXCLUDED_NO_COLLAPSE]
    cmb_bad = spectrum | no_collapse
    status[lab & ~cmb_bad] = idx[CellStatus.LAB_EXCLUDED]
    status[lab & cmb_bad] = idx[CellStatus.BOTH_EXCLUDED]
    rc_break = math.log10(branch_break_rc(cosmo)) + l10_len
    return ExclusionMap(lx, ly, status, gmax, gmin, lam_max, lam_min, branch, rc_break, cosmo, overlay, safety)


def lambda_max_si(r_c_m, cosmo: CosmologyParams | None = None, constants: PhysicalConstants | None = None):
    """log10 lambda_max [1/s] at r_c [m]."""
    c = constants or load_constants()
    rc = r_c_m / c.length_unit_m
    b = gamma_bounds(rc, cosmo, c.nucleon_mass)
    return b.log10_gamma_max - math.log10(8.0 * math.pi**1.5 * rc**3) - math.log10(c.time_unit_s)


__all__ = [
    "BoundSet", "CellStatus", "ExclusionCell", "ExclusionMap", "LabOverlay", "OverlayError", "Polygon",
    "branch_break_rc", "gamma_bounds", "gamma_of_lambda", "lambda_max_si", "lambda_of_gamma",
    "load_lab_overlay", "parse_lab_overlay", "points_in_polygon", "sample_overlay",
    "scan_grid", "self_intersections",
]
