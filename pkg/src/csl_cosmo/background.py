"""FLRW background: slow-roll inflation glued to a radiation era.

Everything is in reduced Planck units (M_Pl = 1). During inflation the
scale factor is a = -1/(H eta); at eta_end it is matched to
a = a_r (eta - eta_r) by continuity of a and a'.
"""

from __future__ import annotations

import configparser
import enum
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path


class Era(enum.Enum):
    INFLATION = "inflation"
    RADIATION = "radiation"


@dataclass(frozen=True)
class CosmologyParams:
    """Background parameters.

    ``delta_N`` is the number of e-folds between Hubble crossing of the
    reference mode and the end of inflation; the reference wavenumber is
    therefore ``k_ref = exp(-delta_N) / (-eta_end)``.
    """

    H_inf: float = 1e-5
    epsilon1: float = 0.005
    epsilon2: float = 0.0
    eta_end: float | None = None
    delta_N: float = 50.0

    def __post_init__(self):
        if not self.H_inf > 0:
            raise ValueError("H_inf must be positive")
        if not 0.0 < self.epsilon1 < 1.0:
            raise ValueError("epsilon1 must lie in (0, 1)")
        if not self.delta_N > 0:
            raise ValueError("delta_N must be positive")
        if self.eta_end is None:
            object.__setattr__(self, "eta_end", -1.0 / self.H_inf)
        if not self.eta_end < 0:
            raise ValueError("eta_end must be negative")

    @property
    def H_end(self):
        # leading order in slow roll: H is constant during inflation
        return self.H_inf

    @property
    def rho_inf(self):
        return 3.0 * self.H_inf**2

    @property
    def rho_end(self):
        return 3.0 * self.H_end**2

    @property
    def a_end(self):
        return -1.0 / (self.H_inf * self.eta_end)

    def k_of_delta_N(self, delta_N):
        return math.exp(-delta_N) / (-self.eta_end)

    def delta_N_of_k(self, k):
        return -math.log(-k * self.eta_end)

    @property
    def k_ref(self):
        return self.k_of_delta_N(self.delta_N)


@dataclass(frozen=True)
class MatchingData:
    eta_r: float
    a_r: float
    H_end: float

    @classmethod
    def from_cosmology(cls, cosmo: CosmologyParams) -> "MatchingData":
        e = cosmo.eta_end
        return cls(eta_r=2.0 * e, a_r=1.0 / (cosmo.H_end * e * e), H_end=cosmo.H_end)


def scale_factor(era: Era, eta, cosmo: CosmologyParams, match: MatchingData | None = None):
    if era is Era.INFLATION:
        if not eta <= cosmo.eta_end:
            raise ValueError(f"eta={eta} lies after the end of inflation")
        a = -1.0 / (cosmo.H_inf * eta)
    else:
        match = match or MatchingData.from_cosmology(cosmo)
        if not eta >= cosmo.eta_end:
            raise ValueError(f"eta={eta} lies before the radiation era")
        a = match.a_r * (eta - match.eta_r)
    if not a > 0:
        raise ValueError(f"non-positive scale factor at eta={eta}")
    return a


def conformal_hubble(era: Era, eta, cosmo: CosmologyParams, match: MatchingData | None = None):
    """a'/a in conformal time."""
    if era is Era.INFLATION:
        scale_factor(era, eta, cosmo)
        return -1.0 / eta
    match = match or MatchingData.from_cosmology(cosmo)
    scale_factor(era, eta, cosmo, match)
    return 1.0 / (eta - match.eta_r)


def frequency_squared(era: Era, k, eta, match: MatchingData | None = None):
    """omega^2 = c_s^2 k^2 - z''/z at leading slow-roll order."""
    if not k > 0:
        raise ValueError("k must be positive")
    if era is Era.INFLATION:
        return k * k - 2.0 / (eta * eta)
    return k * k / 3.0


def efolds_to_ratio(delta_N):
    """k/(aH) at the end of inflation for a mode that crossed delta_N e-folds earlier."""
    return math.exp(-delta_N)


# -- units ---------------------------------------------------------------------

_REQUIRED = ("planck_length_m", "planck_time_s", "planck_mass_kg", "nucleon_mass_kg")
_REDUCTION = math.sqrt(8.0 * math.pi)


@dataclass(frozen=True)
class PhysicalConstants:
    planck_length_m: float
    planck_time_s: float
    planck_mass_kg: float
    nucleon_mass_kg: float
    source: str = field(default="builtin", compare=False)

    # reduced Planck scales: l = sqrt(8 pi G hbar / c^3), etc.
    @property
    def length_unit_m(self):
        return self.planck_length_m * _REDUCTION

    @property
    def time_unit_s(self):
        return self.planck_time_s * _REDUCTION

    @property
    def mass_unit_kg(self):
        return self.planck_mass_kg / _REDUCTION

    @property
    def nucleon_mass(self):
        """Nucleon mass in reduced Planck masses (the usual CSL m0)."""
        return self.nucleon_mass_kg / self.mass_unit_kg

    def as_dict(self):
        return {k: getattr(self, k) for k in _REQUIRED}


def load_constants(path: str | Path | None = None) -> PhysicalConstants:
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    if path is None:
        text = resources.files("csl_cosmo").joinpath("data/physical_constants.ini").read_text()
        source = "builtin:physical_constants.ini"
    else:
        text = Path(path).read_text()
        source = str(path)
    parser.read_string(text)
    if "constants" not in parser:
        raise ValueError(f"{source}: missing [constants] section")
    sec = parser["constants"]
    unknown = set(sec) - set(_REQUIRED)
    if unknown:
        raise ValueError(f"{source}: unknown constant(s) {sorted(unknown)}")
    missing = [k for k in _REQUIRED if k not in sec]
    if missing:
        raise ValueError(f"{source}: missing constant(s) {missing}")
    vals = {k: float(sec[k]) for k in _REQUIRED}
    if any(v <= 0 for v in vals.values()):
        raise ValueError(f"{source}: constants must be positive")
    return PhysicalConstants(**vals, source=source)


_KINDS = ("length", "rate", "time", "mass")


def convert_units(value, from_: str, kind: str, constants: PhysicalConstants | None = None):
    """Convert between SI (m, 1/s, s, kg) and reduced Planck units.

    ``from_`` names the unit system of ``value``; the result is in the other one.
    """
    if kind not in _KINDS:
        raise ValueError(f"unknown quantity kind {kind!r}; expected one of {_KINDS}")
    if from_ not in ("si", "planck"):
        raise ValueError(f"unknown unit system {from_!r}")
    c = constants or load_constants()
    scale = {
        "length": c.length_unit_m,
        "time": c.time_unit_s,
        "rate": 1.0 / c.time_unit_s,
        "mass": c.mass_unit_kg,
    }[kind]
    return value / scale if from_ == "si" else value * scale
