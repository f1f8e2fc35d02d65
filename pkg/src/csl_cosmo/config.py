"""Run configuration: INI sections with unit-tagged values.

Every dimensional entry is written as ``<number> <unit>`` with unit ``planck``
(reduced Planck units) or ``si`` (m, 1/s, kg, m^3/s). Values are converted to
Planck units at load time. Unknown sections or keys are errors. A resolved
configuration serialises back to the same key/value form with ``planck``
tags, so a manifest can be fed back as a configuration.
"""

from __future__ import annotations

import configparser
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .background import CosmologyParams, PhysicalConstants, convert_units, load_constants
from .coupling import CslParams, gamma_of_lambda

UNITS = ("planck", "si")


class ConfigError(ValueError):
    """Invalid configuration; maps to exit code 1."""


# kind: float | int | str | bool | length | rate | mass | gamma (dimensional kinds need a unit tag)
SCHEMA = {
    "cosmology": {
        "H_inf": ("rate", "1e-05 planck"),
        "epsilon1": ("float", "0.005"),
        "epsilon2": ("float", "0.0"),
        "delta_N": ("float", "50.0"),
    },
    "csl": {
        "gamma": ("gamma", None),
        "lambda": ("rate", None),
        "r_c": ("length", None),
        "m0": ("mass", None),
        "p_index": ("float", "0.0"),
    },
    "numerics": {
        "rtol": ("float", "1e-10"),
        "x_ini": ("float", "100.0"),
        "n_traj": ("int", "4096"),
        "n_out": ("int", "10"),
        "x_first": ("float", "3.0"),
        "seed": ("int", "0"),
        "matching": ("str", "rescaled"),
        "y_end": ("float", None),
        "n_inf": ("int", "200"),
        "n_rad": ("int", "200"),
    },
    "spectrum": {
        "delta_N_min": ("float", None),
        "delta_N_max": ("float", None),
        "n_k": ("int", "6"),
        "route": ("str", "lindblad"),
        "fit_mode": ("str", "total"),
    },
    "scan": {
        "log10_rc_min": ("float", "-12.0"),
        "log10_rc_max": ("float", "2.0"),
        "log10_lambda_min": ("float", "-240.0"),
        "log10_lambda_max": ("float", "0.0"),
        "n_rc": ("int", "200"),
        "n_lambda": ("int", "200"),
        "overlay": ("str", "none"),
        "safety": ("float", "1.0"),
    },
    "output": {
        "format": ("str", "csv"),
        "path": ("str", "."),
    },
}
_DIMENSIONAL = ("length", "rate", "mass", "gamma")


def _convert(value, unit, kind, constants: PhysicalConstants):
    if unit == "planck":
        return value
    if kind == "gamma":
        # gamma = 8 pi^1.5 r_c^3 lambda: SI unit m^3/s
        return value * constants.time_unit_s / constants.length_unit_m**3
    return convert_units(value, "si", kind, constants)


def _parse_value(section, key, raw, kind, constants):
    where = f"[{section}] {key}"
    raw = raw.strip()
    if kind in _DIMENSIONAL:
        parts = raw.split()
        if len(parts) != 2:
            raise ConfigError(f"{where}: expected '<number> <unit>' with unit in {UNITS}, got {raw!r}")
        num, unit = parts
        if unit not in UNITS:
            raise ConfigError(f"{where}: unknown unit tag {unit!r}; use one of {UNITS}")
        try:
            v = float(num)
        except ValueError:
            raise ConfigError(f"{where}: not a number: {num!r}") from None
        if not math.isfinite(v):
            raise ConfigError(f"{where}: value must be finite")
        return _convert(v, unit, kind, constants)
    if kind == "float":
        try:
            v = float(raw)
        except ValueError:
            raise ConfigError(f"{where}: not a number: {raw!r}") from None
        if not math.isfinite(v):
            raise ConfigError(f"{where}: value must be finite")
        return v
    if kind == "int":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"{where}: not an integer: {raw!r}") from None
    if kind == "bool":
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{where}: not a boolean: {raw!r}")
    return raw


@dataclass
class RunConfig:
    """Resolved configuration, all physical values in reduced Planck units."""

    values: dict
    constants: PhysicalConstants
    sources: list = field(default_factory=list)

    def get(self, section, key):
        return self.values[section].get(key)

    def cosmology(self) -> CosmologyParams:
        c = self.values["cosmology"]
        return CosmologyParams(H_inf=c["H_inf"], epsilon1=c["epsilon1"], epsilon2=c["epsilon2"],
                               delta_N=c["delta_N"])

    def csl(self) -> CslParams:
        c = self.values["csl"]
        if c.get("r_c") is None:
            raise ConfigError("[csl] r_c is required")
        if c.get("gamma") is not None and c.get("lambda") is not None:
            raise ConfigError("[csl] give either gamma or lambda, not both")
        if c.get("gamma") is not None:
            gamma = c["gamma"]
        elif c.get("lambda") is not None:
            gamma = gamma_of_lambda(c["lambda"], c["r_c"])
        else:
            raise ConfigError("[csl] gamma or lambda is required")
        m0 = c["m0"] if c.get("m0") is not None else self.constants.nucleon_mass
        try:
            return CslParams(gamma=gamma, r_c=c["r_c"], m0=m0, p_index=c["p_index"])
        except ValueError as exc:
            raise ConfigError(f"[csl] {exc}") from None

    def resolved(self):
        """Serialisable resolved form (strings, dimensional values tagged planck)."""
        out = {}
        for sec in sorted(self.values):
            out[sec] = {}
            for key in sorted(self.values[sec]):
                v = self.values[sec][key]
                if v is None:
                    continue
                kind = SCHEMA[sec][key][0]
                out[sec][key] = f"{v!r} planck" if kind in _DIMENSIONAL else (v if isinstance(v, str) else repr(v))
        return out


def _raw_from_file(path: Path):
    text = path.read_text()
    if path.suffix == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        data = data.get("manifest", data)
        data = data.get("config", data)
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: no configuration block")
        return {s: {k: str(v) for k, v in sec.items()} for s, sec in data.items()}
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return {s: dict(parser[s]) for s in parser.sections()}


def load_config(path=None, overrides=None, constants: PhysicalConstants | None = None) -> RunConfig:
    """Read an INI (or manifest JSON) file, apply ``section.key -> raw`` overrides, resolve units."""
    try:
        constants = constants or load_constants()
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    raw = {}
    sources = []
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        raw = _raw_from_file(path)
        sources.append(str(path))
    for dotted, value in (overrides or {}).items():
        if "." not in dotted:
            raise ConfigError(f"override {dotted!r} must look like section.key")
        sec, key = dotted.split(".", 1)
        raw.setdefault(sec, {})[key] = str(value)
    values = {}
    for sec in raw:
        if sec not in SCHEMA:
            raise ConfigError(f"unknown section [{sec}]; known: {sorted(SCHEMA)}")
        for key in raw[sec]:
            if key not in SCHEMA[sec]:
                raise ConfigError(f"unknown key {key!r} in [{sec}]; known: {sorted(SCHEMA[sec])}")
    for sec, keys in SCHEMA.items():
        values[sec] = {}
        for key, (kind, default) in keys.items():
            text = raw.get(sec, {}).get(key, default)
            values[sec][key] = None if text is None else _parse_value(sec, key, text, kind, constants)
    if values["output"]["format"] not in ("csv", "json"):
        raise ConfigError("[output] format must be csv or json")
    return RunConfig(values, constants, sources)


__all__ = ["ConfigError", "RunConfig", "SCHEMA", "UNITS", "load_config"]
