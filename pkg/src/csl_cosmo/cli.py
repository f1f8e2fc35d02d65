"""Command-line front end.

    csl-cosmo [global flags] {mode-evolve, spectrum, ensemble, exclusion}

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
Every run writes ``manifest.json`` (resolved configuration, version, seed,
constants) next to its tables; JSON tables embed the same manifest. Passing
a manifest back through ``--config`` reproduces the outputs byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._accel import set_threads
from .background import load_constants
from .config import ConfigError, RunConfig, load_config
from .exclusion import CellStatus, LabOverlay, OverlayError, load_lab_overlay, sample_overlay, scan_grid
from .moments import IntegrationError, ModeSetup, integrate_moments
from .spectrum import evaluation_time, fit_correction_index, power_spectrum
from .wavefunction import run_ensemble

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="csl-cosmo", description="CSL collapse of cosmological perturbations")
    p.add_argument("--config", help="INI configuration or a manifest.json from an earlier run")
    p.add_argument("--out", help="output directory (overrides [output] path)")
    p.add_argument("--format", choices=("csv", "json"), help="table format (overrides [output] format)")
    p.add_argument("--seed", type=int, help="random seed (overrides [numerics] seed)")
    p.add_argument("--threads", type=int, help="worker threads for the ensemble kernels")
    p.add_argument("--constants", help="physical-constants INI replacing the built-in CODATA table")
    p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                   help="override one configuration entry; may be repeated")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("mode-evolve", help="moment and Omega trajectories of the pivot mode")
    sub.add_parser("spectrum", help="P_v over a Delta N grid and the fitted correction index")
    sub.add_parser("ensemble", help="trajectory ensemble of the pivot mode during inflation")
    sub.add_parser("exclusion", help="classify the (r_c, lambda) plane")
    return p


# -- output -------------------------------------------------------------------------------------------


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        f = float(v)
        return f if math.isfinite(f) else repr(f)
    return v


def dump_json(obj, path: Path):
    text = json.dumps(_jsonable(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"
    with open(path, "w", newline="\n") as f:
        f.write(text)


def write_table(path_stem: Path, columns, rows, fmt, manifest):
    if fmt == "csv":
        path = path_stem.with_suffix(".csv")
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(columns)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
    else:
        path = path_stem.with_suffix(".json")
        dump_json({"manifest": manifest, "columns": list(columns),
                   "rows": [[_jsonable(v) for v in r] for r in rows]}, path)
    return path


def make_manifest(cfg: RunConfig, command):
    c = cfg.constants
    return {
        "command": command,
        "config": cfg.resolved(),
        "constants": {k: repr(v) for k, v in c.as_dict().items()},
        "seed": cfg.get("numerics", "seed"),
        "version": __version__,
    }


# -- commands -------------------------------------------------------------------------------------------


def _pivot_setup(cfg: RunConfig):
    cosmo = cfg.cosmology()
    csl = cfg.csl()
    k = cosmo.k_ref
    try:
        setup = ModeSetup.from_physical(k, cosmo, csl, x_ini=cfg.get("numerics", "x_ini"),
                                        matching=cfg.get("numerics", "matching"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cosmo, csl, k, setup


def cmd_mode_evolve(cfg: RunConfig, out: Path, fmt, manifest):
    _, _, _, setup = _pivot_setup(cfg)
    y_end = cfg.get("numerics", "y_end") or evaluation_time(setup)
    tr = integrate_moments(setup, y_end=y_end, n_inf=cfg.get("numerics", "n_inf"),
                           n_rad=cfg.get("numerics", "n_rad"), rtol=cfg.get("numerics", "rtol"))
    era = ["inflation" if e == 0 else "radiation" for e in tr.era]
    rows = list(zip(era, tr.z, tr.p_vv, tr.p_cross, tr.p_pp, tr.delta[:, 0]))
    write_table(out / "moments", ["era", "z", "P_vv", "P_cross", "P_pp", "correction_rel"], rows, fmt, manifest)
    rows = list(zip(era, tr.z, tr.re_omega, tr.im_omega, tr.inv_r_minus_one, np.exp(-tr.ell)))
    write_table(out / "omega", ["era", "z", "ReOmega", "ImOmega", "inv_R_minus_1", "R"], rows, fmt, manifest)
    print(f"correction_rel={_fmt(float(tr.delta[-1, 0]))} R={_fmt(float(math.exp(-tr.ell[-1])))}")
    for ev in tr.events:
        print(f"note: {ev}", file=sys.stderr)


def cmd_spectrum(cfg: RunConfig, out: Path, fmt, manifest):
    cosmo = cfg.cosmology()
    csl = cfg.csl()
    s = cfg.values["spectrum"]
    n = s["n_k"]
    lo = s["delta_N_min"] if s["delta_N_min"] is not None else cosmo.delta_N - 1.0
    hi = s["delta_N_max"] if s["delta_N_max"] is not None else cosmo.delta_N + 1.0
    if n < 2:
        raise UsageError("the spectrum needs at least 2 k-points")
    if not lo < hi:
        raise ConfigError("[spectrum] delta_N_min must be below delta_N_max")
    route = s["route"]
    if route not in ("lindblad", "closed_form"):
        raise ConfigError("[spectrum] route must be lindblad or closed_form")
    ks = [cosmo.k_of_delta_N(dn) for dn in np.linspace(hi, lo, n)]
    pts = []
    for k in ks:
        try:
            pts.append(power_spectrum(k, route, cosmo, csl, rtol=cfg.get("numerics", "rtol"),
                                      setup_kw={"x_ini": cfg.get("numerics", "x_ini"),
                                                "matching": cfg.get("numerics", "matching")}))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None
    cols = ["k", "P_v", "correction_rel", "R", "regime", "route"]
    write_table(out / "spectrum", cols, [[p.as_row()[c] for c in cols] for p in pts], fmt, manifest)
    if len({p.regime for p in pts}) > 1:
        raise ConfigError("the k-grid straddles both regimes; a single correction index is undefined")
    fit = None
    reason = None
    try:
        f = fit_correction_index(pts, mode=s["fit_mode"])
        fit = {"slope": f.slope, "intercept": f.intercept, "residual": f.residual, "n_points": f.n_points,
               "regime": f.regime.value, "mode": f.mode}
        print(f"correction_index={_fmt(f.slope)} regime={f.regime.value}")
    except ValueError as exc:
        reason = str(exc)
        print(f"note: no index fit ({reason})", file=sys.stderr)
    dump_json({"manifest": manifest, "fit": fit, "fit_skipped": reason}, out / "spectrum_fit.json")


def cmd_ensemble(cfg: RunConfig, out: Path, fmt, manifest):
    _, _, _, setup = _pivot_setup(cfg)
    nu = cfg.values["numerics"]
    if nu["n_traj"] < 2 or nu["n_out"] < 1:
        raise ConfigError("[numerics] needs n_traj >= 2 and n_out >= 1")
    x0 = min(nu["x_first"], setup.x_ini)
    if not x0 > setup.x_end:
        raise ConfigError("[numerics] x_first must exceed -k eta_end of the pivot mode")
    x_out = np.geomspace(x0, setup.x_end, nu["n_out"]) if nu["n_out"] > 1 else np.array([setup.x_end])
    ens = run_ensemble(setup, nu["n_traj"], nu["seed"], x_out)
    tr = integrate_moments(setup, n_inf=2, x_out=ens.x, radiation=False, rtol=nu["rtol"])
    idx = [int(np.argmin(np.abs(np.log(tr.z / x)))) for x in ens.x]
    p_vv = tr.p_vv[idx]
    rows = list(zip(ens.x, ens.mean_v, ens.se_v, ens.mean_v2, ens.se_v2, ens.re_omega, ens.r_value, p_vv))
    write_table(out / "ensemble", ["x", "mean_v", "se_v", "mean_v2", "se_v2", "ReOmega", "R", "P_vv_lindblad"],
                rows, fmt, manifest)
    z = (ens.mean_v2 + 0.25 / ens.re_omega - p_vv) / ens.se_v2
    print(f"max_abs_z={_fmt(float(np.max(np.abs(z))))} n_traj={ens.n_traj}")


def _overlay(cfg: RunConfig) -> LabOverlay:
    spec = cfg.get("scan", "overlay")
    if spec in (None, "", "none"):
        return LabOverlay()
    if spec == "sample":
        return sample_overlay()
    return load_lab_overlay(spec)


def cmd_exclusion(cfg: RunConfig, out: Path, fmt, manifest):
    sc = cfg.values["scan"]
    overlay = _overlay(cfg)
    try:
        m = scan_grid((sc["log10_rc_min"], sc["log10_rc_max"]), (sc["log10_lambda_min"], sc["log10_lambda_max"]),
                      (sc["n_rc"], sc["n_lambda"]), cfg.cosmology(), overlay, cfg.constants, safety=sc["safety"])
    except ValueError as exc:
        if isinstance(exc, (ConfigError, OverlayError)):
            raise
        raise ConfigError(str(exc)) from None
    names = [s.value for s in CellStatus]
    with open(out / "exclusion_map.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["log10_rc", "log10_lambda", "status"])
        for i, x in enumerate(m.log10_rc):
            xs = _fmt(float(x))
            for j, y in enumerate(m.log10_lambda):
                w.writerow([xs, _fmt(float(y)), names[m.status[i, j]]])
    summary = {
        "manifest": manifest,
        "verdict": m.verdict,
        "jointly_allowed_cells": m.jointly_allowed,
        "counts": m.counts(),
        "parameters": {
            "delta_N": m.cosmo.delta_N, "H_inf": m.cosmo.H_inf, "epsilon1": m.cosmo.epsilon1,
            "log10_rc_break_m": m.log10_rc_break, "safety": m.safety,
            "axes": {"x": "log10 r_c [m]", "y": "log10 lambda [1/s]", "gamma": "log10 gamma [reduced Planck]"},
        },
        "polylines": m.polylines(),
        "provenance": {
            "overlay": overlay.source or None,
            "overlay_polygons": [p.pid for p in overlay.polygons],
            "constants": cfg.constants.source,
        },
    }
    dump_json(summary, out / "exclusion_summary.json")
    print(f"verdict={m.verdict} jointly_allowed={m.jointly_allowed}")


COMMANDS = {
    "mode-evolve": cmd_mode_evolve,
    "spectrum": cmd_spectrum,
    "ensemble": cmd_ensemble,
    "exclusion": cmd_exclusion,
}


def _parse_sets(items):
    out = {}
    for item in items:
        if "=" not in item:
            raise UsageError(f"--set expects SECTION.KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        overrides = _parse_sets(args.set)
        if args.seed is not None:
            overrides["numerics.seed"] = str(args.seed)
        if args.format is not None:
            overrides["output.format"] = args.format
        if args.out is not None:
            overrides["output.path"] = args.out
        constants = load_constants(args.constants) if args.constants else None
        cfg = load_config(args.config, overrides, constants)
        set_threads(args.threads)
        out = Path(cfg.get("output", "path"))
        out.mkdir(parents=True, exist_ok=True)
        manifest = make_manifest(cfg, args.command)
        dump_json(manifest, out / "manifest.json")
        COMMANDS[args.command](cfg, out, cfg.get("output", "format"), manifest)
        return EXIT_OK
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, OverlayError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IntegrationError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
