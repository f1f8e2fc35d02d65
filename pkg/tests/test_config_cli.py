import json
import math
from pathlib import Path

import pytest

from csl_cosmo import cli
from csl_cosmo.background import load_constants
from csl_cosmo.config import ConfigError, load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
DESK = str(CONFIGS / "desk_mode.ini")


def _ini(tmp_path, text):
    p = tmp_path / "c.ini"
    p.write_text(text)
    return p


def test_defaults_and_unit_conversion(tmp_path):
    c = load_constants()
    cfg = load_config(_ini(tmp_path, "[csl]\nr_c = 1e-7 si\nlambda = 1e-17 si\n"))
    assert cfg.get("cosmology", "H_inf") == 1e-5
    assert cfg.get("csl", "r_c") == pytest.approx(1e-7 / c.length_unit_m, rel=1e-12)
    assert cfg.get("csl", "lambda") == pytest.approx(1e-17 * c.time_unit_s, rel=1e-12)
    csl = cfg.csl()
    # gamma = 8 pi^1.5 r_c^3 lambda
    assert csl.gamma == pytest.approx(8 * math.pi**1.5 * csl.r_c**3 * cfg.get("csl", "lambda"), rel=1e-12)


@pytest.mark.parametrize("text,needle", [
    ("[cosmo]\nH_inf = 1 planck\n", "unknown section"),
    ("[cosmology]\nHinf = 1 planck\n", "unknown key"),
    ("[cosmology]\nH_inf = 1e-5\n", "expected '<number> <unit>'"),
    ("[cosmology]\nH_inf = 1e-5 gev\n", "unknown unit"),
    ("[cosmology]\nepsilon1 = nan\n", "finite"),
    ("[numerics]\nn_traj = 1.5\n", "not an integer"),
    ("[output]\nformat = xml\n", "format"),
])
def test_config_errors(tmp_path, text, needle):
    with pytest.raises(ConfigError, match=needle):
        load_config(_ini(tmp_path, text))


def test_csl_block_requirements(tmp_path):
    both = load_config(_ini(tmp_path, "[csl]\nr_c = 1 planck\ngamma = 1 planck\nlambda = 1 planck\n"))
    with pytest.raises(ConfigError, match="not both"):
        both.csl()
    with pytest.raises(ConfigError, match="r_c"):
        load_config(_ini(tmp_path, "[csl]\ngamma = 1 planck\n")).csl()
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")
    with pytest.raises(ConfigError, match="section.key"):
        load_config(None, {"seed": "1"})


def test_resolved_config_round_trips(tmp_path):
    cfg = load_config(DESK)
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"config": cfg.resolved()}))
    again = load_config(p)
    assert again.values == cfg.values


def test_exit_codes(tmp_path, capsys):
    assert cli.main(["--config", DESK, "--out", str(tmp_path / "a"), "frobnicate"]) == cli.EXIT_USAGE
    assert cli.main(["--config", DESK, "--set", "csl.colour=red", "mode-evolve"]) == cli.EXIT_USAGE
    assert cli.main(["--config", DESK, "--set", "bad", "mode-evolve"]) == cli.EXIT_USAGE
    assert cli.main(["--config", DESK, "--out", str(tmp_path / "b"), "--set", "numerics.rtol=1e-30",
                     "mode-evolve"]) == cli.EXIT_NUMERICAL
    err = capsys.readouterr().err
    assert "numerical failure" in err and "configuration error" in err


def test_mode_evolve_and_spectrum_outputs(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["--config", DESK, "--out", str(out), "mode-evolve"]) == cli.EXIT_OK
    assert {"manifest.json", "moments.csv", "omega.csv"} <= {p.name for p in out.iterdir()}
    assert cli.main(["--config", DESK, "--out", str(out), "--set", "spectrum.n_k=5",
                     "--set", "spectrum.delta_N_min=14", "--set", "spectrum.delta_N_max=16.302585092994046",
                     "spectrum"]) == cli.EXIT_OK
    fit = json.loads((out / "spectrum_fit.json").read_text())
    assert fit["fit"]["slope"] == pytest.approx(-1.0, abs=0.02)
    assert "correction_index=" in capsys.readouterr().out


def test_exclusion_outputs_are_canonical(tmp_path):
    args = ["--set", "scan.n_rc=20", "--set", "scan.n_lambda=15", "--set", "scan.overlay=sample", "exclusion"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert cli.main(["--out", str(a)] + args) == cli.EXIT_OK
    assert cli.main(["--out", str(b)] + args) == cli.EXIT_OK
    assert (a / "exclusion_map.csv").read_bytes() == (b / "exclusion_map.csv").read_bytes()
    # the manifests differ only by the recorded output directory
    sa, sb = (json.loads((d / "exclusion_summary.json").read_text()) for d in (a, b))
    for s in (sa, sb):
        s["manifest"]["config"]["output"].pop("path")
    assert sa == sb
    raw = (a / "exclusion_map.csv").read_bytes()
    assert b"\r\n" not in raw and raw.count(b"\n") == 1 + 20 * 15
    summary = json.loads((a / "exclusion_summary.json").read_text())
    assert list(summary) == sorted(summary)
    assert summary["provenance"]["overlay_polygons"] == ["window"]
    assert summary["verdict"] in ("compatible", "incompatible")


def test_json_format_tables(tmp_path):
    out = tmp_path / "j"
    assert cli.main(["--config", DESK, "--out", str(out), "--format", "json", "mode-evolve"]) == cli.EXIT_OK
    data = json.loads((out / "moments.json").read_text())
    assert data["columns"][0] == "era" and data["manifest"]["command"] == "mode-evolve"
