from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np
import pytest

from igashell.cli import run_cli
from igashell.config import DEFAULTS, ConfigError, build_problem, load_config, parse_config
from igashell.density import load_field
from igashell.export import mesh_points, write_vtk
from igashell.geometry import make_preset
from igashell.splines import refine_uniform

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def test_empty_config_gives_defaults():
    cfg = parse_config({})
    assert cfg.data == DEFAULTS
    assert cfg.material.E0 == 2100.0 and cfg.material.nu == 0.3
    assert cfg["thickness"] == 5.0
    assert cfg.continuation.tau_max == 64.0 and cfg.continuation.every == 25
    assert cfg.termination.max_iter == 200
    assert cfg.fairing.lam == 0.01


def test_nested_merge_keeps_other_defaults():
    cfg = parse_config({"material": {"nu": 0.25}, "problem": {"kind": "Q"}})
    assert cfg.material.nu == 0.25 and cfg.material.E0 == 2100.0
    assert cfg.local.alpha == 0.5 and cfg.local.gamma == 16.0


def test_invalid_poisson_ratio_names_key():
    with pytest.raises(ConfigError) as exc:
        parse_config({"material": {"nu": 0.6}})
    assert str(exc.value).startswith("invalid 'material'")
    assert "nu" in str(exc.value)


def test_unknown_key_lists_valid_keys():
    with pytest.raises(ConfigError, match="valid keys") as exc:
        parse_config({"materials": {}})
    assert "'material'" in str(exc.value)
    with pytest.raises(ConfigError, match="mma"):
        parse_config({"mma": {"mov": 0.2}})
    with pytest.raises(ConfigError, match=r"loads\[0\]"):
        parse_config({"loads": [{"kind": "point", "force": [0, 0, 1], "where": [0.5, 0.5]}]})


@pytest.mark.parametrize(
    "doc",
    [
        {"problem": {"kind": "R"}},
        {"problem": {"volume_fraction": 1.2}},
        {"problem": {"kind": "Q", "alpha": 1.5}},
        {"problem": {"gamma": -2.0}},
        {"design_spans": [0, 5]},
        {"thickness": -1},
        {"gauss": [3, 3]},
        {"continuation": {"tau_start": 0.0}},
        {"supports": [{"kind": "edge", "where": "s2"}]},
        {"loads": [{"kind": "line", "force": [0, 0, 1]}]},
        {"fairing": {"lam": -1}},
        {"geometry": {"file": "no_such_surface.json"}},
    ],
)
def test_invalid_configs(doc):
    with pytest.raises(ConfigError):
        parse_config(doc)


def test_bad_spans_rejected_when_building():
    with pytest.raises(ConfigError):
        build_problem(parse_config({"design_spans": [20, 20], "analysis_spans": [10, 10]}))


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError, match="not valid JSON"):
        load_config(bad)


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
def test_shipped_configs_parse(name):
    cfg = load_config(CONFIGS / name)
    assert cfg["problem"]["kind"] in ("P", "Q")


def test_config_echo_round_trips():
    cfg = load_config(CONFIGS / "small.json")
    assert parse_config(json.loads(cfg.to_json())).data == cfg.data


def test_mesh_points_plate():
    surf = refine_uniform(make_preset("plate"), 3, 2)
    pts, quads = mesh_points(surf)
    assert pts.shape == (12, 3) and quads.shape == (6, 4)
    np.testing.assert_allclose(pts[quads[0]][:, :2], [[0, 0], [100 / 3, 0], [100 / 3, 50], [0, 50]], atol=1e-10)


def test_write_vtk(tmp_path):
    surf = refine_uniform(make_preset("plate"), 2, 2)
    path = tmp_path / "m.vtk"
    poly = np.array([[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [2.0, 0.0, 0.0]])
    write_vtk(path, surf, np.array([0.1, 0.2, 0.3, 0.4]), [poly])
    text = path.read_text().splitlines()
    assert text[0].startswith("# vtk DataFile")
    assert "POINTS 12 double" in text
    assert "CELLS 5 24" in text
    types = text[text.index("CELL_TYPES 5") + 1 : text.index("CELL_TYPES 5") + 6]
    assert types == ["9", "9", "9", "9", "4"]
    assert "CELL_DATA 5" in text


def small_config(tmp_path, **over):
    doc = json.loads((CONFIGS / "small.json").read_text())
    doc["fairing"] = {"resolution": [60, 60]}
    doc.update(over)
    path = tmp_path / "small.json"
    path.write_text(json.dumps(doc))
    return path


def test_cli_optimize_fair_and_export(tmp_path, capsys):
    cfg = small_config(tmp_path)
    out = tmp_path / "run"
    rc = run_cli(["optimize", "--config", str(cfg), "--out", str(out), "--checkpoint-every", "10", "--gradients"])
    assert rc == 0
    for name in ("config.json", "history.csv", "timings.csv", "field.json", "checkpoint_field.json",
                 "contours.svg", "curves.json", "mesh.vtk", "gradients.csv"):
        assert (out / name).exists(), name
    assert "iterations" in capsys.readouterr().out
    with open(out / "history.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 30
    assert json.loads((out / "config.json").read_text())["problem"]["volume_fraction"] == 0.4
    fld = load_field(out / "field.json")
    assert fld.coefficients.shape == (7, 7)
    ck = json.loads((out / "checkpoint_field.json").read_text())
    assert ck["meta"]["iteration"] == 30

    # refit from the saved field with the echoed configuration
    refit = tmp_path / "refit"
    assert run_cli(["fair", "--field", str(out / "field.json"), "--out", str(refit)]) == 0
    a = json.loads((out / "curves.json").read_text())["curves"]
    b = json.loads((refit / "curves.json").read_text())["curves"]
    assert [c["control_points"] for c in a] == [c["control_points"] for c in b]

    geo = tmp_path / "geo"
    assert run_cli(["export-geometry", "--config", str(cfg), "--out", str(geo)]) == 0
    assert (geo / "geometry.vtk").exists() and (geo / "geometry.json").exists()


def test_cli_check_gradients(tmp_path, capsys):
    cfg = small_config(tmp_path)
    assert run_cli(["--threads", "1", "check-gradients", "--config", str(cfg), "--tau", "4", "--out", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    for line in lines:
        err = float(line.split("max relative error")[1].split()[0])
        assert err <= 1e-3
    header = (tmp_path / "gradients.csv").read_text().splitlines()[0]
    assert header == "i,j,dC,dV,dVbar"


def test_cli_error_exit_codes(tmp_path, capsys):
    assert run_cli(["optimize", "--config", str(tmp_path / "nope.json")]) == 2
    assert "not found" in capsys.readouterr().err
    assert run_cli([]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"material": {"nu": 0.6}}))
    assert run_cli(["optimize", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "invalid 'material'" in capsys.readouterr().err
    free = tmp_path / "free.json"
    free.write_text(json.dumps({"analysis_spans": [4, 4], "design_spans": [2, 2], "supports": []}))
    assert run_cli(["optimize", "--config", str(free), "--out", str(tmp_path / "f")]) == 1
    assert (tmp_path / "f" / "history.csv").exists()
