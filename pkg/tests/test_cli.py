import json
import math
from pathlib import Path

import numpy as np
import pytest
import yaml

from forward_pide import cli, io
from forward_pide.config import ConfigError, load_config
from forward_pide.levy_tails import Kou
from forward_pide.models import model_to_dict

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def run(tmp_path, command, config, *extra):
    out = tmp_path / command
    code = cli.main([command, "--config", str(config), "--out", str(out), *extra])
    return code, out


def write_config(tmp_path, doc, name="run.yaml"):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(doc, sort_keys=False))
    return path


def test_black_scholes_solve(tmp_path):
    code, out = run(tmp_path, "solve", CONFIGS / "black_scholes.yaml")
    assert code == 0
    T, K, C = io.read_surface_csv(out / "surface.csv")
    j = int(np.argmin(np.abs(K - 100)))
    assert abs(K[j] - 100) < 1e-9
    assert C[list(T).index(1.0), j] == pytest.approx(7.9656, rel=5e-3)
    assert "FAIL" not in (out / "validation.txt").read_text()


def test_deterministic_solve_and_compare(tmp_path, capsys):
    code, out = run(tmp_path, "solve", CONFIGS / "deterministic.yaml")
    assert code == 0
    text = (out / "validation.txt").read_text()
    assert "martingale: pass worst_violation=0.000e+00" in text
    assert text.count(": pass") == 5
    code, out = run(tmp_path, "compare", CONFIGS / "deterministic.yaml")
    assert code == 0
    cols = io.read_csv_columns(out / "compare.csv")
    assert np.all(cols["mc_stderr"] == 0) and np.all(cols["z_score"] == 0)
    assert "exact-match" in capsys.readouterr().out


def test_heavy_tail_exit_names_assumption(tmp_path, capsys):
    code, _ = run(tmp_path, "solve", CONFIGS / "kou_heavy_tail.yaml")
    assert code == 1
    assert "H" in capsys.readouterr().err.split("assumption(s)")[1].splitlines()[0]


def test_compare_exit_two_on_disagreement(tmp_path):
    doc = yaml.safe_load((CONFIGS / "deterministic.yaml").read_text())
    doc["model"]["local_vol"] = 0.2
    doc["mc"] = {"n_paths": 20000, "n_steps": 50}
    doc["grid"]["substeps"] = 2
    doc["grid"]["n_k"] = 17
    doc["compare"] = {"strikes": [100.0], "z_limit": 0.001}
    code, out = run(tmp_path, "compare", write_config(tmp_path, doc))
    assert code == 2
    assert "FAIL" in (out / "compare.txt").read_text()


def test_parse_error_reports_line_and_column(tmp_path, capsys):
    path = tmp_path / "bad.yaml"
    path.write_text("schema_version: 1\nmodel:\n  kind: local_vol\n  spot: [100\n")
    code, _ = run(tmp_path, "solve", path)
    assert code == 1
    err = capsys.readouterr().err
    # file:line:column: message
    assert f"{path}:5:1: YAML syntax error" in err


def test_unknown_key_located(tmp_path):
    doc = yaml.safe_load((CONFIGS / "deterministic.yaml").read_text())
    doc["grid"]["n_kk"] = 10
    path = write_config(tmp_path, doc)
    with pytest.raises(ConfigError) as info:
        cli.build_grid(load_config(path), None)
    assert info.value.line == list(path.read_text().splitlines()).index("  n_kk: 10") + 1
    assert "n_kk" in str(info.value)


def test_missing_schema_version(tmp_path, capsys):
    doc = yaml.safe_load((CONFIGS / "deterministic.yaml").read_text())
    del doc["schema_version"]
    code, _ = run(tmp_path, "validate", write_config(tmp_path, doc))
    assert code == 1
    assert "schema_version" in capsys.readouterr().err


def test_tails_match_closed_form(tmp_path):
    doc = {"schema_version": 1,
           "tails": {"measure": {"kind": "kou", "intensity": 1.0, "p_up": 0.4, "eta_up": 3.0, "eta_down": 2.0},
                     "z_min": -1.0, "z_max": 1.0, "n": 21}}
    code, out = run(tmp_path, "tails", write_config(tmp_path, doc))
    assert code == 0
    cols = io.read_csv_columns(out / "tails.csv")
    assert list(cols) == ["z", "psi"]
    np.testing.assert_allclose(cols["psi"], Kou(1.0, 0.4, 3.0, 2.0).tail(cols["z"]), rtol=1e-15)


def test_cdo_zero_intensity(tmp_path):
    code, out = run(tmp_path, "cdo", CONFIGS / "cdo_zero.yaml")
    assert code == 0
    T, K, C = io.read_surface_csv(out / "tranche.csv")
    np.testing.assert_array_equal(C, np.broadcast_to(K, C.shape))


def test_cdo_triple(tmp_path):
    code, out = run(tmp_path, "cdo", CONFIGS / "cdo_poisson.yaml")
    assert code == 0
    _, _, dens = io.read_surface_csv(out / "tranche.csv")
    assert (out / "tranche_recursion.csv").exists() and (out / "tranche_mc.csv").exists()
    mc = io.read_csv_columns(out / "tranche_mc.csv")
    z = (mc["mean"] - dens.ravel()) / mc["stderr"]
    assert np.all(np.abs(z) <= 4)


def test_unknown_cdo_engine(tmp_path, capsys):
    doc = yaml.safe_load((CONFIGS / "cdo_zero.yaml").read_text())
    doc["cdo"]["engine"] = "fast"
    code, _ = run(tmp_path, "cdo", write_config(tmp_path, doc))
    assert code == 1 and "unknown cdo engine" in capsys.readouterr().err


def test_outputs_byte_identical(tmp_path):
    doc = yaml.safe_load((CONFIGS / "kou_desk.yaml").read_text())
    doc["mc"]["n_paths"] = 5000
    doc["grid"]["n_k"] = 200
    doc["grid"]["substeps"] = 20
    path = write_config(tmp_path, doc)
    a = tmp_path / "a"
    b = tmp_path / "b"
    for out, threads in ((a, "1"), (b, "3")):
        cli.main(["compare", "--config", str(path), "--out", str(out), "--seed", "17", "--threads", threads])
    assert (a / "compare.csv").read_bytes() == (b / "compare.csv").read_bytes()
    raw = (a / "compare.csv").read_bytes()
    assert b"\r" not in raw and raw.splitlines()[0] == b"T,K,pide,mc_mean,mc_stderr,z_score"


def test_seed_flag_changes_mc(tmp_path):
    doc = yaml.safe_load((CONFIGS / "kou_desk.yaml").read_text())
    doc["mc"]["n_paths"] = 2000
    path = write_config(tmp_path, doc)
    outs = []
    for seed in ("1", "2"):
        out = tmp_path / seed
        assert cli.main(["mc", "--config", str(path), "--out", str(out), "--seed", seed]) == 0
        outs.append((out / "mc.csv").read_bytes())
    assert outs[0] != outs[1]


def test_bad_seed_rejected():
    with pytest.raises(SystemExit):
        cli.main(["mc", "--config", "x.yaml", "--seed", str(2**64)])


def test_model_document_round_trip(tmp_path):
    doc = yaml.safe_load((CONFIGS / "svj_desk.yaml").read_text())
    model = cli.build_model(load_config(write_config(tmp_path, doc)))
    io.write_model(tmp_path / "m.json", model)
    again = io.read_model(tmp_path / "m.json")
    assert model_to_dict(again) == model_to_dict(model)
    assert json.loads((tmp_path / "m.json").read_text())["document"] == "model"


def test_basket_project_then_solve_matches_mc(tmp_path):
    doc = yaml.safe_load((CONFIGS / "basket_project.yaml").read_text())
    doc["mc"]["n_paths"] = 60000
    doc["grid"]["n_k"] = 300
    doc["grid"]["substeps"] = 50
    path = write_config(tmp_path, doc)
    code, proj = run(tmp_path, "project", path)
    assert code == 0
    coeffs, spot, grid = io.read_coefficients(proj / "coefficients.json")
    assert spot == pytest.approx(100.0)
    # the emitted document re-parses to an equal value
    io.write_coefficients(tmp_path / "again.json", coeffs, spot, grid)
    assert (tmp_path / "again.json").read_bytes() == (proj / "coefficients.json").read_bytes()

    solve_doc = {"schema_version": 1, "coefficients": str(proj / "coefficients.json")}
    code, solved = run(tmp_path, "solve", write_config(tmp_path, solve_doc, "solve.yaml"))
    assert code in (0, 2)
    T, K, C = io.read_surface_csv(solved / "surface.csv")

    code, direct = run(tmp_path, "mc", path, "--seed", "99")
    assert code == 0
    mc = io.read_csv_columns(direct / "mc.csv")
    for t, k, mean, se in zip(mc["T"], mc["K"], mc["mean"], mc["stderr"]):
        i = int(np.argmin(np.abs(T - t)))
        pide = float(np.interp(math.log(k), np.log(K), C[i]))
        assert abs(pide - mean) <= 3 * se + 0.01 * mean
