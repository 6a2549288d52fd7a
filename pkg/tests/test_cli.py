import csv
import json
from importlib import resources

import jsonschema
import pytest

from bilevel_soc.cli import main

SCHEMA = json.loads(resources.files("bilevel_soc.data").joinpath("report.schema.json").read_text())


def run(capsys, *argv):
    code = main(list(argv))
    report = json.loads(capsys.readouterr().out)
    jsonschema.validate(report, SCHEMA)
    return code, report


def test_lower_solve(capsys):
    code, rep = run(capsys, "lower-solve", "--problem", "3.1", "--x", "0.64")
    assert code == 0 and rep["errors"] == []
    assert sorted(round(y[0], 8) for y in rep["results"]["minimizers"]) == [-0.8, 0.8]
    assert rep["config"]["seed"] == 42


def test_value_fn_grid(capsys):
    code, rep = run(capsys, "value-fn", "--problem", "4.8", "--grid=-1:1:5")
    assert code == 0
    pts = rep["results"]["points"]
    assert len(pts) == 5 and pts[-1]["V"] == pytest.approx(-0.5, abs=1e-9)


def test_sigma_csv(capsys, tmp_path):
    out = tmp_path / "sigma.csv"
    code, rep = run(capsys, "sigma", "--problem", "4.8", "--grid=-1:1:5", "--kinds", "WSOC,KKT",
                    "--ny", "5", "--csv", str(out))
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert rows and {"WSOC", "KKT", "gph"} <= set(rows[0])


def test_check_soc_variants(capsys):
    code, rep = run(capsys, "check-soc", "--problem", "4.8", "--kind", "WSOC", "--x", "0.5", "--y", "0", "--u", "0,0")
    assert code == 0 and rep["results"]["holds"] == "no"
    code, rep = run(capsys, "check-soc", "--problem", "3.1", "--kind", "UNCONSTRAINED", "--x", "1", "--y", "0")
    assert rep["results"]["holds"] == "no"
    code, rep = run(capsys, "check-soc", "--problem", "4.6", "--kind", "SLACK", "--x", "0,0", "--y", "0",
                    "--u", "0,0")
    assert code == 0


def test_wrong_checker_is_an_error(capsys):
    code, rep = run(capsys, "check-soc", "--problem", "4.6", "--kind", "UNCONSTRAINED", "--x", "0,0", "--y", "0")
    assert code == 1 and rep["results"] is None and rep["errors"]


def test_calmness_command(capsys):
    code, rep = run(capsys, "calmness", "--problem", "4.6", "--reform", "CP", "--mu", "0,10",
                    "--radii", "0.1", "--budget", "300")
    assert code == 0
    assert rep["results"]["verdict"]["status"] == "VIOLATED"


def test_calmness_low_penalty_warns(capsys):
    _, rep = run(capsys, "calmness", "--problem", "3.1", "--mu", "1", "--radii", "0.1", "--budget", "200")
    assert any("100" in w for w in rep["warnings"])


def test_stationarity_command(capsys):
    code, rep = run(capsys, "stationarity", "--problem", "4.6", "--reform", "R_BSOCP", "--kind", "S",
                    "--blocks", '{"d":[1]}')
    assert code == 0 and rep["results"]["status"] == "HOLDS"
    code, rep = run(capsys, "stationarity", "--problem", "3.1", "--kind", "CPSOC", "--x", "0", "--y", "0")
    assert code == 0 and rep["results"]["status"] == "HOLDS"


def test_table_format_and_out_file(capsys, tmp_path):
    out = tmp_path / "r.json"
    code = main(["lower-solve", "--problem", "4.6", "--x", "0.5,0.5", "--format", "table", "--out", str(out)])
    text = capsys.readouterr().out
    assert code == 0 and text.startswith("lower-solve: ok")
    jsonschema.validate(json.loads(out.read_text()), SCHEMA)


def test_tolerance_override(capsys):
    _, rep = run(capsys, "lower-solve", "--problem", "3.1", "--x", "0", "--tol-feas", "1e-6")
    assert rep["config"]["tolerances"]["feas"] == 1e-6


def test_bad_input_exit_code(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("[]")
    code, rep = run(capsys, "lower-solve", "--problem", str(bad), "--x", "0")
    assert code == 1 and rep["errors"]
    code, rep = run(capsys, "lower-solve", "--problem", "3.1", "--x", "0,1")
    assert code == 1


def test_example_walkthrough(capsys, tmp_path):
    code, rep = run(capsys, "example", "3.1", "--budget", "300", "--csv-dir", str(tmp_path))
    assert code == 0 and rep["results"]
    assert any(tmp_path.iterdir())


def test_table1_command(capsys):
    code, rep = run(capsys, "table1", "--budget", "400")
    assert code == 0 and set(rep["results"]["rows"]) == {"4.6", "4.8"}
