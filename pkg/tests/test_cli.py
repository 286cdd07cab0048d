import csv
import json

import pytest

from mgalerkin.cli import CSV_COLUMNS, RunConfig, build_config, main, make_parser, table_csv


def _run(tmp_path, *argv, name="out.json"):
    out = tmp_path / name
    code = main([*argv, "--output", str(out)])
    return code, (json.loads(out.read_text()) if out.exists() else None), out


def test_run_semilinear(tmp_path):
    code, rep, out = _run(tmp_path, "run", "--case", "semilinear", "--levels", "3")
    assert code == 0 and rep["converged"]
    assert rep["schemaVersion"] == 1 and rep["command"] == "run"
    assert rep["certificate"]["verdict"] == "H2"
    incs = rep["boundedness"]["increments"]
    assert len(incs) == 2 and incs[1] < incs[0]
    assert out.with_suffix(".csv").exists()


def test_certify_exit_and_verdict(tmp_path, capsys):
    code, rep, _ = _run(tmp_path, "certify", "--case", "resonant", "--levels", "1")
    assert code == 0 and rep["certificate"]["verdict"] == "fail"
    assert "verdict fail" in capsys.readouterr().err


def test_infsup_taylor_hood(tmp_path):
    code, rep, _ = _run(tmp_path, "infsup", "--case", "taylor-hood", "--levels", "2")
    assert code == 0
    gammas = [lv["gammaXY"] for lv in rep["levels"]]
    assert len(gammas) == 2 and min(gammas) > 0.2


def test_infsup_rejects_nonlinear(tmp_path):
    code, rep, _ = _run(tmp_path, "infsup", "--case", "semilinear")
    assert code == 1 and rep is None


def test_infsup_rank_deficient_warns(tmp_path, capsys):
    code, rep, _ = _run(tmp_path, "infsup", "--case", "rank-deficient")
    assert code == 0 and rep["levels"][0]["gammaXY"] == 0.0
    assert "warning" in capsys.readouterr().err


def test_converge_success_and_failure(tmp_path):
    code, rep, _ = _run(tmp_path, "converge", "--case", "laplace", "--levels", "4")
    assert code == 0 and rep["increments_decrease"]
    code, rep, _ = _run(tmp_path, "converge", "--case", "resonant", "--shift", "continuous", "--levels", "4",
                        name="res.json")
    assert code == 2 and not rep["increments_decrease"]


def test_converge_needs_three_levels(tmp_path):
    code, rep, _ = _run(tmp_path, "converge", "--case", "laplace", "--levels", "2")
    assert code == 1 and rep is None


def test_converge_csv_to_stdout(capsys):
    assert main(["converge", "--case", "laplace", "--levels", "3"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ",".join(CSV_COLUMNS) and len(lines) == 4


def test_nonconvergence_exit(tmp_path):
    code, rep, _ = _run(tmp_path, "run", "--case", "semilinear", "--levels", "2", "--max-newton-its", "0",
                        "--strategy", "newton")
    assert code == 2 and not rep["converged"]


@pytest.mark.parametrize(
    "text",
    [
        "[problem]\ncase = semilinear\nbogus = 1\n",
        "[weird]\nx = 1\n",
        "[solver]\ntol_residual = abc\n",
        "[problem]\ncase = nothing\n",
        "[solver]\nstrategy = guess\n",
    ],
)
def test_bad_config_exit_1_no_output(tmp_path, text):
    ini = tmp_path / "bad.ini"
    ini.write_text(text)
    out = tmp_path / "never.json"
    assert main(["run", "--config", str(ini), "--output", str(out)]) == 1
    assert not out.exists()
    assert not any(p.name.startswith(".tmp-") for p in tmp_path.iterdir())


def test_unknown_flag_exit_1():
    assert main(["run", "--no-such-flag", "1"]) == 1


def test_flags_override_file(tmp_path):
    ini = tmp_path / "cfg.ini"
    ini.write_text("[problem]\ncase = laplace\nlevels = 2\nlambda = 3.0\n[solver]\nseed = 4\n")
    args = make_parser().parse_args(["run", "--config", str(ini), "--levels", "3", "--f", "cubic"])
    cfg = build_config(args)
    assert cfg.case == "laplace" and cfg.levels == (2, 3, 4)
    assert cfg.forcing == "cubic" and cfg.lam == 3.0 and cfg.seed == 4


def test_explicit_refinement_list():
    cfg = build_config(make_parser().parse_args(["run", "--levels", "1,3,5"]))
    assert cfg.levels == (1, 3, 5)


def test_config_roundtrip():
    cfg = build_config(make_parser().parse_args(["certify", "--case", "semilinear-p", "--p", "1.5",
                                                 "--radii", "1,10,100,1000,10000"]))
    back = RunConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert back == cfg


def _strip_timings(obj):
    if isinstance(obj, dict):
        return {k: _strip_timings(v) for k, v in obj.items() if k != "timings"}
    if isinstance(obj, list):
        return [_strip_timings(v) for v in obj]
    return obj


@pytest.mark.parametrize("argv", [["run", "--case", "semilinear-p", "--p", "1.5", "--levels", "2"],
                                  ["certify", "--case", "saturating", "--load", "0.5"]])
def test_reports_are_deterministic(tmp_path, argv):
    _, a, _ = _run(tmp_path, *argv, name="a.json")
    _, b, _ = _run(tmp_path, *argv, name="b.json")
    assert "timings" in a
    # the output path is part of the echoed config
    sa = json.dumps(_strip_timings(a), sort_keys=True, indent=2)
    sb = json.dumps(_strip_timings(b), sort_keys=True, indent=2).replace("b.json", "a.json")
    assert sa == sb


def test_csv_format(tmp_path):
    code, rep, out = _run(tmp_path, "run", "--case", "laplace", "--levels", "3")
    assert code == 0
    with open(out.with_suffix(".csv"), newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CSV_COLUMNS
    assert rows[1][CSV_COLUMNS.index("increment")] == ""
    for row, ref in zip(rows[1:], rep["table"]):
        # 17 significant digits round-trip every double exactly
        assert float(row[CSV_COLUMNS.index("norm")]) == ref["norm"]
        assert int(row[0]) == ref["level"]


def test_table_csv_precision():
    text = table_csv([{"level": 0, "refinement": 2, "dim": 3, "norm": 0.1, "increment": None, "residual": 1e-17}])
    assert text.splitlines()[1] == "0,2,3,0.10000000000000001,,1.0000000000000001e-17"
