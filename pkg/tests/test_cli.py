"""Command-line contract: exit codes, report files, traces, figures."""

import json

import pytest

from mnum.cli import main
from mnum.report import dumps_stable, load_json, validate_equilibrium_report

from conftest import CHAIN3, TWO_LINK_ASYMMETRIC, TWO_LINK_SYMMETRIC


@pytest.fixture
def sym_file(tmp_path):
    path = tmp_path / "sym.json"
    path.write_text(json.dumps(TWO_LINK_SYMMETRIC))
    return path


def test_solve_writes_report_and_figures(sym_file, tmp_path, capsys):
    out = tmp_path / "report.json"
    rc = main(["solve", "--input", str(sym_file), "--output", str(out)])
    assert rc == 0
    report = load_json(out)
    validate_equilibrium_report(report)
    assert report["x"][0] == pytest.approx(2.0, abs=1e-6)
    assert report["rmnum_residual"] < 1e-6
    assert (tmp_path / "report_convergence.png").exists()
    assert (tmp_path / "report_loads.png").exists()
    assert "converged" in capsys.readouterr().out


def test_solve_no_figures_flag(sym_file, tmp_path):
    out = tmp_path / "report.json"
    rc = main(["solve", "--input", str(sym_file), "--output", str(out), "--no-figures"])
    assert rc == 0
    assert out.exists()
    assert not (tmp_path / "report_convergence.png").exists()


def test_report_bytes_are_reproducible(sym_file, tmp_path):
    out1, out2 = tmp_path / "r1.json", tmp_path / "r2.json"
    assert main(["solve", "--input", str(sym_file), "--output", str(out1), "--no-figures"]) == 0
    assert main(["solve", "--input", str(sym_file), "--output", str(out2), "--no-figures"]) == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_report_round_trips_through_stable_dump(sym_file, tmp_path):
    out = tmp_path / "report.json"
    main(["solve", "--input", str(sym_file), "--output", str(out), "--no-figures"])
    report = load_json(out)
    validate_equilibrium_report(report)
    assert dumps_stable(report) == out.read_text()


def test_malformed_json_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"nodes": [')
    assert main(["solve", "--input", str(bad)]) == 2
    assert "input error" in capsys.readouterr().err


def test_unknown_field_exits_2(tmp_path):
    data = json.loads(json.dumps(TWO_LINK_SYMMETRIC))
    data["surprise"] = 1
    bad = tmp_path / "extra.json"
    bad.write_text(json.dumps(data))
    assert main(["validate", "--input", str(bad)]) == 2


def test_missing_file_exits_2(tmp_path):
    assert main(["solve", "--input", str(tmp_path / "nope.json")]) == 2


def test_bad_tol_exits_2(sym_file):
    assert main(["solve", "--input", str(sym_file), "--tol", "-1"]) == 2
    assert main(["solve", "--input", str(sym_file), "--max-iter", "0"]) == 2


def test_forced_non_convergence_exits_3(sym_file, capsys):
    assert main(["solve", "--input", str(sym_file), "--max-iter", "1"]) == 3
    err = capsys.readouterr().err
    assert "convergence error" in err and "iterations" in err


def test_validate_ok(sym_file, capsys):
    assert main(["validate", "--input", str(sym_file)]) == 0
    out = capsys.readouterr().out
    assert "network is valid" in out


def test_solver_flag_fixedpoint(sym_file, tmp_path):
    out = tmp_path / "fp.json"
    rc = main(["solve", "--input", str(sym_file), "--output", str(out), "--solver", "fixedpoint", "--no-figures"])
    assert rc == 0
    report = load_json(out)
    assert report["method"] == "fixedpoint"
    assert report["lambda"][0] == pytest.approx(1.5, abs=1e-6)


def test_choice_and_beta_overrides(sym_file):
    assert main(["solve", "--input", str(sym_file), "--beta", "2.5"]) == 0
    assert main(["solve", "--input", str(sym_file), "--choice", "min"]) == 0
    assert main(["solve", "--input", str(sym_file), "--choice", "min", "--beta", "2.0"]) == 2


def test_mte_with_demands(tmp_path):
    path = tmp_path / "asym.json"
    path.write_text(json.dumps(TWO_LINK_ASYMMETRIC))
    out = tmp_path / "mte.json"
    rc = main(
        ["mte", "--input", str(path), "--demand", "k0=2.5", "--choice", "min", "--output", str(out), "--no-figures"]
    )
    assert rc == 0
    report = load_json(out)
    assert abs(report["lambda"][0] - report["lambda"][1]) < 1e-6


def test_mte_demand_parsing_errors(sym_file):
    assert main(["mte", "--input", str(sym_file), "--demand", "k0"]) == 2
    assert main(["mte", "--input", str(sym_file), "--demand", "k0=abc"]) == 2
    assert main(["mte", "--input", str(sym_file), "--demand", "ghost=1.0"]) == 2


def test_num_default_and_explicit_routes(tmp_path):
    path = tmp_path / "chain.json"
    path.write_text(json.dumps(CHAIN3))
    out = tmp_path / "num.json"
    assert main(["num", "--input", str(path), "--output", str(out)]) == 0
    report = load_json(out)
    assert report["routes"][0] == ["sm", "md"]
    assert main(["num", "--input", str(path), "--route", "k0=sm,md"]) == 0
    assert main(["num", "--input", str(path), "--route", "k0=md"]) == 2


def test_gradcheck_passes_and_negative_control(sym_file, tmp_path, monkeypatch, capsys):
    assert main(["gradcheck", "--input", str(sym_file), "--points", "5"]) == 0
    monkeypatch.setenv("MNUM_GRADCHECK_CORRUPT", "1")
    assert main(["gradcheck", "--input", str(sym_file), "--points", "5"]) == 1
    monkeypatch.delenv("MNUM_GRADCHECK_CORRUPT")
    # no sources: gradient reduces to s^-1 alone and trivially matches
    empty = dict(TWO_LINK_SYMMETRIC, sources=[])
    path = tmp_path / "empty.json"
    path.write_text(json.dumps(empty))
    assert main(["gradcheck", "--input", str(path), "--points", "3"]) == 0


def test_simulate_outputs_and_determinism(sym_file, tmp_path):
    out1, out2 = tmp_path / "sim1", tmp_path / "sim2"
    args = ["simulate", "--input", str(sym_file), "--outer", "40", "--seed", "11"]
    assert main(args + ["--output", str(out1)]) == 0
    assert main(args + ["--output", str(out2), "--no-figures"]) == 0
    assert (out1 / "trace.csv").exists()
    assert (out1 / "summary.json").exists()
    assert (out1 / "simulation_convergence.png").exists()
    assert (out1 / "trace.csv").read_bytes() == (out2 / "trace.csv").read_bytes()
    summary = load_json(out1 / "summary.json")
    assert summary["final_rate_distance_rel"] < 0.01


def test_simulate_band_failure_exits_1(sym_file, tmp_path):
    rc = main(
        ["simulate", "--input", str(sym_file), "--outer", "2", "--band", "1e-12", "--output", str(tmp_path / "s")]
    )
    assert rc == 1
    assert (tmp_path / "s" / "trace.csv").exists()  # outputs written even when the band check fails


def test_simulate_noisy_smoke(sym_file):
    rc = main(["simulate", "--input", str(sym_file), "--outer", "20", "--noise-sigma", "0.5", "--band", "0.5"])
    assert rc in (0, 1)
