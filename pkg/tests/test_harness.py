import csv
import json

import numpy as np
import pytest

from sdcphm.harness import (REPORT_FIELDS, SUMMARY_METRICS, TRAJECTORY_FIELDS, ConfigError, build_parser,
                            config_from_args, main, summarize, validate_report)
from sdcphm.markowitz import MarketData

# a capped PHM budget keeps the plumbing tests fast; convergence is checked separately
TINY = ["--n", "3", "--K", "2", "--phm-budget", "200"]


def parse(*argv):
    return config_from_args(build_parser().parse_args(list(argv)))


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# configuration


@pytest.mark.parametrize("argv", [["--K", "0"], ["--n", "1"], ["--replications", "0"], ["--variants", "A,E"],
                                  ["--rho-decay", "1.5"], ["--eta", "-1"]])
def test_invalid_config(argv):
    with pytest.raises(ConfigError):
        parse("solve", "--variant", "A", *argv)


def test_invalid_config_exit_code(tmp_path, capsys):
    assert main(["solve", "--variant", "A", "--K", "0", "--out", str(tmp_path)]) == 2
    assert "K must be at least 1" in capsys.readouterr().err


def test_config_file_and_flag_precedence(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[run]\nvariants = b, d\nn = 7\nK = 4, 8\nreplications = 2\nbase_seed = 5\n"
                   "[sdc]\nrho_floor = 1e-3\ntau1 = 1e-3\nwarm_start = false\nmax_outer = 50\n")
    cfg = parse("bench", "--config", str(ini), "--n", "9", "--tau", "2e-4")
    assert cfg.variants == ["B", "D"] and cfg.K == [4, 8] and cfg.n == 9
    assert cfg.seeds() == [5, 6]
    sdc = cfg.sdc_config()
    assert sdc.rho_floor == 1e-3 and sdc.tau1 == sdc.tau2 == 2e-4
    assert sdc.warm_start is False and sdc.max_outer == 50


def test_unknown_config_key(tmp_path):
    ini = tmp_path / "run.ini"
    ini.write_text("[sdc]\nlearning_rate = 1\n")
    with pytest.raises(ConfigError):
        parse("solve", "--config", str(ini))


def test_eta_flag_sets_all_three():
    sdc = parse("solve", "--eta", "0.3").sdc_config()
    assert sdc.eta1 == sdc.eta2 == sdc.eta3 == 0.3


# ---------------------------------------------------------------------------
# solve


@pytest.fixture(scope="module")
def solved(tmp_path_factory):
    out = tmp_path_factory.mktemp("solve")
    code = main(["solve", "--variants", "A,B,C,D", "--replications", "3", *TINY, "--out", str(out)])
    return code, out


def test_solve_writes_one_report_per_cell(solved):
    code, out = solved
    assert code in (0, 1)
    reports = sorted(out.glob("*.json"))
    assert len(reports) == 12
    assert len(list(out.glob("*_trace.csv"))) == 12


def test_reports_validate(solved):
    _, out = solved
    for path in out.glob("*.json"):
        rep = json.loads(path.read_text())
        validate_report(rep)
        assert rep["status"] in ("converged", "phm-budget-exhausted")
        traj = rep["trajectory"]
        times = traj["time_s"]
        assert all(a <= b for a, b in zip(times, times[1:]))


def test_plot_csv_is_tidy(solved):
    _, out = solved
    for path in out.glob("*_plot.csv"):
        with open(path) as fh:
            assert fh.readline().strip() == ",".join(TRAJECTORY_FIELDS)


def test_validate_report_rejects_schema_drift(solved):
    _, out = solved
    rep = json.loads(next(out.glob("*.json")).read_text())
    bad = dict(rep, extra=1)
    with pytest.raises(ValueError):
        validate_report(bad)
    bad = dict(rep)
    bad.pop("nnz")
    with pytest.raises(ValueError):
        validate_report(bad)
    bad = dict(rep, nnz="3")
    with pytest.raises(ValueError):
        validate_report(bad)
    assert set(rep) == set(REPORT_FIELDS)


def test_solve_reference_instance(tmp_path):
    assert main(["solve", "--variant", "D", "--n", "5", "--K", "8", "--seed", "1", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "D_n5_K8_seed1.json").read_text())
    assert rep["status"] == "converged"


def test_solve_nonzero_exit_on_budget(tmp_path):
    code = main(["solve", "--variant", "D", *TINY, "--phm-budget", "2", "--eta", "1e-9", "--out", str(tmp_path)])
    assert code == 1


# ---------------------------------------------------------------------------
# bench


def test_bench_summary_shape(tmp_path):
    assert main(["bench", "--variants", "A,C", "--replications", "5", *TINY, "--out", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "bench_summary.csv")
    assert [r["variant"] for r in rows] == ["A", "C"]
    for r in rows:
        assert r["runs"] == "5" and r["failed"] == "0"
        assert int(r["converged"]) <= 5
        for m in SUMMARY_METRICS:
            assert f"{m}_mean" in r and f"{m}_std" in r
    assert len(read_csv(tmp_path / "bench_runs.csv")) == 10


def test_stdev_zero_on_identical_runs():
    rep = {"variant": "A", "K": 2, "status": "converged", **{m: 1.5 for m in SUMMARY_METRICS}}
    row, = summarize([rep, dict(rep), dict(rep)])
    assert all(row[f"{m}_std"] == 0.0 for m in SUMMARY_METRICS)
    assert row["runs"] == 3 and row["converged"] == 3


def test_summary_uses_sample_stdev():
    reps = [{"variant": "B", "K": 2, "status": "converged", **{m: v for m in SUMMARY_METRICS}} for v in (1.0, 3.0)]
    row, = summarize(reps)
    assert row["nnz_mean"] == 2.0 and row["nnz_std"] == pytest.approx(2 ** 0.5)


def test_bench_is_byte_deterministic(tmp_path):
    for d in ("a", "b"):
        assert main(["bench", "--variants", "B,D", "--replications", "2", *TINY, "--out", str(tmp_path / d)]) == 0
    for name in ("bench_runs.csv", "bench_summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


# ---------------------------------------------------------------------------
# synth and verify


def test_synth_roundtrip_and_solve(tmp_path):
    path = tmp_path / "m.json"
    assert main(["synth", "--n", "4", "--K", "3", "--seed", "2", "--out", str(path)]) == 0
    data = MarketData.load(path)
    assert (data.n, data.K) == (4, 3)
    assert main(["solve", "--variant", "C", "--market", str(path), "--out", str(tmp_path / "r")]) == 0


def test_solve_from_csv(tmp_path):
    R = np.random.default_rng(0).normal(0.05, 1.0, (60, 3))
    p = tmp_path / "r.csv"
    np.savetxt(p, R, delimiter=",", header="a,b,c", comments="")
    assert main(["solve", "--variant", "D", "--K", "2", "--data-csv", str(p), "--out", str(tmp_path / "o")]) == 0


@pytest.mark.slow
def test_verify_passes_and_detects_corruption(capsys):
    assert main(["verify"]) == 0
    text = capsys.readouterr().out
    for name in ("dc-identity", "nonanticipativity", "majorization"):
        assert f"PASS {name}" in text
    assert main(["verify", "--corrupt-q2"]) == 1
    assert "FAIL monotonicity" in capsys.readouterr().out
