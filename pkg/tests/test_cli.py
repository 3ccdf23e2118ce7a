import json
import math

import numpy as np
import pytest

from sirwlab import cli
from sirwlab import parallel as P
from sirwlab import report as Rp


def run(capsys, *argv):
    code = cli.main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_urn_stats_writes_report_columns(capsys):
    code, out, err = run(capsys, "urn-stats", "--n", "5,10", "--replicas", "200", "--seed", "4")
    assert code == 0
    lines = [ln for ln in out.splitlines() if not ln.startswith("#")]
    assert lines[0].split(",") == cli.URN_COLUMNS
    assert len(lines) == 3
    assert "# seed: 4" in out
    assert "# n=5,10 (flag)" in err and "# variant=plus (default)" in err


def test_csv_is_identical_across_worker_counts(capsys):
    args = ("urn-stats", "--n", "20", "--replicas", "100", "--seed", "8", "--variant", "minus")
    _, one, _ = run(capsys, *args, "--workers", "1")
    _, two, _ = run(capsys, *args, "--workers", "2")
    assert one == two


def test_flags_override_config_which_overrides_defaults(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"replicas": 150, "n": [3], "variant": "zero"}))
    code, out, err = run(capsys, "urn-stats", "--config", str(cfg), "--variant", "minus")
    assert code == 0
    assert "# replicas=150 (config)" in err
    assert "# variant=minus (flag)" in err
    assert "# sampler=direct (default)" in err
    assert "minus,1,3,150," in out


def test_unknown_config_key_is_rejected(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"replica": 5}))
    code, _, err = run(capsys, "urn-stats", "--config", str(cfg))
    assert code == cli.EXIT_CONFIG
    assert "unknown config keys" in err


@pytest.mark.parametrize(
    "argv, message",
    [
        (("nonconv", "--delta", "0.7"), "delta must lie in (0, 1/2]"),
        (("increment-test", "--c", "0.5"), "c must lie in [0, 1/2)"),
        (("urn-stats", "--variant", "sideways"), "variant must be one of"),
        (("urn-stats", "--weight", "kind=polynomial"), "alpha"),
        (("urn-stats", "--replicas", "0"), "replicas must be at least 1"),
        (("rk-profile", "--M", "0"), "M must be positive"),
    ],
)
def test_invalid_configuration_exits_1(argv, message, capsys):
    code, out, err = run(capsys, *argv)
    assert code == cli.EXIT_CONFIG
    assert message in err
    assert out == ""


def test_unknown_flag_exits_1(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["urn-stats", "--bogus", "1"])
    assert exc.value.code == cli.EXIT_CONFIG


def test_failure_rate_exits_2(monkeypatch, capsys):
    def boom(v):
        raise P.FailureRateExceeded(10, 10, ["budget"])

    monkeypatch.setitem(cli.COMMANDS, "urn-stats", boom)
    code, _, err = run(capsys, "urn-stats", "--replicas", "10")
    assert code == cli.EXIT_FAILURES
    assert "10 of 10 replicas failed" in err


def test_assert_exits_3_on_failed_verdict(capsys):
    # at n = 1 the discrepancy is far from its large-n limit
    code, out, err = run(capsys, "urn-stats", "--n", "1", "--replicas", "20000", "--assert")
    assert code == cli.EXIT_VERDICT
    assert ",fail" in out
    code, _, _ = run(capsys, "urn-stats", "--n", "1", "--replicas", "20000")
    assert code == 0


def test_single_replica_reports_na(capsys):
    code, out, _ = run(capsys, "blp-stats", "--replicas", "1", "--generations", "2")
    assert code == 0
    mean_rows = [ln for ln in out.splitlines() if ln.startswith("mean,")]
    assert all(ln.split(",")[3] == "n/a" for ln in mean_rows)


def test_out_file(tmp_path, capsys):
    path = tmp_path / "r.csv"
    code, out, _ = run(capsys, "diffusion", "--replicas", "20", "--step", "0.01", "--out", str(path))
    assert code == 0 and out == ""
    assert path.read_text().startswith("# tool: sirwlab")


@pytest.mark.parametrize("record, columns", [("position", "replica,t,X"),
                                             ("decomposition", "replica,t,X,M,Gamma"),
                                             ("profile", "replica,x,E,D,L")])
def test_simulate_walk_records(record, columns, capsys):
    code, out, _ = run(capsys, "simulate-walk", "--replicas", "2", "--steps", "30", "--record", record)
    assert code == 0
    assert columns in out.splitlines()


@pytest.mark.parametrize("process", ["besq", "bmpe", "pq"])
def test_diffusion_processes_run(process, capsys):
    code, out, _ = run(capsys, "diffusion", "--process", process, "--replicas", "50", "--step", "0.01")
    assert code == 0
    assert "mean_end" in out


# -- replica fan-out --------------------------------------------------------

def _draw(index, rng):
    return float(rng.random())


def _fail_odd(index, rng):
    if index % 2:
        raise P.ReplicaFailure("odd")
    return index


def test_streams_are_reproducible_and_distinct():
    a = P.stream(1, 0).random(3)
    assert np.array_equal(a, P.stream(1, 0).random(3))
    assert not np.array_equal(a, P.stream(1, 1).random(3))
    assert not np.array_equal(a, P.stream(1, 0, tag=1).random(3))


def test_spawn_replicas_is_worker_independent():
    one = P.spawn_replicas(_draw, 7, 3, workers=1).values
    three = P.spawn_replicas(_draw, 7, 3, workers=3).values
    assert one == three


def test_spawn_replicas_collects_failures():
    res = P.spawn_replicas(_fail_odd, 6, 0, max_failure_rate=0.6)
    assert res.values == [0, None, 2, None, 4, None]
    assert res.ok == [0, 2, 4]
    assert res.failure_rate == 0.5
    with pytest.raises(P.FailureRateExceeded, match="3 of 6"):
        P.spawn_replicas(_fail_odd, 6, 0)


def test_spawn_replicas_rejects_zero():
    with pytest.raises(ValueError):
        P.spawn_replicas(_draw, 0, 0)


# -- reports ----------------------------------------------------------------

def test_mean_and_variance_standard_errors():
    m, se = Rp.mean_se([1.0, 2.0, 3.0])
    assert m == 2.0 and se == pytest.approx(1 / math.sqrt(3))
    assert math.isnan(Rp.mean_se([4.0])[1])
    v, sv = Rp.var_se(np.arange(100.0))
    assert v == pytest.approx(np.var(np.arange(100.0), ddof=1))
    assert sv > 0


def test_control_variate_removes_correlated_noise(rng):
    c = rng.normal(size=5000)
    y = 1.0 + 2.0 * c + 0.1 * rng.normal(size=5000)
    est, se, beta = Rp.control_variate_mean(y, c)
    assert beta == pytest.approx(2.0, abs=0.01)
    assert est == pytest.approx(1.0, abs=5 * se)
    assert se < Rp.mean_se(y)[1] / 10


def test_report_csv_header_and_lookup():
    rep = Rp.ExperimentReport("demo", {"b": 2, "a": 1}, replicas=5, failures=1)
    rep.add("mean", 0.5, 1.25, None, 1.0, None, "pass")
    rep.add("mean", 1.0, float("nan"), 0.1)
    text = rep.to_csv(seed=9)
    lines = text.splitlines()
    assert lines[:7] == ["# tool: sirwlab 0.1.0", "# experiment: demo", "# seed: 9", "# config: a=1",
                         "# config: b=2", "# replicas: 5", "# failures: 1"]
    assert lines[7] == ",".join(Rp.REPORT_COLUMNS)
    assert lines[8].startswith("mean,0.5,1.25,n/a,")
    assert rep.get("mean", 1.0).se == 0.1
    assert [r.x_or_t for r in rep.failed_verdicts] == []
    with pytest.raises(KeyError):
        rep.get("var")
