import hashlib

import pytest
from conftest import DATA

from techtransit.scenario.cli import EXIT_CONFIG, EXIT_CONSTRAINT, EXIT_OK, EXIT_STABILITY, main

TWO = (DATA / "two_tech.toml").read_text()


def test_run_writes_csv(tmp_path, capsys):
    assert main(["run", str(DATA / "two_tech.toml"), "--horizon", "1"]) == EXIT_OK
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("time,demand,driver,U_a,U_b")
    assert len(out) == 1 + 5
    dest = tmp_path / "t.csv"
    assert main(["run", str(DATA / "two_tech.toml"), "-o", str(dest), "--format", "long"]) == EXIT_OK
    assert dest.read_text().startswith("time,variable,tech,value")


def test_validate(capsys):
    assert main(["validate", str(DATA / "segments.toml")]) == EXIT_OK
    assert "3 constraints" in capsys.readouterr().out


def test_config_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(TWO.replace("[0.25, 0.5]]", "[0.5, 0.5]]"))
    assert main(["run", str(bad)]) == EXIT_CONFIG
    assert "configuration error" in capsys.readouterr().err
    assert main(["run", str(tmp_path / "nope.toml")]) == EXIT_CONFIG


def test_stability_exit(tmp_path, capsys):
    sc = tmp_path / "fast.toml"
    sc.write_text(TWO.replace("initial_capacity = 50.0", "initial_capacity = 10.0", 1)
                  .replace("initial_capacity = 50.0", "initial_capacity = 90.0", 1))
    assert main(["run", str(sc), "--dt", "25"]) == EXIT_STABILITY
    assert "stability" in capsys.readouterr().err


def test_constraint_exit(tmp_path):
    sc = tmp_path / "tight.toml"
    sc.write_text((DATA / "segments.toml").read_text().replace("bound = 0.3", "bound = 0.05", 1))
    assert main(["validate", str(sc)]) == EXIT_CONSTRAINT


def test_oracle_command(tmp_path, capsys):
    out = tmp_path / "o.csv"
    tally = tmp_path / "tally.csv"
    rc = main(["oracle", str(DATA / "micro2.toml"), "--seeds", "3", "--years", "5", "-o", str(out),
               "--tally", str(tally)])
    assert rc == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == "year,tech,micro_mean,ci95,meanfield,diff"
    assert len(lines) == 1 + 6 * 2
    assert tally.read_text().startswith("year,tech,units")
    assert "over 3 seeds" in capsys.readouterr().err


def test_experiment_commands(tmp_path):
    lad = tmp_path / "lad.csv"
    assert main(["experiment", "ladder", str(DATA / "ladder.toml"), "--ramps", "0,10", "-o", str(lad)]) == EXIT_OK
    rows = lad.read_text().splitlines()
    assert rows[0] == "ramp,tech,unimodal,peak_width,peak_time,decline_bound"
    assert len(rows) == 1 + 2 * 4
    hy = tmp_path / "hy.csv"
    traj = tmp_path / "traj.csv"
    assert main(["experiment", "hysteresis", str(DATA / "hysteresis.toml"), "-o", str(hy),
                 "--trajectory", str(traj)]) == EXIT_OK
    kv = dict(line.split(",") for line in hy.read_text().splitlines()[1:])
    assert kv["improved"] == "1" and float(kv["metric"]) > 0.5
    assert traj.exists()
    assert main(["experiment", "hysteresis", str(DATA / "hysteresis.toml"), "--pulse", "5,1,2,3"]) == EXIT_CONFIG


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


@pytest.mark.parametrize("argv,names", [
    (["run", "two_tech.toml"], ["two_tech_shares.png", "two_tech_efficiency.png"]),
    (["experiment", "ladder", "ladder.toml", "--ramps", "0.04"], ["ladder.png"]),
    (["experiment", "hysteresis", "hysteresis.toml"], ["hysteresis.png"]),
    (["oracle", "micro2.toml", "--seeds", "2", "--years", "5"], ["micro2_oracle.png"]),
])
def test_figures_are_written_and_repeatable(tmp_path, capsys, argv, names):
    argv = [a if not a.endswith(".toml") else str(DATA / a) for a in argv]
    digests = []
    for rep in ("a", "b"):
        d = tmp_path / rep
        assert main(argv + ["--figures", str(d), "-o", str(tmp_path / f"{rep}.out")]) == EXIT_OK
        digests.append([_digest(d / n) for n in names])
    assert digests[0] == digests[1]
