import csv
import json
import subprocess
import sys

import pytest

from torus_ons import __version__
from torus_ons.cli import ConfigError, main, parse_config_text, resolve_config


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_parse_formats():
    kv = parse_config_text("d = 1\nNs = 4,8,16  # cutoffs\np=inf\nq=2\nalpha=2\n")
    assert kv == {"d": 1, "Ns": [4, 8, 16], "p": float("inf"), "q": 2, "alpha": 2}
    assert parse_config_text('{"d": 1, "Ns": [4, 8]}') == {"d": 1, "Ns": [4, 8]}
    with pytest.raises(ConfigError):
        parse_config_text("d 1")
    with pytest.raises(ConfigError):
        parse_config_text("d=1\nd=2")
    with pytest.raises(ConfigError):
        parse_config_text("{bad json")


def test_schema_validation():
    with pytest.raises(ConfigError):
        resolve_config("sweep", {"Ns": [4, 8, 16], "p": 4, "q": 2, "alpha": 2})
    with pytest.raises(ConfigError):
        resolve_config("endpoint", {"N": 4, "colour": "red"})
    with pytest.raises(ConfigError):
        resolve_config("endpoint", {"N": 2.5})
    with pytest.raises(ConfigError):
        resolve_config("dispersive", {"d": 1, "Ns": [4]}, seed=3)
    cfg = resolve_config("endpoint", {"N": 4}, seed=9)
    assert cfg == {"d": 1, "N": 4, "seed": 9, "trials": 1}


def test_sweep_output(tmp_path):
    conf = _write(tmp_path, "sweep.json", '{"d":1, "alpha":2, "Ns":[4,8,16,32], "p":4, "q":2}')
    out = tmp_path / "out"
    assert main(["sweep", "--config", conf, "--out", str(out)]) == 0
    rows = _rows(out / "sweep.csv")
    assert rows[0] == ["N", "lhs", "l_alpha", "ratio"]
    assert [r[0] for r in rows[1:]] == ["4", "8", "16", "32", "fit_slope"]
    assert float(rows[1][1]) == pytest.approx(9.0)
    assert abs(float(rows[-1][3]) - 0.5) <= 0.05
    side = json.loads((out / "sweep.json").read_text())
    assert side["version"] == __version__
    assert side["config"]["Ns"] == [4, 8, 16, 32]
    assert set(side["columns"]) == set(rows[0])


def test_endpoint_output_and_determinism(tmp_path):
    conf = _write(tmp_path, "ep.txt", "d=1\nN=4\nseed=7\n")
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["endpoint", "--config", conf, "--out", str(a)]) == 0
    assert main(["endpoint", "--config", conf, "--out", str(b), "--threads", "3"]) == 0
    assert (a / "endpoint.csv").read_bytes() == (b / "endpoint.csv").read_bytes()
    assert (a / "endpoint.json").read_bytes() == (b / "endpoint.json").read_bytes()
    rows = _rows(a / "endpoint.csv")
    assert rows[0] == ["seed", "total", "I", "II", "bound", "residual"]
    total, I, II, bound, res = map(float, rows[1][1:])
    assert res <= 1e-8 * (1 + total) and total <= bound
    assert b"\r" not in (a / "endpoint.csv").read_bytes()


def test_seed_override(tmp_path):
    conf = _write(tmp_path, "ep.txt", "N=2\ntrials=2\n")
    assert main(["endpoint", "--config", conf, "--out", str(tmp_path), "--seed", "5"]) == 0
    rows = _rows(tmp_path / "endpoint.csv")
    assert [r[0] for r in rows[1:]] == ["5", "6"]


def test_malformed_config_no_output(tmp_path):
    conf = _write(tmp_path, "bad.json", '{"N": 4, "alpha": 2, "Ns": [4, 8, 16], "p": 4, "q": 2}')
    out = tmp_path / "never"
    assert main(["sweep", "--config", conf, "--out", str(out)]) == 2
    assert not out.exists()


def test_guard_trip_status(tmp_path):
    conf = _write(tmp_path, "h.json", '{"d":1, "N":2, "a":0.5, "dt":0.01, "T":1.0, "scheme":"picard", "coupling":50}')
    out = tmp_path / "never"
    assert main(["hartree", "--config", conf, "--out", str(out)]) == 3
    assert not out.exists()


def test_io_errors(tmp_path):
    assert main(["sweep", "--config", str(tmp_path / "missing.json")]) == 4
    conf = _write(tmp_path, "ds.json", '{"d":1, "Ns":[4,8,16]}')
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["dispersive", "--config", conf, "--out", str(blocker / "sub")]) == 4


def test_env_default_dir(tmp_path, monkeypatch):
    conf = _write(tmp_path, "ds.json", '{"d":1, "Ns":[4,8,16,32]}')
    monkeypatch.setenv("TORUS_ONS_OUT", str(tmp_path / "env"))
    assert main(["dispersive", "--config", conf]) == 0
    rows = _rows(tmp_path / "env" / "dispersive.csv")
    assert rows[-1][0] == "relative_spread" and float(rows[-1][1]) <= 0.15


@pytest.mark.parametrize("exp,text", [
    ("duality", '{"d":1, "N":2, "p":4, "q":2, "alpha":2, "trials":5}'),
    ("dyadic", '{"d":1, "N":2}'),
    ("hartree", '{"d":1, "N":2, "a":0.5, "dt":0.01, "T":0.1, "monitor_every":5}'),
])
def test_other_experiments(tmp_path, exp, text):
    conf = _write(tmp_path, "c.json", text)
    assert main([exp, "--config", conf, "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / f"{exp}.csv")
    side = json.loads((tmp_path / f"{exp}.json").read_text())
    assert len(rows) >= 2 and side["experiment"] == exp
    if exp == "hartree":
        assert side["report"]["max_gram_deviation"] < 1e-10
        assert len(rows) == 4


def test_module_entry_point(tmp_path):
    conf = _write(tmp_path, "ds.json", '{"d":1, "Ns":[4,8,16]}')
    proc = subprocess.run([sys.executable, "-m", "torus_ons", "dispersive", "--config", conf, "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    bad = subprocess.run([sys.executable, "-m", "torus_ons", "nosuch", "--config", conf], capture_output=True)
    assert bad.returncode == 2
