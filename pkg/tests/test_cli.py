import csv
import json
import subprocess
import sys

import pytest

from cicontrol.cli import main


def _sets(cfg):
    out = []
    for k, v in cfg.items():
        out += ["--set", f"{k}={v}"]
    return out


def test_run_command(tmp_path, tiny, capsys):
    assert main(["run", "--out", str(tmp_path / "r"), *_sets(tiny)]) == 0
    assert "yield" in capsys.readouterr().out
    for name in ("manifest.json", "frames.csv", "pulse.csv"):
        assert (tmp_path / "r" / name).exists()


def test_run_with_config_file(tmp_path, tiny):
    f = tmp_path / "c.toml"
    f.write_text("\n".join(f"{k} = {v}" for k, v in tiny.items()) + "\npulse.eta = -2.0\n")
    assert main(["run", "--config", str(f), "--out", str(tmp_path / "r")]) == 0
    m = json.loads((tmp_path / "r" / "manifest.json").read_text())
    assert m["config"]["pulse.eta"] == -2.0


def test_numerical_abort_exit_code(tmp_path, tiny):
    assert main(["run", "--out", str(tmp_path), *_sets({**tiny, "pulse.e0": 0.0})]) == 2


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--out", "x", "--set", "heom.t_end=10"],
        ["run", "--out", "x", "--set", "bogus.key=1"],
        ["run", "--out", "x", "--config", "/nonexistent/c.toml"],
        ["sweep", "--out", "x", "--param", "pulse.eta", "--from", "0", "--to", "1"],
        ["sweep", "--out", "x", "--param", "pulse.nothing", "--values", "1,2"],
        ["sweep", "--out", "x", "--param", "pulse.eta", "--values", "1", "--steps", "3"],
        ["sweep2d", "--out", "x", "--param-a", "bath.lambda", "--values", "5", "--param-b", "pulse.eta"],
    ],
)
def test_config_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert main(argv) == 1
    assert not (tmp_path / "x").exists()


def test_argparse_errors_exit_1():
    with pytest.raises(SystemExit) as err:
        main(["run"])
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        main(["sweep", "--out", "x", "--param", "pulse.eta", "--values", "a,b"])
    assert err.value.code == 1


def test_sweep_and_sweep2d(tmp_path, tiny):
    assert main(["sweep", "--out", str(tmp_path / "s"), "--param", "pulse.eta", "--from", "-2", "--to", "2", "--steps", "2", "--workers", "1", *_sets(tiny)]) == 0
    with open(tmp_path / "s" / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["pulse.eta"] for r in rows] == ["-2.0", "2.0"]
    argv = ["sweep2d", "--out", str(tmp_path / "d"), "--param-a", "bath.lambda", "--values", "2,4", "--param-b", "pulse.eta", "--values-b", "0", "--workers", "2"]
    assert main(argv + _sets(tiny)) == 0
    with open(tmp_path / "d" / "sweep.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [(r["bath.lambda"], r["pulse.eta"]) for r in rows] == [("2.0", "0.0"), ("4.0", "0.0")]


def test_sweep_failure_exit_2(tmp_path, tiny):
    argv = ["sweep", "--out", str(tmp_path), "--param", "pulse.e0", "--values", "0", "--workers", "1"]
    assert main(argv + _sets(tiny)) == 2


def test_surfaces_and_pulse(tmp_path):
    assert main(["surfaces", "--out", str(tmp_path / "surf.csv")]) == 0
    assert (tmp_path / "surf.csv").read_text().startswith("q,")
    assert main(["pulse", "--out", str(tmp_path / "pulse.csv"), "--set", "pulse.eta=-10"]) == 0
    with open(tmp_path / "pulse.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["t_fs", "field"]
    # drive support is +-3 effective durations, T(-10) = 150.75 fs
    assert float(rows[1][0]) == pytest.approx(-3 * 15 * 101**0.5)
    with open(tmp_path / "pulse_spectrum.csv") as fh:
        spec = list(csv.reader(fh))
    assert spec[0] == ["omega_cm", "magnitude"]
    mags = [float(r[1]) for r in spec[1:]]
    assert mags.index(max(mags)) == len(mags) // 2


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "cicontrol", "surfaces", "--out", str(tmp_path / "s.csv")], capture_output=True, text=True)
    assert out.returncode == 0, out.stderr
    bad = subprocess.run([sys.executable, "-m", "cicontrol", "run", "--out", "x", "--set", "nope=1"], capture_output=True, text=True)
    assert bad.returncode == 1
    assert "configuration error" in bad.stderr
