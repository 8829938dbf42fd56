import csv
import json

import numpy as np
import pytest

from cicontrol.experiments import (
    ConfigError,
    RunConfig,
    RunFailure,
    SweepSpec,
    export_surfaces,
    load_config,
    load_defaults,
    load_expectations,
    parse_assignment,
    replay_manifest,
    run_single,
    sweep,
    sweep_eta,
    sweep_gap,
    sweep_lambda_eta,
)


def test_defaults_build_and_round_trip():
    flat = load_defaults()
    assert flat["format_version"] == 1
    cfg = RunConfig.from_flat()
    assert cfg.to_flat() == dict(sorted(flat.items()))
    assert RunConfig.from_flat(cfg.to_flat()) == cfg
    assert cfg.pulse.omega0 == cfg.model.vertical_gap
    assert cfg.heom.frame_interval == pytest.approx(2.0)
    assert cfg.analysis.q_grid[0] == -4.5 and cfg.analysis.q_grid.size == 181


def test_expectations_are_packaged():
    exp = load_expectations()
    assert exp["chirp"]["yield"] == [0.436, 0.406, 0.396]


@pytest.mark.parametrize(
    "change",
    [
        {"no.such.key": 1.0},
        {"heom.t_end": 1000.0},
        {"analysis.q_min": -3.5},
        {"pulse.t0": "long"},
        {"model.n_t": 2.5},
        {"heom.rotating_frame": 1},
        {"heom.terminator": "magic"},
        {"pulse.t0": -1.0},
        {"format_version": 2},
        {"analysis.window_start": 2100.0},
    ],
)
def test_invalid_configs_rejected(change):
    with pytest.raises(ConfigError):
        RunConfig.from_flat(change)


def test_integer_and_float_overrides_are_the_same_run():
    assert RunConfig.from_flat({"heom.t_end": 2400}).to_flat() == RunConfig.from_flat({"heom.t_end": 2400.0}).to_flat()


def test_linked_lambda_and_gap_aliases():
    a = RunConfig.from_flat({"bath.lambda": 8.0})
    b = RunConfig.from_flat({"bath.lambda_t+lambda_c": 8.0})
    assert a.bath.lambda_t == a.bath.lambda_c == 8.0
    assert a == b
    g = RunConfig.from_flat({"model.gap": 600.0})
    assert g.model.eps2 - g.model.eps1 == 600.0
    # "auto" carrier follows the new vertical gap
    assert g.pulse.omega0 == g.model.vertical_gap == 15600.0
    fixed = RunConfig.from_flat({"model.gap": 600.0, "pulse.omega0": 16000.0})
    assert fixed.pulse.omega0 == 16000.0


def test_parse_assignment():
    assert parse_assignment("pulse.eta=-10") == ("pulse.eta", -10)
    assert parse_assignment("heom.terminator = markovian") == ("heom.terminator", "markovian")
    assert parse_assignment("heom.rotating_frame=false") == ("heom.rotating_frame", False)
    with pytest.raises(ConfigError):
        parse_assignment("pulse.eta")


def test_load_config_layers(tmp_path):
    f = tmp_path / "c.toml"
    f.write_text('pulse.eta = -5.0\n[bath]\nlambda_t = 8.0\n')
    cfg = load_config(f, ["pulse.eta=3"])
    assert cfg.pulse.eta == 3.0 and cfg.bath.lambda_t == 8.0 and cfg.bath.lambda_c == 5.0
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("pulse.eta = = 1\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_time_axis_starts_on_frame_grid():
    for eta in (-10.0, 0.0, 5.0):
        cfg = RunConfig.from_flat({"pulse.eta": eta})
        lo, hi = cfg.drive_support
        assert cfg.t_start <= lo
        assert cfg.t_start / cfg.heom.frame_interval == pytest.approx(round(cfg.t_start / cfg.heom.frame_interval))
        assert hi == -lo


def _read(path):
    return path.read_bytes()


def test_run_single_outputs(tmp_path, tiny):
    cfg = RunConfig.from_flat(tiny)
    res = run_single(cfg, tmp_path / "a")
    m = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert m == res.manifest
    assert m["status"] == "ok"
    assert 0.0 <= m["yield"]["yield"] <= 1.0
    assert m["derived"]["q_ci"] == pytest.approx(-1.0, abs=1e-3)
    assert m["derived"]["n_ados"] == 3
    assert m["tool"]["version"] == "0.1.0"
    assert "wall_time_s" in json.loads((tmp_path / "a" / "timing.json").read_text())
    with open(tmp_path / "a" / "frames.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["t_fs", "q", "p_e1", "p_e2", "p_total"]
    assert len(rows) == m["n_frames"] * 181
    for r in rows[::997]:
        assert float(r["p_total"]) == pytest.approx(float(r["p_e1"]) + float(r["p_e2"]), rel=1e-15, abs=1e-300)
    times = sorted({float(r["t_fs"]) for r in rows})
    assert np.allclose(np.diff(times), cfg.heom.frame_interval)
    with open(tmp_path / "a" / "pulse.csv") as fh:
        pulse = list(csv.reader(fh))
    assert pulse[0] == ["t_fs", "field"]
    assert float(pulse[2][0]) - float(pulse[1][0]) == pytest.approx(0.1)


def test_run_is_deterministic_and_replayable(tmp_path, tiny):
    cfg = RunConfig.from_flat(tiny)
    run_single(cfg, tmp_path / "a")
    run_single(cfg, tmp_path / "b")
    for name in ("manifest.json", "frames.csv", "pulse.csv"):
        assert _read(tmp_path / "a" / name) == _read(tmp_path / "b" / name)
    replay_manifest(tmp_path / "a" / "manifest.json", tmp_path / "c")
    assert _read(tmp_path / "a" / "manifest.json") == _read(tmp_path / "c" / "manifest.json")


def test_zero_field_has_no_yield(tmp_path, tiny):
    cfg = RunConfig.from_flat({**tiny, "pulse.e0": 0.0})
    with pytest.raises(RunFailure) as err:
        run_single(cfg, tmp_path)
    m = err.value.manifest
    assert m["status"] == "error" and m["error"]["kind"] == "analysis"
    assert m["yield"] is None
    assert json.loads((tmp_path / "manifest.json").read_text()) == m
    assert (tmp_path / "frames.csv").exists()


def test_propagation_abort_keeps_partial_output(tmp_path, tiny):
    cfg = RunConfig.from_flat({**tiny, "heom.trace_tol": 1e-18})
    with pytest.raises(RunFailure) as err:
        run_single(cfg, tmp_path)
    m = err.value.manifest
    assert m["error"]["kind"] == "propagation"
    assert m["error"]["time_fs"] is not None
    assert m["n_frames"] >= 1
    lines = (tmp_path / "frames.csv").read_text().splitlines()
    assert len(lines) == 1 + 181 * m["n_frames"]


def test_sweep_spec_validation():
    with pytest.raises(ConfigError):
        SweepSpec("pulse.eta", ())
    with pytest.raises(ConfigError):
        SweepSpec("pulse.nothing", (1.0,))
    with pytest.raises(ConfigError):
        SweepSpec("heom.terminator", (1.0,))
    with pytest.raises(ConfigError):
        SweepSpec("pulse.eta", (1.0,), "bath.lambda", ())
    assert SweepSpec.linspace(-10, 10, 5) == (-10.0, -5.0, 0.0, 5.0, 10.0)
    s = SweepSpec("bath.lambda", (5, 20), "pulse.eta", (0, 1, 2))
    assert len(s.cells()) == 6 and s.cells()[1] == {"bath.lambda": 5.0, "pulse.eta": 1.0}


def test_sweep_equals_independent_runs(tmp_path, tiny):
    base = RunConfig.from_flat(tiny)
    res = sweep(base, SweepSpec("pulse.eta", (-3.0, 2.0)), tmp_path / "s")
    for i, eta in enumerate((-3.0, 2.0)):
        single = run_single(base.with_values({"pulse.eta": eta}), tmp_path / f"r{i}")
        assert res.rows[i]["yield"] == single.manifest["yield"]["yield"]
        assert _read(tmp_path / "s" / f"cell_{i:04d}" / "manifest.json") == _read(tmp_path / f"r{i}" / "manifest.json")
    with open(tmp_path / "s" / "sweep.csv") as fh:
        table = list(csv.DictReader(fh))
    assert [float(r["pulse.eta"]) for r in table] == [-3.0, 2.0]
    assert set(table[0]) == {"pulse.eta", "yield", "pop_c", "pop_d", "status"}


def test_single_point_sweep_is_run_single(tmp_path, tiny):
    base = RunConfig.from_flat(tiny)
    (eta, y), = sweep_eta(base, [0.0])
    assert y == run_single(base).manifest["yield"]["yield"]


def test_sweep_independent_of_worker_count(tmp_path, tiny):
    base = RunConfig.from_flat(tiny)
    spec = SweepSpec("bath.lambda", (2.0, 6.0), "pulse.eta", (-2.0, 0.0))
    sweep(base, spec, tmp_path / "w1", workers=1)
    sweep(base, spec, tmp_path / "w2", workers=2)
    assert _read(tmp_path / "w1" / "sweep.csv") == _read(tmp_path / "w2" / "sweep.csv")
    for i in range(4):
        for name in ("manifest.json", "frames.csv"):
            assert _read(tmp_path / "w1" / f"cell_{i:04d}" / name) == _read(tmp_path / "w2" / f"cell_{i:04d}" / name)


def test_sweep_records_failures_and_continues(tmp_path, tiny):
    base = RunConfig.from_flat(tiny)
    res = sweep(base, SweepSpec("pulse.e0", (0.0, 90.0)), tmp_path)
    assert [r["status"] for r in res.rows] == ["error", "ok"]
    assert np.isnan(res.rows[0]["yield"]) and np.isfinite(res.rows[1]["yield"])
    assert (tmp_path / "cell_0000" / "manifest.json").exists()
    assert "error" in (tmp_path / "sweep.csv").read_text()


def test_gap_and_lambda_campaign_shapes(tiny):
    base = RunConfig.from_flat(tiny)
    summary = sweep_gap(base, [600.0, 1400.0], [-1.0, 1.0])
    assert set(summary) == {600.0, 1400.0}
    s = summary[600.0]
    assert s["min"] <= s["mean"] <= s["max"] and len(s["yields"]) == 2
    lam, eta, y = sweep_lambda_eta(base, [2.0], [-1.0, 0.0, 1.0])
    assert y.shape == (1, 3) and list(eta) == [-1.0, 0.0, 1.0]


def test_export_surfaces(tmp_path):
    export_surfaces(RunConfig.from_flat(), tmp_path / "s.csv")
    with open(tmp_path / "s.csv") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 182
    assert float(rows[1][0]) == -4.5
