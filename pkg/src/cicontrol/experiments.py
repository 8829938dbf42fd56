"""Run configuration, single runs, parameter sweeps and their on-disk layout.

A configuration is a flat mapping of dotted keys (``pulse.eta``,
``bath.lambda_t`` ...) layered over the packaged ``defaults.toml``. Each run
writes ``manifest.json``, ``frames.csv`` and ``pulse.csv`` into its own
directory; sweeps put one such directory per cell under the sweep directory
and add ``sweep.csv``. Wall-clock timing goes to ``timing.json`` so that the
manifest itself is reproducible byte for byte.
"""

from __future__ import annotations

import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import tomli

from . import __version__
from .heom import (
    BathParams,
    DrivenHamiltonian,
    HierarchyState,
    PropagationError,
    build_hierarchy,
    counterterm,
    propagate,
)
from .model import (
    ModelParams,
    adiabatic_surfaces,
    build_basis,
    build_hamiltonian,
    ground_state,
    locate_ci,
    position_operator,
    transition_operator,
    write_surfaces_csv,
)
from .observables import Projector, expectation_qt, find_barrier, oscillation_period, quantum_yield, yield_sensitivity
from .pulse import PulseParams, effective_duration, field as pulse_field, instantaneous_frequency, rwa_coefficient, spectrum
from .units import CM_TO_RAD_FS

log = logging.getLogger(__name__)

# keys that stand for several linked configuration entries
ALIASES = {
    "bath.lambda": ("bath.lambda_t", "bath.lambda_c"),
    "bath.lambda_t+lambda_c": ("bath.lambda_t", "bath.lambda_c"),
}
GAP_KEY = "model.gap"


class ConfigError(ValueError):
    """Invalid configuration or sweep specification (CLI exit code 1)."""


class RunFailure(RuntimeError):
    """A run aborted numerically or produced no yield (CLI exit code 2).

    ``manifest`` holds the structured error record; partial outputs have
    already been written when the run had an output directory.
    """

    def __init__(self, message: str, manifest: dict):
        super().__init__(message)
        self.manifest = manifest


def _read_toml(text: str, origin: str) -> dict:
    try:
        return tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{origin}: {exc}") from None


def flatten(tree: dict, prefix: str = "") -> dict:
    out = {}
    for key, value in tree.items():
        path = f"{prefix}{key}"
        if isinstance(value, dict):
            out.update(flatten(value, path + "."))
        else:
            out[path] = value
    return out


def load_defaults() -> dict:
    text = resources.files("cicontrol").joinpath("defaults.toml").read_text()
    return flatten(_read_toml(text, "defaults.toml"))


def load_expectations() -> dict:
    """Reference target bands (soft targets, not assertions)."""
    text = resources.files("cicontrol").joinpath("expectations.toml").read_text()
    return _read_toml(text, "expectations.toml")


def parse_assignment(text: str) -> tuple[str, object]:
    """``key=value`` with the value parsed as a TOML literal (bare words become strings)."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = (s.strip() for s in text.split("=", 1))
    try:
        value = tomli.loads(f"v = {raw}")["v"]
    except tomli.TOMLDecodeError:
        value = raw
    return key, value


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _auto_or(value, cast):
    return None if value == "auto" else cast(value)


def _assign(flat: dict, key: str, value) -> None:
    if key not in flat:
        raise ConfigError(f"unknown configuration key {key!r}")
    if isinstance(flat[key], float) and _is_number(value):
        # keep the recorded configuration canonical: 400 and 400.0 are the same run
        value = float(value)
    flat[key] = value


@dataclass(frozen=True)
class HeomSettings:
    depth: int
    terminator: str
    dt: float
    t_end: float
    frame_stride: int
    rotating_frame: bool
    decouple_sectors: bool
    trace_tol: float

    @property
    def frame_interval(self) -> float:
        return self.dt * self.frame_stride


@dataclass(frozen=True)
class AnalysisSettings:
    q_min: float
    q_max: float
    q_points: int
    window_start: float
    window_end: float
    barrier: float | None  # None: locate the barrier on the lower surface
    period_start: float
    period_end: float

    @property
    def q_grid(self) -> np.ndarray:
        return np.linspace(self.q_min, self.q_max, self.q_points)


@dataclass(frozen=True)
class RunConfig:
    """Fully typed configuration; ``values`` keeps the flat form it was built from."""

    model: ModelParams
    pulse: PulseParams
    bath: BathParams
    heom: HeomSettings
    analysis: AnalysisSettings
    drive_cutoff: float
    rwa: bool
    counterterm: bool
    write_frames: bool
    values: dict = field(repr=False, compare=False)

    @classmethod
    def from_flat(cls, overrides: dict | None = None) -> "RunConfig":
        flat = load_defaults()
        for key, value in (overrides or {}).items():
            if key == GAP_KEY:
                eps1 = (overrides or {}).get("model.eps1", flat["model.eps1"])
                if not (_is_number(eps1) and _is_number(value)):
                    raise ConfigError(f"{GAP_KEY} must be a number, got {value!r}")
                _assign(flat, "model.eps2", float(eps1) + float(value))
                continue
            for k in ALIASES.get(key, (key,)):
                _assign(flat, k, value)
        try:
            return cls._build(flat)
        except ConfigError:
            raise
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def _build(cls, v: dict) -> "RunConfig":
        if v.get("format_version") != 1:
            raise ConfigError(f"unsupported format_version {v.get('format_version')!r}")

        def num(key):
            x = v[key]
            if not _is_number(x):
                raise ConfigError(f"{key} must be a number, got {x!r}")
            return float(x)

        def integer(key):
            x = v[key]
            if not _is_number(x) or float(x) != int(x):
                raise ConfigError(f"{key} must be an integer, got {x!r}")
            return int(x)

        def flag(key):
            x = v[key]
            if not isinstance(x, bool):
                raise ConfigError(f"{key} must be true or false, got {x!r}")
            return x

        model = ModelParams(
            omega_t=num("model.omega_t"),
            omega_c=num("model.omega_c"),
            delta1=num("model.delta1"),
            delta2=num("model.delta2"),
            eps1=num("model.eps1"),
            eps2=num("model.eps2"),
            v0=num("model.v0"),
            lambda_peierls=num("model.lambda_peierls"),
            dipole=num("model.dipole"),
            n_t=integer("model.n_t"),
            n_c=integer("model.n_c"),
        )
        omega0 = v["pulse.omega0"]
        if omega0 != "auto" and not _is_number(omega0):
            raise ConfigError(f"pulse.omega0 must be a number or 'auto', got {omega0!r}")
        pulse = PulseParams(
            e0=num("pulse.e0"),
            t0=num("pulse.t0"),
            omega0=model.vertical_gap if omega0 == "auto" else float(omega0),
            eta=num("pulse.eta"),
            t_center=num("pulse.t_center"),
        )
        ltc = v["bath.low_temp_correction"]
        if ltc != "auto" and not isinstance(ltc, bool):
            raise ConfigError(f"bath.low_temp_correction must be true, false or 'auto', got {ltc!r}")
        bath = BathParams(
            lambda_t=num("bath.lambda_t"),
            lambda_c=num("bath.lambda_c"),
            gamma=num("bath.gamma"),
            temperature=num("bath.temperature"),
            n_matsubara=integer("bath.n_matsubara"),
            low_temp_correction=None if ltc == "auto" else ltc,
        )
        heom = HeomSettings(
            depth=integer("heom.depth"),
            terminator=str(v["heom.terminator"]),
            dt=num("heom.dt"),
            t_end=num("heom.t_end"),
            frame_stride=integer("heom.frame_stride"),
            rotating_frame=flag("heom.rotating_frame"),
            decouple_sectors=flag("heom.decouple_sectors"),
            trace_tol=num("heom.trace_tol"),
        )
        barrier = v["analysis.barrier"]
        if barrier != "auto" and not _is_number(barrier):
            raise ConfigError(f"analysis.barrier must be a number or 'auto', got {barrier!r}")
        analysis = AnalysisSettings(
            q_min=num("analysis.q_min"),
            q_max=num("analysis.q_max"),
            q_points=integer("analysis.q_points"),
            window_start=num("analysis.window_start"),
            window_end=num("analysis.window_end"),
            barrier=None if barrier == "auto" else float(barrier),
            period_start=num("analysis.period_start"),
            period_end=num("analysis.period_end"),
        )
        cfg = cls(
            model=model,
            pulse=pulse,
            bath=bath,
            heom=heom,
            analysis=analysis,
            drive_cutoff=num("pulse.drive_cutoff"),
            rwa=flag("pulse.rwa"),
            counterterm=flag("bath.counterterm"),
            write_frames=flag("output.write_frames"),
            values=dict(sorted(v.items())),
        )
        cfg._check()
        return cfg

    def _check(self):
        h, a = self.heom, self.analysis
        if h.dt <= 0 or h.frame_stride < 1 or h.depth < 0:
            raise ConfigError("heom.dt must be positive, heom.frame_stride >= 1 and heom.depth >= 0")
        if h.terminator not in ("truncate", "markovian"):
            raise ConfigError(f"heom.terminator must be 'truncate' or 'markovian', got {h.terminator!r}")
        if not a.window_start < a.window_end:
            raise ConfigError("analysis.window_start must precede analysis.window_end")
        if h.t_end < a.window_end:
            raise ConfigError(f"heom.t_end = {h.t_end} fs ends before the yield window ({a.window_end} fs)")
        if h.t_end <= self.pulse.t_center:
            raise ConfigError("heom.t_end must lie after the pulse centre")
        if a.q_min > -4.0 or a.q_max < 4.0 or a.q_points < 2:
            raise ConfigError("the analysis grid must span at least [-4, 4]")
        if not self.drive_cutoff > 0:
            raise ConfigError("pulse.drive_cutoff must be positive")

    def to_flat(self) -> dict:
        return dict(self.values)

    def with_values(self, changes: dict) -> "RunConfig":
        flat = self.to_flat()
        flat.update(changes)
        return RunConfig.from_flat(flat)

    @property
    def t_start(self) -> float:
        """Drive switch-on time rounded down to the frame grid."""
        step = self.heom.frame_interval
        on = self.pulse.t_center - self.drive_cutoff * effective_duration(self.pulse)
        return math.floor(on / step + 1e-9) * step

    @property
    def drive_support(self) -> tuple[float, float]:
        half = self.drive_cutoff * effective_duration(self.pulse)
        return (self.pulse.t_center - half, self.pulse.t_center + half)


def load_config(path=None, overrides: Sequence[str] | dict | None = None) -> RunConfig:
    """Defaults, then the file at ``path``, then ``key=value`` overrides."""
    flat = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read configuration {path}: {exc.strerror}") from None
        flat.update(flatten(_read_toml(text, str(path))))
    if isinstance(overrides, dict):
        flat.update(overrides)
    elif overrides:
        flat.update(dict(parse_assignment(s) for s in overrides))
    return RunConfig.from_flat(flat)


# ---------------------------------------------------------------------------
# single runs


@dataclass
class RunResult:
    manifest: dict
    frames: list
    wall_time: float


def _max_drive_rate(cfg: RunConfig) -> float:
    """Largest rotation rate (rad/fs) of the drive coefficient inside its support.

    The envelope varies on the scale of the effective duration and is much
    slower than the residual carrier and chirp, so only the phase counts.
    """
    p = cfg.pulse
    lo, hi = cfg.drive_support
    sweep = float(np.max(np.abs(instantaneous_frequency(p, np.array([lo, hi])) - p.omega0_rad_fs)))
    frame = cfg.pulse.omega0_rad_fs if cfg.heom.rotating_frame else 0.0
    if cfg.rwa:
        return abs(p.omega0_rad_fs - frame) + sweep
    return p.omega0_rad_fs + frame + sweep


def build_problem(cfg: RunConfig):
    """Basis, Hamiltonian provider, bath couplings and hierarchy for a run."""
    m = cfg.model
    basis = build_basis(m)
    frame = cfg.pulse.omega0 if cfg.heom.rotating_frame else None
    shift = {"e1": frame, "e2": frame} if frame is not None else None
    h0 = build_hamiltonian(m, basis, energy_shift=shift).matrix
    couplings = {"tuning": position_operator("tuning", basis), "coupling": position_operator("coupling", basis)}
    if cfg.counterterm:
        h0 = h0 + counterterm(cfg.bath, couplings)
    p = cfg.pulse

    if cfg.rwa:
        def coefficient(t):
            return rwa_coefficient(p, t, m.dipole, frame_frequency=frame)
    else:
        phase = 0.0 if frame is None else frame * CM_TO_RAD_FS

        def coefficient(t):
            return -m.dipole * float(pulse_field(p, t)) * np.exp(1j * phase * t)

    sectors = None
    if cfg.heom.decouple_sectors:
        sectors = [np.arange(basis.block), np.arange(basis.block, basis.dim)]
    h_of_t = DrivenHamiltonian(
        h0,
        transition_operator(basis),
        coefficient,
        support=cfg.drive_support,
        sectors=sectors,
        max_drive_rate=_max_drive_rate(cfg),
    )
    hierarchy = build_hierarchy(cfg.bath, cfg.heom.depth, terminator=cfg.heom.terminator)
    return basis, h_of_t, couplings, hierarchy


def _derived(cfg: RunConfig, hierarchy, basis) -> dict:
    m = cfg.model
    out = {
        "kappa1": m.kappa1,
        "kappa2": m.kappa2,
        "gap": m.gap,
        "q_ci": locate_ci(m),
        "omega0": cfg.pulse.omega0,
        "effective_duration": effective_duration(cfg.pulse),
        "t_start": cfg.t_start,
        "drive_support": list(cfg.drive_support),
        "basis_dim": basis.dim,
        "n_ados": hierarchy.n_ados,
        "n_exponential_modes": len(hierarchy.modes),
        "residual_correction": dict(sorted(hierarchy.corrections.items())),
    }
    try:
        out["q_barrier"] = find_barrier(m) if cfg.analysis.barrier is None else cfg.analysis.barrier
    except ValueError as exc:
        out["q_barrier"] = None
        out["barrier_error"] = str(exc)
    return out


def _frame_rows(frames) -> list[str]:
    lines = ["t_fs,q,p_e1,p_e2,p_total"]
    for f in frames:
        e1 = f.density["e1"].tolist()
        e2 = f.density["e2"].tolist()
        tot = (f.density["e1"] + f.density["e2"]).tolist()
        t = repr(float(f.t))
        for q, a, b, c in zip(f.q.tolist(), e1, e2, tot):
            lines.append(f"{t},{q!r},{a!r},{b!r},{c!r}")
    return lines


def _write_text(path: Path, lines: list[str]):
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def write_pulse_trace(cfg: RunConfig, path, step: float = 0.1, span: float | None = None) -> None:
    """``t_fs,field`` over the drive support (or ``t_center +- span T``)."""
    if span is None:
        lo, hi = cfg.drive_support
    else:
        half = span * effective_duration(cfg.pulse)
        lo, hi = cfg.pulse.t_center - half, cfg.pulse.t_center + half
    n = int(math.floor((hi - lo) / step + 1e-9))
    t = lo + step * np.arange(n + 1)
    e = pulse_field(cfg.pulse, t)
    _write_text(Path(path), ["t_fs,field"] + [f"{a!r},{b!r}" for a, b in zip(t.tolist(), e.tolist())])


def write_pulse_spectrum(cfg: RunConfig, path, width: float = 4.0, points: int = 201) -> None:
    """``omega_cm,magnitude`` over ``omega0 +- width / T0``."""
    p = cfg.pulse
    half = width / p.t0 / CM_TO_RAD_FS
    w_cm = np.linspace(p.omega0 - half, p.omega0 + half, points)
    mag = spectrum(p, w_cm * CM_TO_RAD_FS)
    _write_text(Path(path), ["omega_cm,magnitude"] + [f"{a!r},{b!r}" for a, b in zip(w_cm.tolist(), mag.tolist())])


def _write_json(path: Path, data: dict):
    path.write_text(json.dumps(data, indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="ascii")


def _clean(x):
    """Replace non-finite floats by None so JSON stays strict."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def _period(cfg: RunConfig, frames) -> dict:
    a = cfg.analysis
    sel = [f for f in frames if a.period_start - 1e-9 <= f.t <= a.period_end + 1e-9]
    try:
        series = expectation_qt(sel)
        return {"period_fs": oscillation_period(series.times, series.values), "window": [a.period_start, a.period_end]}
    except ValueError as exc:
        return {"period_fs": None, "window": [a.period_start, a.period_end], "error": str(exc)}


def run_single(cfg: RunConfig, out_dir=None, progress: Callable | None = None) -> RunResult:
    """Propagate one configuration, project every frame and compute the yield.

    With ``out_dir`` the manifest, frames and pulse trace are written there;
    on failure the partial frames and an error manifest are written before
    :class:`RunFailure` is raised.
    """
    started = time.perf_counter()
    basis, h_of_t, couplings, hierarchy = build_problem(cfg)
    projector = Projector(basis, cfg.analysis.q_grid)
    manifest = {
        "tool": {"name": "cicontrol", "version": __version__},
        "config": cfg.to_flat(),
        "derived": _derived(cfg, hierarchy, basis),
        "status": "ok",
    }
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_pulse_trace(cfg, out / "pulse.csv")

    def observe(t, rho):
        import warnings

        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return projector(rho, t)

    frames = []
    error = None
    try:
        traj = propagate(
            HierarchyState.from_density(hierarchy, ground_state(cfg.model, basis)),
            h_of_t,
            couplings,
            cfg.heom.dt,
            cfg.heom.t_end,
            frame_stride=cfg.heom.frame_stride,
            t_start=cfg.t_start,
            trace_tol=cfg.heom.trace_tol,
            decouple_sectors=cfg.heom.decouple_sectors,
            progress=progress,
            observer=observe,
        )
        frames = traj.rhos
        manifest["derived"]["n_steps"] = traj.steps
    except PropagationError as exc:
        frames = [f for _, f in exc.frames]
        error = {"kind": "propagation", "message": str(exc), "time_fs": exc.time}
    except ValueError as exc:
        error = {"kind": "precondition", "message": str(exc)}

    if frames:
        last = frames[-1]
        manifest["final_populations"] = {k: last.traces[k] for k in ("g", "e1", "e2")}
        manifest["truncated_frames"] = sum(1 for f in frames if f.truncated)
        manifest["n_frames"] = len(frames)
    if error is None:
        a = cfg.analysis
        qb = manifest["derived"]["q_barrier"]
        try:
            if qb is None:
                raise ValueError(manifest["derived"]["barrier_error"])
            result = quantum_yield(frames, (a.window_start, a.window_end), qb)
            manifest["yield"] = result.as_dict()
            manifest["yield"]["sensitivity"] = yield_sensitivity(frames, (a.window_start, a.window_end), qb)
        except ValueError as exc:
            error = {"kind": "analysis", "message": str(exc)}
        manifest["oscillation"] = _period(cfg, frames)
    if error is not None:
        manifest["status"] = "error"
        manifest["error"] = error
        manifest["yield"] = None
    manifest = _clean(manifest)
    wall = time.perf_counter() - started
    if out is not None:
        if cfg.write_frames or error is not None:
            _write_text(out / "frames.csv", _frame_rows(frames))
        _write_json(out / "manifest.json", manifest)
        _write_json(out / "timing.json", {"wall_time_s": wall})
    if error is not None:
        raise RunFailure(f"{error['kind']} failure: {error['message']}", manifest)
    return RunResult(manifest, frames, wall)


def replay_manifest(path, out_dir=None) -> RunResult:
    """Re-run the configuration embedded in a manifest."""
    data = json.loads(Path(path).read_text())
    return run_single(RunConfig.from_flat(data["config"]), out_dir)


def export_surfaces(cfg: RunConfig, path) -> None:
    """Adiabatic surfaces at Q_c = 0 on the analysis grid, CSV ``q,ground,lower,upper``."""
    write_surfaces_csv(adiabatic_surfaces(cfg.model, cfg.analysis.q_grid), path)


# ---------------------------------------------------------------------------
# sweeps


def _expand(path: str) -> tuple[str, ...]:
    return ALIASES.get(path, (path,))


@dataclass(frozen=True)
class SweepSpec:
    """One or two sweep axes; each axis is a configuration path and its values."""

    param: str
    values: tuple
    param_b: str | None = None
    values_b: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(x) for x in self.values))
        object.__setattr__(self, "values_b", tuple(float(x) for x in self.values_b))
        if not self.values:
            raise ConfigError("sweep axis has no values")
        if self.param_b is not None and not self.values_b:
            raise ConfigError("second sweep axis has no values")
        defaults = load_defaults()
        for p in filter(None, (self.param, self.param_b)):
            if p == GAP_KEY:
                continue
            for key in _expand(p):
                if key not in defaults:
                    raise ConfigError(f"sweep parameter {p!r} does not name a configuration entry")
                if not (_is_number(defaults[key]) or key == "pulse.omega0"):
                    raise ConfigError(f"sweep parameter {p!r} is not numeric")

    @staticmethod
    def linspace(start: float, stop: float, steps: int) -> tuple:
        if steps < 1:
            raise ConfigError("steps must be >= 1")
        return tuple(np.linspace(start, stop, steps).tolist())

    @property
    def axes(self) -> list[str]:
        return [self.param] + ([self.param_b] if self.param_b else [])

    def cells(self) -> list[dict]:
        if self.param_b is None:
            return [{self.param: a} for a in self.values]
        return [{self.param: a, self.param_b: b} for a in self.values for b in self.values_b]


def _cell_changes(cell: dict, base: dict) -> dict:
    changes = {}
    for path, value in cell.items():
        if path == GAP_KEY:
            changes["model.eps2"] = float(base["model.eps1"]) + value
            continue
        for key in _expand(path):
            changes[key] = int(value) if isinstance(base[key], int) and not isinstance(base[key], bool) else value
    return changes


def _run_cell(task) -> dict:
    index, flat, out_dir = task
    row = {"index": index, "status": "ok", "yield": math.nan, "pop_c": math.nan, "pop_d": math.nan, "error": None}
    try:
        cfg = RunConfig.from_flat(flat)
        res = run_single(cfg, out_dir)
        y = res.manifest["yield"]
        row.update({"yield": y["yield"], "pop_c": y["pop_c"], "pop_d": y["pop_d"]})
    except RunFailure as exc:
        row.update({"status": "error", "error": str(exc)})
    except ConfigError as exc:
        row.update({"status": "config_error", "error": str(exc)})
    return row


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list

    @property
    def yields(self) -> np.ndarray:
        y = np.array([r["yield"] for r in self.rows], dtype=float)
        if self.spec.param_b is None:
            return y
        return y.reshape(len(self.spec.values), len(self.spec.values_b))

    @property
    def failed(self) -> list:
        return [r for r in self.rows if r["status"] != "ok"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def write_sweep_table(result: SweepResult, path) -> None:
    cols = result.spec.axes + ["yield", "pop_c", "pop_d", "status"]
    lines = [",".join(cols)]
    for r in result.rows:
        lines.append(",".join(_fmt(r[c]) for c in cols))
    _write_text(Path(path), lines)


def sweep(cfg: RunConfig, spec: SweepSpec, out_dir=None, workers: int = 1) -> SweepResult:
    """Run every cell of ``spec`` independently; failures are recorded, not raised.

    Cells run in up to ``workers`` processes. Results are ordered by cell
    index, and each cell is a deterministic function of its configuration,
    so the output does not depend on the worker count.
    """
    base = cfg.to_flat()
    out = Path(out_dir) if out_dir is not None else None
    tasks = []
    cells = spec.cells()
    for i, cell in enumerate(cells):
        flat = dict(base)
        flat.update(_cell_changes(cell, base))
        cell_dir = str(out / f"cell_{i:04d}") if out is not None else None
        tasks.append((i, flat, cell_dir))
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_run_cell, tasks))
    else:
        rows = [_run_cell(t) for t in tasks]
    rows.sort(key=lambda r: r["index"])
    for row, cell in zip(rows, cells):
        row.update(cell)
        if row["status"] != "ok":
            log.warning("sweep cell %d %s failed: %s", row["index"], cell, row["error"])
    result = SweepResult(spec, rows)
    if out is not None:
        write_sweep_table(result, out / "sweep.csv")
    return result


def sweep_eta(cfg: RunConfig, etas: Sequence[float], out_dir=None, workers: int = 1) -> list[tuple[float, float]]:
    """Yield versus chirp, everything else shared."""
    res = sweep(cfg, SweepSpec("pulse.eta", tuple(etas)), out_dir, workers)
    return [(r["pulse.eta"], r["yield"]) for r in res.rows]


def sweep_gap(cfg: RunConfig, gaps: Sequence[float], etas: Sequence[float], out_dir=None, workers: int = 1) -> dict:
    """Inner chirp sweep for each gap ``eps2 - eps1`` (eps2 is shifted)."""
    res = sweep(cfg, SweepSpec(GAP_KEY, tuple(gaps), "pulse.eta", tuple(etas)), out_dir, workers)
    y = res.yields
    summary = {}
    for i, gap in enumerate(res.spec.values):
        row = y[i]
        ok = row[np.isfinite(row)]
        summary[gap] = {
            "etas": list(res.spec.values_b),
            "yields": row.tolist(),
            "min": float(ok.min()) if ok.size else math.nan,
            "max": float(ok.max()) if ok.size else math.nan,
            "mean": float(ok.mean()) if ok.size else math.nan,
        }
    return summary


def sweep_lambda_eta(cfg: RunConfig, lambdas: Sequence[float], etas: Sequence[float], out_dir=None, workers: int = 1):
    """Yield matrix over the linked reorganization energy (rows) and chirp (columns)."""
    res = sweep(cfg, SweepSpec("bath.lambda", tuple(lambdas), "pulse.eta", tuple(etas)), out_dir, workers)
    return np.array(res.spec.values), np.array(res.spec.values_b), res.yields


def default_workers() -> int:
    return max(1, (os.cpu_count() or 1))
