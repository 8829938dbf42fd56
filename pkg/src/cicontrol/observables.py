"""Wavepacket projections along Q_t, region populations and quantum yields.

The reduced density is projected onto tuning-mode position eigenstates
using normalised Hermite functions, with the coupling mode traced out:

    P_e(q) = sum_m sum_{n,n'} phi_n(q) rho[(e,n,m), (e,n',m)] phi_n'(q)

Region C is ``q < q_barrier`` and region D is ``q > q_barrier``; the yield is
``pop(D) / (pop(C) + pop(D))`` over the excited manifolds, averaged over a
time window.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ModelParams, VibronicBasis, adiabatic_surfaces

EXCITED = ("e1", "e2")


def hermite_functions(n: int, q) -> np.ndarray:
    """phi_0..phi_{n-1} on ``q``, shape (n, len(q)), by the stable recurrence."""
    q = np.asarray(q, dtype=float)
    out = np.zeros((n, q.size))
    out[0] = math.pi**-0.25 * np.exp(-(q**2) / 2.0)
    if n > 1:
        out[1] = math.sqrt(2.0) * q * out[0]
    for k in range(2, n):
        out[k] = math.sqrt(2.0 / k) * q * out[k - 1] - math.sqrt((k - 1) / k) * out[k - 2]
    return out


@dataclass(frozen=True)
class WavepacketFrame:
    t: float
    q: np.ndarray
    density: dict
    traces: dict = field(default_factory=dict)
    truncated: bool = False

    def total(self, manifolds: Sequence[str] = EXCITED) -> np.ndarray:
        return sum(self.density[m] for m in manifolds)


@dataclass(frozen=True)
class YieldResult:
    pop_c: float
    pop_d: float
    yield_: float
    window: tuple
    q_barrier: float

    def as_dict(self) -> dict:
        return {
            "pop_c": self.pop_c,
            "pop_d": self.pop_d,
            "yield": self.yield_,
            "window": list(self.window),
            "q_barrier": self.q_barrier,
        }


def default_grid(lo: float = -4.5, hi: float = 4.5, points: int = 181) -> np.ndarray:
    return np.linspace(lo, hi, points)


class Projector:
    """Reusable projection for a fixed basis and grid."""

    def __init__(self, basis: VibronicBasis, q_grid, manifolds: Sequence[str] = ("g", "e1", "e2"), edge_tol: float = 0.01):
        q = np.asarray(q_grid, dtype=float)
        if q.ndim != 1 or q.size < 2 or np.any(np.diff(q) <= 0):
            raise ValueError("q grid must be strictly increasing with at least two points")
        if q[0] > -4.0 or q[-1] < 4.0:
            raise ValueError(f"q grid [{q[0]}, {q[-1]}] must span at least [-4, 4]")
        self.basis = basis
        self.q = q
        self.manifolds = tuple(manifolds)
        self.phi = hermite_functions(basis.n_t, q)
        self.edge_tol = edge_tol

    def __call__(self, rho: np.ndarray, t: float = 0.0) -> WavepacketFrame:
        b = self.basis
        nt, nc = b.n_t, b.n_c
        density, traces = {}, {}
        truncated = False
        for lab in self.manifolds:
            s = b.slice_of(lab)
            block = rho[s, s].reshape(nt, nc, nt, nc)
            reduced = np.einsum("imjm->ij", block)
            p = np.einsum("iq,ij,jq->q", self.phi, reduced, self.phi).real
            density[lab] = p
            tr = float(np.trace(reduced).real)
            traces[lab] = tr
            if tr > 1e-14 and tr - np.trapezoid(p, self.q) >= self.edge_tol * tr:
                truncated = True
        if truncated:
            warnings.warn(f"q grid too narrow at t = {t}: more than {self.edge_tol:.0%} of the density lies outside", stacklevel=2)
        return WavepacketFrame(t, self.q, density, traces, truncated)


def project_qt(rho: np.ndarray, basis: VibronicBasis, q_grid, t: float = 0.0, manifolds=("g", "e1", "e2")) -> WavepacketFrame:
    return Projector(basis, q_grid, manifolds)(rho, t)


def _cumulative(q: np.ndarray, p: np.ndarray, x: float) -> float:
    # integral of the piecewise-linear interpolant of p from q[0] to x
    x = min(max(x, q[0]), q[-1])
    seg = np.concatenate(([0.0], np.cumsum(0.5 * (p[1:] + p[:-1]) * np.diff(q))))
    j = int(np.searchsorted(q, x, side="right")) - 1
    j = min(max(j, 0), q.size - 2)
    px = p[j] + (p[j + 1] - p[j]) * (x - q[j]) / (q[j + 1] - q[j])
    return seg[j] + 0.5 * (x - q[j]) * (p[j] + px)


def region_population(frame: WavepacketFrame, q_lo: float, q_hi: float, manifolds: Sequence[str] = EXCITED) -> float:
    """Integral of the summed densities over ``[q_lo, q_hi]`` (linear interpolation between nodes)."""
    if not manifolds:
        raise ValueError("empty manifold selection")
    if not q_lo < q_hi:
        raise ValueError("need q_lo < q_hi")
    p = frame.total(manifolds)
    return _cumulative(frame.q, p, q_hi) - _cumulative(frame.q, p, q_lo)


def _time_average(times: np.ndarray, values: np.ndarray) -> float:
    if times.size == 1:
        return float(values[0])
    return float(np.trapezoid(values, times) / (times[-1] - times[0]))


def quantum_yield(frames: Sequence[WavepacketFrame], window, q_barrier: float, manifolds: Sequence[str] = EXCITED) -> YieldResult:
    """Time-averaged ``pop(D) / (pop(C) + pop(D))`` over frames inside ``window``."""
    t0, t1 = window
    tol = 1e-9 * max(1.0, abs(t1))
    sel = [f for f in frames if t0 - tol <= f.t <= t1 + tol]
    if not sel:
        raise ValueError(f"no frames inside window {window}")
    times = np.array([f.t for f in sel])
    if times.min() > t0 + tol or times.max() < t1 - tol:
        raise ValueError(f"frames [{times.min()}, {times.max()}] do not cover window {window}")
    lo = [f.q[0] for f in sel]
    hi = [f.q[-1] for f in sel]
    c = np.array([region_population(f, lo[i], q_barrier, manifolds) for i, f in enumerate(sel)])
    d = np.array([region_population(f, q_barrier, hi[i], manifolds) for i, f in enumerate(sel)])
    pop_c = _time_average(times, c)
    pop_d = _time_average(times, d)
    if not pop_c + pop_d > 0:
        raise ValueError("no excited population inside the yield window")
    return YieldResult(pop_c, pop_d, pop_d / (pop_c + pop_d), (float(t0), float(t1)), float(q_barrier))


def yield_sensitivity(frames, window, q_barrier: float, dq: float = 0.01) -> float:
    """Central-difference d(yield)/d(q_barrier)."""
    hi = quantum_yield(frames, window, q_barrier + dq).yield_
    lo = quantum_yield(frames, window, q_barrier - dq).yield_
    return (hi - lo) / (2 * dq)


@dataclass(frozen=True)
class Series:
    times: np.ndarray
    values: np.ndarray
    skipped: tuple = ()


def expectation_qt(frames: Sequence[WavepacketFrame], manifolds: Sequence[str] = EXCITED, min_population: float = 1e-12) -> Series:
    """First moment of the excited density per frame; empty frames are skipped and listed."""
    if not frames:
        raise ValueError("no frames")
    ts, vs, skipped = [], [], []
    for f in frames:
        p = f.total(manifolds)
        norm = np.trapezoid(p, f.q)
        if not norm > min_population:
            skipped.append(f.t)
            continue
        ts.append(f.t)
        vs.append(np.trapezoid(f.q * p, f.q) / norm)
    return Series(np.array(ts), np.array(vs), tuple(skipped))


def oscillation_period(times, values, min_cycles: float = 2.0, pad: int = 16, snr: float = 5.0) -> float:
    """Dominant period of a uniformly sampled series.

    The mean is removed, a Hann window applied and the zero-padded DFT
    magnitude searched above ``min_cycles`` cycles per record; the peak is
    refined by a parabola through the log magnitudes of its neighbours.
    """
    t = np.asarray(times, dtype=float)
    x = np.asarray(values, dtype=float)
    if t.size < 8:
        raise ValueError("series too short")
    dt = np.diff(t)
    if np.ptp(dt) > 1e-6 * dt.mean():
        raise ValueError("series must be uniformly sampled")
    dt = dt.mean()
    x = x - x.mean()
    n = x.size
    spec = np.abs(np.fft.rfft(x * np.hanning(n), n * pad))
    freqs = np.fft.rfftfreq(n * pad, dt)
    duration = n * dt
    valid = freqs >= min_cycles / duration
    if not np.any(valid) or spec[valid].max() <= 0:
        raise ValueError("no spectral peak: series is flat")
    floor = np.median(spec[valid])
    k = int(np.argmax(np.where(valid, spec, -np.inf)))
    if not spec[k] > snr * floor or spec[k] < 1e-12 * max(1.0, np.abs(values).max()):
        raise ValueError("no spectral peak above the noise floor")
    if 0 < k < spec.size - 1 and spec[k - 1] > 0 and spec[k + 1] > 0:
        a, b, c = np.log(spec[k - 1 : k + 2])
        shift = 0.5 * (a - c) / (a - 2 * b + c)
    else:
        shift = 0.0
    f = freqs[k] + shift * (freqs[1] - freqs[0])
    return 1.0 / f


def _golden(f, a: float, b: float, maximize: bool = False, tol: float = 1e-10) -> float:
    sign = -1.0 if maximize else 1.0
    g = (math.sqrt(5.0) - 1.0) / 2.0
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = sign * f(c), sign * f(d)
    while abs(b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = sign * f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = sign * f(d)
    return 0.5 * (a + b)


def lower_surface_minima(params: ModelParams, q_range=(-6.0, 6.0), points: int = 2401) -> list[float]:
    q = np.linspace(*q_range, points)
    lower = adiabatic_surfaces(params, q).lower
    idx = [i for i in range(1, points - 1) if lower[i] <= lower[i - 1] and lower[i] < lower[i + 1]]
    f = lambda x: float(adiabatic_surfaces(params, [x]).lower[0])
    return [_golden(f, q[i - 1], q[i + 1]) for i in idx]


def find_barrier(params: ModelParams) -> float:
    """Maximum of the lower adiabatic surface (Q_c = 0) between its two minima."""
    minima = lower_surface_minima(params)
    if len(minima) < 2:
        raise ValueError(f"lower surface has {len(minima)} minimum; no barrier to define")
    a, b = minima[0], minima[-1]
    f = lambda x: float(adiabatic_surfaces(params, [x]).lower[0])
    return _golden(f, a, b, maximize=True)
