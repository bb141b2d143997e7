"""Auxiliary-cavity meter for downward quantum jumps.

The bad auxiliary cavity is slaved to the conditioned main-cavity field
``alpha_t``:

    d alpha'/dt = -kappa' alpha' + g' (alpha_t + d),

with offset drive ``d = eps'/g'``; choosing ``d = -alpha1_bar/2`` makes the
total drive cross zero halfway through a bright-to-dim localization, which
shows up as a sharp dip in the scaled transmission
``T' = (kappa'/g')^2 |alpha'|^2``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .jcmodel import QGrid, find_peaks

__all__ = [
    "MeterParams",
    "MeterTrace",
    "DipEvent",
    "DetectionSettings",
    "ClassifierSettings",
    "MeterIntegrator",
    "DipDetector",
    "DipMonitor",
    "SamplingError",
    "cancellation_drive",
    "propagate",
    "consistency_check_mean",
    "detect_dip",
    "quadrature_extrema",
    "classify_post_dip",
    "extract_conditioned_amplitudes",
]


class SamplingError(ValueError):
    pass


def cancellation_drive(alpha1_bar: complex) -> complex:
    """Offset drive ``eps'/g' = -alpha1_bar/2``."""
    return -0.5 * complex(alpha1_bar)


@dataclass(frozen=True)
class MeterParams:
    kp_over_k: float = 100.0
    kp_over_gp: float = 100.0
    drive_prime: complex = 0j

    def __post_init__(self):
        if not self.kp_over_k > 0 or not self.kp_over_gp > 0:
            raise ValueError("meter rates must be positive")
        object.__setattr__(self, "drive_prime", complex(self.drive_prime))

    @property
    def kappa_p(self) -> float:
        return self.kp_over_k

    @property
    def g_p(self) -> float:
        return self.kp_over_k / self.kp_over_gp

    @property
    def level(self) -> float:
        """Transmission when the main cavity is empty, ``|d|^2``."""
        return abs(self.drive_prime) ** 2


@dataclass
class MeterTrace:
    t: np.ndarray
    alpha_p: np.ndarray
    params: MeterParams

    @property
    def scaled(self) -> np.ndarray:
        """``(kappa'/g') alpha'``, directly comparable to ``alpha_t``."""
        return self.alpha_p * self.params.kp_over_gp

    @property
    def transmission(self) -> np.ndarray:
        return np.abs(self.scaled) ** 2

    flux = transmission  # equal in the bad-cavity limit

    @property
    def x(self) -> np.ndarray:
        return self.alpha_p.real

    @property
    def y(self) -> np.ndarray:
        return self.alpha_p.imag

    def to_ndjson(self, path):
        tr = self.transmission
        with open(path, "w") as fh:
            for k in range(self.t.size):
                a = self.alpha_p[k]
                fh.write(json.dumps({
                    "t": float(self.t[k]), "alpha_p": [float(a.real), float(a.imag)],
                    "T": float(tr[k]), "F": float(tr[k]), "x": float(a.real), "y": float(a.imag),
                }) + "\n")


class MeterIntegrator:
    """Exact exponential update with the drive held constant over each interval."""

    def __init__(self, params: MeterParams, max_interval: float | None = None):
        self.params = params
        self.state = None
        self.t = None
        self.max_interval = 0.2 / params.kappa_p if max_interval is None else max_interval

    def update(self, t: float, alpha: complex) -> complex:
        kp, gp = self.params.kappa_p, self.params.g_p
        drive = alpha + self.params.drive_prime
        if self.state is None:
            # start on the quasi-steady response to the first sample
            self.state = gp / kp * drive
        else:
            h = t - self.t
            if h <= 0 or h > self.max_interval * (1 + 1e-9):
                raise SamplingError(
                    f"sampling interval {h:g} violates kappa' dt <= 0.2 (kappa'={kp:g})"
                )
            decay = math.exp(-kp * h)
            self.state = self.state * decay + gp / kp * self._held * (1.0 - decay)
        self._held = drive
        self.t = t
        return self.state


def propagate(signal, params: MeterParams, times=None) -> MeterTrace:
    """Meter response to a sampled main-cavity amplitude.

    ``signal`` is a ``TrajectoryRecord`` or an array of ``alpha_t`` samples
    taken at ``times``. The sample at ``t_k`` drives the interval
    ``[t_k, t_{k+1})``.
    """
    if times is None:
        times, alpha = signal.t, signal.alpha
    else:
        alpha = np.asarray(signal, dtype=complex)
    times = np.asarray(times, dtype=float)
    integ = MeterIntegrator(params)
    out = np.empty(times.size, dtype=complex)
    for k in range(times.size):
        out[k] = integ.update(float(times[k]), complex(alpha[k]))
    return MeterTrace(times, out, params)


@dataclass(frozen=True)
class ConsistencyReport:
    passed: bool
    meter_mean: complex
    expected: complex
    relative_error: float


def consistency_check_mean(trace: MeterTrace, alpha_t, segment, tolerance: float = 0.05):
    """Check ``(kappa'/g') mean(alpha') = mean(alpha_t) + d`` over ``segment``."""
    t0, t1 = segment
    if t1 - t0 < 5.0 / trace.params.kappa_p:
        raise ValueError("segment shorter than five meter lifetimes")
    alpha_t = np.asarray(alpha_t.alpha if hasattr(alpha_t, "alpha") else alpha_t)
    sel = (trace.t >= t0) & (trace.t <= t1)
    lhs = complex(np.mean(trace.scaled[sel]))
    rhs = complex(np.mean(alpha_t[sel])) + trace.params.drive_prime
    scale = max(abs(rhs), abs(trace.params.drive_prime), 1e-300)
    err = abs(lhs - rhs) / scale
    return ConsistencyReport(bool(err <= tolerance), lhs, rhs, float(err))


# ------------------------------------------------------------------ detection


@dataclass(frozen=True)
class DetectionSettings:
    threshold_fraction: float = 0.05
    bright_band: float = 0.5
    bright_min_duration: float = 2.0


@dataclass
class DipEvent:
    t_dip: float
    T_min: float
    bright_window: tuple
    classification: str = "indeterminate"
    alpha1: complex | None = None
    alpha2: complex | None = None
    quad_extrema: tuple | None = None
    peak_heights: tuple | None = None
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("alpha1", "alpha2"):
            z = d[key]
            d[key] = None if z is None else [z.real, z.imag]
        return d


class DipDetector:
    """Streaming transmission-dip detector.

    A contiguous window of at least ``bright_min_duration`` with
    ``|T' - level| <= bright_band * level`` arms the detector. The next local
    minimum of ``T'`` below ``threshold_fraction * level`` is an event and
    disarms it until another such window completes. Brief returns into the
    band keep the detector armed; an exit above the band disarms it, since
    the field then swings through the cancellation point only after the
    superposition has already collapsed.
    """

    def __init__(self, level: float, settings: DetectionSettings = DetectionSettings()):
        self.level = level
        self.s = settings
        self.events = []
        self._run_start = None
        self._run_end = None
        self._window = None
        self._hist = []  # last three (t, T)

    def update(self, t: float, T: float):
        lev, s = self.level, self.s
        self._hist.append((t, T))
        if len(self._hist) > 3:
            self._hist.pop(0)
        if abs(T - lev) <= s.bright_band * lev:
            if self._run_start is None:
                self._run_start = t
            self._run_end = t
            return None
        if self._run_start is not None:
            if self._run_end - self._run_start >= s.bright_min_duration:
                self._window = (self._run_start, self._run_end)
            self._run_start = None
        if T > (1.0 + s.bright_band) * lev:
            # an upward exit ends the bright window without a localization
            self._window = None
        if self._window is None or len(self._hist) < 3:
            return None
        (t0, f0), (t1, f1), (t2, f2) = self._hist
        if not (f1 < s.threshold_fraction * lev and f1 <= f0 and f1 < f2):
            return None
        h = t2 - t1
        den = f0 - 2 * f1 + f2
        off = 0.5 * (f0 - f2) / den if den > 0 else 0.0
        off = min(max(off, -1.0), 1.0)
        event = DipEvent(t1 + off * h, max(0.0, min(f1, f1 - 0.25 * (f0 - f2) * off)), self._window)
        self.events.append(event)
        self._window = None
        return event


def detect_dip(trace: MeterTrace, threshold_fraction: float = 0.05, bright_band: float = 0.5,
               bright_min_duration: float = 2.0, level: float | None = None):
    """All transmission dips in ``trace`` (see ``DipDetector``)."""
    level = trace.params.level if level is None else level
    det = DipDetector(level, DetectionSettings(threshold_fraction, bright_band, bright_min_duration))
    for t, T in zip(trace.t, trace.transmission):
        det.update(float(t), float(T))
    return det.events


class DipMonitor:
    """Meter and dip detector run in lockstep with a trajectory.

    Pass as ``monitor`` to ``run_trajectory``: ``update`` returns the dip
    times whose conditioned states should be pinned.
    """

    def __init__(self, params: MeterParams, settings: DetectionSettings = DetectionSettings(),
                 level: float | None = None):
        self.integrator = MeterIntegrator(params)
        self.detector = DipDetector(params.level if level is None else level, settings)
        self.params = params
        self._t = []
        self._a = []

    def update(self, t, alpha):
        ap = self.integrator.update(t, alpha)
        self._t.append(t)
        self._a.append(ap)
        T = abs(ap * self.params.kp_over_gp) ** 2
        ev = self.detector.update(t, T)
        return (ev.t_dip,) if ev is not None else ()

    @property
    def events(self):
        return self.detector.events

    def trace(self) -> MeterTrace:
        return MeterTrace(np.asarray(self._t), np.asarray(self._a, dtype=complex), self.params)


def quadrature_extrema(trace: MeterTrace, t_dip: float, half_window: float):
    """Times of the minimum of ``dx'/dt`` and the maximum of ``dy'/dt``
    within ``t_dip +/- half_window`` (central differences)."""
    sel = np.nonzero(np.abs(trace.t - t_dip) <= half_window)[0]
    if sel.size < 5:
        raise ValueError("window holds fewer than five samples")
    t = trace.t[sel]
    dx = np.gradient(trace.x[sel], t)
    dy = np.gradient(trace.y[sel], t)
    if np.ptp(dx) == 0 and np.ptp(dy) == 0:
        raise ValueError("degenerate window: quadratures are constant")
    return float(t[np.argmin(dx)]), float(t[np.argmax(dy)])


@dataclass(frozen=True)
class ClassifierSettings:
    window: float = 2.0
    level_tolerance: float = 0.5
    spread_tolerance: float = 0.5
    coherence_span: float = 1.0
    hysteresis: float = 0.2
    crossing_cv: float = 0.25
    min_intervals: int = 3


def _schmitt_crossings(t, v, h):
    """Crossing times of ``v`` through zero, counted only on full swings past ``+/-h``."""
    hi = v > h
    lo = v < -h
    idx = np.nonzero(hi | lo)[0]
    if idx.size == 0:
        return np.empty(0)
    side = hi[idx]
    flips = np.nonzero(side[1:] != side[:-1])[0]
    return t[idx[flips + 1]]


def classify_post_dip(trace: MeterTrace, event: DipEvent, window: float | None = None,
                      settings: ClassifierSettings = ClassifierSettings()) -> str:
    """Tell a jump to the metastable dim state from a transient fluctuation.

    Deviation criterion, on the second half of ``window``: mean ``T'`` within
    ``level_tolerance`` of the level, its spread below ``spread_tolerance``
    (both relative to the level), and the scaled meter amplitude centred
    within ``level_tolerance * |d|`` of the dim response ``d``. The complex
    check is needed because the bright state has the same ``T'``.

    Coherence criterion, on the first ``coherence_span`` after the dip: both
    meter quadratures ring about the settled centre, and the intervals
    between their crossings (with hysteresis ``hysteresis * |d|``) have a
    coefficient of variation below ``crossing_cv``.

    Any failure gives ``fluctuation``; fewer than ``min_intervals`` crossing
    intervals gives ``indeterminate``. The result and diagnostics are
    stored on the event.
    """
    s = settings
    if window is not None:
        s = replace(s, window=window, coherence_span=min(s.coherence_span, window))
    t = trace.t
    if t[-1] < event.t_dip + s.window or s.coherence_span > s.window:
        raise ValueError("trace ends before the classification window")
    d = trace.params.drive_prime
    level = abs(d) ** 2
    beta = trace.scaled

    late = (t >= event.t_dip + 0.5 * s.window) & (t <= event.t_dip + s.window)
    centre = complex(np.mean(beta[late]))
    T = np.abs(beta[late]) ** 2
    level_dev = abs(float(np.mean(T)) - level) / level
    spread = float(np.std(T)) / level
    offset = abs(centre - d) / abs(d)
    deviation_ok = (level_dev <= s.level_tolerance and spread <= s.spread_tolerance
                    and offset <= s.level_tolerance)

    early = (t >= event.t_dip) & (t <= event.t_dip + s.coherence_span)
    z = beta[early] - centre
    h = s.hysteresis * abs(d)
    intervals = np.concatenate([
        np.diff(_schmitt_crossings(t[early], comp, h)) for comp in (z.real, z.imag)
    ])
    if intervals.size >= s.min_intervals:
        cv = float(np.std(intervals) / np.mean(intervals))
    else:
        cv = math.nan
    event.diagnostics.update({
        "level_deviation": level_dev, "spread": spread, "centre_offset": float(offset),
        "intervals": int(intervals.size), "crossing_cv": cv,
    })
    if not deviation_ok:
        label = "fluctuation"
    elif math.isnan(cv):
        label = "indeterminate"
    else:
        label = "metastable_jump" if cv < s.crossing_cv else "fluctuation"
    event.classification = label
    return label


def extract_conditioned_amplitudes(grid: QGrid, alpha1_bar: complex, min_height_fraction: float = 0.2):
    """Read the two coherent amplitudes from a bimodal conditioned Q grid.

    Returns ``(alpha1, alpha2, heights)`` with ``alpha1`` the peak nearer to
    ``alpha1_bar``, or ``None`` when the grid is not bimodal.
    """
    peaks = find_peaks(grid, min_height_fraction)
    if len(peaks) != 2:
        return None
    (p, hp), (q, hq) = peaks
    if abs(p - alpha1_bar) <= abs(q - alpha1_bar):
        return p, q, (hp, hq)
    return q, p, (hq, hp)
