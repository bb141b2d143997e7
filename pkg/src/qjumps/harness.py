"""Experiment orchestration, persistence and histogram comparison.

Stage 1 runs trajectories with the meter in lockstep and records the
conditioned superpositions read at each detected downward jump. Stage 2
turns a superposition into an integrated-charge ensemble and compares its
terminal histogram with the analytic density.

All numeric output is written with ``repr`` floats and sorted JSON keys, so
equal configs and seeds give byte-identical files. Wall-clock information
goes to ``run.log`` only.
"""

from __future__ import annotations

import csv
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.integrate import cumulative_trapezoid, trapezoid
from scipy.ndimage import gaussian_filter1d
from scipy.signal import find_peaks as _signal_peaks

from ._seeding import derive_seed
from .charge import (
    CatFrame,
    FluctuationModel,
    HeterodyneSetup,
    HomodyneSetup,
    InitialSuperposition,
    heterodyne_bin_probabilities,
    heterodyne_target_density,
    homodyne_target_density,
    run_ensemble,
    simulate_heterodyne,
    simulate_homodyne,
    to_cat_frame,
)
from .config import ConfigError, ExperimentConfig
from .jcmodel import (
    check_adiabatic_conditions,
    default_grid,
    localization_time,
    q_function,
    reduced_cavity_dm,
    solve_neoclassical,
    steady_state,
)
from .mcwf import conditioned_q_snapshot, run_trajectory
from .meter import (
    DipMonitor,
    classify_post_dip,
    extract_conditioned_amplitudes,
    quadrature_extrema,
)
from .fock import annihilation, expectation, number

__all__ = [
    "ComparisonReport",
    "Target",
    "compare_histograms",
    "homodyne_target",
    "heterodyne_target",
    "density_modes",
    "FringeMeasurement",
    "measure_fringes",
    "RunDirectory",
    "run_semiclassical",
    "run_steady_state",
    "run_single_trajectory",
    "run_stage1",
    "run_stage2",
    "run_analytic",
    "stage2_seed",
    "Harvest",
    "bright_segments",
    "harvest_jumps",
]

# Stage 2 ensembles draw their seeds from a separate index range so they
# never collide with trajectory seeds under the same base seed.
STAGE2_SEED_OFFSET = 1 << 32


def stage2_seed(base_seed: int, k: int) -> int:
    return derive_seed(base_seed, STAGE2_SEED_OFFSET + k)


# ---------------------------------------------------------------- comparison


@dataclass
class ComparisonReport:
    statistic: str
    value: float
    N: int
    threshold: float
    passed: bool
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError("comparison statistic must be non-negative")

    def to_dict(self) -> dict:
        return {"statistic": self.statistic, "value": self.value, "N": self.N,
                "threshold": self.threshold, "pass": self.passed, "details": self.details}


@dataclass
class Target:
    """Reference density for a comparison.

    ``pdf`` takes real arrays (1D) or ``(x, y)`` arrays (2D). ``bin_mass``,
    if given, returns exact bin probabilities for 2D edges and is preferred
    over quadrature of ``pdf``.
    """

    pdf: object
    dim: int = 1
    bin_mass: object = None
    support: tuple | None = None


DEFAULT_THRESHOLDS = {"L1": 0.05, "KS": 0.01}


def homodyne_target(frame: CatFrame, theta: float) -> Target:
    # the density decays like exp(-(|Q| - 2A)^2 / 2), so this support is ample
    half = 2.0 * frame.A + 12.0
    return Target(lambda q: homodyne_target_density(q, frame, theta), 1, None, (-half, half))


def heterodyne_target(init: InitialSuperposition) -> Target:
    return Target(
        lambda x, y: heterodyne_target_density(np.asarray(x) + 1j * np.asarray(y), init),
        2,
        lambda xe, ye: heterodyne_bin_probabilities(xe, ye, init),
    )


def _cdf_table(target: Target, lo: float, hi: float, n: int = 1 << 18):
    q = np.linspace(lo, hi, n)
    cdf = cumulative_trapezoid(target.pdf(q), q, initial=0.0)
    return q, cdf


def _merge_for_chi2(expected, observed, minimum=5.0):
    e_out, o_out = [], []
    acc_e = acc_o = 0.0
    for e, o in zip(expected, observed):
        acc_e += e
        acc_o += o
        if acc_e >= minimum:
            e_out.append(acc_e)
            o_out.append(acc_o)
            acc_e = acc_o = 0.0
    if acc_e > 0 or acc_o > 0:
        if e_out:
            e_out[-1] += acc_e
            o_out[-1] += acc_o
        else:
            e_out.append(acc_e)
            o_out.append(acc_o)
    return np.array(e_out), np.array(o_out)


def _chi2_report(expected, observed, n, threshold):
    e, o = _merge_for_chi2(expected, observed)
    dof = e.size - 1
    if dof < 1:
        raise ValueError("degenerate binning: fewer than two merged bins")
    chi2 = float(np.sum((o - e) ** 2 / e))
    value = chi2 / dof
    if threshold is None:
        threshold = 1.0 + 4.0 * math.sqrt(2.0 / dof)
    return ComparisonReport("chi2", value, n, float(threshold), bool(value <= threshold),
                            {"chi2": chi2, "dof": dof, "p_value": float(stats.chi2.sf(chi2, dof))})


def compare_histograms(finals, target, statistic: str = "KS", threshold: float | None = None,
                       bin_width: float | None = None) -> ComparisonReport:
    """Distance between terminal samples and a reference density.

    L1 is the summed absolute difference between empirical and target bin
    probabilities (target mass outside the binned range included). KS is
    the supremum distance to the numerically integrated target CDF, 1D
    only. chi2 is the reduced statistic over bins merged to hold at least
    five expected counts; its default threshold is a four-sigma bound.
    The target is renormalized over its support; its raw mass is reported.
    """
    if not isinstance(target, Target):
        target = Target(target)
    if statistic not in ("L1", "KS", "chi2"):
        raise ValueError(f"unknown statistic {statistic!r}")
    finals = np.asarray(finals)
    n = finals.size
    if statistic in ("L1", "KS") and n < 100:
        raise ValueError("at least 100 finals are needed for L1 or KS")
    if threshold is None:
        threshold = DEFAULT_THRESHOLDS.get(statistic)
    if target.dim == 2 or np.iscomplexobj(finals):
        return _compare_2d(finals.astype(complex), target, statistic, threshold, bin_width)

    finals = finals.astype(float)
    spread = max(float(np.std(finals)), 1.0)
    lo, hi = target.support or (float(finals.min()) - 10 * spread, float(finals.max()) + 10 * spread)
    lo, hi = min(lo, float(finals.min()) - 1.0), max(hi, float(finals.max()) + 1.0)
    q, cdf = _cdf_table(target, lo, hi)
    mass = float(cdf[-1])
    if not mass > 0:
        raise ValueError("target density has no mass on its support")
    cdf = cdf / mass
    inside = np.interp([finals.min(), finals.max()], q, cdf)
    if inside[1] - inside[0] < 1e-12:
        raise ValueError("target support does not overlap the samples")
    details = {"target_mass": mass}

    if statistic == "KS":
        x = np.sort(finals)
        F = np.interp(x, q, cdf)
        k = np.arange(1, n + 1)
        value = float(max(np.max(k / n - F), np.max(F - (k - 1) / n)))
        return ComparisonReport("KS", value, n, float(threshold), bool(value < threshold), details)

    width = bin_width or _default_bin_width(finals)
    edges = _edges(finals.min(), finals.max(), width)
    counts, _ = np.histogram(finals, edges)
    tmass = np.diff(np.interp(edges, q, cdf))
    if statistic == "chi2":
        return _chi2_report(n * tmass, counts, n, threshold)
    outside = 1.0 - float(tmass.sum())
    value = float(np.sum(np.abs(counts / n - tmass)) + max(outside, 0.0))
    details["bin_width"] = width
    return ComparisonReport("L1", value, n, float(threshold), bool(value < threshold), details)


def _default_bin_width(x):
    iqr = np.subtract(*np.percentile(x, [75, 25]))
    return float(2.0 * iqr / np.cbrt(x.size)) if iqr > 0 else 0.1


def _edges(lo, hi, width):
    a = math.floor(lo / width) * width
    b = math.ceil(hi / width) * width
    k = max(1, int(round((b - a) / width)))
    return a + width * np.arange(k + 1)


def _gauss_bin_mass(pdf, xe, ye, order=4):
    nodes, weights = np.polynomial.legendre.leggauss(order)
    xm, xh = 0.5 * (xe[1:] + xe[:-1]), 0.5 * np.diff(xe)
    ym, yh = 0.5 * (ye[1:] + ye[:-1]), 0.5 * np.diff(ye)
    out = np.zeros((xm.size, ym.size))
    for ni, wi in zip(nodes, weights):
        for nj, wj in zip(nodes, weights):
            X, Y = np.meshgrid(xm + ni * xh, ym + nj * yh, indexing="ij")
            out += wi * wj * pdf(X, Y)
    return out * np.outer(xh, yh)


def _compare_2d(finals, target, statistic, threshold, bin_width):
    if statistic == "KS":
        raise ValueError("KS distance is defined for one-dimensional charge only")
    n = finals.size
    width = bin_width or 0.5
    xe = _edges(finals.real.min(), finals.real.max(), width)
    ye = _edges(finals.imag.min(), finals.imag.max(), width)
    counts, _, _ = np.histogram2d(finals.real, finals.imag, [xe, ye])
    if target.bin_mass is not None:
        tmass = target.bin_mass(xe, ye)
    else:
        tmass = _gauss_bin_mass(target.pdf, xe, ye)
    if tmass.sum() < 1e-12:
        raise ValueError("target support does not overlap the samples")
    if statistic == "chi2":
        return _chi2_report(n * tmass.ravel(), counts.ravel(), n, threshold)
    outside = 1.0 - float(tmass.sum())
    value = float(np.sum(np.abs(counts / n - tmass)) + max(outside, 0.0))
    return ComparisonReport("L1", value, n, float(threshold), bool(value < threshold),
                            {"bin_width": width, "target_mass_in_range": float(tmass.sum())})


# --------------------------------------------------------------- measurement


def _smoothed_histogram(samples, bin_width, smooth):
    samples = np.asarray(samples, dtype=float)
    edges = _edges(samples.min() - 5 * smooth, samples.max() + 5 * smooth, bin_width)
    counts, _ = np.histogram(samples, edges)
    dens = counts / (samples.size * bin_width)
    if smooth > 0:
        dens = gaussian_filter1d(dens, smooth / bin_width, mode="constant")
    return 0.5 * (edges[1:] + edges[:-1]), dens


def _refined_peaks(centres, dens, prominence):
    idx, _ = _signal_peaks(dens, prominence=prominence)
    h = centres[1] - centres[0]
    out = []
    for i in idx:
        if 0 < i < dens.size - 1:
            f0, f1, f2 = dens[i - 1], dens[i], dens[i + 1]
            den = f0 - 2 * f1 + f2
            off = 0.5 * (f0 - f2) / den if den < 0 else 0.0
            out.append((centres[i] + off * h, f1))
        else:
            out.append((centres[i], dens[i]))
    return out


def density_modes(samples, n_modes: int = 2, bin_width: float = 0.02, smooth: float = 0.25):
    """Positions of the ``n_modes`` highest maxima of a smoothed histogram, ascending."""
    centres, dens = _smoothed_histogram(samples, bin_width, smooth)
    peaks = _refined_peaks(centres, dens, 0.05 * dens.max())
    peaks.sort(key=lambda p: -p[1])
    return sorted(float(p[0]) for p in peaks[:n_modes])


@dataclass
class FringeMeasurement:
    centre: float
    left: float
    right: float
    spacing: float
    nodes: tuple
    peaks: list
    visibility: list


def _refined_minimum(centres, dens, lo, hi):
    i0, i1 = np.searchsorted(centres, [lo, hi])
    i = i0 + int(np.argmin(dens[i0:i1]))
    if 0 < i < dens.size - 1:
        f0, f1, f2 = dens[i - 1], dens[i], dens[i + 1]
        den = f0 - 2 * f1 + f2
        if den > 0:
            return float(centres[i] + 0.5 * (f0 - f2) / den * (centres[1] - centres[0]))
    return float(centres[i])


def measure_fringes(samples_or_density, bin_width: float = 0.01, smooth: float | None = None,
                    expected_spacing: float | None = None, prominence: float = 0.02):
    """Central fringe, its nearest neighbours and the fringe period.

    Takes charge samples or a ``(q, density)`` pair. ``spacing`` is the
    distance between the two minima flanking the fringe nearest the origin.
    The minima sit on the nodes of the interference term, which a smooth
    envelope does not move, whereas the maxima are pulled towards the
    envelope's centre. ``visibility`` lists ``(peak, (peak - trough)/(peak +
    trough))`` for every detected fringe, with the trough the lower adjacent
    minimum.
    """
    if isinstance(samples_or_density, tuple):
        centres, dens = (np.asarray(a, dtype=float) for a in samples_or_density)
    else:
        if smooth is None:
            smooth = 0.08 * expected_spacing if expected_spacing else 3 * bin_width
        centres, dens = _smoothed_histogram(samples_or_density, bin_width, smooth)
    peaks = sorted(p[0] for p in _refined_peaks(centres, dens, prominence * dens.max()))
    if len(peaks) < 3:
        raise ValueError(f"found {len(peaks)} fringes, need at least three")
    k = int(np.argmin(np.abs(peaks)))
    if k == 0 or k == len(peaks) - 1:
        raise ValueError("central fringe has no neighbour on one side")
    nodes = (_refined_minimum(centres, dens, peaks[k - 1], peaks[k]),
             _refined_minimum(centres, dens, peaks[k], peaks[k + 1]))
    vis = []
    for p in peaks:
        i = int(np.argmin(np.abs(centres - p)))
        troughs = []
        for side in (dens[:i][::-1], dens[i + 1:]):
            rising = np.nonzero(np.diff(side) > 0)[0]
            if rising.size:
                troughs.append(side[rising[0]])
        top = dens[i]
        bottom = min(troughs) if troughs else 0.0
        vis.append((float(p), float((top - bottom) / (top + bottom)) if top + bottom > 0 else 0.0))
    return FringeMeasurement(float(peaks[k]), float(peaks[k - 1]), float(peaks[k + 1]),
                             nodes[1] - nodes[0], nodes, [float(p) for p in peaks], vis)


# --------------------------------------------------------------- persistence


def _jsonify(obj):
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonify(x) for x in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(x) for x in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def _num(x):
    return repr(float(x))


class RunDirectory:
    """Output directory with the resolved config written up front."""

    def __init__(self, path, config: ExperimentConfig, command: str):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        (self.path / "config.ini").write_text(config.to_ini())
        (self.path / "config.json").write_text(config.to_json())
        self._log = open(self.path / "run.log", "a")
        self.log(f"start {command}")

    def log(self, message: str):
        stamp = time.strftime("%Y-%m-%dT%H:%M:%S")
        self._log.write(f"{stamp} {message}\n")
        self._log.flush()

    def close(self):
        self.log("end")
        self._log.close()

    def file(self, name: str) -> Path:
        p = self.path / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def write_json(self, name: str, obj):
        self.file(name).write_text(json.dumps(_jsonify(obj), indent=2, sort_keys=True) + "\n")

    def write_csv(self, name: str, header, rows):
        with open(self.file(name), "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_num(v) if isinstance(v, (float, np.floating)) else v for v in row])


# ------------------------------------------------------------------ commands


def run_semiclassical(config: ExperimentConfig) -> dict:
    params = config.jc_params()
    roots = solve_neoclassical(params)
    out = {"roots": [[z.real, z.imag] for z in roots.roots], "labels": list(roots.labels),
           "bistable": roots.bistable,
           "other_branch": [[z.real, z.imag] for z in roots.other_branch]}
    if roots.bistable:
        out["meter_level"] = abs(roots.bright) ** 2 / 4
        out["localization_time"] = localization_time(roots.bright, roots.unstable)
    else:
        out["localization_time"] = None
    rep = check_adiabatic_conditions(config.meter.kp_over_k, config.meter.kp_over_gp, params)
    out["adiabatic"] = {"passed": rep.passed, "checks": rep.checks, "values": rep.values}
    return out


def format_semiclassical(summary: dict) -> str:
    lines = [f"{'label':<10}{'Re alpha':>12}{'Im alpha':>12}{'|alpha|^2':>12}"]
    for lab, (re, im) in zip(summary["labels"], summary["roots"]):
        lines.append(f"{lab:<10}{re:>12.5f}{im:>12.5f}{re * re + im * im:>12.4f}")
    if summary["bistable"]:
        lines.append(f"meter level |alpha1|^2/4 = {summary['meter_level']:.4f}")
        lines.append(f"localization time kappa*dt = {summary['localization_time']:.5f}")
    else:
        lines.append("localization time: not applicable (no bistability)")
    lines.append(f"adiabatic conditions: {'pass' if summary['adiabatic']['passed'] else 'FAIL'}")
    return "\n".join(lines)


def _roots_or_none(params):
    roots = solve_neoclassical(params)
    return roots, (roots.bright if roots.roots else 0j)


def run_steady_state(config: ExperimentConfig, run: RunDirectory, normalized: bool = False) -> dict:
    params = config.jc_params()
    rho = steady_state(params)
    hc = params.hilbert
    n_ss = float(expectation(number(hc), rho).real)
    a_ss = complex(expectation(annihilation(hc), rho))
    roots, _ = _roots_or_none(params)
    grid = default_grid(list(roots.roots) + [0j], config.output.grid_spacing)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        q = q_function(reduced_cavity_dm(rho), grid, normalized=normalized)
    summary = {"photon_number": n_ss, "alpha": a_ss, "n_max": hc.n_max,
               "q_integral": q.integral() if normalized else None}
    run.write_json("steady_state.json", summary)
    _write_qgrid(run, "q_steady_state", q, config.output.formats)
    return summary


def _write_qgrid(run, stem, grid, formats):
    if "csv" in formats:
        grid.to_csv(run.file(stem + ".csv"))
    if "bin" in formats:
        grid.to_binary(run.file(stem + ".qbin"))


def run_single_trajectory(config: ExperimentConfig, run: RunDirectory) -> dict:
    params = config.jc_params()
    _, bright = _roots_or_none(params)
    seed = derive_seed(config.seeds.base_seed, 0)
    monitor = DipMonitor(config.meter_params(bright), config.detection_settings())
    rec = run_trajectory(params, config.trajectory_config(seed), monitor=monitor)
    rec.to_ndjson(run.file("trajectory.ndjson"))
    rec.clicks_to_csv(run.file("clicks.csv"))
    monitor.trace().to_ndjson(run.file("meter.ndjson"))
    summary = {"seed": seed, "clicks": len(rec.click_times),
               "mean_photon_number": float(np.mean(rec.photon_number)),
               "dips": [e.t_dip for e in monitor.events]}
    run.write_json("summary.json", summary)
    return summary


def _snapshot_q(rec, t, anchors, spacing, max_margin=12.0):
    # widen the default window until the conditioned state fits on it
    margin = 3.0
    while True:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            qg = conditioned_q_snapshot(rec, t, default_grid(anchors, spacing, margin))
        if qg.integral() >= 0.99 * math.pi or margin >= max_margin:
            return qg
        margin += 3.0


def _stage1_unit(args):
    config_json, index = args
    config = ExperimentConfig.from_json(config_json)
    params = config.jc_params()
    roots, bright = _roots_or_none(params)
    seed = derive_seed(config.seeds.base_seed, index)
    mparams = config.meter_params(bright)
    cls_settings = config.classifier_settings()
    if mparams.level == 0:
        monitor = None
    else:
        monitor = DipMonitor(mparams, config.detection_settings())
    rec = run_trajectory(params, config.trajectory_config(seed), monitor=monitor)
    if monitor is None:
        from .meter import propagate

        trace, events = propagate(rec, mparams), []
    else:
        trace, events = monitor.trace(), monitor.events
    anchors = list(roots.roots) + [0j]
    snapshots = []
    for e in events:
        if e.t_dip + cls_settings.window <= trace.t[-1]:
            classify_post_dip(trace, e, settings=cls_settings)
        else:
            e.diagnostics["note"] = "classification window runs past the trajectory"
        half = max(0.1, 5 * rec.sample_interval)
        try:
            e.quad_extrema = quadrature_extrema(trace, e.t_dip, half)
        except ValueError:
            pass
        try:
            qg = _snapshot_q(rec, e.t_dip, anchors, config.output.grid_spacing)
        except LookupError:
            snapshots.append(None)
            continue
        if qg.integral() < 0.99 * math.pi:
            e.diagnostics["snapshot_mass"] = qg.integral() / math.pi
        got = extract_conditioned_amplitudes(qg, bright)
        if got is None:
            e.diagnostics["snapshot"] = "not bimodal"
        else:
            e.alpha1, e.alpha2, e.peak_heights = got
        state = rec.snapshots[qg.time]
        snapshots.append((qg, state))
    return index, seed, rec, trace, events, snapshots


def run_stage1(config: ExperimentConfig, run: RunDirectory, workers: int | None = None) -> dict:
    """Trajectories with the meter in lockstep; writes ``jumps.json``."""
    count = config.trajectory.count
    jobs = [(config.to_json(), i) for i in range(count)]
    all_events, jumps = [], []
    formats = config.output.formats

    def consume(result):
        index, seed, rec, trace, events, snapshots = result
        rec.to_ndjson(run.file(f"trajectory_{index}.ndjson"))
        rec.clicks_to_csv(run.file(f"clicks_{index}.csv"))
        trace.to_ndjson(run.file(f"meter_{index}.ndjson"))
        for k, (e, snap) in enumerate(zip(events, snapshots)):
            rec_e = {"trajectory": index, "seed": seed, "index": k, **e.to_dict()}
            all_events.append(rec_e)
            if snap is not None:
                qg, state = snap
                _write_qgrid(run, f"snapshots/q_{index}_{k}", qg, formats)
                run.file(f"snapshots/state_{index}_{k}.json").write_text(state.to_json())
            if e.classification == "metastable_jump" and e.alpha1 is not None:
                c = 1 / math.sqrt(2)
                jumps.append({"trajectory": index, "event": k, "t_dip": e.t_dip,
                              "c1": [c, 0.0], "c2": [c, 0.0],
                              "alpha1": e.alpha1, "alpha2": e.alpha2})
        run.log(f"trajectory {index}: {len(events)} dips")

    try:
        if workers and workers > 1 and count > 1:
            with ProcessPoolExecutor(workers) as pool:
                for result in pool.map(_stage1_unit, jobs):
                    consume(result)
        else:
            for job in jobs:
                consume(_stage1_unit(job))
    finally:
        run.write_json("events.json", all_events)
        run.write_json("jumps.json", jumps)
    return {"events": len(all_events), "metastable_jumps": len(jumps)}


def _as_complex(v):
    return complex(v[0], v[1]) if isinstance(v, list) else complex(v)


def load_jumps(path) -> list:
    data = json.loads(Path(path).read_text())
    out = []
    for r in data:
        out.append(InitialSuperposition(*(_as_complex(r[k]) for k in ("c1", "c2", "alpha1", "alpha2"))))
    if not out:
        raise ConfigError(f"{path} holds no superpositions")
    return out


def _stage2_superposition(config: ExperimentConfig, jumps_path=None) -> InitialSuperposition | None:
    s2 = config.stage2
    if s2.source == "jumps":
        if jumps_path is None:
            raise ConfigError("stage2.source is jumps but no jumps file was given")
        recs = load_jumps(jumps_path)
        # read the collection as identical states: median amplitudes
        a1 = complex(np.median([r.alpha1.real for r in recs]), np.median([r.alpha1.imag for r in recs]))
        a2 = complex(np.median([r.alpha2.real for r in recs]), np.median([r.alpha2.imag for r in recs]))
        return InitialSuperposition(recs[0].c1, recs[0].c2, a1, a2)
    if s2.alpha1 is None or s2.alpha2 is None:
        return None
    return InitialSuperposition(s2.c1, s2.c2, s2.alpha1, s2.alpha2)


def _frame(config, sup):
    s2 = config.stage2
    if s2.A is not None:
        return CatFrame(s2.A, s2.phi0)
    if sup is None:
        raise ConfigError("homodyne stage 2 needs stage2.A or both amplitudes")
    return to_cat_frame(sup.alpha1, sup.alpha2, s2.phi0)


def stage2_targets(config: ExperimentConfig, jumps_path=None):
    """``[(label, setup, target)]`` for every ensemble stage 2 would run."""
    s2 = config.stage2
    sup = _stage2_superposition(config, jumps_path)
    if s2.kind == "heterodyne":
        if sup is None:
            raise ConfigError("heterodyne stage 2 needs stage2.alpha1 and stage2.alpha2")
        return [("heterodyne", HeterodyneSetup(sup, 1.0, s2.dt, s2.t_end), heterodyne_target(sup))]
    frame = _frame(config, sup)
    out = []
    for k, th in enumerate(s2.theta):
        out.append((f"homodyne_{k}", HomodyneSetup(frame, th, s2.d_eta, s2.eta_max),
                    homodyne_target(frame, th)))
    return out


def run_stage2(config: ExperimentConfig, run: RunDirectory, workers: int | None = None,
               jumps_path=None) -> list:
    """Charge ensembles, histograms, target overlays and comparison reports."""
    s2 = config.stage2
    fluct = FluctuationModel(s2.fluctuation, s2.sigma_over_sqrtA)
    reports = []
    for k, (label, setup, target) in enumerate(stage2_targets(config, jumps_path)):
        seed = stage2_seed(config.seeds.base_seed, k)
        if s2.N == 1:
            if setup.kind == "heterodyne":
                rec = simulate_heterodyne(setup.init, setup.kappa, setup.dt, setup.t_end, seed)
                rows = [(t, q.real, q.imag) for t, q in zip(rec.path_time, rec.path_q)]
                run.write_csv(f"{label}_path.csv", ["t", "qx", "qy"], rows)
            else:
                rec = simulate_homodyne(setup.frame, setup.theta, setup.d_eta, setup.eta_max, seed)
                run.write_csv(f"{label}_path.csv", ["eta", "q"], zip(rec.path_time, rec.path_q))
            continue
        res = run_ensemble(setup, s2.N, fluct, base_seed=seed, workers=workers)
        run.log(f"{label}: {res.n} paths, {res.clamp_count} clamped drift evaluations")
        if setup.kind == "heterodyne":
            stat = s2.statistic or "L1"
            bw = s2.bin_width or 0.5
            run.write_csv(f"{label}_finals.csv", ["qx", "qy"],
                          ((q.real, q.imag) for q in res.finals))
            _write_hist_2d(run, label, res.finals, target, bw)
        else:
            stat = s2.statistic or "KS"
            bw = s2.bin_width or 0.02
            run.write_csv(f"{label}_finals.csv", ["q"], ((q,) for q in res.finals))
            _write_hist_1d(run, label, res.finals, target, bw)
        if fluct.mode != "none":
            run.write_csv(f"{label}_draws.csv", sorted(res.draws),
                          zip(*(res.draws[key] for key in sorted(res.draws))))
        report = compare_histograms(res.finals, target, stat, s2.threshold,
                                    bw if stat != "KS" else None)
        report.details.update({"label": label, "seed": seed, "clamp_count": res.clamp_count,
                               "fluctuation": fluct.mode})
        if setup.kind == "homodyne":
            report.details.update({"theta": setup.theta, "A": setup.frame.A, "phi0": setup.frame.phi0})
        run.write_json(f"{label}_report.json", report.to_dict())
        reports.append(report)
    return reports


def _write_hist_1d(run, label, finals, target, width):
    lo, hi = target.support
    lo, hi = min(lo, finals.min()), max(hi, finals.max())
    edges = _edges(lo, hi, width)
    counts, _ = np.histogram(finals, edges)
    dens = counts / (finals.size * width)
    run.write_csv(f"{label}_histogram.csv", ["q_lo", "q_hi", "density"],
                  zip(edges[:-1], edges[1:], dens))
    q = np.linspace(lo, hi, int(round((hi - lo) / (0.25 * width))) + 1)
    run.write_csv(f"{label}_target.csv", ["q", "density"], zip(q, target.pdf(q)))


def _write_hist_2d(run, label, finals, target, width):
    xe = _edges(finals.real.min(), finals.real.max(), width)
    ye = _edges(finals.imag.min(), finals.imag.max(), width)
    counts, _, _ = np.histogram2d(finals.real, finals.imag, [xe, ye])
    area = width * width
    dens = counts / (finals.size * area)
    tm = target.bin_mass(xe, ye) / area
    rows, trows = [], []
    for i in range(xe.size - 1):
        for j in range(ye.size - 1):
            rows.append((xe[i], xe[i + 1], ye[j], ye[j + 1], dens[i, j]))
            trows.append((0.5 * (xe[i] + xe[i + 1]), 0.5 * (ye[j] + ye[j + 1]), tm[i, j]))
    run.write_csv(f"{label}_histogram.csv", ["x_lo", "x_hi", "y_lo", "y_hi", "density"], rows)
    run.write_csv(f"{label}_target.csv", ["x", "y", "bin_average_density"], trows)


def run_analytic(config: ExperimentConfig, run: RunDirectory, jumps_path=None) -> list:
    """Target densities alone, with their normalization for homodyne."""
    out = []
    for label, setup, target in stage2_targets(config, jumps_path):
        if setup.kind == "heterodyne":
            init = setup.init
            z = np.array([init.alpha1.conjugate(), init.alpha2.conjugate()])
            xs = np.arange(math.floor(z.real.min()) - 4, math.ceil(z.real.max()) + 4 + 1e-9, 0.05)
            ys = np.arange(math.floor(z.imag.min()) - 4, math.ceil(z.imag.max()) + 4 + 1e-9, 0.05)
            X, Y = np.meshgrid(xs, ys, indexing="ij")
            P = target.pdf(X, Y)
            run.write_csv(f"{label}_target.csv", ["x", "y", "density"],
                          zip(X.ravel(), Y.ravel(), P.ravel()))
            out.append({"label": label})
            continue
        lo, hi = target.support
        q = np.linspace(lo, hi, 200001)
        p = target.pdf(q)
        A, phi0 = setup.frame.A, setup.frame.phi0
        expected = (1 + math.cos(phi0) * math.exp(-2 * A * A)) / (1 + math.exp(-2 * A * A))
        norm = float(trapezoid(p, q))
        run.write_csv(f"{label}_target.csv", ["q", "density"], zip(q[::20], p[::20]))
        summary = {"label": label, "theta": setup.theta, "A": A, "phi0": phi0,
                   "normalization": norm, "expected_normalization": expected}
        if A > 0 and abs(math.sin(setup.theta)) > 1e-12:
            summary["fringe_spacing"] = math.pi / (A * abs(math.sin(setup.theta)))
        out.append(summary)
    run.write_json("analytic.json", out)
    return out


@dataclass
class Harvest:
    events: list
    trajectories: int
    lifetimes: float
    bright_transmission: list
    level: float

    @property
    def metastable(self) -> list:
        return [e for e in self.events if e.classification == "metastable_jump"]


def bright_segments(t, alpha, bright, dim, smooth: float = 1.0, trim: float = 1.0):
    """Intervals where the smoothed field sits nearer ``bright`` than ``dim``,
    shortened by ``trim`` at both ends."""
    h = t[1] - t[0]
    w = max(1, int(round(smooth / h)))
    kern = np.ones(w) / w
    sm = np.convolve(alpha, kern, mode="same")
    near = np.abs(sm - bright) < np.abs(sm - dim)
    segs = []
    edges = np.flatnonzero(np.diff(near.astype(np.int8)))
    bounds = np.concatenate([[0], edges + 1, [near.size]])
    for s, e in zip(bounds[:-1], bounds[1:]):
        if near[s] and t[e - 1] - t[s] > 2 * trim:
            segs.append((t[s] + trim, t[e - 1] - trim))
    return segs


def harvest_jumps(config: ExperimentConfig, target: int, max_trajectories: int,
                  progress=None) -> Harvest:
    """Run stage-1 trajectories until ``target`` metastable jumps are found.

    Nothing is written to disk; trajectory ``i`` uses the seed of unit ``i``.
    """
    params = config.jc_params()
    roots = solve_neoclassical(params)
    if not roots.bistable:
        raise ConfigError("jump harvest needs bistable parameters")
    level = abs(roots.bright) ** 2 / 4
    events, bright_T = [], []
    n_done = 0
    for i in range(max_trajectories):
        _, _, rec, trace, evs, _ = _stage1_unit((config.to_json(), i))
        n_done += 1
        for e in evs:
            e.diagnostics["trajectory"] = i
        events.extend(evs)
        T = trace.transmission
        for a, b in bright_segments(rec.t, rec.alpha, roots.bright, roots.dim):
            sel = (trace.t >= a) & (trace.t <= b)
            bright_T.append((b - a, float(np.mean(T[sel]))))
        if progress is not None:
            progress(i, events)
        if sum(e.classification == "metastable_jump" for e in events) >= target:
            break
    return Harvest(events, n_done, n_done * config.trajectory.duration, bright_T, level)
