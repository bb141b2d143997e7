"""Monte Carlo wave-function trajectories under direct photodetection.

Between clicks the unnormalized state evolves with
``H_eff = H_JC - i a^dag a`` (kappa = 1); a click happens when the squared
norm falls through a uniform variate drawn after the previous click
(waiting-time algorithm), at which point ``sqrt(2) a`` is applied.
"""

from __future__ import annotations

import csv
import functools
import json
import math
import warnings
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from ._seeding import derive_seed, rng_for
from .fock import PureStateVector, SparseOperator, coherent_state
from .jcmodel import JCParams, QGrid, build_hamiltonian, q_function_pure, steady_state

__all__ = [
    "TrajectoryConfig",
    "TrajectoryRecord",
    "StepSizeError",
    "NormUnderflowError",
    "effective_hamiltonian",
    "integrate_step",
    "rk4_matrix",
    "run_trajectory",
    "run_trajectories",
    "conditioned_q_snapshot",
]


class StepSizeError(ValueError):
    pass


class NormUnderflowError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrajectoryConfig:
    dt: float = 5e-5
    duration: float = 10.0
    seed: int = 0
    sample_stride: int = 20
    initial_state: object = "vacuum"
    burn_in: float = 0.0
    snapshot_window: float = 2.0
    store_snapshots: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.duration < self.dt:
            raise ValueError("duration must be at least dt")
        if int(self.sample_stride) != self.sample_stride or self.sample_stride < 1:
            raise ValueError("sample_stride must be a positive integer")
        if self.burn_in < 0:
            raise ValueError("burn_in must be non-negative")
        if not isinstance(self.initial_state, PureStateVector) and self.initial_state not in (
            "vacuum", "steady-sample",
        ):
            raise ValueError(f"unknown initial state {self.initial_state!r}")

    @property
    def sample_interval(self) -> float:
        return self.dt * self.sample_stride


@dataclass
class TrajectoryRecord:
    """Click times and conditioned expectations sampled every
    ``sample_interval``. Times are measured from the end of the burn-in."""

    click_times: np.ndarray
    t: np.ndarray
    alpha: np.ndarray
    photon_number: np.ndarray
    norm2: np.ndarray
    seed: int
    sample_interval: float
    n_levels: int
    snapshots: dict = field(default_factory=dict)

    @property
    def x(self) -> np.ndarray:
        """``<A_0>``: real quadrature."""
        return self.alpha.real

    @property
    def y(self) -> np.ndarray:
        """``<A_{pi/2}>``: imaginary quadrature."""
        return self.alpha.imag

    def to_ndjson(self, path):
        with open(path, "w") as fh:
            for t, a, n, x, y in zip(self.t, self.alpha, self.photon_number, self.x, self.y):
                fh.write(json.dumps({"t": float(t), "alpha": [float(a.real), float(a.imag)],
                                     "n": float(n), "x": float(x), "y": float(y)}) + "\n")

    def clicks_to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["click_index", "t"])
            for i, t in enumerate(self.click_times):
                w.writerow([i, repr(float(t))])


def effective_hamiltonian(params: JCParams) -> SparseOperator:
    from .fock import number

    return build_hamiltonian(params) - 1j * number(params.hilbert)


def spectral_radius(h_eff) -> float:
    m = h_eff.toarray() if hasattr(h_eff, "toarray") else np.asarray(h_eff)
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def _rk4_apply(m, psi, h):
    k1 = m @ psi
    k2 = m @ (psi + 0.5 * h * k1)
    k3 = m @ (psi + 0.5 * h * k2)
    k4 = m @ (psi + h * k3)
    return psi + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_step(state, h_eff, dt: float, max_frequency: float | None = None):
    """One classical RK4 step of ``d psi/dt = -i H_eff psi``.

    ``state`` may be a ``PureStateVector`` or an array; the result has the
    same kind and is not renormalized. Raises ``StepSizeError`` unless
    ``dt * max_frequency < 0.1``.
    """
    op = h_eff.csr if isinstance(h_eff, SparseOperator) else h_eff
    if max_frequency is None:
        max_frequency = spectral_radius(op)
    if dt * max_frequency >= 0.1:
        raise StepSizeError(
            f"dt={dt:g} too large: dt * max frequency = {dt * max_frequency:.3g} >= 0.1"
        )
    m = -1j * op
    if isinstance(state, PureStateVector):
        return PureStateVector(_rk4_apply(m, state.amplitudes, dt))
    return _rk4_apply(m, np.asarray(state, dtype=complex), dt)


def rk4_matrix(h_eff, dt: float) -> np.ndarray:
    """Dense matrix of one RK4 step, ``sum_{k<=4} (-i H_eff dt)^k / k!``."""
    m = -1j * dt * (h_eff.toarray() if hasattr(h_eff, "toarray") else np.asarray(h_eff))
    out = np.eye(m.shape[0], dtype=complex)
    term = out
    for k in range(1, 5):
        term = term @ m / k
        out = out + term
    return out


class _SnapshotRing:
    def __init__(self, maxlen):
        self.buf = deque(maxlen=maxlen)

    def push(self, t, psi):
        self.buf.append((t, psi))

    def nearest(self, t):
        if not self.buf:
            return None
        return min(self.buf, key=lambda p: abs(p[0] - t))


def _initial_vector(params, config, rng):
    init = config.initial_state
    if isinstance(init, PureStateVector):
        if init.dimension != params.hilbert.dimension:
            raise ValueError("initial state dimension does not match the Hilbert space")
        return init.normalized().amplitudes.copy()
    if init == "vacuum":
        return coherent_state(0, params.hilbert).amplitudes.copy()
    # steady-sample: eigenvector of rho_ss drawn with its eigenvalue as weight
    w, v = _steady_spectrum(params)
    k = rng.choice(w.size, p=w / w.sum())
    return v[:, k].astype(complex)


@functools.lru_cache(maxsize=4)
def _steady_spectrum(params: JCParams):
    # shared by every trajectory of an ensemble; callers must not mutate
    w, v = np.linalg.eigh(steady_state(params).elements)
    w = np.clip(w, 0, None)
    w.flags.writeable = False
    v.flags.writeable = False
    return w, v


def run_trajectory(params: JCParams, config: TrajectoryConfig, monitor=None, pin_times=()):
    """Simulate one conditioned trajectory.

    ``monitor``, if given, is called as ``monitor.update(t, alpha)`` at every
    sample and returns an iterable of times whose nearest buffered state is
    pinned into ``record.snapshots``. ``pin_times`` pins states at fixed times.
    """
    dim = params.hilbert.dimension
    n_levels = params.hilbert.n_levels
    h_eff = effective_hamiltonian(params)
    wmax = spectral_radius(h_eff.csr)
    if config.dt * wmax >= 0.1:
        raise StepSizeError(
            f"dt={config.dt:g} too large: dt * max frequency = {config.dt * wmax:.3g} >= 0.1"
        )
    m = -1j * h_eff.toarray()
    step = rk4_matrix(h_eff, config.dt)
    stride = int(config.sample_stride)
    # step^(2^j) for 2^j <= stride, used to locate clicks inside a block
    powers = [step]
    while 2 ** len(powers) <= stride:
        powers.append(powers[-1] @ powers[-1])
    block = np.linalg.matrix_power(step, stride)
    a = np.sqrt(np.arange(1, n_levels))
    top = [n_levels - 1, 2 * n_levels - 1]
    idx_lo = np.concatenate([np.arange(n_levels - 1), n_levels + np.arange(n_levels - 1)])
    idx_hi = idx_lo + 1
    a2 = np.concatenate([a, a])
    nvec = np.tile(np.arange(n_levels, dtype=float), 2)

    rng = rng_for(config.seed)
    psi = _initial_vector(params, config, rng)
    psi = psi / np.linalg.norm(psi)
    r = rng.random()
    while r == 0.0:
        r = rng.random()

    n_burn = int(round(config.burn_in / config.sample_interval))
    n_samples = int(math.floor(config.duration / config.sample_interval + 1e-9))
    total_blocks = n_burn + n_samples
    t0 = n_burn * config.sample_interval

    ts = np.empty(n_samples + 1)
    alphas = np.empty(n_samples + 1, dtype=complex)
    nums = np.empty(n_samples + 1)
    norms = np.empty(n_samples + 1)
    clicks = []
    ring = _SnapshotRing(max(2, int(math.ceil(config.snapshot_window / config.sample_interval)) + 1))
    snapshots = {}
    pins = sorted(float(p) for p in pin_times)
    warned = [False]
    norm_since_click = 1.0

    def jump(v):
        out = np.zeros_like(v)
        for off in (0, n_levels):
            out[off:off + n_levels - 1] = a * v[off + 1:off + n_levels]
        return out / np.linalg.norm(out)

    def observe(k, t, v, ncl):
        al = complex(np.vdot(v[idx_lo], a2 * v[idx_hi]))
        pop = v.real ** 2 + v.imag ** 2
        ts[k], alphas[k], nums[k], norms[k] = t, al, float(pop @ nvec), ncl
        if not warned[0] and pop[top].sum() > 1e-8:
            warned[0] = True
            warnings.warn(
                f"top Fock level population exceeds 1e-8 at t={t:.4g}; raise n_max",
                RuntimeWarning, stacklevel=3,
            )
        if config.store_snapshots:
            snapshots[t] = PureStateVector(v)
        ring.push(t, v)
        while pins and pins[0] <= t + 0.5 * config.sample_interval:
            tp = pins.pop(0)
            ts_, vs_ = ring.nearest(tp)
            snapshots[ts_] = PureStateVector(vs_)
        if monitor is not None:
            for tp in monitor.update(t, al) or ():
                found = ring.nearest(tp)
                if found is not None:
                    snapshots[found[0]] = PureStateVector(found[1])
        return al

    def advance(v, h, t_start, r, ncl):
        """Evolve ``v`` (unit norm) over ``h``, handling any clicks inside."""
        while h > 0:
            # the RK4 step over s is sum_k s^k M^k v / k!, so its squared
            # norm is a quartic form in s and the click time costs no matvecs
            u = np.empty((5, v.size), dtype=complex)
            u[0] = v
            for j in range(1, 5):
                u[j] = m @ u[j - 1]
            gram = (u.conj() @ u.T).real

            def coeffs(x):
                return np.array([1.0, x, x * x / 2, x ** 3 / 6, x ** 4 / 24])

            c = coeffs(h)
            n2 = float(c @ gram @ c)
            if not (n2 > 0 and np.isfinite(n2)):
                raise NormUnderflowError(f"norm underflow at t={t_start:.6g}; reduce dt")
            if n2 > r:
                return (c @ u) / math.sqrt(n2), r / n2, ncl * n2
            lo, hi = 0.0, h
            while hi - lo > 1e-3 * config.dt:
                mid = 0.5 * (lo + hi)
                c = coeffs(mid)
                if float(c @ gram @ c) > r:
                    lo = mid
                else:
                    hi = mid
            w = coeffs(hi) @ u
            t_click = t_start + hi
            if t_click >= t0:
                clicks.append(t_click - t0)
            v = jump(w)
            ncl = 1.0
            r = rng.random()
            while r == 0.0:
                r = rng.random()
            t_start += hi
            h -= hi
        return v, r, ncl

    def fine_steps(v, t_start, count, r, ncl):
        """``count`` steps of ``dt`` from ``t_start``, taking the largest
        power of the step that ends before the next click."""
        top = len(powers) - 1
        j = top
        done = 0
        while done < count:
            while (1 << j) > count - done:
                j -= 1
            nxt = powers[j] @ v
            n2 = float(np.vdot(nxt, nxt).real)
            if n2 > r:
                v = nxt / math.sqrt(n2)
                r /= n2
                ncl *= n2
                done += 1 << j
            elif j > 0:
                j -= 1
            else:
                v, r, ncl = advance(v, config.dt, t_start + done * config.dt, r, ncl)
                done += 1
                j = top
        return v, r, ncl

    k_out = 0
    if n_burn == 0:
        observe(0, 0.0, psi, norm_since_click)
        k_out = 1
    for ib in range(total_blocks):
        t_block = ib * config.sample_interval
        nxt = block @ psi
        n2 = float(np.vdot(nxt, nxt).real)
        if n2 > r:
            psi = nxt / math.sqrt(n2)
            r /= n2
            norm_since_click *= n2
        else:
            psi, r, norm_since_click = fine_steps(psi, t_block, stride, r, norm_since_click)
        t_now = (ib + 1) * config.sample_interval
        if ib + 1 == n_burn:
            observe(0, 0.0, psi, norm_since_click)
            k_out = 1
        elif ib + 1 > n_burn:
            observe(k_out, t_now - t0, psi, norm_since_click)
            k_out += 1

    return TrajectoryRecord(
        click_times=np.asarray(clicks, dtype=float),
        t=ts[:k_out], alpha=alphas[:k_out], photon_number=nums[:k_out], norm2=norms[:k_out],
        seed=int(config.seed), sample_interval=config.sample_interval,
        n_levels=n_levels, snapshots=snapshots,
    )


def _run_one(args):
    params, config = args
    return run_trajectory(params, config)


def run_trajectories(params: JCParams, config: TrajectoryConfig, n: int, base_seed: int,
                     workers: int = 1):
    """``n`` independent trajectories; trajectory ``i`` uses
    ``derive_seed(base_seed, i)``. Output order is by index."""
    jobs = [(params, replace(config, seed=derive_seed(base_seed, i))) for i in range(n)]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs, chunksize=max(1, n // (4 * workers))))


def conditioned_q_snapshot(record: TrajectoryRecord, t: float, grid, *, normalized=False) -> QGrid:
    """Q function of the stored conditioned state nearest to ``t``.

    The returned grid's ``time`` is the snapshot time actually used.
    """
    if not record.snapshots:
        raise LookupError("record holds no snapshots")
    ts = min(record.snapshots, key=lambda s: abs(s - t))
    if abs(ts - t) > record.sample_interval * (1 + 1e-9):
        raise LookupError(f"no snapshot within one sample interval of t={t}")
    blocks = record.snapshots[ts].amplitudes.reshape(2, record.n_levels)
    return q_function_pure(blocks, grid, normalized=normalized, time=ts)
