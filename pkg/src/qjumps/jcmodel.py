"""Driven, damped Jaynes-Cummings model: semiclassical roots, master equation,
steady state and Husimi Q function.

All rates are in units of the cavity field decay rate kappa and times in
units of 1/kappa. The master equation is

    d rho/dt = -i[H, rho] + 2 D[a] rho,
    H = -dw (a^dag a + s+ s-) + i g (a^dag s- - a s+) + eps a^dag + eps^* a,

with ``D[x] rho = x rho x^dag - (x^dag x rho + rho x^dag x)/2``.
"""

from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage
from scipy.optimize import bisect, minimize_scalar

from .fock import (
    DensityMatrix,
    HilbertConfig,
    SparseOperator,
    annihilation,
    number,
    sigma_minus,
)

__all__ = [
    "JCParams",
    "SemiclassicalRoots",
    "NeoclassicalError",
    "SteadyStateError",
    "AdiabaticReport",
    "GridSpec",
    "QGrid",
    "saturation_photon_number",
    "solve_neoclassical",
    "bistable_drive_range",
    "localization_time",
    "check_adiabatic_conditions",
    "default_cutoff",
    "build_hamiltonian",
    "liouvillian",
    "steady_state",
    "integrate_master_equation",
    "reduced_cavity_dm",
    "q_function",
    "q_function_pure",
    "find_peaks",
    "default_grid",
]


class NeoclassicalError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class SteadyStateError(RuntimeError):
    def __init__(self, message, residuals=()):
        super().__init__(message)
        self.residuals = list(residuals)


@dataclass(frozen=True)
class JCParams:
    g_over_k: float
    drive: complex
    detuning: float
    hilbert: HilbertConfig

    def __post_init__(self):
        # g = 0 is allowed so the decoupled linear cavity can serve as an oracle
        if self.g_over_k < 0:
            raise ValueError("g_over_k must be non-negative")
        if not self.hilbert.include_atom:
            raise ValueError("JCParams requires a Hilbert space with the atom factor")
        object.__setattr__(self, "drive", complex(self.drive))
        object.__setattr__(self, "detuning", float(self.detuning))
        object.__setattr__(self, "g_over_k", float(self.g_over_k))

    @classmethod
    def auto(cls, g_over_k, drive, detuning, n_max=None) -> "JCParams":
        """Build parameters with the default photon-number cutoff."""
        if n_max is None:
            n_max = default_cutoff(g_over_k, drive, detuning)
        return cls(g_over_k, drive, detuning, HilbertConfig(n_max, include_atom=True))


@dataclass(frozen=True)
class SemiclassicalRoots:
    """Neoclassical amplitudes ordered by decreasing modulus.

    With three roots they are the bright, unstable and dim states. Roots of
    the opposite sign choice in the nonlinear term (atom following the upper
    dressed state) are kept apart in ``other_branch``.
    """

    roots: tuple
    branch: tuple
    residuals: tuple
    other_branch: tuple = ()

    @property
    def bistable(self) -> bool:
        return len(self.roots) == 3

    @property
    def bright(self) -> complex:
        return self.roots[0]

    @property
    def unstable(self) -> complex:
        if not self.bistable:
            raise ValueError("no unstable root outside the bistable regime")
        return self.roots[1]

    @property
    def dim(self) -> complex:
        return self.roots[-1]

    @property
    def labels(self) -> tuple:
        return ("B", "U", "D") if self.bistable else ("S",) * len(self.roots)

    def to_json(self) -> str:
        return json.dumps(
            {
                "roots": [
                    {
                        "label": lab,
                        "re": z.real,
                        "im": z.imag,
                        "branch": br,
                        "residual": res,
                    }
                    for lab, z, br, res in zip(self.labels, self.roots, self.branch, self.residuals)
                ],
                "other_branch": [[z.real, z.imag] for z in self.other_branch],
            }
        )


def saturation_photon_number(params) -> float:
    g = params.g_over_k if isinstance(params, JCParams) else float(params)
    return (g / 2.0) ** 2


def _effective_detuning(m, g, dw, sign):
    # dressed-state shift g^2 / sqrt(dw^2 + 4 g^2 |alpha|^2); sign=-1 is the
    # upper sign of "-/+", the atom in the ground-connected dressed state
    return dw + sign * np.sign(dw) * g**2 / np.sqrt(dw**2 + 4.0 * g**2 * m)


def _amplitude(m, eps, g, dw, sign):
    return -1j * eps / (1.0 - 1j * _effective_detuning(m, g, dw, sign))


def _residual(alpha, eps, g, dw, sign):
    return abs(alpha - _amplitude(abs(alpha) ** 2, eps, g, dw, sign))


def solve_neoclassical(params: JCParams, n_grid: int = 4000) -> SemiclassicalRoots:
    """All steady-state amplitudes of the neoclassical equation.

    The complex fixed-point equation is reduced to the scalar condition
    ``m (1 + D(m)^2) = |eps|^2`` in ``m = |alpha|^2``, bracketed on a
    log-spaced grid and refined by bisection.
    """
    eps, g, dw = params.drive, params.g_over_k, params.detuning
    if eps == 0:
        return SemiclassicalRoots((0j,), (-1,), (0.0,))

    found = {}
    for sign in (-1, +1):
        f = lambda m, s=sign: m * (1.0 + _effective_detuning(m, g, dw, s) ** 2) - abs(eps) ** 2
        lo = 1e-6
        while f(lo) > 0 and lo > 1e-300:
            lo *= 1e-3
        hi = 4.0 * abs(eps) ** 2 * (1.0 + dw**2)
        grid = np.geomspace(lo, hi, n_grid)
        fv = f(grid)
        brackets = np.nonzero(np.sign(fv[:-1]) * np.sign(fv[1:]) <= 0)[0]
        roots = []
        for i in brackets:
            if fv[i] == 0:
                m = grid[i]
            else:
                m = bisect(f, grid[i], grid[i + 1], xtol=1e-300, rtol=1e-12, maxiter=400)
            alpha = complex(_amplitude(m, eps, g, dw, sign))
            res = _residual(alpha, eps, g, dw, sign)
            if res >= 1e-8:
                raise NeoclassicalError(
                    "root failed the residual check",
                    {"branch": sign, "bracket": (grid[i], grid[i + 1]), "residual": res},
                )
            if all(abs(alpha - r) > 1e-6 for r, _ in roots):
                roots.append((alpha, res))
        found[sign] = roots

    if not found[-1]:
        raise NeoclassicalError("no root found", {"grid": (lo, hi), "n_grid": n_grid})
    main = sorted(found[-1], key=lambda p: -abs(p[0]))
    others = tuple(
        z for z, _ in found[+1] if all(abs(z - r) > 1e-6 for r, _ in main)
    )
    return SemiclassicalRoots(
        roots=tuple(z for z, _ in main),
        branch=(-1,) * len(main),
        residuals=tuple(r for _, r in main),
        other_branch=others,
    )


def bistable_drive_range(g_over_k: float, detuning: float, n_grid: int = 4000):
    """Interval of ``|eps|`` over which the neoclassical equation has three
    roots, or None when there is none.

    The edges are the local extrema of ``m (1 + D(m)^2)`` on the main branch.
    """
    g, dw = float(g_over_k), float(detuning)
    if g <= 0:
        return None
    f = lambda m: m * (1.0 + _effective_detuning(m, g, dw, -1) ** 2)
    m = np.geomspace(1e-6, 1e6, n_grid)
    fv = f(m)
    d = np.sign(np.diff(fv))
    turns = np.nonzero(d[:-1] * d[1:] < 0)[0] + 1
    if len(turns) < 2:
        return None
    i_max, i_min = turns[0], turns[1]
    top = minimize_scalar(lambda x: -f(x), bounds=(m[i_max - 1], m[i_max + 1]), method="bounded",
                          options={"xatol": 1e-12 * m[i_max]})
    bot = minimize_scalar(f, bounds=(m[i_min - 1], m[i_min + 1]), method="bounded",
                          options={"xatol": 1e-12 * m[i_min]})
    return math.sqrt(f(bot.x)), math.sqrt(f(top.x))


def default_cutoff(g_over_k, drive, detuning) -> int:
    """``ceil(|a|^2 + 8|a|)`` for the largest semiclassical amplitude, at least 10."""
    hc = HilbertConfig(1, include_atom=True)
    if g_over_k > 0:
        roots = solve_neoclassical(JCParams(g_over_k, drive, detuning, hc))
        amax = max(abs(z) for z in roots.roots)
    else:
        amax = abs(drive) / math.hypot(1.0, detuning)
    return max(10, math.ceil(amax**2 + 8 * amax))


def localization_time(alpha1: complex, alpha2: complex) -> float:
    """Lower bound on the coherent-localization time (units of 1/kappa)."""
    a1, a2 = abs(alpha1), abs(alpha2)
    if a1 <= a2:
        raise ValueError("requires |alpha1| > |alpha2|")
    arg = a2 / (a1**2 - a2 * (a2 - 1.0))
    if arg <= 0 or not np.isfinite(arg):
        raise ValueError(f"invalid regime: logarithm argument {arg}")
    return float(-math.log(arg) / (a1**2 - a2**2))


@dataclass(frozen=True)
class AdiabaticReport:
    checks: dict
    values: dict

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def check_adiabatic_conditions(
    kp_over_k: float, kp_over_gp: float, params: JCParams, *,
    ratio: float = 20.0, coupling_limit: float = 0.05,
) -> AdiabaticReport:
    """Validity of eliminating the auxiliary cavity.

    ``>>`` is read as a ratio of at least ``ratio``; ``<< 1`` as at most
    ``coupling_limit``.
    """
    coupling = kp_over_k / kp_over_gp**2  # g'^2/(kappa kappa')
    values = {"kp_over_k": kp_over_k, "kp_over_gp": kp_over_gp, "coupling": coupling}
    checks = {
        "kp_much_greater_k": kp_over_k >= ratio,
        "kp_much_greater_gp": kp_over_gp >= ratio,
        "weak_coupling": coupling <= coupling_limit,
    }
    if params.drive != 0 and params.g_over_k > 0:
        n1 = abs(solve_neoclassical(params).bright) ** 2
        bound = n1 / math.log(n1) if n1 > 1 else math.inf
        values["jump_resolution_bound"] = bound
        checks["jump_resolution"] = kp_over_k > bound
    return AdiabaticReport(checks, values)


def _ops(config: HilbertConfig):
    a = annihilation(config).csr
    sm = sigma_minus(config).csr
    return a, sm


def build_hamiltonian(params: JCParams) -> SparseOperator:
    a, sm = _ops(params.hilbert)
    ad, sp_ = a.conj().T, sm.conj().T
    g, eps, dw = params.g_over_k, params.drive, params.detuning
    h = (
        -dw * (ad @ a + sp_ @ sm)
        + 1j * g * (ad @ sm - a @ sp_)
        + eps * ad
        + np.conj(eps) * a
    )
    op = SparseOperator(h)
    if not op.is_hermitian(1e-12):
        raise AssertionError("Hamiltonian is not Hermitian")
    return op


def liouvillian(params: JCParams) -> sp.csr_matrix:
    """Matrix of the master equation acting on row-major ``vec(rho)``."""
    h = build_hamiltonian(params).csr
    a, _ = _ops(params.hilbert)
    c = np.sqrt(2.0) * a
    cdc = (c.conj().T @ c).tocsr()
    eye = sp.identity(h.shape[0], dtype=complex, format="csr")
    # row-major vec: vec(A X B) = kron(A, B^T) vec(X)
    lv = (
        -1j * (sp.kron(h, eye) - sp.kron(eye, h.T))
        + sp.kron(c, c.conj())
        - 0.5 * sp.kron(cdc, eye)
        - 0.5 * sp.kron(eye, cdc.T)
    )
    return lv.tocsr()


def steady_state(params: JCParams, *, memory_budget: int = 2_000_000, tol: float = 1e-10) -> DensityMatrix:
    """Null vector of the Liouvillian with unit trace.

    Uses a sparse direct solve with the trace condition in place of the
    first equation. When the Liouvillian has more rows than
    ``memory_budget`` the state is relaxed by long-time integration instead.
    """
    dim = params.hilbert.dimension
    lv = liouvillian(params)
    if dim * dim <= memory_budget:
        mat = lv.tolil()
        trace_row = np.zeros(dim * dim, dtype=complex)
        trace_row[:: dim + 1] = 1.0
        mat[0, :] = trace_row
        rhs = np.zeros(dim * dim, dtype=complex)
        rhs[0] = 1.0
        x = spla.spsolve(mat.tocsc(), rhs)
        residuals = [float(np.linalg.norm(lv @ x))]
    else:
        x, residuals = _relax(lv, dim, tol)
    rho = x.reshape(dim, dim)
    rho = 0.5 * (rho + rho.conj().T)
    rho /= np.trace(rho).real
    res = float(np.linalg.norm(lv @ rho.ravel()))
    residuals.append(res)
    if not res < tol:
        raise SteadyStateError(f"steady-state residual {res:.3g} exceeds {tol:.1g}", residuals)
    return DensityMatrix(rho)


def _relax(lv, dim, tol, t_step=5.0, max_steps=400):
    rho = np.zeros((dim, dim), dtype=complex)
    rho[0, 0] = 1.0
    x = rho.ravel()
    history = []
    for _ in range(max_steps):
        x = spla.expm_multiply(lv * t_step, x)
        x = x / x[:: dim + 1].sum()
        res = float(np.linalg.norm(lv @ x))
        history.append(res)
        if res < tol:
            return x, history
    raise SteadyStateError("long-time integration did not converge", history)


def integrate_master_equation(params: JCParams, rho0, times, observables=()):
    """Density matrices (or expectation values) at ``times``.

    ``rho0`` is a ``DensityMatrix`` or a dense array; ``times`` must be
    non-decreasing and start at or after 0. When ``observables`` is given,
    returns an array ``(len(times), len(observables))`` of expectations
    instead of the matrices.
    """
    lv = liouvillian(params)
    dim = params.hilbert.dimension
    rho = rho0.elements if isinstance(rho0, DensityMatrix) else np.asarray(rho0, dtype=complex)
    x = rho.ravel().astype(complex)
    times = np.asarray(times, dtype=float)
    if np.any(np.diff(times) < 0) or times[0] < 0:
        raise ValueError("times must be non-decreasing and non-negative")
    ops = [o.csr if isinstance(o, SparseOperator) else sp.csr_matrix(o) for o in observables]
    out = []
    t_prev = 0.0
    for t in times:
        if t > t_prev:
            x = spla.expm_multiply(lv * (t - t_prev), x)
            t_prev = t
        r = x.reshape(dim, dim)
        if ops:
            out.append([complex(o.T.multiply(r).sum()) for o in ops])
        else:
            out.append(r.copy())
    return np.array(out)


def reduced_cavity_dm(rho: DensityMatrix) -> DensityMatrix:
    """Trace out the atom: ``<+|rho|+> + <-|rho|->``."""
    dim = rho.dimension
    if dim % 2:
        raise ValueError(f"composite dimension must be even, got {dim}")
    n = dim // 2
    r = rho.elements
    return DensityMatrix(r[:n, :n] + r[n:, n:], check=False)


# ---------------------------------------------------------------- Q function


@dataclass(frozen=True)
class GridSpec:
    x_min: float
    x_max: float
    y_min: float
    y_max: float
    spacing: float = 0.05

    def axes(self):
        nx = int(round((self.x_max - self.x_min) / self.spacing)) + 1
        ny = int(round((self.y_max - self.y_min) / self.spacing)) + 1
        return (
            self.x_min + self.spacing * np.arange(nx),
            self.y_min + self.spacing * np.arange(ny),
        )


def default_grid(amplitudes, spacing: float = 0.05, margin: float = 3.0) -> GridSpec:
    z = np.asarray(list(amplitudes), dtype=complex)
    return GridSpec(
        float(z.real.min() - margin), float(z.real.max() + margin),
        float(z.imag.min() - margin), float(z.imag.max() + margin),
        spacing,
    )


@dataclass(frozen=True, eq=False)
class QGrid:
    """``values[iy, ix]`` is Q at ``x_axis[ix] + i y_axis[iy]``."""

    x_axis: np.ndarray
    y_axis: np.ndarray
    values: np.ndarray
    normalized: bool = False
    time: float | None = field(default=None)

    @property
    def cell_area(self) -> float:
        return float((self.x_axis[1] - self.x_axis[0]) * (self.y_axis[1] - self.y_axis[0]))

    def integral(self) -> float:
        return float(self.values.sum() * self.cell_area)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "value"])
            for iy, y in enumerate(self.y_axis):
                for ix, x in enumerate(self.x_axis):
                    w.writerow([repr(float(x)), repr(float(y)), repr(float(self.values[iy, ix]))])

    def to_binary(self, path):
        """JSON header line followed by the row-major float64 payload."""
        header = {
            "x_min": float(self.x_axis[0]), "x_step": float(self.x_axis[1] - self.x_axis[0]),
            "nx": int(self.x_axis.size),
            "y_min": float(self.y_axis[0]), "y_step": float(self.y_axis[1] - self.y_axis[0]),
            "ny": int(self.y_axis.size),
            "normalized": self.normalized, "time": self.time, "dtype": "<f8", "order": "C",
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())

    @classmethod
    def from_binary(cls, path) -> "QGrid":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
            payload = fh.read()
        vals = np.frombuffer(payload, dtype="<f8").reshape(header["ny"], header["nx"]).copy()
        x = header["x_min"] + header["x_step"] * np.arange(header["nx"])
        y = header["y_min"] + header["y_step"] * np.arange(header["ny"])
        return cls(x, y, vals, header["normalized"], header["time"])


def _coherent_overlaps(beta: np.ndarray, n_levels: int) -> np.ndarray:
    """``<n|beta>`` for n < n_levels, shape (n_levels, beta.size)."""
    out = np.empty((n_levels, beta.size), dtype=complex)
    out[0] = np.exp(-0.5 * np.abs(beta) ** 2)
    for n in range(1, n_levels):
        out[n] = out[n - 1] * beta / np.sqrt(n)
    return out


def _check_mass(q: QGrid):
    integral = q.integral() * (1.0 if q.normalized else 1.0 / np.pi)
    if integral < 0.99:
        warnings.warn(
            f"Q-function grid captures only {integral:.3f} of the probability mass",
            RuntimeWarning, stacklevel=3,
        )


def q_function(rho_c, grid: GridSpec, *, normalized: bool = False, time=None) -> QGrid:
    """``Q(beta) = <beta|rho_c|beta>``; divided by pi when ``normalized``."""
    rho = rho_c.elements if isinstance(rho_c, DensityMatrix) else np.asarray(rho_c)
    x, y = grid.axes()
    n_levels = rho.shape[0]
    vals = np.empty((y.size, x.size))
    for iy, yy in enumerate(y):
        c = _coherent_overlaps(x + 1j * yy, n_levels)
        vals[iy] = np.einsum("nk,nm,mk->k", c.conj(), rho, c).real
    if normalized:
        vals /= np.pi
    q = QGrid(x, y, vals, normalized, time)
    _check_mass(q)
    return q


def q_function_pure(cavity_blocks: np.ndarray, grid: GridSpec, *, normalized=False, time=None) -> QGrid:
    """Q function of a pure composite state given as ``(n_atom, n_levels)`` blocks."""
    blocks = np.atleast_2d(cavity_blocks)
    blocks = blocks / np.linalg.norm(blocks)
    x, y = grid.axes()
    bx, by = np.meshgrid(x, y)
    beta = (bx + 1j * by).ravel()
    c = _coherent_overlaps(beta, blocks.shape[1])
    vals = np.sum(np.abs(blocks.conj() @ c) ** 2, axis=0).reshape(y.size, x.size)
    if normalized:
        vals /= np.pi
    q = QGrid(x, y, vals, normalized, time)
    _check_mass(q)
    return q


def _parabolic_offset(fm, f0, fp):
    den = fm - 2.0 * f0 + fp
    if den >= 0:
        return 0.0, f0
    off = 0.5 * (fm - fp) / den
    return off, f0 - 0.25 * (fm - fp) * off


def find_peaks(grid: QGrid, min_height_fraction: float = 0.2):
    """Strict 3x3 local maxima above ``min_height_fraction`` of the global
    maximum, refined by a separable quadratic fit. Sorted by height.

    Boundary cells have no full neighbourhood and are never peaks; a state
    whose mass runs off the grid needs a wider grid.
    """
    v = np.asarray(grid.values, dtype=float)
    if v.size == 0:
        raise ValueError("empty grid")
    fp = np.ones((3, 3), bool)
    fp[1, 1] = False
    neigh = ndimage.maximum_filter(v, footprint=fp, mode="constant", cval=np.inf)
    vmax = v.max()
    mask = (v > neigh) & (v >= min_height_fraction * vmax)
    dx = grid.x_axis[1] - grid.x_axis[0] if grid.x_axis.size > 1 else 0.0
    dy = grid.y_axis[1] - grid.y_axis[0] if grid.y_axis.size > 1 else 0.0
    peaks = []
    for iy, ix in zip(*np.nonzero(mask)):
        ox = oy = 0.0
        h = v[iy, ix]
        hx = hy = h
        if 0 < ix < v.shape[1] - 1:
            ox, hx = _parabolic_offset(v[iy, ix - 1], h, v[iy, ix + 1])
        if 0 < iy < v.shape[0] - 1:
            oy, hy = _parabolic_offset(v[iy - 1, ix], h, v[iy + 1, ix])
        pos = complex(grid.x_axis[ix] + ox * dx, grid.y_axis[iy] + oy * dy)
        peaks.append((pos, float(hx + hy - h)))
    peaks.sort(key=lambda p: -p[1])
    return peaks
