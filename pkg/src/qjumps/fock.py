"""Truncated Fock space and two-level atom operator algebra.

Basis ordering for the composite space is fixed:
``index = atom_index * (n_max + 1) + n`` with ``atom_index`` 0 for the lower
atomic state ``|->`` and 1 for the upper state ``|+>``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

__all__ = [
    "HilbertConfig",
    "SparseOperator",
    "PureStateVector",
    "DensityMatrix",
    "annihilation",
    "creation",
    "number",
    "identity",
    "sigma_minus",
    "sigma_plus",
    "quadrature",
    "coherent_state",
    "fock_state",
    "expectation",
    "cavity_density_matrix",
]


@dataclass(frozen=True)
class HilbertConfig:
    n_max: int
    include_atom: bool = True

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max!r}")

    @property
    def n_levels(self) -> int:
        return self.n_max + 1

    @property
    def dimension(self) -> int:
        return 2 * self.n_levels if self.include_atom else self.n_levels

    def index(self, n: int, atom: int = 0) -> int:
        if not 0 <= n <= self.n_max:
            raise IndexError(f"photon number {n} outside 0..{self.n_max}")
        if self.include_atom:
            return atom * self.n_levels + n
        if atom:
            raise IndexError("config has no atom factor")
        return n


class SparseOperator:
    """Immutable sparse complex operator on a finite-dimensional space.

    Backed by a CSR matrix. Equality compares canonical forms (duplicates
    summed, explicit zeros pruned).
    """

    __slots__ = ("_m",)

    def __init__(self, matrix):
        m = sp.csr_matrix(matrix, dtype=complex)
        if m.shape[0] != m.shape[1]:
            raise ValueError(f"operator must be square, got shape {m.shape}")
        m.sum_duplicates()
        m.sort_indices()
        self._m = m

    @classmethod
    def from_entries(cls, dimension: int, entries) -> "SparseOperator":
        entries = list(entries)
        if not entries:
            return cls(sp.csr_matrix((dimension, dimension), dtype=complex))
        rows, cols, vals = zip(*entries)
        seen = set()
        for r, c in zip(rows, cols):
            if not (0 <= r < dimension and 0 <= c < dimension):
                raise IndexError(f"entry ({r}, {c}) outside dimension {dimension}")
            if (r, c) in seen:
                raise ValueError(f"duplicate entry ({r}, {c})")
            seen.add((r, c))
        m = sp.coo_matrix(
            (np.asarray(vals, dtype=complex), (rows, cols)), shape=(dimension, dimension)
        )
        return cls(m)

    @property
    def dimension(self) -> int:
        return self._m.shape[0]

    @property
    def matrix(self) -> sp.csr_matrix:
        """A copy of the underlying CSR matrix."""
        return self._m.copy()

    @property
    def csr(self) -> sp.csr_matrix:
        # shared, do not mutate
        return self._m

    def entries(self):
        coo = self._m.tocoo()
        return [(int(r), int(c), complex(v)) for r, c, v in zip(coo.row, coo.col, coo.data)]

    def canonical(self) -> "SparseOperator":
        m = self._m.copy()
        m.eliminate_zeros()
        return SparseOperator(m)

    def toarray(self) -> np.ndarray:
        return self._m.toarray()

    def dag(self) -> "SparseOperator":
        return SparseOperator(self._m.conj().T)

    def is_hermitian(self, atol: float = 1e-12) -> bool:
        diff = self._m - self._m.conj().T
        return diff.nnz == 0 or float(np.max(np.abs(diff.data))) < atol

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            self._check_dim(other.dimension)
            return SparseOperator(self._m @ other._m)
        if isinstance(other, PureStateVector):
            self._check_dim(other.dimension)
            return PureStateVector(self._m @ other.amplitudes)
        return self._m @ other

    def __add__(self, other):
        if isinstance(other, SparseOperator):
            self._check_dim(other.dimension)
            return SparseOperator(self._m + other._m)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, SparseOperator):
            self._check_dim(other.dimension)
            return SparseOperator(self._m - other._m)
        return NotImplemented

    def __neg__(self):
        return SparseOperator(-self._m)

    def __mul__(self, scalar):
        if np.isscalar(scalar):
            return SparseOperator(self._m * scalar)
        return NotImplemented

    __rmul__ = __mul__

    def __eq__(self, other):
        if not isinstance(other, SparseOperator):
            return NotImplemented
        if self.dimension != other.dimension:
            return False
        return (self.canonical()._m != other.canonical()._m).nnz == 0

    __hash__ = None

    def __repr__(self):
        return f"SparseOperator(dimension={self.dimension}, nnz={self._m.nnz})"

    def _check_dim(self, dim):
        if dim != self.dimension:
            raise ValueError(f"dimension mismatch: {self.dimension} vs {dim}")

    def to_json(self) -> str:
        entries = [[r, c, v.real, v.imag] for r, c, v in self.canonical().entries()]
        return json.dumps({"dimension": self.dimension, "entries": entries})

    @classmethod
    def from_json(cls, text: str) -> "SparseOperator":
        obj = json.loads(text)
        entries = [(int(r), int(c), complex(re, im)) for r, c, re, im in obj["entries"]]
        return cls.from_entries(int(obj["dimension"]), entries)


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=complex, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PureStateVector:
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = _readonly(np.ravel(self.amplitudes))
        object.__setattr__(self, "amplitudes", amps)
        nrm = np.linalg.norm(amps)
        if not np.isfinite(nrm) or nrm <= 0:
            raise ValueError("state norm must be finite and positive")

    @property
    def dimension(self) -> int:
        return self.amplitudes.size

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    @property
    def is_normalized(self) -> bool:
        return abs(self.norm - 1.0) <= 1e-12

    def normalized(self) -> "PureStateVector":
        return PureStateVector(self.amplitudes / self.norm)

    def __eq__(self, other):
        if not isinstance(other, PureStateVector):
            return NotImplemented
        return self.dimension == other.dimension and np.array_equal(
            self.amplitudes, other.amplitudes
        )

    __hash__ = None

    def to_json(self) -> str:
        amps = [[float(z.real), float(z.imag)] for z in self.amplitudes]
        return json.dumps({"dimension": self.dimension, "amplitudes": amps})

    @classmethod
    def from_json(cls, text: str) -> "PureStateVector":
        obj = json.loads(text)
        amps = np.array([complex(re, im) for re, im in obj["amplitudes"]])
        if amps.size != int(obj["dimension"]):
            raise ValueError("amplitude count does not match dimension")
        return cls(amps)


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    """Dense density matrix. Invariants are checked unless ``check=False``."""

    elements: np.ndarray
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        rho = _readonly(self.elements)
        if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
            raise ValueError(f"density matrix must be square, got {rho.shape}")
        object.__setattr__(self, "elements", rho)
        if self.check:
            self.validate()

    def validate(self, herm_tol=1e-10, trace_tol=1e-8, eig_tol=1e-8):
        rho = self.elements
        herm = np.max(np.abs(rho - rho.conj().T)) if rho.size else 0.0
        if herm > herm_tol:
            raise ValueError(f"density matrix not Hermitian (max deviation {herm:.3g})")
        tr = np.trace(rho)
        if abs(tr - 1) > trace_tol:
            raise ValueError(f"density matrix trace {tr} != 1")
        lo = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T)).min()
        if lo < -eig_tol:
            raise ValueError(f"density matrix has negative eigenvalue {lo:.3g}")

    @property
    def dimension(self) -> int:
        return self.elements.shape[0]

    @classmethod
    def from_pure(cls, state: PureStateVector) -> "DensityMatrix":
        psi = state.normalized().amplitudes
        return cls(np.outer(psi, psi.conj()))


def annihilation(config: HilbertConfig) -> SparseOperator:
    a = sp.diags(np.sqrt(np.arange(1, config.n_levels)), 1, dtype=complex)
    if config.include_atom:
        a = sp.kron(sp.identity(2), a)
    return SparseOperator(a)


def creation(config: HilbertConfig) -> SparseOperator:
    return annihilation(config).dag()


def number(config: HilbertConfig) -> SparseOperator:
    n = sp.diags(np.arange(config.n_levels, dtype=float))
    if config.include_atom:
        n = sp.kron(sp.identity(2), n)
    return SparseOperator(n)


def identity(config: HilbertConfig) -> SparseOperator:
    return SparseOperator(sp.identity(config.dimension, dtype=complex))


def sigma_minus(config: HilbertConfig) -> SparseOperator:
    """Atomic lowering operator, sigma_-|+> = |->."""
    if not config.include_atom:
        raise ValueError("sigma_minus requires a config with the atom factor")
    lower = sp.csr_matrix(([1.0], ([0], [1])), shape=(2, 2))
    return SparseOperator(sp.kron(lower, sp.identity(config.n_levels)))


def sigma_plus(config: HilbertConfig) -> SparseOperator:
    return sigma_minus(config).dag()


def quadrature(config: HilbertConfig, theta: float) -> SparseOperator:
    """``(a e^{-i theta} + a^dag e^{i theta}) / 2``."""
    a = annihilation(config)
    ph = np.exp(-1j * theta)
    return 0.5 * (a * ph + a.dag() * np.conj(ph))


def _coherent_amplitudes(alpha: complex, n_levels: int) -> np.ndarray:
    n = np.arange(n_levels)
    if alpha == 0:
        out = np.zeros(n_levels, dtype=complex)
        out[0] = 1.0
        return out
    log_mag = -0.5 * abs(alpha) ** 2 + n * np.log(abs(alpha)) - 0.5 * gammaln(n + 1)
    return np.exp(log_mag) * np.exp(1j * n * np.angle(alpha))


def coherent_state(
    alpha: complex, config: HilbertConfig, *, max_deficiency: float = 1e-8,
    return_deficiency: bool = False,
):
    """Truncated coherent state ``|alpha>`` (atom in ``|->`` when present).

    Amplitudes are the exact Poisson amplitudes, not renormalized after
    truncation; the lost probability ``1 - ||psi||^2`` is the deficiency.
    """
    cav = _coherent_amplitudes(complex(alpha), config.n_levels)
    deficiency = max(0.0, 1.0 - float(np.sum(np.abs(cav) ** 2)))
    # the direct sum loses precision near 1; the tail sum is exact enough
    tail = _poisson_tail(abs(alpha) ** 2, config.n_levels)
    deficiency = tail if tail < 1e-6 else deficiency
    if deficiency > max_deficiency:
        raise ValueError(
            f"coherent state |{alpha}> truncated at n_max={config.n_max} "
            f"loses {deficiency:.3g} of its norm"
        )
    if config.include_atom:
        cav = np.concatenate([cav, np.zeros(config.n_levels, dtype=complex)])
    state = PureStateVector(cav)
    return (state, deficiency) if return_deficiency else state


def _poisson_tail(mean: float, start: int) -> float:
    from scipy.stats import poisson

    return float(poisson.sf(start - 1, mean)) if mean > 0 else 0.0


def fock_state(n: int, config: HilbertConfig, atom: int = 0) -> PureStateVector:
    amps = np.zeros(config.dimension, dtype=complex)
    amps[config.index(n, atom)] = 1.0
    return PureStateVector(amps)


def expectation(op: SparseOperator, state) -> complex:
    """``<psi|O|psi>/<psi|psi>`` for pure states, ``Tr(O rho)`` for density matrices."""
    if isinstance(state, PureStateVector):
        if state.dimension != op.dimension:
            raise ValueError(f"dimension mismatch: operator {op.dimension}, state {state.dimension}")
        psi = state.amplitudes
        return complex(np.vdot(psi, op.csr @ psi) / np.vdot(psi, psi))
    if isinstance(state, DensityMatrix):
        if state.dimension != op.dimension:
            raise ValueError(f"dimension mismatch: operator {op.dimension}, state {state.dimension}")
        return complex(op.csr.T.multiply(state.elements).sum())
    raise TypeError(f"unsupported state type {type(state).__name__}")


def cavity_density_matrix(state: PureStateVector, config: HilbertConfig) -> np.ndarray:
    """Partial trace over the atom of a normalized composite pure state."""
    psi = state.normalized().amplitudes
    if not config.include_atom:
        return np.outer(psi, psi.conj())
    blocks = psi.reshape(2, config.n_levels)
    return blocks.T @ blocks.conj()
