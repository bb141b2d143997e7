import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qjumps.fock import (
    DensityMatrix,
    HilbertConfig,
    PureStateVector,
    SparseOperator,
    annihilation,
    cavity_density_matrix,
    coherent_state,
    creation,
    expectation,
    fock_state,
    identity,
    number,
    quadrature,
    sigma_minus,
    sigma_plus,
)

amplitudes = st.complex_numbers(max_magnitude=3.0, allow_nan=False, allow_infinity=False)


def test_annihilation_lowers_one_photon():
    cfg = HilbertConfig(2, include_atom=False)
    a = annihilation(cfg).toarray()
    out = a @ fock_state(1, cfg).amplitudes
    np.testing.assert_allclose(out, fock_state(0, cfg).amplitudes, atol=0)


def test_annihilation_kills_vacuum():
    cfg = HilbertConfig(4)
    out = annihilation(cfg).toarray() @ fock_state(0, cfg, atom=1).amplitudes
    assert not np.any(out)


@pytest.mark.parametrize("atom", [False, True])
def test_commutator_is_identity_below_cutoff(atom):
    cfg = HilbertConfig(6, include_atom=atom)
    a, ad = annihilation(cfg).toarray(), creation(cfg).toarray()
    comm = a @ ad - ad @ a
    expected = np.eye(cfg.dimension)
    for atom_index in range(2 if atom else 1):
        top = cfg.index(cfg.n_max, atom_index)
        expected[top, top] = -cfg.n_max
    np.testing.assert_allclose(comm, expected, atol=1e-12)


def test_number_operator_is_exact_on_fock_states():
    cfg = HilbertConfig(9)
    n = number(cfg).toarray()
    for atom in (0, 1):
        for k in range(cfg.n_max):
            v = fock_state(k, cfg, atom).amplitudes
            assert np.array_equal(n @ v, k * v)


def test_basis_ordering():
    cfg = HilbertConfig(4)
    assert cfg.dimension == 10
    assert cfg.index(3, 0) == 3
    assert cfg.index(3, 1) == 8


def test_pauli_algebra():
    cfg = HilbertConfig(3)
    sm, sp = sigma_minus(cfg).toarray(), sigma_plus(cfg).toarray()
    np.testing.assert_allclose(sm @ sp + sp @ sm, np.eye(cfg.dimension), atol=0)
    assert not np.any(sm @ sm)
    up = fock_state(2, cfg, atom=1)
    assert expectation(sigma_plus(cfg), PureStateVector(sm @ up.amplitudes)) == 0
    assert expectation(SparseOperator(sp @ sm), up) == pytest.approx(1.0)


def test_sigma_requires_atom():
    with pytest.raises(ValueError):
        sigma_minus(HilbertConfig(3, include_atom=False))


def test_invalid_cutoff():
    with pytest.raises(ValueError):
        HilbertConfig(0)


def test_coherent_vacuum_is_exact():
    cfg = HilbertConfig(5, include_atom=False)
    assert np.array_equal(coherent_state(0, cfg).amplitudes, fock_state(0, cfg).amplitudes)


def test_coherent_deficiency_at_jump_amplitude():
    cfg = HilbertConfig(120, include_atom=False)
    _, deficiency = coherent_state(1.95 - 5.45j, cfg, return_deficiency=True)
    # Poisson tail summed directly in log space
    m = abs(1.95 - 5.45j) ** 2
    k = np.arange(121, 400)
    tail = np.exp(-m + k * math.log(m) - np.array([math.lgamma(j + 1) for j in k])).sum()
    assert deficiency < 1e-10
    assert deficiency == pytest.approx(tail, rel=1e-3, abs=1e-16)


def test_coherent_rejects_heavy_truncation():
    with pytest.raises(ValueError):
        coherent_state(5.0, HilbertConfig(10, include_atom=False))


@given(amplitudes)
@settings(max_examples=40, deadline=None)
def test_coherent_state_is_poissonian(alpha):
    cfg = HilbertConfig(60, include_atom=False)
    c = coherent_state(alpha, cfg).amplitudes
    m = abs(alpha) ** 2
    n = np.arange(61)
    lg = np.array([math.lgamma(k + 1) for k in n])
    with np.errstate(divide="ignore"):
        poisson = np.exp(-m + n * np.log(m) - lg) if m > 0 else (n == 0).astype(float)
    np.testing.assert_allclose(np.abs(c) ** 2, poisson, atol=1e-12)
    state = PureStateVector(c)
    assert expectation(number(cfg), state).real == pytest.approx(m, abs=1e-9)
    assert expectation(annihilation(cfg), state) == pytest.approx(alpha, abs=1e-9)


@pytest.mark.parametrize("x", [-2.0, 0.0, 0.7, 3.1])
def test_quadrature_zero_on_real_coherent(x):
    cfg = HilbertConfig(50)
    assert expectation(quadrature(cfg, 0.0), coherent_state(x, cfg)).real == pytest.approx(x, abs=1e-12)


def test_quadrature_half_pi_reads_imaginary_part():
    cfg = HilbertConfig(50, include_atom=False)
    assert expectation(quadrature(cfg, math.pi / 2), coherent_state(1.5j, cfg)).real == pytest.approx(1.5)


def test_identity_expectation_is_one():
    cfg = HilbertConfig(8)
    rng = np.random.default_rng(0)
    v = rng.normal(size=cfg.dimension) + 1j * rng.normal(size=cfg.dimension)
    # unnormalized input is handled
    assert expectation(identity(cfg), PureStateVector(v)) == pytest.approx(1.0)


def test_expectation_dimension_mismatch():
    with pytest.raises(ValueError):
        expectation(number(HilbertConfig(3)), coherent_state(0.5, HilbertConfig(4)))


def test_partial_trace_preserves_photon_number():
    cfg = HilbertConfig(12)
    cav = HilbertConfig(12, include_atom=False)
    rng = np.random.default_rng(3)
    v = rng.normal(size=cfg.dimension) + 1j * rng.normal(size=cfg.dimension)
    state = PureStateVector(v).normalized()
    rho_c = DensityMatrix(cavity_density_matrix(state, cfg))
    assert expectation(number(cav), rho_c) == pytest.approx(expectation(number(cfg), state), abs=1e-12)


def test_canonical_form_prunes_zeros():
    op = SparseOperator.from_entries(3, [(0, 1, 1.0), (1, 2, 0.0)])
    assert op.canonical().entries() == [(0, 1, 1.0 + 0j)]
    assert op.canonical() == SparseOperator.from_entries(3, [(0, 1, 1.0)])


def test_operator_json_round_trip():
    op = annihilation(HilbertConfig(3))
    back = SparseOperator.from_json(op.to_json())
    assert back == op
    state = coherent_state(0.3 - 0.2j, HilbertConfig(10))
    np.testing.assert_array_equal(PureStateVector.from_json(state.to_json()).amplitudes, state.amplitudes)


def test_density_matrix_validation():
    with pytest.raises(ValueError):
        DensityMatrix(np.array([[1.0, 0.5], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        DensityMatrix(np.diag([0.7, 0.7]))
