import math
import warnings

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from qjumps.fock import DensityMatrix, HilbertConfig, coherent_state, expectation, number
from qjumps.jcmodel import (
    GridSpec,
    JCParams,
    QGrid,
    bistable_drive_range,
    build_hamiltonian,
    check_adiabatic_conditions,
    default_cutoff,
    find_peaks,
    integrate_master_equation,
    localization_time,
    q_function,
    reduced_cavity_dm,
    saturation_photon_number,
    solve_neoclassical,
    steady_state,
)

FIG2 = dict(g_over_k=60.0, drive=13.5j, detuning=-8.0)


def neoclassical_rhs(alpha, eps, g, dw, sign):
    # dressed-state form of the neoclassical amplitude equation
    shift = dw + sign * math.copysign(1.0, dw) * g**2 / math.sqrt(dw**2 + 4 * g**2 * abs(alpha) ** 2)
    return -1j * eps / (1 - 1j * shift)


def small(g=10.0, drive=0j, detuning=0.0, n_max=10):
    return JCParams(g, drive, detuning, HilbertConfig(n_max))


@pytest.mark.parametrize("g, expected", [(60, 900), (2, 1)])
def test_saturation_photon_number(g, expected):
    assert saturation_photon_number(JCParams.auto(g, 1j, -1.0)) == pytest.approx(expected)


def test_saturation_photon_number_is_monotone():
    vals = [saturation_photon_number(small(g)) for g in (1, 2, 5, 10, 60)]
    assert all(a < b for a, b in zip(vals, vals[1:]))


def test_fig2_bright_root():
    roots = solve_neoclassical(JCParams.auto(**FIG2))
    assert roots.bistable
    assert abs(roots.bright - (2.082 - 4.875j)) < 5e-3
    assert abs(roots.bright) ** 2 / 4 == pytest.approx(7.025, abs=0.01)
    mods = [abs(r) for r in roots.roots]
    assert mods == sorted(mods, reverse=True)


def test_zero_drive_gives_single_zero_root():
    roots = solve_neoclassical(small())
    assert roots.roots == (0j,)
    assert not roots.bistable


def test_outside_bistability_one_root():
    lo, _ = bistable_drive_range(10.0, -4 / 3)
    roots = solve_neoclassical(JCParams.auto(10.0, 0.5 * lo * 1j, -4 / 3))
    assert len(roots.roots) == 1


@given(
    g=st.floats(20, 80),
    dw=st.floats(-10, -3),
    u=st.floats(0.05, 0.95),
)
@settings(max_examples=25, deadline=None)
def test_roots_solve_the_amplitude_equation(g, dw, u):
    rng = bistable_drive_range(g, dw)
    assume(rng is not None)
    lo, hi = rng
    eps = 1j * (lo + u * (hi - lo))
    roots = solve_neoclassical(JCParams.auto(g, eps, dw))
    assert len(roots.roots) == 3
    for alpha, sign in zip(roots.roots, roots.branch):
        assert abs(alpha - neoclassical_rhs(alpha, eps, g, dw, sign)) < 1e-8


def test_localization_time_hand_value():
    assert localization_time(3.0, 1.0) == pytest.approx(math.log(9) / 8)


def test_localization_time_fig2():
    roots = solve_neoclassical(JCParams.auto(**FIG2))
    assert localization_time(roots.bright, roots.unstable) == pytest.approx(0.106, abs=0.002)


def test_localization_time_requires_ordering():
    with pytest.raises(ValueError):
        localization_time(1.0, 3.0)


def test_localization_time_decreases_with_bright_amplitude():
    vals = [localization_time(a, 1.0) for a in np.geomspace(3, 300, 12)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-3


@given(st.floats(0, 2 * math.pi), st.floats(2.0, 8.0), st.floats(0.1, 1.5))
@settings(max_examples=30, deadline=None)
def test_localization_time_phase_invariant(phi, a1, a2):
    rot = complex(math.cos(phi), math.sin(phi))
    base = localization_time(a1, a2 * 1j)
    assert localization_time(a1 * rot, a2 * 1j * rot) == pytest.approx(base, rel=1e-12)


def test_adiabatic_fig2_passes():
    rep = check_adiabatic_conditions(100, 100, JCParams.auto(**FIG2))
    assert rep.passed
    assert rep.values["jump_resolution_bound"] == pytest.approx(28.1 / math.log(28.1), abs=0.05)


def test_adiabatic_slow_meter_fails_ratio_rule():
    p = JCParams.auto(**FIG2)
    rep = check_adiabatic_conditions(5, 100, p)
    assert not rep.checks["kp_much_greater_k"]
    # the resolution bound is about 8.4, above a meter ratio of 5
    assert rep.checks["jump_resolution"] == (5 > rep.values["jump_resolution_bound"])


def test_adiabatic_equal_coupling_fails():
    rep = check_adiabatic_conditions(100, 1, JCParams.auto(**FIG2))
    assert not rep.checks["kp_much_greater_gp"]


def test_default_cutoff_rule():
    roots = solve_neoclassical(JCParams.auto(**FIG2))
    a = abs(roots.bright)
    assert default_cutoff(**FIG2) == math.ceil(a**2 + 8 * a)


def test_hamiltonian_doublets():
    g, n_max = 3.0, 10
    h = build_hamiltonian(small(g, n_max=n_max))
    assert h.is_hermitian(1e-12)
    ev = np.sort(np.linalg.eigvalsh(h.toarray()))
    n = np.arange(1, n_max + 1)
    # ground state and the uncoupled top level stay at zero
    expected = np.sort(np.concatenate([g * np.sqrt(n), -g * np.sqrt(n), [0.0, 0.0]]))
    np.testing.assert_allclose(ev, expected, atol=1e-10)


def test_hamiltonian_uncoupled_is_diagonal():
    dw = 0.7
    p = JCParams(0.0, 0j, dw, HilbertConfig(6))
    h = build_hamiltonian(p).toarray()
    assert np.count_nonzero(h - np.diag(np.diag(h))) == 0
    cfg = p.hilbert
    for atom in (0, 1):
        for n in range(7):
            k = cfg.index(n, atom)
            assert h[k, k].real == pytest.approx(-dw * (n + atom))


def test_hamiltonian_is_hermitian_with_drive():
    h = build_hamiltonian(JCParams.auto(**FIG2)).toarray()
    assert np.max(np.abs(h - h.conj().T)) < 1e-12


def test_undriven_steady_state_is_vacuum():
    p = small(5.0, detuning=-1.0, n_max=8)
    rho = steady_state(p)
    ground = np.zeros(p.hilbert.dimension)
    ground[p.hilbert.index(0, 0)] = 1.0
    np.testing.assert_allclose(rho.elements, np.outer(ground, ground), atol=1e-10)


def test_steady_state_matches_long_time_integration():
    # monostable drive so relaxation is fast
    p = JCParams.auto(10.0, 1.5j, -4 / 3)
    rho_ss = steady_state(p)
    rho0 = np.zeros((p.hilbert.dimension,) * 2, complex)
    rho0[0, 0] = 1
    n_op = number(p.hilbert)
    late = integrate_master_equation(p, rho0, [0.0, 40.0], observables=[n_op])
    assert late[-1, 0].real == pytest.approx(expectation(n_op, rho_ss).real, rel=1e-5)


def test_fig2_steady_state_photon_number():
    rho = steady_state(JCParams.auto(**FIG2))
    assert expectation(number(JCParams.auto(**FIG2).hilbert), rho).real == pytest.approx(14.65, rel=0.02)


def test_fig2_steady_state_q_function_peaks():
    p = JCParams.auto(**FIG2)
    rc = reduced_cavity_dm(steady_state(p))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        q = q_function(rc, GridSpec(-2, 5, -8, 2, 0.05))
    peaks = find_peaks(q, 0.05)
    assert len(peaks) == 2
    pos = sorted((z for z, _ in peaks), key=abs)
    assert abs(pos[0]) < 0.1
    assert abs(pos[1] - (2.05 - 4.85j)) < 0.05
    assert q.integral() == pytest.approx(math.pi, rel=0.01)


def test_reduced_dm_of_product_state():
    cav = coherent_state(0.8 - 0.3j, HilbertConfig(12, include_atom=False)).normalized().amplitudes
    atom = np.array([0.6, 0.8j])
    rho = np.outer(np.kron(atom, cav), np.kron(atom, cav).conj())
    rc = reduced_cavity_dm(DensityMatrix(rho))
    np.testing.assert_allclose(rc.elements, np.outer(cav, cav.conj()), atol=1e-15)


def test_reduced_dm_trace_and_hermiticity():
    p = JCParams.auto(10.0, 3.0j, -4 / 3)
    rc = reduced_cavity_dm(steady_state(p)).elements
    assert np.trace(rc).real == pytest.approx(1.0, abs=1e-12)
    assert np.max(np.abs(rc - rc.conj().T)) < 1e-12


def test_reduced_dm_dimension_mismatch():
    with pytest.raises(ValueError):
        reduced_cavity_dm(DensityMatrix(np.eye(7) / 7))


def test_vacuum_q_function():
    rc = DensityMatrix(np.diag([1.0] + [0.0] * 10))
    q = q_function(rc, GridSpec(-4, 4, -4, 4, 0.1))
    X, Y = np.meshgrid(q.x_axis, q.y_axis)
    np.testing.assert_allclose(q.values, np.exp(-(X**2 + Y**2)), atol=1e-12)
    assert q.integral() == pytest.approx(math.pi, rel=1e-3)
    qn = q_function(rc, GridSpec(-4, 4, -4, 4, 0.1), normalized=True)
    assert qn.integral() == pytest.approx(1.0, rel=1e-3)


def test_coherent_q_function_peaks_at_one():
    alpha = 1.2 - 0.7j
    psi = coherent_state(alpha, HilbertConfig(30, include_atom=False)).normalized().amplitudes
    q = q_function(DensityMatrix(np.outer(psi, psi.conj())), GridSpec(-2, 4, -3, 2, 0.05))
    X, Y = np.meshgrid(q.x_axis, q.y_axis)
    np.testing.assert_allclose(q.values, np.exp(-np.abs(X + 1j * Y - alpha) ** 2), atol=1e-10)
    (z, h), = find_peaks(q)
    assert abs(z - alpha) < 1e-3
    assert h == pytest.approx(1.0, abs=1e-3)


def test_q_function_warns_on_missing_mass():
    rc = DensityMatrix(np.diag([1.0] + [0.0] * 5))
    with pytest.warns(RuntimeWarning):
        q_function(rc, GridSpec(2, 4, 2, 4, 0.1))


def _grid(fn, spacing=0.05):
    x = np.arange(-5, 5 + spacing / 2, spacing)
    X, Y = np.meshgrid(x, x)
    return QGrid(x, x.copy(), fn(X + 1j * Y))


def test_find_peaks_two_gaussians():
    a, b = 1.3 + 2.1j, -2.2 - 1.7j
    q = _grid(lambda z: np.exp(-np.abs(z - a) ** 2) + 0.6 * np.exp(-np.abs(z - b) ** 2))
    peaks = find_peaks(q)
    assert len(peaks) == 2
    assert abs(peaks[0][0] - a) < 0.01 and abs(peaks[1][0] - b) < 0.01
    assert peaks[0][1] > peaks[1][1]


def test_find_peaks_flat_grid():
    assert find_peaks(_grid(lambda z: np.ones(z.shape))) == []


def test_find_peaks_empty_grid():
    with pytest.raises(ValueError):
        find_peaks(QGrid(np.array([]), np.array([]), np.zeros((0, 0))))


def test_qgrid_binary_round_trip(tmp_path):
    q = _grid(lambda z: np.exp(-np.abs(z) ** 2), spacing=0.25)
    q.to_binary(tmp_path / "q")
    back = QGrid.from_binary(tmp_path / "q")
    np.testing.assert_array_equal(back.values, q.values)
    np.testing.assert_array_equal(back.x_axis, q.x_axis)


def test_find_peaks_ignores_boundary_maxima():
    # a Gaussian centred beyond the right edge rises monotonically to the boundary
    q = _grid(lambda z: np.exp(-np.abs(z - 6.0) ** 2) + 0.5 * np.exp(-np.abs(z + 1) ** 2))
    peaks = find_peaks(q, 0.01)
    assert len(peaks) == 1
    assert abs(peaks[0][0] + 1) < 0.01
