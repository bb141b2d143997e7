import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from qjumps._seeding import rng_for
from qjumps.charge import (
    CatFrame,
    FluctuationModel,
    HeterodyneSetup,
    HomodyneSetup,
    InitialSuperposition,
    _heterodyne_block,
    heterodyne_bin_probabilities,
    heterodyne_drift,
    heterodyne_target_density,
    homodyne_drift,
    homodyne_target_density,
    run_ensemble,
    simulate_heterodyne,
    simulate_homodyne,
    to_cat_frame,
)

A1, A2 = 1.95 - 5.45j, -1.40 + 0.85j
coords = st.floats(-6, 6)


def naive_heterodyne_drift(Q, t, init):
    w = [abs(c) ** 2 * math.exp(-abs(a) ** 2 * (1 - math.exp(-2 * t))) * math.exp(2 * (a * Q).real)
         for c, a in ((init.c1, init.alpha1), (init.c2, init.alpha2))]
    return (w[0] * init.alpha1.conjugate() + w[1] * init.alpha2.conjugate()) / sum(w)


def naive_log_potential(q, eta, A, phi0, theta):
    # log of exp(-V) for the cat state, written out directly
    c, s = math.cos(theta), math.sin(theta)
    return math.log(math.cosh(2 * q * A * c) * math.exp(A**2 * (1 - 2 * eta * c * c))
                    + math.cos(phi0 + 2 * q * A * s) * math.exp(-(A**2) * (1 - 2 * eta * s * s)))


def test_superposition_validation():
    with pytest.raises(ValueError):
        InitialSuperposition(1, 1, 0, 1)
    with pytest.raises(ValueError):
        InitialSuperposition.equal_weight(1 + 1j, 1 + 1j)


@pytest.mark.parametrize("t", [0.0, 0.3, 2.0])
def test_single_well_drift(t):
    init = InitialSuperposition(1, 0, A1, A2)
    for Q in (0j, 3 - 2j, -10 + 4j):
        assert heterodyne_drift(Q, t, init) == pytest.approx(A1.conjugate())


def test_symmetric_drift_at_origin():
    a = 2 - 1j
    init = InitialSuperposition.equal_weight(a, a * 1j)
    assert heterodyne_drift(0j, 0.0, init) == pytest.approx((a.conjugate() + (1j * a).conjugate()) / 2)


def test_drift_locks_to_the_nearer_well():
    init = InitialSuperposition.equal_weight(A1, A2)
    assert heterodyne_drift(40 * A1.conjugate(), 1.0, init) == pytest.approx(A1.conjugate(), abs=1e-9)


@given(coords, coords, st.floats(0, 10))
@settings(max_examples=60, deadline=None)
def test_drift_matches_weighted_average(x, y, t):
    init = InitialSuperposition.equal_weight(A1, A2)
    assert heterodyne_drift(complex(x, y), t, init) == pytest.approx(naive_heterodyne_drift(complex(x, y), t, init), abs=1e-9)


@given(st.floats(-300, 300), st.floats(-300, 300), st.floats(0, 10))
@settings(max_examples=60, deadline=None)
def test_drift_stays_in_convex_hull(x, y, t):
    init = InitialSuperposition.equal_weight(A1, A2)
    d = heterodyne_drift(complex(x, y), t, init)
    a, b = A1.conjugate(), A2.conjugate()
    lam = ((d - b) / (a - b))
    assert abs(lam.imag) < 1e-9 and -1e-12 <= lam.real <= 1 + 1e-12


def test_heterodyne_target_density():
    init = InitialSuperposition.equal_weight(A1, A2)
    f = lambda z: heterodyne_target_density(z, init)
    val = sum(integrate.dblquad(lambda y, x: f(complex(x, y)), c.real - 7, c.real + 7, -c.imag - 7, -c.imag + 7,
                                epsabs=1e-12)[0] for c in (A1, A2))
    # the two windows overlap; subtract the shared region once
    shared = integrate.dblquad(lambda y, x: f(complex(x, y)), A1.real - 7, A2.real + 7, -A1.imag - 7, -A2.imag + 7,
                               epsabs=1e-12)[0]
    assert val - shared == pytest.approx(1.0, abs=1e-6)
    for peak in (A1.conjugate(), A2.conjugate()):
        assert f(peak) > max(f(peak + d) for d in (0.05, -0.05, 0.05j, -0.05j))
    single = InitialSuperposition(1, 0, A1, A2)
    z = 0.3 + 1.1j
    assert heterodyne_target_density(z, single) == pytest.approx(math.exp(-abs(A1 - z.conjugate()) ** 2) / math.pi)


def test_bin_probabilities_are_exact_masses():
    init = InitialSuperposition.equal_weight(A1, A2)
    xe, ye = np.arange(-8, 8.01, 0.5), np.arange(-7, 12.01, 0.5)
    p = heterodyne_bin_probabilities(xe, ye, init)
    assert p.sum() == pytest.approx(1.0, abs=1e-6)
    i, j = 19, 24
    direct, _ = integrate.dblquad(lambda y, x: heterodyne_target_density(complex(x, y), init),
                                  xe[i], xe[i + 1], ye[j], ye[j + 1])
    assert p[i, j] == pytest.approx(direct, rel=1e-8)


def test_heterodyne_setup_preconditions():
    init = InitialSuperposition.equal_weight(A1, A2)
    with pytest.raises(ValueError):
        HeterodyneSetup(init, t_end=2.0)
    with pytest.raises(ValueError):
        HeterodyneSetup(init, dt=0.01)


def test_heterodyne_mean_follows_single_well():
    a = 1.2 - 0.7j
    rng = rng_for(17)
    n = 20000
    c1sq, a1, a2 = np.ones(n), np.full(n, a), np.full(n, -a)
    for t in (0.25, 1.0):
        q, _ = _heterodyne_block(c1sq, a1, a2, 1.0, 1e-3, t, rng)
        mean = a.conjugate() * (1 - math.exp(-2 * t))
        var = 0.5 * (1 - math.exp(-2 * t))
        se = math.sqrt(var / n)
        assert abs(q.real.mean() - mean.real) < 3 * se
        assert abs(q.imag.mean() - mean.imag) < 3 * se


def test_heterodyne_terminal_single_well_is_coherent_q():
    a = 1.2 - 0.7j
    res = run_ensemble(HeterodyneSetup(InitialSuperposition(1, 0, a, -a), t_end=6.0), 8000, base_seed=2)
    q = res.finals
    se = math.sqrt(0.5 / q.size)
    assert abs(q.real.mean() - a.real) < 3 * se
    assert abs(q.imag.mean() + a.imag) < 3 * se
    for comp in (q.real, q.imag):
        assert np.var(comp) == pytest.approx(0.5, rel=4 * math.sqrt(2 / q.size))


def test_heterodyne_terminal_mean_is_weighted():
    init = InitialSuperposition(math.sqrt(0.3), math.sqrt(0.7), A1, A2)
    q = run_ensemble(HeterodyneSetup(init, t_end=6.0), 8000, base_seed=5).finals
    expected = 0.3 * A1.conjugate() + 0.7 * A2.conjugate()
    for comp, mu in ((q.real, expected.real), (q.imag, expected.imag)):
        assert abs(comp.mean() - mu) < 3 * comp.std(ddof=1) / math.sqrt(q.size)


def test_single_path_determinism():
    init = InitialSuperposition.equal_weight(A1, A2)
    a, b = simulate_heterodyne(init, seed=3), simulate_heterodyne(init, seed=3)
    assert a.final == b.final
    assert a.path_q[0] == 0
    np.testing.assert_array_equal(a.path_q, b.path_q)


def test_cat_frame_fig4_amplitudes():
    f = to_cat_frame(2.95 - 5.35j, -2.05 - 0.20j)
    assert f.A == pytest.approx(3.59, abs=5e-3)
    assert f.offset == pytest.approx((2.95 - 5.35j - 2.05 - 0.20j) / 2)
    assert f.transform(2.95 - 5.35j) == pytest.approx(f.A)
    assert f.transform(-2.05 - 0.20j) == pytest.approx(-f.A)


def test_cat_frame_real_pair():
    f = to_cat_frame(3.0, -3.0)
    assert f.offset == 0 and f.rotation == 0 and f.A == 3.0


@given(st.floats(0, 2 * math.pi))
def test_cat_frame_rotation_invariant(phi):
    r = complex(math.cos(phi), math.sin(phi))
    assert to_cat_frame(r * A1, r * A2).A == pytest.approx(to_cat_frame(A1, A2).A, rel=1e-12)


def test_cat_frame_degenerate():
    with pytest.raises(ValueError):
        to_cat_frame(1 + 1j, 1 + 1j)


@pytest.mark.parametrize("eta", [0.0, 0.4, 0.99])
def test_homodyne_drift_even_potential(eta):
    assert homodyne_drift(0.0, eta, CatFrame(9.0), 0.0) == 0.0
    assert homodyne_drift(0.0, eta, CatFrame(3.59, math.pi), math.pi / 2) == pytest.approx(0.0, abs=1e-12)


def test_homodyne_drift_vanishes_without_separation():
    q = np.linspace(-5, 5, 11)
    assert np.all(homodyne_drift(q, 0.5, CatFrame(0.0), 0.7) == 0)


def test_homodyne_drift_locks_to_well():
    assert homodyne_drift(40.0, 0.3, CatFrame(9.0), 0.0) == pytest.approx(18.0)
    assert homodyne_drift(-40.0, 0.3, CatFrame(9.0), 0.0) == pytest.approx(-18.0)


@given(st.floats(-3, 3), st.floats(0, 0.95), st.floats(0, math.pi), st.floats(0, 2 * math.pi))
@settings(max_examples=80, deadline=None)
def test_homodyne_drift_is_log_derivative(q, eta, theta, phi0):
    A = 1.2
    h = 1e-6
    lo, hi = naive_log_potential(q - h, eta, A, phi0, theta), None
    try:
        lo = naive_log_potential(q - h, eta, A, phi0, theta)
        hi = naive_log_potential(q + h, eta, A, phi0, theta)
    except ValueError:
        return  # a node of exp(-V): no finite derivative
    fd = (hi - lo) / (2 * h)
    if abs(fd) > 50:
        return
    assert homodyne_drift(q, eta, CatFrame(A, phi0), theta) == pytest.approx(fd, rel=1e-5, abs=1e-6)


def test_homodyne_drift_requires_eta_range():
    with pytest.raises(ValueError):
        homodyne_drift(0.0, 1.0, CatFrame(1.0), 0.0)


def test_homodyne_target_standard_normal_at_zero_separation():
    q = np.linspace(-5, 5, 41)
    np.testing.assert_allclose(homodyne_target_density(q, CatFrame(0.0), 0.3),
                               np.exp(-q * q / 2) / math.sqrt(2 * math.pi), rtol=1e-12)


def test_homodyne_target_no_overflow_at_large_separation():
    q = np.linspace(-40, 40, 2001)
    p = homodyne_target_density(q, CatFrame(9.0), 0.0)
    assert np.all(np.isfinite(p))
    assert integrate.trapezoid(p, q) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("phi0", [0.0, math.pi])
@pytest.mark.parametrize("theta", [0.0, math.pi / 3, math.pi / 2])
def test_homodyne_target_is_even(phi0, theta):
    q = np.linspace(0, 6, 61)
    f = CatFrame(2.0, phi0)
    np.testing.assert_allclose(homodyne_target_density(q, f, theta), homodyne_target_density(-q, f, theta),
                               rtol=1e-12, atol=1e-300)


def test_odd_cat_has_a_node_at_origin():
    f = CatFrame(3.59, math.pi)
    assert homodyne_target_density(0.0, f, math.pi / 2) == pytest.approx(0.0, abs=1e-15)


def test_homodyne_setup_preconditions():
    with pytest.raises(ValueError):
        HomodyneSetup(CatFrame(1.0), eta_max=1.0)
    with pytest.raises(ValueError):
        HomodyneSetup(CatFrame(1.0), d_eta=1e-2)


def test_homodyne_without_separation_is_gaussian():
    q = run_ensemble(HomodyneSetup(CatFrame(0.0), 0.0), 10000, base_seed=12).finals
    se = 1 / math.sqrt(q.size)
    assert abs(q.mean()) < 3 * se
    assert q.var(ddof=1) == pytest.approx(1.0, abs=3 * math.sqrt(2 / q.size))


def test_homodyne_path_shape():
    rec = simulate_homodyne(CatFrame(3.0), math.pi / 2, seed=4)
    assert rec.path_q[0] == 0
    assert np.all(np.diff(rec.path_time) > 0)
    assert rec.path_time[-1] < 1 and rec.theta == math.pi / 2
    assert rec.final == rec.path_q[-1]


def test_ensemble_determinism_and_block_independence():
    setup = HomodyneSetup(CatFrame(3.59), math.pi / 2)
    a = run_ensemble(setup, 300, FluctuationModel("gaussian_A", 0.5, seed=1), base_seed=9, block_size=64)
    b = run_ensemble(setup, 300, FluctuationModel("gaussian_A", 0.5, seed=1), base_seed=9, block_size=64)
    np.testing.assert_array_equal(a.finals, b.finals)
    np.testing.assert_array_equal(a.draws["A"], b.draws["A"])
    assert np.all(a.draws["A"] > 0)


def test_weight_phase_draws():
    init = InitialSuperposition.equal_weight(A1, A2)
    res = run_ensemble(HeterodyneSetup(init, t_end=5.0, dt=1e-3), 400, FluctuationModel("weight_phase", seed=3),
                       base_seed=1)
    c2 = res.draws["c2sq"]
    ph = res.draws["alpha2_phase"]
    assert np.all((c2 > 0) & (c2 < 1)) and np.all((ph >= 0) & (ph < 2 * math.pi))
    # the bright well keeps its place while the unstable well is smeared round a ring
    near_bright = np.abs(res.finals - A1.conjugate()) < 1.5
    assert near_bright.mean() == pytest.approx(np.mean(1 - c2), abs=0.08)
    ring = res.finals[~near_bright]
    assert np.std(np.angle(ring)) > 1.0
