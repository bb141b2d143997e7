import math

import numpy as np
import pytest
from scipy import integrate, stats

from qjumps.charge import CatFrame, InitialSuperposition
from qjumps.harness import (
    ComparisonReport,
    Target,
    bright_segments,
    compare_histograms,
    density_modes,
    heterodyne_target,
    homodyne_target,
    load_jumps,
    measure_fringes,
    stage2_seed,
)

normal = Target(stats.norm.pdf, 1, None, (-12.0, 12.0))


def test_ks_of_exact_quantiles_is_tiny():
    n = 20000
    q = stats.norm.ppf((np.arange(n) + 0.5) / n)
    rep = compare_histograms(q, normal, "KS")
    assert rep.value < 1e-4 and rep.passed and rep.N == n and rep.threshold == 0.01


def test_ks_detects_a_shift():
    q = np.random.default_rng(0).normal(5.0, 1.0, 5000)
    rep = compare_histograms(q, normal, "KS")
    assert not rep.passed and rep.value > 0.9


def test_ks_matches_scipy():
    q = np.random.default_rng(1).normal(0.1, 1.0, 3000)
    assert compare_histograms(q, normal, "KS").value == pytest.approx(stats.kstest(q, "norm").statistic, abs=1e-5)


def test_no_overlap_raises():
    narrow = Target(lambda q: np.where(np.abs(q) < 1, 0.5, 0.0), 1, None, (-1.0, 1.0))
    with pytest.raises(ValueError):
        compare_histograms(np.full(200, 50.0) + np.linspace(0, 1, 200), narrow, "KS")


def test_small_samples_rejected():
    with pytest.raises(ValueError):
        compare_histograms(np.zeros(10), normal, "KS")
    with pytest.raises(ValueError):
        compare_histograms(np.zeros(1000), normal, "AD")


def test_chi2_on_matching_samples():
    q = np.random.default_rng(2).normal(size=20000)
    rep = compare_histograms(q, normal, "chi2", bin_width=0.2)
    assert rep.passed and rep.details["dof"] > 10
    assert rep.threshold == pytest.approx(1 + 4 * math.sqrt(2 / rep.details["dof"]))
    bad = compare_histograms(q * 1.2, normal, "chi2", bin_width=0.2)
    assert not bad.passed


def test_l1_1d():
    q = np.random.default_rng(3).normal(size=50000)
    assert compare_histograms(q, normal, "L1", bin_width=0.25).passed
    assert not compare_histograms(q + 0.5, normal, "L1", bin_width=0.25).passed


def test_heterodyne_l1():
    init = InitialSuperposition.equal_weight(1.95 - 5.45j, -1.40 + 0.85j)
    rng = np.random.default_rng(4)
    n = 40000
    pick = rng.random(n) < 0.5
    centre = np.where(pick, init.alpha1.conjugate(), init.alpha2.conjugate())
    z = centre + math.sqrt(0.5) * (rng.normal(size=n) + 1j * rng.normal(size=n))
    target = heterodyne_target(init)
    assert compare_histograms(z, target, "L1").passed
    assert not compare_histograms(z + 0.5, target, "L1").passed
    with pytest.raises(ValueError):
        compare_histograms(z, target, "KS")


def test_homodyne_target_normalized():
    t = homodyne_target(CatFrame(2.0, 0.0), math.pi / 2)
    q = np.linspace(*t.support, 200001)
    expected = (1 + math.exp(-8)) / (1 + math.exp(-8))
    assert integrate.trapezoid(t.pdf(q), q) == pytest.approx(expected, rel=1e-8)
    odd = homodyne_target(CatFrame(0.5, math.pi), math.pi / 2)
    q = np.linspace(*odd.support, 200001)
    assert integrate.trapezoid(odd.pdf(q), q) == pytest.approx((1 - math.exp(-0.5)) / (1 + math.exp(-0.5)), rel=1e-8)


def test_report_rejects_negative_value():
    with pytest.raises(ValueError):
        ComparisonReport("KS", -0.1, 10, 0.01, True)
    d = ComparisonReport("KS", 0.1, 10, 0.01, False).to_dict()
    assert d["pass"] is False and d["statistic"] == "KS"


def test_stage2_seed_is_disjoint_and_stable():
    seeds = {stage2_seed(0, k) for k in range(50)}
    assert len(seeds) == 50
    assert stage2_seed(3, 1) == stage2_seed(3, 1) != stage2_seed(4, 1)


def test_density_modes():
    rng = np.random.default_rng(5)
    q = np.concatenate([rng.normal(-3, 0.5, 20000), rng.normal(2, 0.5, 20000)])
    lo, hi = density_modes(q)
    assert lo == pytest.approx(-3, abs=0.05) and hi == pytest.approx(2, abs=0.05)


def test_measure_fringes_on_exact_density():
    A = 3.0
    frame = CatFrame(A, 0.0)
    t = homodyne_target(frame, math.pi / 2)
    q = np.linspace(-8, 8, 160001)
    m = measure_fringes((q, t.pdf(q)))
    assert m.centre == pytest.approx(0.0, abs=1e-4)
    assert m.spacing == pytest.approx(math.pi / A, rel=1e-3)
    with pytest.raises(ValueError):
        measure_fringes((q, np.exp(-q * q / 2)))


def test_bright_segments():
    t = np.arange(0, 20, 0.01)
    bright, dim = 2 - 5j, 0j
    alpha = np.where((t > 3) & (t < 12), bright, dim)
    (a, b), = bright_segments(t, alpha, bright, dim, smooth=0.5, trim=1.0)
    assert a == pytest.approx(4.0, abs=0.02) and b == pytest.approx(11.0, abs=0.02)
    assert bright_segments(t, np.full(t.size, dim), bright, dim) == []


def test_load_jumps(tmp_path):
    p = tmp_path / "jumps.json"
    p.write_text('[{"c1": 0.6, "c2": 0.8, "alpha1": [1.0, -2.0], "alpha2": [-1.0, 0.5]}]')
    (s,) = load_jumps(p)
    assert s.alpha1 == 1 - 2j and s.c2 == 0.8
    p.write_text("[]")
    with pytest.raises(ValueError):
        load_jumps(p)
