"""
Integrated charge from a two-state superposition
================================================

Heterodyne detection of a superposition of two coherent states leaves a
charge distribution with a Gaussian at each amplitude. Homodyne detection
across the line joining them picks up interference fringes instead.
"""

import math

import numpy as np

from qjumps.charge import (CatFrame, HeterodyneSetup, HomodyneSetup, InitialSuperposition,
                           run_ensemble, to_cat_frame)
from qjumps.harness import compare_histograms, heterodyne_target, homodyne_target, measure_fringes

alpha1, alpha2 = 1.95 - 5.45j, -1.40 + 0.85j
init = InitialSuperposition.equal_weight(alpha1, alpha2)

res = run_ensemble(HeterodyneSetup(init, t_end=10.0), 20_000, base_seed=1)
near1 = np.abs(res.finals - alpha1.conjugate()) < np.abs(res.finals - alpha2.conjugate())
print(f"heterodyne: {near1.mean():.3f} of the charge lands at alpha1*")
rep = compare_histograms(res.finals, heterodyne_target(init), "L1")
print(f"  L1 distance to the two-Gaussian target: {rep.value:.4f}")

# the same pair, seen as an even cat +-A after a shift and rotation
frame = to_cat_frame(alpha1, alpha2)
print(f"cat frame: A = {frame.A:.3f}, offset {frame.offset:.3f}, rotation {frame.rotation:.3f} rad")

for theta in (0.0, math.pi / 2):
    finals = run_ensemble(HomodyneSetup(frame, theta), 20_000, base_seed=2).finals
    rep = compare_histograms(finals, homodyne_target(frame, theta), "KS")
    print(f"homodyne theta = {theta:.3f}: KS = {rep.value:.4f}")

# fringe period pi / (A sin theta) on the exact density
theta = math.pi / 2
q = np.linspace(-10, 10, 200_001)
m = measure_fringes((q, homodyne_target(CatFrame(frame.A), theta).pdf(q)))
print(f"fringe spacing {m.spacing:.4f}, expected {math.pi / frame.A:.4f}")
