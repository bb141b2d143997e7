"""
Bistability of the driven Jaynes-Cummings cavity
=================================================

The neoclassical equation has three roots at the operating point: a bright
state, a dim state near the vacuum, and an unstable state between them.
The master-equation steady state mixes the two stable ones, and its Q
function shows two peaks where the roots sit.
"""

import numpy as np

from qjumps.config import ExperimentConfig
from qjumps.fock import annihilation, expectation, number
from qjumps.jcmodel import (check_adiabatic_conditions, default_grid, find_peaks, localization_time,
                            q_function, reduced_cavity_dm, solve_neoclassical, steady_state)

config = ExperimentConfig.preset("fig2")
params = config.jc_params()
print(f"g/kappa = {params.g_over_k}, drive = {params.drive}, detuning = {params.detuning}, "
      f"n_max = {params.hilbert.n_max}")

roots = solve_neoclassical(params)
for label, z in zip(roots.labels, roots.roots):
    print(f"  {label}: alpha = {z:.5f}   |alpha|^2 = {abs(z) ** 2:.3f}")

# the meter cancels half the bright field, so its level is |alpha_B|^2 / 4
print(f"meter level {abs(roots.bright) ** 2 / 4:.4f}")
print(f"time to tell the two halves of a B+U superposition apart: "
      f"kappa dt = {localization_time(roots.bright, roots.unstable):.4f}")

rep = check_adiabatic_conditions(config.meter.kp_over_k, config.meter.kp_over_gp, params)
print("adiabatic conditions", "hold" if rep.passed else "fail", rep.values)

# Steady state: a mixture, so <a> sits between the peaks while <n> is dominated by B
rho = steady_state(params)
hc = params.hilbert
print(f"<n>_ss = {expectation(number(hc), rho).real:.3f}, <a>_ss = {complex(expectation(annihilation(hc), rho)):.3f}")

q = q_function(reduced_cavity_dm(rho), default_grid(list(roots.roots), 0.05))
for z, h in find_peaks(q, 0.05):
    print(f"  Q peak at {z:.3f}, height {h:.4f}")
print(f"integral of Q over the grid: {q.integral() / np.pi:.4f} pi")
