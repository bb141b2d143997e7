"""
A trajectory watched by the auxiliary-cavity meter
===================================================

One quantum trajectory of the bistable cavity, with the meter integrated
alongside it. The meter sees the difference between the cavity field and
half the bright amplitude, so the transmission sits at a fixed level
while the cavity is bright and drops towards zero when it leaves.
"""

import numpy as np

from qjumps.config import ExperimentConfig
from qjumps.jcmodel import solve_neoclassical
from qjumps.mcwf import run_trajectory
from qjumps.meter import DipMonitor, classify_post_dip

config = ExperimentConfig.preset("fig2").replace(trajectory={"duration": 40.0})
params = config.jc_params()
roots = solve_neoclassical(params)

# the automatic cutoff is tight while the field swings between states, so a
# warning about the top Fock level can appear here
monitor = DipMonitor(config.meter_params(roots.bright), config.detection_settings())
rec = run_trajectory(params, config.trajectory_config(seed=5), monitor=monitor)
trace = monitor.trace()

print(f"{rec.click_times.size} photon counts in {config.trajectory.duration:g} cavity lifetimes")
print(f"mean photon number along the record: {np.mean(rec.photon_number):.2f}")

level = monitor.params.level
T = trace.transmission
print(f"meter level {level:.3f}; transmission median {np.median(T):.3f}, minimum {T.min():.4f}")

# dips, and what the field does after each one
settings = config.classifier_settings()
for e in monitor.events:
    if e.t_dip + settings.window <= trace.t[-1]:
        classify_post_dip(trace, e, settings=settings)
    print(f"  dip at t = {e.t_dip:.2f}, T_min = {e.T_min:.4f}: {e.classification}")
if not monitor.events:
    print("  no dips in this stretch; metastable jumps are rare")
