"""
The FitzHugh-Nagumo breathing front
===================================

Trajectories start near the unstable stationary front and settle onto a
limit cycle.  This script finds the front, shows why it is unstable, and
measures the period of the cycle from a pointwise measurement.
"""

# %%
import numpy as np

from koopfuse.fhn import (FhnParams, TrajectoryConfig, generate_trajectories, linear_stability,
                          reaction_fixed_points, stationary_front)
from koopfuse.measurements import point_measure

params = FhnParams()

# %% Uniform steady states of the reaction terms, with their stability labels
for fp in reaction_fixed_points(params):
    print(fp)

# %% The non-uniform front and its leading Jacobian eigenvalues
front = stationary_front(params)
ev = linear_stability(front, params)
print("leading eigenvalues:", np.round(ev[:4], 5))
print("frequency of the unstable pair:", abs(ev[0].imag))

# %% One short trajectory: 500 time units of burn-in, then 300 samples
cfg = TrajectoryConfig(n_trajectories=1, burn_in=500.0, pairs_per_trajectory=300, rng_seed=1)
traj = generate_trajectories(cfg, params)[0]
v = point_measure(traj.fields, 10.0, params)[:, 0]

# %% Period from upward crossings of the mean
c = v - v.mean()
up = np.flatnonzero((c[:-1] < 0) & (c[1:] >= 0))
# linear interpolation between samples for the crossing times
times = traj.t[up] - c[up] * (traj.t[up + 1] - traj.t[up]) / (c[up + 1] - c[up])
period = np.mean(np.diff(times))
print(f"period {period:.1f}, angular frequency {2 * np.pi / period:.4f}")
