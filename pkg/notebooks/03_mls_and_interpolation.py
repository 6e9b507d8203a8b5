"""
Meshfree dictionary and scattered-data interpolation
====================================================

The EDMD dictionary is a set of moving-least-squares shape functions on
quad-tree nodes.  The inverse map from intrinsic coordinates back to
measurements is a piecewise-linear interpolant on a Delaunay triangulation.
Both reproduce linear functions exactly.
"""

# %%
import numpy as np

from koopfuse.dictionary import MlsDictionary, build_nodes_quadtree
from koopfuse.interp import build_interpolant, interpolate, triangulate

rng = np.random.default_rng(2)

# %% Nodes adapt to the density of the data
t = rng.uniform(0, 2 * np.pi, 1500)
pts = np.column_stack([np.cos(t), np.sin(t)]) * rng.uniform(0.6, 1.0, (1500, 1))
nodes = build_nodes_quadtree(pts, max_per_cell=15)
print(len(nodes), "nodes for", len(pts), "points")

# %% Partition of unity and linear reproduction at the data points
psi = MlsDictionary(nodes).evaluate(pts).toarray()
print("sum of shape functions - 1:", np.abs(psi.sum(axis=1) - 1).max())
print("linear reproduction error :", np.abs(psi @ nodes.centers - pts).max())

# %% Delaunay interpolation of a linear function is exact inside the hull
f = lambda p: 2.0 - p[:, 0] + 3.0 * p[:, 1]
sites = rng.uniform(-1, 1, (200, 2))
itp = build_interpolant(sites, f(sites)[:, None])
q = rng.uniform(-1, 1, (1000, 2))
q = q[triangulate(sites).locate(q) >= 0]
est, outside = interpolate(itp, q)
print("triangles:", len(itp.triangulation.triangles), " max error:", np.abs(est[:, 0] - f(q)).max())
