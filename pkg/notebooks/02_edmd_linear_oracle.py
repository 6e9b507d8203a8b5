"""
EDMD on linear systems
======================

With a linear dictionary, EDMD on data from ``x_{n+1} = A x_n`` must return
the eigenvalues of ``A`` exactly.  They also must not change when the
observations are mixed by an invertible matrix.
"""

# %%
import numpy as np

from koopfuse.dictionary import LinearDictionary
from koopfuse.edmd import fit
from koopfuse.measurements import MeasurementDataset

rng = np.random.default_rng(0)

# %% A stable 3x3 system with one complex pair
q = np.linalg.qr(rng.normal(size=(3, 3)))[0]
block = np.array([[0.9, -0.3, 0.0], [0.3, 0.9, 0.0], [0.0, 0.0, 0.5]])
a = q @ block @ q.T
x = rng.normal(size=(200, 3))
data = MeasurementDataset(x, x @ a.T, dt=1.0)

dec = fit(data, LinearDictionary(3))
print("EDMD :", np.round(np.sort_complex(dec.eigenvalues), 12))
print("exact:", np.round(np.sort_complex(np.linalg.eigvals(a)), 12))

# %% Observing through an invertible map leaves the spectrum alone
t = rng.normal(size=(3, 3))
mixed = MeasurementDataset(x @ t.T, x @ a.T @ t.T, dt=1.0)
moved = fit(mixed, LinearDictionary(3))
print("largest shift:", np.max(np.abs(np.sort_complex(moved.eigenvalues)
                                      - np.sort_complex(dec.eigenvalues))))

# %% Continuous-time eigenvalues use the principal branch of the logarithm
print("lambda:", np.round(dec.continuous_eigenvalues, 6))
