"""Measurement operators and snapshot-pair datasets.

Two heterogeneous sensors observe the same field:

* projection onto the leading principal components of pooled ``[v, w]``
  snapshots, and
* the pair ``[v(x0), w(x0)]`` at a single grid location.

Both are turned into :class:`MeasurementDataset` objects holding snapshot pairs
one sampling interval apart, and then whitened per component.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .fhn import FhnParams, FieldState, Trajectory


@dataclass
class PcaBasis:
    """Leading principal components of a snapshot collection.

    ``modes`` has shape ``(n_features, retained)`` with orthonormal columns;
    ``singular_values`` keeps the full spectrum so energy fractions can be
    reported for any truncation.
    """

    modes: np.ndarray
    singular_values: np.ndarray
    mean: np.ndarray

    @property
    def retained(self) -> int:
        return self.modes.shape[1]

    @property
    def n_features(self) -> int:
        return self.modes.shape[0]

    def energy_fraction(self, retained: int | None = None) -> float:
        r = self.retained if retained is None else retained
        s2 = self.singular_values ** 2
        return float(s2[:r].sum() / s2.sum())


@dataclass
class WhitenTransform:
    """Per-component affine map ``z = (x - shift) / scale``."""

    shift: np.ndarray
    scale: np.ndarray

    def __post_init__(self):
        self.shift = np.asarray(self.shift, dtype=float)
        self.scale = np.asarray(self.scale, dtype=float)
        if np.any(~(self.scale > 0)):
            raise ValidationError("whitening scales must all be positive")

    def apply(self, x):
        return (np.asarray(x, dtype=float) - self.shift) / self.scale

    def invert(self, z):
        return np.asarray(z, dtype=float) * self.scale + self.shift

    def to_dict(self) -> dict:
        return {"shift": self.shift.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d) -> "WhitenTransform":
        return cls(np.array(d["shift"], dtype=float), np.array(d["scale"], dtype=float))


@dataclass
class MeasurementDataset:
    """Snapshot pairs ``(x[m], y[m])`` with ``y[m]`` one interval ``dt`` after ``x[m]``.

    ``trajectory`` and ``t`` record where each pair came from (the time of
    ``x[m]``); they are bookkeeping only and play no role in the EDMD fit.
    """

    x: np.ndarray
    y: np.ndarray
    dt: float
    label: str = ""
    trajectory: np.ndarray | None = field(default=None, repr=False)
    t: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.x = np.atleast_2d(np.asarray(self.x, dtype=float))
        self.y = np.atleast_2d(np.asarray(self.y, dtype=float))
        if self.x.shape != self.y.shape:
            raise ValidationError(f"x and y shapes differ: {self.x.shape} vs {self.y.shape}")
        if not self.dt > 0:
            raise ValidationError(f"dt must be positive, got {self.dt}")
        m = self.x.shape[0]
        if self.trajectory is None:
            self.trajectory = np.zeros(m, dtype=int)
        if self.t is None:
            self.t = np.arange(m) * float(self.dt)
        self.trajectory = np.asarray(self.trajectory, dtype=int)
        self.t = np.asarray(self.t, dtype=float)
        if self.trajectory.shape != (m,) or self.t.shape != (m,):
            raise ValidationError("trajectory and t must have one entry per pair")

    def __len__(self):
        return self.x.shape[0]

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    def transformed(self, fn, label: str | None = None) -> "MeasurementDataset":
        return MeasurementDataset(fn(self.x), fn(self.y), self.dt,
                                  self.label if label is None else label,
                                  self.trajectory.copy(), self.t.copy())


def _snapshot_matrix(snapshots) -> np.ndarray:
    if isinstance(snapshots, np.ndarray):
        mat = snapshots
    else:
        rows = [s.as_vector() if isinstance(s, FieldState) else np.ravel(s) for s in snapshots]
        mat = np.array(rows, dtype=float)
    if mat.ndim > 2:
        mat = mat.reshape(mat.shape[0], -1)
    return np.asarray(mat, dtype=float)


def compute_pca(snapshots, retained: int = 3, rank_tol: float = 1e-12) -> PcaBasis:
    """Mean-centred SVD of the snapshot matrix.

    Parameters
    ----------
    snapshots : array_like or iterable of FieldState
        One snapshot per row.  ``(M, 2, n)`` field stacks are flattened to
        ``[v, w]`` rows.
    retained : int
        Number of modes to keep.
    rank_tol : float
        Singular values below ``rank_tol * s_max`` count as zero when checking
        that ``retained`` modes exist.
    """
    mat = _snapshot_matrix(snapshots)
    if mat.ndim != 2 or mat.shape[0] < retained:
        raise ValidationError(
            f"need at least {retained} snapshots, got {mat.shape[0] if mat.ndim == 2 else 0}")
    if retained < 1:
        raise ValidationError("retained must be >= 1")
    mean = mat.mean(axis=0)
    _, s, vt = np.linalg.svd(mat - mean, full_matrices=False)
    rank = int(np.sum(s > rank_tol * s[0])) if s.size and s[0] > 0 else 0
    if rank < retained:
        raise ValidationError(
            f"snapshot matrix has numerical rank {rank}; cannot retain {retained} modes")
    modes = vt[:retained].T.copy()
    # sign convention: largest-magnitude entry of each mode is positive
    idx = np.argmax(np.abs(modes), axis=0)
    modes *= np.sign(modes[idx, np.arange(retained)])
    return PcaBasis(modes=modes, singular_values=s, mean=mean)


def project(field, basis: PcaBasis) -> np.ndarray:
    """Principal-component coefficients ``a_i = <field - mean, mode_i>``.

    Accepts a :class:`FieldState`, a flat ``[v, w]`` vector, or a stack of
    either (``(..., 2, n)`` or ``(..., 2n)``).
    """
    if isinstance(field, FieldState):
        vec = field.as_vector()
    else:
        vec = np.asarray(field, dtype=float)
        if vec.ndim >= 2 and vec.shape[-2:] == (2, basis.n_features // 2) \
                and vec.shape[-1] != basis.n_features:
            vec = vec.reshape(vec.shape[:-2] + (basis.n_features,))
    if vec.shape[-1] != basis.n_features:
        raise ValidationError(
            f"field has {vec.shape[-1]} entries, basis expects {basis.n_features}")
    return (vec - basis.mean) @ basis.modes


def reconstruct(coeffs, basis: PcaBasis) -> np.ndarray:
    """Flat ``[v, w]`` field from principal-component coefficients."""
    coeffs = np.asarray(coeffs, dtype=float)
    return basis.mean + coeffs @ basis.modes.T


def grid_index(location: float, params: FhnParams) -> int:
    """Nearest grid node to ``location``; exact midpoints go to the lower index."""
    if not 0.0 <= location <= params.domain_length:
        raise ValidationError(
            f"location {location} outside the domain [0, {params.domain_length}]")
    pos = location / params.dx
    lo = int(np.floor(pos))
    frac = pos - lo
    idx = lo + 1 if frac > 0.5 + 1e-9 else lo
    return min(idx, params.grid_points - 1)


def point_measure(field, location: float = 10.0, params: FhnParams = FhnParams()) -> np.ndarray:
    """``[v(location), w(location)]`` sampled at the nearest grid node.

    ``field`` may be a :class:`FieldState` or an array whose last two axes are
    ``(2, grid_points)``.
    """
    idx = grid_index(location, params)
    if isinstance(field, FieldState):
        if field.v.shape[0] != params.grid_points:
            raise ValidationError("field length does not match params.grid_points")
        return np.array([field.v[idx], field.w[idx]])
    arr = np.asarray(field, dtype=float)
    if arr.shape[-2:] != (2, params.grid_points):
        raise ValidationError(
            f"expected trailing shape (2, {params.grid_points}), got {arr.shape}")
    return arr[..., :, idx]


def pairs_from_series(series, t, dt: float, label: str = "",
                      trajectory: int = 0) -> MeasurementDataset:
    """Consecutive-snapshot pairs of one uniformly sampled measurement series."""
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    if series.shape[0] < 2:
        raise ValidationError("a series needs at least two samples to form a pair")
    t = np.asarray(t, dtype=float)
    steps = np.diff(t)
    if not np.allclose(steps, dt, rtol=1e-9, atol=1e-12):
        raise ValidationError("sampling interval is not constant within the series")
    m = series.shape[0] - 1
    return MeasurementDataset(series[:-1], series[1:], dt, label,
                              np.full(m, trajectory, dtype=int), t[:-1])


def dataset_from_trajectories(trajectories: list[Trajectory], measure, label: str,
                              dt: float | None = None) -> MeasurementDataset:
    """Apply ``measure`` to every recorded snapshot and pool the pairs."""
    parts = []
    for traj in trajectories:
        step = float(traj.t[1] - traj.t[0]) if dt is None else dt
        parts.append(pairs_from_series(measure(traj.fields), traj.t, step, label, traj.index))
    return concatenate(parts, label)


def concatenate(datasets: list[MeasurementDataset], label: str | None = None) -> MeasurementDataset:
    if not datasets:
        raise ValidationError("nothing to concatenate")
    dt = datasets[0].dt
    if any(abs(d.dt - dt) > 1e-12 * dt for d in datasets):
        raise ValidationError("datasets have different sampling intervals")
    return MeasurementDataset(
        np.concatenate([d.x for d in datasets]), np.concatenate([d.y for d in datasets]), dt,
        datasets[0].label if label is None else label,
        np.concatenate([d.trajectory for d in datasets]), np.concatenate([d.t for d in datasets]))


def fit_whitening(x) -> WhitenTransform:
    """Mean and (population) standard deviation of each column of ``x``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if x.shape[0] < 2:
        raise ValidationError("whitening needs at least two samples")
    shift = x.mean(axis=0)
    scale = x.std(axis=0)
    for i, s in enumerate(scale):
        if not s > 1e-14 * max(1.0, abs(shift[i])):
            raise ValidationError(f"component {i} has zero variance and cannot be whitened")
    return WhitenTransform(shift, scale)


def whiten(dataset: MeasurementDataset) -> tuple[MeasurementDataset, WhitenTransform]:
    """Rescale every component to zero mean and unit variance.

    Statistics come from the ``x`` snapshots; the same affine map is applied to
    the ``y`` snapshots (and should be applied to any later query data).
    """
    transform = fit_whitening(dataset.x)
    return dataset.transformed(transform.apply), transform


def unwhiten(dataset: MeasurementDataset, transform: WhitenTransform) -> MeasurementDataset:
    return dataset.transformed(transform.invert)
