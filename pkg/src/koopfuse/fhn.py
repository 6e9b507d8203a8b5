"""FitzHugh-Nagumo reaction-diffusion model on a 1D interval.

The fields obey::

    v_t = v_xx + v - w - v**3
    w_t = delta * w_xx + epsilon * (v - c1 * w - c0)

on ``[0, domain_length]`` with zero-flux boundaries.  Space is discretised with
second-order central differences on a node-centred grid, closed at the ends with
mirrored ghost nodes.  That discrete Laplacian is diagonalised exactly by the
type-I discrete cosine transform, so time stepping uses the fourth-order
exponential time differencing Runge-Kutta scheme (ETDRK4) in cosine space: the
stiff diffusion is integrated exactly and the reaction terms explicitly.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import IntegrationError, NumericalError, ValidationError

DIVERGENCE_BOUND = 1e6


@dataclass(frozen=True)
class FhnParams:
    """Model coefficients and discretisation settings."""

    c0: float = -0.03
    c1: float = 2.0
    delta: float = 4.0
    epsilon: float = 0.017
    domain_length: float = 20.0
    grid_points: int = 200
    dt_integration: float = 0.1

    def __post_init__(self):
        if int(self.grid_points) != self.grid_points or self.grid_points < 3:
            raise ValidationError(f"grid_points must be an integer >= 3, got {self.grid_points}")
        if not self.dt_integration > 0:
            raise ValidationError(f"dt_integration must be positive, got {self.dt_integration}")
        if not self.domain_length > 0:
            raise ValidationError(f"domain_length must be positive, got {self.domain_length}")

    @property
    def dx(self) -> float:
        return self.domain_length / (self.grid_points - 1)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.domain_length, self.grid_points)


@dataclass
class FieldState:
    """Snapshot of both fields on the grid at time ``t``."""

    v: np.ndarray
    w: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        self.v = np.asarray(self.v, dtype=float)
        self.w = np.asarray(self.w, dtype=float)
        if self.v.ndim != 1 or self.v.shape != self.w.shape:
            raise ValidationError(
                f"v and w must be 1D arrays of equal length, got {self.v.shape} and {self.w.shape}")
        if not (np.all(np.isfinite(self.v)) and np.all(np.isfinite(self.w))):
            raise ValidationError("field values must be finite")

    @classmethod
    def uniform(cls, v0: float, w0: float, params: FhnParams, t: float = 0.0) -> "FieldState":
        n = params.grid_points
        return cls(np.full(n, float(v0)), np.full(n, float(w0)), t)

    @classmethod
    def from_array(cls, u, t: float = 0.0) -> "FieldState":
        u = np.asarray(u, dtype=float)
        return cls(u[0].copy(), u[1].copy(), t)

    def as_array(self) -> np.ndarray:
        """Stacked ``(2, grid_points)`` array, ``v`` first."""
        return np.stack([self.v, self.w])

    def as_vector(self) -> np.ndarray:
        """Concatenated ``[v, w]`` vector, the layout used for PCA."""
        return np.concatenate([self.v, self.w])


@dataclass(frozen=True)
class TrajectoryConfig:
    """How the snapshot-pair trajectories are produced.

    ``perturbation_scale`` multiplies a random combination of the cosine modes
    ``cos(k pi x / L)``, ``k = 1..perturbation_modes``, with coefficients drawn
    uniformly from ``[-1, 1]`` independently for ``v`` and ``w``.
    """

    n_trajectories: int = 20
    burn_in: float = 1000.0
    sampling_interval: float = 2.0
    pairs_per_trajectory: int = 1000
    perturbation_scale: float = 0.1
    perturbation_modes: int = 5
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_trajectories < 1:
            raise ValidationError("n_trajectories must be >= 1")
        if self.pairs_per_trajectory < 1:
            raise ValidationError("pairs_per_trajectory must be >= 1")
        if not self.sampling_interval > 0:
            raise ValidationError("sampling_interval must be positive")
        if self.burn_in < 0:
            raise ValidationError("burn_in must be non-negative")

    def steps_per_sample(self, params: FhnParams) -> int:
        ratio = self.sampling_interval / params.dt_integration
        n = int(round(ratio))
        if n < 1 or abs(ratio - n) > 1e-9 * max(1.0, ratio):
            raise ValidationError(
                f"sampling_interval {self.sampling_interval} is not an integer multiple of "
                f"dt_integration {params.dt_integration}")
        return n

    def burn_in_steps(self, params: FhnParams) -> int:
        ratio = self.burn_in / params.dt_integration
        n = int(round(ratio))
        if abs(ratio - n) > 1e-9 * max(1.0, ratio):
            raise ValidationError(
                f"burn_in {self.burn_in} is not an integer multiple of dt_integration "
                f"{params.dt_integration}")
        return n


@dataclass
class Trajectory:
    """Recorded snapshots of one trajectory.

    ``fields[n]`` has shape ``(2, grid_points)`` and was recorded at ``t[n]``;
    time is measured from the end of the burn-in period.  Consecutive
    snapshots are one sampling interval apart, so ``(fields[n], fields[n+1])``
    is a snapshot pair.
    """

    t: np.ndarray
    fields: np.ndarray
    index: int = 0
    initial: np.ndarray | None = field(default=None, repr=False)

    def __len__(self):
        return len(self.t)

    def state(self, n: int) -> FieldState:
        return FieldState.from_array(self.fields[n], float(self.t[n]))

    def states(self):
        for n in range(len(self.t)):
            yield self.state(n)


class FixedPoint(NamedTuple):
    v: float
    w: float
    eigenvalues: np.ndarray
    stability: str


def _stability_label(eigenvalues) -> str:
    re = np.real(eigenvalues)
    if np.all(re < 0):
        return "stable"
    if np.all(re > 0):
        return "unstable"
    if np.any(re > 0) and np.any(re < 0):
        return "saddle"
    return "marginal"


def reaction_fixed_points(params: FhnParams) -> list[FixedPoint]:
    """Spatially uniform steady states, sorted by ``v``.

    Eliminating ``w = (v - c0) / c1`` leaves the depressed cubic
    ``v**3 + (1/c1 - 1) v - c0/c1 = 0``.  Each real root is polished with Newton
    iterations and labelled by the eigenvalues of the reaction Jacobian.
    """
    p, q = 1.0 / params.c1 - 1.0, -params.c0 / params.c1
    roots = np.roots([1.0, 0.0, p, q])
    scale = max(1.0, np.max(np.abs(roots)))
    real_roots = sorted(r.real for r in roots if abs(r.imag) <= 1e-7 * scale)
    points = []
    for v in real_roots:
        for _ in range(50):
            f = v ** 3 + p * v + q
            df = 3 * v ** 2 + p
            if df == 0:
                break
            dv = f / df
            v -= dv
            if abs(dv) < 1e-16 * max(1.0, abs(v)):
                break
        w = (v - params.c0) / params.c1
        jac = np.array([[1.0 - 3.0 * v ** 2, -1.0],
                        [params.epsilon, -params.epsilon * params.c1]])
        ev = np.linalg.eigvals(jac)
        points.append(FixedPoint(float(v), float(w), ev, _stability_label(ev)))
    return points


def laplacian_matrix(params: FhnParams) -> np.ndarray:
    """Dense second-difference matrix with ghost-node Neumann closure."""
    n = params.grid_points
    lap = -2.0 * np.eye(n) + np.eye(n, k=1) + np.eye(n, k=-1)
    lap[0, 1] = 2.0
    lap[-1, -2] = 2.0
    return lap / params.dx ** 2


def laplacian_eigenvalues(params: FhnParams) -> np.ndarray:
    n = params.grid_points
    k = np.arange(n)
    return (2.0 * np.cos(np.pi * k / (n - 1)) - 2.0) / params.dx ** 2


def _dct1_matrices(n: int):
    k = np.arange(n)
    weights = np.full(n, 2.0)
    weights[[0, -1]] = 1.0
    forward = np.cos(np.pi * np.outer(k, k) / (n - 1)) * weights
    inverse = forward / (2.0 * (n - 1))
    return forward, inverse


def _etd_coefficients(lin: np.ndarray, h: float, contour_points: int = 32):
    # contour averages avoid cancellation in the phi-functions near lin == 0
    r = np.exp(1j * np.pi * (np.arange(1, contour_points + 1) - 0.5) / contour_points)
    lr = h * lin[..., None] + r
    e_lr = np.exp(lr)
    q = h * np.real(np.mean((np.exp(lr / 2) - 1.0) / lr, axis=-1))
    f1 = h * np.real(np.mean((-4.0 - lr + e_lr * (4.0 - 3.0 * lr + lr ** 2)) / lr ** 3, axis=-1))
    f2 = h * np.real(np.mean((2.0 + lr + e_lr * (-2.0 + lr)) / lr ** 3, axis=-1))
    f3 = h * np.real(np.mean((-4.0 - 3.0 * lr - lr ** 2 + e_lr * (4.0 - lr)) / lr ** 3, axis=-1))
    return np.exp(h * lin), np.exp(h * lin / 2), q, f1, f2, f3


class Integrator:
    """ETDRK4 stepper operating on batches of shape ``(..., 2, grid_points)``.

    Internally the state is held as cosine coefficients; ``to_spectral`` and
    ``to_physical`` convert.  ``reaction=False`` turns the model into pure
    diffusion, which is useful for conservation checks.
    """

    def __init__(self, params: FhnParams, reaction: bool = True):
        self.params = params
        self.reaction = reaction
        forward, inverse = _dct1_matrices(params.grid_points)
        self._fwd_t = np.ascontiguousarray(forward.T)
        self._inv_t = np.ascontiguousarray(inverse.T)
        lam = laplacian_eigenvalues(params)
        lin = np.stack([lam, params.delta * lam])
        self._e, self._e2, self._q, self._f1, self._f2, self._f3 = _etd_coefficients(
            lin, params.dt_integration)

    def to_spectral(self, u):
        return np.asarray(u, dtype=float) @ self._fwd_t

    def to_physical(self, coeffs):
        return coeffs @ self._inv_t

    def _nonlinear(self, coeffs):
        if not self.reaction:
            return np.zeros_like(coeffs)
        p = self.params
        u = coeffs @ self._inv_t
        v = u[..., 0, :]
        w = u[..., 1, :]
        out = np.empty_like(u)
        out[..., 0, :] = v - w - v ** 3
        out[..., 1, :] = p.epsilon * (v - p.c1 * w - p.c0)
        return out @ self._fwd_t

    def advance(self, coeffs, n_steps: int = 1):
        """Advance cosine coefficients by ``n_steps`` time steps."""
        e, e2, q, f1, f2, f3 = self._e, self._e2, self._q, self._f1, self._f2, self._f3
        for _ in range(n_steps):
            nu = self._nonlinear(coeffs)
            a = e2 * coeffs + q * nu
            na = self._nonlinear(a)
            b = e2 * coeffs + q * na
            nb = self._nonlinear(b)
            c = e2 * a + q * (2.0 * nb - nu)
            nc = self._nonlinear(c)
            coeffs = e * coeffs + f1 * nu + 2.0 * f2 * (na + nb) + f3 * nc
        return coeffs


@functools.lru_cache(maxsize=16)
def get_integrator(params: FhnParams, reaction: bool = True) -> Integrator:
    return Integrator(params, reaction)


def _check_bounded(u, time, trajectory=None):
    finite = np.isfinite(u)
    big = np.abs(np.where(finite, u, 0.0)) > DIVERGENCE_BOUND
    bad = ~finite | big
    if not bad.any():
        return
    if trajectory is None and u.ndim > 2:
        trajectory = int(np.argmax(bad.reshape(u.shape[0], -1).any(axis=1)))
    where = "" if trajectory is None else f" in trajectory {trajectory}"
    raise IntegrationError(
        f"field values exceeded {DIVERGENCE_BOUND:g} or became non-finite{where} at t={time:g}",
        trajectory=trajectory, time=time)


def _check_grid(state: FieldState, params: FhnParams):
    if state.v.shape[0] != params.grid_points:
        raise ValidationError(
            f"state has {state.v.shape[0]} grid values, params expect {params.grid_points}")


def step(state: FieldState, params: FhnParams, reaction: bool = True) -> FieldState:
    """Advance ``state`` by one ``params.dt_integration``."""
    _check_grid(state, params)
    integ = get_integrator(params, reaction)
    u = integ.to_physical(integ.advance(integ.to_spectral(state.as_array()), 1))
    t = state.t + params.dt_integration
    _check_bounded(u, t)
    return FieldState.from_array(u, t)


def integrate(state: FieldState, params: FhnParams, duration: float,
              reaction: bool = True) -> FieldState:
    """Advance ``state`` by ``duration``, which must be a multiple of the time step."""
    _check_grid(state, params)
    n = int(round(duration / params.dt_integration))
    if abs(n * params.dt_integration - duration) > 1e-9 * max(1.0, abs(duration)) or n < 0:
        raise ValidationError(
            f"duration {duration} is not a non-negative multiple of dt {params.dt_integration}")
    integ = get_integrator(params, reaction)
    coeffs = integ.to_spectral(state.as_array())
    done = 0
    while done < n:
        chunk = min(1000, n - done)
        coeffs = integ.advance(coeffs, chunk)
        done += chunk
        _check_bounded(integ.to_physical(coeffs), state.t + done * params.dt_integration)
    return FieldState.from_array(integ.to_physical(coeffs), state.t + n * params.dt_integration)


def reaction_ode_rhs(params: FhnParams):
    """Right-hand side of the spatially uniform (reaction-only) system."""
    def rhs(t, y):
        v, w = y
        return [v - w - v ** 3, params.epsilon * (v - params.c1 * w - params.c0)]
    return rhs


def steady_state_residual(u, params: FhnParams) -> np.ndarray:
    """Right-hand side of the semi-discrete system for a ``(2, n)`` array."""
    u = np.asarray(u, dtype=float)
    lap = laplacian_matrix(params)
    v, w = u
    return np.stack([
        lap @ v + v - w - v ** 3,
        params.delta * (lap @ w) + params.epsilon * (v - params.c1 * w - params.c0),
    ])


def jacobian(state: FieldState, params: FhnParams) -> np.ndarray:
    """Jacobian of the semi-discrete system at ``state`` (``[v, w]`` ordering)."""
    n = params.grid_points
    lap = laplacian_matrix(params)
    eye = np.eye(n)
    return np.block([
        [lap + np.diag(1.0 - 3.0 * state.v ** 2), -eye],
        [params.epsilon * eye, params.delta * lap - params.epsilon * params.c1 * eye],
    ])


def stationary_front(params: FhnParams = FhnParams(), tol: float = 1e-11,
                     max_iter: int = 50) -> FieldState:
    """Non-uniform steady state (a single front centred in the domain).

    Found by Newton iteration from a ``tanh`` profile.  For the default
    parameters it is unstable through a complex pair close to the imaginary
    axis, and trajectories leaving it approach the breathing-front limit cycle.
    """
    return _stationary_front_cached(params, tol, max_iter)


@functools.lru_cache(maxsize=8)
def _stationary_front_cached(params, tol, max_iter):
    x = params.grid
    v = -np.tanh((x - 0.5 * params.domain_length) / np.sqrt(2.0))
    w = np.zeros_like(v)
    u = np.concatenate([v, w])
    n = params.grid_points
    for _ in range(max_iter):
        res = steady_state_residual(u.reshape(2, n), params).ravel()
        if np.linalg.norm(res, np.inf) < tol:
            return FieldState(u[:n].copy(), u[n:].copy())
        jac = jacobian(FieldState(u[:n], u[n:]), params)
        u = u - np.linalg.solve(jac, res)
    raise NumericalError("Newton iteration for the stationary front did not converge")


def linear_stability(state: FieldState, params: FhnParams) -> np.ndarray:
    """Eigenvalues of the semi-discrete Jacobian, largest real part first."""
    ev = np.linalg.eigvals(jacobian(state, params))
    return ev[np.argsort(-ev.real, kind="stable")]


def smooth_perturbation(rng: np.random.Generator, params: FhnParams, scale: float,
                        modes: int) -> np.ndarray:
    """Random ``(2, n)`` combination of the first ``modes`` non-constant cosines."""
    k = np.arange(1, modes + 1)
    basis = np.cos(np.outer(k, np.pi * params.grid / params.domain_length))
    coeffs = rng.uniform(-1.0, 1.0, size=(2, modes))
    return scale * coeffs @ basis


def generate_trajectories(config: TrajectoryConfig, params: FhnParams = FhnParams(),
                          base: FieldState | None = None) -> list[Trajectory]:
    """Perturb ``base``, discard ``burn_in`` time units, then record snapshots.

    ``base`` defaults to :func:`stationary_front`.  Each trajectory gets
    ``pairs_per_trajectory + 1`` snapshots spaced ``sampling_interval`` apart.
    All trajectories are integrated together as one vectorised batch; results
    are returned in trajectory-index order and depend only on ``rng_seed``.
    """
    per_sample = config.steps_per_sample(params)
    burn_steps = config.burn_in_steps(params)
    if base is None:
        base = stationary_front(params)
    _check_grid(base, params)

    rng = np.random.default_rng(config.rng_seed)
    u0 = np.stack([
        base.as_array() + smooth_perturbation(rng, params, config.perturbation_scale,
                                              config.perturbation_modes)
        for _ in range(config.n_trajectories)
    ])

    integ = get_integrator(params, True)
    coeffs = integ.to_spectral(u0)
    done = 0
    while done < burn_steps:
        chunk = min(per_sample * 50, burn_steps - done)
        coeffs = integ.advance(coeffs, chunk)
        done += chunk
        _check_bounded(integ.to_physical(coeffs), done * params.dt_integration)

    n_rec = config.pairs_per_trajectory + 1
    record = np.empty((n_rec,) + u0.shape)
    record[0] = integ.to_physical(coeffs)
    for n in range(1, n_rec):
        coeffs = integ.advance(coeffs, per_sample)
        record[n] = integ.to_physical(coeffs)
        _check_bounded(record[n], config.burn_in + n * config.sampling_interval)

    t = np.arange(n_rec) * config.sampling_interval
    return [
        Trajectory(t=t.copy(), fields=np.ascontiguousarray(record[:, i]), index=i, initial=u0[i])
        for i in range(config.n_trajectories)
    ]
