import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from koopfuse.errors import IntegrationError, ValidationError
from koopfuse.fhn import (FhnParams, FieldState, TrajectoryConfig, generate_trajectories, integrate,
                          laplacian_eigenvalues, laplacian_matrix, linear_stability,
                          reaction_fixed_points, reaction_ode_rhs, stationary_front,
                          steady_state_residual, step)

PARAMS = FhnParams()


def test_uniform_fixed_point_matches_bisection():
    # oracle: bracketed root of the cubic obtained by eliminating w
    c0, c1 = PARAMS.c0, PARAMS.c1
    f = lambda v: v ** 3 + (1 / c1 - 1) * v - c0 / c1
    grid = np.linspace(-2, 2, 4001)
    signs = np.sign(f(grid))
    brackets = np.flatnonzero(signs[:-1] * signs[1:] < 0)
    oracle = sorted(brentq(f, grid[i], grid[i + 1], xtol=1e-15) for i in brackets)
    fps = reaction_fixed_points(PARAMS)
    assert len(fps) == len(oracle) == 3
    for fp, v in zip(fps, oracle):
        assert fp.v == pytest.approx(v, abs=1e-12)
        assert fp.w == pytest.approx((v - c0) / c1, abs=1e-12)
        rhs = reaction_ode_rhs(PARAMS)(0.0, [fp.v, fp.w])
        assert np.max(np.abs(rhs)) < 1e-12


def test_fixed_point_stability_labels():
    labels = [fp.stability for fp in reaction_fixed_points(PARAMS)]
    assert labels[1] == "saddle"
    assert labels[0] == labels[2] == "stable"


def test_uniform_state_follows_reaction_ode():
    # spatially uniform fields feel no diffusion, so the PDE reduces to the ODE
    v0, w0, T = 0.4, -0.1, 20.0
    state = integrate(FieldState.uniform(v0, w0, PARAMS), PARAMS, T)
    ref = solve_ivp(reaction_ode_rhs(PARAMS), (0, T), [v0, w0], rtol=1e-12, atol=1e-12).y[:, -1]
    assert np.allclose(state.v, ref[0], atol=1e-8)
    assert np.allclose(state.w, ref[1], atol=1e-8)


def test_laplacian_eigenvalues_match_dense_matrix():
    p = FhnParams(grid_points=40)
    dense = np.sort(np.linalg.eigvals(laplacian_matrix(p)).real)
    assert np.allclose(dense, np.sort(laplacian_eigenvalues(p)), atol=1e-9)


def test_pure_diffusion_conserves_trapezoidal_mass():
    rng = np.random.default_rng(3)
    u = rng.normal(size=(2, PARAMS.grid_points))
    out = integrate(FieldState.from_array(u), PARAMS, 5.0, reaction=False)
    wts = np.full(PARAMS.grid_points, PARAMS.dx)
    wts[[0, -1]] /= 2
    assert out.v @ wts == pytest.approx(u[0] @ wts, rel=1e-10)
    assert out.w @ wts == pytest.approx(u[1] @ wts, rel=1e-10)


def _run(dt, T=4.0):
    p = FhnParams(dt_integration=dt)
    x = p.grid
    u0 = FieldState(np.cos(np.pi * x / p.domain_length) * 0.8,
                    0.1 * np.cos(2 * np.pi * x / p.domain_length))
    return integrate(u0, p, T).as_vector()


def test_time_step_convergence_is_fourth_order():
    ref = _run(0.0125)
    e1 = np.linalg.norm(_run(0.2) - ref)
    e2 = np.linalg.norm(_run(0.1) - ref)
    assert e2 < 1e-5
    assert e1 / e2 > 12  # nominal 16


def test_resolution_doubling_changes_front_little():
    coarse = stationary_front(FhnParams(grid_points=200))
    fine = stationary_front(FhnParams(grid_points=399))
    assert np.max(np.abs(coarse.v - fine.v[::2])) < 5e-3


def test_stationary_front_is_unstable_oscillatory():
    front = stationary_front(PARAMS)
    assert np.max(np.abs(steady_state_residual(front.as_array(), PARAMS))) < 1e-10
    ev = linear_stability(front, PARAMS)
    assert ev[0].real > 0
    assert abs(ev[0].imag) > 0.01


def test_step_equals_one_step_integrate():
    s = stationary_front(PARAMS)
    assert np.array_equal(step(s, PARAMS).as_vector(), integrate(s, PARAMS, PARAMS.dt_integration).as_vector())


def test_trajectories_are_seed_deterministic_and_distinct():
    cfg = TrajectoryConfig(n_trajectories=2, burn_in=10.0, pairs_per_trajectory=5, rng_seed=7)
    a = generate_trajectories(cfg, PARAMS)
    b = generate_trajectories(cfg, PARAMS)
    c = generate_trajectories(TrajectoryConfig(n_trajectories=2, burn_in=10.0, pairs_per_trajectory=5,
                                               rng_seed=8), PARAMS)
    assert np.array_equal(a[0].fields, b[0].fields)
    assert not np.allclose(a[0].fields, c[0].fields)
    assert a[0].fields.shape == (6, 2, PARAMS.grid_points)
    assert np.allclose(np.diff(a[0].t), 2.0)


def test_batch_matches_individual_integration():
    cfg = TrajectoryConfig(n_trajectories=3, burn_in=4.0, pairs_per_trajectory=2, rng_seed=1)
    trajs = generate_trajectories(cfg, PARAMS)
    for tr in trajs:
        s = integrate(FieldState.from_array(tr.initial), PARAMS, cfg.burn_in)
        assert np.allclose(s.as_array(), tr.fields[0], atol=1e-12)


def test_divergence_reports_trajectory():
    blow = FieldState(np.full(PARAMS.grid_points, 1e7), np.zeros(PARAMS.grid_points))
    with pytest.raises(IntegrationError), np.errstate(over="ignore", invalid="ignore"):
        integrate(blow, PARAMS, 1.0)


@pytest.mark.parametrize("kwargs", [dict(sampling_interval=0.25), dict(burn_in=0.05)])
def test_incommensurate_times_rejected(kwargs):
    cfg = TrajectoryConfig(n_trajectories=1, pairs_per_trajectory=1, **kwargs)
    with pytest.raises(ValidationError):
        generate_trajectories(cfg, PARAMS)


def test_bad_params_rejected():
    with pytest.raises(ValidationError):
        FhnParams(grid_points=2)
    with pytest.raises(ValidationError):
        FhnParams(dt_integration=0.0)
