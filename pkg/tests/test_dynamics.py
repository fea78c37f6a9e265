"""Dynamics tests: RHS hand values, RK4 order against analytic solutions,
grid-solver oracles (heat-equation decay, self-convergence), and sampler
support/determinism contracts."""

import numpy as np
import pytest

from kooprel import dynamics as dyn
from kooprel.errors import ConfigurationError, IntegrationError, StabilityError

CLASSICAL_LORENZ = dyn.LorenzParams(sigma=10.0, rho=28.0, beta_l=8.0 / 3.0)


# ---------------------------------------------------------------------------
# right-hand sides
# ---------------------------------------------------------------------------

def test_duffing_rhs_equilibrium():
    p = dyn.DuffingParams(delta=0.1, alpha=1.0, beta_d=1.0, gamma=0.0, omega=1.0)
    np.testing.assert_array_equal(dyn.duffing_rhs(np.array([0.0, 0.0]), 0.0, p), [0.0, 0.0])


def test_duffing_rhs_hand_values():
    p = dyn.DuffingParams(delta=0.0, alpha=2.0, beta_d=1.0, gamma=0.0, omega=1.0)
    np.testing.assert_allclose(dyn.duffing_rhs(np.array([1.0, 0.0]), 0.0, p), [0.0, -3.0])
    p = dyn.DuffingParams(delta=0.5, alpha=0.0, beta_d=0.0, gamma=0.0, omega=1.0)
    np.testing.assert_allclose(dyn.duffing_rhs(np.array([0.0, 1.0]), 0.0, p), [1.0, -0.5])


def test_lorenz_rhs_hand_values():
    np.testing.assert_array_equal(dyn.lorenz_rhs(np.zeros(3), CLASSICAL_LORENZ), [0.0, 0.0, 0.0])
    np.testing.assert_allclose(dyn.lorenz_rhs(np.array([1.0, 1.0, 1.0]), CLASSICAL_LORENZ),
                               [0.0, 26.0, 1.0 - 8.0 / 3.0])
    p = dyn.LorenzParams(sigma=1.0, rho=1.0, beta_l=1.0)
    np.testing.assert_allclose(dyn.lorenz_rhs(np.array([1.0, 2.0, 3.0]), p), [1.0, -4.0, -1.0])


def test_param_validation():
    with pytest.raises(ConfigurationError):
        dyn.DuffingParams(delta=-0.1, alpha=1.0, beta_d=0.0, gamma=0.0, omega=1.0)
    with pytest.raises(ConfigurationError):
        dyn.LorenzParams(sigma=0.0, rho=1.0, beta_l=1.0)


# ---------------------------------------------------------------------------
# RK4
# ---------------------------------------------------------------------------

def harmonic_rhs(state, t, params):
    return np.stack([state[..., 1], -state[..., 0]], axis=-1)


def test_rk4_zero_steps():
    traj = dyn.rk4_integrate(harmonic_rhs, np.array([1.0, 0.0]), 0.1, 0, None)
    assert traj.states.shape == (1, 2)
    np.testing.assert_array_equal(traj.states[0], [1.0, 0.0])


def test_rk4_harmonic_period():
    # analytic solution of x'' = -x from [1, 0] is [cos t, -sin t]
    n = int(round(2 * np.pi / 0.001))
    dt = 2 * np.pi / n
    traj = dyn.rk4_integrate(harmonic_rhs, np.array([1.0, 0.0]), dt, n, None)
    assert np.max(np.abs(traj.states[-1] - np.array([1.0, 0.0]))) < 1e-6


def _endpoint_error(dt):
    n = int(round(2 * np.pi / dt))
    traj = dyn.rk4_integrate(harmonic_rhs, np.array([1.0, 0.0]), 2 * np.pi / n, n, None)
    return np.linalg.norm(traj.states[-1] - np.array([1.0, 0.0]))


def test_rk4_convergence_order():
    errors = [_endpoint_error(dt) for dt in (0.1, 0.05, 0.025)]
    orders = [np.log2(errors[i] / errors[i + 1]) for i in range(2)]
    for order in orders:
        assert 3.7 <= order <= 4.3
    # halving dt reduces global error by roughly 16x
    assert 12.0 < errors[0] / errors[1] < 20.0


def test_rk4_blowup_reports_step():
    def explode(state, t, params):
        return state ** 2

    with pytest.raises(IntegrationError) as err:
        dyn.rk4_integrate(explode, np.array([1.0]), 1.0, 100, None)
    assert err.value.step is not None and err.value.step >= 1


def test_rk4_batch_matches_single():
    p = dyn.DuffingParams(delta=0.03, alpha=4.0, beta_d=0.2, gamma=5.0, omega=1.0)
    y0 = np.array([[1.0, 0.0], [-2.0, 3.0]])
    batch = dyn.rk4_path(dyn.duffing_rhs, y0, 0.1, 20, p)
    for i in range(2):
        single = dyn.rk4_path(dyn.duffing_rhs, y0[i], 0.1, 20, p)
        np.testing.assert_allclose(batch[i], single, rtol=1e-13, atol=1e-13)


def test_lorenz_sensitivity_to_initial_conditions():
    # chaotic regime: 1e-8 separation grows by > 1e-4 within the horizon
    y0 = np.array([[-8.0, 8.0, 27.0], [-8.0 + 1e-8, 8.0, 27.0]])
    path = dyn.rk4_path(dyn._lorenz_f, y0, 0.01, 2000, CLASSICAL_LORENZ)
    gap = np.max(np.abs(path[0] - path[1]))
    assert gap > 1e-4


# ---------------------------------------------------------------------------
# grid solver
# ---------------------------------------------------------------------------

def test_burgers_ic_formula():
    u, v = dyn.burgers_ic(9, 0.5)
    x, y = dyn.grid_coordinates(9)
    np.testing.assert_allclose(u, x + 0.5 * y)
    np.testing.assert_allclose(v, x - 0.5 * y)


def test_burgers_uniform_fields_unchanged():
    cfg = dyn.BurgersConfig(nu=0.01, grid_n=16, alpha_ic=0.0, dt=0.001, n_steps=1)
    u = np.full((16, 16), 1.3)
    v = np.full((16, 16), -0.4)
    u1, v1 = dyn.burgers_step(u, v, cfg)
    np.testing.assert_array_equal(u1, u)
    np.testing.assert_array_equal(v1, v)


def test_burgers_pure_diffusion_decay_rate():
    # heat-equation oracle: sin(2 pi x) sin(2 pi y) decays at nu * 2 * (2 pi)^2
    n = 64
    nu = 0.01
    dt = 5e-4
    cfg = dyn.BurgersConfig(nu=nu, grid_n=n, alpha_ic=0.0, dt=dt, n_steps=100)
    x, y = dyn.grid_coordinates(n)
    mode = np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
    u, v = mode.copy(), np.zeros_like(mode)
    steps = 100
    for _ in range(steps):
        u, v = dyn.burgers_step(u, v, cfg, convection=False)
    t = steps * dt
    rate = -np.log(np.max(np.abs(u)) / np.max(np.abs(mode))) / t
    expected = nu * 2.0 * (2 * np.pi) ** 2
    assert abs(rate - expected) / expected < 0.05


def test_burgers_pure_diffusion_energy_monotone():
    n = 32
    cfg = dyn.BurgersConfig(nu=0.01, grid_n=n, alpha_ic=0.0, dt=5e-4, n_steps=50)
    x, y = dyn.grid_coordinates(n)
    u = np.sin(2 * np.pi * x) * np.sin(2 * np.pi * y)
    v = 0.5 * u.copy()
    energy = [float(np.sum(u ** 2 + v ** 2))]
    for _ in range(50):
        u, v = dyn.burgers_step(u, v, cfg, convection=False)
        energy.append(float(np.sum(u ** 2 + v ** 2)))
    assert all(e1 <= e0 for e0, e1 in zip(energy, energy[1:]))


def test_burgers_grid_self_convergence():
    # solution at t = 0.1 on 32^2 vs 64^2 differs by < 5% in max-norm
    from scipy.interpolate import RegularGridInterpolator

    t_end, dt, alpha = 0.1, 0.002, 0.8
    sols = {}
    for n in (32, 64):
        steps = int(round(t_end / dt))
        cfg = dyn.BurgersConfig(nu=0.01, grid_n=n, alpha_ic=alpha, dt=dt, n_steps=steps)
        states = dyn.burgers_path(cfg)
        sols[n] = states[-1]
    pts = np.linspace(0, 1, 32)
    fine_pts = np.linspace(0, 1, 64)
    xg, yg = np.meshgrid(pts, pts, indexing="ij")
    query = np.stack([xg.ravel(), yg.ravel()], axis=-1)
    for c in range(2):
        interp = RegularGridInterpolator((fine_pts, fine_pts), sols[64][c])
        fine_on_coarse = interp(query).reshape(32, 32)
        diff = np.max(np.abs(sols[32][c] - fine_on_coarse))
        scale = np.max(np.abs(fine_on_coarse))
        assert diff / scale < 0.05


def test_burgers_stability_guard():
    with pytest.raises(StabilityError):
        dyn.BurgersConfig(nu=0.01, grid_n=64, alpha_ic=1.0, dt=0.01, n_steps=10)


def test_burgers_batch_matches_single():
    cfg = dyn.BurgersConfig(nu=0.01, grid_n=16, alpha_ic=1.0, dt=0.01, n_steps=5)
    alphas = np.array([0.6, 1.0])
    batch = dyn.burgers_path(cfg, alpha=alphas)
    for i, a in enumerate(alphas):
        single = dyn.burgers_path(cfg, alpha=a)
        np.testing.assert_array_equal(batch[i], single)


# ---------------------------------------------------------------------------
# samplers
# ---------------------------------------------------------------------------

def test_uniform_law_of_large_numbers():
    d = dyn.Distribution("uniform", (0.0, 1.0))
    draws = dyn.sample(d, 10 ** 5, seed=7)
    assert abs(np.mean(draws) - 0.5) < 0.01


def test_truncated_gaussian_support():
    d = dyn.Distribution("truncated_gaussian", (-5.0, 5.0))
    draws = dyn.sample(d, 10 ** 6, seed=11)
    assert draws.min() >= -5.0 and draws.max() <= 5.0


def test_truncated_lognormal_support_with_negative_bound():
    d = dyn.Distribution("truncated_lognormal", (-6.0, 6.0))
    draws = dyn.sample(d, 10 ** 5, seed=3)
    assert draws.min() >= -6.0 and draws.max() <= 6.0
    # median of the shifted lognormal sits near the midpoint
    assert abs(np.median(draws) - 0.0) < 0.15


def test_sampler_determinism():
    d = dyn.Distribution("truncated_gaussian", (0.0, 10.0))
    a = dyn.sample(d, 1000, seed=42)
    b = dyn.sample(d, 1000, seed=42)
    np.testing.assert_array_equal(a, b)


def test_invalid_support():
    with pytest.raises(ConfigurationError):
        dyn.Distribution("uniform", (1.0, -1.0))
    with pytest.raises(ConfigurationError):
        dyn.Distribution("cauchy", (0.0, 1.0))


def test_point_mass_support():
    d = dyn.Distribution("uniform", (2.5, 2.5))
    np.testing.assert_array_equal(dyn.sample(d, 5, seed=0), np.full(5, 2.5))


def test_draw_inputs_per_sample_streams():
    dists = [dyn.Distribution("uniform", (0.0, 1.0)), dyn.Distribution("uniform", (5.0, 6.0))]
    a = dyn.draw_inputs(dists, 50, seed=1)
    b = dyn.draw_inputs(dists, 50, seed=1)
    np.testing.assert_array_equal(a, b)
    # extending the sample count preserves earlier samples (stream independence)
    c = dyn.draw_inputs(dists, 60, seed=1)
    np.testing.assert_array_equal(c[:50], a)
    assert np.all(a[:, 1] >= 5.0)


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

DUFFING_FIXED = {"delta": 0.03, "alpha": 4.0, "beta": 0.2, "gamma": 5.0, "omega": 1.0}


def test_generate_dataset_point_mass_reduces_to_rk4():
    dists = {"x0": dyn.Distribution("uniform", (1.0, 1.0)),
             "v0": dyn.Distribution("uniform", (0.0, 0.0))}
    ds = dyn.generate_dataset("duffing", "ic_uncertainty", dists, 1, 50, 0.1, seed=5,
                              fixed=DUFFING_FIXED)
    p = dyn.DuffingParams(delta=0.03, alpha=4.0, beta_d=0.2, gamma=5.0, omega=1.0)
    direct = dyn.rk4_path(dyn.duffing_rhs, np.array([1.0, 0.0]), 0.1, 50, p)
    np.testing.assert_array_equal(ds.states[0], direct)


def test_generate_dataset_ic_supports():
    dists = {"x0": dyn.Distribution("uniform", (-5.0, 5.0)),
             "v0": dyn.Distribution("uniform", (0.0, 10.0))}
    ds = dyn.generate_dataset("duffing", "ic_uncertainty", dists, 64, 10, 0.1, seed=9,
                              fixed=DUFFING_FIXED)
    assert np.all(ds.states[:, 0, 0] > -5.0) and np.all(ds.states[:, 0, 0] < 5.0)
    assert np.all(ds.states[:, 0, 1] > 0.0) and np.all(ds.states[:, 0, 1] < 10.0)


def test_generate_dataset_seeds_differ():
    dists = {"x0": dyn.Distribution("uniform", (-5.0, 5.0)),
             "v0": dyn.Distribution("uniform", (0.0, 10.0))}
    a = dyn.generate_dataset("duffing", "ic_uncertainty", dists, 8, 5, 0.1, seed=1,
                             fixed=DUFFING_FIXED)
    b = dyn.generate_dataset("duffing", "ic_uncertainty", dists, 8, 5, 0.1, seed=2,
                             fixed=DUFFING_FIXED)
    assert not np.array_equal(a.states[:, 0], b.states[:, 0])


def test_generate_dataset_parameter_mode():
    dists = {name: dyn.Distribution("uniform", rng)
             for name, rng in zip(dyn.DUFFING_PARAM_NAMES,
                                  [(0.02, 0.04), (2.0, 6.0), (0.1, 0.3), (2.0, 8.0)])}
    ds = dyn.generate_dataset("duffing", "parameter_uncertainty", dists, 16, 10, 0.1, seed=3,
                              fixed={"omega": 1.0, "ic": [1.0, 0.0]})
    assert ds.inputs.shape == (16, 4)
    np.testing.assert_array_equal(ds.states[:, 0], np.tile([1.0, 0.0], (16, 1)))
    traj = ds.trajectory(4)
    assert traj.provenance["inputs"]["alpha"] == ds.inputs[4, 1]


def test_generate_dataset_burgers_mode_guard():
    dists = {"alpha": dyn.Distribution("uniform", (0.6, 1.0))}
    with pytest.raises(ConfigurationError):
        dyn.generate_dataset("burgers", "parameter_uncertainty", dists, 2, 5, 0.01,
                             seed=1, fixed={"nu": 0.01, "grid_n": 16})
