import numpy as np
import pytest

from solution_flow.datasets import gauss1
from solution_flow.flowmath import NoisingSchedule, SolutionParameterization
from solution_flow.network import NetworkConfig, init_params, predicted_velocity
from solution_flow.sampler import analytic_gmm_velocity
from solution_flow.verify import (
    boundary_check, flow_residual, global_error_check, make_probe_grid, model_solution,
    ode_error_check, pde_residual, residual_report, velocity_identity_error,
)

EULER = SolutionParameterization("euler")
TRIG = SolutionParameterization("trigonometric")
LIN = NoisingSchedule("linear")
NET = NetworkConfig(hidden=(16, 16), embed_dim=8, label_dim=4, num_classes=2)
C = np.array([0.5, -1.0])


def const_field(x, t):
    return np.broadcast_to(C, x.shape)


def exact_const_solution(x, t, s):
    return x + (np.asarray(s) - np.asarray(t))[:, None] * C


def linear_field(x, t):
    return -x


def exact_linear_solution(x, t, s):
    # dX/dt = -X  =>  X(s) = X(t) exp(-(s - t))
    return x * np.exp(-(np.asarray(s) - np.asarray(t)))[:, None]


def probes(n=200, seed=0):
    r = np.random.default_rng(seed)
    t = r.uniform(0.2, 1.0, n)
    return r.standard_normal((n, 2)), t, r.uniform(0, 1, n) * (t - 0.1)


def random_params(seed=0):
    return init_params(NET, np.random.default_rng(seed), zero_last=False)


def test_exact_solution_zero_residual():
    x, t, s = probes()
    r = flow_residual(exact_const_solution, const_field, x, t, s, 1e-3, central=True)
    assert np.abs(r).max() < 1e-12
    r = flow_residual(exact_linear_solution, linear_field, x, t, s, 1e-3, central=True)
    assert np.abs(r).max() < 1e-5


def test_identity_flow_residual_is_field_norm():
    x, t, s = probes()
    p = init_params(NET, np.random.default_rng(0))  # F == 0 so f(x, t, s) = x
    r = pde_residual(p, EULER, const_field, x, t, s, 1e-3, 0)
    np.testing.assert_allclose(np.linalg.norm(r, axis=1), np.linalg.norm(C), rtol=1e-9)


@pytest.mark.parametrize("central,order", [(False, 1), (True, 2)])
def test_residual_convergence_order(central, order):
    x, t, s = probes(50, 1)
    p = random_params(2)
    sol = model_solution(p, EULER, 1)
    fine = flow_residual(sol, linear_field, x, t, s, 1e-6, central=True)
    e1 = np.abs(flow_residual(sol, linear_field, x, t, s, 2e-2, central) - fine).max()
    e2 = np.abs(flow_residual(sol, linear_field, x, t, s, 1e-2, central) - fine).max()
    assert e1 / e2 > 2**order * 0.8


def test_forward_residual_needs_small_h():
    x, t, s = probes(5)
    with pytest.raises(ValueError):
        flow_residual(exact_const_solution, const_field, x, t, s, 0.5)
    with pytest.raises(ValueError):
        flow_residual(exact_const_solution, const_field, x, t, s, 0.0)


@pytest.mark.parametrize("param", [EULER, TRIG])
def test_boundary_check(param):
    r = np.random.default_rng(3)
    x = r.standard_normal((10**4, 2))
    t = r.uniform(0, 1, 10**4)
    assert boundary_check(random_params(), param, x, t, r.integers(0, 3, 10**4)) <= 1e-12
    assert boundary_check(random_params(), param, x[:5], np.full(5, 0.999), 0) <= 1e-12


@pytest.mark.parametrize("param", [EULER, TRIG])
def test_velocity_identity_converges(param):
    x, t, _ = probes(1000, 4)
    p = random_params(5)
    e1 = np.median(velocity_identity_error(p, param, x, t, 1, 1e-3))
    e2 = np.median(velocity_identity_error(p, param, x, t, 1, 5e-4))
    assert e2 <= 0.5 * e1


def test_residual_report_summary():
    x, t, s = probes()
    rep = residual_report(init_params(NET, np.random.default_rng(0)), EULER, const_field, x, t, s, 0)
    assert rep.median == pytest.approx(np.linalg.norm(C)) and rep.delta_hat >= rep.median


def test_probe_grid_gaps():
    r = np.random.default_rng(6)
    x0 = r.standard_normal((500, 2))
    grid = make_probe_grid(x0, np.zeros(500, int), r.standard_normal((500, 2)), r, LIN)
    assert np.all(grid.t - grid.s >= 0.05 - 1e-15) and np.all(grid.s >= 0)


def test_global_bound_exact_solution():
    x = np.random.default_rng(7).standard_normal((64, 2))
    rep = global_error_check(exact_linear_solution, linear_field, x)
    assert np.all(rep.errors < 1e-8)
    assert rep.fraction == 1.0


def test_global_bound_identity_flow_untrained():
    # The inequality is scale-aware: a large residual admits a large error.
    p = init_params(NET, np.random.default_rng(0))
    x = np.random.default_rng(8).standard_normal((128, 2))
    vf = lambda z, t: analytic_gmm_velocity(gauss1(), LIN, z, t) + C
    rep = global_error_check(model_solution(p, EULER, 2), vf, x)
    assert rep.fraction >= 0.95


def test_ode_error_exact_solution():
    x, t, s = probes(100, 9)
    rep = ode_error_check(exact_linear_solution, linear_field, x, t, s, 1e-3)
    fx = np.linalg.norm(exact_linear_solution(x, t, s), axis=1)
    # central-difference truncation: |f'''| h^2 / 6 = |f| h^2 / 6
    assert np.all(rep.errors <= fx * 1e-6 / 6 * 1.01)
    finer = ode_error_check(exact_linear_solution, linear_field, x, t, s, 5e-4)
    assert np.median(rep.errors / finer.errors) > 3.5


def test_ode_error_at_diagonal_is_velocity_identity():
    x, t, _ = probes(50, 10)
    p = random_params(11)
    v = lambda z, tt: predicted_velocity(p, EULER, z, tt, 1)
    rep = ode_error_check(model_solution(p, EULER, 1), v, x, t, t, 1e-4)
    direct = velocity_identity_error(p, EULER, x, t, 1, 1e-4)
    np.testing.assert_allclose(rep.errors, direct, atol=1e-12)


def test_ode_error_ratio():
    x, t, s = probes(20, 12)
    rep = ode_error_check(exact_const_solution, const_field, x, t, s, 1e-3, delta_hat=0.25)
    assert rep.ratio_to_sqrt_delta == pytest.approx(rep.median / 0.5)
    assert ode_error_check(exact_const_solution, const_field, x, t, s).ratio_to_sqrt_delta is None
