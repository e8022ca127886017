import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relurep import net as nn
from relurep import oracle as orc
from relurep import pfunc as pf
from relurep.tasks import Dataset, gen_coupling_pair

TIGHT = orc.SolverConfig()


def random_instance(seed, N=6, d_out=1):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.uniform(-1, 1, N))
    return Dataset(x[:, None], rng.standard_normal((N, d_out)))


# -- grid ---------------------------------------------------------------------


def test_grid_construction():
    data = Dataset([[0.0], [1.0]], [[0.0], [1.0]])
    grid = orc.build_grid(data, resolution=2, margin=0.0)
    assert len(grid) == 4
    assert sorted(zip(grid.direction.tolist(), grid.kink.tolist())) == [
        (-1.0, 0.0), (-1.0, 1.0), (1.0, 0.0), (1.0, 1.0)
    ]
    rho = dict(zip(grid.kink.tolist(), grid.rho.tolist()))
    assert rho[0.0] == pytest.approx(2.0)
    assert rho[1.0] == pytest.approx(2 * np.sqrt(2))


def test_grid_contains_data_and_tails():
    data = random_instance(0)
    grid = orc.build_grid(data, 16, 0.5, tails=4)
    for x in data.X[:, 0]:
        assert np.sum(grid.kink == x) == 2
    assert grid.kink.min() < -1e5 and grid.kink.max() > 1e5
    pairs = set(zip(grid.direction.tolist(), grid.kink.tolist()))
    assert len(pairs) == len(grid)


def test_grid_errors():
    with pytest.raises(orc.UnsupportedDimension):
        orc.build_grid(Dataset(np.zeros((3, 2)), np.zeros((3, 1))), 8)
    with pytest.raises(ValueError):
        orc.build_grid(random_instance(0), 3)


def test_no_bias_weights_are_constant():
    grid = orc.build_grid(random_instance(0), 8, kind="no_bias_reg")
    assert np.all(grid.rho == 2.0)


# -- closed forms -------------------------------------------------------------


def test_huge_lambda_gives_ridge_constant():
    data = random_instance(1, N=6, d_out=2)
    lam = 1e6
    sol = orc.solve_group_lasso(data, lam, orc.build_grid(data, 32, 0.5), TIGHT)
    assert np.all(sol.W == 0)
    Y = data.Y
    # minimise sum (c - y)^2 + lam c^2 per column
    c = Y.sum(axis=0) / (data.n + lam)
    obj = np.sum(Y**2) - np.sum(Y.sum(axis=0) ** 2) / (data.n + lam)
    assert np.allclose(sol.c, c, rtol=1e-9)
    assert sol.objective == pytest.approx(obj, rel=1e-12)


@pytest.mark.parametrize("lam", [1.0, 3.0])
def test_single_sample_uses_intercept_only(lam):
    # with lam >= 1 every atom's KKT bound holds at W = 0, whatever the grid
    data = Dataset([[0.0]], [[2.0]])
    sol = orc.solve_group_lasso(data, lam, orc.build_grid(data, 1, 1.0, tails=4), TIGHT)
    assert np.all(sol.W == 0)
    assert sol.c[0] == pytest.approx(2.0 / (1.0 + lam), rel=1e-9)


def test_predict_examples():
    grid = orc.Grid(np.array([1.0, -1.0]), np.array([0.0, 0.5]), np.array([2.0, 2.0]))
    W = np.array([[1.0], [0.0]])
    sol = orc.OracleSolution(grid, W, np.array([0.5]), 0.1, 0.0, 0.0, True, 0)
    assert orc.predict(sol, 2.0)[0] == 2.5
    sol0 = orc.OracleSolution(grid, np.zeros((2, 1)), np.array([0.5]), 0.1, 0.0, 0.0, True, 0)
    assert orc.predict(sol0, -3.0)[0] == 0.5


# -- certificates -------------------------------------------------------------


@pytest.mark.parametrize("seed,d_out", [(0, 1), (1, 1), (2, 2)])
def test_dual_certificate_closes_gap(seed, d_out):
    data = random_instance(seed, N=6, d_out=d_out)
    grid = orc.build_grid(data, 64, 0.5)
    sol = orc.solve_group_lasso(data, 0.1, grid, TIGHT)
    lower, _ = orc.dual_solve(data, 0.1, grid)
    assert lower <= sol.objective + 1e-12
    assert sol.objective - lower <= 1e-8


def test_dual_value_is_lower_bound_for_any_multiplier(rng):
    data = random_instance(3, N=5, d_out=2)
    grid = orc.build_grid(data, 16, 0.5)
    sol = orc.solve_group_lasso(data, 0.05, grid, TIGHT)
    for _ in range(20):
        U = rng.standard_normal(data.Y.shape) * rng.uniform(0.01, 10)
        assert orc.dual_value(data, 0.05, grid, U) <= sol.objective + 1e-12


def test_kkt_zero_problem():
    data = Dataset(np.linspace(-1, 1, 5)[:, None], np.zeros((5, 1)))
    grid = orc.build_grid(data, 8)
    sol = orc.OracleSolution(grid, np.zeros((len(grid), 1)), np.zeros(1), 0.1, 0.0, 0.0, True, 0)
    assert orc.kkt_residual(sol, data) == 0.0


def test_kkt_grows_when_active_weight_perturbed():
    data = random_instance(4, N=6, d_out=2)
    sol = orc.solve_group_lasso(data, 0.05, orc.build_grid(data, 64, 0.5), TIGHT)
    base = orc.kkt_residual(sol, data)
    assert base < 1e-6
    g = sol.active()[0]
    W = sol.W.copy()
    W[g] += 1e-2
    moved = orc.OracleSolution(sol.grid, W, sol.c, sol.lam, 0.0, 0.0, False, 0)
    assert orc.kkt_residual(moved, data) > base


def test_objective_trace_non_increasing():
    data = gen_coupling_pair(0)
    sol = orc.solve_group_lasso(data, 0.1, orc.build_grid(data, 128, 1.0, tails=16))
    assert sol.converged
    trace = np.array(sol.objective_trace)
    assert np.all(np.diff(trace) <= 1e-12 * np.abs(trace[:-1]))


def test_stall_falls_back_to_dual_certificate():
    # atoms at -1, 0, 1 in both directions plus the constant are linearly
    # dependent, so the KKT residual decays slowly along one direction
    data = gen_coupling_pair(0)
    grid = orc.build_grid(data, 128, 1.0, tails=16)
    sol = orc.solve_group_lasso(data, 0.1, grid, orc.SolverConfig(stall_iters=20_000))
    assert sol.converged
    assert sol.kkt_residual < 1e-6
    assert sol.duality_gap is not None and -1e-12 <= sol.duality_gap <= 1e-11
    lower, _ = orc.dual_solve(data, 0.1, grid)
    assert sol.objective - lower <= 1e-10


def test_non_convergence_is_reported():
    data = random_instance(5, N=6)
    sol = orc.solve_group_lasso(data, 0.01, orc.build_grid(data, 64, 0.5), orc.SolverConfig(max_iters=5))
    assert not sol.converged
    assert sol.kkt_residual >= 1e-7


def test_cvxpy_cross_check():
    cp = pytest.importorskip("cvxpy")
    data = random_instance(6, N=8, d_out=2)
    lam = 0.05
    grid = orc.build_grid(data, 48, 0.5)
    sol = orc.solve_group_lasso(data, lam, grid, TIGHT)
    Phi = grid.features(data.X[:, 0])
    W = cp.Variable((len(grid), 2))
    c = cp.Variable(2)
    fit = Phi @ W + np.ones((data.n, 1)) @ cp.reshape(c, (1, 2), order="C")
    obj = cp.sum_squares(fit - data.Y) + lam * (grid.rho @ cp.norm(W, 2, axis=1) + cp.sum_squares(c))
    prob = cp.Problem(cp.Minimize(obj))
    prob.solve()
    assert sol.objective == pytest.approx(prob.value, rel=1e-6)
    assert sol.objective <= prob.value + 1e-9


# -- multi-output structure ---------------------------------------------------


def test_separate_matches_joint_for_single_output():
    data = random_instance(7, N=6)
    grid = orc.build_grid(data, 32, 0.5)
    joint = orc.solve_group_lasso(data, 0.1, grid, TIGHT)
    (sep,) = orc.solve_separate(data, 0.1, grid, TIGHT)
    assert sep.objective == pytest.approx(joint.objective, rel=1e-12)
    assert np.allclose(sep.W, joint.W, atol=1e-9)


def test_group_norm_at_most_l1():
    data = random_instance(8, N=6, d_out=3)
    grid = orc.build_grid(data, 32, 0.5)
    sol = orc.solve_group_lasso(data, 0.1, grid, TIGHT)
    group = grid.rho @ np.linalg.norm(sol.W, axis=1)
    l1 = grid.rho @ np.abs(sol.W).sum(axis=1)
    assert group <= l1 + 1e-15


def test_identical_columns_stay_identical():
    base = random_instance(9, N=6)
    data = Dataset(base.X, np.hstack([base.Y, base.Y]))
    grid = orc.build_grid(data, 32, 0.5)
    joint = orc.solve_group_lasso(data, 0.1, grid, TIGHT)
    assert np.allclose(joint.W[:, 0], joint.W[:, 1], atol=1e-12)
    a, b = orc.solve_separate(data, 0.1, grid, TIGHT)
    assert np.array_equal(a.W, b.W)


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 2**31))
def test_optimal_objective_monotone_in_lambda(seed):
    data = random_instance(seed, N=5, d_out=2)
    grid = orc.build_grid(data, 24, 0.5)
    objs = [orc.solve_group_lasso(data, lam, grid, TIGHT).objective for lam in (0.01, 0.03, 0.1, 0.3)]
    assert np.all(np.diff(objs) >= -1e-9)


# -- conversion to a network --------------------------------------------------


def test_atoms_to_network_reproduces_solution():
    data = random_instance(10, N=7, d_out=2)
    lam = 0.05
    sol = orc.solve_group_lasso(data, lam, orc.build_grid(data, 64, 0.5, tails=8), TIGHT)
    net, arch = orc.atoms_to_network(sol)
    assert arch.widths == (len(sol.active(0.0)),)
    xs = np.linspace(-3, 3, 301)
    assert np.allclose(nn.forward(net, arch, xs[:, None]), orc.predict(sol, xs), atol=1e-12)
    fit = np.sum((nn.forward(net, arch, data.X) - data.Y) ** 2)
    assert fit + lam * nn.param_norm_sq(net) == pytest.approx(sol.objective, rel=1e-10)
    assert pf.network_cost(net) == pytest.approx(sol.penalty, rel=1e-10)


def test_atoms_to_network_single_atom():
    grid = orc.Grid(np.array([-1.0]), np.array([0.7]), orc.atom_weight(np.array([0.7])))
    sol = orc.OracleSolution(grid, np.array([[0.3, -0.4]]), np.array([0.2, 0.1]), 0.1, 0.0, 0.0, True, 0)
    net, _ = orc.atoms_to_network(sol)
    expected = grid.rho[0] * 0.5 + 0.05
    assert nn.param_norm_sq(net) == pytest.approx(expected, rel=1e-12)


def test_atoms_to_network_empty():
    grid = orc.build_grid(Dataset([[0.0]], [[1.0]]), 4)
    sol = orc.OracleSolution(grid, np.zeros((len(grid), 1)), np.array([0.7]), 0.1, 0.0, 0.0, True, 0)
    net, arch = orc.atoms_to_network(sol)
    assert arch.widths == (0,)
    assert nn.forward(net, arch, 5.0)[0] == 0.7


# -- minimiser set ------------------------------------------------------------


def test_minimizer_set_distance_of_solution_is_zero():
    data = random_instance(11, N=6, d_out=2)
    sol = orc.solve_group_lasso(data, 0.05, orc.build_grid(data, 64, 0.5), TIGHT)
    xs = np.linspace(-1.5, 1.5, 61)
    dist, W = orc.minimizer_set_distance(sol, data, xs, orc.predict(sol, xs))
    assert dist < 1e-5
    other = orc.OracleSolution(sol.grid, W, sol.c, sol.lam, 0.0, 0.0, True, 0)
    assert orc.objective_value(data, 0.05, sol.grid, W, sol.c) == pytest.approx(sol.objective, rel=1e-5)
    assert np.max(np.abs(orc.predict(other, xs) - orc.predict(sol, xs))) <= dist + 1e-9


def test_solution_files(tmp_path):
    data = random_instance(12, N=5)
    sol = orc.solve_group_lasso(data, 0.1, orc.build_grid(data, 16, 0.5))
    sol.write_csv(tmp_path / "atoms.csv", act_tol=orc.ACT_TOL)
    sol.write_summary(tmp_path / "s.json")
    rows = (tmp_path / "atoms.csv").read_text().splitlines()
    assert rows[0] == "s,xi,rho,W_1"
    assert len(rows) - 1 == len(sol.active())
    assert '"converged": true' in (tmp_path / "s.json").read_text()
