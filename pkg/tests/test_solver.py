import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from semidiscrete_ma.laguerre import build_diagram
from semidiscrete_ma.measures import SourceMeasure, TargetDomain, discretize, random_cloud
from semidiscrete_ma.solver import (
    SolveSettings,
    SolverError,
    brute_force_solve,
    damped_newton,
    energy,
    energy_hessian,
    gradient,
    voronoi_potential,
)
from oracles import central_jacobian, feasible_perturbation

TWO = np.array([[0.25, 0.5], [0.75, 0.5]])
FOUR = np.array([[0.25, 0.25], [0.75, 0.25], [0.25, 0.75], [0.75, 0.75]])


def test_settings_validation():
    with pytest.raises(ValueError):
        SolveSettings(tol_residual=0)
    with pytest.raises(ValueError):
        SolveSettings(backtrack_factor=1.0)
    with pytest.raises(ValueError):
        SolveSettings(epsilon0_factor=0.0)


def test_energy_single_site(uniform_target):
    x = np.array([[0.3, 0.8]])
    assert energy(x, [0.0], uniform_target, [1.0]) == pytest.approx(x[0] @ [0.5, 0.5], abs=1e-15)


def test_energy_shift_invariance(uniform_target, rng):
    c = random_cloud(uniform_target.boundary, 30, 1)
    f = np.full(30, 1 / 30)
    phi = voronoi_potential(c) + 0.01 * rng.standard_normal(30)
    assert energy(c, phi + 3.7, uniform_target, f) == pytest.approx(energy(c, phi, uniform_target, f), abs=1e-12)


def test_gradient_sums_to_zero_and_symmetric_init(uniform_target, rng):
    g = gradient(FOUR, voronoi_potential(FOUR), uniform_target, np.full(4, 0.25))
    assert np.abs(g).max() <= 1e-15
    c = random_cloud(uniform_target.boundary, 20, 2)
    g = gradient(c, voronoi_potential(c), uniform_target, np.full(20, 0.05))
    assert abs(g.sum()) <= 1e-12


@pytest.mark.parametrize("seed", range(3))
def test_gradient_and_hessian_match_finite_differences(uniform_target, seed):
    c = random_cloud(uniform_target.boundary, 20, seed)
    f = np.full(20, 0.05)
    phi = voronoi_potential(c)
    step = 1e-6
    e = lambda p: np.array([energy(c, p, uniform_target, f)])
    fd = central_jacobian(e, phi, step)[0]
    assert np.abs(fd - gradient(c, phi, uniform_target, f)).max() <= 1e-6
    fdH = central_jacobian(lambda p: gradient(c, p, uniform_target, f), phi, step)
    H = energy_hessian(c, phi, uniform_target)
    assert np.linalg.norm(fdH - H) <= 1e-5 * np.linalg.norm(H)
    assert np.linalg.eigvalsh(H).min() >= -1e-12


def test_two_point_closed_form(uniform_target):
    phi, rep = damped_newton(TWO, [0.7, 0.3], uniform_target)
    assert rep.converged
    assert np.allclose(phi, [-0.175, 0.175], atol=1e-10)
    # the closed form minimises the energy along the mean-zero line
    E0 = energy(TWO, phi, uniform_target, [0.7, 0.3])
    for t in (1e-3, -1e-3):
        assert energy(TWO, phi + [-t, t], uniform_target, [0.7, 0.3]) > E0


def test_symmetric_four_points(uniform_target):
    phi, rep = damped_newton(FOUR, np.full(4, 0.25), uniform_target)
    assert rep.iterations <= 1
    assert np.allclose(phi, voronoi_potential(FOUR), atol=1e-14)


def test_single_site(uniform_target):
    phi, rep = damped_newton([[0.4, 0.4]], [1.0], uniform_target)
    assert phi.tolist() == [0.0] and rep.converged
    assert brute_force_solve([[0.4, 0.4]], [1.0], uniform_target).tolist() == [0.0]


def test_random_100_regression(uniform_target):
    c = random_cloud(uniform_target.boundary, 100, 0)
    phi, rep = damped_newton(c, np.full(100, 0.01), uniform_target)
    assert rep.converged and rep.final_residual_inf <= 1e-10 and rep.iterations <= 30
    assert abs(phi.mean()) <= 1e-15


def test_history_monotone(uniform_target):
    c = random_cloud(uniform_target.boundary, 200, 4)
    mu = SourceMeasure.create(uniform_target.boundary, lambda x: 1 + 0.9 * np.sin(6 * x[:, 0]) ** 2)
    f = discretize(mu, c).masses
    phi, rep = damped_newton(c, f, uniform_target)
    assert np.all(np.diff(rep.energies) <= 1e-12 * (1 + np.abs(rep.energies[:-1])))
    assert len(rep.residuals) == rep.iterations + 1
    eps0 = 0.5 * min(f.min(), rep.min_masses[0])
    assert min(rep.min_masses) >= eps0
    assert all(0 < t <= 1 for t in rep.step_sizes)


def test_brute_force_two_point(uniform_target):
    assert np.allclose(brute_force_solve(TWO, [0.7, 0.3], uniform_target), [-0.175, 0.175], atol=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_brute_force_matches_newton(uniform_target, seed):
    r = np.random.default_rng(seed)
    n = 3 + seed % 2
    p = r.random((n, 2))
    f = r.random(n) + 0.3
    f /= f.sum()
    a = brute_force_solve(p, f, uniform_target)
    b, _ = damped_newton(p, f, uniform_target)
    assert np.abs(a - b).max() <= 1e-6


def test_brute_force_limit(uniform_target):
    with pytest.raises(ValueError):
        brute_force_solve(np.random.default_rng(0).random((5, 2)), np.full(5, 0.2), uniform_target)


def test_uniqueness_two_starts(uniform_target, rng):
    c = random_cloud(uniform_target.boundary, 80, 9)
    f = np.full(80, 1 / 80)
    a, _ = damped_newton(c, f, uniform_target)
    phi0, size = feasible_perturbation(c, uniform_target, 0.01 * uniform_target.boundary.diameter ** 2, rng)
    assert size > 0
    b, _ = damped_newton(c, f, uniform_target, phi0=phi0)
    assert np.abs(a - b).max() <= 1e-8


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000))
def test_permutation_equivariance(seed):
    r = np.random.default_rng(seed)
    n = 12
    p = r.random((n, 2))
    f = r.random(n) + 0.5
    f /= f.sum()
    Y = TargetDomain.unit_square()
    perm = r.permutation(n)
    a, _ = damped_newton(p, f, Y)
    b, _ = damped_newton(p[perm], f[perm], Y)
    assert np.abs(a[perm] - b).max() <= 1e-8


def test_infeasible_initialization(uniform_target):
    # a third site far inside the others' Voronoi region is not empty, but one
    # outside Y with a large weight gets an empty cell at the start
    p = np.array([[0.2, 0.5], [0.8, 0.5], [0.5, 0.5]])
    with pytest.raises(SolverError, match="infeasible initialization"):
        damped_newton(p, np.full(3, 1 / 3), uniform_target, phi0=[0.0, 0.0, 5.0])


def test_bad_targets(uniform_target):
    with pytest.raises(ValueError):
        damped_newton(TWO, [0.5, 0.6], uniform_target)
    with pytest.raises(ValueError):
        damped_newton(TWO, [1.0, 0.0], uniform_target)


def test_max_iters_error_carries_report(uniform_target):
    c = random_cloud(uniform_target.boundary, 50, 3)
    with pytest.raises(SolverError, match="no convergence") as exc:
        damped_newton(c, np.full(50, 0.02), uniform_target, SolveSettings(max_iters=1))
    assert exc.value.report.iterations == 1


def test_stalled(uniform_target):
    # the first Newton step on this skewed instance needs damping (t = 1/2)
    c = random_cloud(uniform_target.boundary, 50, 3)
    f = np.exp(6 * c.points[:, 0])
    with pytest.raises(SolverError, match="stalled"):
        damped_newton(c, f / f.sum(), uniform_target, SolveSettings(min_step=0.75))


def test_trace_csv(tmp_path, uniform_target):
    c = random_cloud(uniform_target.boundary, 30, 5)
    path = tmp_path / "trace.csv"
    phi, rep = damped_newton(c, np.full(30, 1 / 30), uniform_target, trace_path=path)
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,residual_inf,step,energy,min_mass"
    assert len(lines) == rep.iterations + 2
    assert float(lines[-1].split(",")[1]) == rep.final_residual_inf


def test_nonuniform_target_density():
    Y = TargetDomain.create(TargetDomain.unit_square().boundary, lambda y: 1 + y[:, 0])
    c = random_cloud(Y.boundary, 40, 8)
    f = np.full(40, 1 / 40)
    phi, rep, d = damped_newton(c, f, Y, return_diagram=True)
    assert np.abs(d.masses - f).max() <= 1e-10
    assert np.abs(build_diagram(c, phi, Y).masses - f).max() <= 1e-10
