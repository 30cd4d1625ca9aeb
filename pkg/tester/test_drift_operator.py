import dataclasses

import numpy as np
import pytest

from solitonforge.drift_operator import (
    apply,
    assemble,
    barrier_check,
    drift_perturbation_norm,
    forward_norm,
    from_coefficients,
    inverse_norm,
    inverse_norm_sweep,
    forward_norm_sweep,
    maximum_principle_check,
    solve,
    truncation_sensitivity,
    weighted_norm,
)
from solitonforge.exceptions import DomainError, SolverError
from solitonforge.glue import build_glued, glued_grid
from solitonforge.models import BoundaryCondition, Grid, WeightedNorm
from solitonforge.radial_soliton import solve_profile
from solitonforge.sampling import make_rng
from solitonforge.soliton_newton import linearize

H = 1.0 / 128


@pytest.fixture(scope="module")
def cao():
    return solve_profile(2, 0.0, Grid.uniform(-5.0, 10.0, H))


def _dirichlet(p):
    return assemble(p.n, p.phi, p.phi_t, 1.0, p.grid, BoundaryCondition.DIRICHLET)


def test_constants_are_annihilated(cao):
    L = _dirichlet(cao)
    image = apply(L, np.ones(cao.grid.size))
    assert np.max(np.abs(image[1:-1])) < 1e-12 * np.max(np.abs(L.banded))


def test_linear_function(cao):
    L = _dirichlet(cao)
    image = apply(L, cao.grid.nodes.copy())
    expected = (cao.n - 1) / cao.phi + 1.0
    assert np.allclose(image[1:-1], expected[1:-1], rtol=1e-9)


def test_ellipticity_on_cao_profile(cao):
    assert np.all(_dirichlet(cao).coeff_a >= 1.0 / cao.n)


def test_consistency_is_second_order():
    errors = []
    for h in (1.0 / 32, 1.0 / 64):
        p = solve_profile(2, 0.0, Grid.uniform(-4.0, 4.0, h))
        t = p.grid.nodes
        psi = np.exp(-t * t)
        exact = (4 * t * t - 2) * psi / p.phi_t + ((p.n - 1) / p.phi + 1.0) * (-2 * t * psi)
        errors.append(np.max(np.abs(apply(_dirichlet(p), psi) - exact)[1:-1]))
    assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.2)


def test_barrier_identity():
    residuals = [barrier_check(solve_profile(2, 0.0, Grid.uniform(-6.0, 20.0, h)), 0.5) for h in (H, H / 2)]
    assert residuals[0] < 1e-4
    assert residuals[0] / residuals[1] == pytest.approx(4.0, rel=0.2)


def test_barrier_residual_is_linear_in_delta():
    p = solve_profile(2, 0.0, Grid.uniform(-5.0, 5.0, H))
    assert barrier_check(p, 0.002) / barrier_check(p, 0.004) == pytest.approx(0.5, rel=0.1)


def test_barrier_ratio_bounds():
    p = solve_profile(2, 0.0, Grid.uniform(-6.0, 20.0, H))
    delta = 0.5
    barrier = np.exp(-delta * p.phi)
    ratio = (4.0 * apply(_dirichlet(p), barrier) / barrier)[1:-1]
    outer = p.grid.nodes[1:-1] >= 0
    assert np.all(ratio[outer] > -4.0 * delta * p.n)
    assert np.all(ratio[outer] < -4.0 * delta * (1 - delta) * p.n)
    assert ratio[-1] == pytest.approx(-4.0 * delta * (1 - delta) * p.n, rel=0.05)


def test_solve_recovers_known_function(cao):
    L = assemble(cao.n, cao.phi, cao.phi_t, 1.0, cao.grid)
    psi = np.exp(-cao.grid.nodes ** 2)
    assert np.allclose(solve(L, apply(L, psi)), psi, atol=1e-8)


def test_discrete_maximum_principle(cao):
    L = _dirichlet(cao)
    rng = make_rng(11)
    for _ in range(5):
        g = rng.uniform(0.0, 1.0, size=cao.grid.size)
        g[0] = g[-1] = 0.0
        psi = solve(L, g)
        assert np.all(psi <= 1e-12 * np.max(np.abs(psi)))


def test_dirichlet_rows_pin_boundary_on_wide_grid():
    p = solve_profile(2, 0.0, Grid.uniform(-20.0, 40.0, 1.0 / 64))
    L = _dirichlet(p)
    rng = make_rng(17)
    for _ in range(3):
        g = rng.uniform(0.0, 1.0, size=p.grid.size)
        g[0] = g[-1] = 0.0
        psi = solve(L, g)
        assert abs(psi[0]) <= 1e-14 * np.max(np.abs(psi))
        assert abs(psi[-1]) <= 1e-14 * np.max(np.abs(psi))
        assert np.all(psi <= 1e-12 * np.max(np.abs(psi)))


def test_weighted_bound_holds(cao):
    rng = make_rng(5)
    for delta in (0.25, 0.5, 0.75):
        g = rng.standard_normal(cao.grid.size) * np.exp(-delta * cao.phi)
        lhs, bound, slack = maximum_principle_check(cao, delta, g)
        assert lhs > 0 and slack >= -1e-9 * bound
    with pytest.raises(DomainError):
        maximum_principle_check(cao, 1.0, g)


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("t_max", [8.0, 16.0])
def test_weighted_bound_on_truncated_annulus(n, t_max):
    # 1 <= r <= r0 with zero data at r0
    p = solve_profile(n, 0.0, Grid.uniform(0.0, t_max, H))
    rng = make_rng(23, n, int(t_max))
    for delta in (0.25, 0.5, 0.75):
        g = rng.standard_normal(p.grid.size) * np.exp(-delta * p.phi)
        left = rng.uniform(-1.0, 1.0) * np.exp(-delta * p.phi[0])
        lhs, bound, slack = maximum_principle_check(p, delta, g, left=left)
        assert lhs > 0 and slack >= -1e-9 * bound


def test_truncation_sensitivity(cao):
    gaps = truncation_sensitivity(cao, 0.5, lambda t: np.exp(-t * t), [4.0, 6.0, 10.0])
    assert [end for end, _ in gaps] == [4.0, 6.0, 10.0]
    assert gaps[-1][1] == 0.0
    assert gaps[0][1] > 0
    with pytest.raises(DomainError):
        truncation_sensitivity(cao, 0.5, lambda t: t, [12.0])


def test_weighted_norm_examples(cao):
    ones = np.ones(cao.grid.size)
    assert weighted_norm(ones, WeightedNorm(weight=ones, order=0, sigma=ones)) == 1.0
    delta = 0.5
    wn = WeightedNorm(weight=np.exp(delta * cao.phi), order=0, sigma=ones)
    assert weighted_norm(np.exp(-delta * cao.phi), wn) == pytest.approx(1.0, rel=1e-14)
    f = np.sin(cao.grid.nodes)
    single = WeightedNorm(weight=ones, order=2, sigma=ones, h=H)
    double = WeightedNorm(weight=2 * ones, order=2, sigma=ones, h=H)
    assert weighted_norm(f, double) == pytest.approx(2 * weighted_norm(f, single), rel=1e-14)
    with pytest.raises(DomainError):
        WeightedNorm(weight=ones, order=1, sigma=ones)
    with pytest.raises(DomainError):
        WeightedNorm(weight=ones, order=3, sigma=ones, h=H)


def test_solver_failures(cao):
    L = assemble(cao.n, cao.phi, cao.phi_t, 1.0, cao.grid)
    g = np.zeros(cao.grid.size)
    singular = dataclasses.replace(L, banded=np.zeros_like(L.banded))
    with pytest.raises(SolverError):
        solve(singular, g + 1.0)
    g[3] = np.nan
    with pytest.raises(DomainError):
        solve(L, g)


def test_assemble_rejects_degenerate_metric(cao):
    u = np.array(cao.phi)
    u[10] = 0.0
    with pytest.raises(DomainError):
        assemble(cao.n, u, cao.phi_t, 1.0, cao.grid)
    with pytest.raises(DomainError):
        from_coefficients(cao.grid, -np.ones(cao.grid.size), np.ones(cao.grid.size))
    with pytest.raises(DomainError):
        barrier_check(cao, 0.0)


def test_drift_operator_matches_linearization(glued):
    assembled = assemble(glued.n, glued.u_eps, glued.u_eps_t, np.exp(glued.f_eps), glued.grid)
    zeros = np.zeros(glued.grid.size)
    linear = linearize(glued, zeros, zeros)
    assert np.allclose(linear.coeff_a, assembled.coeff_a, rtol=1e-12, atol=0)
    assert np.allclose(linear.coeff_b, assembled.coeff_b, rtol=1e-12, atol=0)
    assert np.allclose(linear.banded, assembled.banded, rtol=1e-12, atol=0)


def test_inverse_norm_is_seeded(glued, spec):
    first = inverse_norm(glued, spec.gamma, probes=8, seed=3)
    assert first > 0
    assert inverse_norm(glued, spec.gamma, probes=8, seed=3) == first
    assert forward_norm(glued, spec.gamma, probes=8, seed=3) > 0


def test_drift_perturbation_vanishes(glued, spec):
    fine = build_glued(2, 1e-3, glued_grid(1e-3, H), spec)
    assert 0 < drift_perturbation_norm(fine, spec) < drift_perturbation_norm(glued, spec)


def test_forward_norm_is_uniform_in_eps(spec):
    forward = [value for _, value in forward_norm_sweep(2, spec, [1e-2, 1e-3], probes=8)]
    assert all(np.isfinite(value) and value > 0 for value in forward)
    assert max(forward) / min(forward) < 2.0


@pytest.mark.slow
def test_critical_weight_estimate_degrades(spec):
    rows = inverse_norm_sweep(2, spec, [1e-2, 1e-3, 1e-4], probes=8, gamma=0.0)
    critical = [row["drift"] for row in rows]
    assert not any(row["failed"] for row in rows)
    assert critical[0] < critical[1] < critical[2]


@pytest.mark.slow
def test_inverse_norm_is_uniform_in_eps(spec):
    rows = inverse_norm_sweep(2, spec, [1e-2, 1e-3, 1e-4], probes=16)
    drift = [row["drift"] for row in rows]
    assert not any(row["failed"] for row in rows)
    assert max(drift) / min(drift) < 2.0
    gaps = [abs(row["drift"] / row["plain"] - 1.0) for row in rows]
    assert gaps[-1] <= gaps[0]
    forward = [value for _, value in forward_norm_sweep(2, spec, [1e-2, 1e-3, 1e-4], probes=16)]
    assert max(forward) / min(forward) < 2.0
