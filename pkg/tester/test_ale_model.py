import numpy as np
import pytest

from solitonforge.ale_model import (
    ale_coefficient,
    ale_potential,
    asymptotic_profile,
    calabi_derivatives,
    calabi_potential_series,
    calabi_profile,
    decay_exponent,
    moment_map,
)
from solitonforge.exceptions import DomainError
from solitonforge.models import Grid
from solitonforge.radial_soliton import bubble_rescale

H = 1.0 / 128


@pytest.fixture(scope="module")
def grid():
    return Grid.uniform(-20.0, 20.0, H)


def test_calabi_values(grid):
    p = calabi_profile(2, grid)
    zero = grid.index_of(0.0)
    assert p.u[zero] == pytest.approx(np.sqrt(2.0), rel=1e-15)
    assert moment_map(p)[zero] == pytest.approx(np.sqrt(2.0), rel=1e-15)
    assert abs(p.u[0] - 1.0) < 1e-12
    assert p.ricci_flat


@pytest.mark.parametrize("n", [2, 3, 4])
def test_ricci_flat_identity(grid, n):
    u, u_t = calabi_derivatives(n, grid.nodes)
    lhs = (n - 1) * np.log(u) + np.log(u_t)
    assert np.max(np.abs(np.expm1(lhs - n * grid.nodes))) < 1e-12


@pytest.mark.parametrize("n, expected", [(2, -0.5), (3, -1.0 / 6)])
def test_ale_coefficient(n, expected):
    assert ale_coefficient(n) == pytest.approx(expected)


@pytest.mark.parametrize("n", [2, 3])
def test_ale_coefficient_from_potential(grid, n):
    p = calabi_profile(n, grid)
    t = grid.nodes
    far = (t >= 4.0) & (t <= 7.0)
    scaled = (p.potential[far] - np.exp(t[far])) * np.exp((n - 1) * t[far])
    assert np.allclose(scaled, ale_coefficient(n), rtol=1e-3)


def test_ale_coefficient_rejects_n_one():
    with pytest.raises(DomainError):
        ale_coefficient(1)


@pytest.mark.parametrize("n", [2, 3])
def test_decay_exponent(grid, n):
    assert decay_exponent(calabi_profile(n, grid)) == pytest.approx(2.0 - 2.0 * n, rel=0.05)


@pytest.mark.parametrize("n", [2, 3])
def test_potential_tail_rate(grid, n):
    p = calabi_profile(n, grid)
    t = grid.nodes
    window = (t >= 3.0) & (t <= 7.0)
    gap = np.abs(p.potential[window] - np.exp(t[window]))
    slope, _ = np.polyfit(t[window], np.log(gap), 1)
    assert slope == pytest.approx(1.0 - n, rel=0.05)


def test_potential_is_an_antiderivative(grid):
    p = calabi_profile(2, grid)
    gradient = np.gradient(p.potential, grid.h)
    assert np.max(np.abs(gradient[1:-1] - p.u[1:-1]) / p.u[1:-1]) < 1e-4


def test_quadrature_below_anchor_matches_series():
    p = calabi_profile(3, Grid.uniform(-4.0, 6.0, H))
    t = p.grid.nodes
    below = (t >= 0.25) & (t < 1.0)
    assert np.allclose(p.potential[below], calabi_potential_series(3, t[below]), rtol=1e-6)
    with pytest.raises(DomainError):
        calabi_potential_series(3, 0.0)


def test_ale_potential_domain(grid):
    p = calabi_profile(2, grid)
    assert ale_potential(p, 0.0) == pytest.approx(p.potential[grid.index_of(0.0)], rel=1e-14)
    with pytest.raises(DomainError):
        ale_potential(p, 25.0)


def test_grid_must_reach_anchor():
    with pytest.raises(DomainError):
        calabi_profile(2, Grid.uniform(-10.0, 0.5, H))


def test_bubble_limit_is_monotone():
    t = np.linspace(-3.0, 3.0, 61)
    calabi = (1.0 + np.exp(2.0 * t)) ** 0.5
    sups = [np.max(np.abs(bubble_rescale(2, a, t) - calabi)) for a in (0.1, 0.01, 0.001)]
    assert sups[0] > sups[1] > sups[2]


def test_asymptotic_profile():
    grid = Grid.uniform(1.0, 10.0, H)
    p = asymptotic_profile(2, grid)
    assert not p.ricci_flat
    assert p.A == pytest.approx(-0.5)
    flat = asymptotic_profile(2, grid, A=0.0)
    assert np.allclose(flat.u, np.exp(grid.nodes)) and np.allclose(flat.u_t, flat.u)
    with pytest.raises(DomainError):
        asymptotic_profile(2, Grid.uniform(-5.0, 5.0, H))


def test_potential_quadrature_is_fourth_order():
    # nodes an even number of steps below the anchor on every grid
    t = np.arange(-3.0, 0.5, 0.5)
    values = []
    for h in (1.0 / 16, 1.0 / 32, 1.0 / 64):
        grid = Grid.uniform(-4.0, 6.0, h)
        p = calabi_profile(2, grid)
        values.append(p.potential[[grid.index_of(s) for s in t]])
    coarse = np.max(np.abs(values[0] - values[1]))
    fine = np.max(np.abs(values[1] - values[2]))
    assert coarse / fine == pytest.approx(16.0, rel=0.15)


@pytest.mark.parametrize("n", [2, 3])
def test_moment_map_derivative_is_second_order(n):
    errors = []
    for h in (1.0 / 32, 1.0 / 64):
        p = calabi_profile(n, Grid.uniform(-4.0, 6.0, h))
        gradient = np.gradient(moment_map(p), h)
        errors.append(np.max(np.abs(gradient[1:-1] - p.u_t[1:-1])))
    assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.2)


@pytest.mark.parametrize("n", [2, 3])
def test_potential_is_increasing_and_convex(n):
    p = calabi_profile(n, Grid.uniform(-4.0, 6.0, 1.0 / 32))
    assert np.all(np.diff(p.potential) > 0)
    assert np.all(np.diff(p.potential, 2) > 0)
    assert np.all(p.u > 0) and np.all(p.u_t > 0)
