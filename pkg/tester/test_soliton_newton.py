import dataclasses

import numpy as np
import pytest

from solitonforge.config import Tolerances, WeightSpec
from solitonforge.exceptions import ConvergenceError, DomainError, KahlerConeError
from solitonforge.glue import build_glued, glued_grid
from solitonforge.models import Grid
from solitonforge.radial_soliton import soliton_residual, solve_profile
from solitonforge.sampling import gaussian_bumps, make_rng
from solitonforge.soliton_newton import (
    RADIUS_SCALE,
    _quadratic_constant,
    certify,
    certify_sweep,
    converged_metric,
    convexity_check,
    convexity_depth,
    decay_rate,
    family_compare,
    ift_certificate,
    linear_action,
    linearize,
    monge_ampere,
    multistart,
    newton_solve,
    node_derivatives,
    node_values,
    quadratic_bound,
    validity_radius,
)

H = 1.0 / 128


@pytest.fixture(scope="module")
def report(glued, spec):
    return newton_solve(glued, spec, tol=1e-10)


@pytest.fixture(scope="module")
def cao_metric():
    return solve_profile(2, 0.0, Grid.uniform(-20.0, 40.0, H)).metric()


def test_residual_at_zero(glued):
    zeros = np.zeros(glued.grid.size)
    T = monge_ampere(glued, zeros, zeros)
    assert np.allclose(T, -np.expm1(glued.f_eps), rtol=1e-12, atol=0)
    assert np.all(T[glued.f_eps == 0] == 0)


@pytest.mark.parametrize("n", [2, 3])
@pytest.mark.parametrize("eps", [1e-2, 1e-3])
def test_family_member_is_annihilated(n, eps):
    gd = build_glued(n, eps, glued_grid(eps, H), WeightSpec(gamma=1.0, delta=0.5))
    exact = solve_profile(n, eps ** 2, gd.grid)
    T = monge_ampere(gd, exact.phi - gd.u_eps, exact.phi_t - gd.u_eps_t)
    assert np.max(np.abs(T)) < 1e-10


def test_linearization_at_zero_on_cao_region(glued):
    zeros = np.zeros(glued.grid.size)
    L = linearize(glued, zeros, zeros)
    cao = glued.f_eps == 0
    assert np.allclose(L.coeff_a[cao], 1.0 / glued.u_eps_t[cao], rtol=1e-15)
    assert np.allclose(L.coeff_b[cao], (glued.n - 1) / glued.u_eps[cao] + 1.0, rtol=1e-15)
    assert np.all(L.kappa[cao] == 1.0)


def test_directional_derivative(glued):
    rng = make_rng(17)
    zeros = np.zeros(glued.grid.size)
    base = monge_ampere(glued, zeros, zeros)
    L = linearize(glued, zeros, zeros)
    for _ in range(5):
        _, psi_t, psi_tt = gaussian_bumps(rng, (glued.grid.t_min, glued.grid.t_max), H).evaluate(glued.grid.nodes)
        size = max(np.max(np.abs(psi_t / glued.u_eps)), np.max(np.abs(psi_tt / glued.u_eps_t)))
        psi_t, psi_tt = 0.1 * psi_t / size, 0.1 * psi_tt / size
        exact = linear_action(L, psi_t, psi_tt)
        errors = [
            np.max(np.abs((monge_ampere(glued, s * psi_t, s * psi_tt) - base) / s - exact))
            for s in (1e-2, 1e-3, 1e-4)
        ]
        assert errors[0] / errors[1] == pytest.approx(10.0, rel=0.2)
        assert errors[1] / errors[2] == pytest.approx(10.0, rel=0.2)


def test_leaving_the_kahler_cone(glued):
    psi_t = np.zeros(glued.grid.size)
    psi_t[5] = -2.0 * glued.u_eps[5]
    with pytest.raises(KahlerConeError) as info:
        monge_ampere(glued, psi_t, np.zeros(glued.grid.size))
    assert info.value.node == 5


def test_slope_state():
    slopes = np.array([1.0, 2.0, 3.0, 4.0])
    psi_t, psi_tt = node_derivatives(slopes, 0.5)
    assert np.allclose(psi_t, [0.5, 1.5, 2.5, 3.5, 4.5])
    assert np.allclose(psi_tt, 2.0)
    psi = node_values(slopes, 0.5)
    assert psi[-1] == 0.0
    assert np.allclose(np.diff(psi) / 0.5, slopes)


def test_newton_converges(glued, report):
    assert report.converged
    assert report.residuals[-1] < 1e-10
    assert report.residuals[-1] < report.residuals[0]
    # every accepted step lowers the weighted residual
    assert all(later < earlier for earlier, later in zip(report.residuals, report.residuals[1:]))
    assert report.final_psi[-1] == 0.0
    assert report.wall_time >= 0
    assert report.quadratic_constant is not None
    assert np.isfinite(report.quadratic_constant) and report.quadratic_constant > 0


def test_class_is_preserved(report):
    assert abs(report.final_psi_t[0]) <= 1e-10


def test_converged_metric_is_a_soliton(glued, report):
    residual = soliton_residual(converged_metric(glued, report), glued.n)[1:-1]
    assert np.max(residual) - np.min(residual) <= 1e-8


def test_gauge_invariance(glued, report):
    shifted = dataclasses.replace(report, final_psi=report.final_psi + 3.0)
    original = converged_metric(glued, report)
    moved = converged_metric(glued, shifted)
    assert np.array_equal(original.u, moved.u) and np.array_equal(original.u_t, moved.u_t)
    slopes = np.diff(report.final_psi) / H
    assert np.allclose(node_derivatives(slopes, H)[0][1:-1], node_derivatives(np.diff(shifted.final_psi) / H, H)[0][1:-1])


def test_family_compare(glued, report):
    assert family_compare(glued, report) <= 5 * H ** 2


def test_family_compare_needs_convergence(glued, spec):
    stalled = newton_solve(glued, spec, tol=1e-14, tolerances=Tolerances(newton_max_iter=1))
    assert not stalled.converged
    with pytest.raises(ConvergenceError):
        family_compare(glued, stalled)


def test_decay_rate(glued, report):
    best, sups = decay_rate(glued, report, (0.25, 0.5, 0.9))
    assert best is not None
    assert sorted(sups) == [0.25, 0.5, 0.9]
    assert all(np.isfinite(value) for value in sups.values())


def test_multistart_agrees(glued, spec):
    gap, reports = multistart(glued, spec, seeds=[1, 2])
    assert len(reports) == 3
    assert gap <= 1e-8


@pytest.mark.parametrize(
    "args, radius, met",
    [((1.0, 1.0, 0.1, 1.0), 0.5, True), ((1.0, 1.0, 0.3, 1.0), 0.5, False), ((2.0, 1.0, 0.01, 0.1), 0.1, True)],
)
def test_ift_certificate(args, radius, met):
    certificate = ift_certificate(*args)
    assert certificate.certified_radius == pytest.approx(radius)
    assert certificate.condition_met is met


def test_ift_certificate_rejects_nonpositive():
    with pytest.raises(DomainError):
        ift_certificate(1.0, 0.0, 0.1, 1.0)


def test_quadratic_bound(glued, spec):
    radius = RADIUS_SCALE * glued.eps ** (2.0 + spec.gamma)
    q = quadratic_bound(glued, spec, 4, radius, make_rng(9))
    assert 0 < q < np.inf
    assert quadratic_bound(glued, spec, 4, radius, make_rng(9)) == q


def test_quadratic_bound_scales_with_eps(spec):
    # the bubble grids coincide in R = r / eps, where Q is quadratic in psi_t / u and u ~ eps^2
    scaled = []
    for eps in (1e-2, 1e-3):
        gd = build_glued(2, eps, glued_grid(eps, H), spec)
        radius = RADIUS_SCALE * eps ** (2.0 + spec.gamma)
        bubble = (gd.grid.t_min, 2.0 * np.log(eps) + 2.0)
        q = quadratic_bound(gd, spec, 4, radius, make_rng(9), window=bubble)
        scaled.append(q * eps ** (2.0 + spec.gamma))
    assert all(0 < value < np.inf for value in scaled)
    assert max(scaled) / min(scaled) < 1.5


def test_quadratic_bound_is_order_one_on_cao_region(spec):
    values = []
    for eps in (1e-2, 1e-3):
        gd = build_glued(2, eps, glued_grid(eps, H), spec)
        values.append(quadratic_bound(gd, spec, 4, 1e-2, make_rng(9), window=(2.0, 8.0)))
    assert all(0 < value < 1e3 for value in values)
    assert max(values) / min(values) < 2.0


def test_validity_radius(glued, spec):
    c = 5.0
    r0, q = validity_radius(glued, spec, c, 4, make_rng(2))
    assert r0 >= RADIUS_SCALE * glued.eps ** (2.0 + spec.gamma)
    assert 0 < q < np.inf
    assert validity_radius(glued, spec, c, 4, make_rng(2)) == (r0, q)


def test_certify_at_moderate_eps(glued, spec):
    certificate = certify(glued, spec, samples=4, probes=8)
    assert certificate.condition_met
    assert certificate.t0_norm < certificate.certified_radius / (2.0 * certificate.c)
    assert certify(glued, spec, samples=4, probes=8) == certificate


def test_quadratic_constant_of_newton_sequence():
    residuals = [3.3e-6, 2.0e-9, 6e-16]
    expected = max(2.0e-9 / 3.3e-6 ** 2, 6e-16 / 2.0e-9 ** 2)
    assert _quadratic_constant(residuals, 1e-20) == pytest.approx(expected)
    # steps landing at the rounding floor carry no rate information
    assert _quadratic_constant(residuals, 1e-12) == pytest.approx(2.0e-9 / 3.3e-6 ** 2)
    assert _quadratic_constant([1e-3, 2e-3], 0.0) is None


def test_convexity_holds_on_cao_profile(cao_metric):
    assert convexity_check(cao_metric, 2, 500, make_rng(1)) <= 1e-12
    assert convexity_check(cao_metric, 2, 3, make_rng(1), amplitude=0.0) == 0.0
    with pytest.raises(DomainError):
        convexity_check(cao_metric, 2, 0, make_rng(1))


def test_convexity_gap_is_quadratic(cao_metric):
    depths = [convexity_depth(cao_metric, 2, 20, make_rng(4), level) for level in (0.02, 0.01)]
    assert depths[0] / depths[1] == pytest.approx(4.0, rel=0.05)


@pytest.mark.slow
def test_certify_sweep(spec):
    certificates, eps_star = certify_sweep(2, spec, [1e-2, 3e-3, 1e-3], samples=4, probes=8)
    assert [eps for eps, _ in certificates] == [1e-2, 3e-3, 1e-3]
    assert all(cert is not None for _, cert in certificates)
    assert eps_star is not None and eps_star > 1e-3
    assert all(cert.condition_met for eps, cert in certificates if eps <= eps_star)


@pytest.mark.slow
def test_family_compare_is_second_order(spec):
    errors = []
    for h in (1.0 / 64, 1.0 / 128):
        gd = build_glued(2, 1e-2, glued_grid(1e-2, h), spec)
        errors.append(family_compare(gd, newton_solve(gd, spec)))
    assert errors[0] / errors[1] == pytest.approx(4.0, rel=0.25)
