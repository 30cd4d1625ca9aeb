"""Newton solve of the radial soliton Monge-Ampere equation T_eps(Psi) = 0 around the glued metric.

T_eps(Psi) = (u + Psi_t)^(n-1) (u_t + Psi_tt) / (u^(n-1) u_t) - e^(-Psi_t + f_eps),
evaluated as e^(-Psi_t + f) expm1((n-1) log1p(Psi_t/u) + log1p(Psi_tt/u_t) + Psi_t - f)
so that small residuals keep their relative accuracy.

The iterate is carried as the slopes of Psi on grid intervals: node derivatives
come from slope averages and slope differences, and Psi itself is recovered
from the Dirichlet value Psi(t_max) = 0.
"""
import logging
import time
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from numpy.random import Generator

from solitonforge.config import Tolerances, WeightSpec
from solitonforge.decorators import resample
from solitonforge.drift_operator import from_coefficients, inverse_norm, probe_windows, solve, weighted_norm
from solitonforge.exceptions import ConvergenceError, DomainError, KahlerConeError, SolverError
from solitonforge.glue import T_FAR, build_glued, error_norm, glued_grid, glued_norm
from solitonforge.models import BoundaryCondition, DriftOperator, GluedData, IFTCertificate, NewtonReport, RadialMetric
from solitonforge.parallel import sweep_map
from solitonforge.radial_soliton import solve_profile
from solitonforge.sampling import gaussian_bumps, make_rng

logger = logging.getLogger(__name__)

# the smallest quadratic-bound ball, and the multi-start ball, have radius RADIUS_SCALE * eps^(2+gamma)
RADIUS_SCALE = 0.05
RADIUS_GROWTH = 4.0
MAX_RADIUS_STEPS = 12
ROUNDOFF_FACTOR = 16.0


def _ratios(gd: GluedData, psi_t: np.ndarray, psi_tt: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    x = psi_t / gd.u_eps
    y = psi_tt / gd.u_eps_t
    bad = ~(x > -1.0) | ~(y > -1.0)
    if np.any(bad):
        worst = int(np.argmin(np.where(bad, np.minimum(x, y), np.inf)))
        t = float(gd.grid.nodes[worst])
        raise KahlerConeError(f"perturbed form left the Kahler cone at node {worst} (t={t:.6f})", node=worst, t=t)
    return x, y


def monge_ampere(gd: GluedData, psi_t: np.ndarray, psi_tt: np.ndarray) -> np.ndarray:
    x, y = _ratios(gd, psi_t, psi_tt)
    drift = np.exp(-psi_t + gd.f_eps)
    return drift * np.expm1((gd.n - 1) * np.log1p(x) + np.log1p(y) + psi_t - gd.f_eps)


def linearize(gd: GluedData, psi_t: np.ndarray, psi_tt: np.ndarray) -> DriftOperator:
    x, y = _ratios(gd, psi_t, psi_tt)
    p, q = 1.0 + x, 1.0 + y
    kappa = np.exp(-psi_t + gd.f_eps)
    coeff_a = p ** (gd.n - 1) / gd.u_eps_t
    coeff_b = (gd.n - 1) * q * p ** (gd.n - 2) / gd.u_eps + kappa
    return from_coefficients(gd.grid, coeff_a, coeff_b, kappa, BoundaryCondition.REGULARITY)


def linear_action(L: DriftOperator, psi_t: np.ndarray, psi_tt: np.ndarray) -> np.ndarray:
    """L applied to a function given by its exact derivatives."""
    return L.coeff_a * psi_tt + L.coeff_b * psi_t


def node_derivatives(slopes: np.ndarray, h: float) -> Tuple[np.ndarray, np.ndarray]:
    psi_t = np.empty(slopes.size + 1)
    psi_tt = np.empty(slopes.size + 1)
    psi_t[1:-1] = 0.5 * (slopes[:-1] + slopes[1:])
    psi_tt[1:-1] = np.diff(slopes) / h
    psi_t[0] = 0.5 * (3.0 * slopes[0] - slopes[1])
    psi_t[-1] = 0.5 * (3.0 * slopes[-1] - slopes[-2])
    psi_tt[0] = psi_tt[1]
    psi_tt[-1] = psi_tt[-2]
    return psi_t, psi_tt


def node_values(slopes: np.ndarray, h: float) -> np.ndarray:
    psi = np.zeros(slopes.size + 1)
    psi[:-1] = -h * np.cumsum(slopes[::-1])[::-1]
    return psi


def _residual(gd: GluedData, slopes: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    psi_t, psi_tt = node_derivatives(slopes, gd.grid.h)
    T = monge_ampere(gd, psi_t, psi_tt)
    residual = T.copy()
    residual[0] = psi_t[0]
    residual[-1] = 0.0
    return residual, psi_t, psi_tt


def _residual_norms(gd: GluedData, residual: np.ndarray, norm) -> Tuple[float, float]:
    interior = residual.copy()
    interior[0] = interior[-1] = 0.0
    weighted = max(weighted_norm(interior, norm), abs(residual[0]))
    return weighted, max(float(np.max(np.abs(interior))), abs(residual[0]))


def _roundoff_floor(gd: GluedData, psi_t: np.ndarray, psi_tt: np.ndarray, norm) -> float:
    """Weighted size of the rounding error in T: eps times the magnitudes summed inside expm1."""
    x, y = _ratios(gd, psi_t, psi_tt)
    terms = (gd.n - 1) * np.abs(np.log1p(x)) + np.abs(np.log1p(y)) + np.abs(psi_t) + np.abs(gd.f_eps)
    return ROUNDOFF_FACTOR * np.finfo(float).eps * weighted_norm(np.exp(-psi_t + gd.f_eps) * terms, norm)


def _quadratic_constant(residuals: Sequence[float], floor: float) -> Optional[float]:
    """max of r_(k+1) / r_k^2 over contracting steps whose new residual is above the roundoff floor."""
    ratios = [
        later / earlier ** 2
        for earlier, later in zip(residuals[:-1], residuals[1:])
        if 0 < later < earlier and later > floor
    ]
    return max(ratios) if ratios else None


def newton_solve(
    gd: GluedData,
    spec: WeightSpec,
    tol: float = Tolerances().newton_tol,
    tolerances: Tolerances = Tolerances(),
    initial_slopes: Optional[np.ndarray] = None,
) -> NewtonReport:
    """Damped Newton from Psi = 0 (or from initial_slopes); non-convergence is reported, not raised."""
    start = time.perf_counter()
    h = gd.grid.h
    residual_norm = glued_norm(gd, spec.gamma + 2.0, 0)
    step_norm = glued_norm(gd, spec.gamma, 2)
    slopes = np.zeros(gd.grid.size - 1) if initial_slopes is None else np.array(initial_slopes, dtype=float)

    residual, psi_t, psi_tt = _residual(gd, slopes)
    current, sup = _residual_norms(gd, residual, residual_norm)
    history: List[Tuple[float, float]] = [(current, 0.0)]
    converged = current < tol and sup < tol

    for iteration in range(tolerances.newton_max_iter):
        if converged:
            break
        L = linearize(gd, psi_t, psi_tt)
        rhs = -residual
        rhs[-1] = 0.0
        try:
            step = solve(L, rhs, tolerances.solve_rtol)
        except SolverError as e:
            logger.warning(f"Newton step {iteration + 1} failed: {str(e)}")
            break
        delta_slopes = np.diff(step) / h

        damping = 1.0
        accepted = False
        while damping >= tolerances.min_damping:
            trial = slopes + damping * delta_slopes
            try:
                trial_residual, trial_t, trial_tt = _residual(gd, trial)
            except KahlerConeError:
                damping /= 2
                continue
            trial_norm, trial_sup = _residual_norms(gd, trial_residual, residual_norm)
            if trial_norm < current:
                accepted = True
                break
            damping /= 2
        if not accepted:
            logger.warning(f"Line search failed at Newton step {iteration + 1} (residual {current:.3e})")
            break

        slopes, residual, psi_t, psi_tt = trial, trial_residual, trial_t, trial_tt
        current, sup = trial_norm, trial_sup
        history.append((current, weighted_norm(damping * step, step_norm)))
        logger.debug(f"Newton step {iteration + 1}: residual {current:.3e}, damping {damping}")
        converged = current < tol and sup < tol

    if not converged:
        logger.warning(f"Newton did not converge for eps={gd.eps}: residual {current:.3e} after {len(history) - 1} steps")
    residuals = [res for res, _ in history]
    return NewtonReport(
        iterations=history,
        converged=converged,
        final_psi=node_values(slopes, h),
        final_psi_t=psi_t,
        final_psi_tt=psi_tt,
        wall_time=time.perf_counter() - start,
        quadratic_constant=_quadratic_constant(residuals, _roundoff_floor(gd, psi_t, psi_tt, residual_norm)),
    )


def family_compare(gd: GluedData, report: NewtonReport, tolerances: Tolerances = Tolerances()) -> float:
    """sup |u_eps + Psi_t - phi_(eps^2)|: the converged metric against the exact family member."""
    if not report.converged:
        raise ConvergenceError("family comparison needs a converged Newton report")
    v = gd.u_eps + report.final_psi_t
    exact = solve_profile(gd.n, gd.eps ** 2, gd.grid, tolerances)
    return float(np.max(np.abs(v - exact.phi)))


def converged_metric(gd: GluedData, report: NewtonReport) -> RadialMetric:
    return RadialMetric(grid=gd.grid, u=gd.u_eps + report.final_psi_t, u_t=gd.u_eps_t + report.final_psi_tt)


def ift_certificate(c: float, q: float, t0_norm: float, r0: float) -> IFTCertificate:
    if not (c > 0 and q > 0 and t0_norm > 0 and r0 > 0):
        raise DomainError(f"certificate constants must be positive: c={c}, q={q}, |T(0)|={t0_norm}, r0={r0}")
    radius = min(r0, 1.0 / (2.0 * q * c))
    return IFTCertificate(
        c=c,
        q=q,
        t0_norm=t0_norm,
        r0=r0,
        certified_radius=radius,
        condition_met=t0_norm < radius / (2.0 * c),
    )


@resample(max_attempts=5)
def _draw_in_ball(
    gd: GluedData, norm, radius: float, rng: Generator, window: Optional[Tuple[float, float]] = None
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    bumps = gaussian_bumps(rng, window or probe_windows(gd)[int(rng.integers(3))], gd.grid.h)
    psi, _, _ = bumps.evaluate(gd.grid.nodes)
    size = weighted_norm(psi, norm)
    target = radius * rng.uniform(0.1, 1.0)
    psi, psi_t, psi_tt = bumps.scaled(target / size).evaluate(gd.grid.nodes)
    _ratios(gd, psi_t, psi_tt)
    return psi, psi_t, psi_tt


def quadratic_bound(
    gd: GluedData,
    spec: WeightSpec,
    samples: int,
    radius: float,
    rng: Generator,
    window: Optional[Tuple[float, float]] = None,
) -> float:
    """Largest observed |Q(Psi) - Q(Psi')| / (|Psi - Psi'| (|Psi| + |Psi'|)), Q(Psi) = T(Psi) - T(0) - L_0 Psi."""
    source = glued_norm(gd, spec.gamma, 2)
    target = glued_norm(gd, spec.gamma + 2.0, 0)
    zeros = np.zeros(gd.grid.size)
    base = monge_ampere(gd, zeros, zeros)
    L0 = linearize(gd, zeros, zeros)

    def remainder(psi_t: np.ndarray, psi_tt: np.ndarray) -> np.ndarray:
        return monge_ampere(gd, psi_t, psi_tt) - base - linear_action(L0, psi_t, psi_tt)

    worst = 0.0
    for _ in range(samples):
        psi, psi_t, psi_tt = _draw_in_ball(gd, source, radius, rng, window)
        other, other_t, other_tt = _draw_in_ball(gd, source, radius, rng, window)
        spread = weighted_norm(psi - other, source)
        scale = spread * (weighted_norm(psi, source) + weighted_norm(other, source))
        if not scale > 0:
            continue
        gap = remainder(psi_t, psi_tt) - remainder(other_t, other_tt)
        worst = max(worst, weighted_norm(gap, target) / scale)
    return worst


def validity_radius(
    gd: GluedData, spec: WeightSpec, c: float, samples: int, rng: Generator
) -> Tuple[float, float]:
    """(r0, q) maximizing the certified radius min(r0, 1/(2qc)).

    Balls grow by RADIUS_GROWTH from RADIUS_SCALE * eps^(2+gamma). q is the running
    maximum over every draw so far, so it bounds Q on the whole ball of radius r0.
    Draws leaving the Kahler cone are redrawn; growth stops once 1/(2qc) is below
    the radius or no admissible draw is found.
    """
    radius = RADIUS_SCALE * gd.eps ** (2.0 + spec.gamma)
    q = 0.0
    best: Optional[Tuple[float, float]] = None
    for step in range(MAX_RADIUS_STEPS):
        try:
            q = max(q, quadratic_bound(gd, spec, samples, radius, rng))
        except KahlerConeError:
            if best is None:
                raise
            logger.info(f"quadratic-bound ball stops at radius {radius:.3e}: draws leave the Kahler cone")
            break
        if q > 0 and (best is None or min(radius, 1.0 / (2.0 * q * c)) > min(best[0], 1.0 / (2.0 * best[1] * c))):
            best = (radius, q)
        if q > 0 and 1.0 / (2.0 * q * c) <= radius:
            break
        radius *= RADIUS_GROWTH
    if best is None:
        raise ConvergenceError(f"no quadratic constant measured for eps={gd.eps}")
    logger.debug(f"validity radius {best[0]:.3e} with q={best[1]:.3e} for eps={gd.eps}")
    return best


def certify(
    gd: GluedData,
    spec: WeightSpec,
    samples: int = 16,
    probes: int = 32,
    seed: int = 0,
    index: int = 0,
    tolerances: Tolerances = Tolerances(),
) -> IFTCertificate:
    """Certificate from measured c, the quadratic-bound ball (r0, q) and |T(0)|."""
    c = inverse_norm(gd, spec.gamma, "drift", probes, seed, index, tolerances.solve_rtol)
    r0, q = validity_radius(gd, spec, c, samples, make_rng(seed, index, 1))
    return ift_certificate(c, q, error_norm(gd, spec), r0)


def certify_sweep(
    n: int,
    spec: WeightSpec,
    eps_list: Sequence[float],
    samples: int = 16,
    probes: int = 32,
    seed: int = 0,
    h: float = 1.0 / 128,
    t_far: float = T_FAR,
    jobs: int = 1,
    tolerances: Tolerances = Tolerances(),
) -> Tuple[List[Tuple[float, Optional[IFTCertificate]]], Optional[float]]:
    """Certificates from measured (c, q, |T(0)|) per eps, and the largest eps below which all hold."""

    def point(item: Tuple[int, float]) -> IFTCertificate:
        index, eps = item
        gd = build_glued(n, eps, glued_grid(eps, h, t_far), spec, tolerances=tolerances)
        return certify(gd, spec, samples, probes, seed, index, tolerances)

    results = sweep_map(point, list(enumerate(eps_list)), jobs=jobs, desc="certify")
    certificates = [(float(eps), cert) for eps, (cert, _) in zip(eps_list, results)]
    eps_star = None
    for eps, cert in sorted(certificates):
        if cert is None or not cert.condition_met:
            break
        eps_star = eps
    return certificates, eps_star


def multistart(
    gd: GluedData,
    spec: WeightSpec,
    seeds: Sequence[int],
    tol: float = Tolerances().newton_tol,
    tolerances: Tolerances = Tolerances(),
) -> Tuple[float, List[NewtonReport]]:
    """Newton from Psi = 0 and from seeded starts in the small ball; max sup gap of the final Psi_t."""
    source = glued_norm(gd, spec.gamma, 2)
    radius = RADIUS_SCALE * gd.eps ** (2.0 + spec.gamma)
    reports = [newton_solve(gd, spec, tol, tolerances)]
    for seed in seeds:
        psi, _, _ = _draw_in_ball(gd, source, radius, make_rng(seed))
        reports.append(newton_solve(gd, spec, tol, tolerances, initial_slopes=np.diff(psi) / gd.grid.h))
    if not all(report.converged for report in reports):
        raise ConvergenceError("a multi-start Newton run did not converge")
    reference = reports[0].final_psi_t
    gap = max(float(np.max(np.abs(report.final_psi_t - reference))) for report in reports[1:]) if seeds else 0.0
    return gap, reports


def decay_rate(gd: GluedData, report: NewtonReport, deltas: Sequence[float]) -> Tuple[Optional[float], Dict[float, float]]:
    """Largest delta for which e^(delta phi_0) |Psi_t| keeps decreasing across the far field.

    Returns that delta (None if no tested delta qualifies) and the weighted sup per delta.
    """
    t = gd.grid.nodes
    far = t >= 0
    thirds = np.array_split(np.flatnonzero(far), 3)
    best = None
    sups = {}
    for delta in sorted(deltas):
        weighted = np.exp(delta * gd.phi0) * np.abs(report.final_psi_t)
        sups[float(delta)] = float(np.max(weighted[far]))
        if np.max(weighted[thirds[-1]]) <= np.max(weighted[thirds[0]]):
            best = float(delta)
    return best, sups


@resample(max_attempts=5)
def _draw_convex_sample(m: RadialMetric, rng: Generator, amplitude: Optional[float]) -> Tuple[np.ndarray, np.ndarray]:
    bumps = gaussian_bumps(rng, (m.grid.t_min, m.grid.t_max), m.grid.h)
    _, psi_t, psi_tt = bumps.evaluate(m.grid.nodes)
    size = max(float(np.max(np.abs(psi_t / m.u))), float(np.max(np.abs(psi_tt / m.u_t))))
    level = rng.uniform(0.05, 0.9) if amplitude is None else amplitude
    x, y = level * psi_t / (size * m.u), level * psi_tt / (size * m.u_t)
    if np.any(x <= -1.0) or np.any(y <= -1.0):
        worst = int(np.argmin(np.minimum(x, y)))
        raise KahlerConeError(f"sample left the Kahler cone at node {worst}", node=worst, t=float(m.grid.nodes[worst]))
    return x, y


def _convexity_gaps(m: RadialMetric, n: int, samples: int, rng: Generator, amplitude: Optional[float]) -> List[np.ndarray]:
    if samples < 1:
        raise DomainError(f"need at least one sample, got {samples}")
    gaps = []
    for _ in range(samples):
        x, y = _draw_convex_sample(m, rng, amplitude)
        gaps.append((n - 1) * (np.log1p(x) - x) + (np.log1p(y) - y))
    return gaps


def convexity_check(m: RadialMetric, n: int, samples: int, rng: Generator, amplitude: Optional[float] = None) -> float:
    """max of log((u + psi_t)^(n-1) (u_t + psi_tt) / (u^(n-1) u_t)) - ((n-1) psi_t/u + psi_tt/u_t).

    Concavity of log keeps this <= 0. `amplitude` fixes max(|psi_t/u|, |psi_tt/u_t|)
    instead of drawing it, so the gap can be followed as psi shrinks.
    """
    return max(float(np.max(gap)) for gap in _convexity_gaps(m, n, samples, rng, amplitude))


def convexity_depth(m: RadialMetric, n: int, samples: int, rng: Generator, amplitude: float) -> float:
    """Deepest gap below equality over the drawn samples; scales like amplitude^2."""
    return -min(float(np.min(gap)) for gap in _convexity_gaps(m, n, samples, rng, amplitude))
