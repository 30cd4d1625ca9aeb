"""Approximate solution: the scaled Calabi bubble glued into Cao's soliton at r = r_eps.

Potentials are glued as chi * Phi_0 + (1 - chi) * eps^2 Phi^-(t - 2 log eps),
chi = cutoff(r, r_eps), and everything downstream works with the t-derivative
u_eps of the glued potential. Derivatives of chi are taken analytically.
"""
import logging
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from solitonforge.config import Tolerances, WeightSpec
from solitonforge.exceptions import DomainError, EpsilonTooLargeError
from solitonforge.models import GluedData, Grid, RadialMetric, WeightedNorm
from solitonforge.parallel import sweep_map
from solitonforge.potential_interface import CalabiBubble, CaoPotential, PotentialModel, PotentialSamples, blend, ramp
from solitonforge.radial_soliton import soliton_residual, solve_profile

logger = logging.getLogger(__name__)

# depth of the bubble below t = 2 log eps; the Calabi profile is flat to 1e-14 there
T_BUB = 8.0
T_FAR = 12.0


def r_eps(n: int, eps: float) -> float:
    if not eps > 0:
        raise DomainError(f"eps must be positive, got {eps}")
    return eps ** (n / (n + 1))


def cutoff(r, lam: float):
    if not lam > 0:
        raise DomainError(f"cutoff scale must be positive, got {lam}")
    chi, _, _ = ramp(np.asarray(r, dtype=float) / lam)
    return chi if chi.ndim else float(chi)


def glued_grid(eps: float, h: float, t_far: float = T_FAR) -> Grid:
    return Grid.uniform(2.0 * np.log(eps) - T_BUB, t_far, h)


def _weight(grid: Grid, eps: float, phi0: np.ndarray, gamma: float, delta: float) -> np.ndarray:
    # w^-(R) = max(R, 1)^gamma on the bubble, r^gamma on the cone, e^(delta phi_0) at infinity
    t = grid.nodes
    cone = np.maximum(grid.r, eps) ** gamma
    return np.where(t < 0, cone, np.exp(delta * phi0))


def glued_weight(gd: GluedData, gamma: float, delta: float) -> np.ndarray:
    """w_{eps,gamma,delta}; any gamma >= 0 is accepted so critical weights can be probed."""
    if gamma < 0:
        raise DomainError(f"weight exponent must be nonnegative, got {gamma}")
    return _weight(gd.grid, gd.eps, gd.phi0, gamma, delta)


def glued_sigma(gd: GluedData) -> np.ndarray:
    return np.where(gd.grid.nodes < 0, 0.25 * np.maximum(gd.grid.r, gd.eps), 0.25)


def glued_norm(gd: GluedData, gamma: float, order: int, delta: Optional[float] = None) -> WeightedNorm:
    """Weighted norm of the glued spaces, derivatives taken in the radial arclength of omega_eps."""
    delta = gd.delta if delta is None else delta
    return WeightedNorm(
        weight=glued_weight(gd, gamma, delta),
        order=order,
        sigma=glued_sigma(gd),
        arc=0.5 * np.sqrt(gd.u_eps_t),
        h=gd.grid.h,
    )


def _model_defect(model: PotentialModel, samples: PotentialSamples, grid: Grid, n: int) -> np.ndarray:
    """Rounding left in the soliton residual of an exact model: 0 for solitons, u for Ricci-flat models."""
    if not (model.soliton or model.ricci_flat):
        return np.zeros(grid.size)
    residual = soliton_residual(RadialMetric(grid=grid, u=samples.first, u_t=samples.second), n)
    return residual - samples.first if model.ricci_flat else residual


def build_glued(
    n: int,
    eps: float,
    grid: Grid,
    spec: WeightSpec,
    inner: Optional[PotentialModel] = None,
    outer: Optional[PotentialModel] = None,
    tolerances: Tolerances = Tolerances(),
) -> GluedData:
    if n < 2:
        raise DomainError(f"gluing needs n >= 2, got {n}")
    spec.check(n)
    lam = r_eps(n, eps)
    if not 2.0 * lam < 1.0:
        raise EpsilonTooLargeError(f"gluing region r <= 2 r_eps = {2 * lam:.4g} must lie inside r < 1")
    if grid.t_min > 2.0 * np.log(eps) - T_BUB + 1e-9 or grid.t_max < 1.0:
        raise DomainError(
            f"grid [{grid.t_min}, {grid.t_max}] must cover [{2.0 * np.log(eps) - T_BUB:.4f}, 1]"
        )
    inner = inner or CalabiBubble(n, eps)
    outer = outer or CaoPotential(n, tolerances)

    O = outer.evaluate(grid)
    I = inner.evaluate(grid)
    phi0 = O.first if isinstance(outer, CaoPotential) else solve_profile(n, 0.0, grid, tolerances).phi

    glued, chi = blend(grid.r / lam, O, I)
    potential, u, u_t = glued.potential, glued.first, glued.second

    bad = ~(u > 0) | ~(u_t > 0)
    if np.any(bad):
        worst = int(np.argmin(np.where(bad, np.minimum(u, u_t), np.inf)))
        raise EpsilonTooLargeError(
            f"glued form not positive for eps={eps}: u={u[worst]:.3e}, u_t={u_t[worst]:.3e} "
            f"at node {worst} (t={grid.nodes[worst]:.6f})",
            node=worst,
            t=float(grid.nodes[worst]),
        )

    # the exact models' own discrete defects are removed with the weights of the blend
    defect = chi * _model_defect(outer, O, grid, n) + (1 - chi) * _model_defect(inner, I, grid, n)
    f = defect - soliton_residual(RadialMetric(grid=grid, u=u, u_t=u_t), n)

    logger.debug(f"glued eps={eps}: r_eps={lam:.4e}, {np.count_nonzero((chi > 0) & (chi < 1))} transition nodes")
    return GluedData(
        n=n,
        eps=eps,
        r_eps=lam,
        grid=grid,
        u_eps=u,
        u_eps_t=u_t,
        mu_eps=u.copy(),
        f_eps=f,
        weights=_weight(grid, eps, phi0, spec.gamma, spec.delta),
        potential=potential,
        phi0=phi0,
        gamma=spec.gamma,
        delta=spec.delta,
        inner=inner.name,
        outer=outer.name,
    )


def transition_estimates(gd: GluedData) -> Tuple[float, float, float]:
    """sup over r_eps <= r <= 2 r_eps of r_eps^(k-4) |d^k/dr^k (Phi_eps - r^2)|, k = 0, 1, 2."""
    r = gd.grid.r
    mask = (r >= gd.r_eps) & (r <= 2.0 * gd.r_eps)
    if not np.any(mask):
        raise DomainError("no grid nodes in the transition region")
    gap = gd.potential - np.exp(gd.grid.nodes)
    first = np.gradient(gap, r, edge_order=2)
    second = np.gradient(first, r, edge_order=2)
    return tuple(
        float(gd.r_eps ** (k - 4) * np.max(np.abs(d[mask]))) for k, d in enumerate((gap, first, second))
    )


def _error_density(gd: GluedData, spec: WeightSpec) -> np.ndarray:
    return _weight(gd.grid, gd.eps, gd.phi0, spec.gamma + 2.0, spec.delta) * np.abs(np.expm1(gd.f_eps))


def error_norm(gd: GluedData, spec: WeightSpec) -> float:
    """sup w_{eps,gamma+2,delta} |1 - e^(f_eps)|."""
    return float(np.max(_error_density(gd, spec)))


def error_components(gd: GluedData, spec: WeightSpec) -> Dict[str, float]:
    density = _error_density(gd, spec)
    r = gd.grid.r
    bubble = r <= gd.r_eps
    transition = (r > gd.r_eps) & (r < 2.0 * gd.r_eps)
    return {
        "bubble": float(np.max(density[bubble], initial=0.0)),
        "transition": float(np.max(density[transition], initial=0.0)),
    }


def fit_exponent(eps: Sequence[float], values: Sequence[float]) -> float:
    eps = np.asarray(eps, dtype=float)
    values = np.asarray(values, dtype=float)
    usable = np.isfinite(values) & (values > 0) & (eps > 0)
    if np.count_nonzero(usable) < 4:
        raise DomainError(f"exponent fit needs at least 4 usable points, got {np.count_nonzero(usable)}")
    span = np.log10(eps[usable].max() / eps[usable].min())
    if span < 2.0 - 1e-9:
        raise DomainError(f"exponent fit needs eps spanning two decades, got {span:.2f}")
    slope, _ = np.polyfit(np.log(eps[usable]), np.log(values[usable]), 1)
    return float(slope)


def expected_exponent(n: int, gamma: float) -> float:
    return (4.0 + gamma) * n / (n + 1.0)


def error_norm_sweep(
    n: int,
    spec: WeightSpec,
    eps_list: Sequence[float],
    h: float = 1.0 / 128,
    t_far: float = T_FAR,
    jobs: int = 1,
    tolerances: Tolerances = Tolerances(),
) -> List[Tuple[float, float, float]]:
    """(eps, r_eps, error_norm) per sweep point; failed points carry NaN."""

    def point(eps: float) -> float:
        gd = build_glued(n, eps, glued_grid(eps, h, t_far), spec, tolerances=tolerances)
        return error_norm(gd, spec)

    results = sweep_map(point, list(eps_list), jobs=jobs, desc="error-scan")
    return [
        (float(eps), r_eps(n, eps), float("nan") if value is None else value)
        for eps, (value, _) in zip(eps_list, results)
    ]


def error_scaling_scan(n: int, spec: WeightSpec, eps_list: Sequence[float], **kwargs) -> float:
    rows = error_norm_sweep(n, spec, eps_list, **kwargs)
    return fit_exponent([row[0] for row in rows], [row[2] for row in rows])
