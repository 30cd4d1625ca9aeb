"""The drift Laplacian 1/4 (Delta - kappa X) on radial functions.

With X = -4 d/dt, a radial psi on the metric u omega_FS + u_t omega_cyl gives
1/4 (Delta - kappa X) psi = (n-1) psi_t / u + psi_tt / u_t + kappa psi_t.
Rows 0 and N-1 of every discretization are boundary rows: Dirichlet rows
carry the boundary value, a regularity row the one-sided derivative.
"""
import logging
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.linalg import LinAlgError
from numpy.random import Generator
from scipy.linalg import solve_banded

from solitonforge.config import Tolerances, WeightSpec
from solitonforge.exceptions import DomainError, SolverError
from solitonforge.glue import T_FAR, build_glued, glued_grid, glued_norm
from solitonforge.models import BoundaryCondition, DriftOperator, GluedData, Grid, SolitonProfile, WeightedNorm
from solitonforge.parallel import sweep_map
from solitonforge.sampling import gaussian_bumps, make_rng

logger = logging.getLogger(__name__)

BANDS = (1, 2)
# bump widths in t for the forward-norm test functions
PROBE_WIDTHS = (0.5, 2.0)


def from_coefficients(
    grid: Grid,
    coeff_a: np.ndarray,
    coeff_b: np.ndarray,
    kappa: Union[float, np.ndarray] = 1.0,
    bc_left: BoundaryCondition = BoundaryCondition.REGULARITY,
) -> DriftOperator:
    h = grid.h
    size = grid.size
    coeff_a = np.asarray(coeff_a, dtype=float)
    coeff_b = np.asarray(coeff_b, dtype=float)
    lower = coeff_a / h ** 2 - coeff_b / (2 * h)
    diag = -2.0 * coeff_a / h ** 2
    upper = coeff_a / h ** 2 + coeff_b / (2 * h)

    ab = np.zeros((4, size))
    ab[2, 1:-1] = diag[1:-1]
    ab[1, 2:] = upper[1:-1]
    ab[3, :-2] = lower[1:-1]
    ab[2, -1] = 1.0
    if bc_left is BoundaryCondition.REGULARITY:
        ab[2, 0] = -3.0 / (2 * h)
        ab[1, 1] = 4.0 / (2 * h)
        ab[0, 2] = -1.0 / (2 * h)
    else:
        ab[2, 0] = 1.0
    return DriftOperator(
        grid=grid,
        coeff_a=coeff_a,
        coeff_b=coeff_b,
        kappa=np.broadcast_to(kappa, coeff_a.shape),
        bc_left=BoundaryCondition(bc_left),
        bc_right=BoundaryCondition.DIRICHLET,
        banded=ab,
    )


def assemble(
    n: int,
    u: np.ndarray,
    u_t: np.ndarray,
    kappa: Union[float, np.ndarray],
    grid: Grid,
    bc_left: BoundaryCondition = BoundaryCondition.REGULARITY,
) -> DriftOperator:
    u = np.asarray(u, dtype=float)
    u_t = np.asarray(u_t, dtype=float)
    if np.any(~(u > 0)) or np.any(~(u_t > 0)):
        raise DomainError("drift operator needs u > 0 and u_t > 0 at every node")
    kappa = np.broadcast_to(np.asarray(kappa, dtype=float), u.shape)
    return from_coefficients(grid, 1.0 / u_t, (n - 1) / u + kappa, kappa, bc_left)


def apply(L: DriftOperator, psi: np.ndarray) -> np.ndarray:
    ab = L.banded
    out = ab[2] * psi
    out[:-1] += ab[1, 1:] * psi[1:]
    out[:-2] += ab[0, 2:] * psi[2:]
    out[1:] += ab[3, :-1] * psi[:-1]
    return out


def _row_max(L: DriftOperator) -> np.ndarray:
    ab = np.abs(L.banded)
    rows = ab[2].copy()
    rows[:-1] = np.maximum(rows[:-1], ab[1, 1:])
    rows[:-2] = np.maximum(rows[:-2], ab[0, 2:])
    rows[1:] = np.maximum(rows[1:], ab[3, :-1])
    return rows


def _banded_rows(scale: np.ndarray) -> np.ndarray:
    """Row scaling in the (1, 2) banded layout: entry ab[k, j] sits in row j + k - 2."""
    out = np.ones((4, scale.size))
    out[0, 2:] = scale[:-2]
    out[1, 1:] = scale[:-1]
    out[2] = scale
    out[3, :-1] = scale[1:]
    return out


def _row_norm(L: DriftOperator) -> float:
    ab = np.abs(L.banded)
    rows = ab[2].copy()
    rows[:-1] += ab[1, 1:]
    rows[:-2] += ab[0, 2:]
    rows[1:] += ab[3, :-1]
    return float(np.max(rows))


def solve(L: DriftOperator, g: np.ndarray, rtol: float = Tolerances().solve_rtol) -> np.ndarray:
    """Solve L psi = g; g[0] and g[-1] are the boundary data."""
    g = np.asarray(g, dtype=float)
    if not np.all(np.isfinite(g)):
        raise DomainError("right-hand side must be finite")
    norm_l = _row_norm(L)
    # rows differ by up to 1/h^2 / u_t; scale each to unit max so the Dirichlet rows pin exactly
    row_max = _row_max(L)
    if not np.all(row_max > 0):
        raise SolverError(f"operator has a zero row at node {int(np.argmin(row_max))}")
    scale = 1.0 / row_max
    ab = L.banded * _banded_rows(scale)
    try:
        psi = solve_banded(BANDS, ab, g * scale)
    except (LinAlgError, ValueError) as e:
        raise SolverError(f"banded solve failed: {str(e)}")
    norm_psi = float(np.max(np.abs(psi))) if np.all(np.isfinite(psi)) else np.inf
    norm_g = float(np.max(np.abs(g)))
    condition = norm_l * norm_psi / norm_g if norm_g > 0 else np.inf
    if not np.isfinite(norm_psi):
        raise SolverError("banded solve produced non-finite values", condition=condition)
    residual = float(np.max(np.abs(apply(L, psi) - g)))
    if residual > rtol * (norm_l * norm_psi + norm_g):
        raise SolverError(
            f"backward error {residual:.3e} exceeds tolerance (condition estimate >= {condition:.3e})",
            condition=condition,
        )
    return psi


def weighted_norm(f: np.ndarray, wn: WeightedNorm) -> float:
    """sum_i sup sigma^i w |D^i f|, i = 0..order, D a centered divided difference."""
    f = np.asarray(f, dtype=float)
    total = float(np.max(wn.weight * np.abs(f)))
    derivative = f
    scale = np.ones_like(f)
    for _ in range(wn.order):
        derivative = np.gradient(derivative, wn.h, edge_order=2)
        if wn.arc is not None:
            derivative = derivative / wn.arc
        scale = scale * wn.sigma
        total += float(np.max(scale * wn.weight * np.abs(derivative)))
    return total


def barrier_check(p: SolitonProfile, delta: float) -> float:
    """max |(Delta - X) e^(-delta phi) + 4 delta (n - delta phi_t) e^(-delta phi)| over interior nodes."""
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    L = assemble(p.n, p.phi, p.phi_t, 1.0, p.grid, BoundaryCondition.DIRICHLET)
    barrier = np.exp(-delta * p.phi)
    exact = -4.0 * delta * (p.n - delta * p.phi_t) * barrier
    return float(np.max(np.abs(4.0 * apply(L, barrier)[1:-1] - exact[1:-1])))


def maximum_principle_check(
    p: SolitonProfile, delta: float, g: np.ndarray, left: float = 0.0, right: float = 0.0
) -> Tuple[float, float, float]:
    """Weighted barrier bound for the Dirichlet problem (Delta - X) psi = 4 g on the profile's grid.

    Returns (sup w |psi|, bound, bound - sup) with w = e^(delta phi) and
    bound = max(w |psi| on the boundary, sup w |4 g| / (4 delta (1 - delta) n)).
    """
    if not 0 < delta < 1:
        raise DomainError(f"delta must lie in (0, 1), got {delta}")
    L = assemble(p.n, p.phi, p.phi_t, 1.0, p.grid, BoundaryCondition.DIRICHLET)
    rhs = np.array(g, dtype=float)
    rhs[0], rhs[-1] = left, right
    psi = solve(L, rhs)
    w = np.exp(delta * p.phi)
    lhs = float(np.max(w * np.abs(psi)))
    boundary = max(w[0] * abs(psi[0]), w[-1] * abs(psi[-1]))
    interior = float(np.max(w[1:-1] * np.abs(4.0 * rhs[1:-1]))) / (4.0 * delta * (1.0 - delta) * p.n)
    bound = max(boundary, interior)
    return lhs, bound, bound - lhs


def truncation_sensitivity(
    p: SolitonProfile, delta: float, g: Callable[[np.ndarray], np.ndarray], t_max_list: Sequence[float]
) -> List[Tuple[float, float]]:
    """Weighted gap between Dirichlet solutions on [t_min, T] and on the longest truncation."""
    ends = sorted(t_max_list)
    if ends[-1] > p.grid.t_max:
        raise DomainError(f"truncation {ends[-1]} beyond grid end {p.grid.t_max}")
    solutions = []
    for end in ends:
        stop = p.grid.index_of(end) + 1
        grid = Grid(t_min=p.grid.t_min, t_max=float(p.grid.nodes[stop - 1]), h=p.grid.h, nodes=p.grid.nodes[:stop])
        L = assemble(p.n, p.phi[:stop], p.phi_t[:stop], 1.0, grid, BoundaryCondition.REGULARITY)
        rhs = np.array(g(grid.nodes), dtype=float)
        rhs[0] = rhs[-1] = 0.0
        solutions.append(solve(L, rhs))
    reference = solutions[-1]
    gaps = []
    for end, psi in zip(ends, solutions):
        w = np.exp(delta * p.phi[: psi.size])
        gaps.append((float(end), float(np.max(w * np.abs(psi - reference[: psi.size])))))
    return gaps


def probe_windows(gd: GluedData) -> List[Tuple[float, float]]:
    split = 2.0 * np.log(gd.eps) + 4.0
    return [(gd.grid.t_min, split), (split, 0.0), (0.0, gd.grid.t_max)]


def probe_rhs(gd: GluedData, gamma: float, count: int, rng: Generator) -> List[np.ndarray]:
    """Right-hand sides for inverse-norm probing: +-1/w_{gamma+2} and weighted bump sums."""
    inverse_weight = 1.0 / glued_norm(gd, gamma + 2.0, 0).weight
    probes = [inverse_weight.copy(), -inverse_weight]
    windows = probe_windows(gd)
    while len(probes) < count:
        bumps = gaussian_bumps(rng, windows[len(probes) % 3], gd.grid.h)
        values, _, _ = bumps.evaluate(gd.grid.nodes)
        probes.append(values * inverse_weight)
    for g in probes:
        g[0] = g[-1] = 0.0
    return probes


def probe_functions(gd: GluedData, gamma: float, count: int, rng: Generator) -> List[np.ndarray]:
    """Smooth test functions of unit size in the gamma-weighted C^2 space.

    sigma D is comparable to d/dt on every region, so bumps of width O(1) in t
    are the unit-scale functions of that space at every eps.
    """
    norm = glued_norm(gd, gamma, 2)
    windows = probe_windows(gd)
    probes = []
    for k in range(count):
        bumps = gaussian_bumps(rng, windows[k % 3], gd.grid.h, width_range=PROBE_WIDTHS)
        values, _, _ = bumps.evaluate(gd.grid.nodes)
        probes.append(values / weighted_norm(values, norm))
    return probes


def inverse_norm(
    gd: GluedData,
    gamma: float,
    kappa: str = "drift",
    probes: int = 32,
    seed: int = 0,
    key: Optional[int] = None,
    rtol: float = Tolerances().solve_rtol,
) -> float:
    """Probe estimate of the norm of L^-1 from the (gamma+2)-weighted to the gamma-weighted space.

    kappa="drift" uses e^(f_eps) as drift multiplier (the linearization), kappa="one" the plain operator.
    """
    multiplier = np.exp(gd.f_eps) if kappa == "drift" else 1.0
    L = assemble(gd.n, gd.u_eps, gd.u_eps_t, multiplier, gd.grid)
    source = glued_norm(gd, gamma + 2.0, 0)
    target = glued_norm(gd, gamma, 2)
    estimate = 0.0
    for g in probe_rhs(gd, gamma, probes, make_rng(seed, *(() if key is None else (key,)))):
        psi = solve(L, g, rtol)
        estimate = max(estimate, weighted_norm(psi, target) / weighted_norm(g, source))
    return estimate


def forward_norm(gd: GluedData, gamma: float, probes: int = 32, seed: int = 0, key: Optional[int] = None) -> float:
    """Probe estimate of the norm of L = 1/4 (Delta_eps - X) from the gamma- to the (gamma+2)-weighted space."""
    L = assemble(gd.n, gd.u_eps, gd.u_eps_t, 1.0, gd.grid)
    source = glued_norm(gd, gamma, 2)
    target = glued_norm(gd, gamma + 2.0, 0)
    estimate = 0.0
    for psi in probe_functions(gd, gamma, probes, make_rng(seed, *(() if key is None else (key,)))):
        image = apply(L, psi)
        image[0] = image[-1] = 0.0
        estimate = max(estimate, weighted_norm(image, target) / weighted_norm(psi, source))
    return estimate


def drift_perturbation_norm(gd: GluedData, spec: WeightSpec) -> float:
    """Bound on the norm of psi -> (e^(f_eps) - 1) psi_t between the weighted spaces.

    Uses |psi_t| = ds/dt |D psi| <= ds/dt ||psi|| / (sigma w_gamma).
    """
    target = glued_norm(gd, spec.gamma + 2.0, 0)
    source = glued_norm(gd, spec.gamma, 2)
    return float(np.max(target.weight * np.abs(np.expm1(gd.f_eps)) * source.arc / (source.sigma * source.weight)))


def inverse_norm_sweep(
    n: int,
    spec: WeightSpec,
    eps_list: Sequence[float],
    probes: int = 32,
    seed: int = 0,
    h: float = 1.0 / 128,
    t_far: float = T_FAR,
    jobs: int = 1,
    gamma: Optional[float] = None,
    tolerances: Tolerances = Tolerances(),
) -> List[Dict[str, float]]:
    """Per-eps inverse-norm estimates for kappa = e^(f_eps) and kappa = 1.

    `gamma` overrides the weight exponent without WeightSpec validation, so the
    critical value 0 can be probed. A failed point reports NaN and failed = 1.
    """
    exponent = spec.gamma if gamma is None else gamma

    def point(item: Tuple[int, float]) -> Dict[str, float]:
        index, eps = item
        gd = build_glued(n, eps, glued_grid(eps, h, t_far), spec, tolerances=tolerances)
        return {
            "drift": inverse_norm(gd, exponent, "drift", probes, seed, index, tolerances.solve_rtol),
            "plain": inverse_norm(gd, exponent, "one", probes, seed, index, tolerances.solve_rtol),
            "perturbation": drift_perturbation_norm(gd, spec),
        }

    results = sweep_map(point, list(enumerate(eps_list)), jobs=jobs, desc="invert-scan")
    report = []
    for eps, (values, error) in zip(eps_list, results):
        row = {"eps": float(eps), "drift": np.nan, "plain": np.nan, "perturbation": np.nan, "failed": 1.0}
        if values is not None:
            row.update(values)
            row["failed"] = 0.0
        report.append(row)
    return report


def forward_norm_sweep(
    n: int,
    spec: WeightSpec,
    eps_list: Sequence[float],
    probes: int = 32,
    seed: int = 0,
    h: float = 1.0 / 128,
    t_far: float = T_FAR,
    jobs: int = 1,
    tolerances: Tolerances = Tolerances(),
) -> List[Tuple[float, float]]:
    def point(item: Tuple[int, float]) -> float:
        index, eps = item
        gd = build_glued(n, eps, glued_grid(eps, h, t_far), spec, tolerances=tolerances)
        # one stream for every eps, so the sweep compares the same test functions
        return forward_norm(gd, spec.gamma, probes, seed, 0)

    results = sweep_map(point, list(enumerate(eps_list)), jobs=jobs, desc="forward-scan")
    return [(float(eps), np.nan if value is None else value) for eps, (value, _) in zip(eps_list, results)]
