"""Ricci-flat ALE model on O(-n): Calabi's metric u = (1 + e^(nt))^(1/n) and its expansion at infinity."""
import logging
from typing import Optional, Tuple, Union

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicHermiteSpline
from scipy.special import binom

from solitonforge.exceptions import DomainError
from solitonforge.models import AleProfile, Grid

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# the potential is taken from its convergent expansion at and above this t
SERIES_ANCHOR = 1.0
SERIES_CUTOFF = 40.0


def ale_coefficient(n: int) -> float:
    if n < 2:
        raise DomainError(f"ALE models need n >= 2, got {n}")
    return -1.0 / (n * (n - 1))


def calabi_derivatives(n: int, t: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """(u, u_t) of the Calabi profile, written to stay in range for large |t|."""
    t = np.asarray(t, dtype=float)
    e = np.exp(-n * np.abs(t))
    lift = np.exp(np.where(t > 0, t, 0.0))
    u = lift * (1.0 + e) ** (1.0 / n)
    u_t = np.where(t > 0, lift, e) * (1.0 + e) ** (1.0 / n - 1.0)
    return u, u_t


def calabi_potential_series(n: int, t: ArrayLike) -> ArrayLike:
    """sum_k binom(1/n, k) e^((1-nk)t) / (1-nk): the potential normalized at +infinity, for t > 0."""
    ale_coefficient(n)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr <= 0):
        raise DomainError("the expansion of the Calabi potential converges only for t > 0")
    terms = int(min(2000, np.ceil(SERIES_CUTOFF / (n * np.min(t_arr))))) + 1
    k = np.arange(terms, dtype=float)[:, None]
    values = binom(1.0 / n, k) * np.exp((1.0 - n * k) * t_arr[None, :]) / (1.0 - n * k)
    # smallest terms first
    out = values[::-1].sum(axis=0)
    return out if np.ndim(t) else float(out[0])


def calabi_profile(n: int, grid: Grid) -> AleProfile:
    A = ale_coefficient(n)
    t = grid.nodes
    if grid.t_max < SERIES_ANCHOR:
        raise DomainError(f"grid must reach t={SERIES_ANCHOR} to normalize the potential at infinity")
    u, u_t = calabi_derivatives(n, t)

    anchor = int(np.searchsorted(t, SERIES_ANCHOR))
    potential = np.empty_like(t)
    potential[anchor:] = calabi_potential_series(n, t[anchor:])
    tail_constant = float(potential[anchor])
    if anchor > 0:
        below = u[: anchor + 1][::-1]
        potential[: anchor + 1] = tail_constant - cumulative_simpson(below, dx=grid.h, initial=0.0)[::-1]
    return AleProfile(n=n, grid=grid, u=u, u_t=u_t, A=A, tail_constant=tail_constant, potential=potential)


def asymptotic_profile(n: int, grid: Grid, A: Optional[float] = None) -> AleProfile:
    """Truncated expansion R^2 + A R^(2-2n), not Ricci-flat; A = 0 is the flat cone."""
    if A is None:
        A = ale_coefficient(n)
    elif n < 2:
        raise DomainError(f"ALE models need n >= 2, got {n}")
    t = grid.nodes
    tail = A * np.exp((1 - n) * t)
    return AleProfile(
        n=n,
        grid=grid,
        u=np.exp(t) + (1 - n) * tail,
        u_t=np.exp(t) + (1 - n) ** 2 * tail,
        A=A,
        tail_constant=0.0,
        potential=np.exp(t) + tail,
        ricci_flat=False,
    )


def ale_potential(p: AleProfile, t: ArrayLike) -> ArrayLike:
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < p.grid.t_min) or np.any(t_arr > p.grid.t_max):
        raise DomainError(f"t outside grid range [{p.grid.t_min}, {p.grid.t_max}]")
    out = CubicHermiteSpline(p.grid.nodes, p.potential, p.u)(t_arr)
    return out if out.ndim else float(out)


def moment_map(p: AleProfile) -> np.ndarray:
    # -X/4 = d/dt on radial functions
    return p.u.copy()


def decay_exponent(p: AleProfile, R_range: Tuple[float, float] = (10.0, 100.0)) -> float:
    """Least-squares exponent of |u - R^2| against R = e^(t/2)."""
    R = p.grid.r
    mask = (R >= R_range[0]) & (R <= R_range[1])
    if np.count_nonzero(mask) < 4:
        raise DomainError(f"too few nodes with R in {R_range}")
    gap = np.abs(p.u[mask] - np.exp(p.grid.nodes[mask]))
    slope, _ = np.polyfit(np.log(R[mask]), np.log(gap), 1)
    return float(slope)
