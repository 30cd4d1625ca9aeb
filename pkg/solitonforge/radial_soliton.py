"""Cao steady solitons on C^n (a = 0) and on O(-n) (a > 0).

A profile phi_a solves F(phi) e^phi = e^(nt)/n + F(a) e^a, where F is the
degree n-1 polynomial with d/ds[F(s) e^s] = s^(n-1) e^s. The root is found in
the variable y = log(phi - a) on G(phi) = int_a^phi s^(n-1) e^s ds, which has
no cancellation as t -> -infinity and no overflow as t -> +infinity.
"""
import logging
from math import factorial
from typing import Tuple, Union

import numpy as np
from scipy.integrate import cumulative_simpson, cumulative_trapezoid
from scipy.special import binom, hyp1f1, logsumexp

from solitonforge.config import Tolerances
from solitonforge.exceptions import ConvergenceError, DomainError
from solitonforge.models import Grid, RadialMetric, SolitonProfile

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

# beyond this excess the incomplete integral is evaluated from F directly
SERIES_LIMIT = 30.0
MAX_BRACKET_EXPANSIONS = 200
ROUNDOFF_FACTOR = 16.0


def f_poly(n: int, s: ArrayLike) -> ArrayLike:
    if n < 1:
        raise DomainError(f"n must be at least 1, got {n}")
    s = np.asarray(s, dtype=float)
    total = np.zeros_like(s)
    for r in range(n - 1, -1, -1):
        total = total * s + (-1) ** (n - r - 1) * factorial(n - 1) / factorial(r)
    return total if total.ndim else float(total)


def _log_incomplete(n: int, a: float, y: np.ndarray) -> np.ndarray:
    """log of int_a^(a+e^y) s^(n-1) e^s ds."""
    d = np.exp(y)
    phi = a + d
    small = d <= SERIES_LIMIT

    ys = np.minimum(y, np.log(SERIES_LIMIT))
    ds = np.exp(ys)
    terms = []
    with np.errstate(divide="ignore"):
        for j in range(n):
            coeff = np.log(binom(n - 1, j) * a ** (n - 1 - j))
            terms.append(coeff + (j + 1) * ys + np.log(hyp1f1(j + 1, j + 2, ds)) - np.log(j + 1))
    series = a + logsumexp(np.stack(terms), axis=0)

    phi_big = np.maximum(phi, a + SERIES_LIMIT)
    f_big = f_poly(n, phi_big)
    direct = phi_big + np.log(f_big) + np.log1p(-f_poly(n, a) * np.exp(a - phi_big) / f_big)

    return np.where(small, series, direct)


def _residual(n: int, a: float, t: np.ndarray, y: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    log_g = _log_incomplete(n, a, y)
    phi = a + np.exp(y)
    with np.errstate(divide="ignore"):
        log_phi = np.log(phi)
    slope = np.exp(y + (n - 1) * log_phi + phi - log_g) if n > 1 else np.exp(y + phi - log_g)
    return log_g - (n * t - np.log(n)), slope


def _initial_guess(n: int, a: float, t: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        if a > 0:
            near = np.log(1.0 / n) + (1 - n) * np.log(a) - a + n * t
        else:
            near = t.copy()
        far = np.log(np.maximum(n * t - (n - 1) * np.log(np.maximum(t, 1.0)) - n * np.log(n) - a, 1.0))
    return np.where(t > 1.0, far, near)


def _solve_excess(n: int, a: float, t: np.ndarray, tolerances: Tolerances) -> np.ndarray:
    """phi - a at each t, by bracketed Newton with bisection fallback in y = log(phi - a)."""
    t = np.asarray(t, dtype=float)

    # G(phi) >= e^a d^n / n and, for a > 0, G(phi) >= a^(n-1) e^a d
    hi = t - a / n
    if a > 0:
        hi = np.minimum(hi, n * t - a - (n - 1) * np.log(a) - np.log(n))
    # and G(phi) >= e^(d-1) once d >= 2
    hi = np.minimum(hi, np.log(np.maximum(2.0, n * t + 1.0)))
    hi = hi + 1e-12 * np.maximum(1.0, np.abs(hi))
    lo = hi - 1.0
    for _ in range(MAX_BRACKET_EXPANSIONS):
        g_lo, _ = _residual(n, a, t, lo)
        high = g_lo >= 0
        if not np.any(high):
            break
        lo = np.where(high, lo - 2.0 * (hi - lo), lo)
    else:
        raise ConvergenceError("could not bracket the profile root from below")

    y = np.clip(_initial_guess(n, a, t), lo, hi)
    # roundoff floor of g = log G - (nt - log n)
    floor = ROUNDOFF_FACTOR * np.finfo(float).eps * np.maximum(1.0, np.abs(n * t - np.log(n)))
    active = np.ones_like(t, dtype=bool)
    settled = np.zeros_like(t, dtype=bool)
    for iteration in range(tolerances.root_max_iter):
        g, slope = _residual(n, a, t, y)
        active &= ~(np.abs(g) <= floor)
        if not np.any(active):
            logger.debug(f"profile root converged in {iteration} iterations (n={n}, a={a})")
            return np.exp(y)
        lo = np.where(active & (g < 0), y, lo)
        hi = np.where(active & (g > 0), y, hi)
        with np.errstate(divide="ignore", invalid="ignore"):
            candidate = y - g / slope
        outside = ~np.isfinite(candidate) | (candidate <= lo) | (candidate >= hi)
        candidate = np.where(outside, 0.5 * (lo + hi), candidate)
        step = np.abs(candidate - y)
        y = np.where(active, candidate, y)
        # a node stops on the first Newton step after its step size fell below tolerance
        collapsed = hi - lo <= 4.0 * np.spacing(np.maximum(np.abs(lo), np.abs(hi)))
        finished = active & ((settled & ~outside) | collapsed)
        settled |= active & (step <= tolerances.root_rtol * np.maximum(1.0, np.abs(y)))
        active &= ~finished
        if not np.any(active):
            logger.debug(f"profile root converged in {iteration + 1} iterations (n={n}, a={a})")
            return np.exp(y)

    worst = int(np.flatnonzero(active)[0])
    raise ConvergenceError(
        f"profile root did not converge after {tolerances.root_max_iter} iterations "
        f"at node {worst} (t={t[worst]:.6f}, n={n}, a={a})"
    )


def profile_values(n: int, a: float, t: ArrayLike, tolerances: Tolerances = Tolerances()) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(phi, phi_t, phi - a) at arbitrary points t."""
    if n < 1:
        raise DomainError(f"n must be at least 1, got {n}")
    if a < 0:
        raise DomainError(f"family parameter a must be nonnegative, got {a}")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    excess = _solve_excess(n, a, t, tolerances)
    phi = a + excess
    # phi_t from phi^(n-1) phi_t e^phi = e^(nt), never by differencing
    if n > 1:
        phi_t = np.exp(n * t - phi - (n - 1) * np.log(phi))
    else:
        # e^phi = e^t + e^a, so phi_t = 1 - e^(a - phi) stays at most 1
        phi_t = -np.expm1(-excess)
    return phi, phi_t, excess


def solve_profile(n: int, a: float, grid: Grid, tolerances: Tolerances = Tolerances()) -> SolitonProfile:
    phi, phi_t, excess = profile_values(n, a, grid.nodes, tolerances)
    return SolitonProfile(n=n, a=a, grid=grid, phi=phi, phi_t=phi_t, excess=excess)


def cigar_profile(a: float, grid: Grid) -> SolitonProfile:
    """Closed form of the n = 1 family: e^phi = e^t + e^a."""
    if a < 0:
        raise DomainError(f"family parameter a must be nonnegative, got {a}")
    t = grid.nodes
    phi = np.logaddexp(t, a)
    excess = np.log1p(np.exp(t - a)) if a > 0 else phi
    return SolitonProfile(n=1, a=a, grid=grid, phi=phi, phi_t=1.0 / (1.0 + np.exp(a - t)), excess=excess)


def asymptote_neg(n: int, a: float, t: ArrayLike) -> ArrayLike:
    if a < 0:
        raise DomainError(f"family parameter a must be nonnegative, got {a}")
    t = np.asarray(t, dtype=float)
    if a > 0:
        return a + a ** (1 - n) * np.exp(-a) * np.exp(n * t) / n
    return np.exp(t) - np.exp(2 * t) / (n + 1)


def asymptote_pos(n: int, t: ArrayLike) -> Tuple[ArrayLike, ArrayLike]:
    t = np.asarray(t, dtype=float)
    if np.any(t <= 1):
        raise DomainError("the expansion at infinity needs t > 1")
    return n * t - (n - 1) * np.log(t) - n * np.log(n), n - (n - 1) / t


def soliton_residual(m: RadialMetric, n: int) -> np.ndarray:
    """log(u^(n-1) u_t) - n t + u; zero exactly when m is a normalized steady soliton."""
    if np.any(~(m.u > 0)) or np.any(~(m.u_t > 0)):
        raise DomainError("soliton residual needs u > 0 and u_t > 0")
    return (n - 1) * np.log(m.u) + np.log(m.u_t) - n * m.grid.nodes + m.u


def profile_second_derivative(p: SolitonProfile) -> np.ndarray:
    # differentiate log(phi_t) = nt - phi - (n-1) log(phi)
    return p.phi_t * (p.n - p.phi_t - (p.n - 1) * p.phi_t / p.phi)


def derivative_bounds(p: SolitonProfile) -> Tuple[float, float]:
    return float(np.max(p.phi_t)), float(np.max(np.abs(profile_second_derivative(p))))


def ball_volume(p: SolitonProfile, t: ArrayLike) -> ArrayLike:
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < p.grid.t_min) or np.any(t_arr > p.grid.t_max):
        raise DomainError(f"t outside grid range [{p.grid.t_min}, {p.grid.t_max}]")
    density = p.phi ** (p.n - 1) * p.phi_t
    volume = cumulative_trapezoid(density, dx=p.grid.h, initial=0.0)
    out = np.interp(t_arr, p.grid.nodes, volume)
    return out if out.ndim else float(out)


def cao_potential(p: SolitonProfile) -> np.ndarray:
    """Phi_0 = int_{-inf}^t phi, normalized by Phi_0 -> 0 at -infinity."""
    if p.a != 0:
        raise DomainError("the potential is normalized at -infinity only for a = 0")
    t0 = p.grid.t_min
    tail = np.exp(t0) - np.exp(2 * t0) / (2 * (p.n + 1))
    return tail + cumulative_simpson(p.phi, dx=p.grid.h, initial=0.0)


def bubble_rescale(n: int, a: float, t: ArrayLike, tolerances: Tolerances = Tolerances()) -> np.ndarray:
    """phi_a(t + log a) / a, which tends to the Calabi profile (1 + e^(nt))^(1/n) as a -> 0."""
    if not a > 0:
        raise DomainError(f"bubble rescaling needs a > 0, got {a}")
    t = np.atleast_1d(np.asarray(t, dtype=float))
    _, _, excess = profile_values(n, a, t + np.log(a), tolerances)
    return 1.0 + excess / a


def family_identity_error(p: SolitonProfile) -> float:
    """max over nodes of |F(phi) e^phi - e^(nt)/n - F(a) e^a| / (e^(nt)/n + 1)."""
    scale = np.exp(p.n * p.grid.nodes) / p.n
    gap = f_poly(p.n, p.phi) * np.exp(p.phi) - scale - f_poly(p.n, p.a) * np.exp(p.a)
    return float(np.max(np.abs(gap) / (scale + 1.0)))


def neg_correction_rate(
    n: int, a: float, window: Tuple[float, float] = (-14.0, -8.0), tolerances: Tolerances = Tolerances()
) -> float:
    """Fitted t-exponent of the leading correction at -infinity: 2 for a = 0 (phi - e^t), n for a > 0 (phi - a)."""
    t = np.linspace(window[0], window[1], 64)
    phi, _, excess = profile_values(n, a, t, tolerances)
    gap = np.abs(phi - np.exp(t)) if a == 0 else excess
    slope, _ = np.polyfit(t, np.log(gap), 1)
    return float(slope)


def pos_correction_rate(
    n: int, a: float = 0.0, window: Tuple[float, float] = (50.0, 400.0), tolerances: Tolerances = Tolerances()
) -> float:
    """Fitted exponent of phi - (nt - (n-1) log t - n log n) against (log t)/t; tends to 1."""
    if n < 2:
        raise DomainError(f"the logarithmic correction vanishes for n = {n}")
    t = np.linspace(window[0], window[1], 64)
    phi, _, _ = profile_values(n, a, t, tolerances)
    leading, _ = asymptote_pos(n, t)
    slope, _ = np.polyfit(np.log(np.log(t) / t), np.log(np.abs(phi - leading)), 1)
    return float(slope)


def pos_correction_coefficient(
    n: int, a: float = 0.0, window: Tuple[float, float] = (200.0, 2000.0), tolerances: Tolerances = Tolerances()
) -> float:
    """Coefficient of (log t)/t in phi - asymptote_pos, with the (n-1)(log n + 1/n)/t term removed.

    Expanding phi + log F(phi) = nt - log n gives (n-1)^2/n.
    """
    if n < 2:
        raise DomainError(f"the logarithmic correction vanishes for n = {n}")
    t = np.linspace(window[0], window[1], 64)
    phi, _, _ = profile_values(n, a, t, tolerances)
    leading, _ = asymptote_pos(n, t)
    gap = phi - leading - (n - 1) * (np.log(n) + 1.0 / n) / t
    coefficients = np.polyfit(np.log(t) / t, gap, 2)
    return float(coefficients[1])
