from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Tuple

import numpy as np
from scipy.special import expit

from solitonforge.ale_model import asymptotic_profile, calabi_profile
from solitonforge.config import Tolerances
from solitonforge.exceptions import DomainError
from solitonforge.models import Grid
from solitonforge.radial_soliton import cao_potential, solve_profile

RAMP = (1.001, 1.999)
# bubble radius below which AsymptoticBubble keeps the exact Calabi core
CORE_RADIUS = 2.0


@dataclass(frozen=True)
class PotentialSamples:
    potential: np.ndarray = field(repr=False)
    first: np.ndarray = field(repr=False)
    second: np.ndarray = field(repr=False)


def ramp(x: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """chi(x) = E(x-1) / (E(x-1) + E(2-x)) with E(s) = exp(-1/s), and its first two derivatives."""
    x = np.asarray(x, dtype=float)
    chi = np.where(x >= 2.0, 1.0, 0.0)
    d1 = np.zeros_like(x)
    d2 = np.zeros_like(x)
    inside = (x > RAMP[0]) & (x < RAMP[1])
    if np.any(inside):
        xi = x[inside]
        p, q = 2.0 - xi, xi - 1.0
        z = 1.0 / p - 1.0 / q
        z1 = 1.0 / p ** 2 + 1.0 / q ** 2
        z2 = 2.0 / p ** 3 - 2.0 / q ** 3
        s = expit(z)
        ds = s * (1.0 - s)
        chi[inside] = s
        d1[inside] = ds * z1
        d2[inside] = ds * ((1.0 - 2.0 * s) * z1 ** 2 + z2)
    # beyond RAMP the logistic is 0 or 1 to double precision
    chi = np.where(x >= RAMP[1], 1.0, np.where(x <= RAMP[0], 0.0, chi))
    return chi, d1, d2


def blend(x: np.ndarray, outer: PotentialSamples, inner: PotentialSamples) -> Tuple[PotentialSamples, np.ndarray]:
    """chi(x) outer + (1 - chi(x)) inner for x = e^(t/2) / scale, with exact t-derivatives; returns chi too.

    Nodes with chi = 0 or 1 copy the inner or outer samples unchanged.
    """
    chi, d1, d2 = ramp(x)
    chi_t = 0.5 * x * d1
    chi_tt = 0.25 * x * x * d2 + 0.25 * x * d1
    gap0 = outer.potential - inner.potential
    gap1 = outer.first - inner.first

    mixed = (chi > 0) & (chi < 1)
    far = chi == 1
    potential = np.where(
        far, outer.potential, np.where(mixed, chi * outer.potential + (1 - chi) * inner.potential, inner.potential)
    )
    first = np.where(
        far, outer.first, np.where(mixed, chi * outer.first + (1 - chi) * inner.first + chi_t * gap0, inner.first)
    )
    second = np.where(
        far,
        outer.second,
        np.where(mixed, chi * outer.second + (1 - chi) * inner.second + 2 * chi_t * gap1 + chi_tt * gap0, inner.second),
    )
    return PotentialSamples(potential=potential, first=first, second=second), chi


class PotentialModel(ABC):
    name = "abstract"
    ricci_flat = False
    soliton = False

    @abstractmethod
    def evaluate(self, grid: Grid) -> PotentialSamples:
        """Phi, Phi_t and Phi_tt at the grid nodes"""
        pass


class CaoPotential(PotentialModel):
    """Cao's soliton on C^n, potential normalized to vanish at the origin."""

    name = "cao"
    soliton = True

    def __init__(self, n: int, tolerances: Tolerances = Tolerances()):
        self.n = n
        self.tolerances = tolerances

    def evaluate(self, grid: Grid) -> PotentialSamples:
        p = solve_profile(self.n, 0.0, grid, self.tolerances)
        return PotentialSamples(potential=cao_potential(p), first=p.phi, second=p.phi_t)


class CalabiBubble(PotentialModel):
    """eps^2 times the Calabi potential pulled back by z -> z/eps."""

    name = "calabi"
    ricci_flat = True

    def __init__(self, n: int, eps: float):
        if not eps > 0:
            raise DomainError(f"eps must be positive, got {eps}")
        self.n = n
        self.eps = eps

    def evaluate(self, grid: Grid) -> PotentialSamples:
        shift = 2.0 * np.log(self.eps)
        scaled = Grid(t_min=grid.t_min - shift, t_max=grid.t_max - shift, h=grid.h, nodes=grid.nodes - shift)
        p = calabi_profile(self.n, scaled)
        e2 = self.eps ** 2
        return PotentialSamples(potential=e2 * p.potential, first=e2 * p.u, second=e2 * p.u_t)


class FlatPotential(PotentialModel):
    name = "flat"
    ricci_flat = True

    def evaluate(self, grid: Grid) -> PotentialSamples:
        r2 = np.exp(grid.nodes)
        return PotentialSamples(potential=r2, first=r2, second=r2)


class AsymptoticBubble(PotentialModel):
    """eps^2 times the truncated ALE expansion R^2 + A R^(2-2n), over an exact Calabi core.

    The expansion stops being Kahler near R = 1, so R <= CORE_RADIUS keeps the
    Calabi profile and the ramp hands over to the expansion by 2 CORE_RADIUS.
    """

    name = "asymptotic"

    def __init__(self, n: int, eps: float, core: float = CORE_RADIUS):
        if not eps > 0:
            raise DomainError(f"eps must be positive, got {eps}")
        if not core >= 1.0:
            raise DomainError(f"core radius must be at least 1, got {core}")
        self.n = n
        self.eps = eps
        self.core = core
        self.calabi = CalabiBubble(n, eps)

    def evaluate(self, grid: Grid) -> PotentialSamples:
        shift = 2.0 * np.log(self.eps)
        core = self.calabi.evaluate(grid)
        start = int(np.searchsorted(grid.nodes - shift, 2.0 * np.log(self.core)))
        if grid.size - start < 16:
            return core
        # the expansion is only evaluated where it is Kahler
        tail = Grid(
            t_min=float(grid.nodes[start] - shift),
            t_max=float(grid.nodes[-1] - shift),
            h=grid.h,
            nodes=grid.nodes[start:] - shift,
        )
        p = asymptotic_profile(self.n, tail)
        e2 = self.eps ** 2
        expansion = PotentialSamples(
            potential=np.concatenate([core.potential[:start], e2 * p.potential]),
            first=np.concatenate([core.first[:start], e2 * p.u]),
            second=np.concatenate([core.second[:start], e2 * p.u_t]),
        )
        glued, _ = blend(np.exp(0.5 * (grid.nodes - shift)) / self.core, expansion, core)
        return glued
