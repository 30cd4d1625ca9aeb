from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from solitonforge.exceptions import DomainError

MIN_NODES = 16


def _frozen(array) -> np.ndarray:
    out = np.array(array, dtype=float)
    out.setflags(write=False)
    return out


def _worst(mask: np.ndarray) -> int:
    return int(np.flatnonzero(mask)[0])


@dataclass(frozen=True)
class Grid:
    t_min: float
    t_max: float
    h: float
    nodes: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", _frozen(self.nodes))
        if not (self.t_min < self.t_max and self.h > 0):
            raise DomainError(f"invalid grid [{self.t_min}, {self.t_max}] with h={self.h}")
        if self.nodes.size < MIN_NODES:
            raise DomainError(f"grid holds {self.nodes.size} nodes, at least {MIN_NODES} required")
        steps = np.diff(self.nodes)
        if np.any(steps <= 0) or np.max(np.abs(steps - self.h)) > 1e-9 * self.h:
            raise DomainError("grid nodes must be strictly increasing and uniform")

    @classmethod
    def uniform(cls, t_min: float, t_max: float, h: float) -> "Grid":
        count = int(round((t_max - t_min) / h)) + 1
        nodes = t_min + h * np.arange(count)
        return cls(t_min=float(nodes[0]), t_max=float(nodes[-1]), h=float(h), nodes=nodes)

    @property
    def size(self) -> int:
        return int(self.nodes.size)

    @property
    def r(self) -> np.ndarray:
        return np.exp(0.5 * self.nodes)

    def refined(self) -> "Grid":
        return Grid.uniform(self.t_min, self.t_max, self.h / 2)

    def index_of(self, t: float) -> int:
        if not self.t_min <= t <= self.t_max:
            raise DomainError(f"t={t} outside grid range [{self.t_min}, {self.t_max}]")
        return int(round((t - self.t_min) / self.h))


@dataclass(frozen=True)
class RadialMetric:
    """omega = u * omega_FS + u_t * omega_cyl for a U(n)-invariant potential with derivative u."""

    grid: Grid
    u: np.ndarray = field(repr=False)
    u_t: np.ndarray = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "u", _frozen(self.u))
        object.__setattr__(self, "u_t", _frozen(self.u_t))
        for name, values in (("u", self.u), ("u_t", self.u_t)):
            if values.shape != self.grid.nodes.shape:
                raise DomainError(f"{name} has {values.size} samples for {self.grid.size} nodes")
            bad = ~(values > 0)
            if np.any(bad):
                node = _worst(bad)
                raise DomainError(
                    f"metric not Kahler: {name}={values[node]:.3e} at node {node} (t={self.grid.nodes[node]:.6f})"
                )


@dataclass(frozen=True)
class SolitonProfile:
    n: int
    a: float
    grid: Grid
    phi: np.ndarray = field(repr=False)
    phi_t: np.ndarray = field(repr=False)
    # phi - a, kept separately because it underflows against a at very negative t
    excess: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("phi", "phi_t", "excess"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.n < 1 or self.a < 0:
            raise DomainError(f"invalid family member n={self.n}, a={self.a}")
        if np.any(~(self.excess > 0)) or np.any(self.phi < self.a):
            raise DomainError("profile violates phi > a")
        # for n = 1, phi_t = 1 - e^(a - phi) rounds to exactly 1 once phi - a > 37
        beyond = self.phi_t >= self.n if self.n > 1 else self.phi_t > 1
        if np.any(~(self.phi_t > 0)) or np.any(beyond):
            raise DomainError("profile violates 0 < phi_t < n")
        if np.any(np.diff(self.excess) <= 0):
            raise DomainError("profile is not strictly increasing")

    def metric(self) -> RadialMetric:
        return RadialMetric(grid=self.grid, u=self.phi, u_t=self.phi_t)


@dataclass(frozen=True)
class AleProfile:
    n: int
    grid: Grid
    u: np.ndarray = field(repr=False)
    u_t: np.ndarray = field(repr=False)
    A: float
    tail_constant: float
    potential: np.ndarray = field(repr=False)
    ricci_flat: bool = True

    def __post_init__(self):
        for name in ("u", "u_t", "potential"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        if self.n < 2:
            raise DomainError(f"ALE models need n >= 2, got {self.n}")
        RadialMetric(grid=self.grid, u=self.u, u_t=self.u_t)

    def metric(self) -> RadialMetric:
        return RadialMetric(grid=self.grid, u=self.u, u_t=self.u_t)


class BoundaryCondition(str, Enum):
    DIRICHLET = "dirichlet"
    REGULARITY = "regularity"


@dataclass(frozen=True)
class DriftOperator:
    """Tridiagonal discretization of psi -> coeff_a*psi_tt + coeff_b*psi_t with boundary rows.

    `banded` uses the (1, 2) layout of scipy.linalg.solve_banded; the second
    superdiagonal is nonzero only in a regularity row.
    """

    grid: Grid
    coeff_a: np.ndarray = field(repr=False)
    coeff_b: np.ndarray = field(repr=False)
    kappa: np.ndarray = field(repr=False)
    bc_left: BoundaryCondition
    bc_right: BoundaryCondition
    banded: np.ndarray = field(repr=False)

    def __post_init__(self):
        for name in ("coeff_a", "coeff_b", "kappa", "banded"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        bad = ~(self.coeff_a > 0)
        if np.any(bad):
            node = _worst(bad)
            raise DomainError(f"operator not elliptic at node {node} (t={self.grid.nodes[node]:.6f})")
        if self.bc_right is not BoundaryCondition.DIRICHLET:
            raise DomainError("right boundary condition must be Dirichlet")


@dataclass(frozen=True)
class WeightedNorm:
    weight: np.ndarray = field(repr=False)
    order: int
    sigma: np.ndarray = field(repr=False)
    # ds/dt of the radial arclength; None means divided differences in t
    arc: Optional[np.ndarray] = field(default=None, repr=False)
    h: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "weight", _frozen(self.weight))
        object.__setattr__(self, "sigma", _frozen(self.sigma))
        if self.arc is not None:
            object.__setattr__(self, "arc", _frozen(self.arc))
        if self.order not in (0, 1, 2):
            raise DomainError(f"weighted norms of order {self.order} are not supported")
        if self.order > 0 and not (self.h or 0) > 0:
            raise DomainError("divided differences need the grid spacing h")
        if np.any(~(self.sigma > 0)) or np.any(~(self.weight > 0)):
            raise DomainError("weights and scale function must be positive")


@dataclass(frozen=True)
class GluedData:
    n: int
    eps: float
    r_eps: float
    grid: Grid
    u_eps: np.ndarray = field(repr=False)
    u_eps_t: np.ndarray = field(repr=False)
    mu_eps: np.ndarray = field(repr=False)
    f_eps: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    potential: np.ndarray = field(repr=False)
    phi0: np.ndarray = field(repr=False)
    gamma: float
    delta: float
    inner: str = "calabi"
    outer: str = "cao"

    def __post_init__(self):
        for name in ("u_eps", "u_eps_t", "mu_eps", "f_eps", "weights", "potential", "phi0"):
            object.__setattr__(self, name, _frozen(getattr(self, name)))

    def metric(self) -> RadialMetric:
        return RadialMetric(grid=self.grid, u=self.u_eps, u_t=self.u_eps_t)

    @property
    def r(self) -> np.ndarray:
        return self.grid.r


@dataclass(frozen=True)
class IFTCertificate:
    c: float
    q: float
    t0_norm: float
    r0: float
    certified_radius: float
    condition_met: bool


@dataclass(frozen=True)
class NewtonReport:
    iterations: List[Tuple[float, float]]
    converged: bool
    final_psi: np.ndarray = field(repr=False)
    final_psi_t: np.ndarray = field(repr=False)
    final_psi_tt: np.ndarray = field(repr=False)
    wall_time: float
    quadratic_constant: Optional[float] = None

    @property
    def residuals(self) -> List[float]:
        return [res for res, _ in self.iterations]


@dataclass
class RunRecord:
    config: Dict[str, Any]
    version: str
    outputs: Dict[str, Any] = field(default_factory=dict)
    tables: Dict[str, Tuple[List[str], List[List[float]]]] = field(default_factory=dict)
    assertions: Dict[str, bool] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    failed: bool = False

    @property
    def passed(self) -> bool:
        return not self.failed and all(self.assertions.values())
