import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from solitonforge.exceptions import DomainError

COMMANDS = ("cao", "ale", "glue", "error-scan", "invert-scan", "newton", "verify-all")


class WeightSpec(BaseModel):
    """Exponents of the doubly-weighted norms: r^gamma at the cone point, e^(delta*phi) at infinity."""

    model_config = ConfigDict(frozen=True)

    gamma: float
    delta: float

    @field_validator("gamma")
    @classmethod
    def _gamma_positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError(f"gamma must be positive, got {value}")
        return value

    @field_validator("delta")
    @classmethod
    def _delta_in_unit_interval(cls, value: float) -> float:
        if not 0 < value < 1:
            raise ValueError(f"delta must lie in (0, 1), got {value}")
        return value

    def check(self, n: int) -> "WeightSpec":
        if not self.gamma < 2 * n - 2:
            raise DomainError(f"gamma={self.gamma} must lie below the critical weight 2n-2={2 * n - 2}")
        return self


class Tolerances(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    root_rtol: float = 1e-13
    root_max_iter: int = 100
    solve_rtol: float = 1e-10
    newton_tol: float = 1e-10
    newton_max_iter: int = 30
    min_damping: float = 1.0 / 64


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    command: Literal["cao", "ale", "glue", "error-scan", "invert-scan", "newton", "verify-all"]
    n: int = Field(default=2, ge=1)
    a: float = Field(default=0.0, ge=0.0)
    gamma: float = 1.0
    delta: float = 0.5
    eps: float = Field(default=1e-2, gt=0.0)
    eps_list: List[float] = Field(default_factory=lambda: [1e-2, 3e-3, 1e-3, 3e-4, 1e-4])
    t_min: float = -20.0
    t_max: float = 40.0
    h: float = Field(default=1.0 / 128, gt=0.0)
    t_far: float = Field(default=12.0, gt=1.0)
    probes: int = Field(default=32, ge=2)
    samples: int = Field(default=16, ge=1)
    starts: int = Field(default=5, ge=0)
    seed: int = Field(default=42, ge=0, lt=2 ** 64)
    out: str = "out"
    jobs: int = Field(default=1, ge=1)
    root_rtol: float = Field(default=1e-13, gt=0.0)
    solve_rtol: float = Field(default=1e-10, gt=0.0)
    newton_tol: float = Field(default=1e-10, gt=0.0)
    newton_max_iter: int = Field(default=30, ge=1)

    @model_validator(mode="after")
    def _revalidate(self) -> "ExperimentConfig":
        if not self.t_min < self.t_max:
            raise ValueError(f"t_min={self.t_min} must be below t_max={self.t_max}")
        if (self.t_max - self.t_min) / self.h < 15:
            raise ValueError("grid must hold at least 16 nodes")
        if any(e <= 0 for e in self.eps_list):
            raise ValueError("every eps in eps_list must be positive")
        if self.command not in ("cao", "ale"):
            try:
                self.weight_spec()
            except (ValidationError, DomainError) as e:
                raise ValueError(str(e))
        return self

    def tolerances(self) -> Tolerances:
        return Tolerances(
            root_rtol=self.root_rtol,
            solve_rtol=self.solve_rtol,
            newton_tol=self.newton_tol,
            newton_max_iter=self.newton_max_iter,
        )

    def weight_spec(self) -> WeightSpec:
        return WeightSpec(gamma=self.gamma, delta=self.delta).check(self.n)

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")

    @classmethod
    def from_sources(cls, path: Optional[str], overrides: Dict[str, Any]) -> "ExperimentConfig":
        data: Dict[str, Any] = {}
        if path:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
            if not isinstance(raw, dict):
                raise DomainError(f"config file {path} must hold a single JSON object")
            data.update(raw)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**data)
