"""Run configuration: one JSON document validated before any compute.

Unknown keys are rejected everywhere. Validation errors carry the dotted
path of the offending field.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .timeint import IntegratorSpec

__all__ = ["RunConfig", "ConfigError", "load_config", "parse_config"]


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ProblemConfig(_Strict):
    kind: Literal["sod", "lti-diffusion", "lti-file"] = "sod"
    n_cells: int = Field(1000, ge=2)
    gamma: float = Field(1.4, gt=1.0)
    entropy_fix: bool = False
    n: int = Field(64, ge=2)
    dx: Optional[float] = Field(None, gt=0)
    path: Optional[str] = None

    @model_validator(mode="after")
    def _need_path(self):
        if self.kind == "lti-file" and not self.path:
            raise ValueError("lti-file needs 'path' to a matrix file")
        return self


class IntegratorConfig(_Strict):
    scheme: Literal["explicit_euler", "ssp_rk3", "implicit_euler", "crank_nicolson"] = "ssp_rk3"
    dt: float = Field(5e-4, gt=0)
    t_final: float = Field(1.0, ge=0)
    newton_tol: float = Field(1e-8, gt=0)
    newton_max_iter: int = Field(30, ge=1)
    linear_solver: Literal["direct", "jfnk_gmres"] = "direct"
    gmres_tol: float = Field(1e-8, gt=0)
    gmres_max_iter: Optional[int] = Field(None, ge=1)
    jacobian_refresh: Literal["always", "lazy"] = "always"

    def spec(self):
        return IntegratorSpec(**self.model_dump())


class PodConfig(_Strict):
    layout: Literal["per-variable", "global"] = "per-variable"
    modes: Optional[int] = Field(50, ge=1)
    criterion: Optional[float] = Field(None, gt=0, le=1)

    @model_validator(mode="after")
    def _one_rule(self):
        if self.criterion is not None and "modes" in self.model_fields_set and self.modes is not None:
            raise ValueError("give either 'modes' or 'criterion', not both")
        return self

    @property
    def rule(self):
        return ("criterion", self.criterion) if self.criterion is not None else ("modes", self.modes)


class RomConfig(_Strict):
    method: Literal["galerkin", "apg", "lspg"] = "galerkin"
    tau: Union[float, Literal["heuristic", "misfit"]] = 0.0
    C: float = Field(0.2, ge=0)
    tau_update: bool = False
    jac_mode: Literal["fd", "exact"] = "fd"
    fd_eps: float = Field(1e-5, gt=0)
    integrator: IntegratorConfig = IntegratorConfig()

    @model_validator(mode="after")
    def _check(self):
        if isinstance(self.tau, float) and self.tau < 0:
            raise ValueError("tau must be non-negative")
        if self.method == "lspg" and self.integrator.scheme not in ("implicit_euler", "crank_nicolson"):
            raise ValueError("lspg needs an implicit integrator scheme")
        return self


class HyperConfig(_Strict):
    r: int = Field(..., ge=1)
    target_Np: int = Field(..., ge=1)

    @model_validator(mode="after")
    def _check(self):
        if self.target_Np < self.r:
            raise ValueError("target_Np must be >= r")
        return self


class OutputConfig(_Strict):
    directory: str = "out"
    save_every: int = Field(2, ge=1)


class SweepConfig(_Strict):
    K: list[int] = [60, 75, 90, 105, 120, 135, 150, 165, 180]
    method: list[Literal["galerkin", "apg", "lspg"]] = ["galerkin", "apg", "lspg"]
    tau: list[Union[float, Literal["heuristic", "misfit"]]] = ["misfit"]
    dt: list[float] = [5e-4]
    explicit_scheme: Literal["explicit_euler", "ssp_rk3"] = "ssp_rk3"
    implicit_scheme: Literal["implicit_euler", "crank_nicolson"] = "implicit_euler"
    implicit_methods: list[Literal["galerkin", "apg", "lspg"]] = ["lspg"]

    @model_validator(mode="after")
    def _check(self):
        if "lspg" in self.method and "lspg" not in self.implicit_methods:
            raise ValueError("lspg runs only with the implicit scheme; list it in implicit_methods")
        if any(k < 1 for k in self.K) or any(d <= 0 for d in self.dt):
            raise ValueError("K entries must be >= 1 and dt entries > 0")
        if any(isinstance(t, float) and t < 0 for t in self.tau):
            raise ValueError("tau entries must be non-negative")
        return self


class VerifyConfig(_Strict):
    n_systems: int = Field(20, ge=1)
    max_N: int = Field(32, ge=4, le=64)
    max_K: int = Field(8, ge=1)
    t_final: float = Field(2.0, gt=0)
    n_times: int = Field(21, ge=2)


class CostConfig(_Strict):
    N: int = Field(1000, ge=1)
    omega: int = Field(50, ge=1)
    K_max: int = Field(250, ge=1)
    eta_fractions: list[float] = [1.0, 0.5, 0.2]


class RunConfig(_Strict):
    problem: ProblemConfig = ProblemConfig()
    fom: IntegratorConfig = IntegratorConfig()
    pod: PodConfig = PodConfig()
    rom: RomConfig = RomConfig()
    hyper: Optional[HyperConfig] = None
    outputs: OutputConfig = OutputConfig()
    sweep: SweepConfig = SweepConfig()
    verify: VerifyConfig = VerifyConfig()
    cost: CostConfig = CostConfig()
    seed: int = 0


def _format(err: ValidationError):
    lines = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        lines.append(f"{loc}: {e['msg']}")
    return "; ".join(lines)


def parse_config(data):
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_format(exc)) from None


def load_config(path):
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(data)
