"""Run configuration: a YAML document validated against a strict schema."""

import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from . import hull
from .ffd import DesignVariable, FfdLattice
from .problem import ConstraintSpec, Penalty, ResistanceSpec


class ConfigError(ValueError):
    pass


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class DomeConfig(_Strict):
    center_x: float = 0.80
    center_z: float = -0.020
    radius: float = Field(0.010, gt=0)
    length: float = Field(0.015, gt=0)


class HullConfig(_Strict):
    length: float = Field(1.0, gt=0)
    beam: float = Field(0.133, gt=0)
    draft: float = Field(0.0434, gt=0)
    waterline_z: float = 0.0
    n_stations: int = Field(41, ge=3)
    n_girth: int = Field(25, ge=3)
    section_exponent: float = Field(2.5, gt=0)
    end_fraction: float = Field(0.05, ge=0, le=1)
    dome: DomeConfig = DomeConfig()

    def build(self):
        d = self.model_dump()
        dome = hull.DomeSpec(**d.pop("dome"))
        return hull.HullSpec(dome=dome, **d)


class VariableConfig(_Strict):
    name: str = ""
    nodes: List[Tuple[int, int, int]]
    axis: Literal[0, 1, 2]
    lower: float
    upper: float


class LatticeConfig(_Strict):
    name: str
    origin: Tuple[float, float, float]
    axes: Tuple[Tuple[float, float, float], Tuple[float, float, float], Tuple[float, float, float]]
    degrees: Tuple[int, int, int]
    variables: List[VariableConfig]


class LatticesConfig(_Strict):
    """Either the built-in hull/bulb layout (scaled by the two ranges) or explicit lattices."""

    preset: Literal["default", "custom"] = "default"
    hull_range: float = Field(0.008, gt=0)
    bulb_range: float = Field(0.006, gt=0)
    custom: List[LatticeConfig] = []

    @model_validator(mode="after")
    def _custom_needs_lattices(self):
        if self.preset == "custom" and not self.custom:
            raise ValueError("preset 'custom' requires at least one entry in 'custom'")
        return self

    def build(self, hull_spec):
        if self.preset == "default":
            return hull.default_lattices(hull_spec, self.hull_range, self.bulb_range)
        out = []
        for lat in self.custom:
            variables = [DesignVariable(nodes=tuple(map(tuple, v.nodes)), axis=v.axis, lower=v.lower,
                                        upper=v.upper, name=v.name) for v in lat.variables]
            out.append(FfdLattice(origin=list(lat.origin), axes=[list(a) for a in lat.axes],
                                  degrees=tuple(lat.degrees), variables=variables, name=lat.name))
        return out


class SamplingConfig(_Strict):
    n_samples: int = Field(1000, ge=4)
    feasible_only: bool = True
    window: int = Field(1000, ge=1)
    min_acceptance: float = Field(0.01, ge=0, le=1)


class ModelConfig(_Strict):
    kind: Literal["pca", "ppca", "fa"] = "ppca"
    n_components: Optional[int] = Field(None, ge=1)
    variance_threshold: Optional[float] = Field(0.99, gt=0, le=1)
    method: Literal["closed", "em"] = "closed"
    max_iter: int = Field(500, ge=1)
    tol: float = Field(1e-8, gt=0)

    @model_validator(mode="after")
    def _k_or_threshold(self):
        if self.n_components is None and self.variance_threshold is None:
            raise ValueError("set n_components or variance_threshold")
        return self

    def params(self):
        p = {"n_components": self.n_components, "variance_threshold": self.variance_threshold}
        if self.kind == "ppca":
            p.update(method=self.method, max_iter=self.max_iter, tol=self.tol)
        elif self.kind == "fa":
            p.update(max_iter=self.max_iter, tol=self.tol)
        return p


class ThresholdConfig(_Strict):
    rule: Literal["fence", "literal"] = "fence"
    n_uniform: int = Field(2000, ge=1)
    bins: int = Field(40, ge=1)


class ObjectiveConfig(_Strict):
    seed: int = 7
    n_proj: int = Field(10, ge=1)
    w_wetted: float = 0.2
    w_curvature: float = 0.1
    w_wave: float = 1.0
    amplitude: float = 0.05
    frequency: float = 6.0
    target_fraction: float = Field(0.6, gt=0)
    target_spread: float = Field(1.0, gt=0, le=1)
    version: int = 1

    def spec(self):
        d = self.model_dump()
        d.pop("target_spread")
        return ResistanceSpec(**d)


class OptimizerConfig(_Strict):
    kind: Literal["direct", "gp-lcb"] = "direct"
    mode: Literal["full", "latent", "anomaly"] = "anomaly"
    budget: int = Field(500, ge=1)
    kappa: float = Field(1.0, ge=0)
    n_starts: int = Field(16, ge=1)
    maxiter: int = Field(200, ge=1)
    fd_step: float = Field(1e-6, gt=0)
    nugget: float = Field(1e-8, gt=0)
    cap_percentile: Optional[float] = Field(None, gt=0, le=100)
    name: Optional[str] = None

    @field_validator("name")
    @classmethod
    def _safe_name(cls, v):
        if v is not None and not v.replace("-", "").replace("_", "").isalnum():
            raise ValueError("name may only contain letters, digits, '-' and '_'")
        return v

    @property
    def run_name(self):
        return self.name or f"{self.mode}-{self.kind}"


class PenaltyConfig(_Strict):
    h: float = 50.0
    psi: float = Field(1000.0, ge=0)


class ConstraintConfig(_Strict):
    beam: float = Field(0.05, ge=0)
    draft: float = Field(0.05, ge=0)
    length: float = Field(0.01, ge=0)
    displacement: float = Field(0.01, ge=0)
    dome: bool = True


class ReportConfig(_Strict):
    logs: List[str] = []


class RunConfig(_Strict):
    seed: int = 0
    output_dir: str = "run"
    hull: HullConfig = HullConfig()
    lattices: LatticesConfig = LatticesConfig()
    sampling: SamplingConfig = SamplingConfig()
    model: ModelConfig = ModelConfig()
    threshold: ThresholdConfig = ThresholdConfig()
    objective: ObjectiveConfig = ObjectiveConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    penalty: PenaltyConfig = PenaltyConfig()
    constraints: ConstraintConfig = ConstraintConfig()
    report: ReportConfig = ReportConfig()

    def penalty_spec(self):
        return Penalty(**self.penalty.model_dump())

    def constraint_spec(self):
        return ConstraintSpec(**self.constraints.model_dump())

    def digest(self):
        return hashlib.sha256(json.dumps(self.model_dump(), sort_keys=True).encode()).hexdigest()


def apply_override(data, assignment):
    """Set ``a.b.c=value`` in a nested dict; the value is parsed as YAML."""
    if "=" not in assignment:
        raise ConfigError(f"override {assignment!r} is not of the form key=value")
    path, raw = assignment.split("=", 1)
    keys = path.strip().split(".")
    node = data
    for key in keys[:-1]:
        child = node.get(key)
        if child is None:
            child = node[key] = {}
        if not isinstance(child, dict):
            raise ConfigError(f"override {path!r}: {key!r} is not a section")
        node = child
    node[keys[-1]] = yaml.safe_load(raw)
    return data


def _describe(exc):
    parts = []
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        parts.append(f"{loc}: {err['msg']}")
    return "; ".join(parts)


def load_config(path=None, overrides=()):
    data = {}
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read {path}: {exc}".replace("\n", " ")) from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for item in overrides:
        apply_override(data, item)
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_describe(exc)) from None
