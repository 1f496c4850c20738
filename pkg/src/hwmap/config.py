"""Run configuration: a strict JSON schema validated with pydantic.

Unknown keys are rejected at every level. eta is implied by ``target.kind``
and cannot be set directly.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigurationError
from .geometry import TargetSpec
from .spectral import Grid


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GridBlock(_Strict):
    n: int = Field(ge=1, le=3)
    size: int = Field(ge=8)
    length: float = Field(default=6.283185307179586, gt=0)

    @field_validator("size")
    @classmethod
    def _pow2(cls, v):
        if v & (v - 1):
            raise ValueError("must be a power of two")
        return v


class TargetBlock(_Strict):
    kind: Literal["sphere", "hyperbolic"] = "sphere"
    base_point: Optional[Tuple[float, float, float]] = None
    flip_sheet: bool = False


class SimBlock(_Strict):
    dt: float = Field(gt=0)
    T: float = Field(gt=0)
    integrator: Literal["rk4", "midpoint"] = "rk4"
    retract_every: int = Field(default=1, ge=1)
    diagnostics_every: int = Field(default=1, ge=1)


class DataBlock(_Strict):
    kind: Literal["small", "single_shell", "constant", "great_circle"] = "small"
    epsilon: float = Field(default=0.01, ge=0)
    width: float = Field(default=4.0, gt=0)
    shell: int = 0
    modes: List[int] = Field(default_factory=lambda: [1])
    tilt: float = 0.0


class AnalysisBlock(_Strict):
    sigma: float = Field(default=0.25, gt=0, le=0.25)
    shell_offset: int = Field(default=10, ge=0)
    k_cut: int = -10
    M: Optional[int] = None
    band: int = 0
    C0: float = Field(default=1.0, gt=0)
    c0: float = Field(default=1.0, gt=0)
    epsilon: float = Field(default=1.0, gt=0)
    scales: List[float] = Field(default_factory=lambda: [1.0, 0.5, 0.25, 0.125])


class IterateBlock(_Strict):
    T: float = Field(default=0.2, gt=0)
    dt: float = Field(default=0.01, gt=0)
    tol: float = Field(default=1e-12, gt=0)
    max_outer: int = Field(default=30, ge=1)
    max_inner: int = Field(default=60, ge=1)


class IOBlock(_Strict):
    snapshot_every: int = Field(default=1, ge=1)
    write_snapshots: bool = True
    formats: List[Literal["csv", "json"]] = Field(default_factory=lambda: ["csv", "json"])


class RunConfig(_Strict):
    grid: GridBlock
    sim: SimBlock
    target: TargetBlock = Field(default_factory=TargetBlock)
    data: DataBlock = Field(default_factory=DataBlock)
    analysis: AnalysisBlock = Field(default_factory=AnalysisBlock)
    iterate: IterateBlock = Field(default_factory=IterateBlock)
    io: IOBlock = Field(default_factory=IOBlock)
    seed: int = 0

    def make_grid(self):
        return Grid(self.grid.n, self.grid.size, self.grid.length)

    def make_target(self):
        return TargetSpec(self.target.kind, self.target.base_point, self.target.flip_sheet)

    def canonical(self):
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    def digest(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def _field_path(err):
    return ".".join(str(p) for p in err["loc"]) or "<root>"


def parse_config(raw, seed=None):
    """Validate a mapping; ``seed`` overrides the file's seed."""
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a JSON object")
    if seed is not None:
        raw = dict(raw, seed=seed)
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        msgs = [f"{_field_path(e)}: {e['msg']}" for e in exc.errors()]
        raise ConfigurationError("invalid config: " + "; ".join(msgs)) from exc


def load_config(path, seed=None):
    p = Path(path)
    try:
        text = p.read_text()
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {p}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config is not valid JSON: {exc}") from exc
    return parse_config(raw, seed)
