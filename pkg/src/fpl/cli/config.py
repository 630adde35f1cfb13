"""Versioned JSON scenario schema.

Every block rejects unknown keys. Fields left unset take the scenario's
desk-scale defaults (see :data:`DEFAULTS`); ``--paper-scale`` swaps in the
large widths.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from fpl.errors import ConfigError

SCHEMA_VERSION = 1

ScenarioId = Literal["fig1_two_tone", "fig3_splines", "fig4_xor", "parity", "scaling_law", "custom"]
TargetExpr = Literal["two_tone", "sin_pi", "xor", "parity", "sin", "sin_cos", "zero"]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class TargetSpec(_Strict):
    expr: Optional[TargetExpr] = None
    params: dict[str, float] = Field(default_factory=dict)
    path: Optional[str] = None

    @model_validator(mode="after")
    def _one_source(self):
        if (self.expr is None) == (self.path is None):
            raise ValueError("target needs exactly one of 'expr' or 'path'")
        return self


class SamplingSpec(_Strict):
    n: Optional[int] = Field(default=None, ge=1, le=100_000)
    d: Optional[int] = Field(default=None, ge=1, le=16)
    domain: Optional[tuple[float, float]] = None
    kind: Optional[Literal["grid", "uniform", "normal", "corners"]] = None
    seed: int = Field(default=0, ge=0, le=2 ** 63 - 1)
    train_fraction: Optional[float] = Field(default=None, gt=0, lt=1)

    @field_validator("domain")
    @classmethod
    def _ordered(cls, v):
        if v is not None and not v[0] < v[1]:
            raise ValueError("domain must be (lo, hi) with lo < hi")
        return v


class ModelSpec(_Strict):
    """``lr`` fixes the step for two-layer nets (otherwise ``lr_scale /
    lambda_max(K/n)``); for MLPs it is the starting step of the monotone-descent
    probe."""

    kind: Optional[Literal["two_layer", "mlp", "lfp"]] = None
    m: Optional[int] = Field(default=None, ge=2, le=1_000_000)
    sigma_a: Optional[float] = Field(default=None, gt=0, le=1e3)
    sigma_w: Optional[float] = Field(default=None, gt=0, le=1e3)
    sigma_c: Optional[float] = Field(default=None, gt=0, le=1e3)
    asi: bool = True
    widths: Optional[list[int]] = None
    lr: Optional[float] = Field(default=None, gt=0, le=1e6)
    lr_scale: Optional[float] = Field(default=None, gt=0, lt=2)
    max_steps: Optional[int] = Field(default=None, ge=0, le=10_000_000)
    loss_tol: Optional[float] = Field(default=None, ge=0)


class SolverSpec(_Strict):
    gamma_source: Literal["measured", "explicit"] = "measured"
    A: Optional[float] = Field(default=None, ge=0)
    B: Optional[float] = Field(default=None, ge=0)
    xi_max: Optional[float] = Field(default=None, gt=0)
    dxi: Optional[float] = Field(default=None, gt=0)

    @model_validator(mode="after")
    def _explicit_needs_ab(self):
        if self.gamma_source == "explicit":
            if self.A is None or self.B is None or self.A + self.B <= 0:
                raise ValueError("explicit gamma needs A >= 0, B >= 0 with A + B > 0")
        return self


class OutputSpec(_Strict):
    stages: Optional[list[int]] = None
    grid_points: Optional[int] = Field(default=None, ge=3, le=4001)
    trials: Optional[int] = Field(default=None, ge=10, le=1000)
    n_list: Optional[list[int]] = None


class ScenarioConfig(_Strict):
    version: Literal[1] = 1
    scenario: ScenarioId
    name: Optional[str] = Field(default=None, pattern=r"^[A-Za-z0-9_.-]+$")
    target: Optional[TargetSpec] = None
    sampling: SamplingSpec = SamplingSpec()
    model: ModelSpec = ModelSpec()
    solver: SolverSpec = SolverSpec()
    output: OutputSpec = OutputSpec()
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _custom_needs_target(self):
        if self.scenario == "custom" and self.target is None:
            raise ValueError("custom scenario needs a target")
        return self

    @property
    def label(self) -> str:
        return self.name or self.scenario


class BatchConfig(_Strict):
    version: Literal[1] = 1
    scenarios: list[ScenarioConfig] = Field(min_length=1)


DEFAULTS: dict[str, dict] = {
    "fig1_two_tone": dict(
        target=dict(expr="two_tone"),
        sampling=dict(n=40, d=1, domain=(-3.14, 3.14), kind="grid"),
        model=dict(kind="two_layer", m=4096, sigma_a=10.0, sigma_w=10.0, sigma_c=1.0, lr_scale=1.0,
                   max_steps=4000, loss_tol=1e-4),
        output=dict(stages=[0, 300, 4000], grid_points=401),
    ),
    "fig3_splines": dict(
        target=dict(expr="sin_pi"),
        sampling=dict(n=6, d=1, domain=(-1.0, 1.0), kind="grid"),
        model=dict(kind="two_layer", m=4096, sigma_c=1.0, lr_scale=1.8, max_steps=400_000, loss_tol=1e-6),
        output=dict(grid_points=401),
    ),
    "fig4_xor": dict(
        target=dict(expr="xor"),
        sampling=dict(n=4, d=2, domain=(-1.0, 1.0), kind="corners"),
        model=dict(kind="two_layer", m=8192, sigma_a=1.0, sigma_w=1.0, sigma_c=1.0, lr_scale=1.0,
                   max_steps=100_000, loss_tol=1e-8),
        output=dict(grid_points=101),
    ),
    "parity": dict(
        target=dict(expr="parity"),
        sampling=dict(n=1024, d=10, domain=(-1.0, 1.0), kind="corners", train_fraction=0.8),
        model=dict(kind="mlp", widths=[10, 500, 500, 1], lr=0.1, max_steps=20_000),
        output=dict(grid_points=41),
    ),
    "scaling_law": dict(
        target=dict(expr="sin_cos"),
        sampling=dict(d=1, kind="normal", domain=(-8.0, 8.0)),
        model=dict(kind="lfp"),
        solver=dict(gamma_source="explicit", A=1.0, B=10.0),
        output=dict(grid_points=8001, trials=20, n_list=[8, 16, 32, 64, 128]),
    ),
    "custom": dict(
        sampling=dict(n=20, d=1, domain=(-1.0, 1.0), kind="uniform"),
        model=dict(kind="lfp", m=4096, sigma_a=1.0, sigma_w=1.0, sigma_c=1.0, lr_scale=1.0,
                   max_steps=20_000, loss_tol=1e-6),
        output=dict(grid_points=201),
    ),
}

PAPER_SCALE_M = {"fig3_splines": 40_000, "fig4_xor": 160_000}


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        elif v is not None:
            out[k] = v
    return out


def resolve(cfg: ScenarioConfig, *, seed: int | None = None, paper_scale: bool = False) -> ScenarioConfig:
    """Fill unset fields with scenario defaults and apply CLI overrides."""
    raw = cfg.model_dump(exclude_unset=True)
    merged = _merge(DEFAULTS[cfg.scenario], raw)
    if seed is not None:
        merged.setdefault("sampling", {})["seed"] = seed
    if paper_scale and cfg.scenario in PAPER_SCALE_M:
        merged.setdefault("model", {})["m"] = PAPER_SCALE_M[cfg.scenario]
    try:
        out = ScenarioConfig.model_validate(merged)
    except ValidationError as exc:
        raise ConfigError(str(exc)) from exc
    return out


def config_hash(cfg: ScenarioConfig) -> str:
    blob = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def load_configs(path) -> list[ScenarioConfig]:
    """Parse a single scenario or a ``{"scenarios": [...]}`` batch file.

    Dataset paths in the target are resolved relative to the config file.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    try:
        if isinstance(raw, dict) and "scenarios" in raw:
            items = BatchConfig.model_validate(raw).scenarios
        else:
            items = [ScenarioConfig.model_validate(raw)]
    except ValidationError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    out = []
    for cfg in items:
        if cfg.target is not None and cfg.target.path is not None:
            data = Path(cfg.target.path)
            if not data.is_absolute():
                data = (path.parent / data).resolve()
            if not data.exists():
                raise ConfigError(f"dataset file not found: {data}")
            cfg = cfg.model_copy(update={"target": cfg.target.model_copy(update={"path": str(data)})})
        out.append(cfg)
    labels = [c.label for c in out]
    if len(set(labels)) != len(labels):
        raise ConfigError("scenario names in a batch must be unique (set 'name')")
    return out
