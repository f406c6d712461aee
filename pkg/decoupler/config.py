"""Decoupler configuration using Pydantic settings.

Run-wide defaults (seed, solver budget, sampling box, acceptance
thresholds) come from ``DecouplerSettings`` and can be overridden through
``DECOUPLER_*`` environment variables. The per-run models (``CpdConfig``,
``SamplingConfig``, ``DecoupleConfig``) validate their own invariants so
nothing downstream has to re-check them.
"""

from __future__ import annotations

from enum import Enum
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

SAMPLING_SEED_OFFSET = 0
SOLVER_SEED_OFFSET = 1000
VALIDATION_SEED_OFFSET = 2000


class Method(str, Enum):
    """Which derivative information drives the tensor decomposition."""

    JACOBIAN = "jacobian"
    HESSIAN = "hessian"
    JOINT = "joint"


class CpdConfig(BaseModel):
    """Solver settings shared by ``cpd_als`` and ``joint_cpd``.

    ``alpha1``/``alpha2`` weight the Jacobian and Hessian terms of the joint
    cost. ``None`` means "normalize by the squared norm of that tensor".
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    rank: int = Field(ge=1, description="Number of rank-one terms R")
    max_iters: int = Field(default=2000, ge=1, description="Iteration budget per restart")
    tol: float = Field(default=1e-12, gt=0.0, description="Stopping threshold")
    restarts: int = Field(default=10, ge=1, description="Random initializations")
    seed: int = Field(default=42, ge=0, lt=2**64, description="Base seed; restart i uses seed + i")
    alpha1: float | None = Field(default=None, ge=0.0, description="Jacobian term weight")
    alpha2: float | None = Field(default=None, ge=0.0, description="Hessian term weight")

    @model_validator(mode="after")
    def _check_weights(self) -> CpdConfig:
        if self.alpha1 == 0.0 and self.alpha2 == 0.0:
            raise ValueError("alpha1 and alpha2 cannot both be zero")
        return self


class SamplingConfig(BaseModel):
    """Uniform sampling box for the evaluation points x^(k)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    num_points: int = Field(default=200, ge=1, description="Number of sample points N")
    lo: float | tuple[float, ...] = Field(default=-10.0, description="Lower bound(s)")
    hi: float | tuple[float, ...] = Field(default=10.0, description="Upper bound(s)")
    seed: int = Field(default=42, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check_bounds(self) -> SamplingConfig:
        lo = self.lo if isinstance(self.lo, tuple) else (self.lo,)
        hi = self.hi if isinstance(self.hi, tuple) else (self.hi,)
        if len(lo) > 1 and len(hi) > 1 and len(lo) != len(hi):
            raise ValueError(f"lo has {len(lo)} bounds but hi has {len(hi)}")
        width = max(len(lo), len(hi))
        lo = lo * width if len(lo) == 1 else lo
        hi = hi * width if len(hi) == 1 else hi
        for index, (a, b) in enumerate(zip(lo, hi)):
            if not a < b:
                raise ValueError(f"lo must be below hi in dimension {index + 1}: {a} >= {b}")
        return self


class DecoupleConfig(BaseModel):
    """Everything one decoupling run needs."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    rank: int = Field(ge=1, description="Number of branches r")
    degree: int = Field(ge=1, description="Degree d of every g_i")
    method: Method = Method.JOINT
    cpd: CpdConfig
    sampling: SamplingConfig = SamplingConfig()
    validation: SamplingConfig = SamplingConfig(num_points=500, seed=42 + VALIDATION_SEED_OFFSET)
    match_threshold: float = Field(default=0.999, gt=0.0, le=1.0)
    zero_residual: float = Field(default=1e-12, gt=0.0)

    @model_validator(mode="after")
    def _check_rank(self) -> DecoupleConfig:
        if self.cpd.rank != self.rank:
            raise ValueError(f"cpd.rank ({self.cpd.rank}) differs from rank ({self.rank})")
        return self

    def seeds(self) -> dict[str, int]:
        """Sub-seeds of this run, as written into reports."""
        return {
            "sampling": self.sampling.seed,
            "solver": self.cpd.seed,
            "validation": self.validation.seed,
        }


class DecouplerSettings(BaseSettings):
    """Run-wide defaults.

    All settings can be overridden via environment variables with the
    DECOUPLER_ prefix (e.g., DECOUPLER_SEED=7).
    """

    model_config = SettingsConfigDict(
        env_prefix="DECOUPLER_",
        env_file=".env",
        env_file_encoding="utf-8",
        extra="forbid",
    )

    seed: int = Field(default=42, ge=0, lt=2**63, description="Root seed of every run")

    # Solver budget
    restarts: int = Field(default=10, ge=1, le=1000, description="Random restarts per solve")
    max_iters: int = Field(default=2000, ge=1, description="Iterations per restart")
    tol: float = Field(default=1e-12, gt=0.0, description="Solver stopping threshold")

    # Sampling
    samples: int = Field(default=200, ge=1, description="Training sample points N")
    lo: float = Field(default=-10.0, description="Lower sampling bound")
    hi: float = Field(default=10.0, description="Upper sampling bound")
    validation_points: int = Field(default=500, ge=1, description="Fresh validation points")

    # Acceptance thresholds
    match_threshold: float = Field(
        default=0.999,
        gt=0.0,
        le=1.0,
        description="factor_match score counted as 'true factors retrieved'",
    )
    zero_residual: float = Field(
        default=1e-12,
        gt=0.0,
        description="Relative residual counted as numerical zero",
    )

    log_level: str = Field(default="INFO", description="Root log level of the CLI")

    @field_validator("log_level")
    @classmethod
    def _upper_level(cls, value: str) -> str:
        return value.upper()

    def cpd_config(self, rank: int, seed: int | None = None, **overrides: Any) -> CpdConfig:
        """Solver config from these defaults, solver sub-seed applied."""
        base = self.seed if seed is None else seed
        values: dict[str, Any] = {
            "rank": rank,
            "max_iters": self.max_iters,
            "tol": self.tol,
            "restarts": self.restarts,
            "seed": base + SOLVER_SEED_OFFSET,
        }
        values.update({k: v for k, v in overrides.items() if v is not None})
        return CpdConfig(**values)

    def decouple_config(
        self,
        rank: int,
        degree: int,
        method: Method | str = Method.JOINT,
        seed: int | None = None,
        **overrides: Any,
    ) -> DecoupleConfig:
        """Assemble a full run config; ``overrides`` go to the solver config.

        Sampling, solver and validation seeds are derived from one root seed
        with fixed offsets.
        """
        base = self.seed if seed is None else seed
        sampling_keys = {"num_points", "lo", "hi"}
        sampling_overrides = {k: overrides.pop(k) for k in list(overrides) if k in sampling_keys}
        sampling = SamplingConfig(
            num_points=(
                self.samples
                if sampling_overrides.get("num_points") is None
                else sampling_overrides["num_points"]
            ),
            lo=self.lo if sampling_overrides.get("lo") is None else sampling_overrides["lo"],
            hi=self.hi if sampling_overrides.get("hi") is None else sampling_overrides["hi"],
            seed=base + SAMPLING_SEED_OFFSET,
        )
        validation = SamplingConfig(
            num_points=self.validation_points,
            lo=sampling.lo,
            hi=sampling.hi,
            seed=base + VALIDATION_SEED_OFFSET,
        )
        return DecoupleConfig(
            rank=rank,
            degree=degree,
            method=Method(method),
            cpd=self.cpd_config(rank, seed=base, **overrides),
            sampling=sampling,
            validation=validation,
            match_threshold=self.match_threshold,
            zero_residual=self.zero_residual,
        )
