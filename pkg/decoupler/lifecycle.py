"""Pytest fixtures for decoupling scenarios.

Provides shared setup for the scenario suite:
- Isolated settings (environment overrides removed)
- Benchmark ground truths and their sampled datasets
- Artifact directories
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Generator

import numpy as np
import pytest

from decoupler.cases import R3, R4, WARING, Benchmark
from decoupler.config import DecouplerSettings
from decoupler.decouple import DerivativeDataset, build_dataset, sample_points
from decoupler.polyfunc import DecoupledModel, VectorPolynomial, parse_polynomial

WARING_TEXT = "-37*x1^3 - 213*x1^2*x2 - 399*x1*x2^2 + 5*x1 - 239*x2^3 + 9*x2 - 2"


@pytest.fixture(autouse=True)
def isolate_environment(monkeypatch: pytest.MonkeyPatch) -> Generator[None, None, None]:
    """Keep DECOUPLER_* variables of the host out of every scenario."""
    for key in list(os.environ):
        if key.startswith("DECOUPLER_"):
            monkeypatch.delenv(key)
    yield


@pytest.fixture
def settings() -> DecouplerSettings:
    """Default run-wide settings."""
    return DecouplerSettings()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def artifacts_dir(tmp_path: Path) -> Path:
    """Artifact directory inside pytest's tmp_path (kept for inspection)."""
    path = tmp_path / "artifacts"
    path.mkdir(parents=True, exist_ok=True)
    return path


def benchmark_dataset(benchmark: Benchmark, settings: DecouplerSettings) -> DerivativeDataset:
    cfg = settings.decouple_config(benchmark.rank, benchmark.degree, benchmark.methods[0])
    f = benchmark.function()
    return build_dataset(f, sample_points(cfg.sampling, f.num_vars))


@pytest.fixture(scope="session")
def waring_dataset() -> DerivativeDataset:
    return benchmark_dataset(WARING, DecouplerSettings())


@pytest.fixture(scope="session")
def r3_dataset() -> DerivativeDataset:
    return benchmark_dataset(R3, DecouplerSettings())


@pytest.fixture(scope="session")
def r4_dataset() -> DerivativeDataset:
    return benchmark_dataset(R4, DecouplerSettings())


@pytest.fixture
def waring_function() -> VectorPolynomial:
    """Coupled form of the Waring benchmark, parsed from text."""
    return VectorPolynomial((parse_polynomial(WARING_TEXT, 2),))


def random_model(
    rng: np.random.Generator, n: int, m: int, r: int, degree: int = 3
) -> DecoupledModel:
    """Entries i.i.d. standard normal, every branch of the given degree."""
    return DecoupledModel(
        W=rng.standard_normal((n, r)),
        V=rng.standard_normal((m, r)),
        g=tuple(tuple(rng.standard_normal(degree + 1)) for _ in range(r)),
    )


__all__ = [
    "R3",
    "R4",
    "WARING",
    "WARING_TEXT",
    "artifacts_dir",
    "benchmark_dataset",
    "isolate_environment",
    "r3_dataset",
    "r4_dataset",
    "random_model",
    "rng",
    "settings",
    "waring_dataset",
    "waring_function",
]
