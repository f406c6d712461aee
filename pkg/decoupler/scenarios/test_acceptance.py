"""Benchmark reproductions.

Each benchmark is sampled with the default root seed, decoupled with its
designated methods, and checked against its acceptance criteria:

- waring: the Hessian retrieves V; the Jacobian fits exactly with another V
- r3: the Jacobian fits with wrong factors; Hessian and joint retrieve W and V
- r4: zero residuals and linear second derivatives without unique factors
"""

from __future__ import annotations

import logging
from collections.abc import Generator
from pathlib import Path

import pytest

from decoupler.cli import EXIT_OK, main
from decoupler.config import DecouplerSettings
from decoupler.validator import BenchmarkValidator, ValidationResult

pytestmark = pytest.mark.acceptance


def _assert_passed(result: ValidationResult) -> None:
    detail = "; ".join(f"{c.name}: {c.message}" for c in result.failures)
    assert result.passed, f"{result.benchmark} failed: {detail}"


def test_waring_reproduction(settings: DecouplerSettings, artifacts_dir: Path) -> None:
    result = BenchmarkValidator(settings, artifacts_dir).run("waring")
    _assert_passed(result)
    assert set(result.reports) == {"hessian", "jacobian"}
    assert result.reports["jacobian"].non_unique
    assert (artifacts_dir / "reproduce.json").exists()
    assert (artifacts_dir / "summary.md").read_text(encoding="utf-8").startswith(
        "# Reproduction: waring (PASS)"
    )


def test_r3_reproduction(settings: DecouplerSettings) -> None:
    result = BenchmarkValidator(settings).run("r3")
    _assert_passed(result)
    jacobian = result.reports["jacobian"]
    assert jacobian.tensor_residuals["jacobian"] <= 1e-9
    assert min(jacobian.factor_match_W, jacobian.factor_match_V) < 0.99
    for method in ("hessian", "joint"):
        report = result.reports[method]
        assert report.factor_match_W >= 0.999
        assert report.factor_match_V >= 0.999
        assert report.validation_rel_error <= 1e-8


def test_r4_reproduction(settings: DecouplerSettings) -> None:
    result = BenchmarkValidator(settings).run("r4")
    _assert_passed(result)
    report = result.reports["joint"]
    assert len(report.g_fit_r2) == 4
    assert all(r2 >= 1.0 - 1e-8 for r2 in report.g_fit_r2)
    assert report.validation_rel_error <= 1e-6


@pytest.fixture
def restore_logging() -> Generator[None, None, None]:
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.mark.usefixtures("restore_logging")
def test_reproduce_is_byte_identical(tmp_path: Path) -> None:
    first, second = tmp_path / "first.json", tmp_path / "second.json"
    assert main(["reproduce", "waring", "--seed", "42", "--output", str(first)]) == EXIT_OK
    assert main(["reproduce", "waring", "--seed", "42", "--output", str(second)]) == EXIT_OK
    assert first.read_bytes() == second.read_bytes()
