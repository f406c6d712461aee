"""Acceptance assertions for decoupling reports.

Provides assertion functions to verify reproduction criteria:
- Tensor residuals at numerical zero
- True factors retrieved (or provably not retrieved)
- Recovered model reproduces f on fresh points
- Branch second derivatives linear in their own projection
"""

from __future__ import annotations

from collections.abc import Sequence

from decoupler.decouple import DecoupleReport


def assert_residual_below(report: DecoupleReport, term: str, max_residual: float) -> None:
    """Assert the relative residual of one tensor term is small enough.

    Args:
        report: Decoupling report.
        term: ``"jacobian"`` or ``"hessian"``.
        max_residual: Largest acceptable relative Frobenius residual.

    Raises:
        AssertionError: If the term is missing or its residual is too large.
    """
    if term not in report.tensor_residuals:
        raise AssertionError(
            f"No {term} residual in report (terms: {sorted(report.tensor_residuals)})"
        )
    residual = report.tensor_residuals[term]
    if not residual <= max_residual:
        raise AssertionError(
            f"{term} residual {residual:.3e} exceeds {max_residual:.1e}"
        )


def assert_factors_match(report: DecoupleReport, threshold: float, factors: str = "WV") -> None:
    """Assert the recovered factors equal the truth up to scaling and permutation.

    Raises:
        AssertionError: If a score is missing or below ``threshold``.
    """
    for name in factors:
        score = getattr(report, f"factor_match_{name}")
        if score is None:
            raise AssertionError(f"factor_match_{name} not computed (no ground truth)")
        if score < threshold:
            raise AssertionError(
                f"factor_match_{name} = {score:.6f} below threshold {threshold:.3f}"
            )


def assert_factors_differ(report: DecoupleReport, threshold: float) -> None:
    """Assert at least one of W, V is *not* the true factor.

    Raises:
        AssertionError: If both scores reach ``threshold``.
    """
    scores = [report.factor_match_W, report.factor_match_V]
    if any(s is None for s in scores):
        raise AssertionError("factor_match not computed (no ground truth)")
    if min(scores) >= threshold:
        raise AssertionError(
            f"Factors unexpectedly retrieved: W {scores[0]:.6f}, V {scores[1]:.6f} "
            f">= {threshold:.3f}"
        )


def assert_validation_below(report: DecoupleReport, max_error: float) -> None:
    """Assert the recovered model reproduces f on the validation points.

    Raises:
        AssertionError: If validation did not run or the error is too large.
    """
    error = report.validation_rel_error
    if error is None:
        raise AssertionError("Validation error not computed (no source function)")
    if not error <= max_error:
        raise AssertionError(f"Validation error {error:.3e} exceeds {max_error:.1e}")


def assert_g_fit_r2(report: DecoupleReport, min_r2: float) -> None:
    """Assert every branch fit reaches ``min_r2``.

    Raises:
        AssertionError: Naming the failing branches.
    """
    failing = [(i + 1, r2) for i, r2 in enumerate(report.g_fit_r2) if not r2 >= min_r2]
    if failing:
        detail = ", ".join(f"g{i}: {r2:.12f}" for i, r2 in failing)
        raise AssertionError(f"{len(failing)} branch fit(s) below r^2 {min_r2}: {detail}")


def assert_non_unique(report: DecoupleReport) -> None:
    """Assert the report carries the non-uniqueness flag.

    Raises:
        AssertionError: If the flag is not set.
    """
    if not report.non_unique:
        raise AssertionError(f"{report.method.value} report not flagged non-unique")


def assert_ambiguity_observed(
    reports: Sequence[DecoupleReport], max_residual: float, threshold: float
) -> None:
    """Assert some run fits exactly yet recovers a different V.

    Raises:
        AssertionError: If no run has a residual within ``max_residual`` and
            ``factor_match_V`` below ``threshold``.
    """
    if not reports:
        raise AssertionError("No runs to inspect")
    witnesses = [
        r
        for r in reports
        if r.tensor_residuals.get("jacobian", float("inf")) <= max_residual
        and r.factor_match_V is not None
        and r.factor_match_V < threshold
    ]
    if not witnesses:
        best = min(r.tensor_residuals.get("jacobian", float("inf")) for r in reports)
        raise AssertionError(
            f"No exact fit with a different V in {len(reports)} runs "
            f"(best residual {best:.3e})"
        )
