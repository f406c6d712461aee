"""Diagnostics collection for tensor solver runs.

Tracks per-restart solver statistics:
- Iterations and final cost of every restart
- Convergence flags and ridge regularizations
- Wall-clock durations (logged, never exported)

The exported summary contains only values that are reproducible for a
fixed seed, so reports built from it are byte-identical across runs.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RestartRecord:
    """Outcome of one seeded restart."""

    restart_index: int
    seed: int
    iterations: int
    final_cost: float
    converged: bool
    duration_s: float = 0.0


def percentile_index(p: float, count: int) -> int:
    """Nearest-rank percentile index."""
    return min(max(0, math.ceil(p * count) - 1), count - 1)


@dataclass
class SolverMetrics:
    """Collect and summarize the restarts of one solver call."""

    solver: str
    records: list[RestartRecord] = field(default_factory=list)
    ridge_steps: int = 0
    best_index: int | None = None

    def record_restart(
        self,
        restart_index: int,
        seed: int,
        iterations: int,
        final_cost: float,
        converged: bool,
        duration_s: float = 0.0,
    ) -> RestartRecord:
        """Record one finished restart.

        Args:
            restart_index: 0-based restart number.
            seed: Seed of that restart's generator.
            iterations: Iterations (ALS sweeps or quasi-Newton steps) used.
            final_cost: Cost at the returned point.
            converged: Whether a stopping criterion fired before the budget ran out.
            duration_s: Wall-clock seconds, for logging only.

        Returns:
            The stored record.
        """
        record = RestartRecord(
            restart_index=restart_index,
            seed=seed,
            iterations=iterations,
            final_cost=final_cost,
            converged=converged,
            duration_s=duration_s,
        )
        self.records.append(record)
        logger.debug(
            "%s restart %d: cost=%.3e iterations=%d converged=%s (%.3fs)",
            self.solver,
            restart_index,
            final_cost,
            iterations,
            converged,
            duration_s,
        )
        return record

    def export(self) -> dict[str, Any]:
        """Deterministic summary of all recorded restarts."""
        return {
            "solver": self.solver,
            "restarts": len(self.records),
            "best_restart": self.best_index,
            "converged_restarts": sum(r.converged for r in self.records),
            "ridge_steps": self.ridge_steps,
            "cost": self._cost_stats(),
            "iterations": self._iteration_stats(),
        }

    def log_timing(self) -> None:
        """Log wall-clock statistics (kept out of ``export``)."""
        stats = self._latency_stats()
        if stats:
            logger.info(
                "%s: %d restarts in %.3fs (max %.3fs)",
                self.solver,
                len(self.records),
                stats["total_s"],
                stats["max_s"],
            )

    def _cost_stats(self) -> dict[str, float]:
        if not self.records:
            return {}
        costs = sorted(r.final_cost for r in self.records)
        return {
            "min": costs[0],
            "median": costs[percentile_index(0.50, len(costs))],
            "max": costs[-1],
        }

    def _iteration_stats(self) -> dict[str, int]:
        if not self.records:
            return {}
        counts = sorted(r.iterations for r in self.records)
        return {
            "total": sum(counts),
            "p50": counts[percentile_index(0.50, len(counts))],
            "p95": counts[percentile_index(0.95, len(counts))],
            "max": counts[-1],
        }

    def _latency_stats(self) -> dict[str, float]:
        if not self.records:
            return {}
        durations = [r.duration_s for r in self.records]
        return {"total_s": sum(durations), "max_s": max(durations)}
