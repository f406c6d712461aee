"""Benchmark ground truths for reproduction runs."""

from decoupler.cases.benchmarks import BENCHMARKS, R3, R4, WARING, Benchmark, get_benchmark

__all__ = ["BENCHMARKS", "Benchmark", "R3", "R4", "WARING", "get_benchmark"]
