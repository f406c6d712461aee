"""Pytest configuration for decoupling scenarios.

Imports fixtures from decoupler.lifecycle for use in all scenario tests.
"""

from decoupler.lifecycle import (
    artifacts_dir,
    isolate_environment,
    r3_dataset,
    r4_dataset,
    rng,
    settings,
    waring_dataset,
    waring_function,
)

__all__ = [
    "artifacts_dir",
    "isolate_environment",
    "r3_dataset",
    "r4_dataset",
    "rng",
    "settings",
    "waring_dataset",
    "waring_function",
]
