"""Artifact management for decoupling runs.

Saves run outputs for inspection:
- Reports (report JSON plus a markdown summary)
- Models (DecoupledModel JSON)
- Tensors (sampled J and H as {"dims", "data"} dumps)

All JSON goes through ``dumps_json`` so identical runs produce
byte-identical files.
"""

from __future__ import annotations

import json
import logging
import math
from collections.abc import Mapping
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from decoupler.tensor import DenseTensor

logger = logging.getLogger(__name__)


def to_jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become ``None``."""
    if isinstance(value, Mapping):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def dumps_json(data: Any, pretty: bool = True) -> str:
    """Serialize with shortest round-trip float repr and stable key order."""
    return json.dumps(to_jsonable(data), indent=2 if pretty else None, allow_nan=False) + "\n"


def write_json(path: Path, data: Any) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps_json(data), encoding="utf-8")


def _fmt(value: Any, fmt: str = ".3e") -> str:
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return format(value, fmt)
    return str(value)


class ArtifactManager:
    """Manage run artifacts.

    Saves reports, models, tensors and summaries to an artifacts directory.
    """

    def __init__(self, artifacts_dir: Path | None) -> None:
        """Initialize artifact manager.

        Args:
            artifacts_dir: Directory to save artifacts. If None, artifacts are disabled.
        """
        self.artifacts_dir = artifacts_dir
        self._enabled = artifacts_dir is not None

        if self._enabled and not artifacts_dir.exists():
            artifacts_dir.mkdir(parents=True, exist_ok=True)

    @property
    def enabled(self) -> bool:
        return self._enabled

    def save_json(self, name: str, data: Any) -> Path | None:
        """Save a JSON document as ``<name>.json``."""
        if not self._enabled:
            return None
        path = self.artifacts_dir / f"{name}.json"
        write_json(path, data)
        logger.debug("Saved %s", path)
        return path

    def save_tensor(self, name: str, tensor: DenseTensor) -> Path | None:
        """Save a tensor dump under ``tensors/``."""
        if not self._enabled:
            return None
        return self.save_json(f"tensors/{name}", tensor.to_json())

    def generate_report(self, report: dict[str, Any]) -> str:
        """Generate a human-readable summary of a decouple or reproduce report.

        Args:
            report: JSON form of a ``DecoupleReport`` or a reproduction result.

        Returns:
            Markdown-formatted summary (also written to ``summary.md`` when enabled).
        """
        if not report:
            return "No report available"

        if "checks" in report:
            lines = _reproduction_lines(report)
        else:
            lines = ["# Decoupling Report", ""] + _decouple_lines(report)

        summary = "\n".join(lines) + "\n"
        if self._enabled:
            (self.artifacts_dir / "summary.md").write_text(summary, encoding="utf-8")
        return summary


def _decouple_lines(report: Mapping[str, Any]) -> list[str]:
    lines = [
        f"- **Method:** {report.get('method')}",
        f"- **Converged:** {report.get('converged')}",
        f"- **Non-unique:** {report.get('non_unique')}",
        f"- **Validation error:** {_fmt(report.get('validation_rel_error'))}",
        f"- **factor_match W / V:** {_fmt(report.get('factor_match_W'), '.6f')}"
        f" / {_fmt(report.get('factor_match_V'), '.6f')}",
        "",
    ]
    if residuals := report.get("tensor_residuals"):
        lines.extend(["## Tensor residuals", ""])
        lines.extend(f"- **{name}:** {_fmt(value)}" for name, value in residuals.items())
        lines.append("")
    if r2 := report.get("g_fit_r2"):
        lines.extend(["## Branch fit r^2", ""])
        lines.extend(f"- g{i + 1}: {_fmt(value, '.12f')}" for i, value in enumerate(r2))
        lines.append("")
    if model := report.get("model"):
        lines.extend(["## Branches", ""])
        for i, branch in enumerate(model.get("g", [])):
            coeffs = ", ".join(_fmt(c, ".6g") for c in branch["coeffs"])
            lines.append(f"- g{i + 1} coefficients (ascending): [{coeffs}]")
        lines.append("")
    return lines


def _reproduction_lines(result: Mapping[str, Any]) -> list[str]:
    status = "PASS" if result.get("passed") else "FAIL"
    lines = [
        f"# Reproduction: {result.get('benchmark')} ({status})",
        "",
        "## Checks",
        "",
    ]
    for check in result["checks"]:
        mark = "PASS" if check["passed"] else "FAIL"
        lines.append(f"- {mark} {check['name']}: {check['message']}")
    lines.append("")
    for method, report in result.get("runs", {}).items():
        lines.extend([f"## Run: {method}", ""])
        lines.extend(_decouple_lines(report))
    return lines
