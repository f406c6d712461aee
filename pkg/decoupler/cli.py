"""Command-line front end.

Subcommands:

    decoupler decouple INPUT --rank R --degree D [--method joint] ...
    decoupler expand MODEL
    decoupler reproduce {waring,r3,r4}

Exit codes: 0 success, 1 input error (nothing is written), 2 solver
non-convergence or failed reproduction checks. Logs go to standard error;
standard output carries only the report JSON or the ``--pretty`` summary.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from collections.abc import Sequence
from pathlib import Path
from typing import Any, NoReturn

from decoupler.artifacts import ArtifactManager, dumps_json, write_json
from decoupler.cases import BENCHMARKS
from decoupler.config import DecouplerSettings, Method
from decoupler.decouple import build_dataset, decouple, sample_points
from decoupler.polyfunc import DecoupledModel, VectorPolynomial, expand_decoupled
from decoupler.validator import BenchmarkValidator

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SOLVER = 2

_LOG_FORMAT = "%(asctime)s [%(levelname)8s] %(message)s"
_VARIABLE = re.compile(r"x(\d+)")


class UsageError(ValueError):
    """Invalid command line."""


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> NoReturn:
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="decoupler", description="Decouple multivariate polynomials.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--output", type=Path, help="Write the JSON result here instead of stdout")
    common.add_argument("--pretty", action="store_true", help="Print a markdown summary")
    common.add_argument("--artifacts-dir", type=Path, help="Save tensors, models and summary")
    common.add_argument("--seed", type=int, help="Root seed (default: DECOUPLER_SEED or 42)")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")

    run = sub.add_parser("decouple", parents=[common], help="Decouple a coupled function")
    run.add_argument("input", type=Path, help="Coupled function as JSON or one polynomial per line")
    run.add_argument("--rank", type=int, required=True, help="Number of branches r")
    run.add_argument("--degree", type=int, required=True, help="Degree d of every branch")
    run.add_argument(
        "--method", choices=[m.value for m in Method], default=Method.JOINT.value
    )
    run.add_argument("--samples", type=int, help="Training sample points N")
    run.add_argument("--lo", type=float, nargs="+", help="Lower sampling bound(s)")
    run.add_argument("--hi", type=float, nargs="+", help="Upper sampling bound(s)")
    run.add_argument("--alpha1", type=float, help="Jacobian term weight")
    run.add_argument("--alpha2", type=float, help="Hessian term weight")
    run.add_argument("--restarts", type=int, help="Random restarts")
    run.add_argument("--max-iters", type=int, help="Iterations per restart")
    run.add_argument("--tol", type=float, help="Solver stopping threshold")
    run.add_argument("--truth", type=Path, help="Ground-truth model JSON for factor_match")
    run.add_argument("--model-output", type=Path, help="Write the recovered model JSON here")
    run.add_argument("--num-vars", type=int, help="Number of inputs m for text input")

    expand = sub.add_parser("expand", parents=[common], help="Expand a decoupled model")
    expand.add_argument("model", type=Path, help="DecoupledModel JSON")
    expand.add_argument("--text", action="store_true", help="Print polynomials as text")

    reproduce = sub.add_parser("reproduce", parents=[common], help="Reproduce a benchmark")
    reproduce.add_argument("example", choices=sorted(BENCHMARKS), help="Benchmark name")
    return parser


def _configure_logging(args: argparse.Namespace, settings: DecouplerSettings | None) -> None:
    level = settings.log_level if settings is not None else "INFO"
    if getattr(args, "verbose", False):
        level = "DEBUG"
    elif getattr(args, "quiet", False):
        level = "WARNING"
    logging.basicConfig(stream=sys.stderr, level=level, format=_LOG_FORMAT, force=True)


def _read_json(path: Path) -> Any:
    return json.loads(path.read_text(encoding="utf-8"))


def read_function(path: Path, num_vars: int | None = None) -> VectorPolynomial:
    """Load a coupled function from JSON, or from text with one output per line."""
    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if path.suffix == ".json" or stripped.startswith("{"):
        return VectorPolynomial.from_json(json.loads(text))
    if num_vars is None:
        indices = [int(i) for i in _VARIABLE.findall(text)]
        num_vars = max(indices, default=1)
    return VectorPolynomial.from_text(text.splitlines(), num_vars)


def _bound(values: list[float] | None) -> float | tuple[float, ...] | None:
    if values is None:
        return None
    return values[0] if len(values) == 1 else tuple(values)


def _emit(args: argparse.Namespace, data: dict[str, Any], artifacts: ArtifactManager) -> None:
    """Write the JSON result and print either it or its summary."""
    summary = artifacts.generate_report(data) if args.pretty or artifacts.enabled else ""
    if args.output is not None:
        write_json(args.output, data)
    if args.pretty:
        sys.stdout.write(summary)
    elif args.output is None:
        sys.stdout.write(dumps_json(data))


def cmd_decouple(args: argparse.Namespace, settings: DecouplerSettings) -> int:
    f = read_function(args.input, args.num_vars)
    truth = DecoupledModel.from_json(_read_json(args.truth)) if args.truth else None
    cfg = settings.decouple_config(
        rank=args.rank,
        degree=args.degree,
        method=args.method,
        seed=args.seed,
        num_points=args.samples,
        lo=_bound(args.lo),
        hi=_bound(args.hi),
        alpha1=args.alpha1,
        alpha2=args.alpha2,
        restarts=args.restarts,
        max_iters=args.max_iters,
        tol=args.tol,
    )
    logger.info(
        "Decoupling %d output(s) of %d variable(s): method=%s rank=%d degree=%d",
        f.n,
        f.num_vars,
        cfg.method.value,
        cfg.rank,
        cfg.degree,
    )

    ds = build_dataset(f, sample_points(cfg.sampling, f.num_vars))
    report = decouple(ds, cfg, truth)

    artifacts = ArtifactManager(args.artifacts_dir)
    artifacts.save_tensor("J", ds.J)
    artifacts.save_tensor("H", ds.H)
    artifacts.save_json("model", report.model.to_json())
    data = report.to_json()
    artifacts.save_json("report", data)
    if args.model_output is not None:
        write_json(args.model_output, report.model.to_json())
    _emit(args, data, artifacts)

    if not report.converged:
        logger.error("Solver did not converge; report written with converged=false")
        return EXIT_SOLVER
    return EXIT_OK


def cmd_expand(args: argparse.Namespace, settings: DecouplerSettings) -> int:
    model = DecoupledModel.from_json(_read_json(args.model))
    f = expand_decoupled(model)
    if args.text:
        text = f.to_text() + "\n"
        if args.output is not None:
            args.output.parent.mkdir(parents=True, exist_ok=True)
            args.output.write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
        return EXIT_OK
    data = f.to_json()
    if args.output is not None:
        write_json(args.output, data)
    else:
        sys.stdout.write(dumps_json(data))
    return EXIT_OK


def cmd_reproduce(args: argparse.Namespace, settings: DecouplerSettings) -> int:
    validator = BenchmarkValidator(settings, args.artifacts_dir)
    result = validator.run(args.example, seed=args.seed)
    for check in result.checks:
        mark = "PASS" if check.passed else "FAIL"
        print(f"{mark} {check.name}: {check.message}", file=sys.stderr)
    _emit(args, result.to_json(), validator.artifacts)
    return EXIT_OK if result.passed else EXIT_SOLVER


_COMMANDS = {
    "decouple": cmd_decouple,
    "expand": cmd_expand,
    "reproduce": cmd_reproduce,
}


def main(argv: Sequence[str] | None = None) -> int:
    """Entry point; returns the process exit code."""
    parser = build_parser()
    settings: DecouplerSettings | None = None
    try:
        args = parser.parse_args(argv)
        settings = DecouplerSettings()
    except SystemExit as e:
        # --help
        return int(e.code or 0)
    except ValueError as e:
        _configure_logging(argparse.Namespace(), None)
        logger.error("%s", e)
        return EXIT_INPUT

    _configure_logging(args, settings)
    try:
        return _COMMANDS[args.command](args, settings)
    except (ValueError, KeyError, OSError) as e:
        logger.error("Input error: %s", e)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
