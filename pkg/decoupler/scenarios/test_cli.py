"""Command-line surface: exit codes, outputs and artifacts."""

from __future__ import annotations

import json
import logging
from collections.abc import Generator
from pathlib import Path

import numpy as np
import pytest

from decoupler.artifacts import dumps_json
from decoupler.cases import R3, R4
from decoupler.cli import EXIT_INPUT, EXIT_OK, EXIT_SOLVER, main, read_function
from decoupler.config import DecouplerSettings
from decoupler.decouple import build_dataset, sample_points
from decoupler.lifecycle import WARING_TEXT
from decoupler.polyfunc import VectorPolynomial, expand_decoupled
from decoupler.tensor import DenseTensor

pytestmark = pytest.mark.cli


@pytest.fixture(autouse=True)
def restore_logging() -> Generator[None, None, None]:
    """main() reconfigures the root logger; undo it after each test."""
    root = logging.getLogger()
    handlers, level = list(root.handlers), root.level
    yield
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def waring_file(tmp_path: Path) -> Path:
    path = tmp_path / "waring.txt"
    path.write_text(WARING_TEXT + "\n", encoding="utf-8")
    return path


@pytest.fixture
def r3_file(tmp_path: Path) -> Path:
    path = tmp_path / "r3.json"
    path.write_text(dumps_json(expand_decoupled(R3.truth).to_json()), encoding="utf-8")
    return path


@pytest.mark.parametrize("value", [0.1, 1.0 / 3.0, -2.5e-300, 123456789.12345678, 5e-324])
def test_json_floats_round_trip_exactly(value: float) -> None:
    text = dumps_json({"x": value}, pretty=False)
    assert text == '{"x": ' + repr(value) + "}\n"
    assert json.loads(text)["x"] == value
    digits = repr(value).lower().split("e")[0].replace("-", "").replace(".", "").strip("0")
    assert len(digits) <= 17


def test_read_function_infers_variables(waring_file: Path, r3_file: Path) -> None:
    f = read_function(waring_file)
    assert (f.n, f.num_vars) == (1, 2)
    assert read_function(waring_file, num_vars=3).num_vars == 3
    assert read_function(r3_file) == expand_decoupled(R3.truth)


def test_decouple_writes_report(
    waring_file: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    output = tmp_path / "out" / "report.json"
    model_output = tmp_path / "model.json"
    code = main(
        [
            "decouple",
            str(waring_file),
            "--rank",
            "2",
            "--degree",
            "3",
            "--method",
            "hessian",
            "--restarts",
            "3",
            "--output",
            str(output),
            "--model-output",
            str(model_output),
        ]
    )
    assert code == EXIT_OK
    assert capsys.readouterr().out == ""
    report = json.loads(output.read_text(encoding="utf-8"))
    assert report["method"] == "hessian"
    assert report["converged"] is True
    assert report["diagnostics"]["seeds"]["solver"] == 1042
    assert json.loads(model_output.read_text(encoding="utf-8")) == report["model"]


def test_decouple_prints_json_to_stdout(
    waring_file: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    args = ["decouple", str(waring_file), "--rank", "2", "--degree", "3", "--method", "jacobian"]
    code = main(args + ["--samples", "50", "-q"])
    assert code == EXIT_OK
    report = json.loads(capsys.readouterr().out)
    assert report["non_unique"] is True


def test_decouple_pretty_and_artifacts(
    waring_file: Path, artifacts_dir: Path, capsys: pytest.CaptureFixture[str]
) -> None:
    code = main(
        [
            "decouple",
            str(waring_file),
            "--rank",
            "2",
            "--degree",
            "3",
            "--method",
            "jacobian",
            "--pretty",
            "--artifacts-dir",
            str(artifacts_dir),
        ]
    )
    assert code == EXIT_OK
    assert capsys.readouterr().out.startswith("# Decoupling Report")
    for name in ("tensors/J.json", "tensors/H.json", "model.json", "report.json", "summary.md"):
        assert (artifacts_dir / name).exists(), name
    saved = json.loads((artifacts_dir / "tensors" / "J.json").read_text(encoding="utf-8"))
    J = DenseTensor.from_json(saved)
    assert J.dims == (1, 2, 200)
    sampling = DecouplerSettings().decouple_config(2, 3, "jacobian").sampling
    ds = build_dataset(read_function(waring_file), sample_points(sampling, 2))
    assert np.array_equal(J.array, ds.J.array)


def test_non_convergence_exits_two(r3_file: Path, tmp_path: Path) -> None:
    output = tmp_path / "report.json"
    code = main(
        [
            "decouple",
            str(r3_file),
            "--rank",
            "3",
            "--degree",
            "3",
            "--method",
            "jacobian",
            "--samples",
            "30",
            "--restarts",
            "1",
            "--max-iters",
            "1",
            "--output",
            str(output),
        ]
    )
    assert code == EXIT_SOLVER
    assert json.loads(output.read_text(encoding="utf-8"))["converged"] is False


@pytest.mark.parametrize(
    "content, name",
    [
        ("3*x1 +\n", "bad.txt"),
        ("{not json", "bad.json"),
        ('{"m": 2, "outputs": []}', "empty.json"),
    ],
)
def test_malformed_input_exits_one_without_output(content: str, name: str, tmp_path: Path) -> None:
    source = tmp_path / name
    source.write_text(content, encoding="utf-8")
    output = tmp_path / "report.json"
    code = main(
        ["decouple", str(source), "--rank", "2", "--degree", "3", "--output", str(output)]
    )
    assert code == EXIT_INPUT
    assert not output.exists()


def test_usage_errors_exit_one(waring_file: Path, tmp_path: Path) -> None:
    args = ["decouple", str(waring_file), "--rank", "2", "--degree", "3"]
    assert main(args + ["--bogus"]) == EXIT_INPUT
    assert main(["decouple", str(waring_file), "--degree", "3"]) == EXIT_INPUT
    assert main(["reproduce", "nonexistent"]) == EXIT_INPUT
    missing = str(tmp_path / "missing.txt")
    assert main(["decouple", missing, "--rank", "1", "--degree", "2"]) == EXIT_INPUT
    assert main([]) == EXIT_INPUT


def test_invalid_config_exits_one(waring_file: Path) -> None:
    args = ["decouple", str(waring_file), "--rank", "2", "--degree", "3"]
    assert main(args + ["--alpha1", "0", "--alpha2", "0"]) == EXIT_INPUT
    assert main(args + ["--lo", "1", "--hi", "0"]) == EXIT_INPUT
    assert main(["decouple", str(waring_file), "--rank", "0", "--degree", "3"]) == EXIT_INPUT


def test_zero_samples_exit_one_without_output(waring_file: Path, tmp_path: Path) -> None:
    output = tmp_path / "report.json"
    args = ["decouple", str(waring_file), "--rank", "2", "--degree", "3", "--method", "jacobian"]
    assert main(args + ["--samples", "0", "--output", str(output)]) == EXIT_INPUT
    assert not output.exists()


def test_help_exits_zero(capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["--help"]) == EXIT_OK
    assert "decouple" in capsys.readouterr().out


def test_expand_json_and_text(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    model_path = tmp_path / "model.json"
    model_path.write_text(dumps_json(R3.truth.to_json()), encoding="utf-8")
    expected = expand_decoupled(R3.truth)

    assert main(["expand", str(model_path)]) == EXIT_OK
    assert json.loads(capsys.readouterr().out) == json.loads(dumps_json(expected.to_json()))

    assert main(["expand", str(model_path), "--text"]) == EXIT_OK
    assert capsys.readouterr().out == expected.to_text() + "\n"

    output = tmp_path / "expanded.txt"
    assert main(["expand", str(model_path), "--text", "--output", str(output)]) == EXIT_OK
    assert output.read_text(encoding="utf-8") == expected.to_text() + "\n"


def test_expand_r4_matches_model_at_random_points(
    tmp_path: Path, rng: np.random.Generator, capsys: pytest.CaptureFixture[str]
) -> None:
    model_path = tmp_path / "r4.json"
    model_path.write_text(dumps_json(R4.truth.to_json()), encoding="utf-8")
    assert main(["expand", str(model_path)]) == EXIT_OK
    f = VectorPolynomial.from_json(json.loads(capsys.readouterr().out))
    X = rng.uniform(-10.0, 10.0, size=(100, 2))
    np.testing.assert_allclose(f.evaluate_many(X).T, R4.truth.evaluate(X), rtol=1e-9, atol=1e-6)


def test_expand_rejects_inconsistent_model(tmp_path: Path) -> None:
    model_path = tmp_path / "model.json"
    model_path.write_text(
        json.dumps({"W": [[1.0, 2.0]], "V": [[1.0], [2.0]], "g": [{"coeffs": [1.0]}]}),
        encoding="utf-8",
    )
    assert main(["expand", str(model_path)]) == EXIT_INPUT
