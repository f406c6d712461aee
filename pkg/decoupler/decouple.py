"""End-to-end decoupling pipeline.

sample points -> evaluate f, J, H -> tensor decomposition -> canonical
factors -> univariate branches g_i -> validation on fresh points.

The three methods differ only in the decomposition step:

- ``jacobian``: CPD of the Jacobian tensor ``J = [[W, V, G1]]`` by ALS.
- ``hessian``: the Hessian tensor ``H = [[W, V, V, G2]]`` alone (joint
  solver with a zero Jacobian weight).
- ``joint``: both tensors with shared ``W`` and ``V``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import numpy.polynomial.polynomial as npoly

from decoupler.config import CpdConfig, DecoupleConfig, Method, SamplingConfig
from decoupler.polyfunc import (
    DecoupledModel,
    DimensionError,
    UnivariatePolynomial,
    VectorPolynomial,
)
from decoupler.tensor import (
    HESSIAN_LAYOUT,
    JACOBIAN_LAYOUT,
    TAG_G1,
    TAG_G2,
    TAG_V,
    TAG_W,
    CpdResult,
    DenseTensor,
    FactorSet,
    cpd_als,
    factor_match,
    joint_cpd,
    normalize_factors,
    relative_residual,
)

logger = logging.getLogger(__name__)

_SCALAR_AMBIGUITY = (
    "n=1: the Jacobian CPD is a matrix factorization; any invertible M can be "
    "inserted as V M M^-1 G1^T, so V and g are not unique"
)


# ---------------------------------------------------------------------------
# Sampling and data
# ---------------------------------------------------------------------------


def _bounds(value: float | tuple[float, ...], m: int, name: str) -> np.ndarray:
    values = np.atleast_1d(np.asarray(value, dtype=float))
    if values.size == 1:
        return np.full(m, float(values[0]))
    if values.size != m:
        raise DimensionError(f"{name} has {values.size} bounds for {m} variables")
    return values


def sample_points(cfg: SamplingConfig, m: int) -> np.ndarray:
    """``N x m`` matrix of i.i.d. uniform points in ``[lo, hi)``."""
    if m < 1:
        raise DimensionError(f"Need at least one variable, got m={m}")
    lo, hi = _bounds(cfg.lo, m, "lo"), _bounds(cfg.hi, m, "hi")
    rng = np.random.default_rng(cfg.seed)
    return rng.uniform(lo, hi, size=(cfg.num_points, m))


@dataclass(frozen=True, eq=False)
class DerivativeDataset:
    """Function values and derivative tensors at the sample points.

    Attributes:
        X: ``N x m`` sample points.
        F: ``n x N`` function values.
        J: ``n x m x N`` Jacobian tensor.
        H: ``n x m x m x N`` Hessian tensor, symmetric in modes 2 and 3.
        source: The coupled function the data came from, if known.
    """

    X: np.ndarray
    F: np.ndarray
    J: DenseTensor
    H: DenseTensor
    source: VectorPolynomial | None = None

    @property
    def n(self) -> int:
        return int(self.F.shape[0])

    @property
    def m(self) -> int:
        return int(self.X.shape[1])

    @property
    def num_points(self) -> int:
        return int(self.X.shape[0])


def build_dataset(f: VectorPolynomial, X: np.ndarray) -> DerivativeDataset:
    """Evaluate ``f``, its Jacobian and its Hessian at every row of ``X``."""
    X = np.array(X, dtype=float, ndmin=2)
    if X.shape[1] != f.num_vars:
        raise DimensionError(f"Points have {X.shape[1]} coordinates, f takes {f.num_vars}")
    n, m, N = f.n, f.num_vars, X.shape[0]
    F = f.evaluate_many(X)
    J = np.empty((n, m, N))
    H = np.empty((n, m, m, N))
    for i in range(n):
        for j in range(m):
            J[i, j] = f.jacobian_polys[i][j].evaluate_many(X)
            for k in range(j, m):
                H[i, j, k] = f.hessian_polys[i][j][k].evaluate_many(X)
                H[i, k, j] = H[i, j, k]
    X.setflags(write=False)
    F.setflags(write=False)
    logger.info("Built dataset: n=%d m=%d N=%d", n, m, N)
    return DerivativeDataset(X, F, DenseTensor.from_array(J), DenseTensor.from_array(H), f)


# ---------------------------------------------------------------------------
# Branch reconstruction
# ---------------------------------------------------------------------------


def _weight(target: np.ndarray) -> float:
    norm = float(np.linalg.norm(target))
    return 1.0 / norm if norm > 0 else 1.0


def _check_rank(matrix: np.ndarray, what: str) -> None:
    if matrix.size and np.linalg.matrix_rank(matrix) < matrix.shape[1]:
        raise ValueError(
            f"Rank-deficient Vandermonde system for {what}: the projected samples are "
            f"(nearly) collinear; collect more distinct samples"
        )


def reconstruct_g(
    factors: FactorSet, ds: DerivativeDataset, degree: int
) -> list[UnivariatePolynomial]:
    """Fit the univariate branches ``g_i`` of degree ``degree``.

    For every branch the samples ``z_k = v_i^T x^(k)`` are formed and the
    non-constant coefficients are fitted by weighted linear least squares to
    the ``G1`` column (as ``g_i'``) and the ``G2`` column (as ``g_i''``),
    whichever are present. The remaining terms (constants, plus the linear
    terms when ``G1`` is absent) are then solved jointly over all branches
    from ``F ~ W g(V^T x)``. When several branches share the same output
    direction only the sum of their constants is identifiable; the
    minimum-norm split is returned.

    Args:
        factors: Normalized factors with ``W`` and ``V`` and at least one of ``G1``, ``G2``.
        ds: Dataset the factors were computed from.
        degree: Degree ``d`` of every branch.

    Returns:
        One polynomial per column of ``V``, coefficients ascending.

    Raises:
        ValueError: If ``N < d + 1`` or a Vandermonde system is rank deficient.
    """
    if degree < 1:
        raise ValueError(f"Degree must be >= 1, got {degree}")
    if ds.num_points < degree + 1:
        raise ValueError(
            f"Need at least d+1={degree + 1} samples to fit degree {degree}, got {ds.num_points}"
        )
    matrices = factors.by_tag()
    W, V = matrices[TAG_W], matrices[TAG_V]
    G1, G2 = matrices.get(TAG_G1), matrices.get(TAG_G2)
    if G1 is None and G2 is None:
        raise ValueError("reconstruct_g needs G1 or G2 factors")
    Z = ds.X @ V
    rank = V.shape[1]
    scales = np.array([float(np.max(np.abs(Z[:, i]))) or 1.0 for i in range(rank)])
    T = Z / scales
    powers = np.arange(degree + 1)

    # a[i, k] are coefficients of h_i(t) = g_i(scale_i * t)
    a = np.zeros((rank, degree + 1))
    first = 1 if G1 is not None else 2
    for i in range(rank):
        t = T[:, i]
        blocks, targets = [], []
        if G1 is not None:
            basis = npoly.polyvander(t, degree - 1) * powers[1:]
            target = scales[i] * G1[:, i]
            blocks.append(_weight(target) * basis)
            targets.append(_weight(target) * target)
        if G2 is not None and degree >= 2:
            basis = npoly.polyvander(t, degree - 2) * (powers[2:] * (powers[2:] - 1))
            if G1 is not None:
                basis = np.hstack([np.zeros((len(t), 1)), basis])
            target = scales[i] ** 2 * G2[:, i]
            blocks.append(_weight(target) * basis)
            targets.append(_weight(target) * target)
        if not blocks or first > degree:
            continue
        A = np.vstack(blocks)
        _check_rank(A, f"branch {i}")
        a[i, first:] = np.linalg.lstsq(A, np.concatenate(targets), rcond=None)[0]

    # Remaining low-order terms from the function values.
    residual = ds.F - W @ np.column_stack(
        [npoly.polyval(T[:, i], a[i]) for i in range(rank)]
    ).T
    columns = [np.kron(W[:, i], np.ones(ds.num_points)) for i in range(rank)]
    if first == 2:
        columns += [np.kron(W[:, i], T[:, i]) for i in range(rank)]
    system = np.column_stack(columns)
    low, _, system_rank, _ = np.linalg.lstsq(system, residual.ravel(), rcond=None)
    if system_rank < system.shape[1]:
        logger.info(
            "Low-order terms not unique (rank %d of %d); using the minimum-norm split",
            system_rank,
            system.shape[1],
        )
    a[:, 0] = low[:rank]
    if first == 2:
        a[:, 1] = low[rank:]
    return [UnivariatePolynomial(tuple(a[i] / scales[i] ** powers)) for i in range(rank)]


def _fit_r2(z: np.ndarray, y: np.ndarray, degree: int) -> float:
    """Coefficient of determination of a degree-``degree`` polynomial fit."""
    if degree < 0:
        fitted = np.zeros_like(y)
    else:
        scale = float(np.max(np.abs(z))) or 1.0
        basis = npoly.polyvander(z / scale, degree)
        fitted = basis @ np.linalg.lstsq(basis, y, rcond=None)[0]
    ss_res = float(np.sum((y - fitted) ** 2))
    ss_tot = float(np.sum((y - np.mean(y)) ** 2))
    if ss_tot == 0.0:
        tiny = 1e-24 * max(1.0, float(np.sum(y**2)))
        return 1.0 if ss_res <= tiny else float("-inf")
    return 1.0 - ss_res / ss_tot


def g_fit_r2(factors: FactorSet, ds: DerivativeDataset, degree: int) -> tuple[float, ...]:
    """Per-branch r^2 of the ``G2`` column regressed on its own ``z``.

    A degree-``d-2`` polynomial in ``z_k = v_i^T x^(k)`` is fitted to column
    ``i`` of ``G2``; without ``G2`` the ``G1`` column and degree ``d-1`` are
    used instead.
    """
    matrices = factors.by_tag()
    Z = ds.X @ matrices[TAG_V]
    if TAG_G2 in matrices:
        G, fit_degree = matrices[TAG_G2], degree - 2
    else:
        G, fit_degree = matrices[TAG_G1], degree - 1
    return tuple(_fit_r2(Z[:, i], G[:, i], fit_degree) for i in range(Z.shape[1]))


def validate_model(
    model: DecoupledModel, f: VectorPolynomial, test_cfg: SamplingConfig
) -> float:
    """``max_k ||f(x_k) - W g(V^T x_k)|| / (1 + ||f(x_k)||)`` over fresh points."""
    if model.m != f.num_vars or model.n != f.n:
        raise DimensionError(
            f"Model maps R^{model.m} -> R^{model.n} but f maps R^{f.num_vars} -> R^{f.n}"
        )
    X = sample_points(test_cfg, f.num_vars)
    reference = f.evaluate_many(X)
    estimate = model.evaluate(X).T
    errors = np.linalg.norm(reference - estimate, axis=0) / (
        1.0 + np.linalg.norm(reference, axis=0)
    )
    return float(np.max(errors))


# ---------------------------------------------------------------------------
# Reports and pipelines
# ---------------------------------------------------------------------------


@dataclass
class DecoupleReport:
    """Outcome of one decoupling run."""

    model: DecoupledModel
    method: Method
    tensor_residuals: dict[str, float]
    g_fit_r2: tuple[float, ...]
    validation_rel_error: float | None
    converged: bool
    non_unique: bool = False
    factor_match_W: float | None = None
    factor_match_V: float | None = None
    diagnostics: dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> dict[str, Any]:
        return {
            "method": self.method.value,
            "converged": self.converged,
            "non_unique": self.non_unique,
            "tensor_residuals": dict(self.tensor_residuals),
            "g_fit_r2": list(self.g_fit_r2),
            "validation_rel_error": self.validation_rel_error,
            "factor_match_W": self.factor_match_W,
            "factor_match_V": self.factor_match_V,
            "model": self.model.to_json(),
            "diagnostics": self.diagnostics,
        }


def _residuals(ds: DerivativeDataset, factors: FactorSet) -> dict[str, float]:
    tags = set(factors.tags)
    residuals = {}
    if TAG_G1 in tags:
        residuals["jacobian"] = relative_residual(ds.J, factors.project(JACOBIAN_LAYOUT))
    if TAG_G2 in tags:
        residuals["hessian"] = relative_residual(ds.H, factors.project(HESSIAN_LAYOUT))
    return residuals


def _degenerate_model(ds: DerivativeDataset, rank: int) -> DecoupledModel:
    """Constant (possibly zero) function: one constant branch carries F."""
    W = np.zeros((ds.n, rank))
    W[:, 0] = ds.F[:, 0] if ds.num_points else 0.0
    g = (UnivariatePolynomial((1.0,)),) + (UnivariatePolynomial((0.0,)),) * (rank - 1)
    return DecoupledModel(W=W, V=np.zeros((ds.m, rank)), g=g)


def _score(
    truth: DecoupledModel | None, model: DecoupledModel
) -> tuple[float | None, float | None]:
    if truth is None:
        return None, None
    if truth.r != model.r or truth.n != model.n or truth.m != model.m:
        logger.warning(
            "Ground truth has shape (n=%d, m=%d, r=%d), model (n=%d, m=%d, r=%d); not scored",
            truth.n,
            truth.m,
            truth.r,
            model.n,
            model.m,
            model.r,
        )
        return None, None
    return factor_match(truth.W, model.W)[0], factor_match(truth.V, model.V)[0]


def _finish(
    ds: DerivativeDataset,
    cfg: DecoupleConfig,
    method: Method,
    result: CpdResult,
    truth: DecoupledModel | None,
    non_unique: bool,
) -> DecoupleReport:
    degenerate = not np.any(ds.J.data) and not np.any(ds.H.data)
    if degenerate:
        factors = result.factors
        model = _degenerate_model(ds, cfg.rank)
        r2: tuple[float, ...] = (1.0,) * cfg.rank
    else:
        factors = normalize_factors(result.factors)
        matrices = factors.by_tag()
        g = reconstruct_g(factors, ds, cfg.degree)
        model = DecoupledModel(W=matrices[TAG_W], V=matrices[TAG_V], g=tuple(g))
        r2 = g_fit_r2(factors, ds, cfg.degree)

    validation = validate_model(model, ds.source, cfg.validation) if ds.source else None
    match_w, match_v = _score(truth, model)
    metrics = result.metrics.export() if result.metrics is not None else {}
    report = DecoupleReport(
        model=model,
        method=method,
        tensor_residuals=_residuals(ds, factors),
        g_fit_r2=r2,
        validation_rel_error=validation,
        converged=result.converged,
        non_unique=non_unique,
        factor_match_W=match_w,
        factor_match_V=match_v,
        diagnostics={
            "seeds": cfg.seeds(),
            "final_cost": result.final_cost,
            "restart_index": result.restart_index,
            "iterations": result.iterations,
            "trace_length": len(result.cost_trace),
            "solver": metrics,
        },
    )
    logger.info(
        "%s: residuals=%s validation=%s match_V=%s converged=%s",
        method.value,
        {k: f"{v:.2e}" for k, v in report.tensor_residuals.items()},
        "n/a" if validation is None else f"{validation:.2e}",
        "n/a" if match_v is None else f"{match_v:.4f}",
        result.converged,
    )
    return report


def decouple_first_order(
    ds: DerivativeDataset, cfg: DecoupleConfig, truth: DecoupledModel | None = None
) -> DecoupleReport:
    """CPD of the Jacobian tensor by ALS."""
    non_unique = ds.n == 1
    if non_unique:
        logger.warning(_SCALAR_AMBIGUITY)
    result = cpd_als(ds.J, cfg.cpd, tags=JACOBIAN_LAYOUT)
    return _finish(ds, cfg, Method.JACOBIAN, result, truth, non_unique)


def decouple_second_order(
    ds: DerivativeDataset, cfg: DecoupleConfig, truth: DecoupledModel | None = None
) -> DecoupleReport:
    """Decomposition of the Hessian tensor with ``W`` and ``V`` shared.

    For n=1 the first mode is a single row, so ``W`` reduces to column
    scalings that normalization moves into ``G2``.
    """
    solver = CpdConfig(**{**cfg.cpd.model_dump(), "alpha1": 0.0})
    result = joint_cpd(ds.J, ds.H, solver)
    return _finish(ds, cfg, Method.HESSIAN, result, truth, False)


def decouple_joint(
    ds: DerivativeDataset, cfg: DecoupleConfig, truth: DecoupledModel | None = None
) -> DecoupleReport:
    """Coupled decomposition of both tensors."""
    non_unique = ds.n == 1 and cfg.cpd.alpha2 == 0.0
    if non_unique:
        logger.warning(_SCALAR_AMBIGUITY)
    result = joint_cpd(ds.J, ds.H, cfg.cpd)
    return _finish(ds, cfg, Method.JOINT, result, truth, non_unique)


_PIPELINES = {
    Method.JACOBIAN: decouple_first_order,
    Method.HESSIAN: decouple_second_order,
    Method.JOINT: decouple_joint,
}


def decouple(
    ds: DerivativeDataset, cfg: DecoupleConfig, truth: DecoupledModel | None = None
) -> DecoupleReport:
    """Run the pipeline selected by ``cfg.method``."""
    return _PIPELINES[cfg.method](ds, cfg, truth)


def decouple_function(
    f: VectorPolynomial, cfg: DecoupleConfig, truth: DecoupledModel | None = None
) -> DecoupleReport:
    """Sample ``f`` with ``cfg.sampling`` and decouple it."""
    ds = build_dataset(f, sample_points(cfg.sampling, f.num_vars))
    return decouple(ds, cfg, truth)
