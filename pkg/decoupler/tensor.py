"""Dense tensors and canonical polyadic decompositions.

Layout conventions used throughout:

- ``DenseTensor.data`` is row-major (first index slowest). Modes are
  1-based in the public API; ``unfold(T, k)`` puts mode k on the rows and
  the remaining modes on the columns, lowest remaining mode fastest.
- ``khatri_rao(A, B)`` is the column-wise Kronecker product with the rows of
  ``B`` varying fastest, so ``unfold(T, 1) == A1 @ khatri_rao(A3, A2).T``
  for ``T = [[A1, A2, A3]]``.
- A :class:`FactorSet` carries one tag per mode. Modes with equal tags share
  a single matrix; this is how the coupled Jacobian/Hessian decomposition
  ties ``W`` and ``V`` across both tensors.
"""

from __future__ import annotations

import itertools
import logging
import string
import time
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from functools import reduce
from typing import Any

import numpy as np
from scipy.optimize import least_squares, linear_sum_assignment, minimize

from decoupler.config import CpdConfig
from decoupler.metrics import SolverMetrics
from decoupler.polyfunc import DimensionError

logger = logging.getLogger(__name__)

TAG_W = "W"
TAG_V = "V"
TAG_G1 = "G1"
TAG_G2 = "G2"
JACOBIAN_LAYOUT = (TAG_W, TAG_V, TAG_G1)
HESSIAN_LAYOUT = (TAG_W, TAG_V, TAG_V, TAG_G2)
JOINT_LAYOUT = JACOBIAN_LAYOUT + HESSIAN_LAYOUT

_EPS = float(np.finfo(float).eps)
_RIDGE = 1e-12
_TIE_TOLERANCE = 1e-14
_REFINE_STEPS = 200
_EXHAUSTIVE_MATCH_LIMIT = 8
_NORM_SLACK = 16 * _EPS


# ---------------------------------------------------------------------------
# Containers
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """Real tensor of order ``len(dims)`` stored flat in row-major order."""

    dims: tuple[int, ...]
    data: np.ndarray

    def __post_init__(self) -> None:
        dims = tuple(int(d) for d in self.dims)
        if not dims or any(d < 1 for d in dims):
            raise DimensionError(f"Tensor dimensions must be positive, got {dims}")
        data = np.array(self.data, dtype=float).ravel()
        if data.size != int(np.prod(dims)):
            raise DimensionError(
                f"Tensor of dims {dims} needs {int(np.prod(dims))} entries, got {data.size}"
            )
        data.setflags(write=False)
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, array: np.ndarray) -> DenseTensor:
        array = np.asarray(array, dtype=float)
        return cls(array.shape, array.ravel())

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def array(self) -> np.ndarray:
        """Read-only ndarray view with shape ``dims``."""
        return self.data.reshape(self.dims)

    def norm(self) -> float:
        """Frobenius norm."""
        return float(np.linalg.norm(self.data))

    def to_json(self) -> dict[str, Any]:
        return {"dims": list(self.dims), "data": self.data.tolist()}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> DenseTensor:
        return cls(tuple(data["dims"]), np.asarray(data["data"], dtype=float))


@dataclass(frozen=True, eq=False)
class FactorSet:
    """Factor matrices of a CP model, one per mode, with sharing tags."""

    factors: tuple[np.ndarray, ...]
    tags: tuple[str, ...]

    def __post_init__(self) -> None:
        if len(self.factors) != len(self.tags):
            raise DimensionError(
                f"{len(self.factors)} factors but {len(self.tags)} tags"
            )
        if not self.factors:
            raise DimensionError("A factor set needs at least one factor")
        factors = []
        by_tag: dict[str, np.ndarray] = {}
        for tag, factor in zip(self.tags, self.factors):
            matrix = np.array(factor, dtype=float)
            if matrix.ndim != 2:
                raise DimensionError(f"Factor {tag} must be a matrix, got ndim={matrix.ndim}")
            if tag in by_tag:
                if by_tag[tag].shape != matrix.shape or not np.array_equal(by_tag[tag], matrix):
                    raise ValueError(f"Factors tagged {tag!r} must be identical")
                matrix = by_tag[tag]
            else:
                matrix.setflags(write=False)
                by_tag[tag] = matrix
            factors.append(matrix)
        ranks = {f.shape[1] for f in factors}
        if len(ranks) != 1:
            raise DimensionError(f"Factors disagree on the rank: {sorted(ranks)}")
        object.__setattr__(self, "factors", tuple(factors))
        object.__setattr__(self, "tags", tuple(self.tags))

    @classmethod
    def from_tagged(cls, matrices: Mapping[str, np.ndarray], tags: Sequence[str]) -> FactorSet:
        """Build a set whose mode k holds ``matrices[tags[k]]``."""
        missing = [t for t in tags if t not in matrices]
        if missing:
            raise KeyError(f"No factor for tags {missing}")
        return cls(tuple(matrices[t] for t in tags), tuple(tags))

    @property
    def rank(self) -> int:
        return int(self.factors[0].shape[1])

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(int(f.shape[0]) for f in self.factors)

    def factor(self, tag: str) -> np.ndarray:
        """Matrix of the first mode tagged ``tag``."""
        try:
            return self.factors[self.tags.index(tag)]
        except ValueError:
            raise KeyError(f"No factor tagged {tag!r} (tags: {self.tags})") from None

    def by_tag(self) -> dict[str, np.ndarray]:
        return {tag: self.factor(tag) for tag in dict.fromkeys(self.tags)}

    def project(self, tags: Sequence[str]) -> FactorSet:
        """Factor set of another layout built from the same shared matrices."""
        return FactorSet.from_tagged(self.by_tag(), tags)


@dataclass(frozen=True)
class CpdResult:
    """Best restart of a CP solver call."""

    factors: FactorSet
    final_cost: float
    cost_trace: tuple[float, ...]
    converged: bool
    restart_index: int
    iterations: int = 0
    metrics: SolverMetrics | None = field(default=None, compare=False)


# ---------------------------------------------------------------------------
# Multilinear algebra
# ---------------------------------------------------------------------------


def _check_mode(mode: int, order: int) -> None:
    if not 1 <= mode <= order:
        raise DimensionError(f"Mode {mode} out of range for a tensor of order {order}")


def _unfold_array(array: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(array, axis, 0).reshape(array.shape[axis], -1, order="F")


def unfold(t: DenseTensor, mode: int) -> np.ndarray:
    """Mode-``mode`` matricization, shape ``dims[mode-1] x prod(other dims)``."""
    _check_mode(mode, t.order)
    return _unfold_array(t.array, mode - 1)


def fold(matrix: np.ndarray, mode: int, dims: Sequence[int]) -> DenseTensor:
    """Inverse of :func:`unfold`."""
    dims = tuple(int(d) for d in dims)
    _check_mode(mode, len(dims))
    matrix = np.asarray(matrix, dtype=float)
    axis = mode - 1
    moved = (dims[axis],) + dims[:axis] + dims[axis + 1 :]
    expected = (dims[axis], int(np.prod(moved[1:])))
    if matrix.shape != expected:
        raise DimensionError(
            f"Unfolding of {dims} along mode {mode} is {expected}, got {matrix.shape}"
        )
    return DenseTensor.from_array(np.moveaxis(matrix.reshape(moved, order="F"), 0, axis))


def khatri_rao(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Column-wise Kronecker product; rows of ``B`` vary fastest."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[1]:
        raise DimensionError(
            f"khatri_rao needs matrices with equal columns, got {A.shape} and {B.shape}"
        )
    return (A[:, None, :] * B[None, :, :]).reshape(A.shape[0] * B.shape[0], A.shape[1])


def _full(factors: Sequence[np.ndarray]) -> np.ndarray:
    letters = string.ascii_lowercase[: len(factors)]
    subscripts = ",".join(f"{c}z" for c in letters) + "->" + letters
    return np.einsum(subscripts, *factors)


def reconstruct(
    factors: FactorSet | Sequence[np.ndarray], dims: Sequence[int] | None = None
) -> DenseTensor:
    """Sum of the rank-one terms ``a_r^(1) o ... o a_r^(K)``.

    Modes that share a tag are symmetrized pairwise so that, e.g., the
    Hessian model ``[[W, V, V, G2]]`` is exactly symmetric in modes 2 and 3.
    """
    if isinstance(factors, FactorSet):
        mats, tags = factors.factors, factors.tags
    else:
        mats = tuple(np.asarray(f, dtype=float) for f in factors)
        tags = tuple(str(k) for k in range(len(mats)))
        FactorSet(mats, tags)
    shape = tuple(int(f.shape[0]) for f in mats)
    if dims is not None and tuple(dims) != shape:
        raise DimensionError(f"Factors describe dims {shape}, expected {tuple(dims)}")
    array = _full(mats)
    for p, q in itertools.combinations(range(len(tags)), 2):
        if tags[p] == tags[q]:
            array = 0.5 * (array + np.swapaxes(array, p, q))
    return DenseTensor.from_array(array)


def relative_residual(t: DenseTensor, factors: FactorSet) -> float:
    """``||T - [[factors]]|| / ||T||`` (absolute norm when ``T`` is zero)."""
    diff = np.linalg.norm(t.array - reconstruct(factors, t.dims).array)
    base = t.norm()
    return float(diff / base) if base > 0 else float(diff)


# ---------------------------------------------------------------------------
# Alternating least squares
# ---------------------------------------------------------------------------


@dataclass
class _Run:
    factors: list[np.ndarray]
    trace: list[float]
    converged: bool
    ridge_steps: int = 0


def _solve_gram(gram: np.ndarray, rhs: np.ndarray) -> tuple[np.ndarray, bool]:
    """Solve ``X @ gram = rhs``; ridge-regularize a near-singular ``gram``."""
    scale = float(np.trace(gram))
    if not np.isfinite(scale) or scale <= 0.0:
        return np.zeros_like(rhs), True
    ridged = False
    if np.linalg.cond(gram) > 1.0 / _EPS:
        gram = gram + _RIDGE * scale * np.eye(gram.shape[0])
        ridged = True
    return np.linalg.solve(gram, rhs.T).T, ridged


def _als_run(
    array: np.ndarray, rank: int, rng: np.random.Generator, max_iters: int, tol: float
) -> _Run:
    order = array.ndim
    norm_sq = float(np.sum(array**2))
    unfoldings = [_unfold_array(array, k) for k in range(order)]
    factors = [rng.standard_normal((size, rank)) for size in array.shape]
    grams = [f.T @ f for f in factors]
    trace: list[float] = []
    ridge_steps = 0
    converged = False
    for _ in range(max_iters):
        for k in range(order):
            others = [factors[j] for j in reversed(range(order)) if j != k]
            kr = reduce(khatri_rao, others) if others else np.ones((1, rank))
            gram = reduce(np.multiply, [grams[j] for j in range(order) if j != k])
            factors[k], ridged = _solve_gram(gram, unfoldings[k] @ kr)
            ridge_steps += ridged
            grams[k] = factors[k].T @ factors[k]
        cost = float(np.sum((array - _full(factors)) ** 2)) / norm_sq
        trace.append(cost)
        if cost <= tol * tol:
            converged = True
            break
        if len(trace) > 1 and abs(trace[-2] - cost) <= tol * trace[-2]:
            converged = True
            break
    return _Run(factors, trace, converged, ridge_steps)


def _refine(array: np.ndarray, run: _Run, max_iters: int, tol: float) -> tuple[_Run, int]:
    """Levenberg-Marquardt on all factors at once, started from an ALS run.

    The refined run replaces the input only when its cost is lower; the
    returned count is the number of residual evaluations.
    """
    shapes = [f.shape for f in run.factors]
    bounds = np.cumsum([0] + [int(np.prod(s)) for s in shapes])
    scale = 1.0 / np.sqrt(float(np.sum(array**2)))

    def unpack(x: np.ndarray) -> list[np.ndarray]:
        return [x[a:b].reshape(s) for a, b, s in zip(bounds, bounds[1:], shapes)]

    def residuals(x: np.ndarray) -> np.ndarray:
        return scale * (array - _full(unpack(x))).ravel()

    x0 = np.concatenate([f.ravel() for f in run.factors])
    result = least_squares(
        residuals,
        x0,
        method="lm",
        jac="2-point",
        xtol=1e-15,
        ftol=1e-15,
        gtol=1e-15,
        max_nfev=min(max_iters, _REFINE_STEPS) * (x0.size + 1),
    )
    cost = float(np.sum(residuals(result.x) ** 2))
    if not cost < run.trace[-1]:
        return run, int(result.nfev)
    # status 0 means the evaluation budget ran out
    converged = cost <= tol * tol or result.status > 0
    refined = _Run(unpack(result.x), run.trace + [cost], converged, run.ridge_steps)
    return refined, int(result.nfev)


def _better(candidate: float, incumbent: float | None) -> bool:
    """Strictly lower cost wins; near-ties keep the earlier restart."""
    if incumbent is None:
        return True
    return candidate < incumbent - _TIE_TOLERANCE * abs(incumbent)


def _check_finite(t: DenseTensor, name: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise ValueError(f"{name} contains NaN or infinite entries")


def _zero_result(dims: Sequence[int], rank: int, tags: Sequence[str], solver: str) -> CpdResult:
    logger.info("%s: input tensor is zero, returning zero factors", solver)
    factors = FactorSet.from_tagged({t: np.zeros((d, rank)) for t, d in zip(tags, dims)}, tags)
    return CpdResult(factors, 0.0, (0.0,), True, 0, 0, SolverMetrics(solver=solver))


def cpd_als(t: DenseTensor, cfg: CpdConfig, tags: Sequence[str] | None = None) -> CpdResult:
    """Rank-``cfg.rank`` CP decomposition by alternating least squares.

    Each restart ``i`` draws standard normal factors from
    ``default_rng(cfg.seed + i)`` and sweeps every mode once per iteration.
    The cost ``||T - [[A]]||^2 / ||T||^2`` recorded after each sweep is
    non-increasing up to rounding. A restart stops when the cost falls below
    ``tol**2``, when its relative change drops below ``tol``, or when the
    sweep budget is spent. A best restart still above ``tol**2`` is then
    refined by Levenberg-Marquardt on all factors, and the refined cost is
    appended to its trace.

    Args:
        t: Tensor to decompose.
        cfg: Rank, budget, tolerance, restarts and base seed.
        tags: Optional mode tags for the returned factor set.

    Returns:
        The restart with the lowest final cost.

    Raises:
        ValueError: If the tensor holds NaN or infinite entries.
    """
    _check_finite(t, "Tensor")
    if t.order < 2:
        raise DimensionError(f"cpd_als needs a tensor of order >= 2, got {t.order}")
    tags = tuple(tags) if tags is not None else tuple(f"A{k + 1}" for k in range(t.order))
    if len(tags) != t.order:
        raise DimensionError(f"{len(tags)} tags for a tensor of order {t.order}")
    if t.norm() == 0.0:
        return _zero_result(t.dims, cfg.rank, tags, "cpd_als")

    metrics = SolverMetrics(solver="cpd_als")
    best: _Run | None = None
    best_index = 0
    for restart in range(cfg.restarts):
        seed = cfg.seed + restart
        started = time.perf_counter()
        run = _als_run(t.array, cfg.rank, np.random.default_rng(seed), cfg.max_iters, cfg.tol)
        metrics.ridge_steps += run.ridge_steps
        metrics.record_restart(
            restart,
            seed,
            len(run.trace),
            run.trace[-1],
            run.converged,
            time.perf_counter() - started,
        )
        if _better(run.trace[-1], best.trace[-1] if best else None):
            best, best_index = run, restart
    assert best is not None
    refine_evals = 0
    if best.trace[-1] > cfg.tol * cfg.tol:
        best, refine_evals = _refine(t.array, best, cfg.max_iters, cfg.tol)
        logger.debug(
            "cpd_als: refined restart %d to cost=%.3e in %d evaluations",
            best_index,
            best.trace[-1],
            refine_evals,
        )
    metrics.best_index = best_index
    metrics.log_timing()
    if metrics.ridge_steps:
        logger.warning(
            "cpd_als: %d ridge-regularized updates (rank deficiency)", metrics.ridge_steps
        )
    if not best.converged:
        logger.warning("cpd_als: best restart did not converge, cost=%.3e", best.trace[-1])
    return CpdResult(
        factors=FactorSet(tuple(best.factors), tags),
        final_cost=best.trace[-1],
        cost_trace=tuple(best.trace),
        converged=best.converged,
        restart_index=best_index,
        iterations=len(best.trace) + refine_evals,
        metrics=metrics,
    )


# ---------------------------------------------------------------------------
# Coupled Jacobian/Hessian decomposition
# ---------------------------------------------------------------------------


def _jacobian_error(J: np.ndarray, W: np.ndarray, V: np.ndarray, G1: np.ndarray) -> np.ndarray:
    return J - np.einsum("ar,br,kr->abk", W, V, G1)


def _hessian_error(H: np.ndarray, W: np.ndarray, V: np.ndarray, G2: np.ndarray) -> np.ndarray:
    return H - np.einsum("ar,br,cr,kr->abck", W, V, V, G2)


def _gradients(
    E1: np.ndarray | None,
    E2: np.ndarray | None,
    W: np.ndarray,
    V: np.ndarray,
    G1: np.ndarray | None,
    G2: np.ndarray | None,
    alpha1: float,
    alpha2: float,
) -> dict[str, np.ndarray]:
    grads = {TAG_W: np.zeros_like(W), TAG_V: np.zeros_like(V)}
    if E1 is not None and G1 is not None:
        c = -2.0 * alpha1
        grads[TAG_W] += c * np.einsum("abk,br,kr->ar", E1, V, G1)
        grads[TAG_V] += c * np.einsum("abk,ar,kr->br", E1, W, G1)
        grads[TAG_G1] = c * np.einsum("abk,ar,br->kr", E1, W, V)
    if E2 is not None and G2 is not None:
        c = -2.0 * alpha2
        grads[TAG_W] += c * np.einsum("abck,br,cr,kr->ar", E2, V, V, G2)
        grads[TAG_V] += c * np.einsum("abck,ar,cr,kr->br", E2, W, V, G2)
        grads[TAG_V] += c * np.einsum("abck,ar,br,kr->cr", E2, W, V, G2)
        grads[TAG_G2] = c * np.einsum("abck,ar,br,cr->kr", E2, W, V, V)
    return grads


def joint_cost_gradient(
    J: DenseTensor | None,
    H: DenseTensor | None,
    factors: FactorSet,
    alpha1: float,
    alpha2: float,
) -> tuple[float, dict[str, np.ndarray]]:
    """Weighted coupled cost and its gradient with respect to every tag.

    ``cost = alpha1 ||J - [[W,V,G1]]||^2 + alpha2 ||H - [[W,V,V,G2]]||^2``.
    The gradient for ``V`` sums the contributions of both Hessian modes.
    """
    W, V = factors.factor(TAG_W), factors.factor(TAG_V)
    cost = 0.0
    E1 = E2 = G1 = G2 = None
    if J is not None:
        G1 = factors.factor(TAG_G1)
        E1 = _jacobian_error(J.array, W, V, G1)
        cost += alpha1 * float(np.sum(E1**2))
    if H is not None:
        G2 = factors.factor(TAG_G2)
        E2 = _hessian_error(H.array, W, V, G2)
        cost += alpha2 * float(np.sum(E2**2))
    return cost, _gradients(E1, E2, W, V, G1, G2, alpha1, alpha2)


class _Projected:
    """Cost over ``(W, V)`` with ``G1``/``G2`` eliminated by least squares."""

    def __init__(
        self,
        J: np.ndarray | None,
        H: np.ndarray | None,
        alpha1: float,
        alpha2: float,
        shape: tuple[int, int, int],
    ) -> None:
        self.J, self.H = J, H
        self.alpha1, self.alpha2 = alpha1, alpha2
        self.n, self.m, self.rank = shape
        self.J3 = _unfold_array(J, 2) if J is not None else None
        self.H4 = _unfold_array(H, 3) if H is not None else None

    def unpack(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        split = self.n * self.rank
        return x[:split].reshape(self.n, self.rank), x[split:].reshape(self.m, self.rank)

    @staticmethod
    def pack(W: np.ndarray, V: np.ndarray) -> np.ndarray:
        return np.concatenate([W.ravel(), V.ravel()])

    def g_factors(
        self, W: np.ndarray, V: np.ndarray
    ) -> tuple[np.ndarray | None, np.ndarray | None]:
        G1 = G2 = None
        if self.J3 is not None:
            G1 = np.linalg.lstsq(khatri_rao(V, W), self.J3.T, rcond=None)[0].T
        if self.H4 is not None:
            G2 = np.linalg.lstsq(khatri_rao(V, khatri_rao(V, W)), self.H4.T, rcond=None)[0].T
        return G1, G2

    def _errors(self, x: np.ndarray):
        W, V = self.unpack(x)
        G1, G2 = self.g_factors(W, V)
        E1 = _jacobian_error(self.J, W, V, G1) if G1 is not None and self.alpha1 > 0 else None
        E2 = _hessian_error(self.H, W, V, G2) if G2 is not None and self.alpha2 > 0 else None
        return W, V, G1, G2, E1, E2

    def cost(self, x: np.ndarray) -> float:
        *_, E1, E2 = self._errors(x)
        total = 0.0
        if E1 is not None:
            total += self.alpha1 * float(np.sum(E1**2))
        if E2 is not None:
            total += self.alpha2 * float(np.sum(E2**2))
        return total

    def cost_and_gradient(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        # G1, G2 are stationary, so their gradient blocks vanish here.
        W, V, G1, G2, E1, E2 = self._errors(x)
        total = 0.0
        if E1 is not None:
            total += self.alpha1 * float(np.sum(E1**2))
        if E2 is not None:
            total += self.alpha2 * float(np.sum(E2**2))
        grads = _gradients(E1, E2, W, V, G1, G2, self.alpha1, self.alpha2)
        return total, self.pack(grads[TAG_W], grads[TAG_V])

    def residuals(self, x: np.ndarray) -> np.ndarray:
        *_, E1, E2 = self._errors(x)
        parts = [np.zeros(0)]
        if E1 is not None:
            parts.append(np.sqrt(self.alpha1) * E1.ravel())
        if E2 is not None:
            parts.append(np.sqrt(self.alpha2) * E2.ravel())
        return np.concatenate(parts)


def _unit_columns(matrix: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    norms = np.linalg.norm(matrix, axis=0)
    dead = ~(norms > 0) | ~np.isfinite(norms)
    if np.any(dead):
        matrix = matrix.copy()
        matrix[:, dead] = rng.standard_normal((matrix.shape[0], int(dead.sum())))
        norms = np.linalg.norm(matrix, axis=0)
    return matrix / norms


def _default_weight(t: DenseTensor | None, explicit: float | None) -> float:
    if t is None:
        return 0.0
    if explicit is not None:
        return float(explicit)
    norm_sq = t.norm() ** 2
    return 1.0 / norm_sq if norm_sq > 0 else 1.0


def _joint_shapes(J: DenseTensor | None, H: DenseTensor | None) -> tuple[int, int, int]:
    if J is None and H is None:
        raise ValueError("joint_cpd needs at least one of J and H")
    if J is not None and J.order != 3:
        raise DimensionError(f"J must be n x m x N, got dims {J.dims}")
    if H is not None:
        if H.order != 4 or H.dims[1] != H.dims[2]:
            raise DimensionError(f"H must be n x m x m x N, got dims {H.dims}")
        if J is not None and (H.dims[0], H.dims[1], H.dims[3]) != J.dims:
            raise DimensionError(f"J dims {J.dims} and H dims {H.dims} disagree")
        asym = float(np.max(np.abs(H.array - np.swapaxes(H.array, 1, 2))))
        if asym > 1e-12 * max(1.0, float(np.max(np.abs(H.data)))):
            raise ValueError(f"H is not symmetric in modes 2 and 3 (max deviation {asym:.3e})")
        return H.dims[0], H.dims[1], H.dims[3]
    assert J is not None
    return J.dims


def joint_cpd(J: DenseTensor | None, H: DenseTensor | None, cfg: CpdConfig) -> CpdResult:
    """Coupled decomposition ``J ~ [[W,V,G1]]``, ``H ~ [[W,V,V,G2]]``.

    Minimizes ``alpha1 ||J - [[W,V,G1]]||^2 + alpha2 ||H - [[W,V,V,G2]]||^2``
    with ``W`` and ``V`` shared. ``G1`` and ``G2`` enter linearly and are
    eliminated by least squares, leaving a smooth problem in ``(W, V)`` that
    is solved by L-BFGS-B with the analytic gradient and then polished by
    Levenberg-Marquardt. Each restart ``i`` starts from ALS on ``J`` seeded
    with ``cfg.seed + i`` (the same schedule as :func:`cpd_als`), or from
    random factors when ``J`` is absent or zero.

    Unset weights default to ``1/||J||^2`` and ``1/||H||^2``. ``alpha2 = 0``
    reduces to a first-order decomposition and ``alpha1 = 0`` to a
    second-order one; the eliminated ``G`` of a zero-weighted term is still
    returned.

    Args:
        J: Jacobian tensor, ``n x m x N``, or ``None``.
        H: Hessian tensor, ``n x m x m x N`` symmetric in modes 2 and 3, or ``None``.
        cfg: Solver configuration.

    Returns:
        Best restart, with factors laid out as ``JOINT_LAYOUT`` (or the
        single-tensor layout when one tensor is ``None``).

    Raises:
        DimensionError: On inconsistent tensor shapes.
        ValueError: On non-finite input, an asymmetric ``H`` or all-zero weights.
    """
    n, m, _ = _joint_shapes(J, H)
    for tensor, name in ((J, "J"), (H, "H")):
        if tensor is not None:
            _check_finite(tensor, name)
    layout = (JACOBIAN_LAYOUT if J is not None else ()) + (HESSIAN_LAYOUT if H is not None else ())
    dims = {TAG_W: n, TAG_V: m}
    if J is not None:
        dims[TAG_G1] = J.dims[2]
    if H is not None:
        dims[TAG_G2] = H.dims[3]

    if all(t is None or t.norm() == 0.0 for t in (J, H)):
        return _zero_result([dims[t] for t in layout], cfg.rank, layout, "joint_cpd")
    alpha1 = _default_weight(J, cfg.alpha1)
    alpha2 = _default_weight(H, cfg.alpha2)
    if alpha1 == 0.0 and alpha2 == 0.0:
        raise ValueError("alpha1 and alpha2 cannot both be zero")
    logger.debug(
        "joint_cpd: n=%d m=%d rank=%d alpha1=%.3e alpha2=%.3e", n, m, cfg.rank, alpha1, alpha2
    )

    problem = _Projected(
        J.array if J is not None else None,
        H.array if H is not None else None,
        alpha1,
        alpha2,
        (n, m, cfg.rank),
    )
    use_als = J is not None and J.norm() > 0.0
    metrics = SolverMetrics(solver="joint_cpd")
    best: tuple[float, np.ndarray, list[float], bool, int] | None = None
    best_index = 0
    for restart in range(cfg.restarts):
        seed = cfg.seed + restart
        started = time.perf_counter()
        rng = np.random.default_rng(seed)
        if use_als:
            assert J is not None
            init = _als_run(J.array, cfg.rank, rng, cfg.max_iters, cfg.tol)
            metrics.ridge_steps += init.ridge_steps
            W0, V0 = init.factors[0], init.factors[1]
        else:
            W0, V0 = rng.standard_normal((n, cfg.rank)), rng.standard_normal((m, cfg.rank))
        W0, V0 = _unit_columns(W0, rng), _unit_columns(V0, rng)
        x, trace, iterations = _optimize(problem, W0, V0, cfg)
        cost = trace[-1]
        converged = _joint_converged(problem, x, cost, cfg.tol)
        duration = time.perf_counter() - started
        metrics.record_restart(restart, seed, iterations, cost, converged, duration)
        if best is None or _better(cost, best[0]):
            best, best_index = (cost, x, trace, converged, iterations), restart
    assert best is not None
    cost, x, trace, converged, iterations = best
    metrics.best_index = best_index
    metrics.log_timing()

    W, V = problem.unpack(x)
    G1, G2 = problem.g_factors(W, V)
    matrices = {TAG_W: W, TAG_V: V}
    if G1 is not None:
        matrices[TAG_G1] = G1
    if G2 is not None:
        matrices[TAG_G2] = G2
    if not converged:
        logger.warning("joint_cpd: best restart did not converge, cost=%.3e", cost)
    return CpdResult(
        factors=FactorSet.from_tagged(matrices, layout),
        final_cost=cost,
        cost_trace=tuple(trace),
        converged=converged,
        restart_index=best_index,
        iterations=iterations,
        metrics=metrics,
    )


def _optimize(
    problem: _Projected, W0: np.ndarray, V0: np.ndarray, cfg: CpdConfig
) -> tuple[np.ndarray, list[float], int]:
    x0 = problem.pack(W0, V0)
    trace = [problem.cost(x0)]

    def record(xk: np.ndarray) -> None:
        trace.append(problem.cost(xk))

    result = minimize(
        problem.cost_and_gradient,
        x0,
        jac=True,
        method="L-BFGS-B",
        callback=record,
        options={
            "maxiter": cfg.max_iters,
            "maxfun": 20 * cfg.max_iters,
            "ftol": 0.0,
            "gtol": 0.0,
            "maxcor": 30,
        },
    )
    x = result.x if problem.cost(result.x) <= trace[0] else x0
    cost = problem.cost(x)
    iterations = int(result.nit)
    if cost > cfg.tol * cfg.tol:
        polished = least_squares(
            problem.residuals,
            x,
            method="lm",
            jac="2-point",
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
            max_nfev=50 * (x.size + 1),
        )
        polished_cost = problem.cost(polished.x)
        if polished_cost < cost:
            x, cost = polished.x, polished_cost
            iterations += int(polished.nfev)
    trace.append(cost)
    return x, trace, iterations


def _joint_converged(problem: _Projected, x: np.ndarray, cost: float, tol: float) -> bool:
    if cost <= tol * tol:
        return True
    _, gradient = problem.cost_and_gradient(x)
    return float(np.linalg.norm(gradient)) <= tol * (1.0 + cost)


# ---------------------------------------------------------------------------
# Canonical form and comparison
# ---------------------------------------------------------------------------


def _column_scales(matrix: np.ndarray, tag: str) -> np.ndarray:
    """Per-column norm times the sign of the first nonzero entry."""
    scales = np.ones(matrix.shape[1])
    for column in range(matrix.shape[1]):
        values = matrix[:, column]
        nonzero = np.flatnonzero(values)
        if nonzero.size == 0:
            raise ValueError(f"Column {column} of factor {tag} is zero")
        norm = float(np.linalg.norm(values))
        sign = 1.0 if values[nonzero[0]] > 0 else -1.0
        scales[column] = sign if abs(norm - 1.0) <= _NORM_SLACK else sign * norm
    return scales


def normalize_factors(factors: FactorSet) -> FactorSet:
    """Canonical representative of the scaling and permutation class.

    With ``V``/``W`` tags (decoupling layouts): columns of ``V`` and ``W``
    get unit norm and a positive first nonzero entry; the scales move into
    ``G1`` (``s_W * s_V``) and ``G2`` (``s_W * s_V**2``). Columns are then
    sorted by descending ``W`` column norm with ties broken by the ``V``
    column, lexicographically.

    Without those tags every mode but the last is normalized and the scale
    moves into the last one; columns are sorted by descending norm of the
    last factor.

    The result reconstructs the same tensor(s) up to rounding, and
    already-canonical input is returned unchanged.

    Raises:
        ValueError: If a normalized column is zero; the message names it.
    """
    matrices = factors.by_tag()
    if TAG_V in matrices:
        V = matrices[TAG_V]
        s_v = _column_scales(V, TAG_V)
        s_w = _column_scales(matrices[TAG_W], TAG_W) if TAG_W in matrices else np.ones_like(s_v)
        scaled = {TAG_V: V / s_v}
        if TAG_W in matrices:
            scaled[TAG_W] = matrices[TAG_W] / s_w
        if TAG_G1 in matrices:
            scaled[TAG_G1] = matrices[TAG_G1] * (s_w * s_v)
        if TAG_G2 in matrices:
            scaled[TAG_G2] = matrices[TAG_G2] * (s_w * s_v * s_v)
        for tag, matrix in matrices.items():
            scaled.setdefault(tag, matrix)
        lead = scaled.get(TAG_W, scaled[TAG_V])
        keys = [
            (
                -round(float(np.linalg.norm(lead[:, r])), 12),
                tuple(np.round(scaled[TAG_V][:, r], 12)),
            )
            for r in range(factors.rank)
        ]
    else:
        tags = list(matrices)
        last = tags[-1]
        total = np.ones(factors.rank)
        scaled = {}
        for tag in tags[:-1]:
            s = _column_scales(matrices[tag], tag)
            scaled[tag] = matrices[tag] / s
            total = total * s ** factors.tags.count(tag)
        scaled[last] = matrices[last] * total
        norms = np.linalg.norm(scaled[last], axis=0)
        keys = [(-round(float(norms[r]), 12),) for r in range(factors.rank)]
    order = sorted(range(factors.rank), key=lambda r: (keys[r], r))
    return FactorSet.from_tagged({t: m[:, order] for t, m in scaled.items()}, factors.tags)


def factor_match(A: np.ndarray, B: np.ndarray) -> tuple[float, tuple[int, ...]]:
    """Best column correspondence between two factor matrices.

    Cosines ``C[i, j] = |<a_i, b_j>| / (||a_i|| ||b_j||)`` (zero for a zero
    column). Returns the permutation ``p`` maximizing ``min_i C[i, p[i]]``
    and that minimum. Exhaustive for up to eight columns, Hungarian
    assignment on the summed cosines beyond that.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.ndim != 2:
        raise DimensionError(f"factor_match needs equal shapes, got {A.shape} and {B.shape}")
    rank = A.shape[1]

    def unit(M: np.ndarray) -> np.ndarray:
        norms = np.linalg.norm(M, axis=0)
        return np.divide(M, norms, out=np.zeros_like(M), where=norms > 0)

    cosines = np.clip(np.abs(unit(A).T @ unit(B)), 0.0, 1.0)
    if rank <= _EXHAUSTIVE_MATCH_LIMIT:
        perms = np.array(list(itertools.permutations(range(rank))), dtype=int)
        scores = cosines[np.arange(rank), perms].min(axis=1)
        best = int(np.argmax(scores))
        return float(scores[best]), tuple(int(p) for p in perms[best])
    rows, cols = linear_sum_assignment(-cosines)
    perm = tuple(int(c) for _, c in sorted(zip(rows, cols)))
    return float(cosines[np.arange(rank), list(perm)].min()), perm
