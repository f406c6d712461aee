"""Dense tensors, unfoldings and the CP solvers."""

from __future__ import annotations

import numpy as np
import pytest

from decoupler.config import CpdConfig
from decoupler.polyfunc import DimensionError
from decoupler.tensor import (
    HESSIAN_LAYOUT,
    JACOBIAN_LAYOUT,
    JOINT_LAYOUT,
    TAG_G1,
    TAG_G2,
    TAG_V,
    TAG_W,
    DenseTensor,
    FactorSet,
    cpd_als,
    factor_match,
    fold,
    joint_cost_gradient,
    joint_cpd,
    khatri_rao,
    normalize_factors,
    reconstruct,
    relative_residual,
    unfold,
)

pytestmark = pytest.mark.tensor


def _random_factors(
    rng: np.random.Generator, n: int, m: int, N: int, r: int
) -> dict[str, np.ndarray]:
    return {
        TAG_W: rng.standard_normal((n, r)),
        TAG_V: rng.standard_normal((m, r)),
        TAG_G1: rng.standard_normal((N, r)),
        TAG_G2: rng.standard_normal((N, r)),
    }


# Containers ---------------------------------------------------------------


def test_dense_tensor_is_row_major() -> None:
    t = DenseTensor.from_array(np.arange(6.0).reshape(2, 3))
    assert t.dims == (2, 3)
    assert t.order == 2
    np.testing.assert_array_equal(t.data, np.arange(6.0))
    assert t.array[1, 0] == 3.0
    assert t.norm() == pytest.approx(np.sqrt(55.0))


def test_dense_tensor_rejects_wrong_size() -> None:
    with pytest.raises(DimensionError):
        DenseTensor((2, 3), np.zeros(5))
    with pytest.raises(DimensionError):
        DenseTensor((2, 0), np.zeros(0))


def test_factor_set_shares_tagged_matrices() -> None:
    W = np.array([[1.0], [2.0]])
    V = np.array([[3.0], [4.0], [5.0]])
    G2 = np.array([[1.0]])
    fs = FactorSet.from_tagged({TAG_W: W, TAG_V: V, TAG_G2: G2}, HESSIAN_LAYOUT)
    assert fs.rank == 1
    assert fs.dims == (2, 3, 3, 1)
    assert fs.factors[1] is fs.factors[2]
    assert list(fs.by_tag()) == [TAG_W, TAG_V, TAG_G2]
    with pytest.raises(KeyError):
        fs.factor(TAG_G1)


def test_factor_set_rejects_inconsistent_sharing() -> None:
    with pytest.raises(ValueError, match="identical"):
        FactorSet((np.ones((2, 1)), np.ones((3, 1)), np.zeros((3, 1))), ("W", "V", "V"))
    with pytest.raises(DimensionError):
        FactorSet((np.ones((2, 1)), np.ones((3, 2))), ("A", "B"))


# Multilinear algebra -----------------------------------------------------


def test_reconstruct_outer_product() -> None:
    t = reconstruct([np.array([[1.0], [2.0]]), np.array([[3.0], [4.0]])])
    np.testing.assert_array_equal(t.array, [[3.0, 4.0], [6.0, 8.0]])


def test_unfold_orders_remaining_modes_lowest_fastest() -> None:
    t = DenseTensor.from_array(np.arange(24.0).reshape(2, 3, 4))
    # T[i, j, k] = 12 i + 4 j + k
    mode1 = unfold(t, 1)
    assert mode1.shape == (2, 12)
    for i in range(2):
        for j in range(3):
            for k in range(4):
                assert mode1[i, j + 3 * k] == 12 * i + 4 * j + k
    mode3 = unfold(t, 3)
    assert mode3.shape == (4, 6)
    np.testing.assert_array_equal(mode3[:, 0], [0, 1, 2, 3])
    np.testing.assert_array_equal(mode3[0, :], [0, 12, 4, 16, 8, 20])


def test_fold_inverts_unfold(rng: np.random.Generator) -> None:
    t = DenseTensor.from_array(rng.standard_normal((2, 3, 4, 5)))
    for mode in range(1, 5):
        np.testing.assert_array_equal(fold(unfold(t, mode), mode, t.dims).array, t.array)


def test_unfold_rejects_bad_mode() -> None:
    t = DenseTensor.from_array(np.zeros((2, 2)))
    with pytest.raises(DimensionError):
        unfold(t, 0)
    with pytest.raises(DimensionError):
        unfold(t, 3)
    with pytest.raises(DimensionError):
        fold(np.zeros((2, 3)), 1, (2, 2))


def test_khatri_rao() -> None:
    A = np.array([[1.0, 2.0], [3.0, 4.0]])
    B = np.array([[5.0, 6.0], [7.0, 8.0]])
    np.testing.assert_array_equal(
        khatri_rao(A, B), [[5.0, 12.0], [7.0, 16.0], [15.0, 24.0], [21.0, 32.0]]
    )
    with pytest.raises(DimensionError):
        khatri_rao(A, np.ones((2, 3)))


def test_unfolding_identity(rng: np.random.Generator) -> None:
    A1, A2, A3 = (rng.standard_normal((d, 2)) for d in (2, 3, 4))
    t = reconstruct([A1, A2, A3])
    np.testing.assert_allclose(unfold(t, 1), A1 @ khatri_rao(A3, A2).T, atol=1e-12)
    np.testing.assert_allclose(unfold(t, 2), A2 @ khatri_rao(A3, A1).T, atol=1e-12)
    np.testing.assert_allclose(unfold(t, 3), A3 @ khatri_rao(A2, A1).T, atol=1e-12)


def test_shared_modes_reconstruct_exactly_symmetric(rng: np.random.Generator) -> None:
    factors = _random_factors(rng, n=2, m=3, N=5, r=3)
    H = reconstruct(FactorSet.from_tagged(factors, HESSIAN_LAYOUT))
    assert np.array_equal(H.array, np.swapaxes(H.array, 1, 2))


# Alternating least squares ----------------------------------------------


def test_cpd_als_exact_rank_one() -> None:
    a, b, c = np.array([1.0, 2.0]), np.array([1.0, -1.0]), np.array([2.0, 1.0])
    t = DenseTensor.from_array(np.einsum("i,j,k->ijk", a, b, c))
    result = cpd_als(t, CpdConfig(rank=1, restarts=3, seed=7))
    assert result.converged
    assert relative_residual(t, result.factors) < 1e-8
    assert result.factors.tags == ("A1", "A2", "A3")
    assert result.metrics is not None
    assert len(result.metrics.records) == 3


def test_cpd_als_recovers_generic_rank_two(rng: np.random.Generator) -> None:
    A = [rng.standard_normal((d, 2)) for d in (3, 4, 5)]
    t = reconstruct(A)
    result = cpd_als(t, CpdConfig(rank=2, restarts=5, seed=1))
    assert relative_residual(t, result.factors) < 1e-6
    for k in range(3):
        score, _ = factor_match(A[k], result.factors.factors[k])
        assert score > 0.999


def test_cpd_als_refines_slow_sweeps_to_exact_fit() -> None:
    # nearly collinear columns in every mode slow ALS down to a crawl
    base = np.array([[1.0, 1.0], [0.5, 0.6], [-0.2, -0.1]])
    t = reconstruct([base, base[::-1], base + np.array([[0.0, 0.05]])])
    result = cpd_als(t, CpdConfig(rank=2, restarts=1, max_iters=40, seed=3))
    assert result.converged
    assert result.final_cost <= 1e-20
    assert result.cost_trace[-1] <= min(result.cost_trace)
    assert relative_residual(t, result.factors) < 1e-10


def test_cpd_als_zero_tensor() -> None:
    t = DenseTensor.from_array(np.zeros((2, 3, 4)))
    result = cpd_als(t, CpdConfig(rank=2), tags=JACOBIAN_LAYOUT)
    assert result.converged
    assert result.final_cost == 0.0
    assert result.factors.dims == (2, 3, 4)
    assert all(not np.any(f) for f in result.factors.factors)


def test_cpd_als_rejects_non_finite_and_low_order() -> None:
    data = np.ones((2, 2, 2))
    data[0, 1, 1] = np.nan
    with pytest.raises(ValueError, match="NaN"):
        cpd_als(DenseTensor.from_array(data), CpdConfig(rank=1))
    with pytest.raises(DimensionError):
        cpd_als(DenseTensor.from_array(np.ones(3)), CpdConfig(rank=1))
    with pytest.raises(DimensionError):
        cpd_als(DenseTensor.from_array(np.ones((2, 2))), CpdConfig(rank=1), tags=("A",))


def test_cpd_als_is_deterministic(rng: np.random.Generator) -> None:
    t = DenseTensor.from_array(rng.standard_normal((3, 3, 3)))
    cfg = CpdConfig(rank=2, restarts=3, max_iters=50, seed=11)
    first, second = cpd_als(t, cfg), cpd_als(t, cfg)
    assert first.cost_trace == second.cost_trace
    assert first.restart_index == second.restart_index
    for a, b in zip(first.factors.factors, second.factors.factors):
        assert np.array_equal(a, b)


# Coupled decomposition ---------------------------------------------------


def test_joint_cost_gradient_matches_finite_differences(rng: np.random.Generator) -> None:
    n, m, N, r = 2, 2, 3, 2
    J = DenseTensor.from_array(rng.standard_normal((n, m, N)))
    H0 = rng.standard_normal((n, m, m, N))
    H = DenseTensor.from_array(0.5 * (H0 + np.swapaxes(H0, 1, 2)))
    factors = _random_factors(rng, n, m, N, r)
    alpha1, alpha2 = 0.7, 1.3

    def cost(values: dict[str, np.ndarray]) -> float:
        fs = FactorSet.from_tagged(values, JOINT_LAYOUT)
        return joint_cost_gradient(J, H, fs, alpha1, alpha2)[0]

    fs = FactorSet.from_tagged(factors, JOINT_LAYOUT)
    _, grads = joint_cost_gradient(J, H, fs, alpha1, alpha2)
    step = 1e-6
    for tag, matrix in factors.items():
        estimate = np.zeros_like(matrix)
        for index in np.ndindex(matrix.shape):
            plus = {k: v.copy() for k, v in factors.items()}
            minus = {k: v.copy() for k, v in factors.items()}
            plus[tag][index] += step
            minus[tag][index] -= step
            estimate[index] = (cost(plus) - cost(minus)) / (2 * step)
        np.testing.assert_allclose(grads[tag], estimate, rtol=1e-5, atol=1e-6)


def test_joint_cost_is_zero_at_exact_factors(rng: np.random.Generator) -> None:
    factors = _random_factors(rng, n=2, m=3, N=4, r=2)
    J = reconstruct(FactorSet.from_tagged(factors, JACOBIAN_LAYOUT))
    H = reconstruct(FactorSet.from_tagged(factors, HESSIAN_LAYOUT))
    cost, grads = joint_cost_gradient(J, H, FactorSet.from_tagged(factors, JOINT_LAYOUT), 1.0, 1.0)
    assert cost < 1e-20
    assert all(np.max(np.abs(g)) < 1e-9 for g in grads.values())


def test_joint_cpd_recovers_exact_factors(rng: np.random.Generator) -> None:
    factors = _random_factors(rng, n=2, m=2, N=30, r=2)
    J = reconstruct(FactorSet.from_tagged(factors, JACOBIAN_LAYOUT))
    H = reconstruct(FactorSet.from_tagged(factors, HESSIAN_LAYOUT))
    result = joint_cpd(J, H, CpdConfig(rank=2, restarts=3, max_iters=500, seed=3))
    assert result.factors.tags == JOINT_LAYOUT
    assert relative_residual(J, result.factors.project(JACOBIAN_LAYOUT)) < 1e-6
    assert relative_residual(H, result.factors.project(HESSIAN_LAYOUT)) < 1e-6
    for tag in (TAG_W, TAG_V):
        score, _ = factor_match(factors[tag], result.factors.factor(tag))
        assert score > 0.999


def test_joint_cpd_single_tensor_layouts(rng: np.random.Generator) -> None:
    factors = _random_factors(rng, n=2, m=2, N=10, r=1)
    H = reconstruct(FactorSet.from_tagged(factors, HESSIAN_LAYOUT))
    result = joint_cpd(None, H, CpdConfig(rank=1, restarts=2, max_iters=200))
    assert result.factors.tags == HESSIAN_LAYOUT

    zero = DenseTensor.from_array(np.zeros((2, 2, 10)))
    result = joint_cpd(zero, None, CpdConfig(rank=1))
    assert result.factors.tags == JACOBIAN_LAYOUT
    assert result.final_cost == 0.0


def test_joint_cpd_validates_inputs() -> None:
    cfg = CpdConfig(rank=1)
    with pytest.raises(ValueError):
        joint_cpd(None, None, cfg)
    with pytest.raises(DimensionError):
        joint_cpd(DenseTensor.from_array(np.ones((2, 2))), None, cfg)
    with pytest.raises(DimensionError):
        joint_cpd(
            DenseTensor.from_array(np.ones((2, 2, 3))),
            DenseTensor.from_array(np.ones((2, 2, 2, 4))),
            cfg,
        )
    H = np.zeros((1, 2, 2, 3))
    H[0, 0, 1, 0] = 1.0
    with pytest.raises(ValueError, match="symmetric"):
        joint_cpd(None, DenseTensor.from_array(H), cfg)


def test_both_weights_zero_rejected() -> None:
    with pytest.raises(ValueError):
        CpdConfig(rank=1, alpha1=0.0, alpha2=0.0)


# Canonical form ------------------------------------------------------------


def test_normalize_factors_canonical_form(rng: np.random.Generator) -> None:
    factors = FactorSet.from_tagged(_random_factors(rng, n=2, m=3, N=6, r=3), JOINT_LAYOUT)
    normalized = normalize_factors(factors)

    V, W = normalized.factor(TAG_V), normalized.factor(TAG_W)
    np.testing.assert_allclose(np.linalg.norm(V, axis=0), 1.0)
    np.testing.assert_allclose(np.linalg.norm(W, axis=0), 1.0)
    assert np.all(V[0] > 0)
    assert np.all(W[0] > 0)

    for layout in (JACOBIAN_LAYOUT, HESSIAN_LAYOUT):
        before = reconstruct(factors.project(layout)).array
        after = reconstruct(normalized.project(layout)).array
        np.testing.assert_allclose(after, before, rtol=1e-10, atol=1e-10)


def test_normalize_factors_is_idempotent(rng: np.random.Generator) -> None:
    factors = FactorSet.from_tagged(_random_factors(rng, n=3, m=2, N=4, r=2), JOINT_LAYOUT)
    once = normalize_factors(factors)
    twice = normalize_factors(once)
    for a, b in zip(once.factors, twice.factors):
        assert np.array_equal(a, b)


def test_normalize_factors_orders_unit_columns_by_v() -> None:
    W = np.array([[1.0, 3.0], [0.0, 4.0]])
    V = np.array([[1.0, 0.0], [0.0, 2.0]])
    G1 = np.array([[1.0, 1.0]])
    fs = FactorSet.from_tagged({TAG_W: W, TAG_V: V, TAG_G1: G1}, JACOBIAN_LAYOUT)
    normalized = normalize_factors(fs)
    np.testing.assert_allclose(normalized.factor(TAG_W), [[0.6, 1.0], [0.8, 0.0]])
    np.testing.assert_allclose(normalized.factor(TAG_V), [[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(normalized.factor(TAG_G1), [[10.0, 1.0]])


def test_normalize_factors_names_zero_column() -> None:
    V = np.array([[1.0, 0.0], [1.0, 0.0]])
    matrices = {TAG_W: np.ones((1, 2)), TAG_V: V, TAG_G1: np.ones((3, 2))}
    fs = FactorSet.from_tagged(matrices, JACOBIAN_LAYOUT)
    with pytest.raises(ValueError, match="Column 1"):
        normalize_factors(fs)


def test_factor_match_invariances(rng: np.random.Generator) -> None:
    A = rng.standard_normal((4, 3))
    order = [2, 0, 1]
    B = A[:, order] * np.array([-2.0, 0.5, 3.0])
    score, perm = factor_match(A, B)
    assert score == pytest.approx(1.0)
    assert perm == tuple(int(p) for p in np.argsort(order))

    score_self, perm_self = factor_match(A, A)
    assert score_self == pytest.approx(1.0)
    assert perm_self == (0, 1, 2)


def test_factor_match_detects_different_factors() -> None:
    A = np.eye(2)
    B = np.array([[1.0, 1.0], [1.0, -1.0]])
    score, _ = factor_match(A, B)
    assert score == pytest.approx(np.sqrt(0.5))
    with pytest.raises(DimensionError):
        factor_match(A, np.eye(3))


def test_factor_match_large_rank_uses_assignment(rng: np.random.Generator) -> None:
    A = rng.standard_normal((12, 10))
    order = rng.permutation(10)
    score, perm = factor_match(A, A[:, order])
    assert score == pytest.approx(1.0)
    assert perm == tuple(int(p) for p in np.argsort(order))
