"""decoupler - decoupling multivariate polynomials through derivative tensors.

A coupled function f(x) = W g(V^T x) is recovered from samples of its
Jacobian and Hessian by canonical polyadic decompositions with shared
factors.
"""

from decoupler.config import (
    CpdConfig,
    DecoupleConfig,
    DecouplerSettings,
    Method,
    SamplingConfig,
)
from decoupler.decouple import (
    DecoupleReport,
    DerivativeDataset,
    build_dataset,
    decouple,
    decouple_first_order,
    decouple_function,
    decouple_joint,
    decouple_second_order,
    g_fit_r2,
    reconstruct_g,
    sample_points,
    validate_model,
)
from decoupler.polyfunc import (
    DecoupledModel,
    DimensionError,
    MultiPolynomial,
    PolynomialSyntaxError,
    UnivariatePolynomial,
    VectorPolynomial,
    differentiate,
    evaluate,
    expand_decoupled,
    fd_check,
    hessian_at,
    jacobian_at,
    parse_polynomial,
)
from decoupler.tensor import (
    CpdResult,
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
    unfold,
)

__version__ = "0.1.0"

__all__ = [
    "CpdConfig",
    "CpdResult",
    "DecoupleConfig",
    "DecoupleReport",
    "DecoupledModel",
    "DecouplerSettings",
    "DenseTensor",
    "DerivativeDataset",
    "DimensionError",
    "FactorSet",
    "Method",
    "MultiPolynomial",
    "PolynomialSyntaxError",
    "SamplingConfig",
    "UnivariatePolynomial",
    "VectorPolynomial",
    "build_dataset",
    "cpd_als",
    "decouple",
    "decouple_first_order",
    "decouple_function",
    "decouple_joint",
    "decouple_second_order",
    "differentiate",
    "evaluate",
    "expand_decoupled",
    "factor_match",
    "fd_check",
    "fold",
    "g_fit_r2",
    "hessian_at",
    "jacobian_at",
    "joint_cost_gradient",
    "joint_cpd",
    "khatri_rao",
    "normalize_factors",
    "parse_polynomial",
    "reconstruct",
    "reconstruct_g",
    "sample_points",
    "unfold",
    "validate_model",
]
