"""Benchmark ground truths for reproduction runs.

Three decoupled models with two inputs, all branches cubic:

- ``waring``: one output, two branches. The Jacobian CPD is a matrix
  factorization and cannot be unique; the Hessian CPD is.
- ``r3``: two outputs, three branches. Beyond what the Jacobian tensor
  identifies; the Hessian tensor restores uniqueness.
- ``r4``: two outputs, four branches. Decompositions reach zero residual
  without matching the true factors, yet every recovered second derivative
  is still linear in its own projection.
"""

from __future__ import annotations

from dataclasses import dataclass

from decoupler.config import Method
from decoupler.polyfunc import DecoupledModel, VectorPolynomial, expand_decoupled

G_WARING_1 = (5.0, -1.0, 0.0, 3.0)  # 3z^3 - z + 5
G_WARING_2 = (-7.0, 3.0, 0.0, -5.0)  # -5z^3 + 3z - 7
G_R3_1 = (5.0, 0.0, -1.0, 3.0)  # 3z^3 - z^2 + 5
G_R3_3 = (2.0, -2.0, 0.0, 3.0)  # 3z^3 - 2z + 2
G_R4_4 = (1.0, 0.0, -2.0, 1.0)  # z^3 - 2z^2 + 1


@dataclass(frozen=True, eq=False)
class Benchmark:
    """A hard-coded ground truth and the methods it is reproduced with."""

    name: str
    title: str
    truth: DecoupledModel
    degree: int
    methods: tuple[Method, ...]

    @property
    def rank(self) -> int:
        return self.truth.r

    def function(self) -> VectorPolynomial:
        """Coupled form of the ground truth."""
        return expand_decoupled(self.truth)


WARING = Benchmark(
    name="waring",
    title="Second-order derivatives resolve a Waring decomposition",
    truth=DecoupledModel(
        W=[[1.0, 1.0]],
        V=[[1.0, 2.0], [3.0, 4.0]],
        g=(G_WARING_1, G_WARING_2),
    ),
    degree=3,
    methods=(Method.HESSIAN, Method.JACOBIAN),
)

R3 = Benchmark(
    name="r3",
    title="Second-order derivatives improve uniqueness",
    truth=DecoupledModel(
        W=[[1.0, 0.0, 1.0], [-2.0, -1.0, 1.0]],
        V=[[2.0, 1.0, 0.0], [1.0, 0.0, 3.0]],
        g=(G_R3_1, G_WARING_2, G_R3_3),
    ),
    degree=3,
    methods=(Method.JACOBIAN, Method.HESSIAN, Method.JOINT),
)

R4 = Benchmark(
    name="r4",
    title="Zero-residual decompositions beyond identifiability",
    truth=DecoupledModel(
        W=[[1.0, 0.0, 1.0, 2.0], [-2.0, -1.0, 1.0, 3.0]],
        V=[[2.0, 1.0, 0.0, 1.0], [1.0, 0.0, 3.0, -1.0]],
        g=(G_R3_1, G_WARING_2, G_R3_3, G_R4_4),
    ),
    degree=3,
    methods=(Method.JOINT,),
)

BENCHMARKS: dict[str, Benchmark] = {b.name: b for b in (WARING, R3, R4)}


def get_benchmark(name: str) -> Benchmark:
    """Look up a benchmark by name.

    Raises:
        ValueError: For an unknown name.
    """
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise ValueError(
            f"Unknown benchmark {name!r}; choose from {', '.join(BENCHMARKS)}"
        ) from None
