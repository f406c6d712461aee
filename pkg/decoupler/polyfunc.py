"""Exact multivariate polynomial algebra.

Holds the coupled function f : R^m -> R^n as exact rational polynomials
and provides everything the decoupling pipeline needs from it:
- Parsing and printing of the ``c * x1^a * x2^b + ...`` text form
- Evaluation, symbolic differentiation, Jacobians and Hessians
- Expansion of a decoupled model W g(V^T x) into coupled form
- A central finite-difference cross-check of the symbolic derivatives

Coefficients are ``fractions.Fraction`` throughout; values become 64-bit
floats only when a polynomial is evaluated at a point.
"""

from __future__ import annotations

import logging
import numbers
import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from types import MappingProxyType
from typing import Any

import numpy as np
from numpy.polynomial import polynomial as npoly
from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)

Exponent = tuple[int, ...]


class PolynomialSyntaxError(ValueError):
    """Polynomial text could not be parsed."""

    def __init__(self, message: str, position: int) -> None:
        super().__init__(f"{message} at position {position}")
        self.position = position


class DimensionError(ValueError):
    """Sizes of polynomials, points or matrices do not agree."""


def _to_fraction(value: Any) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, numbers.Rational):
        return Fraction(int(value.numerator), int(value.denominator))
    if isinstance(value, numbers.Real):
        as_float = float(value)
        if not np.isfinite(as_float):
            raise ValueError(f"Coefficient must be finite, got {as_float}")
        return Fraction(as_float)
    if isinstance(value, str):
        return Fraction(value)
    raise TypeError(f"Cannot use {type(value).__name__} as a polynomial coefficient")


def _grlex_key(exponent: Exponent) -> tuple[int, tuple[int, ...]]:
    # Higher total degree first, then lexicographically larger exponents first.
    return (-sum(exponent), tuple(-a for a in exponent))


# ---------------------------------------------------------------------------
# JSON documents
# ---------------------------------------------------------------------------


class TermDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    exp: list[int]
    coef: float


class PolynomialDocument(BaseModel):
    """``{"m": int, "terms": [{"exp": [ints], "coef": float}]}``."""

    model_config = ConfigDict(extra="forbid")

    m: int = Field(ge=1)
    terms: list[TermDocument] = Field(default_factory=list)


class VectorPolynomialDocument(BaseModel):
    """``{"m": int, "outputs": [PolynomialDocument, ...]}``."""

    model_config = ConfigDict(extra="forbid")

    m: int = Field(ge=1)
    outputs: list[PolynomialDocument] = Field(min_length=1)


class BranchDocument(BaseModel):
    model_config = ConfigDict(extra="forbid")

    coeffs: list[float] = Field(min_length=1)


class ModelDocument(BaseModel):
    """``{"W": [[...]], "V": [[...]], "g": [{"coeffs": [c0, c1, ...]}]}``."""

    model_config = ConfigDict(extra="forbid")

    W: list[list[float]]
    V: list[list[float]]
    g: list[BranchDocument]


# ---------------------------------------------------------------------------
# Multivariate polynomials
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MultiPolynomial:
    """Exact polynomial in ``num_vars`` variables.

    ``terms`` maps exponent tuples to nonzero ``Fraction`` coefficients and is
    stored read-only in graded-lexicographic order. The zero polynomial has no
    terms.
    """

    num_vars: int
    terms: Mapping[Exponent, Fraction] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.num_vars < 1:
            raise ValueError(f"num_vars must be positive, got {self.num_vars}")

        cleaned: dict[Exponent, Fraction] = {}
        for exponent, coefficient in self.terms.items():
            exponent = tuple(int(a) for a in exponent)
            if len(exponent) != self.num_vars:
                raise DimensionError(
                    f"Exponent {exponent} has length {len(exponent)}, expected {self.num_vars}"
                )
            if any(a < 0 for a in exponent):
                raise ValueError(f"Exponents must be non-negative, got {exponent}")
            value = cleaned.get(exponent, Fraction(0)) + _to_fraction(coefficient)
            cleaned[exponent] = value

        ordered = {e: cleaned[e] for e in sorted(cleaned, key=_grlex_key) if cleaned[e] != 0}
        object.__setattr__(self, "terms", MappingProxyType(ordered))

    def __hash__(self) -> int:
        return hash((self.num_vars, frozenset(self.terms.items())))

    # Construction -------------------------------------------------------

    @classmethod
    def zero(cls, num_vars: int) -> MultiPolynomial:
        return cls(num_vars)

    @classmethod
    def constant(cls, value: Any, num_vars: int) -> MultiPolynomial:
        return cls(num_vars, {(0,) * num_vars: _to_fraction(value)})

    @classmethod
    def variable(cls, index: int, num_vars: int) -> MultiPolynomial:
        """The polynomial ``x<index>`` (1-based)."""
        if not 1 <= index <= num_vars:
            raise DimensionError(f"Variable index {index} out of range 1..{num_vars}")
        exponent = tuple(1 if j == index - 1 else 0 for j in range(num_vars))
        return cls(num_vars, {exponent: Fraction(1)})

    # Properties ---------------------------------------------------------

    @property
    def is_zero(self) -> bool:
        return not self.terms

    @property
    def degree(self) -> int:
        """Total degree; -1 for the zero polynomial."""
        if self.is_zero:
            return -1
        return max(sum(e) for e in self.terms)

    # Arithmetic ---------------------------------------------------------

    def _coerce(self, other: Any) -> MultiPolynomial:
        if isinstance(other, MultiPolynomial):
            if other.num_vars != self.num_vars:
                raise DimensionError(
                    f"Cannot combine polynomials in {self.num_vars} and {other.num_vars} variables"
                )
            return other
        return MultiPolynomial.constant(other, self.num_vars)

    def __add__(self, other: Any) -> MultiPolynomial:
        other = self._coerce(other)
        summed = dict(self.terms)
        for exponent, coefficient in other.terms.items():
            summed[exponent] = summed.get(exponent, Fraction(0)) + coefficient
        return MultiPolynomial(self.num_vars, summed)

    __radd__ = __add__

    def __neg__(self) -> MultiPolynomial:
        return MultiPolynomial(self.num_vars, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other: Any) -> MultiPolynomial:
        return self + (-self._coerce(other))

    def __rsub__(self, other: Any) -> MultiPolynomial:
        return self._coerce(other) - self

    def __mul__(self, other: Any) -> MultiPolynomial:
        if not isinstance(other, MultiPolynomial):
            scale = _to_fraction(other)
            return MultiPolynomial(self.num_vars, {e: c * scale for e, c in self.terms.items()})
        other = self._coerce(other)
        product: dict[Exponent, Fraction] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                exponent = tuple(a + b for a, b in zip(e1, e2))
                product[exponent] = product.get(exponent, Fraction(0)) + c1 * c2
        return MultiPolynomial(self.num_vars, product)

    __rmul__ = __mul__

    def __pow__(self, power: int) -> MultiPolynomial:
        if not isinstance(power, numbers.Integral) or power < 0:
            raise ValueError(f"Power must be a non-negative integer, got {power!r}")
        result = MultiPolynomial.constant(1, self.num_vars)
        base = self
        remaining = int(power)
        while remaining:
            if remaining & 1:
                result = result * base
            base = base * base
            remaining >>= 1
        return result

    # Calculus -----------------------------------------------------------

    def differentiate(self, var: int) -> MultiPolynomial:
        """Exact partial derivative with respect to ``x<var>`` (1-based)."""
        if not 1 <= var <= self.num_vars:
            raise DimensionError(f"Variable index {var} out of range 1..{self.num_vars}")
        axis = var - 1
        derived: dict[Exponent, Fraction] = {}
        for exponent, coefficient in self.terms.items():
            power = exponent[axis]
            if power == 0:
                continue
            lowered = exponent[:axis] + (power - 1,) + exponent[axis + 1 :]
            derived[lowered] = coefficient * power
        return MultiPolynomial(self.num_vars, derived)

    # Evaluation ---------------------------------------------------------

    def evaluate_many(self, X: np.ndarray) -> np.ndarray:
        """Values at every row of the ``N x m`` matrix ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.num_vars:
            raise DimensionError(f"Points have {X.shape[1]} coordinates, expected {self.num_vars}")
        if self.is_zero:
            return np.zeros(X.shape[0])
        exponents = np.array(list(self.terms), dtype=int)
        coefficients = np.array([float(c) for c in self.terms.values()])
        monomials = np.prod(X[:, None, :] ** exponents[None, :, :], axis=2)
        return monomials @ coefficients

    # Text and JSON ------------------------------------------------------

    def to_text(self) -> str:
        if self.is_zero:
            return "0"
        pieces: list[str] = []
        for exponent, coefficient in self.terms.items():
            magnitude = abs(coefficient)
            monomial = "*".join(
                f"x{j + 1}" if a == 1 else f"x{j + 1}^{a}" for j, a in enumerate(exponent) if a
            )
            number = (
                str(magnitude.numerator)
                if magnitude.denominator == 1
                else f"{magnitude.numerator}/{magnitude.denominator}"
            )
            if not monomial:
                body = number
            elif magnitude == 1:
                body = monomial
            else:
                body = f"{number}*{monomial}"
            if not pieces:
                pieces.append(f"-{body}" if coefficient < 0 else body)
            else:
                pieces.append(f"- {body}" if coefficient < 0 else f"+ {body}")
        return " ".join(pieces)

    def __str__(self) -> str:
        return self.to_text()

    def to_json(self) -> dict[str, Any]:
        return {
            "m": self.num_vars,
            "terms": [{"exp": list(e), "coef": float(c)} for e, c in self.terms.items()],
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> MultiPolynomial:
        document = PolynomialDocument.model_validate(data)
        terms: dict[Exponent, Fraction] = {}
        for term in document.terms:
            exponent = tuple(term.exp)
            terms[exponent] = terms.get(exponent, Fraction(0)) + Fraction(term.coef)
        return cls(document.m, terms)


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:"
    r"(?P<number>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|x(?P<index>\d+)"
    r"|(?P<op>\*\*|[-+*/^])"
    r")"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens: list[tuple[str, str, int]] = []
    position = 0
    while position < len(text):
        if text[position:].strip() == "":
            break
        match = _TOKEN.match(text, position)
        if match is None or match.end() == position:
            offset = position + len(text[position:]) - len(text[position:].lstrip())
            raise PolynomialSyntaxError(f"Unexpected character {text[offset]!r}", offset)
        lexeme = match.group(0)
        start = match.start() + len(lexeme) - len(lexeme.lstrip())
        if match.lastgroup == "number":
            tokens.append(("number", match.group("number"), start))
        elif match.lastgroup == "index":
            tokens.append(("var", f"x{match.group('index')}", start))
        else:
            op = match.group("op")
            tokens.append(("op", "^" if op == "**" else op, start))
        position = match.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, num_vars: int) -> None:
        self.tokens = _tokenize(text)
        self.index = 0
        self.num_vars = num_vars

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.index]

    def take(self) -> tuple[str, str, int]:
        token = self.tokens[self.index]
        self.index += 1
        return token

    def fail(self, token: tuple[str, str, int], expected: str) -> PolynomialSyntaxError:
        found = "end of input" if token[0] == "end" else repr(token[1])
        return PolynomialSyntaxError(f"Expected {expected}, found {found}", token[2])

    def polynomial(self) -> MultiPolynomial:
        result = MultiPolynomial.zero(self.num_vars)
        first = True
        while True:
            sign = 1
            kind, value, _ = self.peek()
            if not first and not (kind == "op" and value in "+-"):
                raise self.fail(self.peek(), "'+' or '-'")
            while self.peek()[0] == "op" and self.peek()[1] in "+-":
                if self.take()[1] == "-":
                    sign = -sign
            result = result + self.term() * sign
            first = False
            if self.peek()[0] == "end":
                return result

    def term(self) -> MultiPolynomial:
        coefficient = Fraction(1)
        exponent = [0] * self.num_vars
        while True:
            kind, value, position = self.take()
            if kind == "number":
                number = Fraction(value)
                if self.peek()[:2] == ("op", "/"):
                    self.take()
                    kind, value, position = self.take()
                    if kind != "number":
                        raise self.fail((kind, value, position), "a denominator")
                    if Fraction(value) == 0:
                        raise PolynomialSyntaxError("Division by zero", position)
                    number /= Fraction(value)
                coefficient *= number
            elif kind == "var":
                index = int(value[1:])
                if not 1 <= index <= self.num_vars:
                    raise PolynomialSyntaxError(
                        f"Variable x{index} out of range for {self.num_vars} variables",
                        position,
                    )
                power = 1
                if self.peek()[:2] == ("op", "^"):
                    self.take()
                    kind, value, position = self.take()
                    if kind != "number" or not value.isdigit():
                        raise self.fail((kind, value, position), "a non-negative integer exponent")
                    power = int(value)
                exponent[index - 1] += power
            else:
                raise self.fail((kind, value, position), "a number or variable")

            if self.peek()[:2] == ("op", "*"):
                self.take()
                continue
            return MultiPolynomial(self.num_vars, {tuple(exponent): coefficient})


def parse_polynomial(text: str, num_vars: int) -> MultiPolynomial:
    """Parse ``c * x1^a * x2^b + ...`` into an exact polynomial.

    Coefficients may be integers, decimals or rationals ``p/q``; ``**`` is
    accepted for ``^``.

    Raises:
        PolynomialSyntaxError: On malformed text or a variable index above
            ``num_vars``; ``position`` points into ``text``.
    """
    if num_vars < 1:
        raise ValueError(f"num_vars must be positive, got {num_vars}")
    return _Parser(text, num_vars).polynomial()


# ---------------------------------------------------------------------------
# Vector functions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VectorPolynomial:
    """f : R^m -> R^n as an ordered tuple of ``MultiPolynomial`` outputs."""

    outputs: tuple[MultiPolynomial, ...]

    def __post_init__(self) -> None:
        outputs = tuple(self.outputs)
        if not outputs:
            raise ValueError("A vector polynomial needs at least one output")
        widths = {p.num_vars for p in outputs}
        if len(widths) != 1:
            raise DimensionError(f"Outputs disagree on the number of variables: {sorted(widths)}")
        object.__setattr__(self, "outputs", outputs)

    @property
    def n(self) -> int:
        return len(self.outputs)

    @property
    def num_vars(self) -> int:
        return self.outputs[0].num_vars

    @cached_property
    def jacobian_polys(self) -> tuple[tuple[MultiPolynomial, ...], ...]:
        return tuple(
            tuple(p.differentiate(j) for j in range(1, self.num_vars + 1)) for p in self.outputs
        )

    @cached_property
    def hessian_polys(self) -> tuple[tuple[tuple[MultiPolynomial, ...], ...], ...]:
        m = self.num_vars
        result = []
        for row in self.jacobian_polys:
            upper = {(j, k): row[j].differentiate(k + 1) for j in range(m) for k in range(j, m)}
            result.append(
                tuple(tuple(upper[min(j, k), max(j, k)] for k in range(m)) for j in range(m))
            )
        return tuple(result)

    def _check_point(self, x: Sequence[float] | np.ndarray) -> np.ndarray:
        point = np.asarray(x, dtype=float).ravel()
        if point.size != self.num_vars:
            raise DimensionError(f"Point has {point.size} coordinates, expected {self.num_vars}")
        return point

    def evaluate(self, x: Sequence[float] | np.ndarray) -> np.ndarray:
        point = self._check_point(x)
        return np.array([evaluate(p, point) for p in self.outputs])

    def evaluate_many(self, X: np.ndarray) -> np.ndarray:
        """``n x N`` matrix of values at the rows of ``X``."""
        return np.vstack([p.evaluate_many(X) for p in self.outputs])

    def to_text(self) -> str:
        return "\n".join(p.to_text() for p in self.outputs)

    def to_json(self) -> dict[str, Any]:
        return {"m": self.num_vars, "outputs": [p.to_json() for p in self.outputs]}

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> VectorPolynomial:
        document = VectorPolynomialDocument.model_validate(data)
        outputs = tuple(MultiPolynomial.from_json(p.model_dump()) for p in document.outputs)
        if any(p.num_vars != document.m for p in outputs):
            raise DimensionError(f"Every output must use m={document.m} variables")
        return cls(outputs)

    @classmethod
    def from_text(cls, lines: Iterable[str], num_vars: int) -> VectorPolynomial:
        """One output per non-blank line."""
        texts = [line for line in lines if line.strip()]
        return cls(tuple(parse_polynomial(t, num_vars) for t in texts))


def evaluate(p: MultiPolynomial, x: Sequence[float] | np.ndarray) -> float:
    """Value of ``p`` at the point ``x`` as a sum of c * prod(x_j^a_j)."""
    point = np.asarray(x, dtype=float).ravel()
    if point.size != p.num_vars:
        raise DimensionError(f"Point has {point.size} coordinates, expected {p.num_vars}")
    return float(p.evaluate_many(point[None, :])[0])


def differentiate(p: MultiPolynomial, var: int) -> MultiPolynomial:
    return p.differentiate(var)


def jacobian_at(f: VectorPolynomial, x: Sequence[float] | np.ndarray) -> np.ndarray:
    """``J[i, j] = d f_i / d x_j`` at ``x`` as an ``n x m`` array."""
    point = f._check_point(x)
    return np.array([[evaluate(d, point) for d in row] for row in f.jacobian_polys])


def hessian_at(f: VectorPolynomial, x: Sequence[float] | np.ndarray) -> np.ndarray:
    """``H[i, j, k] = d^2 f_i / dx_j dx_k`` at ``x`` as an ``n x m x m`` array.

    Entries (j, k) and (k, j) come from the same derivative polynomial, so
    the result is bitwise symmetric in its last two modes.
    """
    point = f._check_point(x)
    m = f.num_vars
    H = np.zeros((f.n, m, m))
    for i, block in enumerate(f.hessian_polys):
        for j in range(m):
            for k in range(j, m):
                H[i, j, k] = H[i, k, j] = evaluate(block[j][k], point)
    return H


def fd_check(
    f: VectorPolynomial,
    x: Sequence[float] | np.ndarray,
    h: float | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Central finite-difference estimates of the Jacobian and Hessian.

    The Jacobian is differenced from function values, the Hessian from the
    symbolic Jacobian. ``h`` defaults to ``1e-4 * max(1, ||x||)``.

    Returns:
        ``(J_est, H_est)`` with shapes ``n x m`` and ``n x m x m``.
    """
    point = f._check_point(x)
    if h is None:
        h = 1e-4 * max(1.0, float(np.linalg.norm(point)))
    if h <= 0:
        raise ValueError(f"Step must be positive, got {h}")

    m = f.num_vars
    J_est = np.zeros((f.n, m))
    H_est = np.zeros((f.n, m, m))
    for j in range(m):
        step = np.zeros(m)
        step[j] = h
        J_est[:, j] = (f.evaluate(point + step) - f.evaluate(point - step)) / (2.0 * h)
        H_est[:, :, j] = (jacobian_at(f, point + step) - jacobian_at(f, point - step)) / (2.0 * h)
    return J_est, H_est


# ---------------------------------------------------------------------------
# Univariate branches and decoupled models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class UnivariatePolynomial:
    """g(z) = sum_k coeffs[k] z^k, coefficients in ascending degree."""

    coeffs: tuple[float, ...]

    def __post_init__(self) -> None:
        values = np.asarray(self.coeffs, dtype=float).ravel()
        if values.size == 0 or not np.all(np.isfinite(values)):
            raise ValueError(f"Branch coefficients must be finite and non-empty, got {self.coeffs}")
        trimmed = npoly.polytrim(values, tol=0)
        object.__setattr__(self, "coeffs", tuple(float(c) for c in trimmed))

    @property
    def is_zero(self) -> bool:
        return self.coeffs == (0.0,)

    @property
    def degree(self) -> int:
        return -1 if self.is_zero else len(self.coeffs) - 1

    def __call__(self, z: float | np.ndarray) -> float | np.ndarray:
        return npoly.polyval(z, self.coeffs)

    def deriv(self, order: int = 1) -> UnivariatePolynomial:
        return UnivariatePolynomial(tuple(npoly.polyder(self.coeffs, order)))

    def rescaled(self, scale: float) -> UnivariatePolynomial:
        """h(t) = g(scale * t)."""
        powers = scale ** np.arange(len(self.coeffs))
        return UnivariatePolynomial(tuple(np.asarray(self.coeffs) * powers))


@dataclass(frozen=True, eq=False)
class DecoupledModel:
    """f(x) = W g(V^T x) with ``W`` n x r, ``V`` m x r and r branches ``g``."""

    W: np.ndarray
    V: np.ndarray
    g: tuple[UnivariatePolynomial, ...]

    def __post_init__(self) -> None:
        W = np.array(self.W, dtype=float, ndmin=2)
        V = np.array(self.V, dtype=float, ndmin=2)
        g = tuple(
            b if isinstance(b, UnivariatePolynomial) else UnivariatePolynomial(tuple(b))
            for b in self.g
        )
        if W.ndim != 2 or V.ndim != 2:
            raise DimensionError("W and V must be matrices")
        if not W.shape[1] == V.shape[1] == len(g):
            raise DimensionError(
                f"W has {W.shape[1]} columns, V has {V.shape[1]}, but there are {len(g)} branches"
            )
        W.setflags(write=False)
        V.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "g", g)

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def m(self) -> int:
        return self.V.shape[0]

    @property
    def r(self) -> int:
        return len(self.g)

    def branch_values(self, X: np.ndarray, order: int = 0) -> np.ndarray:
        """``N x r`` matrix of g_i^(order)(v_i^T x^(k))."""
        Z = np.atleast_2d(np.asarray(X, dtype=float)) @ self.V
        columns = [(b.deriv(order) if order else b)(Z[:, i]) for i, b in enumerate(self.g)]
        return np.column_stack(columns) if columns else np.zeros((Z.shape[0], 0))

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        """Rows of ``W g(V^T x)``; a single point returns a length-n vector."""
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        width = np.atleast_2d(X).shape[1]
        if width != self.m:
            raise DimensionError(f"Points have {width} coordinates, expected {self.m}")
        values = self.branch_values(X) @ self.W.T
        return values[0] if single else values

    def jacobian(self, x: Sequence[float] | np.ndarray) -> np.ndarray:
        """Chain-rule Jacobian W diag(g_i'(v_i^T x)) V^T."""
        derivatives = self.branch_values(np.asarray(x, dtype=float)[None, :], order=1)[0]
        return self.W @ np.diag(derivatives) @ self.V.T

    def to_json(self) -> dict[str, Any]:
        return {
            "W": self.W.tolist(),
            "V": self.V.tolist(),
            "g": [{"coeffs": list(b.coeffs)} for b in self.g],
        }

    @classmethod
    def from_json(cls, data: Mapping[str, Any]) -> DecoupledModel:
        document = ModelDocument.model_validate(data)
        return cls(
            W=np.array(document.W, dtype=float, ndmin=2),
            V=np.array(document.V, dtype=float, ndmin=2),
            g=tuple(UnivariatePolynomial(tuple(b.coeffs)) for b in document.g),
        )


def normalize_model(model: DecoupledModel) -> DecoupledModel:
    """Unit-norm columns of V with positive leading entry; scale moved into g."""
    V = np.array(model.V)
    g = list(model.g)
    for i in range(model.r):
        column = V[:, i]
        nonzero = np.flatnonzero(column)
        if nonzero.size == 0:
            continue
        scale = float(np.linalg.norm(column)) * float(np.sign(column[nonzero[0]]))
        V[:, i] = column / scale
        g[i] = g[i].rescaled(scale)
    return DecoupledModel(W=model.W, V=V, g=tuple(g))


def expand_decoupled(model: DecoupledModel) -> VectorPolynomial:
    """Exact coupled form of ``W g(V^T x)``.

    Every float entry is converted to the rational it represents, so the
    expansion introduces no rounding of its own.
    """
    m = model.m
    variables = [MultiPolynomial.variable(j + 1, m) for j in range(m)]
    branches: list[MultiPolynomial] = []
    for i, branch in enumerate(model.g):
        z = MultiPolynomial.zero(m)
        for j in range(m):
            z = z + variables[j] * Fraction(float(model.V[j, i]))
        value = MultiPolynomial.zero(m)
        power = MultiPolynomial.constant(1, m)
        for k, coefficient in enumerate(branch.coeffs):
            if k:
                power = power * z
            value = value + power * Fraction(coefficient)
        branches.append(value)

    outputs = []
    for row in model.W:
        total = MultiPolynomial.zero(m)
        for weight, branch in zip(row, branches):
            if weight:
                total = total + branch * Fraction(float(weight))
        outputs.append(total)
    logger.debug("Expanded %d-branch model into %d outputs", model.r, len(outputs))
    return VectorPolynomial(tuple(outputs))
