"""Truncated multivariate Taylor arithmetic.

A jet holds the Taylor coefficients of a smooth function of ``n_vars``
real variables around a base point, truncated at a total derivative
order ``K``.  Coefficients are stored in derivative/factorial
normalization: the entry for multi-index ``alpha`` is
``d^alpha f / alpha!`` evaluated at the base point, so products are plain
Cauchy convolutions over the graded monomial basis.

Storage is a dense numpy vector over all monomials of total order <= K,
ordered by total order and then lexicographically.  That ordering makes
the basis of order K a prefix of the basis of order K+1, so truncation
is a slice.  Index bookkeeping (multiplication pairs, per-variable
derivative maps) is precomputed once per ``(n_vars, K)`` and cached.

Seeding a coordinate variable gives the jet of the identity function in
that slot; pushing seeded jets through arithmetic and the closed-form
function table below evaluates all mixed partials of the composite
expression at once, exactly up to round-off.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadConfig,
    DivisionByZero,
    DomainError,
    OrderExceeded,
    ShapeMismatch,
    ZeroVector,
)

_ALGEBRA_CACHE: dict[tuple[int, int], "_Algebra"] = {}


def _exponent_tuples(n_vars, degree):
    """All exponent tuples of the given total degree, deterministic order."""
    if n_vars == 1:
        yield (degree,)
        return
    for head in range(degree, -1, -1):
        for rest in _exponent_tuples(n_vars - 1, degree - head):
            yield (head,) + rest


class _Algebra:
    """Index tables for one (n_vars, order) jet space."""

    def __init__(self, n_vars, order):
        self.n_vars = n_vars
        self.order = order
        exps = []
        self.count_through_order = []
        for d in range(order + 1):
            exps.extend(_exponent_tuples(n_vars, d))
            self.count_through_order.append(len(exps))
        self.exponents = exps
        self.size = len(exps)
        self.index = {e: i for i, e in enumerate(exps)}
        self.orders = np.array([sum(e) for e in exps], dtype=np.int64)
        self._mul_table = None
        self._deriv_tables = None

    @property
    def mul_table(self):
        if self._mul_table is None:
            mi, mj, mo = [], [], []
            for i, ei in enumerate(self.exponents):
                budget = self.order - int(self.orders[i])
                limit = self.count_through_order[budget]
                for j in range(limit):
                    ej = self.exponents[j]
                    mi.append(i)
                    mj.append(j)
                    mo.append(self.index[tuple(a + b for a, b in zip(ei, ej))])
            self._mul_table = (
                np.array(mi, dtype=np.int64),
                np.array(mj, dtype=np.int64),
                np.array(mo, dtype=np.int64),
            )
        return self._mul_table

    @property
    def deriv_tables(self):
        if self._deriv_tables is None:
            tables = []
            lower = self.count_through_order[self.order - 1] if self.order > 0 else 0
            for v in range(self.n_vars):
                src, dst, fac = [], [], []
                for i, e in enumerate(self.exponents):
                    if e[v] == 0:
                        continue
                    shifted = list(e)
                    shifted[v] -= 1
                    j = self.index[tuple(shifted)]
                    if j < lower:
                        src.append(i)
                        dst.append(j)
                        fac.append(e[v])
                tables.append(
                    (
                        np.array(src, dtype=np.int64),
                        np.array(dst, dtype=np.int64),
                        np.array(fac, dtype=np.float64),
                    )
                )
            self._deriv_tables = tables
        return self._deriv_tables


def _algebra(n_vars, order):
    key = (n_vars, order)
    alg = _ALGEBRA_CACHE.get(key)
    if alg is None:
        if n_vars < 1 or order < 0:
            raise BadConfig(f"unusable jet space ({n_vars} vars, order {order})")
        alg = _Algebra(n_vars, order)
        _ALGEBRA_CACHE[key] = alg
    return alg


@dataclass(frozen=True)
class MultiIndex:
    """Exponent vector addressing one mixed partial derivative."""

    exponents: tuple[int, ...]

    def __post_init__(self):
        if any((not isinstance(e, int)) or e < 0 for e in self.exponents):
            raise BadConfig(f"multi-index must be non-negative integers: {self.exponents}")

    @property
    def order(self):
        return sum(self.exponents)


@dataclass(frozen=True)
class JetConfig:
    """Dimension and truncation settings for seeded jets.

    ``n`` is the manifold dimension; jets live in 2n variables (x then y).
    ``tolerance`` is an optional pruning threshold used by :meth:`Jet.pruned`.
    """

    n: int
    order: int = 5
    tolerance: float = 0.0

    def __post_init__(self):
        if self.n < 1:
            raise BadConfig(f"dimension must be >= 1, got {self.n}")
        if self.order < 1:
            raise BadConfig(f"truncation order must be >= 1, got {self.order}")
        if self.tolerance < 0:
            raise BadConfig("pruning tolerance must be >= 0")


class Jet:
    """One truncated Taylor expansion; supports arithmetic and composition."""

    __slots__ = ("alg", "coef")

    def __init__(self, alg, coef):
        self.alg = alg
        self.coef = coef

    # --- constructors ---

    @staticmethod
    def constant(alg, value):
        c = np.zeros(alg.size)
        c[0] = float(value)
        return Jet(alg, c)

    @staticmethod
    def variable(alg, var, value):
        c = np.zeros(alg.size)
        c[0] = float(value)
        if alg.order >= 1:
            c[1 + var] = 1.0  # first-order monomials sit right after the constant
        return Jet(alg, c)

    # --- basic queries ---

    @property
    def value(self):
        return float(self.coef[0])

    @property
    def order(self):
        return self.alg.order

    @property
    def n_vars(self):
        return self.alg.n_vars

    def truncated(self, order):
        if order > self.alg.order:
            raise OrderExceeded(
                f"cannot extend order {self.alg.order} jet to order {order}"
            )
        if order == self.alg.order:
            return self
        alg = _algebra(self.alg.n_vars, order)
        return Jet(alg, self.coef[: alg.size].copy())

    def pruned(self, tolerance):
        c = self.coef.copy()
        c[np.abs(c) < tolerance] = 0.0
        return Jet(self.alg, c)

    def __repr__(self):
        return f"Jet(n_vars={self.n_vars}, order={self.order}, value={self.value:.6g})"

    # --- alignment ---

    def _with(self, other):
        """Coerce operands to a common algebra (truncating the deeper one)."""
        if isinstance(other, Jet):
            if other.alg is self.alg:
                return self.alg, self.coef, other.coef
            if other.alg.n_vars != self.alg.n_vars:
                raise ShapeMismatch(
                    f"jets in {self.alg.n_vars} and {other.alg.n_vars} variables"
                )
            order = min(self.alg.order, other.alg.order)
            alg = _algebra(self.alg.n_vars, order)
            return alg, self.coef[: alg.size], other.coef[: alg.size]
        return self.alg, self.coef, None

    # --- ring operations ---

    def __add__(self, other):
        alg, a, b = self._with(other)
        if b is None:
            c = a.copy()
            c[0] += float(other)
            return Jet(alg, c)
        return Jet(alg, a + b)

    __radd__ = __add__

    def __neg__(self):
        return Jet(self.alg, -self.coef)

    def __sub__(self, other):
        return self.__add__(-other if isinstance(other, Jet) else -float(other))

    def __rsub__(self, other):
        return (-self).__add__(float(other))

    def __mul__(self, other):
        alg, a, b = self._with(other)
        if b is None:
            return Jet(alg, a * float(other))
        mi, mj, mo = alg.mul_table
        prod = np.bincount(mo, weights=a[mi] * b[mj], minlength=alg.size)
        return Jet(alg, prod)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self.__mul__(other.reciprocal())
        return self.__mul__(1.0 / float(other))

    def __rtruediv__(self, other):
        return self.reciprocal().__mul__(float(other))

    def __pow__(self, exponent):
        p = float(exponent)
        if p.is_integer():
            return self._int_pow(int(p))
        if self.value <= 0.0:
            raise DomainError(
                f"non-integer power of jet with value {self.value:.6g}"
            )
        a0 = self.value
        series = [a0**p]
        for k in range(1, self.alg.order + 1):
            series.append(series[-1] * (p - (k - 1)) / (k * a0))
        return self._compose(series)

    def _int_pow(self, p):
        if p == 0:
            return Jet.constant(self.alg, 1.0)
        base = self if p > 0 else self.reciprocal()
        m = abs(p)
        out = None
        acc = base
        while m:
            if m & 1:
                out = acc if out is None else out * acc
            m >>= 1
            if m:
                acc = acc * acc
        return out

    # --- composition with univariate series ---

    def _compose(self, series):
        """Horner evaluation of sum series[k] * u^k with u the nilpotent part."""
        u = Jet(self.alg, self.coef.copy())
        u.coef[0] = 0.0
        out = Jet.constant(self.alg, series[-1])
        for k in range(len(series) - 2, -1, -1):
            out = out * u + series[k]
        return out

    def reciprocal(self):
        a0 = self.value
        if a0 == 0.0:
            raise DivisionByZero("division by jet with zero value part")
        series = [1.0 / a0]
        for _ in range(self.alg.order):
            series.append(-series[-1] / a0)
        return self._compose(series)

    def sqrt(self):
        a0 = self.value
        if a0 <= 0.0:
            raise DomainError(f"sqrt of jet with value {a0:.6g}")
        series = [math.sqrt(a0)]
        for k in range(1, self.alg.order + 1):
            series.append(series[-1] * (0.5 - (k - 1)) / (k * a0))
        return self._compose(series)

    def exp(self):
        series = [math.exp(self.value)]
        for k in range(1, self.alg.order + 1):
            series.append(series[-1] / k)
        return self._compose(series)

    def log(self):
        a0 = self.value
        if a0 <= 0.0:
            raise DomainError(f"log of jet with value {a0:.6g}")
        series = [math.log(a0), 1.0 / a0]
        for k in range(2, self.alg.order + 1):
            series.append(-series[-1] * (k - 1) / (k * a0))
        return self._compose(series)

    def sin(self):
        return self._trig(math.sin(self.value), math.cos(self.value))

    def cos(self):
        return self._trig(math.cos(self.value), -math.sin(self.value))

    def _trig(self, f0, f1):
        cycle = (f0, f1, -f0, -f1)
        series = []
        fact = 1.0
        for k in range(self.alg.order + 1):
            if k:
                fact *= k
            series.append(cycle[k % 4] / fact)
        return self._compose(series)

    # --- differentiation and coefficient access ---

    def deriv(self, var):
        """Formal partial derivative; result is exact one order lower."""
        if not 0 <= var < self.alg.n_vars:
            raise ShapeMismatch(f"variable {var} out of range 0..{self.alg.n_vars - 1}")
        if self.alg.order == 0:
            raise OrderExceeded("derivative of an order-0 jet is not determined")
        src, dst, fac = self.alg.deriv_tables[var]
        lower = _algebra(self.alg.n_vars, self.alg.order - 1)
        out = np.zeros(lower.size)
        out[dst] = self.coef[src] * fac
        return Jet(lower, out)

    def coefficient(self, exponents):
        idx = self.alg.index.get(tuple(exponents))
        if idx is None:
            raise OrderExceeded(
                f"multi-index {tuple(exponents)} beyond truncation order {self.alg.order}"
            )
        return float(self.coef[idx])


# --- module-level operations (the stable kernel API) ---

def seed_variables(x0, y0, cfg: JetConfig):
    """Seed coordinate jets for a tangent-bundle point (x0, y0).

    Returns ``(x_jets, y_jets)``, lists of length ``cfg.n``, living in a
    2n-variable jet space of order ``cfg.order``.  The y seed must be a
    nonzero vector because all downstream geometry lives on the slit
    tangent bundle.
    """
    x0 = [float(v) for v in x0]
    y0 = [float(v) for v in y0]
    if len(x0) != cfg.n or len(y0) != cfg.n:
        raise ShapeMismatch(
            f"need {cfg.n} components, got x:{len(x0)} y:{len(y0)}"
        )
    if all(v == 0.0 for v in y0):
        raise ZeroVector("y seed must be nonzero")
    alg = _algebra(2 * cfg.n, cfg.order)
    xj = [Jet.variable(alg, i, x0[i]) for i in range(cfg.n)]
    yj = [Jet.variable(alg, cfg.n + i, y0[i]) for i in range(cfg.n)]
    return xj, yj


def jet_arith(a: Jet, b: Jet, op: str) -> Jet:
    """Strict-config arithmetic: both jets must share n_vars and order."""
    if not (isinstance(a, Jet) and isinstance(b, Jet)):
        raise ShapeMismatch("jet_arith expects two jets")
    if a.alg is not b.alg:
        raise ShapeMismatch(
            f"jet configs differ: ({a.n_vars} vars, K={a.order}) vs "
            f"({b.n_vars} vars, K={b.order})"
        )
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return a / b
    raise BadConfig(f"unknown arithmetic op {op!r}")


_FUNCS = {
    "sqrt": Jet.sqrt,
    "exp": Jet.exp,
    "log": Jet.log,
    "sin": Jet.sin,
    "cos": Jet.cos,
}


def jet_func(a: Jet, name: str, exponent=None) -> Jet:
    """Apply a closed-form function to a jet (sqrt/exp/log/sin/cos/pow_const)."""
    if name == "pow_const":
        if exponent is None:
            raise BadConfig("pow_const requires an exponent")
        return a**exponent
    fn = _FUNCS.get(name)
    if fn is None:
        raise BadConfig(f"unknown jet function {name!r}")
    return fn(a)


def extract_partial(a: Jet, idx) -> float:
    """Read one mixed partial d^alpha f from the jet (factorials restored)."""
    exps = idx.exponents if isinstance(idx, MultiIndex) else tuple(idx)
    if sum(exps) > a.order:
        raise OrderExceeded(
            f"partial of order {sum(exps)} from an order-{a.order} jet"
        )
    if len(exps) != a.n_vars:
        raise ShapeMismatch(f"multi-index has {len(exps)} slots, jet has {a.n_vars}")
    scale = 1.0
    for e in exps:
        scale *= math.factorial(e)
    return a.coefficient(exps) * scale


def smooth(value, name):
    """Apply a named function to a float or a jet uniformly."""
    if isinstance(value, Jet):
        return jet_func(value, name)
    v = float(value)
    if name == "sqrt":
        if v <= 0.0:
            raise DomainError(f"sqrt of {v:.6g}")
        return math.sqrt(v)
    if name == "exp":
        return math.exp(v)
    if name == "log":
        if v <= 0.0:
            raise DomainError(f"log of {v:.6g}")
        return math.log(v)
    if name == "sin":
        return math.sin(v)
    if name == "cos":
        return math.cos(v)
    raise BadConfig(f"unknown function {name!r}")
