"""Metric catalog: build, evaluate, and sanity-check Finsler metrics.

A metric is specified declaratively (family plus parameters, possibly
with coordinate-dependent entries given in the expression language) and
compiled to an evaluator ``F(x, y)`` that accepts floats or jets.

Families:

* ``riemannian``: F = sqrt(a_ij(x) y^i y^j)
* ``randers``:    F = sqrt(a_ij(x) y^i y^j) + b_i(x) y^i
* ``funk``:       unit-ball metric with drift vector ``a``
* ``custom``:     any 1-homogeneous expression in x1..xn, y1..yn

The funk family with ``a = 0`` is defined on the whole open unit ball.
For ``a != 0`` the formula stays finite on the ball but loses strong
convexity where the effective Randers 1-form reaches unit length; the
worst direction gives the bound |x| < 1 - |a|, which is what the chart
declares.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import expr
from .errors import OutOfChart, SingularMetric, SpecError, ZeroVector
from .jets import Jet, smooth

_FAMILIES = ("riemannian", "randers", "funk", "custom")


def _val(v):
    return v.value if isinstance(v, Jet) else float(v)


def _dot(u, v):
    total = u[0] * v[0]
    for i in range(1, len(u)):
        total = total + u[i] * v[i]
    return total


@dataclass(frozen=True)
class Chart:
    """Domain of validity for the x coordinates."""

    kind: str = "all"  # "all" | "ball"
    radius: float = math.inf

    def contains(self, x) -> bool:
        if self.kind == "all":
            return True
        r2 = sum(_val(v) ** 2 for v in x)
        return r2 < self.radius**2

    @property
    def sample_radius(self) -> float:
        """Finite radius usable by samplers even on unbounded charts."""
        return self.radius if math.isfinite(self.radius) else 1.0


@dataclass(frozen=True)
class MetricSpec:
    """Declarative metric description; JSON-serializable."""

    n: int
    family: str
    a: Optional[tuple] = None  # matrix entries: floats or expression strings
    b: Optional[tuple] = None  # covector entries
    drift: Optional[tuple] = None  # funk drift vector
    expression: Optional[str] = None
    constants: Optional[tuple] = None  # ((name, scalar-or-vector-tuple), ...)
    chart_radius: Optional[float] = None
    label: str = ""

    # --- constructors ---

    @staticmethod
    def euclidean(n, label="euclidean"):
        eye = tuple(tuple(1.0 if i == j else 0.0 for j in range(n)) for i in range(n))
        return MetricSpec(n=n, family="riemannian", a=eye, label=label)

    @staticmethod
    def riemannian(n, a, chart_radius=None, label="riemannian"):
        return MetricSpec(
            n=n,
            family="riemannian",
            a=tuple(tuple(row) for row in a),
            chart_radius=chart_radius,
            label=label,
        )

    @staticmethod
    def sphere_chart(n, label="sphere"):
        """Round sphere in the conformal chart a_ij = 4 delta_ij/(1+|x|^2)^2."""
        entry = "4/(1 + abs2(x))^2"
        a = tuple(tuple(entry if i == j else 0.0 for j in range(n)) for i in range(n))
        return MetricSpec(n=n, family="riemannian", a=a, label=label)

    @staticmethod
    def randers(n, a, b, chart_radius=None, label="randers"):
        return MetricSpec(
            n=n,
            family="randers",
            a=tuple(tuple(row) for row in a),
            b=tuple(b),
            chart_radius=chart_radius,
            label=label,
        )

    @staticmethod
    def funk(n, drift=None, label="funk"):
        drift = tuple(0.0 for _ in range(n)) if drift is None else tuple(drift)
        return MetricSpec(n=n, family="funk", drift=drift, label=label)

    @staticmethod
    def custom(n, expression, constants=None, chart_radius=None, label="custom"):
        packed = None
        if constants:
            packed = tuple(
                (k, tuple(v) if hasattr(v, "__len__") else float(v))
                for k, v in sorted(constants.items())
            )
        return MetricSpec(
            n=n,
            family="custom",
            expression=expression,
            constants=packed,
            chart_radius=chart_radius,
            label=label,
        )

    # --- serialization ---

    def to_dict(self):
        out = {"dimension": self.n, "family": self.family}
        if self.label:
            out["label"] = self.label
        if self.a is not None:
            out["a"] = [list(row) for row in self.a]
        if self.b is not None:
            out["b"] = list(self.b)
        if self.drift is not None:
            out["drift"] = list(self.drift)
        if self.expression is not None:
            out["expression"] = self.expression
        if self.constants:
            out["constants"] = {
                k: (list(v) if isinstance(v, tuple) else v) for k, v in self.constants
            }
        if self.chart_radius is not None:
            out["chart_radius"] = self.chart_radius
        return out

    @staticmethod
    def from_dict(d):
        if not isinstance(d, dict):
            raise SpecError("metric spec must be a JSON object")
        try:
            n = int(d["dimension"])
            family = d["family"]
        except KeyError as e:
            raise SpecError(f"metric spec missing key {e}") from e
        if family not in _FAMILIES:
            raise SpecError(f"unknown family {family!r}; expected one of {_FAMILIES}")
        kw = {}
        if "a" in d:
            kw["a"] = tuple(tuple(row) for row in d["a"])
        if "b" in d:
            kw["b"] = tuple(d["b"])
        if "drift" in d or "funk_a" in d:  # "funk_a" is the spec-file spelling
            kw["drift"] = tuple(float(v) for v in d.get("drift", d.get("funk_a")))
        if "expression" in d:
            kw["expression"] = d["expression"]
        if "constants" in d:
            kw["constants"] = tuple(
                (k, tuple(v) if isinstance(v, (list, tuple)) else float(v))
                for k, v in sorted(d["constants"].items())
            )
        if "chart_radius" in d:
            kw["chart_radius"] = float(d["chart_radius"])
        elif "chart" in d:  # {"radius": r} or a bare number
            ch = d["chart"]
            kw["chart_radius"] = float(ch["radius"] if isinstance(ch, dict) else ch)
        return MetricSpec(n=n, family=family, label=d.get("label", ""), **kw)


def _compile_entry(entry, n, where):
    """Compile one matrix/covector entry to a callable of the x jets."""
    if isinstance(entry, (int, float)):
        c = float(entry)
        return lambda env: c
    if not isinstance(entry, str):
        raise SpecError(f"{where}: entry must be a number or an expression string")
    try:
        ast = expr.parse(entry)
    except Exception as e:
        raise SpecError(f"{where}: {e}") from e
    for group, index in expr.variables_used(ast):
        if group == "y":
            raise SpecError(f"{where}: coefficient may not depend on y")
        if index > n:
            raise SpecError(f"{where}: x{index} exceeds dimension {n}")
    return lambda env: expr.evaluate(ast, env)


@dataclass
class MetricInstance:
    """Compiled metric: generic evaluator plus chart metadata."""

    spec: MetricSpec
    n: int
    chart: Chart
    label: str
    _fn: object = field(repr=False)

    def F(self, x, y):
        """Metric value at (x, y); components may be floats or jets."""
        return self._fn(x, y)

    def F2(self, x, y):
        f = self._fn(x, y)
        return f * f

    def describe(self):
        return self.spec.to_dict()


def funk_metric(drift, x, y):
    """Unit-ball metric value; generic over floats and jets.

    F = (sqrt(|y|^2 - (|x|^2 |y|^2 - <x,y>^2)) + <x,y> + <a,y>) / (1 - |x|^2)
    """
    xx = _dot(x, x)
    if _val(xx) >= 1.0:
        raise OutOfChart(f"|x| = {math.sqrt(_val(xx)):.4f} >= 1")
    yy = _dot(y, y)
    xy = _dot(x, y)
    disc = yy - (xx * yy - xy * xy)
    out = smooth(disc, "sqrt") + xy
    if any(float(c) != 0.0 for c in drift):
        out = out + _dot(drift, y)
    return out / (1.0 - xx)


def build_metric(spec: MetricSpec) -> MetricInstance:
    """Validate a spec and compile its evaluator; raises SpecError if bad."""
    n = spec.n
    if n < 1:
        raise SpecError(f"dimension must be >= 1, got {n}")
    if spec.family not in _FAMILIES:
        raise SpecError(f"unknown family {spec.family!r}")

    constants = {}
    if spec.constants:
        for name, v in spec.constants:
            constants[name] = np.asarray(v, dtype=float) if isinstance(v, tuple) else v

    chart = Chart()
    if spec.chart_radius is not None:
        if spec.chart_radius <= 0:
            raise SpecError("chart_radius must be positive")
        chart = Chart("ball", float(spec.chart_radius))

    if spec.family in ("riemannian", "randers"):
        if spec.a is None or len(spec.a) != n or any(len(r) != n for r in spec.a):
            raise SpecError(f"family {spec.family!r} needs an {n}x{n} matrix a")
        for i in range(n):
            for j in range(i + 1, n):
                if spec.a[i][j] != spec.a[j][i]:
                    raise SpecError(f"a[{i}][{j}] != a[{j}][{i}]: matrix must be symmetric")
        a_fns = [
            [_compile_entry(spec.a[i][j], n, f"a[{i}][{j}]") for j in range(n)]
            for i in range(n)
        ]
        b_fns = None
        if spec.family == "randers":
            if spec.b is None or len(spec.b) != n:
                raise SpecError(f"family 'randers' needs a length-{n} covector b")
            b_fns = [_compile_entry(spec.b[i], n, f"b[{i}]") for i in range(n)]

        def fn(x, y, _a=a_fns, _b=b_fns):
            env = expr.EvalEnv(n, tuple(x), tuple(y), constants)
            alpha2 = None
            for i in range(n):
                for j in range(n):
                    aij = _a[i][j](env)
                    if isinstance(aij, float) and aij == 0.0:
                        continue
                    term = aij * y[i] * y[j]
                    alpha2 = term if alpha2 is None else alpha2 + term
            out = smooth(alpha2, "sqrt")
            if _b is not None:
                for i in range(n):
                    bi = _b[i](env)
                    if isinstance(bi, float) and bi == 0.0:
                        continue
                    out = out + bi * y[i]
            return out

        return MetricInstance(spec, n, chart, spec.label or spec.family, fn)

    if spec.family == "funk":
        drift = np.asarray(spec.drift if spec.drift is not None else np.zeros(n), dtype=float)
        if len(drift) != n:
            raise SpecError(f"funk drift must have {n} components")
        d = float(np.linalg.norm(drift))
        if d >= 1.0:
            raise SpecError(f"funk drift must satisfy |a| < 1, got {d:.4f}")
        radius = 1.0 if d == 0.0 else 1.0 - d
        if spec.chart_radius is not None:
            radius = min(radius, spec.chart_radius)

        def fn(x, y, _drift=tuple(drift)):
            return funk_metric(_drift, x, y)

        return MetricInstance(spec, n, Chart("ball", radius), spec.label or "funk", fn)

    # custom
    if not spec.expression:
        raise SpecError("family 'custom' needs an expression")
    try:
        ast = expr.parse(spec.expression)
    except Exception as e:
        raise SpecError(f"expression: {e}") from e
    for group, index in expr.variables_used(ast):
        if index > n:
            raise SpecError(f"expression: {group}{index} exceeds dimension {n}")

    def fn(x, y, _ast=ast):
        return expr.evaluate(_ast, expr.EvalEnv(n, tuple(x), tuple(y), constants))

    return MetricInstance(spec, n, chart, spec.label or "custom", fn)


# --- validation ---

@dataclass
class ValidationReport:
    label: str
    n: int
    samples: int
    seed: int
    tolerance: float
    homogeneity_max: float
    min_eigenvalue: float
    failures: list
    passed: bool

    def summary(self):
        state = "pass" if self.passed else "FAIL"
        return (
            f"{self.label}: {state} ({self.samples} samples, "
            f"homogeneity {self.homogeneity_max:.2e}, min eig {self.min_eigenvalue:.3e}, "
            f"{len(self.failures)} failure(s))"
        )


def sample_chart_points(m: MetricInstance, count, rng, r_range=(0.15, 0.85)):
    """Deterministic chart samples: x in a shell, y on the unit sphere."""
    R = m.chart.sample_radius
    lo, hi = r_range
    pts = []
    for _ in range(count):
        u = rng.normal(size=m.n)
        u /= np.linalg.norm(u)
        r = R * (lo + (hi - lo) * rng.uniform() ** (1.0 / m.n))
        y = rng.normal(size=m.n)
        while np.linalg.norm(y) < 1e-6:
            y = rng.normal(size=m.n)
        y /= np.linalg.norm(y)
        pts.append((r * u, y))
    return pts


def validate(m: MetricInstance, samples=50, seed=0, tolerance=1e-10) -> ValidationReport:
    """Positive homogeneity and strong convexity over random chart samples."""
    from .curvature import PointState, fundamental_tensor  # deferred: layering

    rng = np.random.default_rng(seed)
    failures = []
    homo_max = 0.0
    min_eig = math.inf
    for x, y in sample_chart_points(m, samples, rng):
        try:
            f1 = float(m.F(tuple(x), tuple(y)))
        except Exception as e:  # noqa: BLE001 - report, do not crash
            failures.append({"x": list(x), "y": list(y), "problem": f"evaluation: {e}"})
            continue
        if not f1 > 0.0:
            failures.append({"x": list(x), "y": list(y), "problem": f"F = {f1:.6g} <= 0"})
            continue
        for s in (0.5, 2.0):
            fs = float(m.F(tuple(x), tuple(s * y)))
            resid = abs(fs - s * f1) / (s * abs(f1))
            homo_max = max(homo_max, resid)
            if resid > tolerance:
                failures.append(
                    {"x": list(x), "y": list(y), "problem": f"homogeneity residual {resid:.3e}"}
                )
        try:
            g_blk, _, _, _ = fundamental_tensor(m, PointState(tuple(x), tuple(y)))
            eigs = np.linalg.eigvalsh(g_blk.values)
            min_eig = min(min_eig, float(eigs[0]))
            if eigs[0] <= 0:
                failures.append(
                    {"x": list(x), "y": list(y), "problem": f"min eigenvalue {eigs[0]:.3e} <= 0"}
                )
        except SingularMetric as e:
            ev = e.min_eigenvalue if e.min_eigenvalue is not None else float("nan")
            min_eig = min(min_eig, ev) if not math.isnan(ev) else min_eig
            failures.append({"x": list(x), "y": list(y), "problem": f"singular g: {e}"})
        except Exception as e:  # noqa: BLE001
            failures.append({"x": list(x), "y": list(y), "problem": f"g evaluation: {e}"})
    return ValidationReport(
        label=m.label,
        n=m.n,
        samples=samples,
        seed=seed,
        tolerance=tolerance,
        homogeneity_max=homo_max,
        min_eigenvalue=min_eig if min_eig is not math.inf else float("nan"),
        failures=failures,
        passed=not failures,
    )


# --- built-in corpus used by tests and example scripts ---

_BUILTIN_REGISTRY = {
        "euclidean2": lambda: MetricSpec.euclidean(2, label="euclidean2"),
        "euclidean3": lambda: MetricSpec.euclidean(3, label="euclidean3"),
        "sphere2": lambda: MetricSpec.sphere_chart(2, label="sphere2"),
        "sphere3": lambda: MetricSpec.sphere_chart(3, label="sphere3"),
        "mink-randers3": lambda: MetricSpec.randers(
            3,
            [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            [0.2, 0.0, 0.0],
            label="mink-randers3",
        ),
        "randers3x": lambda: MetricSpec.randers(
            3,
            [
                ["1 + 0.2*abs2(x)" if i == j else 0.0 for j in range(3)]
                for i in range(3)
            ],
            [0.15, 0.0, 0.0],
            label="randers3x",
        ),
        "funk2": lambda: MetricSpec.funk(2, label="funk2"),
        "funk3": lambda: MetricSpec.funk(3, label="funk3"),
        "funk2-drift": lambda: MetricSpec.funk(2, drift=(0.2, 0.0), label="funk2-drift"),
        "quartic2": lambda: MetricSpec.custom(
            2, "(y1^4 + y2^4)^(1/4)", label="quartic2"
        ),
        "abq3": lambda: MetricSpec.custom(
            3,
            "sqrt(abs2(y)) + (0.2*y1)^2/sqrt(abs2(y))",
            label="abq3",
        ),
}

BUILTIN_NAMES = tuple(_BUILTIN_REGISTRY)


def builtin(name: str) -> MetricSpec:
    """Named example specs covering the families and edge behaviors."""
    if name not in _BUILTIN_REGISTRY:
        raise SpecError(f"unknown builtin metric {name!r}")
    return _BUILTIN_REGISTRY[name]()
