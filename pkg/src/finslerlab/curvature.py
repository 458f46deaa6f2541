"""Curvature tower of a Finsler metric at one point of the slit tangent bundle.

Everything is computed from truncated jets of F^2 seeded at (x, y).  A
:class:`FieldScope` owns the seeds and lazily builds named tensor fields
whose entries are jets; public functions extract float-valued blocks.

Conventions (indices i,j,k,...; ``_{.k}`` vertical, ``_{|k}`` horizontal):

* g_ij      = 1/2 d^2 F^2 / dy^i dy^j
* C_ijk     = 1/4 d^3 F^2 / dy^i dy^j dy^k,  I_k = g^{ij} C_ijk
* h_ij      = g_ij - F^{-2} y_i y_j
* G^i       = 1/4 g^{il} (y^k d^2F^2/dx^k dy^l - dF^2/dx^l)
* N^i_j     = dG^i/dy^j,  Gamma^i_jk = dN^i_j/dy^k,  B^i_jkl = dGamma^i_jk/dy^l
* E_jk      = 1/2 B^m_jkm
* R^i_k     = 2 dG^i/dx^k - y^j d^2G^i/dx^j dy^k + 2 G^j Gamma^i_jk - N^i_j N^j_k
* R_j^i_kl  = 1/3 (R^i_{k.l} - R^i_{l.k})_{.j}
* L_ijk     = -1/2 y_m B^m_ijk  (equivalently C_{ijk|s} y^s)
* J_i       = g^{kl} L_ikl      (equivalently I_{i|s} y^s)
* Sigma_ijkl= 2 (L_{ijk|l} - L_{ijl|k})
* K(y, u)   = g(u, R(u)) / (g(y,y) g(u,u) - g(y,u)^2)  with R(u)^i = R^i_k u^k

The horizontal derivative uses the Berwald connection: for a scalar f,
f_{|k} = df/dx^k - N^m_k df/dy^m; tensor slots add/subtract Gamma terms.

Truncation-order ledger (seed order K; a field listed at K-d has exact
values whenever K >= d): g, g_inv, G at K-2; C, I, N at K-3; Gamma, D,
L(C-route), J, R^i_k at K-4; B, E, L(B-route), Sigma, c at K-5; R_j^i_kl
at K-6; its vertical derivative at K-7.  Hence the defaults below.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import (
    BadConfig,
    CrossCheckFailure,
    DegenerateFlag,
    DimensionError,
    OrderExceeded,
    OutOfChart,
    RiemannianPoint,
    ShapeMismatch,
    SingularMetric,
    UndefinedFit,
    ZeroVector,
)
from .jets import Jet, JetConfig, seed_variables

BUNDLE_ORDER = 7

MIN_ORDER = {
    "fundamental": 2,
    "cartan": 3,
    "spray": 4,
    "berwald": 5,
    "riemann": 6,
    "landsberg": 5,
    "mean_landsberg": 5,
    "stretch": 5,
    "flag": 4,
    "bundle": 6,
}

ROUTE_TOLERANCE = 1e-6  # agreement required between independent routes


@dataclass(frozen=True)
class PointState:
    """A point (x, y) of the slit tangent bundle."""

    x: tuple
    y: tuple

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in self.x))
        object.__setattr__(self, "y", tuple(float(v) for v in self.y))
        if len(self.x) != len(self.y):
            raise ShapeMismatch(f"x has {len(self.x)} components, y has {len(self.y)}")
        if all(v == 0.0 for v in self.y):
            raise ZeroVector("y must be nonzero")

    @property
    def n(self):
        return len(self.x)


@dataclass
class TensorBlock:
    """Float-valued tensor components plus slot variance metadata."""

    name: str
    values: np.ndarray
    valence: tuple

    @property
    def norm(self):
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0


@dataclass
class SprayData:
    G: np.ndarray       # spray coefficients G^i
    N: np.ndarray       # nonlinear connection N^i_j
    Gamma: np.ndarray   # Berwald connection Gamma^i_jk


def rel_residual(lhs, rhs=None, floor=1e-12):
    """Max-norm difference normalized by the larger of the two operands."""
    lhs = np.asarray(lhs, dtype=float)
    rhs = np.zeros_like(lhs) if rhs is None else np.asarray(rhs, dtype=float)
    scale = max(float(np.max(np.abs(lhs))), float(np.max(np.abs(rhs))), floor)
    return float(np.max(np.abs(lhs - rhs))) / scale


def _values(obj):
    if isinstance(obj, Jet):
        return obj.value
    out = np.empty(obj.shape)
    for idx in np.ndindex(obj.shape):
        out[idx] = obj[idx].value
    return out


def _matmul(A, B):
    rows, inner = A.shape
    cols = B.shape[1]
    out = np.empty((rows, cols), dtype=object)
    for i in range(rows):
        for j in range(cols):
            acc = A[i, 0] * B[0, j]
            for k in range(1, inner):
                acc = acc + A[i, k] * B[k, j]
            out[i, j] = acc
    return out


class FieldScope:
    """Lazy cache of jet-valued tensor fields at one bundle point."""

    def __init__(self, metric, point: PointState, order: int):
        if order < 2:
            raise BadConfig(f"scope order must be >= 2, got {order}")
        if point.n != metric.n:
            raise ShapeMismatch(
                f"point has dimension {point.n}, metric has {metric.n}"
            )
        if not metric.chart.contains(point.x):
            raise OutOfChart(f"x = {point.x} outside metric chart")
        self.metric = metric
        self.point = point
        self.order = order
        self.n = metric.n
        cfg = JetConfig(n=self.n, order=order)
        self.xj, self.yj = seed_variables(point.x, point.y, cfg)
        self._cache = {}

    # --- variable bookkeeping ---

    def _xv(self, i):
        return i

    def _yv(self, i):
        return self.n + i

    def field(self, name):
        if name not in self._cache:
            builder = getattr(self, "_build_" + name, None)
            if builder is None:
                raise BadConfig(f"unknown field {name!r}")
            self._cache[name] = builder()
        return self._cache[name]

    def values(self, name):
        return _values(self.field(name))

    # --- derivative operators ---

    def vderiv(self, T):
        """Vertical derivative: one extra lower y-slot."""
        n = self.n
        if isinstance(T, Jet):
            out = np.empty((n,), dtype=object)
            for m in range(n):
                out[m] = T.deriv(self._yv(m))
            return out
        out = np.empty(T.shape + (n,), dtype=object)
        for idx in np.ndindex(T.shape):
            jet = T[idx]
            for m in range(n):
                out[idx + (m,)] = jet.deriv(self._yv(m))
        return out

    def hderiv(self, T, valence=()):
        """Horizontal (Berwald) derivative: one extra lower slot.

        ``valence`` must describe T's existing slots ("up"/"lo") so the
        connection terms get the right sign.
        """
        n = self.n
        N = self.field("N")
        if isinstance(T, Jet):
            out = np.empty((n,), dtype=object)
            dy = [T.deriv(self._yv(m)) for m in range(n)]
            for k in range(n):
                acc = T.deriv(self._xv(k))
                for m in range(n):
                    acc = acc - N[m, k] * dy[m]
                out[k] = acc
            return out
        if len(valence) != T.ndim:
            raise ShapeMismatch(
                f"valence has {len(valence)} slots, tensor has {T.ndim}"
            )
        Gamma = self.field("Gamma")
        out = np.empty(T.shape + (n,), dtype=object)
        for idx in np.ndindex(T.shape):
            jet = T[idx]
            dx = [jet.deriv(self._xv(k)) for k in range(n)]
            dy = [jet.deriv(self._yv(m)) for m in range(n)]
            for k in range(n):
                acc = dx[k]
                for m in range(n):
                    acc = acc - N[m, k] * dy[m]
                for slot, kind in enumerate(valence):
                    s = idx[slot]
                    for m in range(n):
                        jdx = idx[:slot] + (m,) + idx[slot + 1:]
                        if kind == "up":
                            acc = acc + T[jdx] * Gamma[s, m, k]
                        else:
                            acc = acc - T[jdx] * Gamma[m, s, k]
                out[idx + (k,)] = acc
        return out

    def directional(self, T, valence=()):
        """Contraction T_{...|s} y^s of the horizontal derivative."""
        H = self.hderiv(T, valence)
        n = self.n
        if isinstance(T, Jet):
            acc = H[0] * self.yj[0]
            for s in range(1, n):
                acc = acc + H[s] * self.yj[s]
            return acc
        out = np.empty(T.shape, dtype=object)
        for idx in np.ndindex(T.shape):
            acc = H[idx + (0,)] * self.yj[0]
            for s in range(1, n):
                acc = acc + H[idx + (s,)] * self.yj[s]
            out[idx] = acc
        return out

    # --- field builders (lazy, cached) ---

    def _build_F(self):
        f = self.metric.F(self.xj, self.yj)
        if not isinstance(f, Jet):
            raise BadConfig("metric evaluator did not propagate jets")
        if not f.value > 0.0:
            raise SingularMetric(f"F(x, y) = {f.value:.6g} is not positive")
        return f

    def _build_F2(self):
        f = self.field("F")
        return f * f

    def _build_recF(self):
        return self.field("F").reciprocal()

    def _build_recF2(self):
        return self.field("F2").reciprocal()

    def _build_g(self):
        n = self.n
        F2 = self.field("F2")
        d1 = [F2.deriv(self._yv(i)) for i in range(n)]
        g = np.empty((n, n), dtype=object)
        for i in range(n):
            for j in range(i, n):
                gij = d1[i].deriv(self._yv(j)) * 0.5
                g[i, j] = gij
                g[j, i] = gij
        return g

    def _build_g0(self):
        g0 = _values(self.field("g"))
        scale = max(float(np.max(np.abs(g0))), 1.0)
        eigs = np.linalg.eigvalsh(g0)
        if eigs[0] <= 1e-12 * scale:
            raise SingularMetric(
                f"fundamental tensor not positive definite at {self.point.x}, "
                f"{self.point.y}: min eigenvalue {eigs[0]:.3e}",
                min_eigenvalue=float(eigs[0]),
            )
        return g0

    def _build_ginv0(self):
        return np.linalg.inv(self.field("g0"))

    def _build_g_inv(self):
        """Inverse metric as jets: Horner form of the Neumann series.

        With g = g0 + dev (dev has zero constant part), the truncated
        inverse is sum_k (-g0^{-1} dev)^k g0^{-1}; dev is nilpotent in
        the jet ring so `order` Horner steps are exact.
        """
        n = self.n
        g = self.field("g")
        inv0 = self.field("ginv0")
        alg = g[0, 0].alg
        base = np.empty((n, n), dtype=object)
        M = np.empty((n, n), dtype=object)
        for i in range(n):
            for j in range(n):
                base[i, j] = Jet.constant(alg, inv0[i, j])
        for i in range(n):
            for j in range(n):
                acc = None
                for k in range(n):
                    dev = g[k, j] - g[k, j].value
                    term = (-inv0[i, k]) * dev
                    acc = term if acc is None else acc + term
                M[i, j] = acc
        X = base
        for _ in range(alg.order):
            X = _matmul(M, X)
            for i in range(n):
                for j in range(n):
                    X[i, j] = base[i, j] + X[i, j]
        return X

    def _build_ylow(self):
        n = self.n
        g = self.field("g")
        out = np.empty((n,), dtype=object)
        for i in range(n):
            acc = g[i, 0] * self.yj[0]
            for j in range(1, n):
                acc = acc + g[i, j] * self.yj[j]
            out[i] = acc
        return out

    def _build_h(self):
        n = self.n
        g = self.field("g")
        ylow = self.field("ylow")
        rec = self.field("recF2")
        out = np.empty((n, n), dtype=object)
        for i in range(n):
            for j in range(i, n):
                hij = g[i, j] - ylow[i] * ylow[j] * rec
                out[i, j] = hij
                out[j, i] = hij
        return out

    def _build_C(self):
        n = self.n
        F2 = self.field("F2")
        out = np.empty((n, n, n), dtype=object)
        for i in range(n):
            di = F2.deriv(self._yv(i))
            for j in range(i, n):
                dij = di.deriv(self._yv(j))
                for k in range(j, n):
                    val = dij.deriv(self._yv(k)) * 0.25
                    for p in set(itertools.permutations((i, j, k))):
                        out[p] = val
        return out

    def _build_I(self):
        n = self.n
        g_inv = self.field("g_inv")
        C = self.field("C")
        out = np.empty((n,), dtype=object)
        for k in range(n):
            acc = None
            for i in range(n):
                for j in range(n):
                    term = g_inv[i, j] * C[i, j, k]
                    acc = term if acc is None else acc + term
            out[k] = acc
        return out

    def _build_G(self):
        n = self.n
        F2 = self.field("F2")
        g_inv = self.field("g_inv")
        dx = [F2.deriv(self._xv(k)) for k in range(n)]
        brk = []
        for l in range(n):
            acc = None
            for k in range(n):
                term = dx[k].deriv(self._yv(l)) * self.yj[k]
                acc = term if acc is None else acc + term
            brk.append(acc - dx[l])
        out = np.empty((n,), dtype=object)
        for i in range(n):
            acc = g_inv[i, 0] * brk[0]
            for l in range(1, n):
                acc = acc + g_inv[i, l] * brk[l]
            out[i] = acc * 0.25
        return out

    def _build_N(self):
        n = self.n
        G = self.field("G")
        out = np.empty((n, n), dtype=object)
        for i in range(n):
            for j in range(n):
                out[i, j] = G[i].deriv(self._yv(j))
        return out

    def _build_Gamma(self):
        n = self.n
        N = self.field("N")
        out = np.empty((n, n, n), dtype=object)
        for i in range(n):
            for j in range(n):
                dij = N[i, j]
                for k in range(j, n):
                    val = dij.deriv(self._yv(k))
                    out[i, j, k] = val
                    out[i, k, j] = val
        return out

    def _build_B(self):
        n = self.n
        Gamma = self.field("Gamma")
        out = np.empty((n, n, n, n), dtype=object)
        for i in range(n):
            for j in range(n):
                for k in range(j, n):
                    base = Gamma[i, j, k]
                    for l in range(k, n):
                        val = base.deriv(self._yv(l))
                        for p in set(itertools.permutations((j, k, l))):
                            out[(i,) + p] = val
        return out

    def _build_E(self):
        n = self.n
        B = self.field("B")
        out = np.empty((n, n), dtype=object)
        for j in range(n):
            for k in range(j, n):
                acc = B[0, j, k, 0]
                for m in range(1, n):
                    acc = acc + B[m, j, k, m]
                val = acc * 0.5
                out[j, k] = val
                out[k, j] = val
        return out

    def _build_R1(self):
        n = self.n
        G = self.field("G")
        N = self.field("N")
        Gamma = self.field("Gamma")
        dxG = [[G[i].deriv(self._xv(k)) for k in range(n)] for i in range(n)]
        out = np.empty((n, n), dtype=object)
        for i in range(n):
            for k in range(n):
                acc = dxG[i][k] * 2.0
                for j in range(n):
                    acc = acc - dxG[i][j].deriv(self._yv(k)) * self.yj[j]
                    acc = acc + (G[j] * Gamma[i, j, k]) * 2.0
                    acc = acc - N[i, j] * N[j, k]
                out[i, k] = acc
        return out

    def _build_Rhh(self):
        n = self.n
        R1 = self.field("R1")
        dR1 = [
            [[R1[i, k].deriv(self._yv(l)) for l in range(n)] for k in range(n)]
            for i in range(n)
        ]
        out = np.empty((n, n, n, n), dtype=object)
        third = 1.0 / 3.0
        zero = None
        for i in range(n):
            for k in range(n):
                for l in range(k + 1, n):
                    A = dR1[i][k][l] - dR1[i][l][k]
                    for j in range(n):
                        val = A.deriv(self._yv(j)) * third
                        out[i, j, k, l] = val
                        out[i, j, l, k] = -1.0 * val
                        if zero is None:
                            zero = val * 0.0
        if zero is None:  # n == 1: no antisymmetric pairs exist
            zero = dR1[0][0][0].deriv(self._yv(0)) * 0.0
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    out[i, j, k, k] = zero
        return out

    def _build_RhhV(self):
        # vertical derivative of R_j^i_kl; axes (i, j, k, l, m)
        return self.vderiv(self.field("Rhh"))

    def _build_Ch(self):
        return self.hderiv(self.field("C"), ("lo", "lo", "lo"))

    def _build_L_C(self):
        # L_ijk = C_{ijk|s} y^s
        return self._contract_last(self.field("Ch"))

    def _build_L_B(self):
        n = self.n
        ylow = self.field("ylow")
        B = self.field("B")
        out = np.empty((n, n, n), dtype=object)
        for i in range(n):
            for j in range(i, n):
                for k in range(j, n):
                    acc = ylow[0] * B[0, i, j, k]
                    for m in range(1, n):
                        acc = acc + ylow[m] * B[m, i, j, k]
                    val = acc * (-0.5)
                    for p in set(itertools.permutations((i, j, k))):
                        out[p] = val
        return out

    def _build_Lh(self):
        return self.hderiv(self.field("L_C"), ("lo", "lo", "lo"))

    def _build_Sigma(self):
        n = self.n
        Lh = self.field("Lh")
        out = np.empty((n, n, n, n), dtype=object)
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    for l in range(k, n):
                        val = (Lh[i, j, k, l] - Lh[i, j, l, k]) * 2.0
                        out[i, j, k, l] = val
                        out[i, j, l, k] = -1.0 * val
        return out

    def _build_D(self):
        # D_ijkl = C_{ijk|l} - C_{ijl|k}; the stretch tensor is 2*(D h-shifted)
        n = self.n
        Ch = self.field("Ch")
        out = np.empty((n, n, n, n), dtype=object)
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    for l in range(k, n):
                        val = Ch[i, j, k, l] - Ch[i, j, l, k]
                        out[i, j, k, l] = val
                        out[i, j, l, k] = -1.0 * val
        return out

    def _build_J_L(self):
        n = self.n
        g_inv = self.field("g_inv")
        L = self.field("L_B")
        out = np.empty((n,), dtype=object)
        for i in range(n):
            acc = None
            for k in range(n):
                for l in range(n):
                    term = g_inv[k, l] * L[i, k, l]
                    acc = term if acc is None else acc + term
            out[i] = acc
        return out

    def _build_Ih(self):
        return self.hderiv(self.field("I"), ("lo",))

    def _build_J_I(self):
        # J_i = I_{i|s} y^s
        return self._contract_last(self.field("Ih"))

    def _build_phi(self):
        """phi = L^{ijk} L_ijk (squared norm of the Landsberg tensor)."""
        n = self.n
        g_inv = self.field("g_inv")
        L = self.field("L_C")
        T = L
        for _ in range(3):
            # raise the leading slot, then cycle it to the back
            raised = np.empty((n, n, n), dtype=object)
            for a in range(n):
                for b in range(n):
                    for c in range(n):
                        acc = g_inv[a, 0] * T[0, b, c]
                        for s in range(1, n):
                            acc = acc + g_inv[a, s] * T[s, b, c]
                        raised[b, c, a] = acc
            T = raised
        acc = None
        for idx in np.ndindex((n, n, n)):
            term = T[idx] * L[idx]
            acc = term if acc is None else acc + term
        return acc

    # --- two-dimensional frame fields and scalar ratios ---

    def _build_frame2(self):
        """Orthonormal frame (ell, m) with ell = y/F, det[ell m] > 0; jets."""
        if self.n != 2:
            raise DimensionError(f"frame needs n = 2, got n = {self.n}")
        g = self.field("g")
        recF = self.field("recF")
        ell = np.empty(2, dtype=object)
        for i in range(2):
            ell[i] = self.yj[i] * recF
        y = np.asarray(self.point.y)
        k0 = int(np.argmin(np.abs(y)))  # seed axis least aligned with y
        glu = g[0, k0] * ell[0] + g[1, k0] * ell[1]
        mt = np.empty(2, dtype=object)
        for i in range(2):
            mt[i] = (1.0 if i == k0 else 0.0) + (-1.0) * glu * ell[i]
        nrm2 = None
        for i in range(2):
            for j in range(2):
                term = g[i, j] * mt[i] * mt[j]
                nrm2 = term if nrm2 is None else nrm2 + term
        inv = nrm2 ** (-0.5)
        m = np.empty(2, dtype=object)
        for i in range(2):
            m[i] = mt[i] * inv
        if ell[0].value * m[1].value - ell[1].value * m[0].value < 0:
            for i in range(2):
                m[i] = (-1.0) * m[i]
        return ell, m

    def _build_I2(self):
        """Principal scalar of a 2-D metric: I with C = F^-1 I m x m x m."""
        _, m = self.field("frame2")
        C = self.field("C")
        acc = None
        for i in range(2):
            for j in range(2):
                for k in range(2):
                    term = C[i, j, k] * m[i] * m[j] * m[k]
                    acc = term if acc is None else acc + term
        return self.field("F") * acc

    def _build_mu2(self):
        """mu = I_{|s} y^s / (F I), the log-derivative of the principal scalar."""
        I2 = self.field("I2")
        if abs(I2.value) < 1e-8:
            raise RiemannianPoint(
                f"principal scalar {I2.value:.3e} is numerically zero"
            )
        num = self.directional(I2)
        return num * self.field("recF") * I2.reciprocal()

    def _build_cratio(self):
        """Pointwise stretch ratio c with Sigma = c F (C_{ijk|l} - C_{ijl|k})."""
        n = self.n
        S = self.field("Sigma")
        D = self.field("D")
        F = self.field("F")
        num = None
        den = None
        for idx in np.ndindex((n,) * 4):
            FD = F * D[idx]
            t1 = S[idx] * FD
            t2 = FD * FD
            num = t1 if num is None else num + t1
            den = t2 if den is None else den + t2
        nscale = abs(num.value)
        if den.value <= (1e-8 * (1.0 + nscale)) ** 2 and den.value < 1e-12:
            raise UndefinedFit(
                "stretch-ratio design tensor F(C_{|l} - C_{|k}) is numerically zero"
            )
        return num / den

    def _contract_last(self, H):
        """Contract the trailing slot of a jet tensor with y."""
        n = self.n
        shape = H.shape[:-1]
        out = np.empty(shape, dtype=object)
        for idx in np.ndindex(shape):
            acc = H[idx + (0,)] * self.yj[0]
            for s in range(1, n):
                acc = acc + H[idx + (s,)] * self.yj[s]
            out[idx] = acc
        return out

    def contract_y(self, T, slot):
        """Contract one slot of a jet tensor with the y jets."""
        n = self.n
        shape = T.shape[:slot] + T.shape[slot + 1:]
        out = np.empty(shape, dtype=object)
        for idx in np.ndindex(shape):
            full = idx[:slot] + (0,) + idx[slot:]
            acc = T[full] * self.yj[0]
            for s in range(1, n):
                full = idx[:slot] + (s,) + idx[slot:]
                acc = acc + T[full] * self.yj[s]
            out[idx] = acc
        return out


# --- public extraction API ---

def point_scope(metric, point, order=BUNDLE_ORDER) -> FieldScope:
    point = point if isinstance(point, PointState) else PointState(*point)
    return FieldScope(metric, point, order)


def _ensure_scope(metric, point, scope, op):
    need = MIN_ORDER[op]
    if scope is None:
        return point_scope(metric, point, need)
    if scope.order < need:
        raise OrderExceeded(
            f"{op} needs seed order >= {need}, scope has {scope.order}"
        )
    return scope


def fundamental_tensor(metric, point, scope=None):
    """Returns (g, g_inv, h, F) at the point; raises SingularMetric if not PD."""
    scope = _ensure_scope(metric, point, scope, "fundamental")
    g0 = scope.field("g0")
    ginv0 = scope.field("ginv0")
    h0 = scope.values("h")
    F = scope.field("F").value
    return (
        TensorBlock("g", g0.copy(), ("lo", "lo")),
        TensorBlock("g_inv", ginv0.copy(), ("up", "up")),
        TensorBlock("h", h0, ("lo", "lo")),
        F,
    )


def cartan_tensor(metric, point, scope=None):
    """Returns (C, I): the Cartan tensor and its mean."""
    scope = _ensure_scope(metric, point, scope, "cartan")
    return (
        TensorBlock("C", scope.values("C"), ("lo", "lo", "lo")),
        TensorBlock("I", scope.values("I"), ("lo",)),
    )


def spray(metric, point, scope=None) -> SprayData:
    scope = _ensure_scope(metric, point, scope, "spray")
    return SprayData(
        G=scope.values("G"),
        N=scope.values("N"),
        Gamma=scope.values("Gamma"),
    )


def spray_values(metric, x, y, with_N=False):
    """Fast G (optionally N) extraction for ODE right-hand sides."""
    scope = point_scope(metric, PointState(tuple(x), tuple(y)), 3 if with_N else 2)
    if with_N:
        return scope.values("G"), scope.values("N")
    return scope.values("G")


def berwald_curvature(metric, point, scope=None):
    """Returns (B, E): Berwald curvature and its mean."""
    scope = _ensure_scope(metric, point, scope, "berwald")
    return (
        TensorBlock("B", scope.values("B"), ("up", "lo", "lo", "lo")),
        TensorBlock("E", scope.values("E"), ("lo", "lo")),
    )


def riemann_curvature(metric, point, scope=None):
    """Returns (R1, Rhh): y-Riemann curvature R^i_k and hh-curvature R_j^i_kl."""
    scope = _ensure_scope(metric, point, scope, "riemann")
    return (
        TensorBlock("R1", scope.values("R1"), ("up", "lo")),
        TensorBlock("Rhh", scope.values("Rhh"), ("up", "lo", "lo", "lo")),
    )


def landsberg_tensor(metric, point, scope=None, check=True):
    """Landsberg tensor via the spray route, cross-checked against C_{|s}y^s."""
    scope = _ensure_scope(metric, point, scope, "landsberg")
    LB = scope.values("L_B")
    if check:
        LC = scope.values("L_C")
        resid = rel_residual(LB, LC, floor=max(1.0, float(np.max(np.abs(LB)))))
        if resid > ROUTE_TOLERANCE:
            raise CrossCheckFailure(
                f"Landsberg routes disagree: relative residual {resid:.3e}"
            )
    return TensorBlock("L", LB, ("lo", "lo", "lo"))


def mean_landsberg(metric, point, scope=None, check=True):
    """Mean Landsberg J via the trace route, cross-checked against I_{|s}y^s."""
    scope = _ensure_scope(metric, point, scope, "mean_landsberg")
    JL = scope.values("J_L")
    if check:
        JI = scope.values("J_I")
        resid = rel_residual(JL, JI, floor=max(1.0, float(np.max(np.abs(JL)))))
        if resid > ROUTE_TOLERANCE:
            raise CrossCheckFailure(
                f"mean Landsberg routes disagree: relative residual {resid:.3e}"
            )
    return TensorBlock("J", JL, ("lo",))


def stretch_tensor(metric, point, scope=None):
    """Stretch tensor Sigma_ijkl = 2(L_{ijk|l} - L_{ijl|k})."""
    scope = _ensure_scope(metric, point, scope, "stretch")
    return TensorBlock("Sigma", scope.values("Sigma"), ("lo",) * 4)


def flag_curvature(metric, point, u, scope=None):
    """Sectional (flag) curvature of the plane span(y, u) with pole y."""
    scope = _ensure_scope(metric, point, scope, "flag")
    n = scope.n
    u = np.asarray(u, dtype=float)
    if u.shape != (n,):
        raise ShapeMismatch(f"flag vector needs {n} components")
    g0 = scope.field("g0")
    R1 = scope.values("R1")
    y = np.asarray(scope.point.y)
    gyy = float(y @ g0 @ y)
    guu = float(u @ g0 @ u)
    gyu = float(y @ g0 @ u)
    denom = gyy * guu - gyu * gyu
    if denom <= 1e-10 * max(gyy * guu, 1e-30):
        raise DegenerateFlag(
            f"flag span(y, u) is degenerate: Gram determinant ratio "
            f"{denom / max(gyy * guu, 1e-30):.3e}"
        )
    num = float(u @ g0 @ (R1 @ u))
    return num / denom


_DERIV_FIELDS = {
    "F": ("F", ()),
    "F2": ("F2", ()),
    "g": ("g", ("lo", "lo")),
    "C": ("C", ("lo", "lo", "lo")),
    "I": ("I", ("lo",)),
    "L": ("L_C", ("lo", "lo", "lo")),
    "J": ("J_I", ("lo",)),
    "E": ("E", ("lo", "lo")),
    "Sigma": ("Sigma", ("lo",) * 4),
}


def horizontal_derivative(metric, point, name, scope=None):
    """Berwald-horizontal derivative of a named field; trailing slot is new."""
    if name not in _DERIV_FIELDS:
        raise BadConfig(
            f"no horizontal-derivative rule for {name!r}; "
            f"known: {sorted(_DERIV_FIELDS)}"
        )
    key, valence = _DERIV_FIELDS[name]
    scope = _ensure_scope(metric, point, scope, "bundle") if scope is None else scope
    H = scope.hderiv(scope.field(key), valence)
    return TensorBlock(name + "_h", _values(H), valence + ("lo",))


def vertical_derivative(metric, point, name, scope=None):
    if name not in _DERIV_FIELDS:
        raise BadConfig(f"no vertical-derivative rule for {name!r}")
    key, valence = _DERIV_FIELDS[name]
    scope = _ensure_scope(metric, point, scope, "cartan") if scope is None else scope
    V = scope.vderiv(scope.field(key))
    return TensorBlock(name + "_v", _values(V), valence + ("lo",))


@dataclass
class CurvatureBundle:
    """Every curvature block at one point, plus route diagnostics."""

    point: PointState
    label: str
    order: int
    F: float
    g: TensorBlock
    g_inv: TensorBlock
    h: TensorBlock
    C: TensorBlock
    I: TensorBlock
    spray: SprayData
    B: TensorBlock
    E: TensorBlock
    R1: TensorBlock
    Rhh: TensorBlock
    L: TensorBlock
    J: TensorBlock
    Sigma: TensorBlock
    diagnostics: dict
    scope: FieldScope = dc_field(repr=False, default=None)

    def block(self, name):
        return getattr(self, name)

    def to_dict(self):
        out = {
            "label": self.label,
            "x": list(self.point.x),
            "y": list(self.point.y),
            "order": self.order,
            "F": self.F,
            "diagnostics": dict(self.diagnostics),
        }
        for name in ("g", "g_inv", "h", "C", "I", "B", "E", "R1", "Rhh", "L", "J", "Sigma"):
            out[name] = self.block(name).values.tolist()
        out["G"] = self.spray.G.tolist()
        out["N"] = self.spray.N.tolist()
        out["Gamma"] = self.spray.Gamma.tolist()
        return out


def curvature_bundle(metric, point, order=BUNDLE_ORDER, scope=None) -> CurvatureBundle:
    """Evaluate the full tower at one point, with route cross-checks.

    Needs order >= 6; the stretch-vs-hh-curvature diagnostic additionally
    needs order >= 7 and reports None below that.
    """
    point = point if isinstance(point, PointState) else PointState(*point)
    if scope is None:
        if order < MIN_ORDER["bundle"]:
            raise OrderExceeded(f"bundle needs seed order >= 6, got {order}")
        scope = FieldScope(metric, point, order)
    g, g_inv, h, F = fundamental_tensor(metric, point, scope)
    C, I = cartan_tensor(metric, point, scope)
    spr = spray(metric, point, scope)
    B, E = berwald_curvature(metric, point, scope)
    R1, Rhh = riemann_curvature(metric, point, scope)
    L = landsberg_tensor(metric, point, scope, check=False)
    J = mean_landsberg(metric, point, scope, check=False)
    Sigma = stretch_tensor(metric, point, scope)

    y = np.asarray(point.y)
    n = scope.n
    diag = {}

    # F is horizontally constant; strong wiring check on G and N.
    Fh = _values(scope.hderiv(scope.field("F")))
    diag["horizontal_F"] = float(np.max(np.abs(Fh))) / F

    diag["cartan_y_trace"] = rel_residual(
        np.einsum("i,ijk->jk", y, C.values), floor=max(C.norm, 1.0)
    )
    diag["landsberg_y_trace"] = rel_residual(
        np.einsum("i,ijk->jk", y, L.values), floor=max(L.norm, 1.0)
    )
    diag["landsberg_routes"] = rel_residual(
        L.values, scope.values("L_C"), floor=max(L.norm, 1.0)
    )
    diag["mean_landsberg_routes"] = rel_residual(
        J.values, scope.values("J_I"), floor=max(J.norm, 1.0)
    )
    # y^j y^l R_j^i_kl recovers R^i_k
    diag["riemann_y_trace"] = rel_residual(
        np.einsum("j,l,ijkl->ik", y, y, Rhh.values), R1.values,
        floor=max(R1.norm, 1.0),
    )
    if scope.order >= 7:
        RhhV = _values(scope.field("RhhV"))
        ylow0 = _values(scope.field("ylow"))
        sigma_b = np.einsum("i,ijklm->jmkl", ylow0, RhhV)
        diag["stretch_bianchi"] = rel_residual(
            Sigma.values, sigma_b, floor=max(Sigma.norm, 1.0)
        )
    else:
        diag["stretch_bianchi"] = None

    return CurvatureBundle(
        point=point,
        label=getattr(metric, "label", ""),
        order=scope.order,
        F=F,
        g=g,
        g_inv=g_inv,
        h=h,
        C=C,
        I=I,
        spray=spr,
        B=B,
        E=E,
        R1=R1,
        Rhh=Rhh,
        L=L,
        J=J,
        Sigma=Sigma,
        diagnostics=diag,
        scope=scope,
    )
