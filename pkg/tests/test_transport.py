"""Geodesic integration, parallel transport, loop holonomy, scalar flows.

Oracles used here:
  * Euclidean geodesics are straight lines with constant velocity.
  * On the conformal round-sphere chart, the geodesic leaving the origin
    with unit speed along a direction d is x(t) = tan(t/2) d.
  * The projectively flat ball metric (funk family) keeps rays through
    the origin straight, and F(x, xdot) is a first integral of every
    spray; F(x, V) is conserved by nonlinear transport and g_y(V, V) by
    linear transport along geodesics (both hold for arbitrary metrics).
  * Locally Minkowski metrics have a vanishing connection, so every
    transport is the identity and loop defects are exactly zero.
  * Riemannian transport is metric, so both parallelogram channels sit
    at integrator noise; the probe channel of a genuinely stretching
    metric scales like eps^2.
"""

import numpy as np
import pytest

from finslerlab.errors import (
    BadConfig,
    ChartExit,
    OutOfChart,
    ShapeMismatch,
    StepFailure,
    ZeroVector,
)
from finslerlab.metrics import MetricSpec, build_metric, builtin
from finslerlab.transport import (
    integrate_geodesic,
    parallel_transport,
    parallelogram_holonomy,
    scalar_flows,
)


@pytest.fixture(scope="module")
def funk2():
    return build_metric(builtin("funk2"))


@pytest.fixture(scope="module")
def sphere2():
    return build_metric(builtin("sphere2"))


@pytest.fixture(scope="module")
def funk2_geodesic(funk2):
    return integrate_geodesic(funk2, (0.1, -0.2), (0.5, 0.3), 1.2)


# --- geodesics ---


def test_euclid_straight_line():
    m = build_metric(builtin("euclidean2"))
    x0, y0 = np.array([0.3, -1.0]), np.array([0.7, 0.4])
    g = integrate_geodesic(m, x0, y0, 2.5)
    for t in np.linspace(0.0, 2.5, 7):
        x, y = g.state(t)
        assert np.max(np.abs(x - (x0 + t * y0))) < 1e-10
        assert np.max(np.abs(y - y0)) < 1e-10
    assert g.F_drift < 1e-12


def test_time_labels_with_pair_span():
    m = build_metric(builtin("euclidean2"))
    g = integrate_geodesic(m, (0.0, 0.0), (1.0, 0.0), (2.0, 3.5))
    assert g.t[0] == 2.0
    assert g.t_final == pytest.approx(3.5)
    x, _ = g.state(2.0)
    assert np.max(np.abs(x)) < 1e-14
    x, _ = g.state(3.5)
    assert x[0] == pytest.approx(1.5, abs=1e-10)


def test_unit_speed_normalization(funk2):
    g = integrate_geodesic(funk2, (0.1, -0.2), (0.5, 0.3), 1.0, unit_speed=True)
    assert g.F0 == 1.0
    assert g.unit_speed
    x, y = g.state(0.4)
    assert float(funk2.F(tuple(x), tuple(y))) == pytest.approx(1.0, abs=1e-7)


def test_funk_center_ray(funk2):
    d = np.array([0.6, 0.8])
    g = integrate_geodesic(funk2, (0.0, 0.0), d, 1.5)
    for t in np.linspace(0.1, 1.5, 6):
        x, y = g.state(t)
        assert abs(x[0] * d[1] - x[1] * d[0]) < 1e-6   # stays on the ray
        assert abs(y[0] * d[1] - y[1] * d[0]) < 1e-6
    r = np.linalg.norm(g.x, axis=1)
    assert np.all(np.diff(r) > 0)                      # moves outward, stays bounded
    assert r[-1] < 1.0


def test_sphere_chart_great_circle(sphere2):
    d = np.array([1.0, 0.0])
    g = integrate_geodesic(sphere2, (0.0, 0.0), d / 2.0, 1.8)  # F(0, d/2) = 1
    for t in np.linspace(0.0, 1.8, 10):
        x, _ = g.state(t)
        assert np.max(np.abs(x - np.tan(t / 2.0) * d)) < 1e-7
    assert g.F_drift < 1e-7


def test_first_integral_gate(funk2_geodesic):
    assert funk2_geodesic.F_drift < 1e-7


def test_time_reversal(funk2, funk2_geodesic):
    xe, ye = funk2_geodesic.state(1.2)
    back = integrate_geodesic(funk2, xe, ye, -1.2)
    xb, yb = back.state(-1.2)
    assert np.max(np.abs(xb - funk2_geodesic.x[0])) < 1e-6
    assert np.max(np.abs(yb - funk2_geodesic.y[0])) < 1e-6


def test_dense_output_collocation(funk2, funk2_geodesic):
    """The interpolant satisfies xdot = y and ydot = -2G between nodes."""
    from finslerlab.curvature import spray_values

    h = 1e-4
    for t in np.linspace(0.05, 1.15, 9):
        xp, yp = funk2_geodesic.state(t + h)
        xm, ym = funk2_geodesic.state(t - h)
        x, y = funk2_geodesic.state(t)
        assert np.max(np.abs((xp - xm) / (2 * h) - y)) < 1e-6
        G = spray_values(funk2, x, y)
        assert np.max(np.abs((yp - ym) / (2 * h) + 2 * G)) < 1e-6


def test_chart_exit_reports_time():
    spec = MetricSpec.custom(2, "sqrt(abs2(y))", chart_radius=1.0, label="ball")
    m = build_metric(spec)
    with pytest.raises(ChartExit) as info:
        integrate_geodesic(m, (0.2, 0.0), (1.0, 0.0), 2.0)
    assert info.value.t_exit == pytest.approx(0.8, abs=1e-6)
    partial = info.value.partial
    assert partial is not None
    assert partial.t_final <= 0.8 + 1e-9
    assert np.all(np.linalg.norm(partial.x, axis=1) < 1.0)


def test_step_failure_on_degenerate_ring():
    spec = MetricSpec.custom(
        2, "sqrt(abs2(y)) * (0.5 - abs2(x))", label="degenerate-ring"
    )
    m = build_metric(spec)
    with pytest.raises(StepFailure):
        integrate_geodesic(m, (0.0, 0.0), (1.0, 0.0), 3.0, tol=1e-9)


def test_geodesic_guards(funk2):
    with pytest.raises(BadConfig):
        integrate_geodesic(funk2, (0.0, 0.0), (1.0, 0.0), (1.0, 1.0))
    with pytest.raises(ZeroVector):
        integrate_geodesic(funk2, (0.0, 0.0), (0.0, 0.0), 1.0)
    with pytest.raises(OutOfChart):
        integrate_geodesic(funk2, (1.2, 0.0), (1.0, 0.0), 1.0)
    with pytest.raises(ShapeMismatch):
        integrate_geodesic(funk2, (0.0, 0.0, 0.0), (1.0, 0.0, 0.0), 1.0)


# --- parallel transport ---


def test_transport_euclid_identity():
    m = build_metric(builtin("euclidean2"))
    g = integrate_geodesic(m, (0.0, 0.0), (1.0, 0.2), 2.0)
    for mode in ("linear", "nonlinear"):
        res = parallel_transport(m, g, (0.3, -0.5), mode=mode)
        assert np.max(np.abs(res.V - np.array([0.3, -0.5]))) < 1e-10
        assert res.length_drift < 1e-12


def test_transport_linear_is_linear(funk2, funk2_geodesic):
    u, v = np.array([0.3, 0.7]), np.array([-0.5, 0.2])
    a, b = 1.3, -0.6
    Tu = parallel_transport(funk2, funk2_geodesic, u).V[-1]
    Tv = parallel_transport(funk2, funk2_geodesic, v).V[-1]
    Tw = parallel_transport(funk2, funk2_geodesic, a * u + b * v).V[-1]
    assert np.max(np.abs(Tw - (a * Tu + b * Tv))) < 1e-9


def test_transport_riemannian_modes_agree(sphere2):
    g = integrate_geodesic(sphere2, (0.1, 0.0), (0.3, 0.2), 1.0)
    lin = parallel_transport(sphere2, g, (0.4, -0.1), mode="linear")
    non = parallel_transport(sphere2, g, (0.4, -0.1), mode="nonlinear")
    assert np.max(np.abs(lin.V[-1] - non.V[-1])) < 1e-9
    assert lin.length_drift < 1e-8      # metric transport
    assert non.length_drift < 1e-8


def test_transport_funk_modes_differ(funk2, funk2_geodesic):
    V0 = (0.3, 0.7)
    lin = parallel_transport(funk2, funk2_geodesic, V0, mode="linear")
    non = parallel_transport(funk2, funk2_geodesic, V0, mode="nonlinear")
    assert np.max(np.abs(lin.V[-1] - non.V[-1])) > 1e-3
    # both invariants hold for every metric: F(x, V) in nonlinear mode,
    # g_y(V, V) in linear mode (L_ijk y^k = 0 kills the metric's h-derivative)
    assert non.length_drift < 1e-8
    assert lin.length_drift < 1e-8


def test_funk_autoparallel_velocity(funk2, funk2_geodesic):
    V0 = funk2_geodesic.y[0]
    for mode in ("linear", "nonlinear"):
        res = parallel_transport(funk2, funk2_geodesic, V0, mode=mode)
        assert np.max(np.abs(res.V - funk2_geodesic.sample(res.t)[1])) < 1e-6


def test_transport_guards(funk2, funk2_geodesic):
    with pytest.raises(BadConfig):
        parallel_transport(funk2, funk2_geodesic, (1.0, 0.0), mode="affine")
    with pytest.raises(ZeroVector):
        parallel_transport(funk2, funk2_geodesic, (0.0, 0.0))
    with pytest.raises(ShapeMismatch):
        parallel_transport(funk2, funk2_geodesic, (1.0, 0.0, 0.0))


# --- parallelogram loops ---

EPS = [0.04, 0.08, 0.16]


def test_parallelogram_riemannian_noise_floor(sphere2):
    res = parallelogram_holonomy(
        sphere2, (0.05, 0.1), (1.0, 0.0), (0.0, 1.0), (0.8, 0.3), EPS
    )
    assert np.all(res.delta < 1e-9)
    assert np.all(res.delta_probe < 1e-9)
    # the loop itself is far from closed -- only the lengths are preserved
    assert res.return_defect[-1] > 1e-4


def test_parallelogram_minkowski_identity():
    m = build_metric(builtin("quartic2"))
    res = parallelogram_holonomy(
        m, (0.2, -0.1), (1.0, 0.0), (0.0, 1.0), (0.8, 0.3), EPS
    )
    assert np.all(res.delta < 1e-12)
    assert np.all(res.delta_probe < 1e-12)
    assert np.all(res.return_defect < 1e-12)


def test_parallelogram_funk_probe_scaling(funk2):
    res = parallelogram_holonomy(
        funk2, (0.05, 0.1), (1.0, 0.0), (0.0, 1.0), (0.8, 0.3), EPS
    )
    # conservation channel stays at noise for every metric
    assert np.all(res.delta < 1e-10)
    # probe channel resolves the connection: eps^2 scaling, well above noise
    assert res.delta_probe[-1] > 1e-5
    assert 1.8 < res.exponent_probe < 2.6


def test_parallelogram_swap_leading_order(funk2):
    a = parallelogram_holonomy(
        funk2, (0.05, 0.1), (1.0, 0.0), (0.0, 1.0), (0.8, 0.3), EPS
    )
    b = parallelogram_holonomy(
        funk2, (0.05, 0.1), (0.0, 1.0), (1.0, 0.0), (0.8, 0.3), EPS
    )
    # traversal order only matters at the next order in eps
    assert np.all(np.abs(a.delta_probe - b.delta_probe) < 0.15 * a.delta_probe + 1e-12)


def test_parallelogram_guards(funk2):
    with pytest.raises(BadConfig):
        parallelogram_holonomy(
            funk2, (0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (0.5, 0.5), EPS
        )
    with pytest.raises(ZeroVector):
        parallelogram_holonomy(
            funk2,
            (0.0, 0.0),
            (1.0, 0.0),
            (0.0, 1.0),
            (0.5, 0.5),
            EPS,
            support0=(0.0, 0.0),
        )
    with pytest.raises(ChartExit):
        parallelogram_holonomy(
            funk2, (0.5, 0.5), (1.0, 0.0), (0.0, 1.0), (0.5, 0.5), [0.9]
        )


# --- scalar flows ---


def test_scalar_flows_riemannian_torsion_free(sphere2):
    g = integrate_geodesic(sphere2, (0.1, 0.0), (0.3, 0.2), 1.0)
    flow = scalar_flows(sphere2, g, quantities=("phi", "L_norm"), samples=9)
    assert flow.status["phi"] == "ok"
    assert np.max(np.abs(flow.columns["phi"])) < 1e-12
    assert np.max(flow.columns["L_norm"]) < 1e-6


def test_scalar_flows_funk_rate_law(funk2, funk2_geodesic):
    flow = scalar_flows(
        funk2,
        funk2_geodesic,
        quantities=("phi", "phidot", "mu", "c"),
        c=-1.0,
        samples=11,
    )
    cols = flow.columns
    assert np.all(cols["phi"] > 0)
    assert np.max(np.abs(cols["mu"] + 0.5)) < 1e-10
    assert np.max(np.abs(cols["c"] + 1.0)) < 1e-10
    # the measured rate law phidot = c F phi, against the doubled variant
    assert np.max(np.abs(cols["flow_resid"])) < 1e-10
    assert np.max(np.abs(cols["flow_resid_doubled"])) > 1e-3


def test_scalar_flows_status_isolation():
    m = build_metric(builtin("funk3"))
    g = integrate_geodesic(m, (0.1, -0.1, 0.2), (0.4, 0.3, -0.2), 1.0)
    flow = scalar_flows(m, g, quantities=("phi", "mu", "p"), samples=7)
    assert flow.status["phi"] == "ok"
    assert flow.status["mu"].startswith("DimensionError")
    assert np.all(np.isnan(flow.columns["mu"]))
    assert flow.status["p"] == "ok"
    assert np.max(np.abs(flow.columns["p"] - 1.0)) < 1e-10


def test_scalar_flows_unknown_quantity(funk2, funk2_geodesic):
    with pytest.raises(BadConfig):
        scalar_flows(funk2, funk2_geodesic, quantities=("curl",))
