import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conebif.errors import DomainEscape, InvalidGeometry, InvalidRadius, MeshingFailure, ValidationError
from conebif.geometry import (
    HALF_PI,
    AlphaMetric,
    ProblemParams,
    alpha_star,
    aux_to_sphere,
    b_function,
    chart_to_sphere,
    make_cap,
    make_dumbbell,
    make_general,
    max_slice_width,
    mesh,
    metric_at,
    quasi_isometry_constant,
    sinc,
    slice_width,
    sphere_to_aux,
    sphere_to_chart,
    _slice_width_numeric,
)


def test_problem_params_values():
    P = ProblemParams(3)
    assert P.p == 5.0
    assert P.c0 == pytest.approx(3 ** 0.25)
    assert P.lambda_threshold == 2.0
    assert P.emden_fowler_shift == 0.5
    assert ProblemParams(5).crit_exp == pytest.approx(10 / 3)
    with pytest.raises(ValidationError):
        ProblemParams(2)


@given(st.floats(0.0, 1.5), st.floats(-math.pi, math.pi))
def test_chart_round_trip(r, psi):
    X, Y = r * math.cos(psi), r * math.sin(psi)
    p = chart_to_sphere(X, Y)
    assert np.linalg.norm(p) == pytest.approx(1.0)
    # geodesic distance to the pole equals the chart radius
    assert math.acos(min(1.0, p[0])) == pytest.approx(r, abs=1e-7)
    X2, Y2 = sphere_to_chart(p)
    assert X2 == pytest.approx(X, abs=1e-9)
    assert Y2 == pytest.approx(Y, abs=1e-9)


@given(st.floats(0.01, math.pi - 0.01), st.floats(-3.1, 3.1))
def test_aux_round_trip(r, om):
    r2, om2 = sphere_to_aux(aux_to_sphere(r, om))
    assert r2 == pytest.approx(r, abs=1e-9)
    assert om2 == pytest.approx(om, abs=1e-9)


def test_reflections_act_on_chart_axes():
    # equator reflection z -> -z is X -> -X, meridian reflection y -> -y is Y -> -Y
    p = chart_to_sphere(0.3, 0.2)
    q = chart_to_sphere(-0.3, 0.2)
    assert q == pytest.approx(p * np.array([1, 1, -1]))
    q = chart_to_sphere(0.3, -0.2)
    assert q == pytest.approx(p * np.array([1, -1, 1]))


def test_sinc_and_b_function_limits():
    assert sinc(0.0) == 1.0
    assert b_function(1e-9) == pytest.approx(1.0)
    assert b_function(HALF_PI) == pytest.approx(0.0, abs=1e-15)


def test_cap_validation(P3):
    with pytest.raises(InvalidRadius):
        make_cap(P3, HALF_PI)
    with pytest.raises(InvalidRadius):
        make_cap(P3, 0.0)
    D = make_cap(P3, HALF_PI, allow_hemisphere=True)
    assert D.sup_r == pytest.approx(HALF_PI)


def test_dumbbell_validation(P3):
    with pytest.raises(InvalidGeometry):
        make_dumbbell(P3, 0.5, 0.45, 0.0)
    with pytest.raises(InvalidGeometry):
        make_dumbbell(P3, 0.5, 0.6, 0.05)
    with pytest.raises(DomainEscape):
        make_dumbbell(P3, 0.0, 0.45, 0.05)


def test_dumbbell_geometry(tuned_base):
    D = tuned_base
    assert D.sup_r == pytest.approx(HALF_PI - 0.5)
    assert alpha_star(D) == pytest.approx(HALF_PI / (HALF_PI - 0.5))
    # centre of the channel is the chart origin; disk centres on the X axis
    assert D.contains(np.array([0.0]), np.array([0.0]))[0]
    assert not D.contains(np.array([0.0]), np.array([0.5]))[0]


def test_slice_width_numeric_matches_closed_form(tuned_base):
    for r in (0.6, 0.9, HALF_PI - 0.01, 1.2):
        exact = slice_width(tuned_base, r)
        num = _slice_width_numeric(tuned_base.contains, r)
        assert num == pytest.approx(exact, abs=1e-6)


def test_max_slice_width_below_half_pi(tuned_base):
    w, r = max_slice_width(tuned_base)
    assert 0 < w < HALF_PI


def test_dilation_scales_chart(tuned_base):
    D = tuned_base.dilated(0.5)
    assert D.sup_r == pytest.approx(0.5 * tuned_base.sup_r)
    assert D.contains(np.array([0.1]), np.array([0.0]))[0] == tuned_base.contains(
        np.array([0.2]), np.array([0.0]))[0]
    with pytest.raises(DomainEscape):
        tuned_base.dilated(1.05 * alpha_star(tuned_base))


def test_metric_small_radius_limit():
    g = AlphaMetric(0.8)
    c_iso, c_rad = g.stiffness_coefficients(np.array([1e-6, 1e-3]))
    assert c_rad[0] == pytest.approx(-0.8**2 / 3)
    assert c_rad[1] == pytest.approx(-0.8**2 / 3, rel=1e-5)
    assert c_iso[0] == pytest.approx(1.0)


def test_metric_at_rejects_alpha_star(tuned_base):
    a = alpha_star(tuned_base)
    with pytest.raises(DomainEscape):
        metric_at(tuned_base, a)
    with pytest.raises(ValidationError):
        metric_at(tuned_base, -1.0)


@settings(max_examples=60)
@given(st.floats(0.05, 1.0), st.floats(1e-4, HALF_PI))
def test_quasi_isometry_bracket(alpha, r):
    # g_alpha / (alpha^2 g): radial ratio 1, angular ratio sin^2(alpha r) / (alpha sin r)^2
    K = quasi_isometry_constant(alpha)
    ratio = math.sin(alpha * r) ** 2 / (alpha * math.sin(r)) ** 2
    assert 1 / K < ratio < K
    assert 1 / K < 1.0 < K


def test_general_domain_contains(P3):
    D = make_general(P3, [(0.3, 0.3), (-0.3, 0.3), (-0.3, -0.3), (0.3, -0.3)])
    assert D.contains(np.array([0.0]), np.array([0.0]))[0]
    assert D.sup_r == pytest.approx(math.hypot(0.3, 0.3), rel=1e-6)


def test_mesh_symmetric_and_resolves_channel(tuned_base):
    m = mesh(tuned_base, 0.05)
    for name, perm in m.reflections.items():
        axis = 0 if name == "equator" else 1
        flipped = m.vertices.copy()
        flipped[:, axis] *= -1
        assert np.allclose(m.vertices[perm], flipped, atol=1e-12)
    assert np.all(m.chart_areas() > 0)
    with pytest.raises(MeshingFailure):
        mesh(tuned_base, 0.5)


def test_mesh_area_matches_cap(P3):
    t = 0.6
    m = mesh(make_cap(P3, t), 0.03)
    assert m.area(1.0) == pytest.approx(2 * math.pi * (1 - math.cos(t)), rel=2e-3)
