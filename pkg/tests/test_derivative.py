import math

import numpy as np
import pytest

from conebif.derivative import (
    berger_derivative,
    derivative_report,
    fd_derivative,
    negativity_criterion,
)
from conebif.errors import NonSimpleEigenvalue, StencilFailure
from conebif.geometry import HALF_PI, ProblemParams, alpha_star, make_cap, make_dumbbell, mesh
from conebif.neumann import mesh_spectrum


def test_negativity_criterion():
    assert negativity_criterion(ProblemParams(3), 1.5)
    assert negativity_criterion(ProblemParams(4), 1.5)
    # N = 5 needs t / tan t >= 1/3
    assert negativity_criterion(ProblemParams(5), 1.0)
    assert not negativity_criterion(ProblemParams(5), 1.4)


@pytest.fixture(scope="module")
def thin_dumbbell():
    D = make_dumbbell(ProblemParams(3), 0.5, 0.45, 0.02)
    return D, mesh(D, 0.04)


def test_formula_matches_fd_thin_channel(thin_dumbbell):
    D, m = thin_dumbbell
    spec = mesh_spectrum(m, 1.0, 3)
    formula = berger_derivative(D, m, spec)
    fd = fd_derivative(D, m, 1e-3)
    assert formula == pytest.approx(fd, rel=1e-4)
    # value frozen from the finite-difference oracle on this mesh
    assert fd == pytest.approx(-0.53507, rel=1e-4)


def test_report_on_tuned_domain(tuned_D1):
    m = mesh(tuned_D1, 0.05)
    rep = derivative_report(tuned_D1, m, 1e-3)
    assert rep.rel_err < 1e-3
    assert rep.value_formula < 0
    assert rep.criterion_met
    # Richardson pair: halving delta changes the central difference at O(delta^2)
    assert abs(rep.value_fd_half - rep.value_fd) < 1e-5 * abs(rep.value_fd)


def test_formula_independent_of_normalization(thin_dumbbell):
    D, m = thin_dumbbell
    spec = mesh_spectrum(m, 1.0, 3)
    base = berger_derivative(D, m, spec)
    from conebif.derivative import _formula

    with pytest.warns(RuntimeWarning):
        scaled = _formula(m, 3.0 * spec.eigenvectors[:, 1])
    assert scaled == pytest.approx(base, rel=1e-12)


def test_caps_rejected():
    D = make_cap(ProblemParams(3), 0.8)
    m = mesh(D, 0.08)
    spec = mesh_spectrum(m, 1.0, 3)
    with pytest.raises(NonSimpleEigenvalue):
        berger_derivative(D, m, spec)
    with pytest.raises(StencilFailure):
        fd_derivative(D, m)


def test_stencil_reaching_alpha_star(tuned_base):
    D = tuned_base.dilated(0.999 * alpha_star(tuned_base))
    m = mesh(D, 0.06)
    with pytest.raises(StencilFailure):
        fd_derivative(D, m, 1e-2)
