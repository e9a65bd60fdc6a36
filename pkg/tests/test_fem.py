import math

import numpy as np
import pytest

from conebif.fem import P1Space
from conebif.geometry import AlphaMetric, make_cap, mesh, sphere_mesh
from conebif.neumann import assemble


@pytest.fixture(scope="module")
def cap_mesh(P3):
    return mesh(make_cap(P3, 0.9), 0.05)


def test_mass_integrates_constants(cap_mesh):
    K, M = assemble(cap_mesh, AlphaMetric(1.0))
    one = np.ones(cap_mesh.n_vertices)
    assert one @ M @ one == pytest.approx(cap_mesh.area(1.0), rel=1e-12)
    assert np.abs(K @ one).max() < 1e-12


def test_sphere_mass_area():
    m = sphere_mesh(0.1)
    K, M = assemble(m, AlphaMetric(1.0))
    one = np.ones(m.n_vertices)
    assert one @ M @ one == pytest.approx(4 * math.pi, rel=1e-2)


@pytest.mark.parametrize("alpha", [0.5, 0.9, 1.2])
def test_dilation_identity(cap_mesh, alpha):
    # (D, g_alpha) is isometric to (phi_alpha(D), g)
    K1, M1 = assemble(cap_mesh, AlphaMetric(alpha))
    K2, M2 = assemble(cap_mesh.dilated(alpha), AlphaMetric(1.0))
    assert abs(K1 - K2).max() < 1e-12 * abs(K1).max()
    assert abs(M1 - M2).max() < 1e-12 * abs(M1).max()


def test_matrices_symmetric_positive(cap_mesh, rng):
    K, M = assemble(cap_mesh, AlphaMetric(0.7))
    assert abs(K - K.T).max() < 1e-14
    assert abs(M - M.T).max() < 1e-14
    x = rng.standard_normal(cap_mesh.n_vertices)
    assert x @ M @ x > 0
    assert x @ K @ x > 0


def test_quadrature_weights_match_mass(cap_mesh):
    space = P1Space(cap_mesh)
    g = AlphaMetric(0.8)
    w = space.quadrature_weights(g)
    _, M = assemble(cap_mesh, g)
    assert w.sum() == pytest.approx(M.sum(), rel=1e-12)


def test_interpolation_reproduces_linear(cap_mesh):
    space = P1Space(cap_mesh)
    f = 2.0 * cap_mesh.vertices[:, 0] - cap_mesh.vertices[:, 1] + 0.5
    q = (space.interpolation @ f).reshape(-1, 3)
    exact = 2.0 * space.points[..., 0] - space.points[..., 1] + 0.5
    assert np.allclose(q, exact, atol=1e-13)
