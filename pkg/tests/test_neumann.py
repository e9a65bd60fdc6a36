import math

import numpy as np
import pytest
import scipy.sparse as sp
from scipy.special import jn_zeros, jnp_zeros

from conebif.errors import NotApplicable, ValidationError
from conebif.geometry import HALF_PI, AlphaMetric, ProblemParams, make_cap, make_general, mesh, sphere_mesh
from conebif.neumann import (
    assemble,
    cap_eigenvalue_shooting,
    cap_spectrum,
    cap_values,
    cluster_indices,
    mesh_spectrum,
    parity_of,
    solve_lowest,
    sphere_harmonic_multiplicity,
    verify_simplicity,
)


def test_cluster_indices():
    assert cluster_indices([0.0, 2.0, 2.0 + 1e-9, 6.0]) == [[0], [1, 2], [3]]
    assert cluster_indices([1.0, 1.1]) == [[0], [1]]


def test_sphere_harmonic_multiplicity():
    assert [sphere_harmonic_multiplicity(3, l) for l in range(4)] == [1, 2, 2, 2]
    # N = 4: harmonics of degree l on S^2 have dimension 2l + 1
    assert [sphere_harmonic_multiplicity(4, l) for l in range(4)] == [1, 3, 5, 7]


def test_sphere_spectrum_coarse():
    spec = mesh_spectrum(sphere_mesh(0.1), 1.0, 8)
    exact = np.array([0.0, 2, 2, 2, 6, 6, 6, 6, 6])
    assert np.abs(spec.eigenvalues - exact).max() < 0.05 * 6
    assert [len(c) for c in spec.clusters][:1] == [1]


@pytest.mark.parametrize("N", [3, 4, 5, 7])
def test_hemisphere_degree_one(N):
    assert cap_eigenvalue_shooting(ProblemParams(N), HALF_PI, 1, 1) == pytest.approx(N - 1, abs=1e-8)


@pytest.mark.parametrize("ell,k,exact", [(0, 2, 6.0), (1, 2, 12.0), (2, 1, 6.0), (0, 3, 20.0)])
def test_hemisphere_even_harmonics(P3, ell, k, exact):
    # Neumann modes of the hemisphere are the harmonics even about the equator
    assert cap_eigenvalue_shooting(P3, HALF_PI, ell, k) == pytest.approx(exact, rel=1e-9)


def test_small_cap_bessel_limit(P3):
    t = 0.02
    assert cap_eigenvalue_shooting(P3, t, 1, 1) * t * t == pytest.approx(jnp_zeros(1, 1)[0] ** 2, rel=1e-3)
    assert cap_eigenvalue_shooting(P3, t, 0, 2) * t * t == pytest.approx(jn_zeros(1, 1)[0] ** 2, rel=1e-3)


def test_constant_mode_counts_first(P3):
    assert cap_eigenvalue_shooting(P3, 0.7, 0, 1) == 0.0
    with pytest.raises(ValidationError):
        cap_eigenvalue_shooting(P3, 0.7, 0, 0)
    with pytest.raises(ValidationError):
        cap_eigenvalue_shooting(P3, 2.0, 1, 1)


def test_cap_spectrum_frozen(P3):
    # shooting-oracle values for t = 0.9 (N = 3)
    rows = cap_spectrum(P3, 0.9, 6)
    assert [(r[1], r[2], r[3]) for r in rows] == [(0, 1, 1), (1, 1, 2), (2, 1, 2), (0, 2, 1), (3, 1, 2)]
    vals = cap_values(P3, 0.9, 6)
    assert vals[1] == pytest.approx(4.700222969093759, rel=1e-9)
    assert vals[5] == pytest.approx(18.140192911798632, rel=1e-9)


@pytest.mark.parametrize("t", [0.6, 1.2])
def test_cap_fem_against_shooting(P3, t):
    spec = mesh_spectrum(mesh(make_cap(P3, t), 0.04), 1.0, 5)
    oracle = cap_values(P3, t, 5)
    assert np.max(np.abs(spec.eigenvalues[1:] / oracle[1:] - 1)) < 5e-3


def test_cap_fem_under_dilation_matches_smaller_cap(P3):
    # (C_t, g_alpha) is isometric to C_{alpha t}
    m = mesh(make_cap(P3, 1.0), 0.04)
    spec = mesh_spectrum(m, 0.6, 3)
    assert spec.lambda1 == pytest.approx(cap_eigenvalue_shooting(P3, 0.6, 1, 1), rel=5e-3)


def test_solve_lowest_dense_and_sparse_agree(P3):
    m = mesh(make_cap(P3, 0.8), 0.06)
    K, M = assemble(m, AlphaMetric(1.0))
    sparse = solve_lowest(K, M, 4)
    n = m.n_vertices
    assert n > 200
    dense = solve_lowest(K[:150, :150] + sp.eye(150) * 0, M[:150, :150], 4)
    assert dense.eigenvalues.shape == (5,)
    assert np.all(sparse.residuals <= 1e-10 * max(1.0, sparse.eigenvalues.max()))
    Y = sparse.eigenvectors
    assert np.allclose(Y.T @ (M @ Y), np.eye(5), atol=1e-10)


def test_sign_convention(P3, tuned_D1):
    m = mesh(tuned_D1, 0.06)
    spec = mesh_spectrum(m, 1.0, 2)
    y = spec.eigenvectors[:, 1]
    ref = m.vertices[:, 0] + 1e-3 * m.vertices[:, 1]
    assert ref @ (spec.mass @ y) > 0


def test_simplicity_tuned_dumbbell(tuned_D1):
    m = mesh(tuned_D1, 0.05)
    spec = mesh_spectrum(m, 1.0, 3)
    rep = verify_simplicity(tuned_D1, spec, m)
    assert rep.verdict == "simple"
    assert rep.parity == {"equator": "odd", "meridian": "even"}
    assert rep.slice_ok


def test_simplicity_caps_and_general(P3):
    D = make_cap(P3, 0.8)
    m = mesh(D, 0.06)
    spec = mesh_spectrum(m, 1.0, 3)
    assert verify_simplicity(D, spec, m).verdict == "not-simple"
    G = make_general(P3, [(0.3, 0.2), (-0.3, 0.2), (-0.3, -0.2), (0.35, -0.2)])
    mg = mesh(G, 0.05)
    with pytest.raises(NotApplicable):
        verify_simplicity(G, mesh_spectrum(mg, 1.0, 3), mg)


def test_parity_of(tuned_D1):
    m = mesh(tuned_D1, 0.06)
    _, M = assemble(m, AlphaMetric(1.0))
    x = m.vertices[:, 0]
    assert parity_of(x, m.reflections["equator"], M)[0] == "odd"
    assert parity_of(x, m.reflections["meridian"], M)[0] == "even"
