import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conebif import cylinder as cyl
from conebif.bubble import mu_angular_closed
from conebif.errors import BranchEntryFailure, GridError, NewtonFailure, SingularJacobian, ValidationError
from conebif.geometry import ProblemParams, mesh


@pytest.fixture(scope="module")
def problem(tuned_D1):
    return cyl.CylinderProblem(ProblemParams(3), mesh(tuned_D1, 0.1), T=8.0, dt=0.05)


@pytest.fixture(scope="module")
def bif(problem):
    return cyl.detect_bifurcation(problem, (0.95, 1.05))


def test_grid_validation(tuned_D1):
    m = mesh(tuned_D1, 0.1)
    with pytest.raises(GridError):
        cyl.CylinderProblem(ProblemParams(3), m, T=1.03, dt=0.05)
    with pytest.raises(ValidationError):
        cyl.CylinderProblem(ProblemParams(4), m)


def test_cylinder_maps(P3):
    t = np.linspace(-3, 3, 13)
    rho = np.exp(t)
    U = P3.c0 * (1 + rho**2) ** -0.5
    v = cyl.to_cylinder(P3, t, U[:, None])
    assert v[:, 0] == pytest.approx(cyl.bubble_profile(P3, t), rel=1e-13)
    assert cyl.from_cylinder(P3, t, v)[:, 0] == pytest.approx(U, rel=1e-13)
    psi = (1 + rho**2) ** -1.5 * rho
    assert cyl.to_cylinder(P3, t, psi[:, None])[:, 0] == pytest.approx(cyl.kernel_profile(P3, t), rel=1e-13)
    # the derivative of the bubble family in its scale is odd in t
    s = 1e-5
    dU = (P3.c0 * (1 + (1 + s) ** 4 * rho**2) ** -0.5 * (1 + s) - P3.c0 * (1 + (1 - s) ** 4 * rho**2) ** -0.5 * (1 - s)) / (2 * s)
    dv = cyl.to_cylinder(P3, t, dU[:, None])[:, 0]
    assert dv == pytest.approx(-dv[::-1], abs=1e-9)


@settings(max_examples=25)
@given(st.integers(3, 30), st.integers(1, 5), st.integers(0, 2**31))
def test_kelvin_project_is_projector(n, m, seed):
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((2 * n + 1, m))
    t = np.linspace(-1, 1, 2 * n + 1)
    p = cyl.kelvin_project(v, t)
    assert np.allclose(cyl.kelvin_project(p, t), p)
    assert np.allclose(p, p[::-1])
    odd = v - v[::-1]
    assert np.allclose(cyl.kelvin_project(odd, t), 0.0)


def test_kelvin_project_grid_error():
    with pytest.raises(GridError):
        cyl.kelvin_project(np.ones((3, 2)), np.array([-1.0, 0.0, 2.0]))


def test_bubble_is_discrete_solution(tuned_D1):
    prob = cyl.CylinderProblem(ProblemParams(3), mesh(tuned_D1, 0.05), T=12.0, dt=0.05)
    vb = prob.expand(prob.bubble_analytic())
    for alpha in (0.9, 1.0, 1.1):
        norm, R = prob.residual(alpha, vb)
        assert norm <= 1e-4
    assert prob.residual(1.0, 1.1 * vb)[0] > 1e-3
    assert prob.residual(1.0, np.zeros_like(vb))[0] == 0.0


def test_trivial_refinement_exact(problem):
    vt = problem.trivial()
    for alpha in (0.8, 1.0, 1.2):
        assert problem.full_residual_norm(problem.F(alpha, vt)) < 1e-12
    # the Neumann end at T only perturbs the tail
    inner = problem.t <= problem.T / 2
    assert np.max(np.abs(vt - problem.bubble_analytic())[inner]) < 1e-2


def test_half_grid_residual_matches_full(problem, rng):
    V = problem.trivial() * (1 + 0.1 * rng.standard_normal(problem.trivial().shape))
    full, _ = problem.residual(1.0, problem.expand(V))
    assert problem.full_residual_norm(problem.F(1.0, V)) == pytest.approx(full, rel=1e-12)


def test_jvp_matches_finite_difference(problem, rng):
    V = problem.trivial()
    d = rng.standard_normal(V.shape) * 1e-2
    eps = 1e-6
    fd = (problem.F(1.0, V + eps * d) - problem.F(1.0, V - eps * d)) / (2 * eps)
    assert np.allclose(problem.jvp(1.0, V, d), fd, atol=1e-8 * np.abs(fd).max())


def test_separable_solver_inverts_linear_part(problem, rng):
    B = rng.standard_normal((problem.n_t, problem.n_D))
    X = problem.laplace_solver(1.0).solve(B)
    assert np.allclose(problem.linear(1.0, X), B, atol=1e-9 * np.abs(B).max())


def test_even_spectrum_matches_separable_and_closed_forms(problem):
    vb = problem.trivial()
    for alpha in (0.97, 1.03):
        mu, W = cyl.linearized_even_spectrum(problem, alpha, vb, k=3)
        lam, _ = cyl.neumann_first_mode(problem, alpha)
        sep = cyl.separable_trivial_mu(problem, alpha, lam[:2])
        assert mu[0] == pytest.approx(1.0, rel=1e-9)
        assert mu[1] == pytest.approx(sep[1], rel=1e-8)
        # continuum closed form with the discrete lambda_1
        assert mu[1] == pytest.approx(mu_angular_closed(problem.params, lam[1])[0], rel=1e-2)


def test_parity_exclusion(problem):
    # the odd scale mode (mu = 2*-1) is orthogonal to every even eigenvector
    vb = problem.trivial()
    _, W = cyl.linearized_even_spectrum(problem, 1.0, vb, k=3)
    t = problem.t_full
    odd = np.tanh(t)[:, None] * cyl.bubble_profile(problem.params, t)[:, None] * np.ones(problem.n_D)
    for w in W:
        full = problem.expand(w)
        assert abs(np.sum(full * odd)) <= 1e-6 * np.linalg.norm(full) * np.linalg.norm(odd)


def test_detect_bifurcation(problem, bif):
    assert abs(bif.alpha_c - 1.0) < 2e-2
    assert bif.mu[1] == pytest.approx(problem.p, rel=1e-8)
    assert bif.kernel_overlap >= 0.99
    assert bif.dmu2_dalpha < 0
    assert problem.norm(bif.kernel) == pytest.approx(1.0)
    with pytest.raises(cyl.NoBifurcation):
        cyl.detect_bifurcation(problem, (1.2, 1.3))


def test_fredholm_structure(problem, bif):
    fc = cyl.fredholm_check(problem, bif)
    assert fc["kernel_dimension"] == 1
    assert fc["amplification_kernel"] > 1e3 * fc["amplification_complement"]


def test_newton_trivial_and_zero(problem):
    vb = problem.trivial()
    res = cyl.newton_solve(problem, 0.9, 1.02 * vb)
    assert res.residual <= 1e-10
    assert np.max(np.abs(res.V - vb)) < 1e-8
    zero = cyl.newton_solve(problem, 1.0, np.zeros_like(vb))
    assert zero.iterations == 0 and np.all(zero.V == 0)


def test_newton_at_bifurcation_from_kernel_offset(problem, bif):
    # plain Newton at alpha_c from a kernel offset either fails on the
    # near-singular Jacobian or lands on a solution (recorded behaviour)
    V0 = problem.trivial() + 0.1 * bif.kernel
    try:
        res = cyl.newton_solve(problem, bif.alpha_c, V0)
    except (SingularJacobian, NewtonFailure):
        return
    assert res.residual <= 1e-10


def test_short_trace(problem, bif):
    policy = cyl.StepPolicy(max_points=4, ds_max=0.02)
    branches = cyl.trace_branch(problem, bif, policy)
    assert [b.direction for b in branches] == [1, -1]
    for b in branches:
        assert len(b.points) == 4
        assert b.first_tangent_overlap >= 0.99
        assert b.origin.asymmetry == pytest.approx(0.0, abs=1e-12)
        asym = [p.asymmetry for p in b.points]
        assert np.all(np.diff(asym) > 0)
        for p in b.points:
            assert p.residual <= 1e-8
            assert p.positivity and p.kelvin_defect <= 1e-10
            assert np.sign(p.s) == b.direction
    # mirror-image branches: alpha is even in s
    a_plus = [p.alpha_s for p in branches[0].points]
    a_minus = [p.alpha_s for p in branches[1].points]
    assert a_plus == pytest.approx(a_minus, abs=1e-9)
    assert abs(cyl.dalpha_ds_at_origin(branches)) < 1e-2
    q = branches[0].points[-1]
    assert q.quotient == pytest.approx(cyl.sobolev_quotient(problem, q.alpha_s, q.v_s))


def test_step_policy_validation():
    with pytest.raises(ValidationError):
        cyl.StepPolicy(ds_min=0.2, ds_max=0.1).validate()
    with pytest.raises(ValidationError):
        cyl.StepPolicy(grow=-1).validate()


def test_branch_entry_failure(problem, bif):
    policy = cyl.StepPolicy(max_points=2, max_newton=0, ds_min=5e-3)
    with pytest.raises(BranchEntryFailure):
        cyl.trace_branch(problem, bif, policy, directions=(1,), eigen_diagnostics=False)


def test_quotient_is_scale_invariant(problem):
    V = problem.trivial()
    q = cyl.sobolev_quotient(problem, 1.0, V)
    assert q > 0
    assert cyl.sobolev_quotient(problem, 1.0, 3.7 * V) == pytest.approx(q, rel=1e-12)
