"""The critical problem on the cone in Emden-Fowler variables, and its bifurcating branch.

With ``t = log(rho)`` and ``u = rho^{-(N-2)/2} v(t, theta)`` the equation
``-Delta u = u^{2*-1}`` on the cone over ``(D, g_alpha)`` becomes

    -v_tt - Delta_{g_alpha} v + c^2 v = v^p,   c = (N-2)/2,  p = 2* - 1,

on the cylinder ``R x D`` with Neumann conditions on ``R x dD``.  The Kelvin
transform is the reflection ``t -> -t``.  The bubble is
``v_U(t) = c0 (2 cosh t)^{-(N-2)/2}``, independent of ``alpha``.

Discretization: P1 elements on the chart mesh of ``D`` times linear
elements with lumped mass on a uniform grid of ``[-T, T]``; Neumann
conditions at ``t = +-T``.  Even-in-``t`` fields are stored on the half grid
``0, dt, ..., T``; the operators restricted to that subspace are the
full-grid ones conjugated by the mirror extension.  Fields are arrays of
shape ``(n_t, n_D)`` (rows are ``t`` slices).
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.optimize import brentq

from .errors import (
    BranchEntryFailure,
    GridError,
    NewtonFailure,
    NoBifurcation,
    SimplicityViolation,
    SingularJacobian,
    SolverFailure,
    ValidationError,
)
from .fem import P1Space
from .geometry import AlphaMetric, Mesh, ProblemParams
from .neumann import assemble, solve_lowest

log = logging.getLogger(__name__)


def bubble_profile(params: ProblemParams, t):
    """``c0 (2 cosh t)^{-(N-2)/2}``."""
    return params.c0 * (2.0 * np.cosh(np.asarray(t, dtype=float))) ** (-(params.N - 2) / 2.0)


def kernel_profile(params: ProblemParams, t):
    """``(2 cosh t)^{-N/2}``, the cylinder image of ``(1 + rho^2)^{-N/2} rho``."""
    return (2.0 * np.cosh(np.asarray(t, dtype=float))) ** (-params.N / 2.0)


def to_cylinder(params: ProblemParams, t, u):
    """``v(t, .) = e^{(N-2) t / 2} u(e^t, .)`` for samples ``u`` on ``rho = e^t`` (rows)."""
    t = np.asarray(t, dtype=float)
    return np.exp(params.emden_fowler_shift * t)[:, None] * np.asarray(u, dtype=float)


def from_cylinder(params: ProblemParams, t, v):
    t = np.asarray(t, dtype=float)
    return np.exp(-params.emden_fowler_shift * t)[:, None] * np.asarray(v, dtype=float)


def kelvin_project(v, t_grid=None):
    """Even part ``(v(t) + v(-t)) / 2`` of a full-grid field."""
    v = np.asarray(v, dtype=float)
    if t_grid is not None:
        t = np.asarray(t_grid, dtype=float)
        if len(t) != v.shape[0] or not np.allclose(t, -t[::-1], atol=1e-12 * max(1.0, abs(t).max())):
            raise GridError("t grid is not symmetric about 0")
    return 0.5 * (v + v[::-1])


class SeparableSolver:
    """Direct solver for ``A_t (x) M_D + diag(m_t) (x) S_D`` (row-major field layout).

    ``A_t`` is symmetric, ``m_t > 0``; ``M_D`` and ``S_D`` are sparse symmetric.
    With ``A_t Phi = diag(m_t) Phi Theta`` the system splits into one sparse
    problem ``theta_k M_D + S_D`` per ``t`` mode.
    """

    def __init__(self, A_t, m_t, M_D, S_D, spectrum_hint: np.ndarray | None = None):
        A = A_t.toarray() if sp.issparse(A_t) else np.asarray(A_t)
        self.theta, self.phi = sla.eigh(A, np.diag(m_t))
        self.m_t = np.asarray(m_t)
        M_D = sp.csc_matrix(M_D)
        S_D = sp.csc_matrix(S_D)
        self._lus = [spla.splu((th * M_D + S_D).tocsc()) for th in self.theta]
        # eigenvalues of (S_D, M_D) are needed only for the conditioning estimate
        self.sigma = None if spectrum_hint is None else np.asarray(spectrum_hint)

    def solve(self, B: np.ndarray) -> np.ndarray:
        C = self.phi.T @ B
        Z = np.empty_like(C)
        for k, lu in enumerate(self._lus):
            Z[k] = lu.solve(C[k])
        return self.phi @ Z

    def smallest_eigenvalue(self) -> float:
        """Eigenvalue of smallest modulus relative to ``diag(m_t) (x) M_D``."""
        if self.sigma is None:
            raise ValueError("no spectrum hint for S_D")
        vals = self.theta[:, None] + self.sigma[None, :]
        return float(vals.flat[np.argmin(np.abs(vals))])


@dataclass
class _AlphaOps:
    K: sp.csr_matrix
    M: sp.csr_matrix
    S: sp.csr_matrix
    w: np.ndarray


class CylinderProblem:
    """Discrete cylinder problem on ``[-T, T] x D`` restricted to even-in-``t`` fields."""

    def __init__(self, params: ProblemParams, mesh: Mesh, T: float = 12.0, dt: float = 0.05,
                 seed: int = 12345):
        if params.N != 3:
            raise ValidationError("the cylinder solver is implemented for N = 3", N=params.N)
        n = T / dt
        if abs(n - round(n)) > 1e-9 or round(n) < 2:
            raise GridError("T must be a positive multiple of dt", T=T, dt=dt)
        self.params = params
        self.mesh = mesh
        self.seed = int(seed)
        self.T = float(T)
        self.dt = float(dt)
        self.c = params.emden_fowler_shift
        self.p = params.p
        self.n_t = int(round(n)) + 1
        self.n_D = mesh.n_vertices
        self.t = dt * np.arange(self.n_t)
        self.t_full = np.concatenate([-self.t[:0:-1], self.t])
        self.space = P1Space(mesh)
        self.interp = self.space.interpolation
        self.interp_T = self.interp.T.tocsr()
        # even-subspace t operators: mirror-conjugated stiffness and lumped mass
        nt = self.n_t
        main = np.full(nt, 4.0)
        main[0] = 2.0
        main[-1] = 2.0
        off = np.full(nt - 1, -2.0)
        self.K_t = sp.diags([off, main, off], [-1, 0, 1], format="csr") / dt
        m = np.full(nt, 2.0 * dt)
        m[0] = dt
        m[-1] = dt
        self.m_t = m
        self._ops_cache: dict = {}
        self._M_ref = self.ops(1.0).M
        self._trivial = None

    # -- operators --------------------------------------------------------------
    def ops(self, alpha: float) -> _AlphaOps:
        key = float(alpha)
        hit = self._ops_cache.get(key)
        if hit is None:
            metric = AlphaMetric(key)
            K, M = assemble(self.mesh, metric)
            S = (K + self.c**2 * M).tocsr()
            w = self.space.quadrature_weights(metric).reshape(-1)
            hit = _AlphaOps(K.tocsr(), M.tocsr(), S, w)
            if len(self._ops_cache) > 16:
                self._ops_cache.clear()
            self._ops_cache[key] = hit
        return hit

    @property
    def n_unknowns(self) -> int:
        return self.n_t * self.n_D

    def quad(self, V):
        """Values at quadrature points, shape ``(n_t, 3m)``."""
        return (self.interp @ V.T).T

    def load(self, Q):
        """Scatter quadrature-point densities (already weighted) back to nodes."""
        return (self.interp_T @ Q.T).T

    def _power(self, Q, q):
        return np.abs(Q) ** (q - 1.0) * Q

    def nonlinear(self, alpha, V):
        o = self.ops(alpha)
        return self.load(o.w * self._power(self.quad(V), self.p))

    def linear(self, alpha, V):
        o = self.ops(alpha)
        return (o.M @ (self.K_t @ V).T).T + self.m_t[:, None] * (o.S @ V.T).T

    def F(self, alpha, V):
        """Weak residual restricted to even fields (half-grid rows)."""
        return self.linear(alpha, V) - self.m_t[:, None] * self.nonlinear(alpha, V)

    def F_alpha(self, alpha, V, eps: float = 1e-6):
        return (self.F(alpha + eps, V) - self.F(alpha - eps, V)) / (2 * eps)

    def jac_weight(self, alpha, V):
        o = self.ops(alpha)
        return o.w * self.p * np.abs(self.quad(V)) ** (self.p - 1.0)

    def B_apply(self, alpha, V, dV, weight=None):
        """``B(V) dV``: mass weighted by ``V^{p-1}`` (no factor ``p``), per row."""
        o = self.ops(alpha)
        wq = (o.w * np.abs(self.quad(V)) ** (self.p - 1.0)) if weight is None else weight
        return self.m_t[:, None] * self.load(wq * self.quad(dV))

    def jvp(self, alpha, V, dV, weight=None):
        """Jacobian ``L - p B(V)`` applied to ``dV``; ``weight`` caches ``p w V^{p-1}``."""
        wq = self.jac_weight(alpha, V) if weight is None else weight
        return self.linear(alpha, dV) - self.m_t[:, None] * self.load(wq * self.quad(dV))

    # -- norms -----------------------------------------------------------------
    def inner(self, A, B) -> float:
        """Full-grid ``L^2`` inner product of even fields (round metric of ``D``)."""
        return float(np.sum(self.m_t[:, None] * A * (self._M_ref @ B.T).T))

    def norm(self, A) -> float:
        return math.sqrt(max(self.inner(A, A), 0.0))

    def full_residual_norm(self, R_half) -> float:
        """Euclidean norm of the full-grid weak residual of an even field."""
        R = R_half.copy()
        R[1:] *= 0.5
        return float(math.sqrt(np.sum(R[0] ** 2) + 2.0 * np.sum(R[1:] ** 2)))

    def expand(self, V):
        """Mirror a half-grid field onto the full grid."""
        return np.vstack([V[:0:-1], V])

    # -- full-grid residual (no parity assumption) -------------------------------
    def residual(self, alpha, v_full):
        """Norm and nodal field of the full-grid weak residual for any ``v`` on ``[-T, T] x D``."""
        v_full = np.asarray(v_full, dtype=float)
        nf = len(self.t_full)
        if v_full.shape != (nf, self.n_D):
            raise ValidationError("field shape does not match the problem grid", shape=v_full.shape)
        dt = self.dt
        main = np.full(nf, 2.0)
        main[[0, -1]] = 1.0
        off = np.full(nf - 1, -1.0)
        K_t = sp.diags([off, main, off], [-1, 0, 1], format="csr") / dt
        m_t = np.full(nf, dt)
        m_t[[0, -1]] = 0.5 * dt
        o = self.ops(alpha)
        R = (o.M @ (K_t @ v_full).T).T + m_t[:, None] * (
            (o.S @ v_full.T).T - self.load(o.w * self._power(self.quad(v_full), self.p))
        )
        return float(np.linalg.norm(R)), R

    # -- trivial branch --------------------------------------------------------
    def bubble_analytic(self):
        return np.repeat(bubble_profile(self.params, self.t)[:, None], self.n_D, axis=1)

    def trivial(self):
        """The discrete radial solution: 1-D Newton refinement of the bubble profile.

        For ``x``-constant fields the mesh operators act exactly like scalars,
        so this is an exact discrete solution for every ``alpha``.
        """
        if self._trivial is None:
            v = bubble_profile(self.params, self.t)
            K = self.K_t.tocsc()
            for _ in range(30):
                r = K @ v + self.m_t * (self.c**2 * v - v**self.p)
                J = K + sp.diags(self.m_t * (self.c**2 - self.p * v ** (self.p - 1)))
                dv = spla.spsolve(J.tocsc(), r)
                v = v - dv
                if np.max(np.abs(dv)) < 1e-15 * np.max(np.abs(v)):
                    break
            self._trivial = v
        return np.repeat(self._trivial[:, None], self.n_D, axis=1)

    def trivial_profile(self):
        self.trivial()
        return self._trivial.copy()

    # -- solvers ---------------------------------------------------------------
    @lru_cache(maxsize=8)
    def laplace_solver(self, alpha: float) -> SeparableSolver:
        """Exact inverse of the linear part ``L_alpha`` (symmetric positive definite)."""
        o = self.ops(alpha)
        return SeparableSolver(self.K_t, self.m_t, o.M, o.S)

    def trivial_jacobian_solver(self, alpha: float, n_sigma: int = 6) -> SeparableSolver:
        """Exact solver for the Jacobian at the discrete radial solution."""
        o = self.ops(alpha)
        vb = self.trivial_profile()
        A_t = self.K_t - sp.diags(self.m_t * self.p * vb ** (self.p - 1.0))
        spec = solve_lowest(o.S, o.M, n_sigma, alpha=alpha)
        return SeparableSolver(A_t, self.m_t, o.M, o.S, spectrum_hint=spec.eigenvalues)

    def reshape(self, x):
        return np.asarray(x).reshape(self.n_t, self.n_D)


# ---------------------------------------------------------------------------
# Newton and linear algebra


def _gmres(apply, b, precond, rtol=1e-10, maxiter=4, restart=80, accept=1e-8):
    """Right-preconditioned GMRES; returns ``(x, ok, matvecs)``.

    The solve counts as successful when the true relative residual is below
    ``accept``; Newton tolerates that inexactness.
    """
    n = b.size
    count = [0]

    def mv(y):
        count[0] += 1
        return apply(precond(y))

    A = spla.LinearOperator((n, n), matvec=mv, dtype=float)
    y, _ = spla.gmres(A, b, rtol=rtol, atol=0.0, restart=restart, maxiter=maxiter)
    x = precond(y)
    bn = np.linalg.norm(b)
    ok = bool(np.isfinite(x).all() and np.linalg.norm(apply(x) - b) <= accept * max(bn, 1e-300))
    return x, ok, count[0]


@dataclass
class NewtonResult:
    V: np.ndarray
    alpha: float
    residual: float
    iterations: int
    linear_iterations: int


def newton_solve(problem: CylinderProblem, alpha: float, V_init, tol: float = 1e-10,
                 max_iter: int = 25) -> NewtonResult:
    """Newton's method for ``F(alpha, V) = 0`` at fixed ``alpha`` on even fields.

    Raises
    ------
    SingularJacobian
        When a linear solve fails to converge, which happens at bifurcation points.
    NewtonFailure
        On divergence or when the iteration budget is exhausted.
    """
    V = problem.reshape(np.array(V_init, dtype=float))
    pre = problem.laplace_solver(float(alpha))
    lin = 0
    res = problem.full_residual_norm(problem.F(alpha, V))
    for it in range(max_iter + 1):
        if res <= tol:
            return NewtonResult(V, float(alpha), res, it, lin)
        if it == max_iter or not np.isfinite(res):
            break
        Fv = problem.F(alpha, V)
        wq = problem.jac_weight(alpha, V)

        def apply(x):
            return problem.jvp(alpha, V, problem.reshape(x), wq).ravel()

        dx, ok, n_it = _gmres(apply, -Fv.ravel(),
                              lambda y: pre.solve(problem.reshape(y)).ravel())
        lin += n_it
        if not ok:
            raise SingularJacobian("linear solve did not converge (singular Jacobian?)",
                                   alpha=alpha, residual=res)
        V = V + problem.reshape(dx)
        res = problem.full_residual_norm(problem.F(alpha, V))
    raise NewtonFailure("Newton iteration did not converge", alpha=alpha, residual=res)


def _arclength_newton(problem, x_pred, tangent, anchor, ds, tol, max_iter, pre_cache):
    """Corrector for ``F = 0`` plus ``<tau_V, V - V_a> + tau_a (alpha - alpha_a) = ds``."""
    V = x_pred[0].copy()
    alpha = float(x_pred[1])
    tV, ta = tangent
    Va, aa = anchor
    n = V.size
    lin = 0
    Mref = problem._M_ref
    tVw = problem.m_t[:, None] * (Mref @ tV.T).T
    for it in range(max_iter + 1):
        Fv = problem.F(alpha, V)
        g = problem.inner(tV, V - Va) + ta * (alpha - aa) - ds
        res = problem.full_residual_norm(Fv)
        if res <= tol and abs(g) <= 1e-10 * max(1.0, abs(ds)):
            return V, alpha, res, it, lin
        if it == max_iter or not np.isfinite(res):
            break
        key = round(alpha, 3)
        if key not in pre_cache:
            pre_cache.clear()
            pre_cache[key] = problem.laplace_solver(key)
        pre = pre_cache[key]
        Fa = problem.F_alpha(alpha, V).ravel()
        wq = problem.jac_weight(alpha, V)

        def apply(x):
            dV = problem.reshape(x[:n])
            top = problem.jvp(alpha, V, dV, wq).ravel() + Fa * x[n]
            bot = float(np.sum(tVw * dV)) + ta * x[n]
            return np.concatenate([top, [bot]])

        def precond(y):
            return np.concatenate([pre.solve(problem.reshape(y[:n])).ravel(), y[n:]])

        rhs = -np.concatenate([Fv.ravel(), [g]])
        dx, ok, n_it = _gmres(apply, rhs, precond)
        lin += n_it
        if not ok:
            break
        V = V + problem.reshape(dx[:n])
        alpha += float(dx[n])
    raise NewtonFailure("arclength corrector did not converge", alpha=alpha)


# ---------------------------------------------------------------------------
# spectra


def linearized_even_spectrum(problem: CylinderProblem, alpha: float, V_base, k: int = 3,
                             X0=None, tol: float = 1e-11):
    """Lowest ``k`` values ``mu`` of ``L_alpha w = mu B(V_base) w`` on even fields.

    ``B`` is the mass weighted by ``V_base^{p-1}``; ``mu = 2*-1`` marks a
    kernel direction of the linearization.  Returns ``(mu, W)`` with ``W``
    of shape ``(k, n_t, n_D)``, each normalized to unit ``inner`` norm.
    """
    V_base = problem.reshape(V_base)
    n = problem.n_unknowns
    if np.min(V_base) <= 0:
        raise SolverFailure("base field must be positive for the weighted pencil")
    wq = problem.ops(alpha).w * np.abs(problem.quad(V_base)) ** (problem.p - 1.0)
    solver = problem.laplace_solver(float(alpha))

    def B(x):
        return problem.B_apply(alpha, V_base, problem.reshape(x), wq).ravel()

    def L(x):
        return problem.linear(alpha, problem.reshape(x)).ravel()

    def Linv(x):
        return solver.solve(problem.reshape(x)).ravel()

    Bop = spla.LinearOperator((n, n), matvec=B, dtype=float)
    Lop = spla.LinearOperator((n, n), matvec=L, dtype=float)
    Lin = spla.LinearOperator((n, n), matvec=Linv, dtype=float)
    if X0 is None:
        v0 = _even_start(problem)
    else:
        v0 = np.sum(np.asarray(X0).reshape(len(X0), -1), axis=0)
    vals, vecs = spla.eigsh(Bop, k=k, M=Lop, Minv=Lin, which="LA", v0=v0, tol=tol,
                            ncv=max(2 * k + 6, 16), maxiter=2000)
    order = np.argsort(-vals)
    mu = 1.0 / vals[order]
    W = []
    for j in order:
        w = problem.reshape(vecs[:, j])
        w = w / problem.norm(w)
        W.append(w)
    return mu, np.array(W)


def _even_start(problem: CylinderProblem):
    rng = np.random.default_rng(problem.seed)
    t = problem.t[:, None]
    X = problem.mesh.vertices
    base = np.exp(-0.5 * np.abs(t)) * (1.0 + X[None, :, 0] + 0.3 * X[None, :, 1])
    return (base + 1e-3 * rng.standard_normal(base.shape)).ravel()


def separable_trivial_mu(problem: CylinderProblem, alpha: float, lambdas) -> np.ndarray:
    """Lowest even ``mu`` for each Neumann eigenvalue, from the 1-D ``t`` problems.

    At the radial solution the pencil separates; the ``t`` problem is
    ``(K_t + (c^2 + lambda) M_t) a = mu diag(m_t v^{p-1}) a``.
    """
    vb = problem.trivial_profile()
    Kt = problem.K_t.toarray()
    Wt = np.diag(problem.m_t * vb ** (problem.p - 1.0))
    out = []
    for lam in lambdas:
        A = Kt + (problem.c**2 + lam) * np.diag(problem.m_t)
        # the weight decays like e^{-(p-1)c|t|}; keep the well-conditioned matrix on the right
        nu = sla.eigh(Wt, A, eigvals_only=True, subset_by_index=[len(A) - 1, len(A) - 1])[0]
        out.append(1.0 / nu)
    return np.array(out)


# ---------------------------------------------------------------------------
# bifurcation


@dataclass
class BifurcationResult:
    alpha_c: float
    kernel: np.ndarray
    mu: np.ndarray
    dmu2_dalpha: float
    kernel_overlap: float
    Y1: np.ndarray
    lambda1: float
    evaluations: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "alpha_c": self.alpha_c,
            "mu": list(map(float, self.mu)),
            "dmu2_dalpha": self.dmu2_dalpha,
            "kernel_overlap": self.kernel_overlap,
            "lambda1": self.lambda1,
        }


def neumann_first_mode(problem: CylinderProblem, alpha: float):
    o = problem.ops(alpha)
    spec = solve_lowest(o.K, o.M, 3, reference=problem.mesh.vertices[:, 0], alpha=alpha)
    return spec.eigenvalues, spec.eigenvectors[:, 1]


def detect_bifurcation(problem: CylinderProblem, alpha_window=(0.98, 1.02), xtol: float = 1e-9,
                       simplicity_tol: float = 1e-3) -> BifurcationResult:
    """Locate the crossing of the second even ``mu`` through ``2*-1`` at the radial solution."""
    vb = problem.trivial()
    p = problem.p
    evals = []

    def g(alpha):
        mu, _ = linearized_even_spectrum(problem, alpha, vb, k=3)
        evals.append((float(alpha), mu.tolist()))
        return mu[1] - p

    a, b = map(float, alpha_window)
    ga, gb = g(a), g(b)
    if ga * gb > 0:
        raise NoBifurcation("second even eigenvalue does not cross 2*-1 in the window",
                            window=[a, b], values=[ga, gb])
    # secant iteration safeguarded by the bracket
    alpha_c = brentq(g, a, b, xtol=xtol, rtol=1e-14)
    mu, W = linearized_even_spectrum(problem, alpha_c, vb, k=3)
    if abs(mu[2] - p) < simplicity_tol * p or abs(mu[0] - p) < simplicity_tol * p:
        raise SimplicityViolation("kernel of the linearization is more than one-dimensional",
                                  mu=mu.tolist())
    lam, Y1 = neumann_first_mode(problem, alpha_c)
    phi = W[1]
    proj = Y1 @ (problem.ops(alpha_c).M @ np.sum(problem.m_t[:, None] * phi, axis=0))
    if proj < 0:
        phi = -phi
    psi = kernel_profile(problem.params, problem.t)[:, None] * Y1[None, :]
    overlap = abs(problem.inner(phi, psi)) / (problem.norm(phi) * problem.norm(psi))
    h = 1e-4
    d = (g(alpha_c + h) - g(alpha_c - h)) / (2 * h)
    return BifurcationResult(float(alpha_c), phi / problem.norm(phi), mu, float(d), float(overlap),
                             Y1, float(lam[1]), evals)


def fredholm_check(problem: CylinderProblem, bif: BifurcationResult) -> dict:
    """Solve ``J x = b`` at the bifurcation point for ``b`` along and orthogonal to the kernel.

    Returns the amplification ``||x|| / ||b||`` for both right-hand sides and
    the eigenvalue of smallest modulus of the exact separable Jacobian.
    """
    solver = problem.trivial_jacobian_solver(bif.alpha_c)
    phi = bif.kernel
    W = problem.m_t[:, None] * (problem._M_ref @ phi.T).T
    b_kernel = W / np.linalg.norm(W)
    probe = bubble_profile(problem.params, problem.t)[:, None] * (
        1.0 + problem.mesh.vertices[None, :, 1] ** 2
    )
    probe = probe - problem.inner(probe, phi) * phi
    Wp = problem.m_t[:, None] * (problem._M_ref @ probe.T).T
    b_perp = Wp / np.linalg.norm(Wp)
    x_k = solver.solve(b_kernel)
    x_p = solver.solve(b_perp)
    return {
        "amplification_kernel": float(np.linalg.norm(x_k)),
        "amplification_complement": float(np.linalg.norm(x_p)),
        "smallest_eigenvalue": solver.smallest_eigenvalue(),
        "kernel_dimension": int(np.sum(np.abs(solver.theta[:, None] + solver.sigma[None, :]) < 1e-6)),
    }


# ---------------------------------------------------------------------------
# continuation


@dataclass
class StepPolicy:
    ds0_rel: float = 1e-2
    ds_min: float = 1e-3
    ds_max: float = 1e-1
    grow: float = 1.3
    shrink: float = 0.5
    fast_iterations: int = 3
    max_points: int = 30
    max_newton: int = 25
    newton_tol: float = 1e-10
    sup_ratio_stop: float = 0.5

    def validate(self):
        for name in ("ds0_rel", "ds_min", "ds_max", "grow", "shrink", "newton_tol", "sup_ratio_stop"):
            if not getattr(self, name) > 0:
                raise ValidationError("step policy values must be positive", field=name)
        if self.ds_min > self.ds_max:
            raise ValidationError("ds_min exceeds ds_max")


@dataclass
class ContinuationPoint:
    s: float
    alpha_s: float
    v_s: np.ndarray = field(repr=False)
    residual: float
    smallest_even_eigenvalue: float
    asymmetry: float
    sup_ratio: float
    positivity: bool
    kelvin_defect: float
    quotient: float
    distance: float
    newton_iterations: int = 0

    def row(self) -> dict:
        return {
            "s": self.s,
            "alpha": self.alpha_s,
            "distance": self.distance,
            "asymmetry": self.asymmetry,
            "quotient": self.quotient,
            "smallest_even_eigenvalue": self.smallest_even_eigenvalue,
            "residual": self.residual,
            "sup_ratio": self.sup_ratio,
            "positivity": self.positivity,
            "kelvin_defect": self.kelvin_defect,
        }


@dataclass
class Branch:
    """One direction of the traced branch; ``origin`` is the bifurcation point itself."""

    direction: int
    origin: ContinuationPoint
    points: list
    termination: str
    alternative: str
    first_tangent_overlap: float | None = None

    def rows(self, include_origin: bool = True) -> list:
        pts = ([self.origin] if include_origin else []) + list(self.points)
        return [p.row() for p in pts]


def sobolev_quotient(problem: CylinderProblem, alpha: float, V) -> float:
    """``||grad u||_2 / ||u||_{2*}`` on the cone, computed in cylinder variables.

    The Dirichlet energy of ``u`` equals the quadratic form of ``L_alpha`` on
    ``v`` and ``|u|^{2*} rho^{N-1} d rho = |v|^{2*} dt``.
    """
    q = problem.params.crit_exp
    o = problem.ops(alpha)
    energy = float(np.sum(V * problem.linear(alpha, V)))
    lp = float(np.sum(problem.m_t[:, None] * problem.load(o.w * np.abs(problem.quad(V)) ** float(q))))
    return math.sqrt(energy) / lp ** (1.0 / float(q))


def point_diagnostics(problem: CylinderProblem, alpha, V, Y1, s, residual, iters, eig_guess=None):
    vb = problem.trivial()
    M_a = problem.ops(1.0).M
    coeff = (M_a @ V.T).T @ Y1
    asym = math.sqrt(float(np.sum(problem.m_t * coeff**2)))
    sup_ratio = float(np.max(np.abs(V - vb) / vb))
    full = problem.expand(V)
    kelvin = float(np.linalg.norm(full - full[::-1]) / np.linalg.norm(full))
    quotient = sobolev_quotient(problem, alpha, V)
    smallest = math.nan
    vecs = None
    if np.min(V) > 0:
        mu, vecs = linearized_even_spectrum(problem, alpha, V, k=3, X0=eig_guess, tol=1e-8)
        beta = 1.0 - problem.p / mu
        smallest = float(beta[np.argmin(np.abs(beta))])
    point = ContinuationPoint(float(s), float(alpha), V, float(residual), smallest, asym, sup_ratio,
                              bool(np.min(V) > 0), kelvin, quotient, problem.norm(V - vb), iters)
    return point, vecs


def trace_branch(problem: CylinderProblem, bif: BifurcationResult, policy: StepPolicy | None = None,
                 directions=(1, -1), alpha_star: float | None = None, eigen_diagnostics: bool = True):
    """Pseudo-arclength continuation of the nonradial branch from the bifurcation point."""
    policy = policy or StepPolicy()
    policy.validate()
    vb = problem.trivial()
    ds0 = policy.ds0_rel * problem.norm(vb)
    res0 = problem.full_residual_norm(problem.F(bif.alpha_c, vb))
    if eigen_diagnostics:
        origin, _ = point_diagnostics(problem, bif.alpha_c, vb, bif.Y1, 0.0, res0, 0)
    else:
        origin = _cheap_point(problem, bif.alpha_c, vb, bif.Y1, 0.0, res0, 0)
    branches = []
    for sgn in directions:
        phi = sgn * bif.kernel
        pre_cache: dict = {}
        x_prev = (vb, bif.alpha_c)
        tangent = (phi, 0.0)
        ds = min(max(ds0, policy.ds_min), policy.ds_max)
        s = 0.0
        points = []
        termination = "budget"
        eig_guess = None
        first_overlap = None
        while len(points) < policy.max_points:
            pred = (x_prev[0] + ds * tangent[0], x_prev[1] + ds * tangent[1])
            try:
                V, alpha, res, iters, _ = _arclength_newton(problem, pred, tangent, x_prev, ds,
                                                            policy.newton_tol, policy.max_newton,
                                                            pre_cache)
            except (NewtonFailure, SingularJacobian) as exc:
                log.info("step failed at ds=%.3g: %s", ds, exc)
                ds *= policy.shrink
                if ds < policy.ds_min:
                    if not points:
                        raise BranchEntryFailure("first continuation step failed", ds=ds) from exc
                    termination = "step-failure"
                    break
                continue
            s_new = s + ds
            if eigen_diagnostics:
                point, eig_guess = point_diagnostics(problem, alpha, V, bif.Y1, sgn * s_new, res, iters,
                                                     eig_guess)
            else:
                point = _cheap_point(problem, alpha, V, bif.Y1, sgn * s_new, res, iters)
            if point.sup_ratio >= policy.sup_ratio_stop or not point.positivity:
                termination = "left-positivity-ball"
                break
            if not points:
                d = V - vb
                first_overlap = abs(problem.inner(d, phi)) / (problem.norm(d) * problem.norm(phi))
            points.append(point)
            # secant tangent in (V, alpha) with the inner product used for arclength
            dV = V - x_prev[0]
            da = alpha - x_prev[1]
            nrm = math.sqrt(problem.inner(dV, dV) + da * da)
            tangent = (dV / nrm, da / nrm)
            x_prev = (V, alpha)
            s = s_new
            if alpha_star is not None and alpha >= alpha_star - 1e-3:
                termination = "parameter-boundary"
                break
            if iters <= policy.fast_iterations:
                ds = min(ds * policy.grow, policy.ds_max)
        branches.append(Branch(sgn, origin, points, termination, _alternative(points, termination, bif),
                               first_overlap))
    return branches


def _cheap_point(problem, alpha, V, Y1, s, res, iters):
    vb = problem.trivial()
    M_a = problem.ops(1.0).M
    coeff = (M_a @ V.T).T @ Y1
    asym = math.sqrt(float(np.sum(problem.m_t * coeff**2)))
    sup_ratio = float(np.max(np.abs(V - vb) / vb))
    full = problem.expand(V)
    kelvin = float(np.linalg.norm(full - full[::-1]) / np.linalg.norm(full))
    return ContinuationPoint(float(s), float(alpha), V, float(res), math.nan, asym, sup_ratio,
                             bool(np.min(V) > 0), kelvin, sobolev_quotient(problem, alpha, V),
                             problem.norm(V - vb), iters)


def _alternative(points, termination, bif) -> str:
    if termination == "parameter-boundary":
        return "reaches-parameter-boundary"
    if len(points) > 3:
        asym = np.array([p.asymmetry for p in points])
        if asym[-1] < 0.1 * asym.max() and abs(points[-1].alpha_s - bif.alpha_c) > 1e-3:
            return "returns-to-trivial"
    return "undetermined"


def dalpha_ds_at_origin(branches, window: float = 0.1) -> float:
    """Linear coefficient of a quadratic fit of ``alpha(s)`` through both directions near ``s = 0``."""
    s_vals, a_vals = [], []
    for br in branches:
        for p in [br.origin] + list(br.points):
            if abs(p.s) <= window:
                s_vals.append(p.s)
                a_vals.append(p.alpha_s)
    if len(set(np.sign(s_vals))) < 3 or len(s_vals) < 4:
        raise ValidationError("need points on both sides of s = 0 for the fit", count=len(s_vals))
    coef = np.polyfit(np.array(s_vals), np.array(a_vals), 2)
    return float(coef[1])


def _kernel_functional(problem: CylinderProblem, Y1):
    psi = kernel_profile(problem.params, problem.t)[:, None] * Y1[None, :]
    return psi / problem.norm(psi)


def solve_at_projection(problem: CylinderProblem, V_guess, alpha_guess, Y1, target: float | None = None,
                        tol: float = 1e-10, max_iter: int = 25):
    """Solve ``F = 0`` with a prescribed amplitude ``<V, psi>`` of the kernel profile.

    ``psi`` is ``(2 cosh t)^{-N/2} Y1``, normalized; by default the target is
    the amplitude of ``V_guess``.  Used to compare branches computed with
    different truncations at the same point along the branch.
    """
    psi = _kernel_functional(problem, Y1)
    V = problem.reshape(np.array(V_guess, dtype=float))
    if target is None:
        target = problem.inner(psi, V)
    Vs, alpha, res, _, _ = _arclength_newton(problem, (V, float(alpha_guess)), (psi, 0.0),
                                             (np.zeros_like(V), 0.0), target, tol, max_iter, {})
    return Vs, alpha, res


def extend_field(problem_from: CylinderProblem, V, problem_to: CylinderProblem):
    """Carry a half-grid field to a longer truncation, continuing it by the radial solution."""
    if problem_to.dt != problem_from.dt or problem_to.n_D != problem_from.n_D or \
            problem_to.n_t < problem_from.n_t:
        raise GridError("grids are not nested")
    out = problem_to.trivial().copy()
    n = problem_from.n_t
    out[:n] = V + (out[:n] - problem_from.trivial())
    return out


def truncation_check(problem: CylinderProblem, bif: BifurcationResult, branch: Branch,
                     factor: int = 2, samples=None) -> dict:
    """Repeat the bifurcation and selected branch points with ``T`` multiplied by ``factor``.

    Returns the shift of ``alpha_c`` and, per sampled point, the shifts of
    ``alpha``, of ``||v||`` and ``||v - v_U||``, and the distance between the
    deviations ``v - v_U`` on the common window.  ``field_shift`` compares the
    raw fields; it is dominated by the Neumann truncation of ``v_U`` itself,
    which is of the order of ``v_U(T)``.
    """
    long = CylinderProblem(problem.params, problem.mesh, T=factor * problem.T, dt=problem.dt,
                           seed=problem.seed)
    width = 0.01
    bif2 = detect_bifurcation(long, (bif.alpha_c - width, bif.alpha_c + width))
    pts = branch.points
    if samples is None:
        samples = sorted({0, len(pts) // 2, len(pts) - 1})
    rows = []
    n = problem.n_t
    for i in samples:
        p = pts[i]
        guess = extend_field(problem, p.v_s, long)
        V2, a2, res2 = solve_at_projection(long, guess, p.alpha_s, bif.Y1)
        diff = V2[:n] - p.v_s
        dev = (V2 - long.trivial())[:n] - (p.v_s - problem.trivial())
        rows.append({
            "index": int(i),
            "s": p.s,
            "alpha_shift": float(abs(a2 - p.alpha_s)),
            "norm_shift": float(abs(long.norm(V2) - problem.norm(p.v_s))),
            "distance_shift": float(abs(long.norm(V2 - long.trivial()) - p.distance)),
            "deviation_shift": problem.norm(dev),
            "field_shift": problem.norm(diff),
            "residual": res2,
        })
    return {
        "T": problem.T,
        "T_long": long.T,
        "alpha_c": bif.alpha_c,
        "alpha_c_long": bif2.alpha_c,
        "alpha_c_shift": float(abs(bif2.alpha_c - bif.alpha_c)),
        "points": rows,
    }
