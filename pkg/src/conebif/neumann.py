"""Neumann eigenproblem of the Laplace-Beltrami operator on ``(D, g_alpha)``.

The finite-element path assembles P1 operators on a chart mesh; the shooting
path separates variables on geodesic caps and works in any dimension.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import comb

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import odeint
from scipy.optimize import brentq

from .errors import NotApplicable, OracleFailure, SolverFailure, ValidationError
from .fem import P1Space
from .geometry import (
    HALF_PI,
    AlphaMetric,
    Mesh,
    ProblemParams,
    SphericalDomain,
    max_slice_width,
    metric_at,
)

CLUSTER_GAP = 1e-6
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class SpectrumResult:
    """Lowest Neumann eigenpairs, mass-orthonormal, in ascending order."""

    alpha: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    clusters: list
    residuals: np.ndarray
    mass: sp.spmatrix = field(repr=False)
    stiffness: sp.spmatrix = field(repr=False, default=None)

    @property
    def mass_matrix_id(self) -> str:
        return f"mass-{id(self.mass):x}"

    @property
    def lambda1(self) -> float:
        return float(self.eigenvalues[1])

    def cluster_of(self, j: int) -> list:
        return next(c for c in self.clusters if j in c)

    def to_dict(self, with_vectors: bool = False) -> dict:
        out = {
            "alpha": self.alpha,
            "eigenvalues": self.eigenvalues.tolist(),
            "clusters": [list(map(int, c)) for c in self.clusters],
            "residuals": self.residuals.tolist(),
        }
        if with_vectors:
            out["eigenvectors"] = self.eigenvectors.T.tolist()
        return out


def assemble(mesh: Mesh, metric: AlphaMetric):
    """Stiffness and mass matrices of ``(D, g_alpha)``."""
    K, M = P1Space(mesh).metric_operators(metric)
    return K, M


def cluster_indices(values, gap: float = CLUSTER_GAP) -> list:
    """Group consecutive eigenvalues whose relative gap is at most ``gap``."""
    clusters = [[0]]
    for i in range(1, len(values)):
        prev, cur = values[i - 1], values[i]
        if abs(cur - prev) <= gap * max(abs(cur), 1e-300):
            clusters[-1].append(i)
        else:
            clusters.append([i])
    return clusters


def _start_vector(n: int) -> np.ndarray:
    # deterministic, smooth-ish in index and free of symmetries
    i = np.arange(n)
    return 1.0 + 0.5 * np.sin(0.7 * i + 0.3) + 0.25 * np.cos(1.9 * i)


def _estimate_lambda1(K, M) -> float:
    n = K.shape[0]
    tau = 1e-4 * float(np.mean(K.diagonal() / M.diagonal()))
    lu = spla.splu((K + tau * M).tocsc())
    ones = np.ones(n)
    Mones = M @ ones
    total = ones @ Mones
    v = _start_vector(n)
    for _ in range(5):
        v = v - (Mones @ v) / total * ones
        v = lu.solve(M @ v)
        v /= np.linalg.norm(v)
    v = v - (Mones @ v) / total * ones
    return float(v @ (K @ v)) / float(v @ (M @ v))


def solve_lowest(K, M, k: int, tol: float = RESIDUAL_TOL, reference=None, alpha: float = 1.0,
                 shift: float | None = None) -> SpectrumResult:
    """The ``k+1`` lowest eigenpairs of ``K y = lambda M y``.

    Vectors are M-orthonormal after a Rayleigh-Ritz clean-up and signed so
    that ``reference^T M y > 0`` when a reference vector is given.

    Raises
    ------
    SolverFailure
        If the residual ``||K y - lambda M y|| <= tol ||y||`` is not reached.
    """
    if k < 1:
        raise ValidationError("k must be at least 1", k=k)
    K = sp.csr_matrix(K)
    M = sp.csr_matrix(M)
    n = K.shape[0]
    nev = k + 1
    if n <= max(200, 3 * nev):
        vals, vecs = sla.eigh(K.toarray(), M.toarray())
        vals, vecs = vals[:nev], vecs[:, :nev]
    else:
        sigma = shift if shift is not None else -_estimate_lambda1(K, M) / 10.0
        A = (K - sigma * M).tocsc()
        lu = spla.splu(A)
        op = spla.LinearOperator((n, n), matvec=lu.solve, dtype=float)
        ncv = min(n, max(2 * nev + 1, 20))
        attempts = 0
        while True:
            try:
                vals, vecs = spla.eigsh(K, nev, M, sigma=sigma, which="LM", OPinv=op,
                                        v0=_start_vector(n), ncv=ncv, tol=0.0, maxiter=5000)
                break
            except spla.ArpackNoConvergence as exc:
                attempts += 1
                if attempts > 2:
                    raise SolverFailure("eigen-iteration did not converge",
                                        converged=len(exc.eigenvalues)) from exc
                ncv = min(n, 2 * ncv)
    vals, vecs = _rayleigh_ritz(K, M, vecs)
    res = np.linalg.norm(K @ vecs - (M @ vecs) * vals, axis=0) / np.linalg.norm(vecs, axis=0)
    scale = max(1.0, float(vals[-1]))
    if np.any(res > tol * scale):
        raise SolverFailure("eigen residual above tolerance", residual=float(res.max()), tol=tol)
    if vals[0] < -1e-8 * scale:
        raise SolverFailure("negative eigenvalue: stiffness is not semidefinite", value=float(vals[0]))
    vals = np.maximum(vals, 0.0)
    MY = M @ vecs
    if reference is not None:
        s = np.asarray(reference) @ MY
    else:
        s = vecs[np.argmax(np.abs(vecs), axis=0), np.arange(nev)]
    vecs = vecs * np.where(s < 0, -1.0, 1.0)
    clusters = cluster_indices(vals)
    return SpectrumResult(float(alpha), vals, vecs, clusters, res, M, K)


def _rayleigh_ritz(K, M, Y):
    Kr = Y.T @ (K @ Y)
    Mr = Y.T @ (M @ Y)
    Kr = 0.5 * (Kr + Kr.T)
    Mr = 0.5 * (Mr + Mr.T)
    w, Z = sla.eigh(Kr, Mr)
    return w, Y @ Z


def mesh_spectrum(mesh: Mesh, alpha: float, k: int, tol: float = RESIDUAL_TOL) -> SpectrumResult:
    """Eigenpairs of ``(D, g_alpha)`` on a chart mesh; signs fixed by the chart ``X`` coordinate."""
    K, M = assemble(mesh, AlphaMetric(alpha))
    ref = mesh.vertices[:, 0] + 1e-3 * mesh.vertices[:, 1]
    if mesh.embedded:
        ref = mesh.vertices[:, 0] + 1e-3 * mesh.vertices[:, 1] + 1e-6 * mesh.vertices[:, 2]
    return solve_lowest(K, M, k, tol, reference=ref, alpha=alpha)


def domain_spectrum(D: SphericalDomain, mesh: Mesh, alpha: float, k: int = 3,
                    tol: float = RESIDUAL_TOL) -> SpectrumResult:
    # the hemisphere validation domain is only admitted with the round metric
    if not (D.parameters.get("allow_hemisphere") and alpha == 1.0):
        metric_at(D, alpha)
    return mesh_spectrum(mesh, alpha, k, tol)


# ---------------------------------------------------------------------------
# cap shooting oracle


def _cap_neumann_function(N: int, t: float, ell: int, lam: float) -> float:
    """``f'(t)`` up to a positive factor for the solution regular at the pole.

    With ``f = sin^ell(r) g`` the separated equation becomes
    ``g'' + (2 ell + N - 2) cot(r) g' + (lam - ell (ell + N - 2)) g = 0``,
    started from its Taylor series with ``g(0) = 1``.
    """
    a = 2 * ell + N - 2
    q = lam - ell * (ell + N - 2)
    r0 = min(1e-4, 1e-3 * t)
    c2 = -q / (2.0 * (a + 1))

    def rhs(y, r):
        return [y[1], -a * math.cos(r) / math.sin(r) * y[1] - q * y[0]]

    y, info = odeint(rhs, [1.0 + c2 * r0 * r0, 2.0 * c2 * r0], [r0, t], rtol=1e-13, atol=1e-15,
                     mxstep=200000, full_output=True)
    if info["message"] != "Integration successful.":
        raise OracleFailure("shooting integration failed", message=info["message"], lam=lam)
    g, dg = y[-1]
    # f'(t) = sin^{ell-1}(t) (ell cos(t) g + sin(t) g')
    F = ell * math.cos(t) * g + math.sin(t) * dg
    return F / max(1.0, abs(g), abs(dg))


def cap_eigenvalue_shooting(params: ProblemParams, t: float, ell: int, k: int) -> float:
    """k-th Neumann eigenvalue of the cap ``C_t`` in the angular sector of degree ``ell``.

    Counting starts at ``k = 1``; in the sector ``ell = 0`` this first value
    is the constant mode with eigenvalue 0.
    """
    if k < 1:
        raise ValidationError("need k >= 1", k=k)
    roots = cap_sector_eigenvalues(params, t, ell, count=k)
    return float(roots[k - 1])


def cap_sector_eigenvalues(params: ProblemParams, t: float, ell: int, count: int,
                           lam_max: float | None = None) -> list:
    """Lowest ``count`` eigenvalues of the degree-``ell`` sector, or all below ``lam_max``."""
    if not 0 < t <= HALF_PI + 1e-15:
        raise ValidationError("cap radius must lie in (0, pi/2]", t=t)
    if ell < 0 or count < 1:
        raise ValidationError("need ell >= 0 and count >= 1", ell=ell, count=count)
    N = params.N
    found = [0.0] if ell == 0 else []
    if len(found) >= count:
        return found
    s_max = (count + ell + 8) * math.pi / t + 20.0
    if lam_max is not None:
        s_max = min(s_max, math.sqrt(lam_max))
    # coarse vectorized scan in sqrt(lambda), consecutive roots are about pi/t apart
    s_lo = 1e-6 if ell == 0 else 0.0
    svals = np.arange(s_lo, s_max + 0.05 / t, 0.05 / t)
    lams = svals * svals
    F = _cap_scan(N, t, ell, lams)
    for i in np.nonzero(np.sign(F[:-1]) * np.sign(F[1:]) <= 0)[0]:
        if F[i] == 0.0 and i > 0:
            continue
        root = brentq(lambda lam: _cap_neumann_function(N, t, ell, lam), lams[i], lams[i + 1],
                      xtol=1e-13, rtol=4 * np.finfo(float).eps, maxiter=200)
        found.append(float(root))
        if len(found) >= count:
            return found[:count]
    if lam_max is not None:
        return [x for x in found if x <= lam_max]
    raise OracleFailure("no eigenvalue bracket found", scanned=[s_lo**2, s_max**2], found=len(found))


def _cap_scan(N: int, t: float, ell: int, lams: np.ndarray) -> np.ndarray:
    """Neumann function for many lambda at once, by RK4 on a graded grid (sign use only)."""
    a = 2 * ell + N - 2
    q = lams - ell * (ell + N - 2)
    h_max = min(t / 1000.0, 0.05 / max(1.0, math.sqrt(float(lams.max()))))
    r = 1e-3 * t
    grid = [r]
    while r < t:
        r = min(t, r + min(0.25 * r / (a + 1), h_max))
        grid.append(r)
    c2 = -q / (2.0 * (a + 1))
    r0 = grid[0]
    g = 1.0 + c2 * r0 * r0
    dg = 2.0 * c2 * r0

    def f(rr, g, dg):
        return dg, -a * math.cos(rr) / math.sin(rr) * dg - q * g

    for r0, r1 in zip(grid[:-1], grid[1:]):
        h = r1 - r0
        k1 = f(r0, g, dg)
        k2 = f(r0 + h / 2, g + h / 2 * k1[0], dg + h / 2 * k1[1])
        k3 = f(r0 + h / 2, g + h / 2 * k2[0], dg + h / 2 * k2[1])
        k4 = f(r1, g + h * k3[0], dg + h * k3[1])
        g = g + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        dg = dg + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        big = np.maximum(1.0, np.maximum(np.abs(g), np.abs(dg)))
        g, dg = g / big, dg / big
    return ell * math.cos(t) * g + math.sin(t) * dg


def sphere_harmonic_multiplicity(N: int, ell: int) -> int:
    """Dimension of degree-``ell`` spherical harmonics on ``S^{N-2}``."""
    d = N - 2
    if ell == 0:
        return 1
    return comb(ell + d, d) - (comb(ell + d - 2, d) if ell >= 2 else 0)


def cap_spectrum(params: ProblemParams, t: float, count: int = 6):
    """Lowest eigenvalues of ``C_t`` with multiplicities from the angular sectors.

    Returns a list of ``(lambda, ell, k, multiplicity)`` sorted by ``lambda``
    whose multiplicities add up to at least ``count + 1``.
    """
    rows = [(lam, 0, k + 1, 1) for k, lam in enumerate(cap_sector_eigenvalues(params, t, 0, count + 1))]
    ell = 1
    while True:
        bound = _multiplicity_bound(rows, count + 1)
        sector = cap_sector_eigenvalues(params, t, ell, count + 1, lam_max=bound)
        if not sector:
            break
        mult = sphere_harmonic_multiplicity(params.N, ell)
        rows.extend((lam, ell, k + 1, mult) for k, lam in enumerate(sector))
        ell += 1
    rows.sort()
    out, total = [], 0
    for row in rows:
        out.append(row)
        total += row[3]
        if total >= count + 1:
            break
    return out


def _multiplicity_bound(rows, total: int) -> float:
    acc = 0
    for row in sorted(rows):
        acc += row[3]
        if acc >= total:
            return row[0] * (1 + 1e-9)
    return sorted(rows)[-1][0]


def cap_values(params: ProblemParams, t: float, count: int = 6) -> np.ndarray:
    """Eigenvalues of ``C_t`` repeated by multiplicity (length ``count + 1``)."""
    vals = []
    for lam, _, _, mult in cap_spectrum(params, t, count):
        vals.extend([lam] * mult)
    return np.array(vals[: count + 1])


# ---------------------------------------------------------------------------
# simplicity


@dataclass(frozen=True)
class SimplicityReport:
    verdict: str
    relative_gap: float
    parity: dict
    max_slice_width: float
    slice_bound: float
    slice_ok: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def parity_of(vector: np.ndarray, perm: np.ndarray, M) -> tuple[str, float]:
    """Classify a mass-normalized vector as even/odd under a vertex permutation."""
    s = float(vector @ (M @ vector[perm])) / float(vector @ (M @ vector))
    if s > 0.99:
        return "even", s
    if s < -0.99:
        return "odd", s
    return "mixed", s


def verify_simplicity(D: SphericalDomain, spectrum: SpectrumResult, mesh: Mesh | None = None,
                      gap_tol: float = CLUSTER_GAP) -> SimplicityReport:
    """Combine the spectral gap, eigenfunction parities and the slice criterion."""
    lam = spectrum.eigenvalues
    if len(lam) < 3:
        raise ValidationError("need at least lambda_0, lambda_1, lambda_2", count=len(lam))
    gap = float((lam[2] - lam[1]) / lam[1])
    if "rotation" in D.symmetries:
        # degree-one harmonics give N-1 independent first eigenfunctions
        return SimplicityReport("not-simple", gap, {"rotation": "degenerate"}, 2 * math.pi, 0.0, False)
    if not {"equator", "meridian"} <= set(D.symmetries):
        raise NotApplicable("domain lacks the two reflection symmetries", symmetries=list(D.symmetries))
    if mesh is None or not mesh.reflections:
        raise NotApplicable("mesh reflections are needed for the parity test")
    y1 = spectrum.eigenvectors[:, 1]
    parity = {name: parity_of(y1, perm, spectrum.mass)[0] for name, perm in mesh.reflections.items()}
    width, _ = max_slice_width(D)
    bound = math.pi**2 / width**2 if width > 0 else math.inf
    slice_ok = width < HALF_PI
    if gap <= 10 * gap_tol:
        verdict = "inconclusive"
    elif slice_ok:
        verdict = "simple"
    else:
        verdict = "inconclusive"
    return SimplicityReport(verdict, gap, parity, width, bound, slice_ok)
