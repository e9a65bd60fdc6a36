"""Derivative of the first Neumann eigenvalue along the dilation family at ``alpha = 1``."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import NonSimpleEigenvalue, StencilFailure
from .fem import P1Space
from .geometry import AlphaMetric, Mesh, ProblemParams, SphericalDomain, b_function, sinc
from .neumann import CLUSTER_GAP, SpectrumResult, assemble, mesh_spectrum


@dataclass(frozen=True)
class DerivativeReport:
    value_formula: float
    value_fd: float
    rel_err: float
    criterion_met: bool
    b_min: float
    lambda1: float
    delta: float
    value_fd_half: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def negativity_criterion(params: ProblemParams, t: float) -> bool:
    """True iff ``t / tan t >= (N-4)/(N-2)``; always true for N = 3, 4."""
    return bool(float(b_function(t)) >= (params.N - 4) / (params.N - 2))


def _require_simple(D: SphericalDomain, spectrum: SpectrumResult, j: int = 1):
    if "rotation" in D.symmetries:
        raise NonSimpleEigenvalue("rotationally symmetric domain: lambda_1 has multiplicity N-1")
    lam = spectrum.eigenvalues
    if len(spectrum.cluster_of(j)) > 1 or (
        j + 1 < len(lam) and lam[j + 1] - lam[j] <= 10 * CLUSTER_GAP * lam[j]
    ):
        raise NonSimpleEigenvalue("eigenvalue is not simple", index=j, eigenvalues=lam[: j + 2].tolist())


def berger_integrand(space: P1Space, u: np.ndarray, lam: float, N: int = 3):
    """Integrand of the derivative formula at the quadrature points, shape ``(m, 3)``."""
    G = space.gradients
    grad = np.einsum("mad,ma->md", G, u[space.mesh.elements])
    x = space.points
    r = space.point_radius
    safe = np.where(r > 0, r, 1.0)
    e_r = x / safe[..., None]
    du_r = np.einsum("mqd,md->mq", e_r, grad)
    du_w = (e_r[..., 0] * grad[:, None, 1] - e_r[..., 1] * grad[:, None, 0]) / sinc(r)
    uq = np.einsum("qa,ma->mq", np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]]),
                   u[space.mesh.elements])
    b = b_function(r)
    return (
        (-1.0 + (N - 2) * b) * du_r**2
        + (1.0 + (N - 4) * b) * du_w**2
        - lam * uq**2 * (1.0 + (N - 2) * b)
    )


def berger_derivative(D: SphericalDomain, mesh: Mesh, spectrum: SpectrumResult, j: int = 1) -> float:
    """``d lambda_j / d alpha`` at ``alpha = 1`` from the eigenfunction on ``D``.

    ``lambda_j`` is replaced by the Rayleigh quotient of the supplied vector,
    which is normalized to unit ``L^2`` mass first (with a warning if needed).
    """
    _require_simple(D, spectrum, j)
    if spectrum.alpha != 1.0:
        raise ValueError("the derivative formula needs the spectrum at alpha = 1")
    return _formula(mesh, spectrum.eigenvectors[:, j], D.params.N)


def _formula(mesh: Mesh, u: np.ndarray, N: int = 3) -> float:
    space = P1Space(mesh)
    K, M = assemble(mesh, AlphaMetric(1.0))
    mass = float(u @ (M @ u))
    if abs(mass - 1.0) > 1e-8:
        warnings.warn("eigenfunction not L2-normalized; normalizing", RuntimeWarning, stacklevel=3)
        u = u / np.sqrt(mass)
    lam = float(u @ (K @ u))
    w = space.quadrature_weights(AlphaMetric(1.0))
    return float(np.sum(w * berger_integrand(space, u, lam, N)))


def _lambda_at(D: SphericalDomain, mesh: Mesh, alpha: float, k: int = 3) -> float:
    spec = mesh_spectrum(mesh, alpha, k)
    lam = spec.eigenvalues
    if len(spec.cluster_of(1)) > 1 or lam[2] - lam[1] <= 10 * CLUSTER_GAP * lam[1]:
        raise StencilFailure("eigenvalue crossing inside the stencil", alpha=alpha,
                             eigenvalues=lam[:3].tolist())
    return float(lam[1])


def fd_derivative(D: SphericalDomain, mesh: Mesh, delta: float = 1e-3) -> float:
    """Central difference of ``lambda_1(D, g_alpha)`` about ``alpha = 1``."""
    if "rotation" in D.symmetries:
        raise StencilFailure("lambda_1 of a rotationally symmetric domain is not simple")
    a_star = np.pi / 2 / D.sup_r
    if 1 + delta >= a_star - 1e-6:
        raise StencilFailure("stencil reaches alpha*", delta=delta, alpha_star=a_star)
    hi = _lambda_at(D, mesh, 1.0 + delta)
    lo = _lambda_at(D, mesh, 1.0 - delta)
    return (hi - lo) / (2.0 * delta)


def derivative_report(D: SphericalDomain, mesh: Mesh, delta: float = 1e-3,
                      spectrum: SpectrumResult | None = None, richardson: bool = True) -> DerivativeReport:
    spec = spectrum if spectrum is not None else mesh_spectrum(mesh, 1.0, 3)
    formula = berger_derivative(D, mesh, spec)
    fd = fd_derivative(D, mesh, delta)
    fd_half = fd_derivative(D, mesh, delta / 2) if richardson else None
    rel = abs(formula - fd) / max(abs(fd), 1e-300)
    return DerivativeReport(
        value_formula=formula,
        value_fd=fd,
        rel_err=rel,
        criterion_met=negativity_criterion(D.params, D.sup_r),
        b_min=float(b_function(D.sup_r)),
        lambda1=spec.lambda1,
        delta=delta,
        value_fd_half=fd_half,
    )
