"""The standard bubble and the spectrum of its linearized operator on a cone.

Separating ``w = R(rho) Y_j(theta)`` in ``-Delta w = mu U^{2*-2} w``, where
``U^{2*-2} = N (N-2) (1+rho^2)^{-2}``, gives a radial equation which, in the
variable ``t = log(rho)`` with ``R = rho^{-(N-2)/2} v``, is the Poschl-Teller
problem

    v'' = (kappa^2 - mu N (N-2) / (4 cosh^2 t)) v,
    kappa^2 = ((N-2)/2)^2 + lambda_j.

Its bound states are ``mu = 4 s (s+1) / (N (N-2))`` with ``s = kappa + n``,
``n = 0, 1, ...``, and profiles ``sech^kappa(t) C_n^{(kappa+1/2)}(tanh t)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import odeint
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq
from scipy.special import eval_gegenbauer

from .errors import BracketFailure, IntegrationFailure, NoCrossing, ValidationError
from .geometry import ProblemParams

# half-length of the log-variable interval used by the shooting solver
SHOOT_HALF_LENGTH = 40.0


def bubble_value(params: ProblemParams, x_norm, scale: float = 1.0):
    """``U_s(x) = s U(s^{2/(N-2)} x)`` with ``U = c0 (1 + |x|^2)^{-(N-2)/2}``."""
    N = params.N
    x = np.asarray(x_norm, dtype=float) * scale ** (2.0 / (N - 2))
    return scale * params.c0 * (1.0 + x * x) ** (-(N - 2) / 2.0)


def bubble_pde_residual(params: ProblemParams, rho, step: float = 1e-3):
    """``-Delta U - U^p`` at radii ``rho`` by a fourth-order finite-difference radial Laplacian."""
    rho = np.asarray(rho, dtype=float)
    N = params.N

    def U(x):
        return bubble_value(params, x)

    h = step
    d1 = (-U(rho + 2 * h) + 8 * U(rho + h) - 8 * U(rho - h) + U(rho - 2 * h)) / (12 * h)
    d2 = (-U(rho + 2 * h) + 16 * U(rho + h) - 30 * U(rho) + 16 * U(rho - h) - U(rho - 2 * h)) / (
        12 * h * h
    )
    lap = d2 + (N - 1) / rho * d1
    return -lap - U(rho) ** params.p


def kelvin_transform(params: ProblemParams, f: Callable, x):
    """``|x|^{2-N} f(x / |x|^2)`` for radial points ``x`` (norms)."""
    x = np.asarray(x, dtype=float)
    return x ** (2.0 - params.N) * f(1.0 / x)


def beta_of(params: ProblemParams, lam) -> float:
    """Exponent with ``2 beta = -(N-2) + sqrt((N-2)^2 + 4 lam)``."""
    N = params.N
    return 0.5 * (-(N - 2) + np.sqrt((N - 2) ** 2 + 4.0 * np.asarray(lam, dtype=float)))


def mu_from_s(params: ProblemParams, s):
    N = params.N
    return 4.0 * s * (s + 1.0) / (N * (N - 2))


def mu_radial_closed(params: ProblemParams, k: int) -> float:
    """Eigenvalue of the ``k``-th radial mode (``lambda_0 = 0``)."""
    if k < 1:
        raise ValidationError("k must be >= 1", k=k)
    N = params.N
    return (k - 1) * (k + N - 2) * 4.0 / (N * (N - 2)) + 1.0


def mu_angular_closed(params: ProblemParams, lambda1: float) -> tuple[float, float]:
    """Lowest eigenvalue fed by a Neumann eigenvalue ``lambda1`` and the exponent ``beta``."""
    if lambda1 < 0:
        raise ValidationError("lambda must be nonnegative", lam=lambda1)
    N = params.N
    S = math.sqrt((N - 2) ** 2 + 4.0 * lambda1)
    return S * (2.0 + S) / (N * (N - 2)), float(beta_of(params, lambda1))


def dmu_angular_dlambda(params: ProblemParams, lambda1: float) -> float:
    N = params.N
    S = math.sqrt((N - 2) ** 2 + 4.0 * lambda1)
    return 4.0 / (N * (N - 2)) * (1.0 + 1.0 / S)


def mode_mu(params: ProblemParams, lam: float, n: int) -> float:
    """Poschl-Teller eigenvalue with ``n`` nodes for Neumann eigenvalue ``lam``."""
    kappa = math.sqrt(params.emden_fowler_shift**2 + lam)
    return float(mu_from_s(params, kappa + n))


def radial_profile(params: ProblemParams, lam: float, n: int) -> Callable:
    """Closed-form radial profile ``R(rho)`` of the mode with ``n`` nodes (unnormalized).

    ``R(rho) = rho^{-(N-2)/2} sech^kappa(t) C_n^{(kappa+1/2)}(tanh t)``, ``t = log rho``.
    """
    c = params.emden_fowler_shift
    kappa = math.sqrt(c * c + lam)

    def R(rho):
        rho = np.asarray(rho, dtype=float)
        t = np.log(rho)
        v = np.cosh(t) ** (-kappa) * eval_gegenbauer(n, kappa + 0.5, np.tanh(t))
        return rho ** (-c) * v

    return R


def _shoot(params: ProblemParams, lam: float, mu: float, half_length: float):
    """Integrate the decaying solution from ``t = -half_length`` to ``t = 0``."""
    N = params.N
    kappa2 = params.emden_fowler_shift**2 + lam
    kappa = math.sqrt(kappa2)
    coupling = mu * N * (N - 2) / 4.0

    def rhs(y, t):
        return [y[1], (kappa2 - coupling / math.cosh(t) ** 2) * y[0]]

    y, info = odeint(rhs, [1.0, kappa], [-half_length, 0.0], rtol=1e-13, atol=1e-300,
                     mxstep=200000, full_output=True)
    if info["message"] != "Integration successful.":
        raise IntegrationFailure("radial shooting failed", message=info["message"], mu=mu)
    v, dv = y[-1]
    if not (np.isfinite(v) and np.isfinite(dv)):
        raise IntegrationFailure("radial shooting blew up", mu=mu)
    return v, dv


def shooting_function(params: ProblemParams, lam: float, mu: float,
                      half_length: float = SHOOT_HALF_LENGTH) -> float:
    """``v(0) v'(0) / (v(0)^2 + v'(0)^2)``: zero exactly at even or odd bound states."""
    v, dv = _shoot(params, lam, mu, half_length)
    return v * dv / (v * v + dv * dv)


def shoot_radial_ode(params: ProblemParams, lambda_j: float, mu_bracket,
                     half_length: float = SHOOT_HALF_LENGTH, xtol: float = 1e-14) -> float:
    """Eigenvalue ``mu`` of the radial equation inside ``mu_bracket`` by shooting.

    The solution decaying like ``rho^{beta}`` at the origin is continued to
    ``t = 0`` (``rho = 1``); by the ``t -> -t`` symmetry of the potential it
    decays at infinity exactly when ``v(0) v'(0) = 0``.

    Raises
    ------
    BracketFailure
        If the shooting function does not change sign on the bracket.
    """
    lo, hi = map(float, mu_bracket)
    f_lo = shooting_function(params, lambda_j, lo, half_length)
    f_hi = shooting_function(params, lambda_j, hi, half_length)
    if f_lo * f_hi > 0:
        raise BracketFailure("no sign change of the shooting function", bracket=[lo, hi],
                             values=[f_lo, f_hi])
    return float(brentq(lambda mu: shooting_function(params, lambda_j, mu, half_length), lo, hi,
                        xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200))


def shoot_spectrum(params: ProblemParams, lambda_j: float, count: int, mu_max: float = 40.0,
                   step: float = 0.05, half_length: float = SHOOT_HALF_LENGTH) -> list:
    """Lowest ``count`` eigenvalues ``mu`` for ``lambda_j``, bracketed by a scan in ``mu``."""
    grid = np.arange(step, mu_max + step, step)
    vals = [shooting_function(params, lambda_j, mu, half_length) for mu in grid]
    out = []
    for lo, hi, f_lo, f_hi in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
        if f_lo * f_hi <= 0:
            out.append(shoot_radial_ode(params, lambda_j, (lo, hi), half_length))
            if len(out) == count:
                return out
    raise BracketFailure("fewer eigenvalues than requested below mu_max", found=len(out),
                         mu_max=mu_max)


@dataclass(frozen=True)
class BubbleModeSpec:
    k: int
    j: int
    lambda_j: float
    mu: float
    beta: float
    m: int
    radial_profile: Callable = field(repr=False, compare=False)


def mode_count(params: ProblemParams, lambda1: float) -> tuple[int, bool]:
    """``m`` with ``(m-1)(m+N-3) < lambda1 <= m(m+N-2)`` and whether equality holds."""
    N = params.N
    m = 1
    while not ((m - 1) * (m + N - 3) < lambda1 <= m * (m + N - 2)):
        m += 1
        if m > 10_000:
            raise ValidationError("lambda too large", lam=lambda1)
    return m, bool(math.isclose(lambda1, m * (m + N - 2), rel_tol=1e-12))


@dataclass(frozen=True)
class LinearizedMode:
    mu: float
    origins: tuple
    degeneracy: int


def linearized_spectrum(params: ProblemParams, lambda1: float):
    """Lowest eigenvalues of the linearized operator for Neumann eigenvalues ``0 < lambda1``.

    Returns ``(modes, m, boundary)``: radial modes ``k = 1..m``, then the first
    angular mode, merged into clusters when values coincide (relative 1e-12);
    ``boundary`` flags equality in the mode-count condition, where the next
    radial value coincides with the angular one.
    """
    if not lambda1 > 0:
        raise ValidationError("lambda1 must be positive", lam=lambda1)
    m, boundary = mode_count(params, lambda1)
    entries = [(mu_radial_closed(params, k), ("radial", k, 0)) for k in range(1, m + 1)]
    mu_ang, _ = mu_angular_closed(params, lambda1)
    entries.append((mu_ang, ("angular", 1, 1)))
    nxt = mu_radial_closed(params, m + 1)
    if math.isclose(nxt, mu_ang, rel_tol=1e-12):
        entries.append((nxt, ("radial", m + 1, 0)))
    entries.sort(key=lambda e: e[0])
    modes = []
    for mu, origin in entries:
        if modes and math.isclose(modes[-1].mu, mu, rel_tol=1e-12):
            last = modes.pop()
            modes.append(LinearizedMode(last.mu, last.origins + (origin,), last.degeneracy + 1))
        else:
            modes.append(LinearizedMode(mu, (origin,), 1))
    return modes, m, boundary


def mode_spec(params: ProblemParams, k: int, j: int, lambda_j: float) -> BubbleModeSpec:
    """Closed-form description of mode ``(k, j)``: ``j = 0`` radial, ``j = 1`` first angular."""
    if j not in (0, 1):
        raise ValidationError("angular index must be 0 or 1", j=j)
    lam = 0.0 if j == 0 else float(lambda_j)
    mu = mode_mu(params, lam, k - 1)
    m = mode_count(params, lambda_j)[0] if lambda_j > 0 else 1
    return BubbleModeSpec(k, j, lam, mu, float(beta_of(params, lam)), m, radial_profile(params, lam, k - 1))


# ---------------------------------------------------------------------------
# crossing numbers


def beta2_of_lambda(params: ProblemParams, lambda1):
    """``beta_2 = 1 - (2*-1)/mu_2`` with ``mu_2`` the first angular eigenvalue."""
    lam = np.atleast_1d(np.asarray(lambda1, dtype=float))
    mu = np.array([mu_angular_closed(params, x)[0] for x in lam])
    out = 1.0 - params.p / mu
    return out if np.ndim(lambda1) else float(out[0])


@dataclass(frozen=True)
class CrossingReport:
    alpha_samples: list
    lambda1_samples: list
    beta2_samples: list
    beta1: float
    beta_next: float
    crossing_alpha: float
    odd_crossing: bool
    direction: str

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def crossing_eigenvalues(params: ProblemParams, alphas, lambdas, lambda2s=None) -> CrossingReport:
    """Crossing numbers along a sampled curve ``alpha -> lambda_1(D_alpha)``.

    ``beta_next`` is the next eigenvalue on the Kelvin-invariant space: the
    radial ``k = 3`` mode, or the angular mode of ``lambda_2`` when lower.
    ``direction`` records the sign of ``beta_2`` below and above the crossing.
    """
    a = np.asarray(alphas, dtype=float)
    order = np.argsort(a)
    a = a[order]
    lam = np.asarray(lambdas, dtype=float)[order]
    b2 = beta2_of_lambda(params, lam)
    beta1 = 2.0 - float(params.crit_exp)
    mu_next = mu_radial_closed(params, 3)
    if lambda2s is not None:
        mu_next = min(mu_next, min(mu_angular_closed(params, x)[0] for x in lambda2s))
    beta_next = 1.0 - params.p / mu_next
    idx = np.nonzero(np.sign(b2[:-1]) * np.sign(b2[1:]) <= 0)[0]
    if len(idx) == 0:
        raise NoCrossing("beta_2 does not change sign on the sampled range",
                         alpha_range=[float(a[0]), float(a[-1])])
    i = int(idx[0])
    if len(a) >= 4:
        spline = CubicSpline(a, b2)
        root = brentq(spline, a[i], a[i + 1], xtol=1e-14) if b2[i] != b2[i + 1] else a[i]
    else:
        root = a[i] - b2[i] * (a[i + 1] - a[i]) / (b2[i + 1] - b2[i])
    below, above = b2[0], b2[-1]
    direction = f"{'+' if below > 0 else '-'} -> {'+' if above > 0 else '-'}"
    odd = bool(below * above < 0 and beta1 < 0 and beta_next > 0)
    return CrossingReport(a.tolist(), lam.tolist(), b2.tolist(), beta1, float(beta_next),
                          float(root), odd, direction)
