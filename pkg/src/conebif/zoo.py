"""Concrete domain families: channel tuning of dumbbells and the threshold crossing in alpha."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import (
    ConebifError,
    MeshingFailure,
    NoCrossing,
    SolverError,
    TuningFailure,
    ValidationError,
)
from .geometry import (
    Mesh,
    ProblemParams,
    SphericalDomain,
    alpha_star,
    make_dumbbell,
    mesh,
    metric_at,
)
from .neumann import mesh_spectrum, verify_simplicity

TUNE_BAND = 0.05


def _lambda1(m: Mesh, alpha: float = 1.0) -> float:
    return mesh_spectrum(m, alpha, 2).lambda1


def tune_dumbbell_channel(params: ProblemParams, seed: dict, target: float = 1.0, h: float = 0.02,
                          max_evals: int = 40):
    """Adjust the channel half-width until ``lambda_1`` lies within 5% of ``target``.

    Returns ``(domain, sweep)`` where ``sweep`` lists every evaluated
    ``(channel_halfwidth, lambda_1)`` pair sorted by width.
    """
    if not 0 < target < params.lambda_threshold:
        raise ValidationError("target must lie in (0, N-1)", target=target)
    r0, a, w = float(seed["r0"]), float(seed["cap_radius"]), float(seed["channel_halfwidth"])
    lo_band, hi_band = target * (1 - TUNE_BAND), target * (1 + TUNE_BAND)
    sweep: dict[float, float] = {}
    narrowest = None

    def evaluate(width):
        nonlocal narrowest
        D = make_dumbbell(params, r0, a, width)
        try:
            lam = _lambda1(mesh(D, h))
        except MeshingFailure as exc:
            raise TuningFailure("meshing failed before the target was reached", width=width,
                                narrowest_lambda1=narrowest, cause=str(exc)) from exc
        sweep[width] = lam
        narrowest = lam if narrowest is None else min(narrowest, lam)
        return D, lam

    D, lam = evaluate(w)
    # bracket on log(width); lambda_1 is expected (and checked) to grow with the width
    lo = hi = None
    if lam < lo_band:
        lo = w
    elif lam > hi_band:
        hi = w
    else:
        return D, sorted(sweep.items())
    for _ in range(max_evals):
        if lo is None:
            w = hi / 2
        elif hi is None:
            w = min(2 * lo, 0.5 * (math.pi / 2 - 1e-3))
        else:
            w = math.sqrt(lo * hi)
        D, lam = evaluate(w)
        if lo_band <= lam <= hi_band:
            return D, sorted(sweep.items())
        if lam < lo_band:
            lo = w
        else:
            hi = w
    raise TuningFailure("channel tuning did not converge", narrowest_lambda1=narrowest,
                        sweep=sorted(sweep.items()))


def sweep_is_monotone(sweep) -> bool:
    """True if ``lambda_1`` strictly increases with the channel width over the sweep."""
    lam = np.array([v for _, v in sorted(sweep)])
    return bool(np.all(np.diff(lam) > 0))


@dataclass(frozen=True, eq=False)
class TunedFamily:
    """A domain with the crossing value ``alpha_hat`` of ``lambda_1(D_alpha) = N - 1``.

    Reparametrization is bookkeeping: ``domain(a)`` is ``base`` dilated by
    ``a * alpha_hat``, so ``domain(1)`` sits exactly at the threshold.
    ``lambda1_curve`` holds ``(a, lambda_1)`` pairs in the new parameter.
    """

    base: SphericalDomain
    alpha_hat: float
    lambda1_curve: list
    simple_near_crossing: bool
    mesh_h: float
    simplicity: dict = field(default_factory=dict)

    @property
    def alpha_star(self) -> float:
        return alpha_star(self.base) / self.alpha_hat

    def domain(self, alpha: float = 1.0) -> SphericalDomain:
        return self.base.dilated(alpha * self.alpha_hat)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "base": self.base.to_dict(),
            "alpha_hat": self.alpha_hat,
            "alpha_star": self.alpha_star,
            "lambda1_curve": [list(map(float, p)) for p in self.lambda1_curve],
            "simple_near_crossing": self.simple_near_crossing,
            "mesh_h": self.mesh_h,
            "simplicity": self.simplicity,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TunedFamily":
        base = SphericalDomain.from_dict(data["base"])
        return cls(base, float(data["alpha_hat"]), [tuple(p) for p in data["lambda1_curve"]],
                   bool(data["simple_near_crossing"]), float(data["mesh_h"]), data.get("simplicity", {}))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path) -> "TunedFamily":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def write_curve_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "lambda1"])
            for a, lam in self.lambda1_curve:
                w.writerow([repr(float(a)), repr(float(lam))])


def find_crossing_alpha(D: SphericalDomain, params: ProblemParams | None = None, h: float = 0.02,
                        xtol: float = 1e-7, base_mesh: Mesh | None = None,
                        window=(0.9, 0.95, 0.98, 0.99, 1.0, 1.01, 1.02, 1.05, 1.1)) -> TunedFamily:
    """Locate ``alpha_hat`` with ``lambda_1(D_alpha_hat) = N - 1`` by Brent's method.

    All eigenvalues come from one base mesh, dilated exactly with the domain.
    """
    params = params or D.params
    target = params.lambda_threshold
    m = base_mesh if base_mesh is not None else mesh(D, h)

    def excess(alpha):
        return _lambda1(m, alpha) - target

    f1 = excess(1.0)
    if abs(f1) <= 1e-6 * target:
        alpha_hat = 1.0
    elif f1 > 0:
        raise NoCrossing("lambda_1(D) is already above N-1; no crossing below alpha = 1",
                         lambda1=f1 + target)
    else:
        lo = 0.5
        while excess(lo) <= 0:
            lo /= 2
            if lo < 1e-3:
                raise NoCrossing("no bracket for the crossing", alpha_min=lo)
        alpha_hat = brentq(excess, lo, 1.0, xtol=xtol, rtol=1e-12)
    a_star = alpha_star(D) / alpha_hat
    curve = []
    for a in window:
        if a * alpha_hat >= alpha_star(D) - 1e-6:
            continue
        curve.append((float(a), _lambda1(m, a * alpha_hat)))
    D1 = D.dilated(alpha_hat)
    m1 = m.dilated(alpha_hat)
    spec1 = mesh_spectrum(m1, 1.0, 3)
    try:
        report = verify_simplicity(D1, spec1, m1)
        simplicity = report.to_dict()
        simple = report.verdict == "simple"
    except ConebifError as exc:
        simplicity = exc.record()
        simple = False
    lam_curve = np.array([v for _, v in curve])
    if not np.all(np.diff(lam_curve) < 0):
        simple = simple and False
    if not 0 < alpha_hat < alpha_star(D):
        raise SolverError("crossing outside (0, alpha*)", alpha_hat=alpha_hat, alpha_star=a_star)
    return TunedFamily(D, float(alpha_hat), curve, simple, float(m.h), simplicity)


def lambda1_curve(D: SphericalDomain, m: Mesh, alpha_grid) -> list:
    """``lambda_1(D, g_alpha)`` on a grid with the quasi-isometry sandwich check.

    Each row is a dict; failed solves keep the row with ``lambda1 = None``.
    """
    lam_ref = _lambda1(m, 1.0)
    N = D.params.N
    rows = []
    for a in alpha_grid:
        metric = metric_at(D, a)
        K = metric.qi_constant
        lower = K ** (-N) * lam_ref / a**2
        upper = K**N * lam_ref / a**2
        try:
            lam = _lambda1(m, a)
        except SolverError as exc:
            rows.append({"alpha": a, "lambda1": None, "lower": lower, "upper": upper,
                         "sandwich": None, "error": exc.code})
            continue
        rows.append({"alpha": a, "lambda1": lam, "lower": lower, "upper": upper,
                     "sandwich": bool(lower < lam < upper), "K": K})
    return rows
