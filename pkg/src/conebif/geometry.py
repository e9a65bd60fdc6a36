"""Spherical domains, the dilation family and chart meshes.

Points of a domain ``D`` on the sphere are described in the azimuthal
equidistant chart about the domain's dilation pole: a point at geodesic
distance ``r`` from the pole and at angle ``omega`` is stored as the planar
pair ``(X, Y) = r (cos omega, sin omega)``.  In this chart the dilation
``(r, omega) -> (alpha r, omega)`` is the linear map ``(X, Y) -> alpha (X, Y)``.

Dumbbells are built in an auxiliary polar chart whose pole ``P`` lies on the
dumbbell's long axis, a quarter turn away from the dilation pole ``Q``.  With
``Q = e_x`` and ``P = e_z`` the chart axes at ``Q`` are ``e_z`` (``X``) and
``e_y`` (``Y``), so the reflection about the auxiliary equator is
``X -> -X`` and the reflection about the meridian ``omega = 0`` is
``Y -> -Y``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable, Sequence

import numpy as np
import shapely
import triangle
from scipy.optimize import brentq
from scipy.spatial import ConvexHull
from shapely.geometry import Polygon, box

from .errors import (
    DomainEscape,
    InvalidGeometry,
    InvalidRadius,
    MeshingFailure,
    SliceWidthViolation,
    ValidationError,
)

HALF_PI = 0.5 * math.pi
# operations refuse alpha closer than this to alpha*
ALPHA_STAR_MARGIN = 1e-6
SYMMETRY_NAMES = ("equator", "meridian")


def sinc(z):
    """``sin(z)/z`` with the removable singularity filled in."""
    return np.sinc(np.asarray(z, dtype=float) / np.pi)


def b_function(r):
    """``r / tan(r)``, equal to 1 at the pole."""
    r = np.asarray(r, dtype=float)
    return np.cos(r) / sinc(r)


def sine_ratio(alpha, r):
    """``sin(alpha r) / (alpha sin r)``: square root of the angular metric ratio."""
    r = np.asarray(r, dtype=float)
    return sinc(alpha * r) / sinc(r)


@dataclass(frozen=True)
class ProblemParams:
    """Dimension-dependent constants of the critical problem."""

    N: int = 3

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 3:
            raise ValidationError("space dimension must be an integer >= 3", N=self.N)

    @property
    def crit_exp(self) -> Fraction:
        return Fraction(2 * self.N, self.N - 2)

    @property
    def p(self) -> float:
        """Power of the nonlinearity, ``2* - 1``."""
        return float(self.crit_exp) - 1.0

    @property
    def c0(self) -> float:
        N = self.N
        return float((N * (N - 2)) ** ((N - 2) / 4))

    @property
    def lambda_threshold(self) -> float:
        return float(self.N - 1)

    @property
    def emden_fowler_shift(self) -> float:
        """``(N-2)/2``, the zeroth-order coefficient root of the cylinder operator."""
        return 0.5 * (self.N - 2)


# ---------------------------------------------------------------------------
# charts


def chart_to_sphere(X, Y):
    """Map dilation-chart coordinates to unit vectors (pole ``e_x``)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    r = np.hypot(X, Y)
    s = sinc(r)
    return np.stack([np.cos(r), s * Y, s * X], axis=-1)


def sphere_to_chart(p):
    p = np.asarray(p, dtype=float)
    r = np.arccos(np.clip(p[..., 0], -1.0, 1.0))
    psi = np.arctan2(p[..., 1], p[..., 2])
    return r * np.cos(psi), r * np.sin(psi)


def aux_to_sphere(r, omega):
    """Auxiliary polar chart (pole ``e_z``, meridian ``omega = 0`` through ``e_x``)."""
    r = np.asarray(r, dtype=float)
    omega = np.asarray(omega, dtype=float)
    return np.stack(
        [np.sin(r) * np.cos(omega), np.sin(r) * np.sin(omega), np.cos(r) * np.ones_like(omega)],
        axis=-1,
    )


def sphere_to_aux(p):
    p = np.asarray(p, dtype=float)
    return np.arccos(np.clip(p[..., 2], -1.0, 1.0)), np.arctan2(p[..., 1], p[..., 0])


# ---------------------------------------------------------------------------
# domains


@dataclass(frozen=True, eq=False)
class SphericalDomain:
    """A domain on ``S^{N-1}`` described in the chart about its dilation pole.

    ``kind`` is ``"cap"``, ``"dumbbell"`` or ``"general"``; ``parameters``
    holds the constructor arguments (JSON-ready).  ``scale`` records a
    dilation already applied to the constructed shape, so that
    ``D.dilated(a)`` is exactly ``phi_a(D)``.
    """

    params: ProblemParams
    kind: str
    parameters: dict
    scale: float = 1.0
    symmetries: tuple = ()

    # -- basic geometry -------------------------------------------------
    @cached_property
    def sup_r(self) -> float:
        """Supremum over ``D`` of the distance to the dilation pole."""
        if self.kind == "cap":
            return self.scale * self.parameters["t"]
        if self.kind == "dumbbell":
            return self.scale * (HALF_PI - self.parameters["r0"])
        pts = np.asarray(self.parameters["boundary"], dtype=float)
        return self.scale * float(np.max(np.hypot(pts[:, 0], pts[:, 1])))

    @property
    def cap_bound(self) -> float:
        return self.sup_r

    @property
    def min_feature(self) -> float | None:
        """Smallest geometric width a mesh must resolve (chart units)."""
        if self.kind == "cap":
            return 2.0 * self.sup_r
        if self.kind == "dumbbell":
            return 2.0 * self.scale * self.parameters["channel_halfwidth"]
        return None

    def contains(self, X, Y):
        """Boolean membership of chart points."""
        X = np.asarray(X, dtype=float) / self.scale
        Y = np.asarray(Y, dtype=float) / self.scale
        if self.kind == "cap":
            return np.hypot(X, Y) < self.parameters["t"]
        if self.kind == "dumbbell":
            return _dumbbell_contains(self.parameters, chart_to_sphere(X, Y))
        return shapely.contains_xy(self._base_polygon, X, Y)

    def dilated(self, alpha: float) -> "SphericalDomain":
        """Return ``phi_alpha(D)``, requires ``alpha sup_r < pi/2``."""
        if alpha <= 0:
            raise ValidationError("dilation factor must be positive", alpha=alpha)
        new = SphericalDomain(
            self.params, self.kind, dict(self.parameters), self.scale * alpha, self.symmetries
        )
        if new.sup_r >= HALF_PI:
            raise DomainEscape(
                "dilated domain leaves the open hemisphere", alpha=alpha, sup_r=new.sup_r
            )
        return new

    # -- boundary ----------------------------------------------------------
    @cached_property
    def _base_polygon(self) -> Polygon:
        """Chart polygon of the unscaled shape, densely sampled."""
        if self.kind == "cap":
            t = self.parameters["t"]
            n = max(64, int(math.ceil(2 * math.pi * t / 2e-3)))
            th = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
            return Polygon(np.c_[t * np.cos(th), t * np.sin(th)])
        if self.kind == "dumbbell":
            return _dumbbell_polygon(self.parameters)
        return Polygon(np.asarray(self.parameters["boundary"], dtype=float))

    @property
    def polygon(self) -> Polygon:
        return shapely.affinity.scale(self._base_polygon, self.scale, self.scale, origin=(0, 0))

    # -- serialization -----------------------------------------------------
    def to_dict(self) -> dict:
        params = dict(self.parameters)
        if "boundary" in params:
            params["boundary"] = np.asarray(params["boundary"]).tolist()
        return {
            "N": self.params.N,
            "kind": self.kind,
            "parameters": params,
            "scale": self.scale,
            "symmetries": list(self.symmetries),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SphericalDomain":
        params = ProblemParams(int(data["N"]))
        kind = data["kind"]
        p = dict(data.get("parameters", {}))
        if kind == "cap":
            base = make_cap(params, p["t"], allow_hemisphere=p.get("allow_hemisphere", False))
        elif kind == "dumbbell":
            base = make_dumbbell(params, p["r0"], p["cap_radius"], p["channel_halfwidth"])
        elif kind == "general":
            base = make_general(params, p["boundary"], tuple(data.get("symmetries", ())))
        else:
            raise ValidationError("unknown domain kind", kind=kind)
        scale = float(data.get("scale", 1.0))
        return base if scale == 1.0 else base.dilated(scale)


def load_domain(path) -> tuple[SphericalDomain, dict]:
    """Read a domain description file; returns the domain and the raw record."""
    with open(path) as fh:
        data = json.load(fh)
    unknown = set(data) - {"N", "kind", "parameters", "target_h", "scale", "symmetries", "tune_target"}
    if unknown:
        raise ValidationError("unknown fields in domain file", fields=sorted(unknown))
    return SphericalDomain.from_dict(data), data


def make_cap(params: ProblemParams, t: float, allow_hemisphere: bool = False) -> SphericalDomain:
    """Geodesic disk of radius ``t`` about the pole.

    ``allow_hemisphere`` admits the limit ``t = pi/2`` for validation runs.
    """
    ok = 0 < t < HALF_PI or (allow_hemisphere and math.isclose(t, HALF_PI))
    if not ok:
        raise InvalidRadius("cap radius must lie in (0, pi/2)", t=t)
    parameters = {"t": float(t)}
    if allow_hemisphere:
        parameters["allow_hemisphere"] = True
    return SphericalDomain(params, "cap", parameters, 1.0, ("rotation",) + SYMMETRY_NAMES)


def make_general(params: ProblemParams, boundary, symmetries: Sequence[str] = ()) -> SphericalDomain:
    """Domain bounded by a closed chart polygon (N = 3 only)."""
    if params.N != 3:
        raise ValidationError("general domains are supported for N = 3 only", N=params.N)
    pts = np.asarray(boundary, dtype=float)
    poly = Polygon(pts)
    if not poly.is_valid or poly.area <= 0:
        raise InvalidGeometry("boundary is not a simple closed curve")
    if np.max(np.hypot(pts[:, 0], pts[:, 1])) >= HALF_PI:
        raise DomainEscape("domain is not inside the open hemisphere")
    bad = set(symmetries) - set(SYMMETRY_NAMES)
    if bad:
        raise ValidationError("unknown symmetry names", names=sorted(bad))
    return SphericalDomain(params, "general", {"boundary": pts.tolist()}, 1.0, tuple(symmetries))


def make_dumbbell(params, r0: float, cap_radius: float, channel_halfwidth: float) -> SphericalDomain:
    """Two geodesic disks joined by a channel, symmetric about equator and meridian.

    In the auxiliary chart the disks are centred on the meridian ``omega = 0``
    at ``r = r0 + cap_radius`` and its mirror image ``pi - r0 - cap_radius``;
    the channel is ``{|omega| < channel_halfwidth}`` between the centres.
    The returned domain is recentred on the equator point of the meridian.
    """
    if params.N != 3:
        raise ValidationError("dumbbells are supported for N = 3 only", N=params.N)
    if not r0 > 0:
        raise DomainEscape("dumbbell must sit inside an open hemisphere (r0 > 0)", r0=r0)
    if not cap_radius > 0:
        raise InvalidGeometry("cap radius must be positive", cap_radius=cap_radius)
    if not channel_halfwidth > 0:
        raise InvalidGeometry(
            "channel half-width must be positive (disconnected domain)",
            channel_halfwidth=channel_halfwidth,
        )
    if r0 + 2 * cap_radius >= HALF_PI:
        raise InvalidGeometry(
            "disks meet at the equator; no channel left", r0=r0, cap_radius=cap_radius
        )
    if channel_halfwidth >= HALF_PI:
        raise SliceWidthViolation(
            "channel slice width reaches pi/2", r=HALF_PI, width=2 * channel_halfwidth
        )
    p = {"r0": float(r0), "cap_radius": float(cap_radius), "channel_halfwidth": float(channel_halfwidth)}
    r_grid = np.linspace(r0, math.pi - r0, 4001)[1:-1]
    widths = _dumbbell_slice_width(p, r_grid)
    k = int(np.argmax(widths))
    if widths[k] >= HALF_PI:
        raise SliceWidthViolation(
            "slice width |gamma_r| reaches pi/2", r=float(r_grid[k]), width=float(widths[k])
        )
    return SphericalDomain(params, "dumbbell", p, 1.0, SYMMETRY_NAMES)


def _disk_centres(p):
    rc = p["r0"] + p["cap_radius"]
    return (
        np.array([math.sin(rc), 0.0, math.cos(rc)]),
        np.array([math.sin(rc), 0.0, -math.cos(rc)]),
    )


def _dumbbell_contains(p, pts):
    c1, c2 = _disk_centres(p)
    ca = math.cos(p["cap_radius"])
    rc = p["r0"] + p["cap_radius"]
    in_disk = (pts @ c1 > ca) | (pts @ c2 > ca)
    omega = np.arctan2(pts[..., 1], pts[..., 0])
    in_channel = (np.abs(pts[..., 2]) <= math.cos(rc)) & (np.abs(omega) < p["channel_halfwidth"])
    return in_disk | in_channel


def _dumbbell_slice_width(p, r):
    """Closed-form angular length of ``D cap {r = const}`` in the auxiliary chart."""
    r = np.asarray(r, dtype=float)
    a = p["cap_radius"]
    rc = p["r0"] + a
    half = np.zeros_like(r)
    for centre in (rc, math.pi - rc):
        with np.errstate(invalid="ignore", divide="ignore"):
            cosw = (math.cos(a) - np.cos(r) * math.cos(centre)) / (np.sin(r) * math.sin(centre))
        inside = np.abs(r - centre) < a
        w = np.where(inside, np.arccos(np.clip(cosw, -1.0, 1.0)), 0.0)
        half = np.maximum(half, w)
    in_channel = (r >= rc) & (r <= math.pi - rc)
    half = np.maximum(half, np.where(in_channel, p["channel_halfwidth"], 0.0))
    return 2.0 * half


def _dumbbell_polygon(p) -> Polygon:
    step = 2e-3
    a = p["cap_radius"]
    pieces = []
    for c in _disk_centres(p):
        u = np.array([0.0, 1.0, 0.0])
        v = np.cross(c, u)
        n = max(128, int(math.ceil(2 * math.pi * math.sin(a) / step)))
        th = np.linspace(0.0, 2 * math.pi, n, endpoint=False)
        q = math.cos(a) * c + math.sin(a) * (np.cos(th)[:, None] * u + np.sin(th)[:, None] * v)
        pieces.append(Polygon(np.c_[sphere_to_chart(q)]))
    rc = p["r0"] + a
    w = p["channel_halfwidth"]
    nr = max(16, int(math.ceil((math.pi - 2 * rc) / step)))
    nw = max(4, int(math.ceil(2 * w / step)))
    rs = np.linspace(rc, math.pi - rc, nr)
    ws = np.linspace(w, -w, nw)
    aux = np.concatenate(
        [
            np.c_[rs, np.full(nr, w)],
            np.c_[np.full(nw, math.pi - rc), ws],
            np.c_[rs[::-1], np.full(nr, -w)],
            np.c_[np.full(nw, rc), ws[::-1]],
        ]
    )
    q = aux_to_sphere(aux[:, 0], aux[:, 1])
    pieces.append(Polygon(np.c_[sphere_to_chart(q)]).buffer(0))
    union = shapely.union_all(pieces)
    if union.geom_type != "Polygon" or len(union.interiors):
        raise InvalidGeometry("dumbbell pieces do not form a simply connected domain")
    return union


# ---------------------------------------------------------------------------
# alpha family


def alpha_star(D: SphericalDomain) -> float:
    """Largest dilation factor keeping ``phi_alpha(D)`` in the open hemisphere."""
    return HALF_PI / D.sup_r


@dataclass(frozen=True)
class AlphaMetric:
    """The pulled-back metric ``alpha^2 dr^2 + sin^2(alpha r) g_{S^{N-2}}``.

    ``qi_constant`` is a constant ``K > 1`` with ``1/K < g_alpha/(alpha^2 g) < K``
    on the whole open hemisphere.
    """

    alpha: float
    N: int = 3
    qi_constant: float = field(default=0.0)

    def __post_init__(self):
        if self.qi_constant == 0.0:
            object.__setattr__(self, "qi_constant", quasi_isometry_constant(self.alpha))

    def coeff_rr(self, r):
        return self.alpha**2 * np.ones_like(np.asarray(r, dtype=float))

    def coeff_ang(self, r):
        return np.sin(self.alpha * np.asarray(r, dtype=float)) ** 2

    @staticmethod
    def h_rr(r):
        return 2.0 * np.ones_like(np.asarray(r, dtype=float))

    @staticmethod
    def h_ang(r):
        r = np.asarray(r, dtype=float)
        return 2.0 * r * np.sin(r) * np.cos(r)

    # chart-level coefficients (N = 3): stiffness tensor and volume weight
    def volume_weight(self, r):
        """Density of ``d sigma_{g_alpha}`` with respect to ``dX dY``."""
        a = self.alpha
        return a * a * sinc(a * np.asarray(r, dtype=float))

    def stiffness_coefficients(self, r):
        """Return ``(c_iso, c_rad)`` with ``A = c_iso I + c_rad x x^T``.

        ``A = sqrt(det G) G^{-1}`` in chart coordinates, so that the Dirichlet
        energy density is ``grad u . A grad u``.
        """
        a = self.alpha
        z = a * np.asarray(r, dtype=float)
        s = sinc(z)
        c_iso = 1.0 / s
        with np.errstate(invalid="ignore", divide="ignore"):
            c_rad = a * a * (s - 1.0 / s) / (z * z)
        small = z < 1e-4
        c_rad = np.where(small, -a * a / 3.0, c_rad)
        return c_iso, c_rad


def quasi_isometry_constant(alpha: float) -> float:
    """``K`` from the sine-ratio bracket at ``r = pi/2``, nudged above 1."""
    kappa = math.sin(alpha * HALF_PI) / alpha
    return max(kappa * kappa, 1.0 / (kappa * kappa)) * (1.0 + 1e-9)


def metric_at(D: SphericalDomain, alpha: float) -> AlphaMetric:
    if not alpha > 0:
        raise ValidationError("alpha must be positive", alpha=alpha)
    a_star = alpha_star(D)
    if alpha >= a_star - ALPHA_STAR_MARGIN:
        raise DomainEscape(
            "alpha too close to alpha*: phi_alpha(D) leaves the hemisphere", alpha=alpha, alpha_star=a_star
        )
    return AlphaMetric(float(alpha), D.params.N)


def slice_width(D: SphericalDomain, r: float) -> float:
    """Angular length ``|gamma_r|`` of the slice at distance ``r`` from the auxiliary pole.

    Caps are measured about their own pole.  Dumbbells use the closed form;
    other domains with the dumbbell symmetries are scanned numerically in the
    auxiliary chart whose pole sits at chart point ``(pi/2, 0)``.
    """
    if D.kind == "cap":
        return 2 * math.pi if 0 <= r < D.sup_r else 0.0
    if D.kind == "dumbbell" and D.scale == 1.0:
        return float(_dumbbell_slice_width(D.parameters, np.array([r]))[0])
    return _slice_width_numeric(D.contains, r)


def _slice_width_numeric(contains: Callable, r: float, n: int = 4096) -> float:
    def inside(omega):
        X, Y = sphere_to_chart(aux_to_sphere(np.full_like(omega, r), omega))
        return contains(X, Y)

    om = np.linspace(-math.pi, math.pi, n, endpoint=False)
    flags = inside(om)
    if not flags.any():
        return 0.0
    if flags.all():
        return 2 * math.pi
    total = float(flags.sum()) * (2 * math.pi / n)
    # refine every in/out transition by bisection
    d = 2 * math.pi / n
    idx = np.nonzero(flags != np.roll(flags, -1))[0]
    for i in idx:
        lo, hi = om[i], om[i] + d
        f_lo = flags[i]
        for _ in range(40):
            mid = 0.5 * (lo + hi)
            if inside(np.array([mid]))[0] == f_lo:
                lo = mid
            else:
                hi = mid
        frac = (lo - om[i]) / d
        # sample i counted as a full cell if inside
        total += (frac - 1.0) * d if f_lo else (1.0 - frac) * d
    return total


def max_slice_width(D: SphericalDomain, n: int = 801) -> tuple[float, float]:
    """Largest slice width over the auxiliary latitudes and where it occurs."""
    if D.kind == "dumbbell" and D.scale == 1.0:
        r0 = D.parameters["r0"]
        rs = np.linspace(r0, math.pi - r0, n)[1:-1]
        w = _dumbbell_slice_width(D.parameters, rs)
    else:
        rs = np.linspace(1e-3, math.pi - 1e-3, n)
        w = np.array([slice_width(D, r) for r in rs])
    k = int(np.argmax(w))
    return float(w[k]), float(rs[k])


def cap_radius_for_criterion(params: ProblemParams) -> float:
    """Radius ``t`` with ``t / tan t = (N-4)/(N-2)``; ``pi/2`` when N <= 4."""
    target = (params.N - 4) / (params.N - 2)
    if target <= 0:
        return HALF_PI
    return brentq(lambda t: float(b_function(t)) - target, 1e-12, HALF_PI, xtol=1e-15)


# ---------------------------------------------------------------------------
# meshes


@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming P1 triangulation.

    ``vertices`` are chart points ``(X, Y)``; for the validation mesh of the
    whole sphere they are points of ``R^3`` and ``embedded`` is set.
    ``reflections`` maps a symmetry name to the vertex permutation it induces.
    """

    vertices: np.ndarray
    elements: np.ndarray
    h: float
    embedded: bool = False
    reflections: dict = field(default_factory=dict)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        e = np.sort(self.elements[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        uniq, counts = np.unique(e, axis=0, return_counts=True)
        return uniq[counts == 1]

    @cached_property
    def boundary_marks(self) -> np.ndarray:
        marks = np.zeros(len(self.vertices), dtype=bool)
        marks[self.boundary_edges.ravel()] = True
        return marks

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def polar(self):
        X, Y = self.vertices[:, 0], self.vertices[:, 1]
        return np.hypot(X, Y), np.arctan2(Y, X)

    def chart_areas(self) -> np.ndarray:
        P = self.vertices[self.elements]
        d1 = P[:, 1] - P[:, 0]
        d2 = P[:, 2] - P[:, 0]
        if self.embedded:
            return 0.5 * np.linalg.norm(np.cross(d1, d2), axis=1)
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def area(self, alpha: float = 1.0) -> float:
        """Area of the domain for ``g_alpha`` by the edge-midpoint rule."""
        A = self.chart_areas()
        if self.embedded:
            return float(A.sum())
        P = self.vertices[self.elements]
        mids = 0.5 * (P + np.roll(P, -1, axis=1))
        w = AlphaMetric(alpha).volume_weight(np.hypot(mids[..., 0], mids[..., 1]))
        return float(np.sum(A[:, None] * w) / 3.0)

    def dilated(self, alpha: float) -> "Mesh":
        if self.embedded:
            raise ValidationError("embedded meshes cannot be dilated")
        return Mesh(self.vertices * alpha, self.elements, self.h * alpha, False, self.reflections)

    def to_dict(self) -> dict:
        return {
            "h": self.h,
            "embedded": self.embedded,
            "vertices": self.vertices.tolist(),
            "elements": self.elements.tolist(),
            "boundary_edges": self.boundary_edges.tolist(),
            "boundary_vertices": np.nonzero(self.boundary_marks)[0].tolist(),
        }


def _resample_ring(coords: np.ndarray, spacing: float, corner_deg: float = 20.0) -> np.ndarray:
    """Resample a closed polyline at roughly uniform ``spacing``, keeping corners."""
    pts = np.asarray(coords, dtype=float)
    if np.allclose(pts[0], pts[-1]):
        pts = pts[:-1]
    seglen = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
    pts = pts[seglen > 1e-14]
    # corners = vertices where the direction jumps
    d_in = pts - np.roll(pts, 1, axis=0)
    d_out = np.roll(pts, -1, axis=0) - pts
    cosang = np.sum(d_in * d_out, axis=1) / (
        np.linalg.norm(d_in, axis=1) * np.linalg.norm(d_out, axis=1)
    )
    corner = np.nonzero(cosang < math.cos(math.radians(corner_deg)))[0]
    if len(corner) == 0:
        corner = np.array([0])
    pts = np.roll(pts, -corner[0], axis=0)
    corner = np.sort((corner - corner[0]) % len(pts))
    out = []
    bounds = list(corner) + [len(pts)]
    for a, b in zip(bounds[:-1], bounds[1:]):
        piece = pts[a : b + 1] if b < len(pts) else np.vstack([pts[a:], pts[:1]])
        s = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(piece, axis=0), axis=1))])
        n = max(1, int(math.ceil(s[-1] / spacing)))
        u = np.linspace(0.0, s[-1], n + 1)[:-1]
        out.append(np.c_[np.interp(u, s, piece[:, 0]), np.interp(u, s, piece[:, 1])])
    return np.vstack(out)


def _triangulate_polygon(poly: Polygon, h: float):
    if poly.geom_type != "Polygon" or len(poly.interiors):
        raise MeshingFailure("meshing region is not a simply connected polygon")
    ring = _resample_ring(np.asarray(poly.exterior.coords), 0.5 * h)
    n = len(ring)
    seg = np.c_[np.arange(n), (np.arange(n) + 1) % n]
    max_area = math.sqrt(3.0) / 4.0 * h * h
    out = triangle.triangulate({"vertices": ring, "segments": seg}, f"pq30a{max_area:.12f}Q")
    return np.asarray(out["vertices"], dtype=float), np.asarray(out["triangles"], dtype=np.int64)


def _merge_reflection(V, T, axis: int):
    """Union of a mesh with its mirror image across the line ``x_axis = 0``."""
    Vm = V.copy()
    Vm[:, axis] *= -1.0
    allV = np.vstack([V, Vm])
    allT = np.vstack([T, T[:, ::-1] + len(V)])
    key = np.round(allV, 12)
    key[np.abs(key) < 1e-12] = 0.0
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = inv.ravel()
    # keep the exact coordinates of the first occurrence
    first = np.full(len(uniq), -1)
    for i in range(len(allV) - 1, -1, -1):
        first[inv[i]] = i
    return allV[first], inv[allT]


def _reflection_perm(V, axis: int) -> np.ndarray:
    key = {tuple(np.round(v, 10) + 0.0): i for i, v in enumerate(V)}
    perm = np.empty(len(V), dtype=np.int64)
    for i, v in enumerate(V):
        w = v.copy()
        w[axis] *= -1.0
        j = key.get(tuple(np.round(w, 10) + 0.0))
        if j is None:
            raise MeshingFailure("mesh is not reflection symmetric", axis=axis)
        perm[i] = j
    return perm


def mesh(D: SphericalDomain, h: float) -> Mesh:
    """Triangulate the chart image of ``D`` with target element size ``h``.

    Domains with the two reflection symmetries are meshed on one quadrant
    and mirrored, so the discrete problem inherits the symmetries exactly.
    """
    if not h > 0:
        raise ValidationError("mesh size must be positive", h=h)
    if D.params.N != 3:
        raise ValidationError("chart meshes exist for N = 3 only; use the cap shooting solver", N=D.params.N)
    feature = D.min_feature
    if feature is not None and h > feature:
        raise MeshingFailure(
            "mesh size too large to resolve the domain (channel width)", h=h, feature=feature
        )
    poly = D.polygon
    sym = [s for s in SYMMETRY_NAMES if s in D.symmetries]
    big = 4.0
    x_lo = 0.0 if "equator" in sym else -big
    y_lo = 0.0 if "meridian" in sym else -big
    region = poly.intersection(box(x_lo, y_lo, big, big))
    if region.geom_type != "Polygon":
        raise MeshingFailure("symmetry cut does not leave a single polygon")
    V, T = _triangulate_polygon(region, h)
    if "meridian" in sym:
        V, T = _merge_reflection(V, T, axis=1)
    if "equator" in sym:
        V, T = _merge_reflection(V, T, axis=0)
    reflections = {}
    if "equator" in sym:
        reflections["equator"] = _reflection_perm(V, 0)
    if "meridian" in sym:
        reflections["meridian"] = _reflection_perm(V, 1)
    m = Mesh(V, T, float(h), False, reflections)
    areas = m.chart_areas()
    if np.any(areas <= 0):
        raise MeshingFailure("degenerate element produced", element=int(np.argmin(areas)))
    return m


def sphere_mesh(h: float) -> Mesh:
    """Triangulation of the whole unit sphere (validation only) from Fibonacci points."""
    n_tri = 4 * math.pi / (math.sqrt(3.0) / 4.0 * h * h)
    n = max(12, int(math.ceil(n_tri / 2 + 2)))
    k = np.arange(n) + 0.5
    z = 1.0 - 2.0 * k / n
    phi = math.pi * (1 + math.sqrt(5.0)) * k
    rxy = np.sqrt(1.0 - z * z)
    V = np.c_[rxy * np.cos(phi), rxy * np.sin(phi), z]
    T = ConvexHull(V).simplices.astype(np.int64)
    P = V[T]
    outward = np.einsum("ij,ij->i", np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), P.mean(axis=1))
    T[outward < 0] = T[outward < 0][:, ::-1]
    return Mesh(V, T, float(h), True)
