"""P1 finite-element helpers shared by the eigen, derivative and cylinder solvers.

Quadrature is the three-point edge-midpoint rule, exact for quadratics on
flat triangles.  At the midpoint of edge ``(i, i+1)`` the local shape
functions take the values ``1/2, 1/2, 0``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import AssemblyFailure
from .geometry import AlphaMetric, Mesh

# PHI[q, a]: value of local basis a at quadrature point q
PHI = np.array([[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]])


@dataclass(frozen=True, eq=False)
class P1Space:
    mesh: Mesh

    @cached_property
    def areas(self) -> np.ndarray:
        a = self.mesh.chart_areas()
        bad = np.nonzero(~(a > 1e-300))[0]
        if len(bad):
            raise AssemblyFailure("degenerate element", element=int(bad[0]), area=float(a[bad[0]]))
        return a

    @cached_property
    def gradients(self) -> np.ndarray:
        """Constant gradients of the three local basis functions, shape ``(m, 3, d)``."""
        P = self.mesh.vertices[self.mesh.elements]
        e1 = P[:, 1] - P[:, 0]
        e2 = P[:, 2] - P[:, 0]
        if self.mesh.embedded:
            # tangent-plane gradients on the flat facet
            G11 = np.einsum("ij,ij->i", e1, e1)
            G12 = np.einsum("ij,ij->i", e1, e2)
            G22 = np.einsum("ij,ij->i", e2, e2)
            det = G11 * G22 - G12 * G12
            g1 = ((G22[:, None] * e1 - G12[:, None] * e2) / det[:, None])
            g2 = ((G11[:, None] * e2 - G12[:, None] * e1) / det[:, None])
        else:
            det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
            g1 = np.c_[e2[:, 1], -e2[:, 0]] / det[:, None]
            g2 = np.c_[-e1[:, 1], e1[:, 0]] / det[:, None]
        return np.stack([-g1 - g2, g1, g2], axis=1)

    @cached_property
    def points(self) -> np.ndarray:
        """Quadrature points, shape ``(m, 3, d)``."""
        P = self.mesh.vertices[self.mesh.elements]
        return np.einsum("qa,mad->mqd", PHI, P)

    @cached_property
    def point_radius(self) -> np.ndarray:
        """Chart radius at the quadrature points, shape ``(m, 3)``."""
        return np.hypot(self.points[..., 0], self.points[..., 1])

    @cached_property
    def interpolation(self) -> sp.csr_matrix:
        """Sparse map from nodal values to quadrature values (flattened ``m*3``)."""
        m = len(self.mesh.elements)
        rows = np.repeat(np.arange(3 * m), 3)
        cols = np.repeat(self.mesh.elements, 3, axis=0).reshape(-1)
        vals = np.tile(PHI.reshape(-1), m)
        return sp.csr_matrix((vals, (rows, cols)), shape=(3 * m, self.mesh.n_vertices))

    def _scatter(self, local: np.ndarray) -> sp.csr_matrix:
        T = self.mesh.elements
        rows = np.repeat(T, 3, axis=1).reshape(-1)
        cols = np.tile(T, (1, 3)).reshape(-1)
        n = self.mesh.n_vertices
        return sp.csr_matrix((local.reshape(-1), (rows, cols)), shape=(n, n))

    def mass(self, weight: np.ndarray | None = None) -> sp.csr_matrix:
        """Weighted mass matrix; ``weight`` holds density values at quadrature points."""
        w = np.ones((len(self.areas), 3)) if weight is None else weight
        qw = (self.areas / 3.0)[:, None] * w
        local = np.einsum("mq,qa,qb->mab", qw, PHI, PHI)
        return self._scatter(local)

    def stiffness(self, c_iso: np.ndarray | None = None, c_rad: np.ndarray | None = None):
        """Stiffness for the tensor ``c_iso I + c_rad x x^T`` sampled at quadrature points."""
        G = self.gradients
        if c_iso is None:
            local = self.areas[:, None, None] * np.einsum("mad,mbd->mab", G, G)
            return self._scatter(local)
        qw = (self.areas / 3.0)[:, None]
        local = np.einsum("mq,mad,mbd->mab", qw * c_iso, G, G)
        if c_rad is not None:
            Gx = np.einsum("mad,mqd->mqa", G, self.points)
            local += np.einsum("mq,mqa,mqb->mab", qw * c_rad, Gx, Gx)
        return self._scatter(local)

    def metric_operators(self, metric: AlphaMetric):
        """Stiffness and mass for ``(D, g_alpha)``."""
        if self.mesh.embedded:
            if metric.alpha != 1.0:
                raise AssemblyFailure("embedded meshes carry the round metric only")
            return self.stiffness(), self.mass()
        r = self.point_radius
        c_iso, c_rad = metric.stiffness_coefficients(r)
        return self.stiffness(c_iso, c_rad), self.mass(metric.volume_weight(r))

    def quadrature_weights(self, metric: AlphaMetric) -> np.ndarray:
        """``g_alpha`` volume weights at quadrature points, shape ``(m, 3)``."""
        if self.mesh.embedded:
            return np.repeat((self.areas / 3.0)[:, None], 3, axis=1)
        return (self.areas / 3.0)[:, None] * metric.volume_weight(self.point_radius)
