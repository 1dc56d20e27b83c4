"""Exact P1 assembly of the hyperelastic energy, its gradient and sparse Hessian.

Unknowns are the nodal values of the perturbation ϑ (deformation F0·x + ϑ),
stored vertex-major as [ϑ1(v0), ϑ2(v0), ϑ1(v1), ...]. Boundary values are zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..energy import INF, Energy, MagicFamily, det, distortion_nonlinear
from .mesh import TriMesh

DEFAULT_CIRCLES = (((-0.5, 0.0), 0.2), ((0.35, 0.35), 0.2), ((0.35, -0.35), 0.2))


@dataclass
class MaterialMap:
    """Coefficient c per element: c_star inside the circles (by centroid), base elsewhere."""

    c_star: float = 1.0
    circles: tuple = DEFAULT_CIRCLES
    base: float = 1.0

    def coefficients(self, mesh: TriMesh) -> np.ndarray:
        x = mesh.centroids()
        c = np.full(mesh.n_triangles, float(self.base))
        c[self.inside(x)] = self.c_star
        return c

    def inside(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        hit = np.zeros(len(x), bool)
        for center, r in self.circles:
            hit |= np.sum((x - np.asarray(center)) ** 2, axis=1) < r * r
        return hit


@dataclass
class Evaluation:
    energy: float
    gradient: np.ndarray | None = None
    hessian: sp.csr_matrix | None = None
    bad_element: int | None = None


@dataclass
class FemProblem:
    mesh: TriMesh
    F0: np.ndarray
    energy: Energy | None = None  # used when no material map is given
    material: MaterialMap | None = None

    def __post_init__(self):
        self.F0 = np.asarray(self.F0, float)
        if self.energy is None and self.material is None:
            self.energy = MagicFamily(1.0)
        m = self.mesh
        self.areas = m.areas()
        if np.any(self.areas <= 0):
            raise ValueError("mesh has non-positive element areas")
        self.n_dofs = 2 * m.n_vertices
        bnd = m.boundary_vertices()
        self.free = np.repeat(~bnd, 2)
        self.B = self._build_b()
        if self.material is not None:
            self.coefficients = self.material.coefficients(m)
            self.groups = [(np.flatnonzero(self.coefficients == c), MagicFamily(float(c)))
                           for c in np.unique(self.coefficients)]
        else:
            self.coefficients = None
            self.groups = [(np.arange(m.n_triangles), self.energy)]

    def _build_b(self):
        # row 4e + 2i + j holds d(∇ϑ)_ij / d ϑ_i(v) = ∂_j λ_v
        m = self.mesh
        G = m.barycentric_gradients()  # (T, 3, 2)
        T = m.n_triangles
        e, k, i, j = np.meshgrid(np.arange(T), np.arange(3), np.arange(2), np.arange(2), indexing="ij")
        rows = 4 * e + 2 * i + j
        cols = 2 * m.triangles[e, k] + i
        vals = G[e, k, j]
        return sp.csr_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(4 * T, self.n_dofs))

    def gradients(self, u) -> np.ndarray:
        """Deformation gradient F0 + ∇ϑ on every element, shape (T, 2, 2)."""
        return self.F0 + (self.B @ np.asarray(u, float)).reshape(-1, 2, 2)

    def zero_field(self):
        return np.zeros(self.n_dofs)

    def densities(self, F) -> np.ndarray:
        w = np.empty(len(F))
        for idx, W in self.groups:
            w[idx] = W.value(F[idx])
        return w

    def evaluate(self, u, order: int = 0) -> Evaluation:
        F = self.gradients(u)
        dets = det(F)
        bad = np.flatnonzero(~(dets > 0))
        if len(bad):
            return Evaluation(INF, bad_element=int(bad[0]))
        w = self.densities(F)
        if not np.all(np.isfinite(w)):
            return Evaluation(INF, bad_element=int(np.flatnonzero(~np.isfinite(w))[0]))
        out = Evaluation(float(np.dot(self.areas, w)))
        if order >= 1:
            S = np.empty_like(F)
            for idx, W in self.groups:
                S[idx] = W.stress(F[idx])
            out.gradient = self.B.T @ (self.areas[:, None, None] * S).reshape(-1)
        if order >= 2:
            Tn = np.empty((len(F), 4, 4))
            for idx, W in self.groups:
                Tn[idx] = W.tangent(F[idx])
            Tn *= self.areas[:, None, None]
            Tn = 0.5 * (Tn + np.swapaxes(Tn, 1, 2))
            D = sp.bsr_matrix((Tn, np.arange(len(F)), np.arange(len(F) + 1)),
                              shape=(4 * len(F), 4 * len(F))).tocsr()
            out.hessian = (self.B.T @ D @ self.B).tocsr()
        return out

    def total_energy(self, u) -> float:
        return self.evaluate(u).energy

    def homogeneous_energy(self) -> float:
        return self.total_energy(self.zero_field())

    def gap(self, u) -> float:
        return self.total_energy(u) - self.homogeneous_energy()

    def element_report(self, u):
        """Per-element arrays: centroid, det, distortion, energy density, coefficient."""
        F = self.gradients(u)
        dets = det(F)
        K = np.full(len(F), np.nan)
        ok = dets > 0
        K[ok] = distortion_nonlinear(F[ok])
        w = self.densities(F)
        c = self.coefficients if self.coefficients is not None else np.ones(len(F))
        return {"centroid": self.mesh.centroids(), "det": dets, "distortion": K,
                "density": w, "c": c}

    def split_energy(self, u):
        """Energy inside / outside the material circles (all in 'outside' if none)."""
        rep = self.element_report(u)
        contrib = self.areas * rep["density"]
        if self.material is None:
            return 0.0, float(contrib.sum())
        inside = self.material.inside(rep["centroid"])
        return float(contrib[inside].sum()), float(contrib[~inside].sum())
