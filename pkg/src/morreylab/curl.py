"""Relaxation over incompatible matrix fields with a Curl penalty.

Each row of P is a lowest-order Nédélec (Whitney) field on a triangle mesh, one
coefficient per edge: the line integral of the row along the edge, oriented from
its lower to its higher vertex index. The functional is

    I2(P) = Σ_T |T| [ W(P(centroid of T)) + (L_c²/2) |Curl P|² ],

with tangential data P·τ = F0·τ on the boundary. Curl acts row-wise,
curl(v1, v2) = ∂1 v2 − ∂2 v1, and Curl P = Div(P Q) with Q the rotation by +90°.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .energy import Energy, MagicFamily, det, distortion_nonlinear
from .fem.assembly import Evaluation, FemProblem
from .fem.mesh import TriMesh, build_mesh
from .fem.trust_region import TrustRegionResult, trust_region_minimize

Q = np.array([[0.0, -1.0], [1.0, 0.0]])
_GAUSS2 = (0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3))


class EdgeSpace:
    """Whitney edge elements on a mesh, two rows per matrix field."""

    def __init__(self, mesh: TriMesh):
        self.mesh = mesh
        self.edges, self.tmap = mesh.edges()
        self.n_edges = len(self.edges)
        self.boundary = mesh.boundary_edges()
        self.grads = mesh.barycentric_gradients()  # (T, 3, 2)
        self.areas = mesh.areas()
        tri = mesh.triangles
        k = np.arange(3)
        # local vertex positions of each edge's low/high endpoint
        first = tri[:, k]
        self.low_local = np.where(first == self.edges[self.tmap, 0], k, (k + 1) % 3)
        self.high_local = np.where(self.low_local == k, (k + 1) % 3, k)
        T = np.arange(len(tri))[:, None]
        ga, gb = self.grads[T, self.low_local], self.grads[T, self.high_local]
        self.curl_basis = 2 * (ga[..., 0] * gb[..., 1] - ga[..., 1] * gb[..., 0])  # (T, 3)
        self._ga, self._gb = ga, gb

    def basis_at(self, bary) -> np.ndarray:
        """(T, 3, 2): the three edge basis functions at one barycentric point."""
        bary = np.asarray(bary, float)
        la = bary[self.low_local]
        lb = bary[self.high_local]
        return la[..., None] * self._gb - lb[..., None] * self._ga

    def _operator(self, local_vals):
        # local_vals (T, 3, width): row (T, i, j) of the result reads dof i*E + edge
        T, _, width = local_vals.shape
        t, k, i, j = np.meshgrid(np.arange(T), np.arange(3), np.arange(2), np.arange(width),
                                 indexing="ij")
        rows = (2 * t + i) * width + j
        cols = i * self.n_edges + self.tmap[t, k]
        return sp.csr_matrix((local_vals[t, k, j].ravel(), (rows.ravel(), cols.ravel())),
                             shape=(2 * T * width, 2 * self.n_edges))

    def value_operator(self, bary=(1 / 3, 1 / 3, 1 / 3)) -> sp.csr_matrix:
        """Sparse map from dofs [row1 | row2] to vec(P) at a barycentric point, (4T, 2E)."""
        return self._operator(self.basis_at(bary))

    def curl_operator(self) -> sp.csr_matrix:
        """Sparse map from dofs to the per-element Curl, rows ordered (T, 2)."""
        return self._operator(self.curl_basis[..., None])

    def edge_vectors(self):
        v = self.mesh.vertices
        return v[self.edges[:, 1]] - v[self.edges[:, 0]]

    def interpolate_constant(self, F) -> np.ndarray:
        t = self.edge_vectors()
        F = np.asarray(F, float)
        return np.concatenate([t @ F[0], t @ F[1]])

    def interpolate_gradient(self, phi) -> np.ndarray:
        """Dofs of ∇φ from vertex values φ (V, 2): exact line integrals of the gradient."""
        phi = np.asarray(phi, float)
        d = phi[self.edges[:, 1]] - phi[self.edges[:, 0]]
        return np.concatenate([d[:, 0], d[:, 1]])

    def interpolate_function(self, P_of_x) -> np.ndarray:
        """Dofs by two-point Gauss line integrals of a matrix-valued function."""
        v = self.mesh.vertices
        a, b = v[self.edges[:, 0]], v[self.edges[:, 1]]
        t = b - a
        out = np.zeros(2 * self.n_edges)
        for s in _GAUSS2:
            P = np.asarray(P_of_x(a + s * t), float)  # (E, 2, 2)
            out += 0.5 * np.concatenate([np.einsum("ej,ej->e", P[:, 0], t),
                                         np.einsum("ej,ej->e", P[:, 1], t)])
        return out

    def field_at(self, dofs, bary=(1 / 3, 1 / 3, 1 / 3)) -> np.ndarray:
        N = self.basis_at(bary)  # (T, 3, 2)
        c = np.asarray(dofs).reshape(2, self.n_edges)
        return np.stack([np.einsum("tk,tkj->tj", c[i][self.tmap], N) for i in range(2)], 1)

    def curl(self, dofs) -> np.ndarray:
        c = np.asarray(dofs).reshape(2, self.n_edges)
        return np.stack([np.sum(c[i][self.tmap] * self.curl_basis, 1) for i in range(2)], 1)

    def div_by_flux(self, dofs) -> np.ndarray:
        """Div(P Q) per element from outward boundary fluxes (divergence theorem).

        Independent of curl(): evaluates P Q along each element edge and integrates
        its normal component with two-point Gauss, exact for the linear fields here.
        """
        tri, v = self.mesh.triangles, self.mesh.vertices
        c = np.asarray(dofs).reshape(2, self.n_edges)
        T = len(tri)
        flux = np.zeros((T, 2))
        for k in range(3):
            p0, p1 = v[tri[:, k]], v[tri[:, (k + 1) % 3]]
            t = p1 - p0
            nu = np.column_stack([t[:, 1], -t[:, 0]])  # outward for ccw triangles, length |e|
            for s in _GAUSS2:
                bary = np.zeros((T, 3))
                bary[:, k], bary[:, (k + 1) % 3] = 1 - s, s
                la = np.take_along_axis(bary, self.low_local, 1)
                lb = np.take_along_axis(bary, self.high_local, 1)
                N = la[..., None] * self._gb - lb[..., None] * self._ga
                P = np.stack([np.einsum("tk,tkj->tj", c[i][self.tmap], N) for i in range(2)], 1)
                PQ = P @ Q
                flux += 0.5 * np.einsum("tij,tj->ti", PQ, nu)
        return flux / self.areas[:, None]


@dataclass
class CurlProblem:
    mesh: TriMesh
    F0: np.ndarray
    L_c: float
    energy: Energy | None = None

    def __post_init__(self):
        if not self.L_c > 0:
            raise ValueError("L_c must be positive")
        self.F0 = np.asarray(self.F0, float)
        self.energy = MagicFamily(1.0) if self.energy is None else self.energy
        self.space = EdgeSpace(self.mesh)
        self.areas = self.space.areas
        self.base = self.space.interpolate_constant(self.F0)
        self.A = self.space.value_operator()
        self.C = self.space.curl_operator()
        self.free = np.tile(~self.space.boundary, 2)
        self.n_dofs = 2 * self.space.n_edges

    def zero_field(self):
        return np.zeros(self.n_dofs)

    def dofs(self, u):
        return self.base + np.asarray(u, float)

    def centroid_values(self, u):
        return (self.A @ self.dofs(u)).reshape(-1, 2, 2)

    def curl_values(self, u):
        return (self.C @ self.dofs(u)).reshape(-1, 2)

    def split(self, u):
        """(∫ W(P), (L_c²/2) ∫ |Curl P|²)."""
        P = self.centroid_values(u)
        cu = self.curl_values(u)
        w = self.energy.value(P)
        return float(self.areas @ w), 0.5 * self.L_c**2 * float(self.areas @ np.sum(cu**2, 1))

    def evaluate(self, u, order=0) -> Evaluation:
        P = self.centroid_values(u)
        dets = det(P)
        bad = np.flatnonzero(~(dets > 0)) if self.energy.gl_plus_only else []
        if len(bad):
            return Evaluation(np.inf, bad_element=int(bad[0]))
        w = self.energy.value(P)
        cu = self.curl_values(u)
        lc2 = self.L_c**2
        out = Evaluation(float(self.areas @ w) + 0.5 * lc2 * float(self.areas @ np.sum(cu**2, 1)))
        if not np.isfinite(out.energy):
            return Evaluation(np.inf, bad_element=int(np.flatnonzero(~np.isfinite(w))[0]))
        if order >= 1:
            S = self.energy.stress(P) * self.areas[:, None, None]
            out.gradient = self.A.T @ S.reshape(-1) + lc2 * (self.C.T @ (self.areas[:, None] * cu).ravel())
        if order >= 2:
            Tn = self.energy.tangent(P) * self.areas[:, None, None]
            Tn = 0.5 * (Tn + np.swapaxes(Tn, 1, 2))
            n = len(P)
            D = sp.bsr_matrix((Tn, np.arange(n), np.arange(n + 1)), shape=(4 * n, 4 * n)).tocsr()
            M = sp.diags(np.repeat(self.areas, 2))
            out.hessian = (self.A.T @ D @ self.A + lc2 * (self.C.T @ M @ self.C)).tocsr()
        return out

    def total_energy(self, u):
        return self.evaluate(u).energy

    def homogeneous_energy(self):
        return self.total_energy(self.zero_field())


def checkerboard_init(problem: CurlProblem, b: int = 4, delta: float = 0.5) -> np.ndarray:
    """Perturbation giving P = (1−δ)F0 / (1+δ)F0 on alternating squares of side 1/b."""
    if b < 1:
        raise ValueError("b must be >= 1")
    if not 0 <= delta < 1:
        raise ValueError("delta must lie in [0, 1)")

    def field(x):
        parity = (np.floor(b * x[:, 0]) + np.floor(b * x[:, 1])) % 2
        scale = np.where(parity == 0, 1 - delta, 1 + delta)
        return scale[:, None, None] * problem.F0

    dofs = problem.space.interpolate_function(field)
    u = dofs - problem.base
    u[~problem.free] = 0.0
    return u


@dataclass
class CurlOutcome:
    problem: CurlProblem
    result: TrustRegionResult
    homogeneous: float

    @property
    def energy(self):
        return self.result.energy

    @property
    def gap(self):
        return self.energy - self.homogeneous

    def summary(self) -> dict:
        bulk, pen = self.problem.split(self.result.u)
        return {"L_c": self.problem.L_c, "energy": self.energy, "homogeneous": self.homogeneous,
                "gap": self.gap, "bulk": bulk, "penalty": pen, "iterations": self.result.iterations,
                "converged": self.result.converged, "stuck": self.result.stuck,
                "radius": self.result.radius}


def minimize_i2(L_c, a=2.0, levels=3, init="homogeneous", seed=0, mesh=None, energy=None,
                **solver) -> CurlOutcome:
    """init: 'homogeneous', 'checkerboard:b:delta' or a dof perturbation array."""
    mesh = build_mesh("disc", levels) if mesh is None else mesh
    F0 = np.diag([np.sqrt(a), 1 / np.sqrt(a)])
    prob = CurlProblem(mesh, F0, L_c, energy)
    if isinstance(init, np.ndarray):
        u0 = init
    elif init == "homogeneous":
        u0 = prob.zero_field()
    elif init.startswith("checkerboard"):
        parts = init.split(":")
        b = int(parts[1]) if len(parts) > 1 else 4
        d = float(parts[2]) if len(parts) > 2 else 0.5
        u0 = checkerboard_init(prob, b, d)
    else:
        raise ValueError(f"unknown init {init!r}")
    solver.setdefault("max_iter", 300)
    res = trust_region_minimize(prob, u0, **solver)
    return CurlOutcome(prob, res, prob.homogeneous_energy())


def compatible_projection(problem: CurlProblem, u):
    """Least-squares P1 deformation: argmin ‖∇φ − P‖² with φ = F0·x on the boundary.

    Returns (nodal perturbation ϑ = φ − F0·x, FemProblem for the same energy).
    P is affine per element, so its mean equals the centroid value and the
    least-squares problem only needs centroid values.
    """
    fem = FemProblem(problem.mesh, problem.F0, problem.energy)
    target = (problem.centroid_values(u) - problem.F0).reshape(-1)
    M = sp.diags(np.repeat(fem.areas, 4))
    K = (fem.B.T @ M @ fem.B).tocsr()
    rhs = fem.B.T @ (M @ target)
    f = fem.free
    theta = fem.zero_field()
    theta[f] = spsolve(K[f][:, f].tocsc(), rhs[f])
    resid = np.linalg.norm(K[f][:, f] @ theta[f] - rhs[f])
    if resid > 1e-10 * max(1.0, np.linalg.norm(rhs[f])):
        raise RuntimeError(f"projection residual {resid:.3e}")
    return theta, fem


def write_curl_csv(outcome: CurlOutcome, path):
    p = outcome.problem
    P = p.centroid_values(outcome.result.u)
    cu = p.curl_values(outcome.result.u)
    dets = det(P)
    K = np.full(len(P), np.nan)
    ok = dets > 0
    K[ok] = distortion_nonlinear(P[ok])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["element", "det", "distortion", "curl_norm"])
        for e in range(len(P)):
            w.writerow([e, *(f"{v:.17g}" for v in (dets[e], K[e], np.linalg.norm(cu[e])))])
