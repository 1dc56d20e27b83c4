"""Triangle meshes of the square [-1,1]^2 and the unit disc with red refinement."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# coarse square: a1..a9 of the reference layout, zero-based
_SQUARE_VERTS = np.array([
    [-1.0, 0.0], [1.0, 0.0], [0.0, 0.0], [0.0, -1.0], [0.0, 1.0],
    [-1.0, -1.0], [1.0, 1.0], [1.0, -1.0], [-1.0, 1.0],
])
_SQUARE_TRIS = np.array([
    [5, 3, 2], [5, 2, 0], [3, 7, 1], [3, 1, 2],
    [2, 1, 6], [2, 6, 4], [0, 2, 4], [0, 4, 8],
])


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 2)
    triangles: np.ndarray  # (T, 3), counter-clockwise
    domain: str
    level: int = 0
    # global arc parameter of boundary vertices on the disc (nan elsewhere)
    arc_param: np.ndarray | None = None
    _edges: tuple | None = field(default=None, repr=False)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_triangles(self):
        return len(self.triangles)

    def edges(self):
        """Unique edges (low, high) and the (T, 3) map from local edge to edge id.

        Local edge k of a triangle joins its vertices k and k+1 (mod 3).
        """
        if self._edges is None:
            t = self.triangles
            local = np.stack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]], 1).reshape(-1, 2)
            srt = np.sort(local, axis=1)
            uniq, inv = np.unique(srt, axis=0, return_inverse=True)
            self._edges = (uniq, inv.reshape(-1, 3))
        return self._edges

    def boundary_edges(self):
        edges, tmap = self.edges()
        count = np.bincount(tmap.ravel(), minlength=len(edges))
        return count == 1

    def boundary_vertices(self):
        edges, _ = self.edges()
        mask = np.zeros(self.n_vertices, bool)
        mask[edges[self.boundary_edges()].ravel()] = True
        return mask

    def areas(self):
        p = self.vertices[self.triangles]
        e1, e2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def centroids(self):
        return self.vertices[self.triangles].mean(axis=1)

    def barycentric_gradients(self):
        """(T, 3, 2): gradient of each hat function on each triangle."""
        p = self.vertices[self.triangles]
        E = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], -1)  # columns are edges
        Einv = np.linalg.inv(E)  # rows: gradients of lambda_1, lambda_2
        g1, g2 = Einv[:, 0, :], Einv[:, 1, :]
        return np.stack([-g1 - g2, g1, g2], 1)


def _arc_point(t):
    """Point on the six-arc boundary at global parameter t in [0, 6)."""
    t = np.mod(t, 6.0)
    k = np.floor(t)
    s = t - k
    ang0, ang1, angm = k * np.pi / 3, (k + 1) * np.pi / 3, (k + 0.5) * np.pi / 3
    P0 = np.stack([np.cos(ang0), np.sin(ang0)], -1)
    P1 = np.stack([np.cos(ang1), np.sin(ang1)], -1)
    Pm = np.stack([np.cos(angm), np.sin(angm)], -1)
    s = s[..., None]
    return P0 * (1 - s) * (1 - 2 * s) + 4 * Pm * s * (1 - s) + P1 * s * (2 * s - 1)


def coarse_mesh(domain: str) -> TriMesh:
    if domain == "square":
        m = TriMesh(_SQUARE_VERTS.copy(), _SQUARE_TRIS.copy(), "square")
    elif domain == "disc":
        ang = np.arange(6) * np.pi / 3
        verts = np.vstack([[0.0, 0.0], np.column_stack([np.cos(ang), np.sin(ang)])])
        tris = np.array([[0, 1 + k, 1 + (k + 1) % 6] for k in range(6)])
        arc = np.concatenate([[np.nan], np.arange(6.0)])
        m = TriMesh(verts, tris, "disc", arc_param=arc)
    else:
        raise ValueError(f"unknown domain {domain!r}")
    return _orient(m)


def _orient(m: TriMesh) -> TriMesh:
    neg = m.areas() < 0
    m.triangles[neg] = m.triangles[neg][:, [0, 2, 1]]
    m._edges = None
    return m


def refine(m: TriMesh) -> TriMesh:
    """Red refinement; new disc boundary vertices are placed on the arcs."""
    edges, tmap = m.edges()
    V = m.n_vertices
    mids = 0.5 * (m.vertices[edges[:, 0]] + m.vertices[edges[:, 1]])
    arc = None
    if m.domain == "disc":
        bnd = m.boundary_edges()
        ta, tb = m.arc_param[edges[bnd, 0]], m.arc_param[edges[bnd, 1]]
        # shortest way around the wrap at t = 6 ~ 0
        tb = np.where(tb - ta > 3, tb - 6, np.where(ta - tb > 3, tb + 6, tb))
        tm = np.mod(0.5 * (ta + tb), 6.0)
        mids[bnd] = _arc_point(tm)
        new_arc = np.full(len(edges), np.nan)
        new_arc[bnd] = tm
        arc = np.concatenate([m.arc_param, new_arc])
    verts = np.vstack([m.vertices, mids])
    t = m.triangles
    e01, e12, e20 = V + tmap[:, 0], V + tmap[:, 1], V + tmap[:, 2]
    tris = np.concatenate([
        np.column_stack([t[:, 0], e01, e20]),
        np.column_stack([e01, t[:, 1], e12]),
        np.column_stack([e20, e12, t[:, 2]]),
        np.column_stack([e01, e12, e20]),
    ])
    return TriMesh(verts, tris, m.domain, m.level + 1, arc)


def build_mesh(domain: str, levels: int) -> TriMesh:
    if levels < 0:
        raise ValueError("levels must be >= 0")
    m = coarse_mesh(domain)
    for _ in range(levels):
        m = refine(m)
    return m


def expected_counts(domain: str, levels: int):
    """Closed-form (vertices, triangles) after uniform refinement."""
    n = 2**levels
    if domain == "square":
        return (2 * n + 1) ** 2, 8 * n * n
    if domain == "disc":
        return 1 + 3 * n * (n + 1), 6 * n * n
    raise ValueError(domain)
