"""Rank-one convexity scans, invariance checks and the energy gap.

The Legendre-Hadamard form ``D^2 W(F).(xi ⊗ eta, xi ⊗ eta)`` is evaluated from
the closed-form tangent when an energy provides one and by a Richardson
extrapolated second difference otherwise.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .energy import INF, Energy, cof, det, frob2, outer, vec

FD_REL_STEP = 1e-4
FD_MIN_STEP = 1e-12


def unit(theta):
    theta = np.asarray(theta, float)
    return np.stack([np.cos(theta), np.sin(theta)], -1)


def _second_difference(W: Energy, F, H, h):
    w0 = W.value(F)
    wp, wm = W.value(F + h * H), W.value(F - h * H)
    return (wp - 2 * w0 + wm) / (h * h)


def lh_numeric(W: Energy, F, H):
    """Richardson-extrapolated central second difference of t -> W(F + tH).

    The step starts at 1e-4 * max(1, |F|) and is halved while any stencil point
    leaves the domain of ``W``; returns nan if the step underflows.
    """
    F = np.asarray(F, float)
    H = np.asarray(H, float)
    h = FD_REL_STEP * max(1.0, math.sqrt(float(frob2(F))))
    while h > FD_MIN_STEP:
        d1 = _second_difference(W, F, H, h)
        if np.isfinite(d1):
            d2 = _second_difference(W, F, H, h / 2)
            if np.isfinite(d2):
                return float((4 * d2 - d1) / 3)
        h /= 2
    return math.nan


def lh_form(W: Energy, F, xi, eta, method: str = "auto"):
    """D^2 W(F).(xi ⊗ eta, xi ⊗ eta).

    Parameters
    ----------
    W : Energy
    F : (2, 2) array
    xi, eta : unit 2-vectors
    method : {"auto", "closed", "fd"}
        ``auto`` uses the closed-form tangent when the energy has one.
    """
    F = np.asarray(F, float)
    if W.gl_plus_only and det(F) <= 0:
        raise ValueError("F must lie in GL+(2) for this energy")
    H = outer(xi, eta)
    if method == "closed" or (method == "auto" and W.closed_form_tangent):
        return float(W.lh(F, H))
    if method not in ("auto", "fd"):
        raise ValueError(f"unknown method {method!r}")
    return lh_numeric(W, F, H)


# ---------------------------------------------------------------------------
# scans


@dataclass(frozen=True)
class ScanGrid:
    """Base points diag(sqrt(a), 1/sqrt(a)) and a direction grid in degrees.

    ``xi`` angles cover [0, 180) since (xi, eta) and (-xi, -eta) give the same
    rank-one matrix; ``eta`` angles cover [0, 360).
    """

    a_max: float = 10.0
    a_steps: int = 91
    dtheta: float = 1.0

    def __post_init__(self):
        if self.a_max < 1 or self.a_steps < 1 or self.dtheta <= 0:
            raise ValueError("empty scan grid")

    def a_values(self):
        if self.a_steps == 1:
            return np.array([float(self.a_max)])
        return np.linspace(1.0, self.a_max, self.a_steps)

    def xi_angles(self):
        return np.arange(0.0, 180.0, self.dtheta)

    def eta_angles(self):
        return np.arange(0.0, 360.0, self.dtheta)

    @staticmethod
    def base_point(a):
        r = math.sqrt(a)
        return np.diag([r, 1.0 / r])


@dataclass
class ScanReport:
    min_value: float
    argmin: dict
    n_negative: int
    n_evaluated: int
    n_failed: int
    tol: float
    energy: str = ""
    grid: dict = field(default_factory=dict)
    per_a: list = field(default_factory=list)  # rows (a, theta_xi, theta_eta, min lh)
    full: list | None = None

    @property
    def has_negative_witness(self):
        return self.n_negative > 0

    def merge(self, other: "ScanReport") -> "ScanReport":
        first = self if self.min_value <= other.min_value else other
        return ScanReport(
            min_value=first.min_value, argmin=first.argmin,
            n_negative=self.n_negative + other.n_negative,
            n_evaluated=self.n_evaluated + other.n_evaluated,
            n_failed=self.n_failed + other.n_failed, tol=self.tol,
            energy=self.energy, grid=self.grid, per_a=self.per_a + other.per_a,
            full=None if self.full is None else self.full + (other.full or []),
        )

    def write_csv(self, path):
        rows = self.full if self.full is not None else self.per_a
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["a", "theta_xi", "theta_eta", "lh_value"])
            for r in rows:
                w.writerow([f"{x:.17g}" for x in r])


def lh_direction_grid(W: Energy, F, xi_deg, eta_deg):
    """LH values on the full product grid of direction angles (degrees)."""
    xi = unit(np.deg2rad(xi_deg))
    eta = unit(np.deg2rad(eta_deg))
    if W.closed_form_tangent:
        T = np.asarray(W.tangent(F)).reshape(2, 2, 2, 2)
        return np.einsum("ijkl,ai,bj,ak,bl->ab", T, xi, eta, xi, eta)
    H = outer(xi[:, None, :], eta[None, :, :])
    out = np.empty(H.shape[:2])
    Fb = np.broadcast_to(F, H.shape)
    h = FD_REL_STEP * max(1.0, math.sqrt(float(frob2(F))))
    d1 = _second_difference(W, Fb, H, h)
    d2 = _second_difference(W, Fb, H, h / 2)
    out[:] = (4 * d2 - d1) / 3
    bad = ~np.isfinite(out)
    for i, j in zip(*np.nonzero(bad)):
        out[i, j] = lh_numeric(W, F, H[i, j])
    return out


def _scan_chunk(args):
    W, a_vals, xi_deg, eta_deg, tol, keep_full = args
    best = (INF, None)
    n_neg = n_eval = n_fail = 0
    per_a, full = [], ([] if keep_full else None)
    for a in a_vals:
        F = ScanGrid.base_point(a)
        vals = lh_direction_grid(W, F, xi_deg, eta_deg)
        fail = ~np.isfinite(vals)
        n_fail += int(fail.sum())
        n_eval += vals.size
        v = np.where(fail, INF, vals)
        n_neg += int(np.sum(v < -tol))
        i, j = np.unravel_index(np.argmin(v), v.shape)
        per_a.append((float(a), float(xi_deg[i]), float(eta_deg[j]), float(v[i, j])))
        if v[i, j] < best[0]:
            best = (float(v[i, j]), dict(a=float(a), theta_xi=float(xi_deg[i]),
                                         theta_eta=float(eta_deg[j]), F=F.tolist(),
                                         xi=unit(math.radians(xi_deg[i])).tolist(),
                                         eta=unit(math.radians(eta_deg[j])).tolist()))
        if keep_full:
            for ii, tx in enumerate(xi_deg):
                for jj, te in enumerate(eta_deg):
                    full.append((float(a), float(tx), float(te), float(vals[ii, jj])))
    return best, n_neg, n_eval, n_fail, per_a, full


def rank_one_scan(W: Energy, grid: ScanGrid | None = None, tol: float = 1e-6,
                  workers: int = 1, keep_full: bool = False) -> ScanReport:
    """Exhaustive LH evaluation over the det F = 1 slice and a direction grid.

    Isotropy reduces every F in GL+(2) with det F = 1 to diag(sqrt(a), 1/sqrt(a))
    up to rotations on both sides, which the full direction grid absorbs.
    A value counts as a negative witness when it is below ``-tol``.
    """
    grid = grid or ScanGrid()
    a_vals = grid.a_values()
    xi_deg, eta_deg = grid.xi_angles(), grid.eta_angles()
    if workers > 1 and len(a_vals) > 1:
        chunks = np.array_split(a_vals, min(workers, len(a_vals)))
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_scan_chunk, [(W, c, xi_deg, eta_deg, tol, keep_full)
                                              for c in chunks]))
    else:
        parts = [_scan_chunk((W, a_vals, xi_deg, eta_deg, tol, keep_full))]
    meta = dict(a_max=grid.a_max, a_steps=grid.a_steps, dtheta=grid.dtheta)
    report = None
    for (best, n_neg, n_eval, n_fail, per_a, full) in parts:
        r = ScanReport(best[0], best[1], n_neg, n_eval, n_fail, tol, W.spec(), meta, per_a, full)
        report = r if report is None else report.merge(r)
    return report


def min_lh_at(W: Energy, F, dtheta: float = 1.0) -> float:
    """Minimum LH value over the direction grid at a single F."""
    g = ScanGrid(dtheta=dtheta)
    return float(np.min(lh_direction_grid(W, np.asarray(F, float), g.xi_angles(), g.eta_angles())))


# ---------------------------------------------------------------------------
# invariance checks


def _require_rank_one(H):
    H = np.asarray(H, float)
    if abs(det(H)) > 1e-12 * frob2(H):
        raise ValueError("H must have rank one")
    return H


def _lh(W, F, H):
    if W.closed_form_tangent:
        return float(W.lh(F, H))
    return lh_numeric(W, F, H)


def check_ellipticity_scaling(W: Energy, F, H, alpha: float):
    """Return (D^2W(alpha F).(H,H), alpha^-2 D^2W(F).(H,H)); equal for W in 𝔐*."""
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    H = _require_rank_one(H)
    F = np.asarray(F, float)
    return _lh(W, alpha * F, H), _lh(W, F, H) / alpha**2


def check_inversion(W: Energy, F, H):
    """Return (D^2W(F^-1).(H,H), det(F)^2 D^2W(F).(Cof(H)^T, Cof(H)^T)).

    The two agree for isotropic W in 𝔐* and rank-one H, which is the pointwise
    statement behind invariance of the ellipticity domain under inversion.
    """
    H = _require_rank_one(H)
    F = np.asarray(F, float)
    G = cof(H).T
    return _lh(W, np.linalg.inv(F), H), float(det(F)) ** 2 * _lh(W, F, G)


# ---------------------------------------------------------------------------
# energy gap


@dataclass
class PiecewiseConstantField:
    """Displacement gradient values with their area weights on a domain.

    ``grads`` has shape (m, 2, 2) and ``weights`` shape (m,), summing to |Omega|.
    ``boundary`` records the boundary condition ("dirichlet" or "periodic").
    """

    weights: np.ndarray
    grads: np.ndarray
    boundary: str = "dirichlet"

    def quadrature(self):
        return np.asarray(self.weights, float), np.asarray(self.grads, float)

    def scaled(self, alpha):
        return PiecewiseConstantField(self.weights, alpha * np.asarray(self.grads), self.boundary)

    @property
    def measure(self):
        return float(np.sum(self.weights))


def energy_gap(W: Energy, F0, field) -> float:
    """∫ W(F0 + ∇θ) dx - |Ω| W(F0) under the field's own quadrature.

    ``field`` must expose ``quadrature() -> (weights, grads)``.
    Returns INF if any quadrature point leaves the domain of W.
    """
    F0 = np.asarray(F0, float)
    wts, grads = field.quadrature()
    vals = W.value(F0 + grads)
    if not np.all(np.isfinite(vals)):
        return INF
    w0 = W.value(F0)
    return float(np.sum(wts * (vals - w0)))


def grid_triangulation(n: int):
    """Uniform right-triangle mesh of [0,1]^2 with n x n squares."""
    x = np.linspace(0.0, 1.0, n + 1)
    X, Y = np.meshgrid(x, x, indexing="ij")
    pts = np.column_stack([X.ravel(), Y.ravel()])
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b = idx[:-1, :-1].ravel(), idx[1:, :-1].ravel()
    c, d = idx[1:, 1:].ravel(), idx[:-1, 1:].ravel()
    tris = np.concatenate([np.column_stack([a, b, c]), np.column_stack([a, c, d])])
    return pts, tris


def p1_gradients(pts, tris, values):
    """Per-triangle gradients (rows = components) and areas of a P1 vector field."""
    p0, p1, p2 = pts[tris[:, 0]], pts[tris[:, 1]], pts[tris[:, 2]]
    E = np.stack([p1 - p0, p2 - p0], -1)  # columns are edges
    area = 0.5 * np.abs(det(E))
    dU = np.stack([values[tris[:, 1]] - values[tris[:, 0]],
                   values[tris[:, 2]] - values[tris[:, 0]]], -1)
    return dU @ np.linalg.inv(E), area


def random_piecewise_affine_field(rng, n: int = 6, amplitude: float = 0.1):
    """P1 displacement on a uniform mesh of the unit square, zero on the boundary."""
    pts, tris = grid_triangulation(n)
    vals = amplitude * rng.normal(size=pts.shape)
    on_bdry = np.any((pts == 0.0) | (pts == 1.0), axis=1)
    vals[on_bdry] = 0.0
    G, area = p1_gradients(pts, tris, vals)
    return PiecewiseConstantField(area, G)


__all__ = [
    "ScanGrid", "ScanReport", "PiecewiseConstantField", "check_ellipticity_scaling",
    "check_inversion", "energy_gap", "lh_form", "lh_numeric", "lh_direction_grid",
    "min_lh_at", "rank_one_scan", "random_piecewise_affine_field", "unit", "vec",
]
