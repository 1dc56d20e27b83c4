"""Trust-region Newton with a max-norm radius.

The max-norm turns the subproblem into a box-constrained quadratic, solved by a
Cauchy step along the projected gradient followed by projected CG on the free
variables.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from ..energy import INF


@dataclass
class TrustRegionResult:
    u: np.ndarray
    energies: list = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    stuck: bool = False
    radius: float = 0.0
    rejected: int = 0

    @property
    def energy(self):
        return self.energies[-1]


def _quad(H, g, s):
    return float(g @ s + 0.5 * s @ (H @ s))


def _projected_search(H, g, s, grad, delta):
    """Backtracking along the projected path s - t·grad with sufficient model decrease."""
    q0 = _quad(H, g, s)
    d = -grad
    d[(s >= delta) & (d > 0)] = 0.0
    d[(s <= -delta) & (d < 0)] = 0.0
    dmax = np.max(np.abs(d))
    if dmax == 0.0:
        return s
    dHd = float(d @ (H @ d))
    t = float(d @ d) / dHd if dHd > 0 else 2.0 * delta / dmax
    t = min(t, 2.0 * delta / dmax)
    for _ in range(60):
        trial = np.clip(s + t * d, -delta, delta)
        if _quad(H, g, trial) <= q0 + 0.01 * float(grad @ (trial - s)):
            return trial
        t *= 0.5
    return s


def box_qp(H, g, delta, inner_tol=1e-5, max_cg=None, max_restarts=50):
    """Approximately minimize g·s + ½ s·Hs subject to |s|_∞ ≤ delta.

    Alternates projected-gradient searches (the first one gives the Cauchy point)
    with CG on the face of variables strictly inside the box, until the projected
    gradient vanishes.
    """
    n = len(g)
    if max_cg is None:
        max_cg = max(50, 2 * n)
    s = np.zeros(n)
    gnorm0 = np.linalg.norm(g)
    if gnorm0 == 0.0:
        return s
    used = 0
    for _ in range(max_restarts):
        grad = g + H @ s
        pg = grad.copy()
        pg[(s >= delta) & (grad < 0)] = 0.0
        pg[(s <= -delta) & (grad > 0)] = 0.0
        if np.linalg.norm(pg) <= 1e-10 * gnorm0 or used >= max_cg:
            break
        s = _projected_search(H, g, s, grad, delta)
        free = np.abs(s) < delta
        r = -(g + H @ s)
        r[~free] = 0.0
        if np.linalg.norm(r) <= 1e-10 * gnorm0:
            continue
        p = r.copy()
        rr = float(r @ r)
        while used < max_cg:
            used += 1
            Hp = H @ p
            Hp[~free] = 0.0
            curv = float(p @ Hp)
            with np.errstate(divide="ignore", invalid="ignore"):
                lim = np.where(p > 0, (delta - s) / p, np.where(p < 0, (-delta - s) / p, np.inf))
            tmax = float(np.min(lim[free]))
            if curv <= 0 or rr / curv >= tmax:
                s = np.clip(s + tmax * p, -delta, delta)
                break
            alpha = rr / curv
            s = s + alpha * p
            r = r - alpha * Hp
            rr_new = float(r @ r)
            # correction small relative to the step so far
            if np.max(np.abs(alpha * p)) < inner_tol * np.max(np.abs(s)) \
                    or np.sqrt(rr_new) <= 1e-10 * gnorm0:
                break
            p = r + (rr_new / rr) * p
            rr = rr_new
    return s


def negative_curvature_step(H, delta, rel_tol=1e-8, dense_limit=6000):
    """Box-scaled eigenvector of the most negative Hessian eigenvalue, or None."""
    if H.shape[0] == 0:
        return None
    scale = max(abs(H).max(), 1e-300)
    n = H.shape[0]
    try:
        if n <= 3:
            raise ArpackNoConvergence("tiny", [], [])
        lam, vec = eigsh(H, k=1, which="SA", tol=1e-10, v0=np.ones(n))
    except ArpackNoConvergence:
        if n > dense_limit:
            return None
        lam, vec = np.linalg.eigh(H.toarray())
    if lam[0] >= -rel_tol * scale:
        return None
    v = vec[:, 0]
    return delta * v / np.max(np.abs(v))


def trust_region_minimize(problem, u0=None, tol=1e-7, max_iter=500, radius=None,
                          radius_min=1e-12, inner_tol=1e-5, second_order=True,
                          callback=None) -> TrustRegionResult:
    """Minimize problem.evaluate over the free dofs; boundary dofs keep their values.

    With ``second_order`` a vanishing model step triggers a search along the most
    negative curvature direction, so exact saddles such as a homogeneous state of
    a non-elliptic energy are left.
    """
    u = problem.zero_field() if u0 is None else np.array(u0, float)
    ev = problem.evaluate(u, order=2)
    if not np.isfinite(ev.energy):
        raise ValueError(f"infeasible initial field (element {ev.bad_element})")
    free = problem.free
    h = float(np.sqrt(np.min(problem.areas)))
    delta = 0.25 * h if radius is None else float(radius)
    res = TrustRegionResult(u=u, energies=[ev.energy], radius=delta)
    for it in range(1, max_iter + 1):
        res.iterations = it
        g = ev.gradient[free]
        H = ev.hessian[free][:, free].tocsr()
        s = box_qp(H, g, delta, inner_tol=inner_tol)
        pred = -_quad(H, g, s)
        step = float(np.max(np.abs(s))) if len(s) else 0.0
        if (step < tol or pred <= 0) and second_order:
            v = negative_curvature_step(H, delta)
            if v is not None:
                s, pred, step = v, -_quad(H, g, v), delta
        if step < tol or pred <= 0:
            res.converged = step < tol or pred <= 1e-15 * max(1.0, abs(ev.energy))
            if res.converged:
                break
        trial = u.copy()
        trial[free] += s
        ev_new = problem.evaluate(trial, order=2)
        actual = ev.energy - ev_new.energy if np.isfinite(ev_new.energy) else -INF
        rho = actual / pred if pred > 0 else -INF
        if rho > 1e-4 and actual > 0:
            u, ev = trial, ev_new
            res.energies.append(ev.energy)
            if rho > 0.75 and step >= 0.99 * delta:
                delta *= 2.0
            elif rho < 0.25:
                delta = 0.5 * step
            if step < tol:
                res.converged = True
                break
        else:
            res.rejected += 1
            delta = 0.25 * step
        if callback is not None:
            callback(it, u, ev.energy, delta)
        if delta < radius_min:
            res.stuck = True
            break
    res.u, res.radius = u, delta
    return res
