"""Periodic neural-network ansatz trained on the trapezoidal energy.

theta(x1, x2) = e(x1) F(x1) + e(x2) G(x2) + e(x1) e(x2) H(x1, x2),
e(s) = 1 - cos(2 pi s),

with three tanh MLPs F, G: R -> R^2 and H: R^2 -> R^2.  Because e and e'
vanish at 0 and 1, theta and its gradient are periodic on the unit square by
construction.  Spatial derivatives are propagated as forward tangents through
each network; parameter gradients come from a hand-written reverse pass over
values and tangents.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .energy import INF, Energy, MagicFamily

TWO_PI = 2.0 * math.pi
HIDDEN = (64, 64, 64, 64)


def envelope(s):
    return 1.0 - np.cos(TWO_PI * s)


def envelope_d(s):
    return TWO_PI * np.sin(TWO_PI * s)


class MLP:
    """Dense tanh network with forward-mode input tangents and a reverse pass.

    Layers are stored as a list of (A, b) with A of shape (out, in).
    """

    def __init__(self, sizes, rng, final_scale=1e-2):
        self.sizes = tuple(sizes)
        self.params = []
        for k, (i, o) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / math.sqrt(i)
            A = rng.uniform(-bound, bound, (o, i))
            b = rng.uniform(-bound, bound, o)
            if k == len(sizes) - 2:
                A, b = A * final_scale, b * final_scale
            self.params.append([A, b])

    def forward(self, x):
        """x: (P, d).  Returns (y, ty, cache) with ty[k] = dy/dx_k, shape (d, P, out)."""
        A, b = self.params[0]
        d = x.shape[1]
        z = x @ A.T + b
        tz = np.broadcast_to(A.T[:, None, :], (d,) + z.shape)
        cache = [(x, None)]
        n = len(self.params)
        for k in range(1, n):
            a = np.tanh(z)
            s = 1.0 - a * a
            ta = tz * s
            cache.append((a, ta, tz, s))
            A, b = self.params[k]
            z = a @ A.T + b
            tz = ta @ A.T
        return z, tz, cache

    def backward(self, cache, gy, gty):
        """Gradients for the loss with dL/dy = gy (P, out), dL/d(ty) = gty (d, P, out)."""
        grads = [None] * len(self.params)
        gz, gtz = gy, gty
        for k in range(len(self.params) - 1, 0, -1):
            a, ta, tz_prev, s = cache[k]
            A, _ = self.params[k]
            gA = gz.T @ a + np.einsum("kpo,kpi->oi", gtz, ta)
            grads[k] = [gA, gz.sum(0)]
            ga = gz @ A
            gta = gtz @ A
            # a = tanh(z): da/dz = s, d(ta)/dz = tz * (-2 a s)
            gz = ga * s + np.sum(gta * tz_prev, axis=0) * (-2.0 * a * s)
            gtz = gta * s
        x = cache[0][0]
        gA = gz.T @ x + gtz.sum(axis=1).T
        grads[0] = [gA, gz.sum(0)]
        return grads

    def flat(self):
        return np.concatenate([p.ravel() for layer in self.params for p in layer])

    def set_flat(self, v):
        i = 0
        for layer in self.params:
            for j, p in enumerate(layer):
                layer[j] = v[i:i + p.size].reshape(p.shape).copy()
                i += p.size

    @staticmethod
    def flat_grads(grads):
        return np.concatenate([g.ravel() for layer in grads for g in layer])


@dataclass
class QuadratureGrid:
    """Tensor trapezoidal rule on N x N nodes (a - 1)/(N - 1) of the unit square."""

    N: int

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("need at least two nodes per axis")

    @property
    def nodes(self):
        return np.linspace(0.0, 1.0, self.N)

    @property
    def weights1d(self):
        w = np.full(self.N, 1.0 / (self.N - 1))
        w[0] = w[-1] = 0.5 / (self.N - 1)
        return w

    @property
    def weights(self):
        w = self.weights1d
        return np.outer(w, w)


class PeriodicAnsatz:
    def __init__(self, seed=0, hidden=HIDDEN, final_scale=1e-2):
        rng = np.random.default_rng(seed)
        self.f = MLP((1,) + tuple(hidden) + (2,), rng, final_scale)
        self.g = MLP((1,) + tuple(hidden) + (2,), rng, final_scale)
        self.h = MLP((2,) + tuple(hidden) + (2,), rng, final_scale)
        self.nets = (self.f, self.g, self.h)

    # parameter vector helpers
    def flat(self):
        return np.concatenate([n.flat() for n in self.nets])

    def set_flat(self, v):
        i = 0
        for n in self.nets:
            m = n.flat().size
            n.set_flat(v[i:i + m])
            i += m

    def zero(self):
        self.set_flat(np.zeros_like(self.flat()))
        return self

    def _tensor_eval(self, x1, x2):
        """Evaluate on the tensor grid x1 (n1,) x x2 (n2,); returns theta, grad, caches."""
        F, tF, cf = self.f.forward(x1[:, None])
        G, tG, cg = self.g.forward(x2[:, None])
        X1, X2 = np.meshgrid(x1, x2, indexing="ij")
        pts = np.column_stack([X1.ravel(), X2.ravel()])
        H, tH, ch = self.h.forward(pts)
        n1, n2 = len(x1), len(x2)
        H = H.reshape(n1, n2, 2)
        H1 = tH[0].reshape(n1, n2, 2)
        H2 = tH[1].reshape(n1, n2, 2)
        e1, d1 = envelope(x1)[:, None, None], envelope_d(x1)[:, None, None]
        e2, d2 = envelope(x2)[None, :, None], envelope_d(x2)[None, :, None]
        theta = e1 * F[:, None, :] + e2 * G[None, :, :] + e1 * e2 * H
        grad = np.empty((n1, n2, 2, 2))
        grad[..., 0] = d1 * F[:, None, :] + e1 * tF[0][:, None, :] + d1 * e2 * H + e1 * e2 * H1
        grad[..., 1] = d2 * G[None, :, :] + e2 * tG[0][None, :, :] + e1 * d2 * H + e1 * e2 * H2
        return theta, grad, (cf, cg, ch)

    def eval(self, x):
        """theta and grad theta at scattered points x of shape (P, 2)."""
        x = np.atleast_2d(np.asarray(x, float))
        out_t, out_g = [], []
        for p in x:
            t, g, _ = self._tensor_eval(p[:1], p[1:])
            out_t.append(t[0, 0])
            out_g.append(g[0, 0])
        return np.array(out_t), np.array(out_g)

    def field_on_grid(self, grid: QuadratureGrid):
        x = grid.nodes
        theta, grad, _ = self._tensor_eval(x, x)
        return theta, grad

    def energy_and_grad(self, F0, grid: QuadratureGrid, energy: Energy | None = None,
                        need_grad=True):
        """Trapezoidal energy Σ ξ(α)ξ(β) W(F0 + ∇θ) and its parameter gradient.

        Returns (INF, None, bad_node_index) if any node leaves GL+(2).
        """
        W = energy or MagicFamily(1.0)
        x = grid.nodes
        _, grad, (cf, cg, ch) = self._tensor_eval(x, x)
        Fm = np.asarray(F0, float) + grad
        vals = W.value(Fm)
        wts = grid.weights
        if not np.all(np.isfinite(vals)):
            bad = np.argwhere(~np.isfinite(vals))[0]
            return INF, None, tuple(int(i) for i in bad)
        E = float(np.sum(wts * vals))
        if not need_grad:
            return E, None, None
        S = wts[..., None, None] * W.stress(Fm)  # dE/d(grad)
        n = len(x)
        e, d = envelope(x), envelope_d(x)
        E1, D1 = e[:, None, None], d[:, None, None]
        E2, D2 = e[None, :, None], d[None, :, None]
        S0, S1 = S[..., 0], S[..., 1]
        gF = np.sum(S0 * D1, axis=1)
        gtF = np.sum(S0 * E1, axis=1)
        gG = np.sum(S1 * D2, axis=0)
        gtG = np.sum(S1 * E2, axis=0)
        gH = (S0 * D1 * E2 + S1 * E1 * D2).reshape(n * n, 2)
        gtH = np.stack([(S0 * E1 * E2).reshape(n * n, 2), (S1 * E1 * E2).reshape(n * n, 2)])
        grads = [self.f.backward(cf, gF, gtF[None]),
                 self.g.backward(cg, gG, gtG[None]),
                 self.h.backward(ch, gH, gtH)]
        flat = np.concatenate([MLP.flat_grads(g) for g in grads])
        return E, flat, None


def total_energy(ansatz: PeriodicAnsatz, F0, grid: QuadratureGrid, energy=None) -> float:
    return ansatz.energy_and_grad(F0, grid, energy, need_grad=False)[0]


@dataclass
class AdamSchedule:
    lr: float = 1e-3
    iters: int = 2000
    decay_at: tuple = (700, 1400, 1800)
    decay: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_rejections: int = 50

    def rate(self, it):
        return self.lr * self.decay ** sum(it >= m for m in self.decay_at)

    @classmethod
    def scaled(cls, iters, lr=1e-3):
        """Milestones at the same fractions of the run as the 2000-step default."""
        base = cls()
        return cls(lr=lr, iters=iters,
                   decay_at=tuple(int(round(m * iters / base.iters)) for m in base.decay_at))


class TrainingAborted(RuntimeError):
    pass


@dataclass
class TrainResult:
    ansatz: PeriodicAnsatz
    energies: list
    best_energy: float
    homogeneous: float
    rejections: int = 0
    history_best: list = field(default_factory=list)

    @property
    def gap(self):
        return self.best_energy - self.homogeneous


def adam_train(F0, grid: QuadratureGrid, seed: int = 0, schedule: AdamSchedule | None = None,
               energy: Energy | None = None, callback=None) -> TrainResult:
    """Full-grid deterministic Adam on the trapezoidal energy.

    A step that makes some node infeasible is rejected and retried with half the
    learning rate; more than ``max_rejections`` consecutive rejections abort.
    The returned ansatz holds the best parameters seen.
    """
    sched = schedule or AdamSchedule()
    W = energy or MagicFamily(1.0)
    F0 = np.asarray(F0, float)
    net = PeriodicAnsatz(seed)
    p = net.flat()
    m = np.zeros_like(p)
    v = np.zeros_like(p)
    E, g, bad = net.energy_and_grad(F0, grid, W)
    if not np.isfinite(E):
        raise TrainingAborted(f"initial field infeasible at node {bad}")
    best_E, best_p = E, p.copy()
    energies, best_hist = [E], [E]
    rejections = 0
    for it in range(sched.iters):
        m = sched.beta1 * m + (1 - sched.beta1) * g
        v = sched.beta2 * v + (1 - sched.beta2) * g * g
        mh = m / (1 - sched.beta1 ** (it + 1))
        vh = v / (1 - sched.beta2 ** (it + 1))
        step = mh / (np.sqrt(vh) + sched.eps)
        lr = sched.rate(it)
        streak = 0
        while True:
            trial = p - lr * step
            net.set_flat(trial)
            E_new, g_new, bad = net.energy_and_grad(F0, grid, W)
            if np.isfinite(E_new):
                break
            streak += 1
            rejections += 1
            if streak > sched.max_rejections:
                net.set_flat(best_p)
                raise TrainingAborted(f"step {it}: {streak} consecutive infeasible proposals, "
                                      f"last bad node {bad}")
            lr *= 0.5
        p, E, g = trial, E_new, g_new
        energies.append(E)
        if E < best_E:
            best_E, best_p = E, p.copy()
        best_hist.append(best_E)
        if callback:
            callback(it, E, best_E)
    net.set_flat(best_p)
    homog = float(W.value(F0))
    return TrainResult(net, energies, best_E, homog, rejections, best_hist)


def laminate_structure(ansatz: PeriodicAnsatz, grid: QuadratureGrid):
    """L2 norms (trapezoid) of the off-(1,1) gradient entries and of the (1,1) variation."""
    _, G = ansatz.field_on_grid(grid)
    w = grid.weights
    l2 = lambda a: float(math.sqrt(np.sum(w * a * a)))  # noqa: E731
    g11 = G[..., 0, 0]
    var11 = l2(g11 - np.sum(w * g11))
    off = math.sqrt(l2(G[..., 0, 1]) ** 2 + l2(G[..., 1, 0]) ** 2 + l2(G[..., 1, 1]) ** 2)
    return off, var11


def dump_field(ansatz: PeriodicAnsatz, grid: QuadratureGrid, path):
    theta, G = ansatz.field_on_grid(grid)
    x = grid.nodes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x1", "x2", "theta1", "theta2", "g11", "g12", "g21", "g22"])
        for i, a in enumerate(x):
            for j, b in enumerate(x):
                row = (a, b, *theta[i, j], *G[i, j].ravel())
                w.writerow([f"{v:.17g}" for v in row])
