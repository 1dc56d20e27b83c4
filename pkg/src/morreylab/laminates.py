"""Combined laminates, their pushforward measures and the random Jensen-gap search.

A combined laminate on the unit square is

    phi(x) = F0 x + sum_i h(<x, eta_i> + c_i) xi_i

with the 1-periodic hat profile ``h``.  Its gradient takes the values
F0 + sum_i s_i xi_i ⊗ eta_i with slopes s_i = ±1, so the pushforward of the
Lebesgue measure is a discrete measure on at most 2^N matrices.

Wave vectors ``eta`` are integer vectors: then every wave is periodic on the
unit square, each slope pattern of a single wave covers exactly half of it and
the barycenter of the measure is exactly F0.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .energy import INF, Energy, det

# ---------------------------------------------------------------------------
# hat profile


def hat(t):
    """h(t) = t on [0, 1/2], 1 - t on [1/2, 1], extended 1-periodically."""
    f = np.mod(t, 1.0)
    return np.where(f <= 0.5, f, 1.0 - f)


def hat_slope(t):
    """Slope of ``hat``: +1 iff frac(t) in (0, 1/2]; kinks take the left limit."""
    f = np.mod(t, 1.0)
    return np.where((f > 0.0) & (f <= 0.5), 1.0, -1.0)


# ---------------------------------------------------------------------------
# specs and measures


@dataclass
class LaminateSpec:
    F0: np.ndarray
    etas: np.ndarray  # (N, 2), integer valued
    xis: np.ndarray  # (N, 2)
    cs: np.ndarray  # (N,)

    def __post_init__(self):
        self.F0 = np.asarray(self.F0, float).reshape(2, 2)
        self.etas = np.asarray(self.etas, float).reshape(-1, 2)
        self.xis = np.asarray(self.xis, float).reshape(-1, 2)
        self.cs = np.asarray(self.cs, float).reshape(-1)
        if not (len(self.etas) == len(self.xis) == len(self.cs)):
            raise ValueError("inconsistent wave counts")

    @property
    def n_waves(self):
        return len(self.cs)

    def phase_signs(self):
        """All 2^N slope patterns; row k holds the slopes encoded by the bits of k."""
        n = self.n_waves
        k = np.arange(2**n)[:, None]
        return np.where((k >> np.arange(n)) & 1, 1.0, -1.0)

    def phase_gradients(self):
        S = self.phase_signs()
        R1 = self.xis[:, :, None] * self.etas[:, None, :]
        return self.F0 + np.einsum("kn,nij->kij", S, R1)

    def is_valid(self):
        return bool(np.all(det(self.phase_gradients()) > 0))

    def gradient_at(self, x):
        """∇φ at points x of shape (..., 2)."""
        x = np.asarray(x, float)
        s = hat_slope(x @ self.etas.T + self.cs)
        return self.F0 + np.einsum("...n,nij->...ij", s, self.xis[:, :, None] * self.etas[:, None, :])

    def displacement_at(self, x):
        x = np.asarray(x, float)
        return hat(x @ self.etas.T + self.cs) @ self.xis

    def scaled(self, alpha):
        return LaminateSpec(alpha * self.F0, self.etas, alpha * self.xis, self.cs)

    # plain text record: N, then eta, xi, c per wave, then F0 row-major
    def to_text(self) -> str:
        lines = [str(self.n_waves)]
        for e, x, c in zip(self.etas, self.xis, self.cs):
            lines.append(" ".join(f"{v:.17g}" for v in (*e, *x, c)))
        lines.append(" ".join(f"{v:.17g}" for v in self.F0.ravel()))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "LaminateSpec":
        rows = [r.split() for r in text.strip().splitlines()]
        n = int(rows[0][0])
        waves = np.array([[float(v) for v in r] for r in rows[1:1 + n]]).reshape(n, 5)
        F0 = np.array([float(v) for v in rows[1 + n]])
        return cls(F0, waves[:, :2], waves[:, 2:4], waves[:, 4])


@dataclass
class DiscreteMeasure:
    atoms: np.ndarray  # (m, 2, 2)
    weights: np.ndarray  # (m,)

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, float).reshape(-1, 2, 2)
        self.weights = np.asarray(self.weights, float).reshape(-1)
        if np.any(self.weights < 0):
            raise ValueError("negative weight")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights sum to {self.weights.sum()!r}")

    def barycenter(self):
        return np.einsum("k,kij->ij", self.weights, self.atoms)

    def compressed(self, tol=0.0):
        keep = self.weights > tol
        return DiscreteMeasure(self.atoms[keep], self.weights[keep] / self.weights[keep].sum())


def jensen_gap(W: Energy, mu: DiscreteMeasure, reference=None) -> float:
    """∫ W dμ - W(barycenter); INF if a charged atom lies outside the domain of W.

    ``reference`` overrides the barycenter (e.g. with the exact F0).
    """
    keep = mu.weights > 0
    vals = np.atleast_1d(W.value(mu.atoms[keep]))
    if not np.all(np.isfinite(vals)):
        return INF
    bar = mu.barycenter() if reference is None else np.asarray(reference, float)
    return float(np.dot(mu.weights[keep], vals) - W.value(bar))


# ---------------------------------------------------------------------------
# pushforward weights


@numba.njit(cache=True)
def _slope_pos(t):
    f = t - math.floor(t)
    return f > 0.0 and f <= 0.5


@numba.njit(cache=True)
def _pattern(x, y, etas, cs):
    code = 0
    for i in range(cs.shape[0]):
        if _slope_pos(etas[i, 0] * x + etas[i, 1] * y + cs[i]):
            code |= 1 << i
    return code


@numba.njit(cache=True)
def _exact_weights(etas, cs):
    """Exact areas of the slope-pattern regions by horizontal slicing.

    Between consecutive critical heights (kink lines meeting each other or the
    vertical edges) the kink abscissae keep their order, so interval lengths are
    affine in y and the midpoint rule is exact on every strip.
    """
    n = cs.shape[0]
    # kink lines: eta . x + c = level, level in Z/2
    nl = 0
    for i in range(n):
        s = abs(etas[i, 0]) + abs(etas[i, 1])
        nl += int(2 * s) + 3
    li = np.empty(nl, np.int64)
    lv = np.empty(nl)
    nl = 0
    for i in range(n):
        lo = cs[i] + min(0.0, etas[i, 0]) + min(0.0, etas[i, 1])
        hi = cs[i] + max(0.0, etas[i, 0]) + max(0.0, etas[i, 1])
        m = math.ceil(2.0 * lo)
        while m <= 2.0 * hi:
            li[nl] = i
            lv[nl] = 0.5 * m
            nl += 1
            m += 1
    ys = [0.0, 1.0]
    for k in range(nl):
        i = li[k]
        e1, e2 = etas[i, 0], etas[i, 1]
        if e2 != 0.0:
            for xe in (0.0, 1.0):
                y = (lv[k] - cs[i] - e1 * xe) / e2
                if 0.0 < y < 1.0:
                    ys.append(y)
    for k in range(nl):
        i = li[k]
        for q in range(k + 1, nl):
            j = li[q]
            if j == i:
                continue
            a, b = etas[i, 0], etas[i, 1]
            c, d = etas[j, 0], etas[j, 1]
            dt = a * d - b * c
            if dt == 0.0:
                continue
            r1 = lv[k] - cs[i]
            r2 = lv[q] - cs[j]
            x = (d * r1 - b * r2) / dt
            y = (a * r2 - c * r1) / dt
            if 0.0 < x < 1.0 and 0.0 < y < 1.0:
                ys.append(y)
    yarr = np.sort(np.array(ys))
    w = np.zeros(2**n)
    xs = np.empty(nl + 2)
    for s in range(yarr.shape[0] - 1):
        dy = yarr[s + 1] - yarr[s]
        if dy <= 0.0:
            continue
        ym = 0.5 * (yarr[s] + yarr[s + 1])
        cnt = 0
        xs[cnt] = 0.0
        cnt += 1
        xs[cnt] = 1.0
        cnt += 1
        for k in range(nl):
            i = li[k]
            if etas[i, 0] != 0.0:
                x = (lv[k] - cs[i] - etas[i, 1] * ym) / etas[i, 0]
                if 0.0 < x < 1.0:
                    xs[cnt] = x
                    cnt += 1
        xv = np.sort(xs[:cnt])
        for t in range(cnt - 1):
            dx = xv[t + 1] - xv[t]
            if dx <= 0.0:
                continue
            code = _pattern(0.5 * (xv[t] + xv[t + 1]), ym, etas, cs)
            w[code] += dy * dx
    return w


def _grid_weights(etas, cs, resolution):
    x = (np.arange(resolution) + 0.5) / resolution
    w = np.zeros(2 ** len(cs))
    # row by row keeps memory at O(resolution * N)
    bits = 1 << np.arange(len(cs))
    for y in x:
        t = np.outer(x, etas[:, 0]) + y * etas[:, 1] + cs
        f = np.mod(t, 1.0)
        code = (((f > 0) & (f <= 0.5)) * bits).sum(axis=1)
        w += np.bincount(code, minlength=len(w))
    return w / resolution**2


def pattern_weights(spec: LaminateSpec, resolution: int = 1024, method: str = "grid"):
    """Area of every slope pattern (indexed like ``phase_signs``)."""
    if method == "exact":
        if not np.all(spec.etas == np.round(spec.etas)):
            raise ValueError("exact weights need integer wave vectors")
        w = _exact_weights(np.ascontiguousarray(spec.etas), np.ascontiguousarray(spec.cs))
        return w / w.sum()
    if method == "grid":
        return _grid_weights(spec.etas, spec.cs, int(resolution))
    raise ValueError(f"unknown method {method!r}")


def pushforward(spec: LaminateSpec, resolution: int = 1024, method: str = "grid") -> DiscreteMeasure:
    """Pushforward of Lebesgue measure on [0,1]^2 under ∇φ.

    ``method="grid"`` samples cell midpoints of a resolution^2 grid;
    ``method="exact"`` integrates the pattern regions exactly.
    Atoms with zero area are dropped.
    """
    w = pattern_weights(spec, resolution, method)
    keep = w > 0
    return DiscreteMeasure(spec.phase_gradients()[keep], w[keep])


# ---------------------------------------------------------------------------
# sampling


class SamplingFailure(RuntimeError):
    pass


def sample_laminate(n_waves: int, F0, rng, budget: int = 64, sigma: float = 0.5,
                    eta_max: int = 2) -> LaminateSpec:
    """Draw a combined laminate whose 2^N phase gradients all lie in GL+(2).

    Wave vectors are nonzero integer vectors with entries in [-eta_max, eta_max],
    amplitudes are Gaussian with scale sigma*|F0|, shifts uniform on [0, 1).
    An invalid draw has its amplitudes halved; every draw and every halving
    uses one unit of ``budget``.
    """
    if n_waves < 1:
        raise ValueError("need at least one wave")
    F0 = np.asarray(F0, float)
    scale = sigma * np.linalg.norm(F0)
    used = 0
    while used < budget:
        etas = rng.integers(-eta_max, eta_max + 1, size=(n_waves, 2))
        zero = np.all(etas == 0, axis=1)
        while np.any(zero):
            etas[zero] = rng.integers(-eta_max, eta_max + 1, size=(int(zero.sum()), 2))
            zero = np.all(etas == 0, axis=1)
        xis = rng.normal(scale=scale, size=(n_waves, 2))
        cs = rng.uniform(0.0, 1.0, n_waves)
        spec = LaminateSpec(F0, etas, xis, cs)
        used += 1
        while used < budget:
            if spec.is_valid():
                return spec
            spec = LaminateSpec(F0, etas, spec.xis / 2, cs)
            used += 1
        if spec.is_valid():
            return spec
    raise SamplingFailure(f"no valid laminate within {budget} attempts")


# ---------------------------------------------------------------------------
# search driver


@dataclass
class SearchRecord:
    energy: str
    min_gap: float = INF
    trial: int = -1
    a: float = math.nan
    witness: str = ""
    n_evaluated: int = 0
    n_negative: int = 0

    def offer(self, gap, trial, a, spec, tol):
        self.n_evaluated += 1
        if gap < -tol:
            self.n_negative += 1
        if gap < self.min_gap or (gap == self.min_gap and trial < self.trial):
            self.min_gap, self.trial, self.a, self.witness = gap, trial, a, spec.to_text()

    def merge(self, other):
        found = [r for r in (self, other) if r.trial >= 0]
        best = min(found, key=lambda r: (r.min_gap, r.trial)) if found else self
        return SearchRecord(self.energy, best.min_gap, best.trial, best.a, best.witness,
                            self.n_evaluated + other.n_evaluated, self.n_negative + other.n_negative)


@dataclass
class SearchReport:
    records: dict
    trials: int
    n_sampling_failures: int = 0
    gaps: dict = field(default_factory=dict)  # energy spec -> per-trial gaps (nan on failure)
    config: dict = field(default_factory=dict)

    def best(self, energy_spec):
        return self.records[energy_spec]

    def to_json(self):
        return {
            "config": self.config,
            "trials": self.trials,
            "sampling_failures": self.n_sampling_failures,
            "results": {
                k: {"min_gap": r.min_gap, "trial": r.trial, "a": r.a, "witness": r.witness,
                    "evaluated": r.n_evaluated, "negative": r.n_negative}
                for k, r in self.records.items()
            },
        }


def trial_setup(trial, seed, a_list, n_list):
    """Deterministic (a, N, rng) for a trial index, independent of worker layout."""
    a = a_list[trial % len(a_list)]
    n = n_list[(trial // len(a_list)) % len(n_list)]
    rng = np.random.default_rng([seed, trial])
    return a, n, rng


def _run_trials(args):
    (energies, a_list, n_list, start, stop, seed, tol, budget, sigma, eta_max, resolution) = args
    recs = {W.spec(): SearchRecord(W.spec()) for W in energies}
    gaps = {W.spec(): np.full(stop - start, np.nan) for W in energies}
    failures = 0
    for t in range(start, stop):
        a, n, rng = trial_setup(t, seed, a_list, n_list)
        F0 = np.diag([math.sqrt(a), 1 / math.sqrt(a)])
        try:
            spec = sample_laminate(n, F0, rng, budget, sigma, eta_max)
        except SamplingFailure:
            failures += 1
            continue
        mu = (pushforward(spec, method="exact") if not resolution
              else pushforward(spec, resolution, method="grid"))
        for W in energies:
            g = jensen_gap(W, mu, reference=F0)
            gaps[W.spec()][t - start] = g
            recs[W.spec()].offer(g, t, a, spec, tol)
    return recs, gaps, failures


def _save_checkpoint(path, state):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        json.dump(state, fh)
    os.replace(tmp, path)


def search_driver(energies, a_list=range(1, 11), n_list=(4, 5, 6, 7), trials=100_000,
                  seed=0, workers=1, tol=1e-9, budget=64, sigma=0.5, eta_max=2,
                  checkpoint=None, chunk=2000, keep_gaps=True, resolution=0) -> SearchReport:
    """Random search over combined laminates for negative Jensen gaps.

    Every trial draws one laminate and evaluates its exact pushforward against
    each energy in ``energies``.  Results depend only on ``seed`` and the trial
    index.  With ``checkpoint`` set, progress is stored after every chunk and
    an interrupted run resumes from the last completed chunk.  ``resolution`` 0
    uses exact pattern weights, otherwise a midpoint grid of that size.
    """
    if isinstance(energies, Energy):
        energies = [energies]
    a_list, n_list = [float(a) for a in a_list], [int(n) for n in n_list]
    config = dict(energies=[W.spec() for W in energies], a_list=a_list, n_list=n_list,
                  trials=int(trials), seed=int(seed), tol=tol, budget=budget, sigma=sigma,
                  eta_max=eta_max, resolution=int(resolution))
    recs = {W.spec(): SearchRecord(W.spec()) for W in energies}
    gaps = {W.spec(): [] for W in energies}
    failures, done = 0, 0
    if checkpoint and os.path.exists(checkpoint):
        with open(checkpoint) as fh:
            state = json.load(fh)
        if state["config"] != config:
            raise ValueError("checkpoint belongs to a different search configuration")
        done, failures = state["done"], state["failures"]
        recs = {k: SearchRecord(**v) for k, v in state["records"].items()}
        gaps = {k: list(v) for k, v in state.get("gaps", {}).items()} or gaps
    bounds = [(s, min(s + chunk, trials)) for s in range(done, trials, chunk)]
    job = lambda b: (energies, a_list, n_list, b[0], b[1], seed, tol, budget, sigma, eta_max,
                   resolution)  # noqa: E731
    pool = ProcessPoolExecutor(workers) if workers > 1 else None
    try:
        results = pool.map(_run_trials, map(job, bounds)) if pool else map(_run_trials, map(job, bounds))
        for (lo, hi), (r, g, f) in zip(bounds, results):
            for k in recs:
                recs[k] = recs[k].merge(r[k])
                if keep_gaps:
                    gaps[k].extend(g[k].tolist())
            failures += f
            done = hi
            if checkpoint:
                _save_checkpoint(checkpoint, dict(
                    config=config, done=done, failures=failures,
                    records={k: vars(v) for k, v in recs.items()},
                    gaps=gaps if keep_gaps else {}))
    finally:
        if pool:
            pool.shutdown()
    return SearchReport(recs, int(trials), failures,
                        {k: np.array(v) for k, v in gaps.items()}, config)
