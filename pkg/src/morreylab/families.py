"""Analytic zero-gap microstructures: smooth laminates, the two-phase limit and
radial expanding/contracting deformations."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .energy import Energy, MagicFamily, registry_energies, s1_magic_plus
from .laminates import DiscreteMeasure

# ---------------------------------------------------------------------------
# smooth laminates: theta(x) = (f(x1), 0) on the periodic unit square


class InadmissibleProfile(ValueError):
    def __init__(self, x, msg):
        super().__init__(f"{msg} at x = {x!r}")
        self.x = x


@dataclass
class SmoothLaminateProfile:
    """Periodic profile f with explicit derivative, on top of F0 = diag(a1, a2)."""

    f: Callable
    df: Callable
    a1: float
    a2: float
    d2f: Callable | None = None

    def check(self, n: int = 4096, tol: float = 0.0):
        if not self.a1 >= self.a2 > 0:
            raise ValueError("need a1 >= a2 > 0")
        x = np.linspace(0.0, 1.0, n + 1)
        slack = self.df(x) - (self.a2 - self.a1)
        bad = np.nonzero(slack < -tol)[0]
        if bad.size:
            raise InadmissibleProfile(float(x[bad[0]]), "f' below a2 - a1")
        return self

    def gradient(self, x1):
        x1 = np.asarray(x1, float)
        F = np.zeros(x1.shape + (2, 2))
        F[..., 0, 0] = self.a1 + self.df(x1)
        F[..., 1, 1] = self.a2
        return F

    def scaled(self, t):
        """Homotopy member t*f."""
        d2 = None if self.d2f is None else (lambda x: t * self.d2f(x))
        return SmoothLaminateProfile(lambda x: t * self.f(x), lambda x: t * self.df(x),
                                     self.a1, self.a2, d2)


def trig_profile(coeffs_sin, coeffs_cos, a1, a2):
    """f(x) = sum_k s_k sin(2 pi k x) + c_k cos(2 pi k x), k = 1..K."""
    s = np.asarray(coeffs_sin, float)
    c = np.asarray(coeffs_cos, float)
    k = 2 * np.pi * np.arange(1, len(s) + 1)

    def f(x):
        x = np.asarray(x, float)[..., None]
        return np.sum(s * np.sin(k * x) + c * np.cos(k * x), -1)

    def df(x):
        x = np.asarray(x, float)[..., None]
        return np.sum(k * (s * np.cos(k * x) - c * np.sin(k * x)), -1)

    def d2f(x):
        x = np.asarray(x, float)[..., None]
        return -np.sum(k * k * (s * np.sin(k * x) + c * np.cos(k * x)), -1)

    prof = SmoothLaminateProfile(f, df, a1, a2, d2f)
    prof.degree = len(s)
    return prof


def random_smooth_profile(rng, a1, a2, max_degree=6, fill=0.9):
    """Random trigonometric profile with min f' = fill * (a2 - a1)."""
    if not a1 > a2 > 0:
        raise ValueError("need a1 > a2 > 0 for a nontrivial profile")
    deg = int(rng.integers(1, max_degree + 1))
    s, c = rng.normal(size=deg), rng.normal(size=deg)
    base = trig_profile(s, c, a1, a2)
    lo = float(np.min(base.df(np.linspace(0, 1, 8192, endpoint=False))))
    # lo < 0 for any nonzero trigonometric derivative (zero mean)
    scale = fill * (a2 - a1) / lo
    return trig_profile(scale * s, scale * c, a1, a2)


def smooth_laminate_energy(profile: SmoothLaminateProfile, n: int = 256,
                           energy: Energy | None = None) -> float:
    """∫_[0,1]^2 W(diag(a1 + f'(x1), a2)) dx by the periodic trapezoidal rule.

    The integrand depends on x1 only and is linear in f' for W_magic^+, so the
    rule is exact for trigonometric profiles of degree below n.
    """
    profile.check()
    W = energy or MagicFamily(1.0)
    x = np.arange(n) / n
    return float(np.mean(W.value(profile.gradient(x))))


def smooth_laminate_closed_form(a1, a2):
    return a1 / a2 + 2 * math.log(a2)


def smooth_laminate_stationarity(profile: SmoothLaminateProfile, n: int = 64, h: float = 1e-4):
    """max |Div S1| over an n x n grid, by central differences of the stress field."""
    profile.check()
    g = (np.arange(n) + 0.5) / n
    X1, X2 = np.meshgrid(g, g, indexing="ij")

    def stress(x1, x2):
        del x2  # the field depends on x1 only
        return s1_magic_plus(profile.gradient(x1))

    d1 = (stress(X1 + h, X2) - stress(X1 - h, X2)) / (2 * h)
    d2 = (stress(X1, X2 + h) - stress(X1, X2 - h)) / (2 * h)
    div = d1[..., :, 0] + d2[..., :, 1]
    return float(np.max(np.abs(div)))


def two_phase_laminate(a1, a2):
    """Rank-one two-phase limit of smooth laminates with barycenter diag(a1, a2)."""
    if not a1 >= a2 > 0:
        raise ValueError("need a1 >= a2 > 0")
    F1 = np.diag([2.0 * a1, a2])
    F2 = np.diag([a2, a2]).astype(float)
    w1 = (a1 - a2) / (2 * a1 - a2)
    w2 = a1 / (2 * a1 - a2)
    return F1, F2, w1, w2


def two_phase_measure(a1, a2) -> DiscreteMeasure:
    F1, F2, w1, w2 = two_phase_laminate(a1, a2)
    return DiscreteMeasure(np.stack([F1, F2]), np.array([w1, w2]))


# ---------------------------------------------------------------------------
# radial deformations phi(x) = v(|x|) x/|x| on B_R(0)


@dataclass
class RadialProfile:
    v: Callable
    dv: Callable
    R: float
    kind: str  # "expanding" or "contracting"

    def check(self, n: int = 2048, rel_tol: float = 1e-12):
        if self.kind not in ("expanding", "contracting"):
            raise ValueError(f"unknown radial class {self.kind!r}")
        r = np.linspace(0, self.R, n + 1)[1:]
        v, dv = self.v(r), self.dv(r)
        if abs(self.v(np.array([self.R]))[0] - self.R) > 1e-12 * self.R:
            raise ValueError("v(R) must equal R")
        tol = rel_tol * max(1.0, float(np.max(np.abs(dv))))
        ok = (dv >= v / r - tol) & (v >= 0) if self.kind == "contracting" else (v / r >= dv - tol) & (dv >= -tol)
        if not np.all(ok):
            bad = int(np.nonzero(~ok)[0][0])
            raise InadmissibleProfile(float(r[bad]), f"not {self.kind}")
        return self


def power_mixture_profile(weights, exponents, R=1.0, kind=None):
    """v(r) = R sum_k w_k (r/R)^{beta_k} with sum w_k = 1.

    All beta_k >= 1 gives a contracting profile, all beta_k in (0, 1] an expanding one.
    """
    w = np.asarray(weights, float)
    b = np.asarray(exponents, float)
    w = w / w.sum()
    if kind is None:
        kind = "contracting" if np.all(b >= 1) else "expanding"

    def v(r):
        s = np.asarray(r, float)[..., None] / R
        return R * np.sum(w * s**b, -1)

    def dv(r):
        s = np.asarray(r, float)[..., None] / R
        return np.sum(w * b * s ** (b - 1), -1)

    return RadialProfile(v, dv, R, kind)


def random_radial_profile(rng, kind, R=1.0, terms=4):
    w = rng.uniform(0.05, 1.0, terms)
    if kind == "contracting":
        b = rng.uniform(1.0, 4.0, terms)
    else:
        b = rng.uniform(0.2, 1.0, terms)
    return power_mixture_profile(w, b, R, kind)


def _burkholder_integrand(p):
    def F(r, v, dv):
        return p * dv * v ** (p - 1) / r ** (p - 2) + (2 - p) * v**p / r ** (p - 1)
    return F


def _magic_integrand(r, v, dv):
    return r * r * dv / v + 2 * r * (np.log(v) - np.log(r))


def radial_integrand(energy: str | Energy, p: float | None = None):
    """Reduced 1D integrand F(r, v, v') and its prefactor for the disc energy."""
    name = energy if isinstance(energy, str) else energy.name
    if name == "burkholder":
        if p is None:
            p = energy.p
        # the integrand is -B_p per unit of pi dr
        return _burkholder_integrand(float(p)), -math.pi
    if name == "w_magic_plus":
        return _magic_integrand, 2 * math.pi
    raise ValueError(f"no reduced radial integrand for {name!r}")


def _complex_partial(F, r, v, dv, which, h=1e-30):
    if which == "v":
        return np.imag(F(r, v + 1j * h, dv)) / h
    return np.imag(F(r, v, dv + 1j * h)) / h


def radial_el_residual(profile: RadialProfile, energy, p=None, n: int = 400,
                       r_min_frac: float = 1e-3, return_grid: bool = False):
    """Relative residual max |d/dr F_{v'} - F_v| / max(1, max |F_v|).

    Partial derivatives of the reduced integrand use complex steps; the total
    r-derivative uses a fourth-order central difference of r -> F_{v'}.
    """
    profile.check()
    F, _ = radial_integrand(energy, p)
    R = profile.R
    r = np.linspace(r_min_frac * R, R, n)
    h = 1e-3 * r_min_frac * R if r_min_frac > 0 else 1e-6 * R
    h = min(h, 1e-4 * R)

    def Fdv(s):
        return _complex_partial(F, s, profile.v(s), profile.dv(s), "dv")

    # keep the stencil inside (0, R]
    rs = np.minimum(r, R - 2 * h)
    ddr = (-Fdv(rs + 2 * h) + 8 * Fdv(rs + h) - 8 * Fdv(rs - h) + Fdv(rs - 2 * h)) / (12 * h)
    Fv = _complex_partial(F, rs, profile.v(rs), profile.dv(rs), "v")
    res = ddr - Fv
    scale = max(1.0, float(np.max(np.abs(Fv))))
    out = float(np.max(np.abs(res)) / scale)
    if return_grid:
        return out, dict(r=rs, v=profile.v(rs), dv=profile.dv(rs),
                         integrand=F(rs, profile.v(rs), profile.dv(rs)), residual=res)
    return out


def _graded_gauss(R, n_levels=40, order=20, ratio=0.5):
    """Gauss-Legendre nodes on geometrically graded panels [R r^(k+1), R r^k]."""
    x, w = np.polynomial.legendre.leggauss(order)
    nodes, wts = [], []
    hi = R
    for _ in range(n_levels):
        lo = hi * ratio
        nodes.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
        wts.append(0.5 * (hi - lo) * w)
        hi = lo
    return np.concatenate(nodes), np.concatenate(wts)


def radial_gradients(profile: RadialProfile, r):
    """Gradients in the (radial, tangential) frame; isotropy makes the frame irrelevant."""
    r = np.asarray(r, float)
    F = np.zeros(r.shape + (2, 2))
    F[..., 0, 0] = profile.dv(r)
    F[..., 1, 1] = profile.v(r) / r
    return F


def radial_energy_gap(profile: RadialProfile, energy: Energy | str = "w_magic_plus",
                      order: int = 20, levels: int = 40) -> float:
    """∫_{B_R} W(∇φ) dx - π R^2 W(I) by graded Gauss-Legendre quadrature in r.

    The panels shrink geometrically towards r = 0, which resolves the
    r log r behaviour of the integrands; the neglected disc has radius
    R 2^-levels.
    """
    profile.check()
    W = registry_energies(energy) if isinstance(energy, str) else energy
    r, w = _graded_gauss(profile.R, levels, order)
    vals = W.value(radial_gradients(profile, r))
    if not np.all(np.isfinite(vals)):
        return math.inf
    w0 = W.value(np.eye(2))
    return float(2 * math.pi * np.sum(w * r * (vals - w0)))


def radial_reduced_energy(profile: RadialProfile, energy, p=None, order=20, levels=40):
    """Disc energy from the reduced 1D integrand (cross-check for radial_energy_gap)."""
    F, pref = radial_integrand(energy, p)
    r, w = _graded_gauss(profile.R, levels, order)
    return float(pref * np.sum(w * F(r, profile.v(r), profile.dv(r))))
