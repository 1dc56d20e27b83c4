"""Planar isotropic energy densities and 2x2 matrix machinery.

All functions accept a single 2x2 matrix or a stack of shape ``(..., 2, 2)``.
Energies defined only on GL+(2) return ``INF`` outside of it; ``INF`` is the
IEEE infinity, so it survives sums and comparisons and is never confused with
a large finite energy.

Matrices are flattened in row-major order ``(F11, F12, F21, F22)`` whenever a
4-vector or 4x4 tangent is needed.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

INF = math.inf

# <H, J H> = 2 det H in row-major vec ordering
_DET_HESSIAN = np.array(
    [[0.0, 0.0, 0.0, 1.0],
     [0.0, 0.0, -1.0, 0.0],
     [0.0, -1.0, 0.0, 0.0],
     [1.0, 0.0, 0.0, 0.0]]
)

# below this 𝕂-1 a matrix is treated as exactly conformal
CONFORMAL_EPS = 1e-14


def as_mat(F) -> np.ndarray:
    F = np.asarray(F, dtype=float)
    if F.shape[-2:] != (2, 2):
        raise ValueError(f"expected trailing shape (2, 2), got {F.shape}")
    return F


def det(F):
    F = as_mat(F)
    return F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]


def cof(F):
    """Planar cofactor: Cof [[a, b], [c, d]] = [[d, -c], [-b, a]]."""
    F = as_mat(F)
    out = np.empty_like(F)
    out[..., 0, 0] = F[..., 1, 1]
    out[..., 0, 1] = -F[..., 1, 0]
    out[..., 1, 0] = -F[..., 0, 1]
    out[..., 1, 1] = F[..., 0, 0]
    return out


def frob2(F):
    F = as_mat(F)
    return np.sum(F * F, axis=(-2, -1))


def inv_t(F):
    """F^{-T} = Cof F / det F."""
    return cof(F) / det(F)[..., None, None]


def rotation(theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    return np.stack([np.stack([c, -s], -1), np.stack([s, c], -1)], -2)


def outer(xi, eta) -> np.ndarray:
    return np.asarray(xi, float)[..., :, None] * np.asarray(eta, float)[..., None, :]


def _sv_parts(F):
    """Return (lambda_max, lambda_min, lambda_max - lambda_min, det) without checks.

    Uses the planar identities lambda_1 +- lambda_2 = hypot(...), which are
    exact for diagonal input and free of the cancellation in sqrt(n^2 - 4 d^2).
    """
    a, b = F[..., 0, 0], F[..., 0, 1]
    c, d = F[..., 1, 0], F[..., 1, 1]
    dt = a * d - b * c
    p = np.hypot(a + d, b - c)
    q = np.hypot(a - d, b + c)
    # for det < 0 the roles of the two hypot terms swap
    s = np.where(dt >= 0, p, q)
    diff = np.where(dt >= 0, q, p)
    lmax = 0.5 * (s + diff)
    with np.errstate(divide="ignore", invalid="ignore"):
        lmin = np.where(lmax > 0, np.abs(dt) / np.where(lmax > 0, lmax, 1.0), 0.0)
    return lmax, lmin, diff, dt


@dataclass(frozen=True)
class SingularPair:
    lambda_max: float
    lambda_min: float
    det_sign: int
    degenerate: bool = False

    @property
    def signed_min(self) -> float:
        """lambda_hat_2 = sign(det F) * lambda_min."""
        return self.det_sign * self.lambda_min


def singular_values(F) -> SingularPair:
    """Ordered singular values of a single 2x2 matrix, closed form."""
    F = as_mat(F)
    if F.shape != (2, 2):
        raise ValueError("singular_values expects a single 2x2 matrix")
    if not np.all(np.isfinite(F)):
        raise ValueError("matrix has non-finite entries")
    lmax, lmin, _, dt = _sv_parts(F)
    sign = int(np.sign(dt))
    return SingularPair(float(lmax), float(lmin), sign, degenerate=(dt == 0))


def singular_values_array(F):
    """Vectorised (lambda_max, lambda_min, det) for stacks of matrices."""
    F = as_mat(F)
    lmax, lmin, _, dt = _sv_parts(F)
    return lmax, lmin, dt


def _require_gl_plus(F):
    if np.any(~np.isfinite(F)):
        raise ValueError("matrix has non-finite entries")
    if np.any(det(F) <= 0):
        raise ValueError("det F must be positive")


def distortion_nonlinear(F):
    """Outer distortion ||F||^2 / (2 det F) >= 1."""
    F = as_mat(F)
    _require_gl_plus(F)
    return frob2(F) / (2.0 * det(F))


def distortion_nonlinear_minus_one(F):
    """𝕂(F) - 1 computed without cancellation: ((a-d)^2 + (b+c)^2) / (2 det F)."""
    F = as_mat(F)
    a, b = F[..., 0, 0], F[..., 0, 1]
    c, d = F[..., 1, 0], F[..., 1, 1]
    return ((a - d) ** 2 + (b + c) ** 2) / (2.0 * det(F))


def distortion_linear(F):
    """Dilatation K = lambda_max / lambda_min >= 1."""
    F = as_mat(F)
    _require_gl_plus(F)
    lmax, lmin, _, _ = _sv_parts(F)
    return lmax / lmin


def _masked(fn, F):
    """Evaluate fn on the GL+ part of a stack, INF elsewhere."""
    F = as_mat(F)
    dt = det(F)
    ok = dt > 0
    out = np.full(dt.shape, INF)
    if np.any(ok):
        out[ok] = fn(F[ok])
    return out if out.ndim else float(out)


def w_magic_plus(F):
    """lambda_max/lambda_min + 2 log lambda_min on GL+(2), INF elsewhere."""
    def _w(G):
        lmax, lmin, _, _ = _sv_parts(G)
        return lmax / lmin + 2.0 * np.log(lmin)
    return _masked(_w, F)


def w_magic_plus_kform(F):
    """Same energy written through the outer distortion 𝕂."""
    def _w(G):
        km1 = distortion_nonlinear_minus_one(G)
        k = 1.0 + km1
        root = np.sqrt(km1 * (k + 1.0))
        return k + root - np.log1p(km1 + root) + np.log(det(G))
    return _masked(_w, F)


def w_c(F, c):
    """Weakened energy K - log K + c log det F (equals W_magic^+ at c = 1)."""
    if c <= 0:
        raise ValueError("c must be positive")
    def _w(G):
        lmax, lmin, diff, dt = _sv_parts(G)
        K = lmax / lmin
        return K - np.log1p(diff / lmin) + c * np.log(dt)
    return _masked(_w, F)


def _magic_stress(F, c):
    """First Piola-Kirchhoff stress of K - log K + c log det (GL+ only, no checks)."""
    lmax, lmin, _, dt = _sv_parts(F)
    K = lmax / lmin
    Fit = cof(F) / dt[..., None, None]
    coef_f = (2.0 * K / ((K + 1.0) * dt))[..., None, None]
    coef_it = ((K * K + 1.0 - c * (K + 1.0)) / (K + 1.0))[..., None, None]
    return coef_f * F - coef_it * Fit


def s1_magic_plus(F):
    """(2K/((K+1) det F)) F - (K(K-1)/(K+1)) F^{-T}; finite at K = 1."""
    F = as_mat(F)
    _require_gl_plus(F)
    return _magic_stress(F, 1.0)


def vec(F):
    F = np.asarray(F, float)
    return F.reshape(F.shape[:-2] + (4,))


def unvec(v):
    v = np.asarray(v, float)
    return v.reshape(v.shape[:-1] + (2, 2))


# ---------------------------------------------------------------------------
# energy objects


@dataclass
class Energy:
    """Base class: subclasses implement ``_value`` and optionally closed forms."""

    name: str
    params: dict = field(default_factory=dict)
    gl_plus_only: bool = False
    in_m_star: bool = False
    closed_form_tangent: bool = False

    def __call__(self, F):
        return self.value(F)

    def value(self, F):
        F = as_mat(F)
        if self.gl_plus_only:
            return _masked(self._value, F)
        out = self._value(F)
        return out if np.ndim(out) else float(out)

    def _value(self, F):  # pragma: no cover - abstract
        raise NotImplementedError

    def spec(self) -> str:
        if not self.params:
            return self.name
        inner = ",".join(f"{k}:{v!r}" for k, v in self.params.items())
        return f"{self.name}:{{{inner}}}"

    # derivatives -----------------------------------------------------------

    def stress(self, F):
        return self._numeric_stress(as_mat(F))

    def tangent(self, F):
        """4x4 second derivative in row-major vec coordinates."""
        return self._numeric_tangent(as_mat(F))

    def lh(self, F, H):
        """D^2 W(F).(H, H) from the tangent."""
        T = self.tangent(F)
        h = vec(H)
        return np.einsum("...i,...ij,...j->...", h, T, h)

    def _numeric_stress(self, F):
        h = 1e-6 * np.maximum(1.0, np.sqrt(frob2(F)))[..., None, None]
        S = np.empty_like(F)
        for i in range(2):
            for j in range(2):
                E = np.zeros((2, 2))
                E[i, j] = 1.0
                S[..., i, j] = (self.value(F + h * E) - self.value(F - h * E)) / (2 * h[..., 0, 0])
        return S

    def _numeric_tangent(self, F):
        h = 1e-5 * np.maximum(1.0, np.sqrt(frob2(F)))
        T = np.empty(F.shape[:-2] + (4, 4))
        for k in range(4):
            E = np.zeros(4)
            E[k] = 1.0
            dF = unvec(E) * h[..., None, None]
            T[..., :, k] = vec(self.stress(F + dF) - self.stress(F - dF)) / (2 * h[..., None])
        return 0.5 * (T + np.swapaxes(T, -1, -2))


class MagicFamily(Energy):
    """K - log K + c log det F.  c = 1 is W_magic^+, c > 1 the weakened W_c."""

    def __init__(self, c: float = 1.0, name: str | None = None):
        if not c > 0:
            raise ValueError("c must be positive")
        if name is None:
            name = "w_magic_plus" if c == 1.0 else "w_c"
        params = {} if name == "w_magic_plus" else {"c": float(c)}
        super().__init__(name=name, params=params, gl_plus_only=True,
                         in_m_star=True, closed_form_tangent=True)
        self.c = float(c)

    def _value(self, F):
        if self.c == 1.0:
            lmax, lmin, _, _ = _sv_parts(F)
            return lmax / lmin + 2.0 * np.log(lmin)
        lmax, lmin, diff, dt = _sv_parts(F)
        return lmax / lmin - np.log1p(diff / lmin) + self.c * np.log(dt)

    def stress(self, F):
        F = as_mat(F)
        S = np.full(F.shape, np.nan)
        ok = det(F) > 0
        if np.any(ok):
            S[ok] = _magic_stress(F[ok], self.c)
        return S

    def tangent(self, F):
        F = as_mat(F)
        T = np.full(F.shape[:-2] + (4, 4), np.nan)
        ok = det(F) > 0
        if np.any(ok):
            T[ok] = self._tangent(F[ok])
        return T

    def _tangent(self, F):
        lmax, lmin, diff, dt = _sv_parts(F)
        K = lmax / lmin
        km1 = diff / lmin
        kk = frob2(F) / (2 * dt)  # outer distortion
        f = vec(F)
        cf = vec(cof(F))
        n = 2 * dt * kk
        d = dt[..., None, None]
        dk = (f - kk[..., None] * cf) / dt[..., None]
        psi1 = 2 * K / (K + 1)
        conformal = distortion_nonlinear_minus_one(F) <= CONFORMAL_EPS
        with np.errstate(divide="ignore", invalid="ignore"):
            psi2 = np.where(conformal, 0.0, 4 * K * K / (km1 * (K + 1) ** 3))
        eye = np.eye(4)
        ff_c = f[..., :, None] * cf[..., None, :]
        cc = cf[..., :, None] * cf[..., None, :]
        d2k = (eye / d - (ff_c + np.swapaxes(ff_c, -1, -2)) / d**2
               + n[..., None, None] * cc / d**3 - n[..., None, None] * _DET_HESSIAN / (2 * d**2))
        d2logdet = _DET_HESSIAN / d - cc / d**2
        return (psi2[..., None, None] * dk[..., :, None] * dk[..., None, :]
                + psi1[..., None, None] * d2k + self.c * d2logdet)


class InvariantEnergy(Energy):
    """W(F) = g(||F||^2, det F) on all of R^{2x2} with closed-form derivatives.

    ``g`` returns (value, g_n, g_d, g_nn, g_nd, g_dd).
    """

    def __init__(self, name, params, g):
        super().__init__(name=name, params=params, gl_plus_only=False,
                         closed_form_tangent=True)
        self._g = g

    def _value(self, F):
        return self._g(frob2(F), det(F))[0]

    def stress(self, F):
        F = as_mat(F)
        _, gn, gd, *_ = self._g(frob2(F), det(F))
        return 2 * gn[..., None, None] * F + gd[..., None, None] * cof(F)

    def tangent(self, F):
        F = as_mat(F)
        _, gn, gd, gnn, gnd, gdd = self._g(frob2(F), det(F))
        f2 = 2 * vec(F)
        cf = vec(cof(F))
        fc = f2[..., :, None] * cf[..., None, :]
        ex = lambda a: np.asarray(a)[..., None, None]  # noqa: E731
        return (ex(gnn) * f2[..., :, None] * f2[..., None, :] + 2 * ex(gn) * np.eye(4)
                + ex(gnd) * (fc + np.swapaxes(fc, -1, -2))
                + ex(gdd) * cf[..., :, None] * cf[..., None, :] + ex(gd) * _DET_HESSIAN)


def _dm_g(gamma):
    def g(n, d):
        z = np.zeros_like(n)
        return (n * (n - gamma * d), 2 * n - gamma * d, -gamma * n,
                2 + z, -gamma + z, z)
    return g


def _dm_alpha_g(gamma, alpha):
    # ||F||^{2 alpha} (||F||^2 - gamma det F) = n^alpha (n - gamma d)
    a = alpha

    def g(n, d):
        na = n ** a
        val = na * (n - gamma * d)
        gn = (a + 1) * na - a * gamma * d * n ** (a - 1)
        gd = -gamma * na
        gnn = (a + 1) * a * n ** (a - 1) - a * (a - 1) * gamma * d * n ** (a - 2)
        gnd = -a * gamma * n ** (a - 1)
        return val, gn, gd, gnn, gnd, np.zeros_like(n)
    return g


def _det_power(d, q):
    """(det F)^q: ordinary power for integer q, |det F|^q otherwise."""
    if float(q).is_integer():
        qi = int(q)
        return d ** qi, qi * d ** (qi - 1) if qi >= 1 else 0 * d, \
            qi * (qi - 1) * d ** (qi - 2) if qi >= 2 else 0 * d
    s = np.sign(d)
    ad = np.abs(d)
    return ad ** q, q * s * ad ** (q - 1), q * (q - 1) * ad ** (q - 2)


def _ball_g(gamma, alpha):
    q = 2 * alpha

    def g(n, d):
        p, p1, p2 = _det_power(d, q)
        val = n ** q - 2 ** (q - 1) - gamma * p
        gn = q * n ** (q - 1)
        gnn = q * (q - 1) * n ** (q - 2) if q != 1 else np.zeros_like(n)
        return val, gn, -gamma * p1, gnn, np.zeros_like(n), -gamma * p2
    return g


def _quadratic_g(n, d):
    z = np.zeros_like(n)
    return n, 1 + z, z, z, z, z


class Burkholder(Energy):
    """B_p(F) = -[p/2 det F + (1 - p/2) |F|_op^2] |F|_op^{p-2}, p >= 2."""

    def __init__(self, p: float):
        if not p >= 2:
            raise ValueError("Burkholder exponent requires p >= 2")
        super().__init__(name="burkholder", params={"p": float(p)})
        self.p = float(p)

    def _value(self, F):
        lmax, _, _, dt = _sv_parts(F)
        p = self.p
        return -(0.5 * p * dt + (1 - 0.5 * p) * lmax**2) * lmax ** (p - 2)


# ---------------------------------------------------------------------------
# registry

def _check(cond, msg):
    if not cond:
        raise ValueError(msg)


def _make_w_c(c=1.1):
    _check(c > 0, "w_c requires c > 0")
    return MagicFamily(c=float(c), name="w_c")


def _make_dm(gamma=2.0, alpha=1.0):
    _check(np.isfinite(gamma), "dm requires a real gamma")
    _check(alpha > 0, "dm requires alpha > 0")
    params = {"gamma": float(gamma)}
    if alpha == 1:
        return InvariantEnergy("dm", params, _dm_g(float(gamma)))
    params["alpha"] = float(alpha)
    return InvariantEnergy("dm", params, _dm_alpha_g(float(gamma), float(alpha)))


def _make_ball(gamma=1.0, alpha=1.0):
    _check(alpha >= 0.25, "ball requires alpha >= 1/4")
    _check(gamma >= 0, "ball requires gamma >= 0")
    return InvariantEnergy("ball", {"gamma": float(gamma), "alpha": float(alpha)},
                           _ball_g(float(gamma), float(alpha)))


REGISTRY = {
    "w_magic_plus": lambda: MagicFamily(1.0),
    "w_c": _make_w_c,
    "dm": _make_dm,
    "ball": _make_ball,
    "burkholder": lambda p=2.0: Burkholder(p),
    "quadratic": lambda: InvariantEnergy("quadratic", {}, _quadratic_g),
}


def registry_energies(name: str, **params) -> Energy:
    """Build a registered energy by name; unknown names or bad parameters raise."""
    if name not in REGISTRY:
        raise ValueError(f"unknown energy {name!r}; known: {', '.join(sorted(REGISTRY))}")
    try:
        return REGISTRY[name](**params)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {name}: {exc}") from None


_SPEC_RE = re.compile(r"^\s*([A-Za-z_][\w]*)\s*(?::\s*\{(.*)\})?\s*$")


def parse_energy(spec: str) -> Energy:
    """Parse ``name`` or ``name:{key:value,...}``, e.g. ``w_c:{c:1.1}``."""
    m = _SPEC_RE.match(spec)
    if not m:
        raise ValueError(f"cannot parse energy spec {spec!r}")
    name, body = m.group(1), m.group(2)
    params = {}
    if body and body.strip():
        for item in body.split(","):
            key, sep, val = item.partition(":")
            if not sep:
                raise ValueError(f"bad parameter {item!r} in {spec!r}")
            params[key.strip()] = float(val)
    return registry_energies(name, **params)
