"""Model ingredients: jump kernel, repulsion potential, tempering weights,
state-dependent jump rates and the derived analytic constants.

Points are numpy arrays whose last axis is the coordinate axis; a bare float
is read as a point of the real line.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

__all__ = [
    "QuadratureError",
    "JumpKernel",
    "Potential",
    "ModelParams",
    "psi",
    "psi_alpha",
    "ball_volume",
    "sphere_area",
    "psi_mass",
    "rate_c",
    "total_rate",
    "phi_alpha_total",
    "kernel_expectation",
    "radius_T",
    "delta_theta",
    "tau_theta",
    "rho_eps",
]

KERNEL_FAMILIES = ("gaussian", "laplace", "uniform_ball")
POTENTIAL_FAMILIES = ("box", "bump", "truncated_gaussian")

# tail mass / potential level below which a function is treated as zero
_TAIL = 1e-14


class QuadratureError(RuntimeError):
    """Adaptive quadrature did not reach the requested accuracy."""

    def __init__(self, message, estimate=float("nan"), error=float("nan")):
        super().__init__(f"{message} (estimate={estimate!r}, error={error!r})")
        self.estimate = estimate
        self.error = error


def _as_points(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x.reshape(1)
    return x


def _norm(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(np.square(x), axis=-1))


def ball_volume(r: float, d: int) -> float:
    return math.pi ** (d / 2) * r**d / math.gamma(d / 2 + 1)


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in ``R^d``."""
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


def psi(x):
    """Tempering weight ``1 / (1 + |x|^(d+1))``."""
    x = _as_points(x)
    d = x.shape[-1]
    return 1.0 / (1.0 + _norm(x) ** (d + 1))


def psi_alpha(x, alpha: float):
    """``1 / (1 + alpha |x|^(d+1))``; identically one at ``alpha = 0``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    x = _as_points(x)
    d = x.shape[-1]
    return 1.0 / (1.0 + alpha * _norm(x) ** (d + 1))


def psi_mass(d: int) -> float:
    """``<psi> = int psi(x) dx`` over ``R^d``."""
    # radial integral of r^(d-1) / (1 + r^(d+1)) = pi / ((d+1) sin(pi d / (d+1)))
    return sphere_area(d) * math.pi / ((d + 1) * math.sin(math.pi * d / (d + 1)))


@dataclass(frozen=True)
class JumpKernel:
    """Isotropic probability density ``a`` of a jump displacement.

    ``scale`` is the standard deviation per coordinate (gaussian), the decay
    length (laplace, density proportional to ``exp(-|x|/scale)``) or the
    radius (uniform_ball).
    """

    family: str = "gaussian"
    scale: float = 1.0
    d: int = 1

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if not self.scale > 0:
            raise ValueError(f"kernel scale must be positive, got {self.scale}")
        if self.d not in (1, 2):
            raise ValueError(f"only d in (1, 2) is supported, got {self.d}")

    @property
    def norm_const(self) -> float:
        s, d = self.scale, self.d
        if self.family == "gaussian":
            return (2 * math.pi * s * s) ** (d / 2)
        if self.family == "laplace":
            return sphere_area(d) * s**d * math.gamma(d)
        return ball_volume(s, d)

    @property
    def sup(self) -> float:
        """``sup a`` (attained at the origin for every family)."""
        return 1.0 / self.norm_const

    def radial(self, r):
        """Density as a function of ``|x|``."""
        r = np.asarray(r, dtype=float)
        s = self.scale
        if self.family == "gaussian":
            out = np.exp(-0.5 * (r / s) ** 2)
        elif self.family == "laplace":
            out = np.exp(-r / s)
        else:
            out = (r <= s).astype(float)
        return out / self.norm_const

    def __call__(self, x):
        return self.radial(_norm(_as_points(x)))

    @property
    def support_radius(self) -> float:
        """Radius outside of which the kernel carries less than ~1e-14 mass."""
        s = self.scale
        if self.family == "gaussian":
            return 8.6 * s
        if self.family == "laplace":
            return 40.0 * s
        return s

    @property
    def radial_breaks(self) -> tuple[float, ...]:
        return (self.scale,) if self.family == "uniform_ball" else ()

    def moment(self, l: int) -> float:
        """``m_l = int |x|^l a(x) dx`` in closed form."""
        s, d = self.scale, self.d
        if self.family == "gaussian":
            return s**l * 2 ** (l / 2) * math.gamma((d + l) / 2) / math.gamma(d / 2)
        if self.family == "laplace":
            return s**l * math.gamma(d + l) / math.gamma(d)
        return d * s**l / (d + l)

    def moments(self) -> np.ndarray:
        return np.array([self.moment(l) for l in range(self.d + 2)])

    def char_function(self, k):
        """Characteristic function ``E exp(i k.xi)`` (real, the law is symmetric)."""
        k = np.asarray(k, dtype=float)
        kk = np.abs(k) if self.d == 1 and k.ndim <= 1 else _norm(k)
        s, d = self.scale, self.d
        if self.family == "gaussian":
            return np.exp(-0.5 * (s * kk) ** 2)
        if self.family == "laplace":
            return (1.0 + (s * kk) ** 2) ** (-(d + 1) / 2)
        z = s * kk
        with np.errstate(invalid="ignore", divide="ignore"):
            if d == 1:
                out = np.sin(z) / z
            else:
                out = 2 * special.j1(z) / z
        return np.where(z == 0, 1.0, out)

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Exact draws of the displacement, shape ``(size, d)``."""
        d, s = self.d, self.scale
        if self.family == "gaussian":
            return rng.normal(0.0, s, size=(size, d))
        if d == 1:
            if self.family == "laplace":
                return rng.laplace(0.0, s, size=(size, 1))
            return rng.uniform(-s, s, size=(size, 1))
        direction = rng.normal(size=(size, d))
        direction /= _norm(direction)[:, None]
        if self.family == "laplace":
            radius = rng.gamma(d, s, size=size)
        else:
            radius = s * rng.uniform(size=size) ** (1.0 / d)
        return direction * radius[:, None]


@dataclass(frozen=True)
class Potential:
    """Bounded nonnegative repulsion ``phi`` with compact (or certified) support.

    ``height`` is ``sup phi``; ``range`` is the support radius (box, bump) or
    the standard deviation (truncated_gaussian, cut where it drops below
    1e-14).
    """

    family: str = "box"
    height: float = 0.0
    range: float = 1.0
    d: int = 1

    def __post_init__(self):
        if self.family not in POTENTIAL_FAMILIES:
            raise ValueError(f"unknown potential family {self.family!r}")
        if self.height < 0 or not math.isfinite(self.height):
            raise ValueError(f"potential height must be finite and >= 0, got {self.height}")
        if not self.range > 0:
            raise ValueError(f"potential range must be positive, got {self.range}")

    @property
    def support_radius(self) -> float:
        if self.height == 0:
            return 0.0
        if self.family == "truncated_gaussian":
            if self.height <= _TAIL:
                return 0.0
            return self.range * math.sqrt(2 * math.log(self.height / _TAIL))
        return self.range

    def radial(self, r):
        r = np.asarray(r, dtype=float)
        h, rho = self.height, self.range
        if h == 0:
            return np.zeros_like(r)
        if self.family == "box":
            return np.where(r <= rho, h, 0.0)
        if self.family == "bump":
            u = np.minimum(r / rho, 1.0)
            with np.errstate(divide="ignore", over="ignore"):
                val = h * np.exp(1.0 - 1.0 / (1.0 - u * u))
            return np.where(r < rho, val, 0.0)
        return np.where(r <= self.support_radius, h * np.exp(-0.5 * (r / rho) ** 2), 0.0)

    def __call__(self, x):
        return self.radial(_norm(_as_points(x)))

    @property
    def radial_breaks(self) -> tuple[float, ...]:
        return (self.range,) if self.family == "box" and self.height > 0 else ()

    @property
    def mass(self) -> float:
        """``<phi> = int phi(x) dx``."""
        if self.height == 0:
            return 0.0
        if self.family == "box":
            return self.height * ball_volume(self.range, self.d)
        R = self.support_radius
        val, _ = integrate.quad(lambda r: float(self.radial(r)) * r ** (self.d - 1),
                                0.0, R, epsabs=1e-14, epsrel=1e-12, limit=200)
        return sphere_area(self.d) * val

    @property
    def minus_exp_mass(self) -> float:
        """``int (1 - exp(-phi))``; never larger than ``<phi>``."""
        if self.height == 0:
            return 0.0
        R = self.support_radius
        f = lambda r: -math.expm1(-float(self.radial(r))) * r ** (self.d - 1)
        val, _ = integrate.quad(f, 0.0, R, epsabs=1e-14, epsrel=1e-12, limit=200,
                                points=self.radial_breaks or None)
        return sphere_area(self.d) * val


@dataclass(frozen=True)
class ModelParams:
    """Jump kernel, potential and approximation parameter ``alpha``.

    ``c_a`` and ``C_a`` are the kernel-moment constants entering the
    generator-image and path-regularity bounds.
    """

    kernel: JumpKernel = field(default_factory=JumpKernel)
    potential: Potential = field(default_factory=Potential)
    alpha: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.kernel.d != self.potential.d:
            raise ValueError("kernel and potential dimensions differ")

    @property
    def d(self) -> int:
        return self.kernel.d

    @property
    def phi_mass(self) -> float:
        return self.potential.mass

    @property
    def c_a(self) -> float:
        m = self.kernel.moments()
        d = self.d
        return 2.0 + sum(math.comb(d + 1, l) * m[l] for l in range(d + 2))

    @property
    def C_a(self) -> float:
        m = self.kernel.moments()
        d = self.d
        return m[1] + sum(math.comb(d + 1, l) * m[l] for l in range(1, d + 2))

    @property
    def is_free(self) -> bool:
        return self.potential.height == 0

    def with_alpha(self, alpha: float) -> "ModelParams":
        return ModelParams(self.kernel, self.potential, alpha)

    def digest_dict(self) -> dict:
        return {
            "kernel": {"family": self.kernel.family, "scale": self.kernel.scale},
            "potential": {"family": self.potential.family, "height": self.potential.height,
                          "range": self.potential.range},
            "d": self.d,
            "alpha": self.alpha,
        }


def _points_of(gamma) -> np.ndarray:
    pts = getattr(gamma, "points", gamma)
    pts = np.asarray(pts, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(-1, 1)
    return pts


def _others(points: np.ndarray, x: np.ndarray) -> np.ndarray:
    """``gamma minus one copy of x``; raises if ``x`` is not in ``gamma``."""
    hits = np.flatnonzero(np.all(points == x, axis=-1))
    if hits.size == 0:
        raise ValueError(f"point {x.tolist()} is not in the configuration")
    return np.delete(points, hits[0], axis=0)


def _interaction(others: np.ndarray, y: np.ndarray, params: ModelParams) -> np.ndarray:
    """``sum_{z in others} phi(z - y)`` for targets ``y`` of shape (..., d)."""
    if params.is_free or others.shape[0] == 0:
        return np.zeros(y.shape[:-1])
    diff = others[..., :, :] - y[..., None, :]
    return params.potential(diff).sum(axis=-1)


def rate_c(x, y, gamma, params: ModelParams):
    """Jump rate density ``psi_alpha(x) a(x-y) exp(-sum_{z != x} phi(z-y))``.

    ``y`` may hold several targets (shape (..., d)); ``x`` must be a point of
    ``gamma``.
    """
    pts = _points_of(gamma)
    x = _as_points(x)
    y = _as_points(y)
    if y.shape[-1] != pts.shape[1]:
        y = y.reshape(-1, pts.shape[1])
    others = _others(pts, x)
    weight = psi_alpha(x, params.alpha) * params.kernel(x - y)
    return weight * np.exp(-_interaction(others, y, params))


def _quad_checked(f, lo, hi, points, epsabs, epsrel):
    pts = sorted({p for p in points if lo < p < hi})
    with warnings.catch_warnings():
        warnings.simplefilter("error", integrate.IntegrationWarning)
        try:
            val, err = integrate.quad(f, lo, hi, points=pts or None, limit=400,
                                      epsabs=epsabs, epsrel=epsrel)
        except integrate.IntegrationWarning as exc:
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err = integrate.quad(f, lo, hi, points=pts or None, limit=400,
                                      epsabs=epsabs, epsrel=epsrel)
            if err > 100 * max(epsabs, epsrel * abs(val)):
                raise QuadratureError(str(exc).splitlines()[0], val, err) from None
    return val, err


def kernel_expectation(params: ModelParams, x, f: Callable[[np.ndarray], np.ndarray],
                       extra_breaks=(), epsabs=1e-11, epsrel=1e-10, discs=()) -> float:
    """``int a(xi) f(x + xi) dxi`` by adaptive quadrature.

    ``f`` receives an array of target points of shape (k, d) and returns k
    values.  ``extra_breaks`` lists target points (d=1) or radii around ``x``
    (d=2) where ``f`` has kinks or jumps.  In d=2, ``discs`` lists ``(center, radius)``
    pairs whose boundaries ``f`` jumps across; the crossing angles of each
    integration circle are passed to the angular rule.
    """
    kern = params.kernel
    x = _as_points(x)
    R = kern.support_radius
    if params.d == 1:
        x0 = float(x[0])
        breaks = [0.0, *kern.radial_breaks, *(-b for b in kern.radial_breaks)]
        breaks += [float(b) - x0 for b in extra_breaks]
        g = lambda s: float(kern.radial(abs(s)) * f(np.array([[x0 + s]]))[0])
        val, _ = _quad_checked(g, -R, R, breaks, epsabs, epsrel)
        return val

    def inner(r):
        h = lambda t: float(f(np.array([[x[0] + r * math.cos(t), x[1] + r * math.sin(t)]]))[0])
        v, _ = _quad_checked(h, 0.0, 2 * math.pi, _circle_crossings(x, r, discs), epsabs, epsrel)
        return v * r * float(kern.radial(r))

    breaks = list(kern.radial_breaks) + [float(b) for b in extra_breaks]
    val, _ = _quad_checked(inner, 0.0, R, breaks, epsabs, epsrel)
    return val


def _circle_crossings(x: np.ndarray, r: float, discs) -> list[float]:
    """Angles in [0, 2 pi) where the circle of radius r about x meets a disc boundary."""
    out = []
    for z, rho in discs:
        dx, dy = float(z[0] - x[0]), float(z[1] - x[1])
        D = math.hypot(dx, dy)
        if D == 0 or not abs(r - D) < rho < r + D:
            continue
        base = math.atan2(dy, dx)
        half = math.acos(min(1.0, max(-1.0, (r * r + D * D - rho * rho) / (2 * r * D))))
        out += [(base + half) % (2 * math.pi), (base - half) % (2 * math.pi)]
    return out


def _potential_discs(others: np.ndarray, params: ModelParams) -> list:
    if params.d != 2 or params.is_free or not params.potential.radial_breaks:
        return []
    rho = params.potential.radial_breaks[0]
    return [(z, rho) for z in others]


def _potential_breaks(others: np.ndarray, params: ModelParams, x: np.ndarray) -> list[float]:
    if params.is_free or others.shape[0] == 0:
        return []
    rng = params.potential.radial_breaks
    if not rng:
        return []
    rho = rng[0]
    if params.d == 1:
        return [float(z) + s * rho for z in others[:, 0] for s in (-1.0, 1.0)]
    dist = _norm(others - x)
    return [float(r) for dz in dist for r in (dz - rho, dz + rho) if r > 0]


def total_rate(x, gamma, params: ModelParams, method: str = "quadrature") -> float:
    """``int rate_c(x, y, gamma) dy``: the total jump rate of the particle at x."""
    pts = _points_of(gamma)
    x = _as_points(x)
    others = _others(pts, x)
    pa = float(psi_alpha(x, params.alpha))
    if method == "closed_form_free":
        if not (params.is_free or others.shape[0] == 0):
            raise ValueError("closed_form_free needs a free model or a singleton")
        return pa
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    if params.is_free or others.shape[0] == 0:
        return pa
    f = lambda y: np.exp(-_interaction(others, y, params))
    return pa * kernel_expectation(params, x, f, _potential_breaks(others, params, x),
                                   discs=_potential_discs(others, params))


def phi_alpha_total(gamma, params: ModelParams, method: str = "quadrature") -> float:
    """Total jump intensity of the configuration (sum of :func:`total_rate`)."""
    pts = _points_of(gamma)
    total = float(sum(total_rate(p, pts, params, method) for p in pts))
    slack = 1e-9 * max(1.0, total)
    if total > pts.shape[0] + slack:
        raise AssertionError(f"total intensity {total} exceeds |gamma| = {pts.shape[0]}")
    if params.alpha > 0 and pts.shape[0]:
        cap = float(psi(pts).sum()) / params.alpha
        if total > cap + slack:
            raise AssertionError(f"total intensity {total} exceeds Psi/alpha = {cap}")
    return total


def radius_T(theta2: float, theta1: float, phi_mass: float) -> float:
    """``(theta2 - theta1)/2 * exp(-<phi> e^theta2)``."""
    if not theta2 > theta1:
        raise ValueError(f"need theta2 > theta1, got {theta2} <= {theta1}")
    return 0.5 * (theta2 - theta1) * math.exp(-phi_mass * math.exp(theta2))


def delta_theta(theta: float, phi_mass: float, tol: float = 1e-12) -> float:
    """Unique root of ``delta * exp(delta) = exp(-theta) / <phi>``.

    Returns ``inf`` for ``<phi> = 0`` (free case, unbounded radius).
    """
    if phi_mass == 0:
        return math.inf
    if phi_mass < 0:
        raise ValueError(f"<phi> must be positive, got {phi_mass}")
    rhs = math.exp(-theta) / phi_mass
    g = lambda t: t * math.exp(t) - rhs
    t = math.log1p(rhs)
    lo, hi = 0.0, max(1.0, rhs)
    for _ in range(100):
        gt = g(t)
        if abs(gt) <= tol * max(1.0, rhs):
            return t
        if gt > 0:
            hi = min(hi, t)
        else:
            lo = max(lo, t)
        step = gt / ((1.0 + t) * math.exp(t))
        t_new = t - step
        if not lo < t_new < hi:
            t_new = 0.5 * (lo + hi)
        t = t_new
    if abs(g(t)) > 1e3 * tol * max(1.0, rhs):
        raise ArithmeticError(f"delta_theta did not converge for theta={theta}, <phi>={phi_mass}")
    return t


def tau_theta(theta: float, phi_mass: float) -> float:
    """``sup_{theta' > theta} T(theta', theta) = (delta/2) exp(-1/delta)``."""
    d = delta_theta(theta, phi_mass)
    if math.isinf(d):
        return math.inf
    return 0.5 * d * math.exp(-1.0 / d)


def rho_eps(eps: float, c_a: float) -> float:
    """Time horizon ``(log(1 + e - eps) - 1) / c_a`` of the type-growth bound."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    return (math.log(1.0 + math.e - eps) - 1.0) / c_a
