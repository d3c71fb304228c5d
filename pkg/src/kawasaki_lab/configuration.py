"""Finite configurations, test functions on them, the generator ``L`` applied
to test functions, the bounded-Lipschitz metric and the simplicity functional.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import optimize

from .model import (ModelParams, _interaction, _potential_breaks, _potential_discs, kernel_expectation,
                    psi, psi_alpha)

__all__ = [
    "Configuration",
    "Theta",
    "TestFunction",
    "PoissonWindow",
    "make_poisson_window",
    "eval_test",
    "apply_generator",
    "bl_metric",
    "simplicity_H",
    "MAX_CARDINALITY",
    "LP_SIZE_CAP",
]

MAX_CARDINALITY = 10**7
LP_SIZE_CAP = 400
MAX_M = 4


class Configuration:
    """A finite multiset of points in ``R^d`` with its tempered weight ``Psi``."""

    __slots__ = ("points", "psi_total")

    def __init__(self, points, d: int | None = None):
        pts = np.array(points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, d or 1) if pts.size else np.zeros((0, d or 1))
        if pts.ndim != 2:
            raise ValueError(f"points must be a (n, d) array, got shape {pts.shape}")
        if d is not None and pts.shape[1] != d:
            raise ValueError(f"expected dimension {d}, got {pts.shape[1]}")
        if pts.shape[0] >= MAX_CARDINALITY:
            raise ValueError(f"configuration too large ({pts.shape[0]} points)")
        if not np.all(np.isfinite(pts)):
            raise ValueError("configuration contains non-finite coordinates")
        pts.setflags(write=False)
        self.points = pts
        self.psi_total = float(psi(pts).sum()) if pts.shape[0] else 0.0

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]

    def __repr__(self):
        return f"Configuration(n={len(self)}, d={self.d}, Psi={self.psi_total:.6g})"

    def __eq__(self, other):
        if not isinstance(other, Configuration):
            return NotImplemented
        if self.points.shape != other.points.shape:
            return False
        key = lambda p: p[np.lexsort(p.T[::-1])] if p.shape[0] else p
        return bool(np.array_equal(key(self.points), key(other.points)))

    def moved(self, i: int, y) -> "Configuration":
        pts = self.points.copy()
        pts[i] = y
        return Configuration(pts)

    def union(self, other: "Configuration") -> "Configuration":
        return Configuration(np.vstack([self.points, other.points]))

    def to_csv(self, path):
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{j + 1}" for j in range(self.d)])
            for row in self.points:
                w.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "Configuration":
        with Path(path).open(newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        d = len(header)
        pts = np.array([[float(v) for v in r] for r in body if r], dtype=float).reshape(-1, d)
        return cls(pts, d=d)

    def envelope(self) -> dict:
        return {"d": self.d, "count": len(self), "Psi": self.psi_total}

    def save(self, stem):
        """Write ``<stem>.csv`` and the JSON envelope ``<stem>.json``."""
        stem = Path(stem)
        self.to_csv(stem.with_suffix(".csv"))
        stem.with_suffix(".json").write_text(json.dumps(self.envelope(), sort_keys=True))


@dataclass(frozen=True)
class PoissonWindow:
    """Homogeneous Poisson point process of intensity ``kappa`` in a box."""

    kappa: float
    low: tuple[float, ...]
    high: tuple[float, ...]

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"intensity must be positive, got {self.kappa}")
        lo, hi = np.asarray(self.low, float), np.asarray(self.high, float)
        if lo.shape != hi.shape or lo.ndim != 1 or np.any(hi <= lo) or not np.all(np.isfinite(hi - lo)):
            raise ValueError(f"degenerate window {self.low} .. {self.high}")

    @property
    def d(self) -> int:
        return len(self.low)

    @property
    def volume(self) -> float:
        return float(np.prod(np.subtract(self.high, self.low)))

    def sample(self, rng: np.random.Generator) -> Configuration:
        n = rng.poisson(self.kappa * self.volume)
        pts = rng.uniform(self.low, self.high, size=(n, self.d))
        return Configuration(pts, d=self.d)


def make_poisson_window(kappa: float, window) -> PoissonWindow:
    """Sampler for the Poisson law of intensity ``kappa`` restricted to ``window``.

    ``window`` is ``(low, high)`` with scalars (d=1) or coordinate sequences.
    """
    low, high = window
    low = tuple(np.atleast_1d(np.asarray(low, float)).tolist())
    high = tuple(np.atleast_1d(np.asarray(high, float)).tolist())
    return PoissonWindow(float(kappa), low, high)


# ----------------------------------------------------------------------------
# theta functions

THETA_KINDS = ("constant", "gaussian", "cosine_bump", "smoothed")


@dataclass(frozen=True, eq=False)
class Theta:
    """``theta(x) = g(x) psi(x)`` with ``g`` from a closed-form family.

    * constant:    ``g = amplitude``
    * gaussian:    ``g = floor + amplitude exp(-|x-center|^2 / (2 width^2))``
    * cosine_bump: ``g = floor + amplitude (1 + cos(pi |x-center| / width)) / 2``
      inside ``|x-center| < width``
    * smoothed:    ``theta = a * base + base`` for a jump kernel ``a`` (d = 1)
    """

    kind: str = "constant"
    amplitude: float = 0.0
    center: tuple[float, ...] = (0.0,)
    width: float = 1.0
    floor: float = 0.0
    base: "Theta | None" = None
    params: ModelParams | None = None

    def __post_init__(self):
        if self.kind not in THETA_KINDS:
            raise ValueError(f"unknown theta kind {self.kind!r}")
        if self.kind == "smoothed":
            if self.base is None or self.params is None or self.params.d != 1:
                raise ValueError("smoothed theta needs a base theta and d=1 model params")
        elif self.amplitude < 0 or self.floor < 0 or not self.width > 0:
            raise ValueError("theta must be nonnegative with a positive width")
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))

    @classmethod
    def constant(cls, c: float, d: int = 1) -> "Theta":
        return cls("constant", float(c), (0.0,) * d)

    @classmethod
    def gaussian(cls, amplitude, center=0.0, width=1.0, floor=0.0) -> "Theta":
        return cls("gaussian", float(amplitude), center, float(width), float(floor))

    @classmethod
    def cosine_bump(cls, amplitude, center=0.0, width=1.0, floor=0.0) -> "Theta":
        return cls("cosine_bump", float(amplitude), center, float(width), float(floor))

    def smoothed(self, params: ModelParams) -> "Theta":
        """``a * theta + theta`` (the kernel-smoothed companion)."""
        return Theta("smoothed", base=self, params=params, center=self.center)

    @property
    def d(self) -> int:
        return len(self.center)

    def g(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if self.kind == "smoothed":
            return self(x) / psi(x)
        if self.kind == "constant":
            return np.full(x.shape[:-1], self.amplitude)
        r = np.sqrt(np.sum((x - np.asarray(self.center)) ** 2, axis=-1))
        if self.kind == "gaussian":
            return self.floor + self.amplitude * np.exp(-0.5 * (r / self.width) ** 2)
        bump = 0.5 * (1.0 + np.cos(np.pi * np.minimum(r / self.width, 1.0)))
        return self.floor + self.amplitude * bump

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        if self.kind == "smoothed":
            nodes, weights = _kernel_rule(self.params.kernel)
            shifted = x[..., None, :] + nodes[:, None]
            conv = np.tensordot(self.base(shifted), weights, axes=([-1], [0]))
            return conv + self.base(x)
        return self.g(x) * psi(x)

    @property
    def g_sup(self) -> float:
        if self.kind == "smoothed":
            raise ValueError("g_sup is not available for smoothed theta")
        return self.floor + self.amplitude if self.kind != "constant" else self.amplitude

    @property
    def g_at_infinity(self) -> float:
        return self.amplitude if self.kind == "constant" else self.floor

    @property
    def c_theta(self) -> float:
        """``sup_x log(1 + theta(x)) / psi(x)``."""
        return _c_theta(self)

    @property
    def cbar(self) -> float:
        """``exp(c_theta) - 1``, so that ``theta <= cbar psi``."""
        return math.expm1(self.c_theta)

    @property
    def is_zero(self) -> bool:
        return self.kind == "constant" and self.amplitude == 0


@lru_cache(maxsize=64)
def _kernel_rule(kernel) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes/weights for ``int a(xi) f(xi) dxi`` with d = 1."""
    s = kernel.scale
    if kernel.family == "gaussian":
        x, w = np.polynomial.hermite_e.hermegauss(96)
        return s * x, w / math.sqrt(2 * math.pi)
    if kernel.family == "laplace":
        x, w = np.polynomial.laguerre.laggauss(96)
        nodes = np.concatenate([-s * x[::-1], s * x])
        weights = np.concatenate([w[::-1], w]) / 2.0
        return nodes, weights
    x, w = np.polynomial.legendre.leggauss(96)
    return s * x, w / 2.0


def _c_theta(theta: Theta) -> float:
    if theta.kind == "constant":
        # log(1 + c psi)/psi increases to c as psi -> 0
        return theta.amplitude
    d = theta.d
    c = np.asarray(theta.center)
    span = max(10.0 * (theta.width if theta.kind != "smoothed" else 1.0), 10.0)
    if d == 1:
        grid = np.linspace(c[0] - span, c[0] + span, 20001).reshape(-1, 1)
    else:
        ax = np.linspace(-span, span, 401)
        gx, gy = np.meshgrid(ax + c[0], ax + c[1])
        grid = np.stack([gx.ravel(), gy.ravel()], axis=-1)
    vals = np.log1p(theta(grid)) / psi(grid)
    best = float(vals.max())
    if d == 1 and theta.kind != "smoothed":
        i = int(vals.argmax())
        h = grid[1, 0] - grid[0, 0]
        f = lambda t: -float(np.log1p(theta(np.array([[t]])))[0] / psi(np.array([[t]]))[0])
        res = optimize.minimize_scalar(f, bounds=(grid[i, 0] - h, grid[i, 0] + h),
                                       method="bounded", options={"xatol": 1e-12})
        best = max(best, -res.fun)
    if theta.kind != "smoothed":
        best = max(best, theta.g_at_infinity)
    return best


# ----------------------------------------------------------------------------
# test functions


@lru_cache(maxsize=None)
def _set_partitions(m: int) -> tuple[tuple[float, tuple[int, ...]], ...]:
    """Partitions of {0..m-1} as (Moebius coefficient, block bitmasks)."""
    out = []

    def rec(i, blocks):
        if i == m:
            coef = 1.0
            for b in blocks:
                size = bin(b).count("1")
                coef *= (-1) ** (size - 1) * math.factorial(size - 1)
            out.append((coef, tuple(blocks)))
            return
        for j in range(len(blocks)):
            rec(i + 1, blocks[:j] + [blocks[j] | (1 << i)] + blocks[j + 1:])
        rec(i + 1, blocks + [1 << i])

    rec(0, [])
    return tuple(out)


@dataclass(frozen=True, eq=False)
class TestFunction:
    """Cylinder test function on finite configurations.

    ``F_tilde``  ``prod_x (1 + theta(x)) exp(-tau psi(x))``
    ``F_hat``    ordered sum over distinct m-tuples of
                 ``theta_1(x_1)...theta_m(x_m) exp(-tau Psi(gamma minus the tuple))``
    ``Phi_m``    ``F_hat`` with all thetas equal (``theta <= psi`` required)
    ``F_m``      ``Phi_m`` at ``tau = 0``

    Values are computed from additive site accumulators so that a one-point
    move updates in O(2^m).
    """

    __test__ = False  # keep pytest from collecting this class

    kind: str
    thetas: tuple[Theta, ...]
    tau: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "thetas", tuple(self.thetas))
        if self.kind not in ("F_tilde", "F_hat", "Phi_m", "F_m"):
            raise ValueError(f"unknown test function kind {self.kind!r}")
        if self.tau < 0:
            raise ValueError(f"tau must be nonnegative, got {self.tau}")
        if self.kind == "F_tilde":
            if len(self.thetas) != 1:
                raise ValueError("F_tilde takes exactly one theta")
            th = self.thetas[0]
            # tau = c_theta still gives 0 <= F <= 1
            if not (self.tau == 0 and th.is_zero) and self.tau < th.c_theta:
                raise ValueError(f"F_tilde needs tau >= c_theta = {th.c_theta:.6g}, got {self.tau}")
            return
        if not 1 <= self.m <= MAX_M:
            raise ValueError(f"m must lie in 1..{MAX_M}, got {self.m}")
        if self.kind in ("Phi_m", "F_m"):
            if len({id(t) for t in self.thetas}) != 1:
                raise ValueError(f"{self.kind} uses one theta for all slots")
            th = self.thetas[0]
            if th.kind != "smoothed" and th.g_sup > 1 + 1e-12:
                raise ValueError(f"{self.kind} needs theta <= psi (sup g = {th.g_sup:.6g})")
            if self.kind == "F_m" and self.tau != 0:
                raise ValueError("F_m has tau = 0")

    # constructors ---------------------------------------------------------
    @classmethod
    def F_tilde(cls, theta: Theta, tau: float) -> "TestFunction":
        return cls("F_tilde", (theta,), tau)

    @classmethod
    def F_hat(cls, thetas: Sequence[Theta], tau: float) -> "TestFunction":
        return cls("F_hat", tuple(thetas), tau)

    @classmethod
    def Phi_m(cls, theta: Theta, m: int, tau: float) -> "TestFunction":
        return cls("Phi_m", (theta,) * m, tau)

    @classmethod
    def F_m(cls, theta: Theta, m: int) -> "TestFunction":
        return cls("F_m", (theta,) * m, 0.0)

    @property
    def m(self) -> int:
        return len(self.thetas)

    # accumulator machinery -----------------------------------------------
    def site_terms(self, points: np.ndarray) -> np.ndarray:
        """Per-point additive contributions, shape ``points.shape[:-1] + (K,)``."""
        points = np.asarray(points, float)
        ps = psi(points)
        if self.kind == "F_tilde":
            return (np.log1p(self.thetas[0](points)) - self.tau * ps)[..., None]
        boost = np.exp(self.tau * ps)
        phis = [th(points) * boost for th in self.thetas]
        m = self.m
        cols = [ps]
        for mask in range(1, 1 << m):
            prod = np.ones_like(ps)
            for j in range(m):
                if mask >> j & 1:
                    prod = prod * phis[j]
            cols.append(prod)
        return np.stack(cols, axis=-1)

    def combine(self, acc: np.ndarray, n_points: int) -> np.ndarray:
        """Function value from summed accumulators (``n_points`` = |gamma|)."""
        acc = np.asarray(acc, float)
        if self.kind == "F_tilde":
            return np.exp(acc[..., 0])
        if self.m > n_points:
            return np.zeros(acc.shape[:-1])
        total = np.zeros(acc.shape[:-1])
        for coef, blocks in _set_partitions(self.m):
            prod = np.full(acc.shape[:-1], coef)
            for b in blocks:
                prod = prod * acc[..., b]
            total = total + prod
        return np.exp(-self.tau * acc[..., 0]) * total

    def __call__(self, gamma) -> float:
        pts = _pts(gamma)
        if pts.shape[0] == 0:
            return float(self.combine(self.site_terms(np.zeros((1, pts.shape[1])))[0] * 0, 0))
        return float(self.combine(self.site_terms(pts).sum(axis=0), pts.shape[0]))

    def move_values(self, pts: np.ndarray, i: int, targets: np.ndarray,
                    terms: np.ndarray | None = None) -> np.ndarray:
        """Values of ``F(gamma \\ x_i U y)`` for every target ``y``."""
        terms = self.site_terms(pts) if terms is None else terms
        acc = terms.sum(axis=0) - terms[i]
        return self.combine(acc + self.site_terms(targets), pts.shape[0])


def _pts(gamma) -> np.ndarray:
    if isinstance(gamma, Configuration):
        return gamma.points
    pts = np.asarray(gamma, float)
    return pts.reshape(-1, 1) if pts.ndim == 1 else pts


def eval_test(F: TestFunction, gamma) -> float:
    return F(gamma)


def apply_generator(F: TestFunction, gamma, params: ModelParams, method: str = "quadrature",
                    n_samples: int = 1000, rng: np.random.Generator | int | None = None):
    """``(L F)(gamma)`` for the generator with rate ``psi_alpha a exp(-sum phi)``.

    ``method="quadrature"`` returns a float.  ``method="mc"`` draws
    ``n_samples`` jump targets per particle from the kernel and returns
    ``(estimate, standard_error)``.
    """
    pts = _pts(gamma)
    n = pts.shape[0]
    if method == "mc":
        if n == 0:
            return 0.0, 0.0
        rng = np.random.default_rng(rng)
        targets = pts[:, None, :] + params.kernel.sample(rng, n * n_samples).reshape(n, n_samples, -1)
        vals = generator_samples(F, pts, targets, params)
        means = vals.mean(axis=1)
        var = vals.var(axis=1, ddof=1) if n_samples > 1 else np.zeros(n)
        return float(means.sum()), float(math.sqrt(var.sum() / n_samples))
    if method != "quadrature":
        raise ValueError(f"unknown method {method!r}")
    if n == 0:
        return 0.0
    terms = F.site_terms(pts)
    base = F.combine(terms.sum(axis=0), n)
    total = 0.0
    for i in range(n):
        others = np.delete(pts, i, axis=0)
        f = lambda y, i=i, others=others: (np.exp(-_interaction(others, y, params))
                                           * (F.move_values(pts, i, y, terms) - base))
        total += float(psi_alpha(pts[i], params.alpha)) * kernel_expectation(
            params, pts[i], f, _potential_breaks(others, params, pts[i]),
            discs=_potential_discs(others, params))
    return total


def generator_samples(F: TestFunction, pts: np.ndarray, targets: np.ndarray,
                      params: ModelParams, torus: float | None = None) -> np.ndarray:
    """Unbiased one-draw contributions ``psi_alpha(x_i) e^{-sum phi} [F(move) - F]``.

    ``targets`` has shape ``(n, s, d)``: ``s`` kernel draws for each particle.
    """
    n = pts.shape[0]
    terms = F.site_terms(pts)
    acc = terms.sum(axis=0)
    base = F.combine(acc, n)
    moved = F.combine(acc - terms[:, None, :] + F.site_terms(targets), n)
    weight = psi_alpha(pts, params.alpha)[:, None]
    if not params.is_free and n > 1:
        diff = pts[None, None, :, :] - targets[:, :, None, :]
        if torus is not None:
            diff -= torus * np.round(diff / torus)
        ph = params.potential(diff)
        ph[np.arange(n), :, np.arange(n)] = 0.0
        weight = weight * np.exp(-ph.sum(axis=-1))
    return weight * (moved - base)


# ----------------------------------------------------------------------------
# metric and simplicity


def _weighted_support(g1: np.ndarray, g2: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = g1.shape[1] if g1.size else g2.shape[1]
    allp = np.vstack([g1.reshape(-1, d), g2.reshape(-1, d)])
    if allp.shape[0] == 0:
        return np.zeros((0, d)), np.zeros(0)
    sign = np.concatenate([np.ones(len(g1)), -np.ones(len(g2))])
    uniq, inv = np.unique(allp, axis=0, return_inverse=True)
    net = np.zeros(len(uniq))
    np.add.at(net, inv.ravel(), sign)
    keep = net != 0
    return uniq[keep], net[keep] * psi(uniq[keep])


def bl_metric(gamma1, gamma2, size_cap: int = LP_SIZE_CAP) -> float:
    """Bounded-Lipschitz distance between the weighted measures ``sum psi(x) delta_x``.

    The supremum runs over ``g`` with ``||g||_L + sup|g| <= 1``; restricted to
    the finitely many support points this is a linear program in
    ``(g(p), Lip, Sup)`` which is solved exactly by dual simplex.  Points of
    equal multiplicity in both configurations carry zero weight and are
    dropped (Lipschitz extension from a subset is lossless).
    """
    pts, w = _weighted_support(_pts(gamma1), _pts(gamma2))
    P = len(w)
    if P == 0:
        return 0.0
    if P == 1:
        return float(abs(w[0]))
    if P > size_cap:
        raise ValueError(f"LP instance with {P} support points exceeds the cap {size_cap}")
    d = pts.shape[1]
    if d == 1:
        order = np.argsort(pts[:, 0], kind="stable")
        pairs = np.stack([order[:-1], order[1:]], axis=1)
    else:
        iu = np.triu_indices(P, 1)
        pairs = np.stack(iu, axis=1)
    dist = np.sqrt(np.sum((pts[pairs[:, 0]] - pts[pairs[:, 1]]) ** 2, axis=-1))
    nv = P + 2  # g..., Lip, Sup
    L, S = P, P + 1
    rows = []
    eye = np.eye(P)
    box = np.zeros((2 * P, nv))
    box[:, :P] = np.vstack([eye, -eye])
    box[:, S] = -1.0
    rows.append(box)
    lip = np.zeros((2 * len(pairs), nv))
    k = np.arange(len(pairs))
    lip[k, pairs[:, 0]] = 1.0
    lip[k, pairs[:, 1]] = -1.0
    lip[len(pairs) + k, pairs[:, 0]] = -1.0
    lip[len(pairs) + k, pairs[:, 1]] = 1.0
    lip[:, L] = -np.concatenate([dist, dist])
    rows.append(lip)
    ball = np.zeros((1, nv))
    ball[0, [L, S]] = 1.0
    rows.append(ball)
    A = np.vstack(rows)
    b = np.zeros(A.shape[0])
    b[-1] = 1.0
    cost = np.concatenate([-w, [0.0, 0.0]])
    bounds = [(None, None)] * P + [(0, None), (0, None)]
    res = optimize.linprog(cost, A_ub=A, b_ub=b, bounds=bounds, method="highs-ds",
                           options={"primal_feasibility_tolerance": 1e-10,
                                    "dual_feasibility_tolerance": 1e-10})
    if res.status != 0:
        raise RuntimeError(f"metric LP failed: {res.message}")
    return float(max(-res.fun, 0.0))


def simplicity_H(gamma, eps: float) -> float:
    """``sum_{x != y} psi(x) psi(y) / |x - y|^(d eps)``; ``inf`` for coinciding points."""
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    pts = _pts(gamma)
    n, d = pts.shape
    if n < 2:
        return 0.0
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff**2, axis=-1))
    off = ~np.eye(n, dtype=bool)
    if np.any(dist[off] == 0):
        return math.inf
    ps = psi(pts)
    val = np.outer(ps, ps)[off] / dist[off] ** (d * eps)
    return float(val.sum())
