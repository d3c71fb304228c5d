"""Truncated correlation-function hierarchy on a periodic one-dimensional grid.

Correlation functions ``k^(n)`` and quasi-observables ``G^(n)`` are stored as
dense symmetric arrays on ``grid^n``.  Lebesgue-Poisson integrals use the
periodic trapezoid rule (weight ``h`` per node), which makes the discrete
operators exactly adjoint to each other whenever no closure term is dropped.

Operators, for ``t_y(z) = exp(-phi(z - y)) - 1`` and ``tau_y = 1 + t_y``::

    (W_y k)(eta)     = sum_j 1/j! int k(eta + z_1..z_j) t_y(z_1)..t_y(z_j) dz
    (L_delta k)(eta) = sum_{y in eta} int a(x-y) e(tau_y; eta-y) (W_y k)(eta-y+x) dx
                     - sum_{x in eta} int a(x-y) e(tau_y; eta-x) (W_y k)(eta) dy
    (L_hat G)(eta)   = sum_{xi in eta} sum_{x in xi} int a(x-y) e(tau_y; xi-x)
                       e(t_y; eta-xi) [G(xi-x+y) - G(xi)] dy

``self_interaction=True`` keeps the mover inside the products (an extra
factor ``tau_y(x)``), i.e. replaces ``a(x-y)`` by ``a(x-y) exp(-phi(x-y))``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from itertools import permutations
from pathlib import Path

import numpy as np

from .model import ModelParams, radius_T, tau_theta

__all__ = [
    "Grid",
    "CorrelationTable",
    "QuasiObservableTable",
    "HierarchyOperators",
    "lp_integral",
    "pairing",
    "apply_W",
    "apply_L_delta",
    "apply_L_hat",
    "evolve",
    "spectral_free_evolution",
    "l14_envelope",
    "duality_residual",
]

CLOSURES = ("zero", "poisson_factorized")
_LET = "abcd"


@dataclass(frozen=True)
class Grid:
    """Uniform periodic mesh of ``M`` nodes on ``[-R, R)``."""

    R: float
    M: int

    def __post_init__(self):
        if not self.R > 0 or self.M < 2:
            raise ValueError(f"need R > 0 and M >= 2, got R={self.R}, M={self.M}")

    @property
    def h(self) -> float:
        return 2.0 * self.R / self.M

    @cached_property
    def nodes(self) -> np.ndarray:
        return -self.R + self.h * np.arange(self.M)

    @property
    def period(self) -> float:
        return 2.0 * self.R

    def wrap(self, dx):
        L = self.period
        return dx - L * np.floor(dx / L + 0.5)

    def index(self, x: float) -> int:
        return int(np.rint((self.wrap(x) + self.R) / self.h)) % self.M

    def frequencies(self) -> np.ndarray:
        return 2.0 * np.pi * np.fft.fftfreq(self.M, d=self.h)


class HierarchyOperators:
    """Grid matrices for one ``(grid, params)`` pair.

    ``Ah[x, y] = h a(x - y)`` is periodized and renormalized so that every row
    sums to one; ``T[y, z] = t_y(z)``; ``Tau = 1 + T``.
    """

    def __init__(self, grid: Grid, params: ModelParams, self_interaction: bool = False):
        if params.d != 1:
            raise ValueError("the hierarchy solver is one-dimensional")
        if params.potential.support_radius >= grid.R:
            raise ValueError("potential support must be shorter than the half-period R")
        self.grid = grid
        self.params = params
        self.self_interaction = bool(self_interaction)
        x = grid.nodes
        disp = grid.wrap(x[:, None] - x[None, :])
        reach = params.kernel.support_radius
        n_img = int(math.ceil(reach / grid.period)) + 1
        a = sum(params.kernel(disp[..., None] + m * grid.period)
                for m in range(-n_img, n_img + 1))
        Ah = grid.h * a
        Ah /= Ah.sum(axis=1, keepdims=True)
        self.Ah = Ah
        self.T = np.expm1(-params.potential(disp[..., None]))
        self.Tau = 1.0 + self.T
        self.K = Ah * self.Tau if self.self_interaction else Ah
        self.is_free = params.is_free

    @cached_property
    def t_mass(self) -> float:
        """Grid value of ``sup_y int |t_y|``."""
        return float(self.grid.h * np.abs(self.T).sum(axis=1).max())


# ----------------------------------------------------------------------------
# tables


def _symmetrize(arr: np.ndarray) -> np.ndarray:
    n = arr.ndim
    if n < 2:
        return arr
    return sum(np.transpose(arr, p) for p in permutations(range(n))) / math.factorial(n)


@dataclass(eq=False)
class CorrelationTable:
    """``k^(0) = 1`` and symmetric arrays ``k^(n)`` on ``grid^n``, ``n <= N_max``."""

    grid: Grid
    arrays: dict[int, np.ndarray]
    J_max: int = 1
    closure: str | None = "zero"
    k0: float = 1.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.arrays:
            raise ValueError("a correlation table needs at least k^(1)")
        if sorted(self.arrays) != list(range(1, max(self.arrays) + 1)):
            raise ValueError(f"orders must be 1..N_max, got {sorted(self.arrays)}")
        if self.N_max > 3:
            raise ValueError("N_max must be at most 3")
        if self.N_max == 3 and self.grid.M > 48:
            raise ValueError("k^(3) tables are capped at M = 48")
        if not 0 <= self.J_max <= 2:
            raise ValueError(f"J_max must lie in 0..2, got {self.J_max}")
        if self.closure is not None and self.closure not in CLOSURES:
            raise ValueError(f"unknown closure {self.closure!r}")
        for n, arr in self.arrays.items():
            if arr.shape != (self.grid.M,) * n:
                raise ValueError(f"k^({n}) has shape {arr.shape}, expected {(self.grid.M,) * n}")

    @property
    def N_max(self) -> int:
        return max(self.arrays)

    @classmethod
    def from_profile(cls, grid: Grid, k1, N_max: int = 2, J_max: int = 1,
                     closure: str | None = "zero") -> "CorrelationTable":
        """Product (Poisson-type) table ``k^(n) = k1 x ... x k1``."""
        k1 = np.asarray(k1(grid.nodes) if callable(k1) else k1, dtype=float)
        arrays = {1: k1.copy()}
        for n in range(2, N_max + 1):
            arrays[n] = np.multiply.outer(arrays[n - 1], k1)
        return cls(grid, arrays, J_max, closure)

    @classmethod
    def poisson(cls, grid: Grid, kappa: float, N_max: int = 2, J_max: int = 1,
                closure: str | None = "zero") -> "CorrelationTable":
        return cls.from_profile(grid, np.full(grid.M, float(kappa)), N_max, J_max, closure)

    def order(self, n: int) -> np.ndarray | float:
        """``k^(n)``, using the closure above ``N_max``."""
        if n == 0:
            return self.k0
        if n <= self.N_max:
            return self.arrays[n]
        if self.closure is None:
            raise ValueError(f"k^({n}) is beyond N_max={self.N_max} and no closure is set")
        if self.closure == "zero":
            return np.zeros((self.grid.M,) * n)
        out = self.arrays[1]
        for _ in range(n - 1):
            out = np.multiply.outer(out, self.arrays[1])
        return out

    def norm(self, theta: float, extra_orders: int = 0) -> float:
        """``sup_n sup |k^(n)| e^{-theta n}``; ``extra_orders`` adds closure orders."""
        vals = [abs(self.k0)]
        for n in range(1, self.N_max + 1 + extra_orders):
            if n <= self.N_max:
                m = float(np.abs(self.arrays[n]).max())
            elif self.closure == "poisson_factorized":
                m = float(np.abs(self.arrays[1]).max()) ** n
            else:
                m = 0.0
            vals.append(m * math.exp(-theta * n))
        return max(vals)

    def type_estimate(self) -> float:
        """``max_n (sup |k^(n)|)^(1/n)``."""
        return max(float(np.abs(a).max()) ** (1.0 / n) for n, a in self.arrays.items())

    def with_arrays(self, arrays: dict[int, np.ndarray], meta: dict | None = None) -> "CorrelationTable":
        return CorrelationTable(self.grid, arrays, self.J_max, self.closure, self.k0,
                                dict(self.meta if meta is None else meta))

    def copy(self) -> "CorrelationTable":
        return self.with_arrays({n: a.copy() for n, a in self.arrays.items()})

    def max_asymmetry(self) -> float:
        return max((float(np.abs(a - _symmetrize(a)).max()) for a in self.arrays.values()),
                   default=0.0)

    def metadata(self) -> dict:
        return {"R": self.grid.R, "M": self.grid.M, "N_max": self.N_max, "J_max": self.J_max,
                "closure": self.closure, "k0": self.k0, **self.meta}

    def save(self, directory):
        """Write ``k<n>.csv`` in long format (indices then value) and ``meta.json``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        for n, arr in self.arrays.items():
            _save_long(out / f"k{n}.csv", arr)
        (out / "meta.json").write_text(json.dumps(_jsonable(self.metadata()), indent=1,
                                                  sort_keys=True))

    @classmethod
    def load(cls, directory) -> "CorrelationTable":
        src = Path(directory)
        meta = json.loads((src / "meta.json").read_text())
        grid = Grid(meta.pop("R"), meta.pop("M"))
        N_max = meta.pop("N_max")
        arrays = {n: _load_long(src / f"k{n}.csv", grid.M, n) for n in range(1, N_max + 1)}
        return cls(grid, arrays, meta.pop("J_max"), meta.pop("closure"), meta.pop("k0"), meta)


@dataclass(eq=False)
class QuasiObservableTable:
    """``G(empty) = G0`` and symmetric arrays ``G^(n)``, ``n <= N_G <= 2``."""

    grid: Grid
    G0: float
    arrays: dict[int, np.ndarray]

    def __post_init__(self):
        if any(n < 1 or n > 2 for n in self.arrays):
            raise ValueError("quasi-observables are supported up to order 2")
        for n, arr in self.arrays.items():
            if arr.shape != (self.grid.M,) * n:
                raise ValueError(f"G^({n}) has shape {arr.shape}")

    @property
    def N_G(self) -> int:
        return max(self.arrays, default=0)

    @classmethod
    def exponential(cls, grid: Grid, theta, N_G: int = 2) -> "QuasiObservableTable":
        """Truncation of ``e(theta; eta) = prod_{x in eta} theta(x)``."""
        th = np.asarray(theta(grid.nodes) if callable(theta) else theta, dtype=float)
        arrays = {}
        cur = np.ones(())
        for n in range(1, N_G + 1):
            cur = np.multiply.outer(cur, th)
            arrays[n] = cur.copy()
        return cls(grid, 1.0, arrays)

    def norm(self, theta: float) -> float:
        """``|G|_theta = |G0| + sum_n e^{theta n}/n! int |G^(n)|``."""
        h = self.grid.h
        return abs(self.G0) + sum(math.exp(theta * n) / math.factorial(n) * h**n
                                  * float(np.abs(a).sum()) for n, a in self.arrays.items())

    def scaled(self, c: float) -> "QuasiObservableTable":
        return QuasiObservableTable(self.grid, c * self.G0, {n: c * a for n, a in self.arrays.items()})

    def save(self, directory):
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        for n, arr in self.arrays.items():
            _save_long(out / f"G{n}.csv", arr)
        meta = {"R": self.grid.R, "M": self.grid.M, "N_G": self.N_G, "G0": self.G0}
        (out / "meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True))


def _save_long(path: Path, arr: np.ndarray):
    idx = np.indices(arr.shape).reshape(arr.ndim, -1).T
    data = np.column_stack([idx, arr.reshape(-1)])
    header = ",".join([f"i{j + 1}" for j in range(arr.ndim)] + ["value"])
    fmt = ["%d"] * arr.ndim + ["%.17g"]
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=fmt)


def _load_long(path: Path, M: int, n: int) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    arr = np.zeros((M,) * n)
    arr[tuple(data[:, :n].astype(int).T)] = data[:, n]
    return arr


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


# ----------------------------------------------------------------------------
# integrals and pairings


def _check_grid(a: Grid, b: Grid):
    if a != b:
        raise ValueError(f"grid mismatch: {a} vs {b}")


def lp_integral(G: QuasiObservableTable) -> float:
    """Lebesgue-Poisson integral ``G(empty) + sum_n 1/n! int G^(n)``."""
    h = G.grid.h
    return G.G0 + sum(h**n / math.factorial(n) * float(a.sum()) for n, a in G.arrays.items())


def pairing(k: CorrelationTable, G: QuasiObservableTable) -> float:
    """``<<k, G>> = k(empty) G(empty) + sum_n 1/n! int k^(n) G^(n)``."""
    _check_grid(k.grid, G.grid)
    h = k.grid.h
    total = k.k0 * G.G0
    for n, g in G.arrays.items():
        if n > k.N_max:
            continue
        total += h**n / math.factorial(n) * float(np.sum(k.arrays[n] * g))
    return total


# ----------------------------------------------------------------------------
# operators


def _contract(k: CorrelationTable, n: int, j: int, ops: HierarchyOperators) -> np.ndarray:
    """``h^j/j! sum_z k^(n+j)(eta, z_1..z_j) prod T[y, z_i]`` as an array ``[y, eta]``."""
    M, h = k.grid.M, k.grid.h
    shape = (M,) + (M,) * n
    if ops.is_free:
        return np.zeros(shape)
    if n + j <= k.N_max:
        eta = _LET[:n]
        zs = "pq"[:j]
        spec = f"{eta}{zs}," + ",".join(f"y{z}" for z in zs) + f"->y{eta}"
        out = np.einsum(spec, k.arrays[n + j], *([ops.T] * j), optimize=True)
        return out * (h**j / math.factorial(j))
    if k.closure is None:
        raise ValueError(f"W needs k^({n + j}) beyond N_max={k.N_max}; set a closure")
    if k.closure == "zero":
        return np.zeros(shape)
    s = h * ops.T @ k.arrays[1]
    base = k.order(n) if n else np.ones(())
    return np.multiply.outer(s**j / math.factorial(j), base)


def _W(k: CorrelationTable, n: int, ops: HierarchyOperators) -> np.ndarray:
    M = k.grid.M
    base = k.order(n)
    out = np.broadcast_to(base, (M,) + (M,) * n).copy() if n else np.full(M, float(base))
    for j in range(1, k.J_max + 1):
        out += _contract(k, n, j, ops)
    return out


def apply_W(k: CorrelationTable, y: int, eta: tuple[int, ...], params: ModelParams | None = None,
            J_max: int | None = None, ops: HierarchyOperators | None = None,
            self_interaction: bool = False) -> float:
    """``(W_y k)(eta)`` at grid indices ``y`` and ``eta`` (``|eta| <= 2``)."""
    eta = tuple(int(i) for i in eta)
    if len(eta) > 2:
        raise ValueError("|eta| must be at most 2")
    J = k.J_max if J_max is None else int(J_max)
    if len(eta) + J > k.N_max and k.closure is None:
        raise ValueError(f"|eta| + J_max = {len(eta) + J} exceeds N_max = {k.N_max}")
    ops = ops or HierarchyOperators(k.grid, params, self_interaction)
    kk = CorrelationTable(k.grid, k.arrays, J, k.closure, k.k0)
    W = _W(kk, len(eta), ops)
    return float(W[(y,) + eta])


def _tau_factor(Tau: np.ndarray, n: int, src: int, dst: int) -> np.ndarray:
    """``Tau[eta_src, eta_dst]`` broadcast over ``eta``; ``src=-1`` means a leading ``y`` axis."""
    M = Tau.shape[0]
    if src < 0:
        return Tau.reshape(M, *([1] * dst), M, *([1] * (n - dst - 1)))
    a, b = sorted((src, dst))
    arr = Tau if src < dst else Tau.T
    return arr.reshape(*([1] * a), M, *([1] * (b - a - 1)), M, *([1] * (n - b - 1)))


def _image_order(k: CorrelationTable, n: int, ops: HierarchyOperators) -> np.ndarray:
    W = _W(k, n, ops)
    K = ops.K
    L = _LET[:n]
    out = np.zeros((k.grid.M,) * n)
    for p in range(n):
        # gain: x replaces eta_p, y = eta_p
        swapped = L[:p] + "x" + L[p + 1:]
        g = np.einsum(f"{L[p]}x,{L[p]}{swapped}->{L}", K, W, optimize=True)
        for q in range(n):
            if q != p:
                g = g * _tau_factor(ops.Tau, n, p, q)
        out += g
        # loss: eta_p jumps to y
        Wl = W
        for q in range(n):
            if q != p:
                Wl = Wl * _tau_factor(ops.Tau, n, -1, q)
        out -= np.einsum(f"{L[p]}y,y{L}->{L}", K, Wl, optimize=True)
    return _symmetrize(out)


def apply_L_delta(k: CorrelationTable, params: ModelParams | None = None,
                  ops: HierarchyOperators | None = None,
                  self_interaction: bool = False) -> CorrelationTable:
    """Image of ``k`` under the truncated ``L_delta``.

    With a closure every order ``1..N_max`` is returned; without one only
    orders ``n <= N_max - J_max`` (which need no missing ``k^(n)``).
    The image has ``k(empty) = 0``.
    """
    if k.N_max < 1 + k.J_max and k.closure is None:
        raise ValueError(f"N_max={k.N_max} must be at least 1 + J_max={1 + k.J_max}")
    ops = ops or HierarchyOperators(k.grid, params, self_interaction)
    _check_grid(k.grid, ops.grid)
    top = k.N_max if k.closure is not None else k.N_max - k.J_max
    arrays = {n: _image_order(k, n, ops) for n in range(1, top + 1)}
    return CorrelationTable(k.grid, arrays, k.J_max, k.closure, 0.0)


def apply_L_hat(G: QuasiObservableTable, params: ModelParams | None = None,
                ops: HierarchyOperators | None = None,
                self_interaction: bool = False) -> QuasiObservableTable:
    """``L_hat G`` on configurations with at most two points."""
    if G.N_G > 2:
        raise ValueError("N_G must be at most 2")
    ops = ops or HierarchyOperators(G.grid, params, self_interaction)
    _check_grid(G.grid, ops.grid)
    M = G.grid.M
    K, T, Tau = ops.K, ops.T, ops.Tau
    G1 = G.arrays.get(1, np.zeros(M))
    G2 = G.arrays.get(2, np.zeros((M, M)))
    # |eta| = 1: the single point jumps
    out1 = K @ G1 - K.sum(axis=1) * G1
    # |eta| = 2, xi = eta: u jumps to y with v as a neighbour
    A = K @ (Tau * G2)  # A[u, v] = sum_y K[u, y] Tau[y, v] G2[y, v]
    B = K @ Tau  # B[u, v] = sum_y K[u, y] Tau[y, v]
    both = A - B * G2
    both = both + both.T
    # xi = {u}, eta - xi = {v}: one t factor
    C = K @ (T * G1[:, None])  # C[u, v] = sum_y K[u, y] T[y, v] G1[y]
    D = K @ T
    single = C - D * G1[:, None]
    single = single + single.T
    return QuasiObservableTable(G.grid, 0.0, {1: out1, 2: both + single})


def duality_residual(k: CorrelationTable, G: QuasiObservableTable, params: ModelParams | None = None,
                     ops: HierarchyOperators | None = None,
                     self_interaction: bool = False) -> dict:
    """``|<<L_delta k, G>> - <<k, L_hat G>>|`` with its error budget.

    The left side uses the zero closure, which is the truncation the right
    side sees.  The budget adds the closure sensitivity of the left side
    (zero versus Poisson-factorized ``k^(n)`` beyond ``N_max``) to a
    floating-point allowance scaled by ``<<|k|, |G|>>``.
    """
    ops = ops or HierarchyOperators(k.grid, params, self_interaction)
    kz = CorrelationTable(k.grid, k.arrays, k.J_max, "zero", k.k0)
    kf = CorrelationTable(k.grid, k.arrays, k.J_max, "poisson_factorized", k.k0)
    lhs = pairing(apply_L_delta(kz, ops=ops), G)
    rhs = pairing(k, apply_L_hat(G, ops=ops))
    alt = pairing(apply_L_delta(kf, ops=ops), G)
    absk = CorrelationTable(k.grid, {n: np.abs(a) for n, a in k.arrays.items()}, k.J_max, "zero",
                            abs(k.k0))
    absG = QuasiObservableTable(G.grid, abs(G.G0), {n: np.abs(a) for n, a in G.arrays.items()})
    fp = 1e-12 * max(1.0, pairing(absk, absG))
    trunc = abs(alt - lhs)
    return {"residual": abs(lhs - rhs), "lhs": lhs, "rhs": rhs, "truncation": trunc,
            "quadrature": fp, "budget": trunc + fp}


# ----------------------------------------------------------------------------
# evolution


def l14_envelope(theta: float, theta_prime: float, phi_mass: float) -> float:
    """Operator-norm envelope ``2/(e (theta' - theta)) exp(e^theta <phi>)``."""
    if theta_prime <= theta:
        raise ValueError("need theta' > theta")
    return 2.0 / (math.e * (theta_prime - theta)) * math.exp(math.exp(theta) * phi_mass)


def _rk4(k: CorrelationTable, t: float, dt: float, ops: HierarchyOperators):
    n_steps = max(1, int(math.ceil(t / dt - 1e-12)))
    step = t / n_steps
    arrays = {n: a.copy() for n, a in k.arrays.items()}
    track = [(0.0, k.type_estimate(), float(arrays[1].min()))]

    def rhs(arr):
        return apply_L_delta(k.with_arrays(arr), ops=ops).arrays

    for s in range(n_steps):
        k1 = rhs(arrays)
        k2 = rhs({n: arrays[n] + 0.5 * step * k1[n] for n in arrays})
        k3 = rhs({n: arrays[n] + 0.5 * step * k2[n] for n in arrays})
        k4 = rhs({n: arrays[n] + step * k3[n] for n in arrays})
        arrays = {n: arrays[n] + step / 6.0 * (k1[n] + 2 * k2[n] + 2 * k3[n] + k4[n]) for n in arrays}
        tbl = k.with_arrays(arrays)
        track.append(((s + 1) * step, tbl.type_estimate(), float(arrays[1].min())))
    return arrays, track, n_steps


def evolve(k0: CorrelationTable, t: float, params: ModelParams, scheme: str = "rk4",
           dt: float = 0.005, n_terms: int = 8, theta0: float | None = None,
           theta_prime: float | None = None, error_estimate: bool = False,
           self_interaction: bool = False, ops: HierarchyOperators | None = None
           ) -> CorrelationTable:
    """Solve ``dk/dt = L_delta k`` up to time ``t``.

    ``rk4`` uses classical Runge-Kutta with step ``dt <= 0.01`` and records the
    type ``max_n sup (k^(n))^(1/n)`` and ``min k^(1)`` after each step;
    ``error_estimate`` repeats the run with ``dt/2`` for a Richardson estimate.
    ``series`` sums ``t^n/n! L_delta^n k0`` for ``n <= n_terms`` and reports
    each term's norm against the envelope ``(n/(e T))^n t^n/n! ||k0||``.
    """
    if t < 0:
        raise ValueError(f"t must be nonnegative, got {t}")
    if k0.closure is None and k0.J_max > 0:
        raise ValueError("closure mode required when the cluster order J_max > 0")
    ops = ops or HierarchyOperators(k0.grid, params, self_interaction)
    meta = dict(k0.meta)
    meta["t"] = float(t)
    meta["scheme"] = scheme
    meta["self_interaction"] = ops.self_interaction
    if t == 0:
        return k0.with_arrays({n: a.copy() for n, a in k0.arrays.items()}, meta)
    if scheme == "rk4":
        if not 0 < dt <= 0.01:
            raise ValueError(f"rk4 requires 0 < dt <= 0.01, got {dt}")
        arrays, track, n_steps = _rk4(k0, t, dt, ops)
        meta.update(dt=t / n_steps, steps=n_steps,
                    type_track=[[a, b] for a, b, _ in track],
                    min_k1=min(c for _, _, c in track))
        meta["positivity_flag"] = meta["min_k1"] < -1e-8
        if error_estimate:
            fine, _, _ = _rk4(k0, t, dt / 2, ops)
            meta["richardson_error"] = max(float(np.abs(fine[n] - arrays[n]).max())
                                           for n in arrays) / 15.0
        return k0.with_arrays(arrays, meta)
    if scheme != "series":
        raise ValueError(f"unknown scheme {scheme!r}")
    if n_terms < 1:
        raise ValueError("n_terms must be >= 1")
    phi_mass = params.phi_mass
    th0 = 0.0 if theta0 is None else float(theta0)
    extra = k0.J_max if k0.closure == "poisson_factorized" else 0
    cert: dict = {"theta0": th0}
    if theta_prime is not None:
        T = radius_T(theta_prime, th0, phi_mass)
        base_norm = k0.norm(th0, extra)
        cert.update(theta_prime=float(theta_prime), T=T, tau=tau_theta(th0, phi_mass),
                    within_radius=bool(t < T), k0_norm=base_norm, terms=[])
    total = {n: a.copy() for n, a in k0.arrays.items()}
    cur = k0
    coef = 1.0
    for m in range(1, n_terms + 1):
        cur = apply_L_delta(cur.with_arrays(cur.arrays), ops=ops)
        cur = CorrelationTable(k0.grid, cur.arrays, k0.J_max, k0.closure, 0.0)
        coef *= t / m
        for n in total:
            total[n] = total[n] + coef * cur.arrays[n]
        if theta_prime is not None:
            measured = coef * cur.norm(theta_prime)
            envelope = (m / (math.e * T)) ** m * coef * base_norm
            cert["terms"].append({"n": m, "norm": measured, "envelope": envelope,
                                  "ok": bool(measured <= envelope)})
    if theta_prime is not None:
        cert["all_terms_ok"] = all(x["ok"] for x in cert["terms"])
        cert["flag"] = not cert["within_radius"]
    meta["certificate"] = cert
    meta["n_terms"] = n_terms
    return k0.with_arrays(total, meta)


def spectral_free_evolution(k1: np.ndarray, grid: Grid, params: ModelParams, t: float) -> np.ndarray:
    """Free one-point solution ``F^{-1}[exp(t (a_hat(w) - 1)) F k1]`` on the periodic grid.

    Uses the continuous characteristic function of the kernel at the grid
    frequencies, so for smooth periodic data it is the exact solution of
    ``dk/dt = a * k - k`` up to aliasing.
    """
    w = grid.frequencies()
    mult = np.exp(t * (params.kernel.char_function(w) - 1.0))
    return np.real(np.fft.ifft(mult * np.fft.fft(np.asarray(k1, float))))
