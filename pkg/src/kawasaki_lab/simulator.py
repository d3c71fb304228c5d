"""Exact event-driven simulation of the finite Kawasaki jump process by thinning.

Every particle carries a clock of rate 1 which dominates its true total jump
rate ``psi_alpha(x) exp(-sum phi) <= 1``.  The superposed clock rings at rate
``|gamma|`` (constant, since jumps conserve particles).  On a ring a particle is
chosen uniformly, a target ``y = x + xi`` with ``xi ~ a`` is proposed, and the
move is accepted with probability ``psi_alpha(x) exp(-sum_{z != x} phi(z - y))``.

All random inputs of a path are drawn up front from one Philox stream, so two
runs with the same seed but different ``alpha`` share ring times, movers,
proposals and uniforms (common random numbers).
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .configuration import Configuration, PoissonWindow
from .model import ModelParams, POTENTIAL_FAMILIES

__all__ = [
    "PathSample",
    "PathEnsemble",
    "SimulationError",
    "simulate",
    "run_ensemble",
    "replica_seed",
    "RNG_NAME",
    "EVENT_BUDGET",
]

RNG_NAME = f"numpy.random.Philox (numpy {np.__version__})"
EVENT_BUDGET = 10**7
_FAMILY_CODE = {name: i for i, name in enumerate(POTENTIAL_FAMILIES)}


class SimulationError(RuntimeError):
    """Internal invariant violation inside the event loop."""


@numba.njit(cache=True)
def _phi_radial(r, code, h, rho, cut):
    if h == 0.0:
        return 0.0
    if code == 0:  # box
        return h if r <= rho else 0.0
    if code == 1:  # bump
        if r >= rho:
            return 0.0
        u = r / rho
        return h * math.exp(1.0 - 1.0 / (1.0 - u * u))
    if r > cut:
        return 0.0
    return h * math.exp(-0.5 * (r / rho) ** 2)


@numba.njit(cache=True)
def _run(x, ring_t, who, xi, u, query, alpha, code, h, rho, cut, torus):
    n, d = x.shape
    n_ring = ring_t.shape[0]
    nq = query.shape[0]
    snaps = np.empty((nq, n, d))
    ev_t = np.empty(n_ring)
    ev_i = np.empty(n_ring, dtype=np.int64)
    ev_from = np.empty((n_ring, d))
    ev_to = np.empty((n_ring, d))
    y = np.empty(d)
    n_ev = 0
    qi = 0
    status = 0
    for r in range(n_ring):
        t = ring_t[r]
        while qi < nq and query[qi] < t:
            snaps[qi] = x
            qi += 1
        i = who[r]
        nrm = 0.0
        for k in range(d):
            y[k] = x[i, k] + xi[r, k]
            if torus > 0.0:
                y[k] -= torus * math.floor(y[k] / torus + 0.5)
            nrm += x[i, k] * x[i, k]
        p = 1.0 / (1.0 + alpha * nrm ** ((d + 1) / 2.0))
        if h > 0.0:
            e = 0.0
            for j in range(n):
                if j == i:
                    continue
                s = 0.0
                for k in range(d):
                    dz = x[j, k] - y[k]
                    if torus > 0.0:
                        dz -= torus * math.floor(dz / torus + 0.5)
                    s += dz * dz
                e += _phi_radial(math.sqrt(s), code, h, rho, cut)
            p *= math.exp(-e)
        if not (p >= 0.0 and p <= 1.0):
            status = 1
            break
        if u[r] < p:
            ev_t[n_ev] = t
            ev_i[n_ev] = i
            for k in range(d):
                ev_from[n_ev, k] = x[i, k]
                ev_to[n_ev, k] = y[k]
                x[i, k] = y[k]
            n_ev += 1
    while qi < nq:
        snaps[qi] = x
        qi += 1
    return snaps, ev_t[:n_ev], ev_i[:n_ev], ev_from[:n_ev], ev_to[:n_ev], status


@dataclass(eq=False)
class PathSample:
    """One trajectory: accepted jump events plus snapshots at query times."""

    event_times: np.ndarray
    movers: np.ndarray
    jump_from: np.ndarray
    jump_to: np.ndarray
    query_times: np.ndarray
    snapshots: np.ndarray  # (n_query, n, d); the particle count never changes
    seed: int
    params_digest: str
    n_rings: int
    initial: np.ndarray

    @property
    def n_events(self) -> int:
        return int(self.event_times.shape[0])

    @property
    def n_particles(self) -> int:
        return int(self.initial.shape[0])

    @property
    def acceptance(self) -> float:
        return self.n_events / self.n_rings if self.n_rings else float("nan")

    def snapshot(self, t: float) -> Configuration:
        return Configuration(self.snapshots[_query_index(self.query_times, t)])

    def events(self) -> list[tuple[float, int, np.ndarray, np.ndarray]]:
        return [(float(t), int(i), a, b) for t, i, a, b in
                zip(self.event_times, self.movers, self.jump_from, self.jump_to)]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.seed).encode())
        h.update(self.params_digest.encode())
        for arr in (self.initial, self.event_times, self.movers, self.jump_from,
                    self.jump_to, self.query_times, self.snapshots):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def write_events(self, path):
        d = self.initial.shape[1]
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "mover"] + [f"from_{k + 1}" for k in range(d)]
                       + [f"to_{k + 1}" for k in range(d)])
            for t, i, a, b in zip(self.event_times, self.movers, self.jump_from, self.jump_to):
                w.writerow([repr(float(t)), int(i)] + [repr(float(v)) for v in a]
                           + [repr(float(v)) for v in b])


def _query_index(query_times: np.ndarray, t: float) -> int:
    hit = np.flatnonzero(np.isclose(query_times, t, rtol=0, atol=1e-12))
    if hit.size == 0:
        raise ValueError(f"t={t} is not among the recorded query times")
    return int(hit[0])


def params_digest(params: ModelParams) -> str:
    blob = json.dumps(params.digest_dict(), sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def replica_seed(base_seed: int, index: int) -> int:
    """Per-replica 64-bit seed, a pure function of ``(base_seed, index)``."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def _check_query(query_times, t_max) -> np.ndarray:
    q = np.asarray(sorted(float(t) for t in query_times), dtype=float)
    if q.size and (q[0] < 0 or q[-1] > t_max):
        raise ValueError(f"query times must lie in [0, t_max={t_max}]")
    return q


def simulate(gamma0, t_max: float, params: ModelParams, seed: int,
             query_times: Sequence[float] = (), torus: float | None = None) -> PathSample:
    """Simulate one path of the jump process on ``[0, t_max]``.

    ``torus`` (a side length ``L``) switches to the periodic box
    ``[-L/2, L/2)^d`` with minimum-image distances.
    """
    if not t_max > 0:
        raise ValueError(f"t_max must be positive, got {t_max}")
    x0 = gamma0.points if isinstance(gamma0, Configuration) else np.asarray(gamma0, float)
    x0 = x0.reshape(-1, params.d) if x0.ndim == 1 else x0
    if x0.shape[1] != params.d:
        raise ValueError(f"configuration dimension {x0.shape[1]} != model dimension {params.d}")
    q = _check_query(query_times, t_max)
    n, d = x0.shape
    rng = np.random.Generator(np.random.Philox(int(seed)))
    n_ring = int(rng.poisson(n * t_max)) if n else 0
    ring_t = np.sort(rng.uniform(0.0, t_max, size=n_ring))
    who = rng.integers(0, max(n, 1), size=n_ring)
    xi = params.kernel.sample(rng, n_ring)
    u = rng.uniform(size=n_ring)
    pot = params.potential
    x = np.array(x0, dtype=float, copy=True)
    if torus is not None:
        if not torus > 0:
            raise ValueError("torus side must be positive")
        x -= torus * np.floor(x / torus + 0.5)
    snaps, et, ei, ef, eto, status = _run(
        x, ring_t, who.astype(np.int64), xi, u, q, float(params.alpha), _FAMILY_CODE[pot.family],
        float(pot.height), float(pot.range), float(pot.support_radius),
        float(torus) if torus is not None else 0.0)
    if status:
        raise SimulationError(f"non-finite or out-of-range acceptance probability (seed={seed})")
    if np.any(np.diff(et) <= 0):
        raise SimulationError("event times are not strictly increasing")
    return PathSample(et, ei, ef, eto, q, snaps, int(seed), params_digest(params), n_ring,
                      np.array(x0, float, copy=True))


@dataclass(eq=False)
class PathEnsemble:
    replicas: list[PathSample]
    query_times: np.ndarray
    base_seed: int
    seed_rule: str = "SeedSequence(base_seed, spawn_key=(i,)).generate_state(1, uint64)"
    torus: float | None = None
    source: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.replicas)

    def configs_at(self, t: float) -> list[np.ndarray]:
        qi = _query_index(self.query_times, t)
        return [r.snapshots[qi] for r in self.replicas]

    def acceptance_stats(self) -> dict:
        rings = sum(r.n_rings for r in self.replicas)
        events = sum(r.n_events for r in self.replicas)
        return {"rings": rings, "events": events,
                "acceptance": events / rings if rings else None}

    def digest(self) -> str:
        h = hashlib.sha256()
        for r in self.replicas:
            h.update(r.digest().encode())
        return h.hexdigest()

    def manifest(self) -> dict:
        return {
            "base_seed": int(self.base_seed),
            "seed_rule": self.seed_rule,
            "rng": RNG_NAME,
            "replica_seeds": [r.seed for r in self.replicas],
            "params_digest": self.replicas[0].params_digest if self.replicas else None,
            "query_times": [float(t) for t in self.query_times],
            "torus": self.torus,
            "source": self.source,
            "acceptance": self.acceptance_stats(),
            "digest": self.digest(),
        }

    def save(self, directory):
        """Write ``manifest.json``, ``events_<i>.csv`` and ``snap_<q>.csv``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        width = max(5, len(str(len(self.replicas))))
        for i, r in enumerate(self.replicas):
            r.write_events(out / f"events_{i:0{width}d}.csv")
        d = self.replicas[0].initial.shape[1] if self.replicas else 1
        for qi, t in enumerate(self.query_times):
            with (out / f"snap_{qi:03d}.csv").open("w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["replica"] + [f"x_{k + 1}" for k in range(d)])
                for i, r in enumerate(self.replicas):
                    for p in r.snapshots[qi]:
                        w.writerow([i] + [repr(float(v)) for v in p])
        (out / "manifest.json").write_text(json.dumps(self.manifest(), indent=1, sort_keys=True))


def run_ensemble(source, n_replicas: int, t_max: float, params: ModelParams, base_seed: int,
                 query_times: Sequence[float] = (), torus: float | None = None) -> PathEnsemble:
    """Independent replicas with seeds derived from ``base_seed``.

    ``source`` is a fixed :class:`Configuration` (or point array) or a
    :class:`PoissonWindow`; Poisson initial states come from a stream derived
    from the replica seed and separate from the dynamics stream.
    """
    if n_replicas < 1:
        raise ValueError(f"n_replicas must be >= 1, got {n_replicas}")
    if isinstance(source, PoissonWindow):
        mean_n = source.kappa * source.volume
        src_meta = {"kind": "poisson", "kappa": source.kappa,
                    "low": list(source.low), "high": list(source.high)}
    else:
        fixed = source.points if isinstance(source, Configuration) else np.asarray(source, float)
        mean_n = fixed.shape[0] if fixed.ndim > 1 else fixed.size
        src_meta = {"kind": "fixed", "count": int(mean_n)}
    if n_replicas * mean_n * max(1.0, t_max) > EVENT_BUDGET:
        raise ValueError(f"estimated {n_replicas * mean_n * max(1.0, t_max):.3g} particle-events "
                         f"exceed the budget {EVENT_BUDGET:.0e}")
    q = _check_query(query_times, t_max)
    reps = []
    for i in range(n_replicas):
        s = replica_seed(base_seed, i)
        if isinstance(source, PoissonWindow):
            init_rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([s, 1])))
            g0 = source.sample(init_rng)
        else:
            g0 = source
        reps.append(simulate(g0, t_max, params, s, q, torus))
    return PathEnsemble(reps, q, int(base_seed), torus=torus, source=src_meta)
