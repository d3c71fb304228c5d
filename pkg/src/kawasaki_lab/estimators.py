"""Monte Carlo estimators over path ensembles and the verification records
they produce.

Every check ends in a :class:`ReportRecord` whose verdict is computed from
``(measured, stderr, target, rule, n_sigma, budget)`` alone.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .combinatorics import touchard
from .configuration import (LP_SIZE_CAP, TestFunction, _weighted_support, bl_metric,
                            generator_samples)
from .model import ModelParams, psi, psi_mass, rho_eps
from .simulator import PathEnsemble

__all__ = [
    "ReportRecord",
    "CorrelationEstimate",
    "decide",
    "empirical_correlation",
    "moment_bounds",
    "fp_residual",
    "chentsov_functional",
    "chentsov",
    "alpha_convergence",
    "type_growth",
    "write_jsonl",
    "read_jsonl",
    "summary_table",
]

RULES = ("upper", "lower", "equal")


def decide(measured: float, stderr: float, target: float, rule: str,
           n_sigma: float = 4.0, budget: float = 0.0, flagged: bool = False) -> str:
    """``pass``/``fail``/``flagged`` from an explicit sigma rule.

    ``upper``: measured <= target + slack; ``lower``: measured >= target - slack;
    ``equal``: |measured - target| <= slack, with slack = n_sigma*stderr + budget.
    """
    if flagged:
        return "flagged"
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}")
    if not (math.isfinite(measured) and math.isfinite(target)):
        return "fail"
    slack = n_sigma * stderr + budget
    if rule == "upper":
        ok = measured <= target + slack
    elif rule == "lower":
        ok = measured >= target - slack
    else:
        ok = abs(measured - target) <= slack
    return "pass" if ok else "fail"


@dataclass(frozen=True)
class ReportRecord:
    check_id: str
    anchor: str
    measured: float
    stderr: float
    target: float
    rule: str
    n_sigma: float = 4.0
    budget: float = 0.0
    flagged: bool = False
    digest: str = ""
    details: dict = field(default_factory=dict)

    @property
    def verdict(self) -> str:
        return decide(self.measured, self.stderr, self.target, self.rule, self.n_sigma,
                      self.budget, self.flagged)

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        out = asdict(self)
        out["verdict"] = self.verdict
        return out

    def to_json(self) -> str:
        return json.dumps(_clean(self.to_dict()), sort_keys=True)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    return obj


def write_jsonl(records: Iterable[ReportRecord], path):
    with Path(path).open("w") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def read_jsonl(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]


def summary_table(records: Sequence[ReportRecord]) -> str:
    rows = [("check", "measured", "stderr", "target", "rule", "verdict")]
    for r in records:
        rows.append((r.check_id, f"{r.measured:.6g}", f"{r.stderr:.3g}", f"{r.target:.6g}",
                     f"{r.rule}/{r.n_sigma:g}s", r.verdict))
    widths = [max(len(row[i]) for row in rows) for i in range(len(rows[0]))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)) for row in rows)


def _digest(*parts) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
    return h.hexdigest()[:16]


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    values = np.asarray(values, float)
    n = values.shape[0]
    if n == 0:
        raise ValueError("empty sample")
    se = float(values.std(ddof=1) / math.sqrt(n)) if n > 1 else float("inf")
    return float(values.mean()), se


# ----------------------------------------------------------------------------
# correlation functions and moments


@dataclass(frozen=True)
class CorrelationEstimate:
    n: int
    edges: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    n_replicas: int


def _bin_counts(configs: list[np.ndarray], edges: np.ndarray) -> np.ndarray:
    out = np.empty((len(configs), len(edges) - 1))
    for i, c in enumerate(configs):
        out[i], _ = np.histogram(c[:, 0], bins=edges)
    return out


def empirical_correlation(ens: PathEnsemble, t: float, n: int, bins) -> CorrelationEstimate:
    """Binned ``k^(1)`` or ``k^(2)`` at time ``t`` (d = 1).

    ``k^(1)`` is the mean count per bin over bin length; ``k^(2)`` counts ordered
    pairs of distinct particles per bin pair over the product of bin lengths.
    """
    if len(ens) == 0:
        raise ValueError("empty ensemble")
    if n not in (1, 2):
        raise ValueError("only n = 1, 2 are estimated")
    edges = np.asarray(bins, float)
    vol = np.diff(edges)
    counts = _bin_counts(ens.configs_at(t), edges)
    R = counts.shape[0]
    if n == 1:
        samples = counts / vol
        mean = samples.mean(axis=0)
        se = samples.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full_like(mean, np.inf)
        return CorrelationEstimate(1, edges, mean, se, R)
    pairs = counts[:, :, None] * counts[:, None, :]
    idx = np.arange(len(vol))
    pairs[:, idx, idx] -= counts
    samples = pairs / np.outer(vol, vol)
    mean = samples.mean(axis=0)
    se = samples.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full_like(mean, np.inf)
    return CorrelationEstimate(2, edges, mean, se, R)


def _window_counts(configs, window) -> np.ndarray:
    lo, hi = (np.atleast_1d(np.asarray(w, float)) for w in window)
    return np.array([np.sum(np.all((c >= lo) & (c < hi), axis=1)) for c in configs], float)


def moment_bounds(ens: PathEnsemble, t: float, window, n_max: int, kappa: float,
                  beta: float = 0.5, growth: bool = True) -> list[ReportRecord]:
    """Sub-Poissonian moment bounds at time ``t``.

    With ``kappa_t = kappa e^t`` (or ``kappa`` when ``growth`` is False):
    ``E N^n <= T_n(kappa_t |window|)``, ``E Psi^n <= T_n(kappa_t <psi>)`` and
    ``E exp(beta Psi) <= exp(kappa_t <psi> (e^beta - 1))``, each with 4 sigma.
    """
    if not 1 <= n_max <= 4:
        raise ValueError("n_max must lie in 1..4")
    configs = ens.configs_at(t)
    lo, hi = (np.atleast_1d(np.asarray(w, float)) for w in window)
    vol = float(np.prod(hi - lo))
    kt = kappa * math.exp(t) if growth else kappa
    N = _window_counts(configs, window)
    Psi = np.array([float(psi(c).sum()) if c.shape[0] else 0.0 for c in configs])
    d = configs[0].shape[1] if configs else 1
    mpsi = psi_mass(d)
    dig = _digest(ens.digest(), t, tuple(lo), tuple(hi), kappa, beta, growth)
    recs = []
    for n in range(1, n_max + 1):
        m, se = _mean_se(N**n)
        recs.append(ReportRecord(f"moment_N^{n}@t={t:g}", "Poisson moments bound counts",
                                 m, se, touchard(n, kt * vol), "upper", 4.0, digest=dig))
        m, se = _mean_se(Psi**n)
        recs.append(ReportRecord(f"moment_Psi^{n}@t={t:g}", "tempered weight moments",
                                 m, se, touchard(n, kt * mpsi), "upper", 4.0, digest=dig))
    m, se = _mean_se(np.exp(beta * Psi))
    recs.append(ReportRecord(f"exp_moment_beta={beta:g}@t={t:g}", "exponential moment",
                             m, se, math.exp(kt * mpsi * math.expm1(beta)), "upper", 4.0,
                             digest=dig))
    return recs


# ----------------------------------------------------------------------------
# Fokker-Planck residual


def _generator_estimates(F: TestFunction, configs: list[np.ndarray], params: ModelParams,
                         rng: np.random.Generator, n_mc: int, torus) -> np.ndarray:
    out = np.zeros(len(configs))
    for i, c in enumerate(configs):
        n = c.shape[0]
        if n == 0:
            continue
        xi = params.kernel.sample(rng, n * n_mc).reshape(n, n_mc, -1)
        targets = c[:, None, :] + xi
        if torus is not None:
            targets = targets - torus * np.floor(targets / torus + 0.5)
        out[i] = generator_samples(F, c, targets, params, torus).mean(axis=1).sum()
    return out


def fp_residual(ens: PathEnsemble, F: TestFunction, t1: float, t2: float, params: ModelParams,
                n_mc: int = 1, seed: int = 0) -> ReportRecord:
    """``E F(t2) - E F(t1) - int_{t1}^{t2} E LF(u) du`` with per-replica pairing.

    ``LF`` is estimated without bias from ``n_mc`` kernel draws per particle;
    the integral is the trapezoid rule over recorded query times, and its
    error budget ``(t2-t1) dt^2/12 max|f''|`` uses second differences.
    """
    dig = _digest(ens.digest(), F.kind, F.tau, t1, t2, n_mc, seed)
    if t1 == t2:
        return ReportRecord("fp_residual", "weak evolution equation", 0.0, 0.0, 0.0, "equal",
                            4.0, digest=dig)
    if t2 < t1:
        raise ValueError("need t1 <= t2")
    q = ens.query_times
    sel = np.flatnonzero((q >= t1 - 1e-12) & (q <= t2 + 1e-12))
    if sel.size < 3:
        raise ValueError("fewer than 3 query times in [t1, t2]")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([int(ens.base_seed), int(seed), 7])))
    times = q[sel]
    LF = np.stack([_generator_estimates(F, ens.configs_at(u), params, rng, n_mc, ens.torus)
                   for u in times], axis=1)
    F1 = np.array([F(c) for c in ens.configs_at(times[0])])
    F2 = np.array([F(c) for c in ens.configs_at(times[-1])])
    integral = np.trapezoid(LF, times, axis=1)
    resid, se = _mean_se(F2 - F1 - integral)
    curve = LF.mean(axis=0)
    dt = np.diff(times)
    if times.size >= 3:
        second = np.abs(np.diff(curve, 2)) / (dt[:-1] * dt[1:])
        budget = (times[-1] - times[0]) * float(dt.max()) ** 2 / 12.0 * float(second.max())
    else:
        budget = 0.0
    rec = ReportRecord("fp_residual", "weak evolution equation", resid, se, 0.0, "equal", 4.0,
                       budget=4.0 * budget, digest=dig,
                       details={"t1": t1, "t2": t2, "n_times": int(times.size),
                                "time_budget": budget, "n_replicas": len(ens)})
    return rec


# ----------------------------------------------------------------------------
# Chentsov functional


def _capped(a: np.ndarray, b: np.ndarray):
    """Metric inputs, trimmed to the largest weights if the LP would be too big."""
    pts, w = _weighted_support(a, b)
    if len(w) <= LP_SIZE_CAP:
        return a, b, False
    keep = np.argsort(-np.abs(w), kind="stable")[:LP_SIZE_CAP]
    pts, w = pts[keep], w[keep]
    return pts[w > 0], pts[w < 0], True


def chentsov_functional(ens: PathEnsemble, t1: float, t2: float, t3: float):
    """Pathwise mean of ``v(g_t1, g_t2) v(g_t2, g_t3)`` with its standard error."""
    if not t1 <= t2 <= t3:
        raise ValueError("need t1 <= t2 <= t3")
    c1, c2, c3 = (ens.configs_at(t) for t in (t1, t2, t3))
    vals = np.empty(len(ens))
    flagged = False
    for i in range(len(ens)):
        a, b, f1 = _capped(c1[i], c2[i])
        d12 = bl_metric(a, b, size_cap=LP_SIZE_CAP)
        if d12 == 0.0:
            vals[i] = 0.0
            flagged |= f1
            continue
        a, b, f2 = _capped(c2[i], c3[i])
        vals[i] = d12 * bl_metric(a, b, size_cap=LP_SIZE_CAP)
        flagged |= f1 or f2
    m, se = _mean_se(vals)
    return m, se, flagged


def chentsov(ensembles: dict, ladder: Sequence[float] = (0.05, 0.1, 0.2, 0.4), t1: float = 0.0,
             min_slope: float = 1.7, ratio_range: tuple[float, float] = (0.2, 5.0)):
    """Dyadic-ladder scaling of the Chentsov functional for each ensemble.

    ``ensembles`` maps a label (typically alpha) to an ensemble recorded at
    ``t1``, ``t1 + s/2`` and ``t1 + s`` for every ``s`` in ``ladder``.  Returns
    the records and a dict of fits ``label -> (slope, C)`` where
    ``C = max_s W(s)/s^2``.
    """
    recs, fits = [], {}
    for label, ens in ensembles.items():
        W, S, flag = [], [], False
        for s in ladder:
            m, se, f = chentsov_functional(ens, t1, t1 + s / 2, t1 + s)
            W.append(m)
            S.append(se)
            flag |= f
        W, S = np.array(W), np.array(S)
        x = np.log(np.asarray(ladder, float))
        if np.any(W <= 0):
            slope, slope_se = float("nan"), float("inf")
        else:
            y = np.log(W)
            A = np.vstack([x, np.ones_like(x)]).T
            coef, *_ = np.linalg.lstsq(A, y, rcond=None)
            slope = float(coef[0])
            # delta-method error of the slope from per-point relative errors
            xc = x - x.mean()
            slope_se = float(math.sqrt(np.sum((xc / np.sum(xc**2)) ** 2 * (S / W) ** 2)))
        C = float(np.max(W / np.asarray(ladder, float) ** 2))
        fits[label] = (slope, C)
        recs.append(ReportRecord(f"chentsov_slope[{label}]", "quadratic increment bound",
                                 slope, slope_se, min_slope, "lower", 0.0, flagged=flag,
                                 digest=_digest(ens.digest(), tuple(ladder), t1),
                                 details={"ladder": list(ladder), "W": W.tolist(), "se": S.tolist(),
                                          "C": C}))
    if len(fits) >= 2:
        Cs = [c for _, c in fits.values()]
        ratio = max(Cs) / min(Cs) if min(Cs) > 0 else float("inf")
        recs.append(ReportRecord("chentsov_C_ratio", "uniform constant across alpha", ratio, 0.0,
                                 ratio_range[1], "upper", 0.0,
                                 flagged=False, digest=_digest(tuple(sorted(map(str, fits)))),
                                 details={"C": {str(k): v[1] for k, v in fits.items()},
                                          "lower": ratio_range[0]}))
    return recs, fits


# ----------------------------------------------------------------------------
# alpha ladder and type growth


def alpha_convergence(F: TestFunction, t: float, ensembles: dict, n_sigma: float = 2.0
                      ) -> ReportRecord:
    """Gaps ``|E_alpha F - E_0 F|`` along a decreasing alpha ladder.

    ``ensembles`` maps alpha to ensembles sharing seeds (common random
    numbers) and must contain ``0.0``.  Gaps use paired per-replica
    differences.  The record's measured value is the largest increase
    ``gap_next - gap - n_sigma * combined_se`` along the ladder (<= 0 passes).
    """
    if 0.0 not in ensembles:
        raise ValueError("the ladder needs the alpha = 0 reference")
    ref = np.array([F(c) for c in ensembles[0.0].configs_at(t)])
    alphas = sorted((a for a in ensembles if a != 0.0), reverse=True)
    gaps, ses = [], []
    for a in alphas:
        vals = np.array([F(c) for c in ensembles[a].configs_at(t)])
        if vals.shape != ref.shape:
            raise ValueError("ensembles must have matching replica counts")
        m, se = _mean_se(vals - ref)
        gaps.append(abs(m))
        ses.append(se)
    worst = -math.inf
    for j in range(len(alphas) - 1):
        comb = math.hypot(ses[j], ses[j + 1])
        worst = max(worst, gaps[j + 1] - gaps[j] - n_sigma * comb)
    if worst == -math.inf:
        worst = 0.0
    dig = _digest(tuple(ensembles[a].digest() for a in sorted(ensembles)), F.kind, F.tau, t)
    return ReportRecord("alpha_convergence", "approximation as alpha -> 0", worst, 0.0, 0.0,
                        "upper", 0.0, digest=dig,
                        details={"alphas": alphas, "gaps": gaps, "stderr": ses, "t": t})


def type_growth(ens: PathEnsemble, times: Sequence[float], kappa0: float, bins,
                c_a: float | None = None, eps: float = 0.5) -> list[ReportRecord]:
    """Bulk type ``max_bins k^(1)`` against ``kappa0 e^t`` (and ``2 kappa0 e^t`` for ``t < rho_eps``)."""
    recs = []
    rho = rho_eps(eps, c_a) if c_a is not None else None
    for t in times:
        est = empirical_correlation(ens, t, 1, bins)
        j = int(np.argmax(est.values))
        kh, se = float(est.values[j]), float(est.stderr[j])
        dig = _digest(ens.digest(), t, kappa0, tuple(np.asarray(bins, float)))
        recs.append(ReportRecord(f"type_growth@t={t:g}", "sub-Poissonian type ladder", kh, se,
                                 kappa0 * math.exp(t), "upper", 5.0, digest=dig))
        if rho is not None and t < rho:
            recs.append(ReportRecord(f"type_growth_short@t={t:g}", "short-time type bound", kh,
                                     se, 2.0 * kappa0 * math.exp(t), "upper", 5.0, digest=dig,
                                     details={"rho_eps": rho, "eps": eps}))
    return recs
