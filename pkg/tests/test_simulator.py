import json
import math

import numpy as np
import pytest

from kawasaki_lab.configuration import Configuration, make_poisson_window
from kawasaki_lab.model import JumpKernel, ModelParams, Potential
from kawasaki_lab.simulator import (SimulationError, _phi_radial, replica_seed, run_ensemble,
                                    simulate)
from kawasaki_lab.model import POTENTIAL_FAMILIES


def params_1d(family="gaussian", scale=1.0, height=0.0, alpha=0.0, pot="box", rng=1.0):
    return ModelParams(JumpKernel(family, scale, 1), Potential(pot, height, rng, 1), alpha)


def replay(path, t):
    x = path.initial.copy()
    for s, i, a, b in path.events():
        if s > t:
            break
        assert np.array_equal(x[i], a)
        x[i] = b
    return x


@pytest.mark.parametrize("family", POTENTIAL_FAMILIES)
def test_numba_potential_matches_model(family):
    pot = Potential(family, 0.8, 0.9, 1)
    code = POTENTIAL_FAMILIES.index(family)
    for r in np.linspace(0, 3 * pot.support_radius, 301):
        ref = float(pot.radial(r))
        assert _phi_radial(r, code, 0.8, 0.9, pot.support_radius) == pytest.approx(ref, abs=1e-15)


def test_conservation_and_cadlag_snapshots():
    p = params_1d(height=0.5, alpha=0.3)
    g0 = np.random.default_rng(0).uniform(-3, 3, size=(12, 1))
    q = [0.0, 0.1, 0.5, 1.3, 2.0]
    path = simulate(g0, 2.0, p, seed=5, query_times=q)
    assert path.snapshots.shape == (5, 12, 1)
    assert np.all(np.diff(path.event_times) > 0)
    for k, t in enumerate(q):
        assert np.array_equal(path.snapshots[k], replay(path, t))
        assert len(path.snapshot(t)) == 12
    assert np.array_equal(path.snapshots[0], g0)


def test_determinism_and_seed_sensitivity():
    p = params_1d(height=0.5)
    g0 = np.linspace(-2, 2, 9).reshape(-1, 1)
    a = simulate(g0, 1.0, p, 3, [0.5, 1.0])
    b = simulate(g0, 1.0, p, 3, [0.5, 1.0])
    c = simulate(g0, 1.0, p, 4, [0.5, 1.0])
    assert a.digest() == b.digest()
    assert a.digest() != c.digest()


def test_free_case_every_ring_is_a_jump():
    g0 = np.zeros((5, 1))
    path = simulate(g0, 3.0, params_1d(), 1)
    assert path.n_events == path.n_rings
    assert path.acceptance == 1.0


def test_free_case_jump_counts_are_poisson():
    T, n = 2.0, 4000
    g0 = np.zeros((1, 1))
    counts = np.array([simulate(g0, T, params_1d(), s).n_events for s in range(n)])
    assert abs(counts.mean() - T) < 4 * math.sqrt(T / n)
    assert abs(counts.var() - T) < 4 * math.sqrt(2 * T * T / n + T / n)


def test_repulsion_lowers_acceptance():
    src = make_poisson_window(1.0, (-3.0, 3.0))
    free = run_ensemble(src, 200, 1.0, params_1d(), 9)
    rep = run_ensemble(src, 200, 1.0, params_1d(height=1.0), 9)
    assert rep.acceptance_stats()["acceptance"] < free.acceptance_stats()["acceptance"]


def test_alpha_monotone_activity():
    src = make_poisson_window(0.5, (-6.0, 6.0))
    acts = []
    for alpha in (0.0, 0.2, 1.0):
        ens = run_ensemble(src, 300, 1.0, params_1d(height=0.3, alpha=alpha), 17)
        acts.append(np.array([r.n_events / max(r.n_particles, 1) for r in ens.replicas]))
    for lo, hi in zip(acts[1:], acts[:-1]):
        diff = hi - lo
        assert diff.mean() > -3 * diff.std() / math.sqrt(diff.size)
    assert acts[0].mean() > acts[2].mean()


def test_sub_poissonian_density():
    kappa = 0.5
    src = make_poisson_window(kappa, (-6.0, 6.0))
    q = [0.25, 0.5, 1.0]
    ens = run_ensemble(src, 1000, 1.0, params_1d(height=0.2), 23, q)
    for t in q:
        counts = np.array([np.sum(np.abs(x[:, 0]) <= 2.0) for x in ens.configs_at(t)]) / 4.0
        se = counts.std() / math.sqrt(counts.size)
        assert counts.mean() <= kappa * math.exp(t) + 5 * se


def test_torus_wraps_and_interacts_across_boundary():
    L = 10.0
    p = ModelParams(JumpKernel("uniform_ball", 0.05, 1), Potential("box", 50.0, 1.0, 1), 0.0)
    g0 = np.array([[-L / 2 + 0.1], [L / 2 - 0.1]])
    wrapped = simulate(g0, 5.0, p, 2, [5.0], torus=L)
    open_ = simulate(g0, 5.0, p, 2, [5.0])
    assert wrapped.n_events == 0 < wrapped.n_rings
    assert open_.n_events == open_.n_rings
    drift = simulate(np.zeros((3, 1)), 50.0, params_1d(scale=3.0), 4, [50.0], torus=L)
    assert np.all(drift.snapshots >= -L / 2) and np.all(drift.snapshots < L / 2)


def test_simulate_input_errors():
    p = params_1d()
    with pytest.raises(ValueError):
        simulate(np.zeros((1, 1)), 0.0, p, 1)
    with pytest.raises(ValueError):
        simulate(np.zeros((1, 1)), 1.0, p, 1, [2.0])
    with pytest.raises(ValueError):
        simulate(np.zeros((1, 2)), 1.0, p, 1)
    assert issubclass(SimulationError, RuntimeError)


def test_empty_configuration():
    path = simulate(np.zeros((0, 1)), 1.0, params_1d(), 1, [0.5])
    assert path.n_rings == 0 and path.snapshots.shape == (1, 0, 1)


# ensembles ------------------------------------------------------------------

def test_replica_seeds_distinct_and_stable():
    seeds = [replica_seed(42, i) for i in range(1000)]
    assert len(set(seeds)) == 1000
    assert seeds == [replica_seed(42, i) for i in range(1000)]
    assert replica_seed(43, 0) != seeds[0]


def test_ensemble_reproducible():
    src = make_poisson_window(0.5, (-4.0, 4.0))
    p = params_1d(height=0.4)
    a = run_ensemble(src, 50, 1.0, p, 7, [0.5, 1.0])
    b = run_ensemble(src, 50, 1.0, p, 7, [0.5, 1.0])
    assert a.digest() == b.digest()
    assert run_ensemble(src, 50, 1.0, p, 8, [0.5, 1.0]).digest() != a.digest()


def test_single_replica_matches_simulate():
    g0 = Configuration(np.linspace(-1, 1, 4).reshape(-1, 1))
    p = params_1d(height=0.4)
    ens = run_ensemble(g0, 1, 1.0, p, 11, [1.0])
    one = simulate(g0, 1.0, p, replica_seed(11, 0), [1.0])
    assert ens.replicas[0].digest() == one.digest()


def test_poisson_source_mean_count():
    src = make_poisson_window(0.5, (-5.0, 5.0))
    ens = run_ensemble(src, 2000, 0.1, params_1d(), 3, [0.0])
    n = np.array([r.n_particles for r in ens.replicas])
    assert abs(n.mean() - 5.0) < 4 * math.sqrt(5.0 / n.size)


def test_ensemble_guards():
    src = make_poisson_window(1.0, (0.0, 1000.0))
    with pytest.raises(ValueError):
        run_ensemble(src, 20000, 1.0, params_1d(), 0)
    with pytest.raises(ValueError):
        run_ensemble(src, 0, 1.0, params_1d(), 0)


def test_ensemble_save(tmp_path):
    src = make_poisson_window(0.5, (-2.0, 2.0))
    ens = run_ensemble(src, 3, 1.0, params_1d(height=0.2), 5, [0.0, 1.0])
    ens.save(tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["digest"] == ens.digest()
    assert len(man["replica_seeds"]) == 3
    assert sorted(p.name for p in tmp_path.glob("events_*.csv")) == \
        ["events_00000.csv", "events_00001.csv", "events_00002.csv"]
    rows = (tmp_path / "snap_001.csv").read_text().splitlines()
    assert rows[0] == "replica,x_1"
    assert len(rows) - 1 == sum(r.n_particles for r in ens.replicas)
