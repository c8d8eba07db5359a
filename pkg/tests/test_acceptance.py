"""Acceptance suite: one test per criterion, in order, each printing a
pass line (run with `pytest tests/test_acceptance.py -v -s`).

Calibrated thresholds live in thresholds.py next to their provenance;
the reference runs that derived them are committed under calibration/.
"""

import json
from pathlib import Path

import numpy as np
import pytest

from asynces import engine, envs, nets, rl, runlog, timing, transport
from asynces.config import ExperimentConfig, load_config
from asynces.distribution import (
    DistributionUpdater,
    Individual,
    MeanRuleConfig,
    PopulationDistribution,
    VarianceRuleConfig,
    adaptive_population_size,
    apply_mean_update,
    rank_based_mean_sync,
    rank_based_variance_sync,
    sample_individual,
    success_rule_variance,
    update_ratio,
    welford_variance_update,
    elite_weights,
)
from asynces.population import RoleCounter, assign_role, compute_p_rl
from asynces.timing import LatencyModel

from thresholds import PENDULUM_STEP_BUDGET, PENDULUM_TEST_RETURN, SPHERE_TARGET_FITNESS

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
TOL = 1e-9


def report(name):
    print("\n[acceptance] %s: PASS" % name)


# -- criterion 1: update-rule oracle suite --------------------------------------


def test_c1_update_rule_oracles():
    # exact-arithmetic update-ratio cases
    assert update_ratio(MeanRuleConfig(rule="full_move"), 2.0, 1.0) == 1.0
    assert update_ratio(MeanRuleConfig(rule="full_move"), 1.0, 1.0) == 0.0
    assert abs(update_ratio(MeanRuleConfig(rule="sigmoid", r=1.0, p_positive=0.2),
                            5.0, 5.0) - 0.1) < TOL
    assert abs(update_ratio(MeanRuleConfig(rule="linear", r=2.0, p_positive=0.1,
                                           p_negative=0.0), 1.0, 0.0) - 0.05) < TOL
    assert abs(update_ratio(MeanRuleConfig(rule="absolute_baseline", f_b=-1.0),
                            3.0, 3.0) - 0.5) < TOL
    rel = MeanRuleConfig(rule="relative_baseline", f_b=2.0, p_positive=0.2)
    assert abs(update_ratio(rel, 5.0, 5.0) - 0.1) < TOL
    assert update_ratio(rel, 1.0, 5.0) == 0.0  # f_z = f_mu - 2 f_b

    # mean step
    assert np.allclose(apply_mean_update(np.array([0.0, 2.0]), np.array([4.0, 0.0]),
                                         0.25), [1.0, 1.5], atol=TOL)
    mu = np.array([1.0, -1.0])
    assert np.array_equal(apply_mean_update(mu, np.array([9.0, 9.0]), 0.0), mu)
    assert np.array_equal(apply_mean_update(mu, np.array([9.0, 9.0]), 1.0),
                          np.array([9.0, 9.0]))

    # rank-based recombination
    assert np.allclose(rank_based_mean_sync(
        [Individual(z=np.array([2.0, 0.0])), Individual(z=np.array([0.0, 2.0]))],
        "uniform"), [1.0, 1.0], atol=TOL)
    z1 = np.array([7.0, -3.0])
    assert np.array_equal(rank_based_mean_sync([Individual(z=z1)]), z1)
    for k in (2, 5, 11):
        assert abs(elite_weights(k, "log_rank").sum() - 1.0) < 1e-12

    # rank-based variance
    assert np.allclose(rank_based_variance_sync(
        [Individual(z=np.array([1.0])), Individual(z=np.array([-1.0]))],
        np.array([0.0]), 0.0), [1.0], atol=TOL)
    mu2 = np.array([0.5, 0.5])
    out = rank_based_variance_sync([Individual(z=mu2.copy()) for _ in range(3)],
                                   mu2, 1e-5)
    assert np.allclose(out, 1e-5, atol=TOL) and np.all(out >= 1e-5)

    # FIFO rank rule: damped step and age-based eviction
    d = PopulationDistribution(np.array([0.0]), np.array([1e-5]), epsilon_floor=1e-5)
    upd = DistributionUpdater(d, MeanRuleConfig(rule="rank_async_oldest", k_elite=1),
                              VarianceRuleConfig(rule="rank_sync"), population_size=2)
    upd.apply(5.0, np.array([2.0]))
    assert np.allclose(d.mu, [1.0], atol=TOL)
    d2 = PopulationDistribution(np.array([3.0]), np.array([1e-5]), epsilon_floor=1e-5)
    upd2 = DistributionUpdater(d2, MeanRuleConfig(rule="rank_async_oldest", k_elite=2),
                               VarianceRuleConfig(rule="rank_sync"), population_size=3)
    for _ in range(5):
        upd2.apply(1.0, np.array([3.0]))
    assert np.allclose(d2.mu, [3.0], atol=TOL)  # fixed point
    for fit, z in [(100.0, 0.1), (1.0, 0.2), (2.0, 0.3), (3.0, 0.4)]:
        upd2.apply(fit, np.array([z]))
    assert [i.fitness for i in upd2.fifo] == [1.0, 2.0, 3.0]  # strict FIFO

    # streaming variance
    assert np.allclose(welford_variance_update(np.array([1.0]), np.array([2.0]),
                                               np.array([0.0]), np.array([1.0]),
                                               2.0, 1e-15), [1.5], atol=TOL)
    m = np.array([0.7])
    assert np.allclose(welford_variance_update(np.array([2.0]), m, m, m, 4.0, 1e-15),
                       [1.5], atol=TOL)
    s2 = np.array([0.3, 0.9])
    assert np.allclose(welford_variance_update(s2, np.array([4.0, 4.0]), np.zeros(2),
                                               np.ones(2), 1e15, 1e-15), s2, atol=1e-12)

    # adaptive population weight
    assert adaptive_population_size(0.5) == 1.0
    assert abs(adaptive_population_size(0.2) - 4.0) < TOL
    assert adaptive_population_size(0.0) is None

    # one-fifth success rule
    cfg = VarianceRuleConfig(rule="success_rule", window=10)
    s2 = np.array([1.0])
    assert np.allclose(success_rule_variance(s2, [True] * 10, cfg, 1e-15),
                       (1 / 0.817) ** 2, atol=TOL)
    assert np.allclose(success_rule_variance(s2, [True] * 2 + [False] * 8, cfg, 1e-15),
                       s2, atol=TOL)
    shrunk = success_rule_variance(np.array([1e-5, 1.0]), [False] * 10, cfg, 1e-5)
    assert shrunk[1] < 1.0 and np.all(shrunk >= 1e-5)

    # sampling: degeneracy, statistical moments, determinism
    eps = 1e-12
    d = PopulationDistribution(np.array([1.0, -2.0]), np.array([eps, eps]),
                               epsilon_floor=eps)
    z = sample_individual(d, np.random.default_rng(0)).z
    assert np.all(np.abs(z - d.mu) <= 6 * np.sqrt(eps))
    d = PopulationDistribution(np.zeros(2), np.ones(2), epsilon_floor=1e-12)
    rng = np.random.default_rng(99)
    zs = np.stack([sample_individual(d, rng).z for _ in range(100_000)])
    assert np.all(np.abs(zs.mean(axis=0)) <= 0.02)
    assert np.all((zs.var(axis=0) >= 0.97) & (zs.var(axis=0) <= 1.03))
    assert np.array_equal(sample_individual(d, np.random.default_rng(1)).z,
                          sample_individual(d, np.random.default_rng(1)).z)

    # population-control oracle cases
    assert compute_p_rl(RoleCounter(n_rl=3, n_es=3, p_desired=0.5)) == pytest.approx(0.5)
    assert compute_p_rl(RoleCounter(n_rl=60, n_es=40, k_rl=50.0, p_desired=0.5)) == 0.0
    assert compute_p_rl(RoleCounter(n_rl=49, n_es=51, k_rl=50.0, p_desired=0.5)) == 1.0
    guard = RoleCounter(p_desired=0.9, rl_start_step=100)
    assert all(assign_role(guard, 99, 0.0) == "es" for _ in range(10))
    mc = RoleCounter(k_rl=50.0, p_desired=0.5, rl_start_step=0)
    rng = np.random.default_rng(5)
    for _ in range(1000):
        assign_role(mc, 10**6, rng.random())
    assert 0.45 <= mc.rl_fraction <= 0.55
    report("C1 update-rule oracle suite")


# -- criterion 2: Welford closed-form equivalence ---------------------------------


def test_c2_welford_geometric_closed_form():
    z = np.array([2.0, -1.0, 0.25])
    mu = np.array([0.5, 0.5, -0.5])
    target = (z - mu) * (z - mu)
    for n in (2, 5, 20):
        s2 = np.array([4.0, 9.0, 0.04])
        gap0 = np.abs(s2 - target)
        for k in range(1, 101):
            s2 = welford_variance_update(s2, z, mu, mu, float(n), 1e-18)
            closed = gap0 * (1.0 - 1.0 / n) ** k
            assert np.all(np.abs(np.abs(s2 - target) - closed) < 1e-9)
    report("C2 Welford closed-form equivalence (n in {2, 5, 20})")


# -- criterion 3: population-control convergence ----------------------------------


def test_c3_population_control_convergence():
    for p_desired in (0.1, 0.5):
        for seed in range(20):
            c = RoleCounter(k_rl=50.0, p_desired=p_desired, rl_start_step=0)
            rng = np.random.default_rng(seed)
            for _ in range(10_000):
                assign_role(c, 10**6, rng.random())
            assert abs(c.rl_fraction - p_desired) < 0.02, (p_desired, seed)
    report("C3 population-control convergence (20 seeds, both targets)")


# -- criterion 4: gradient checks ---------------------------------------------------


def test_c4_gradient_checks():
    shapes = [nets.critic_spec(4, 1, (8, 8)),
              nets.actor_spec(3, 2, (12, 12)),
              nets.MlpSpec((5, 16, 4), hidden="leaky_relu", output="tanh")]
    rng = np.random.default_rng(17)
    step = 1e-5
    for spec in shapes:
        assert nets.param_count(spec) <= 1000
        params = nets.init_params(spec, rng)
        x = rng.standard_normal((6, spec.in_dim))
        upstream = rng.standard_normal((6, spec.out_dim))
        _, cache = nets.forward_cached(spec, params, x)
        grad, _ = nets.backward(spec, params, cache, upstream)
        fd = np.zeros_like(params)
        for i in range(params.size):
            hi, lo = params.copy(), params.copy()
            hi[i] += step
            lo[i] -= step
            fd[i] = (np.sum(nets.forward(spec, hi, x) * upstream)
                     - np.sum(nets.forward(spec, lo, x) * upstream)) / (2 * step)
        rel = np.abs(grad - fd) / (np.abs(fd) + 1e-8)
        assert rel.max() < 1e-4, spec
    report("C4 gradient checks on three layer shapes")


# -- criterion 5: ES convergence and rule ordering -----------------------------------


def sphere_run(mean_rule, var_rule, seed):
    cfg = ExperimentConfig(
        objective="sphere", dim=20, mu_init=0.5, mean_rule=mean_rule,
        var_rule=var_rule, sigma_init=0.3, epsilon_floor=1e-4,
        scheduling="parallel_async", workers=1, max_steps=2000, a_noise=0.0,
        seed=seed, latency=LatencyModel(kind="constant", constant=1.0))
    res = engine.run_experiment(cfg)
    return envs.synthetic_fitness("sphere", np.asarray(res.dist.mu, float))


REL = MeanRuleConfig(rule="relative_baseline", f_b=0.002, p_positive=0.2,
                     p_negative=0.05)
SIG = MeanRuleConfig(rule="sigmoid", r=0.1, p_positive=0.2, p_negative=0.0)
RANK = MeanRuleConfig(rule="rank_async_oldest", k_elite=5)
ADAPTIVE = VarianceRuleConfig(rule="welford_adaptive")

SEEDS_10 = range(10)


def test_c5_sphere_convergence_and_ordering():
    rel = [sphere_run(REL, ADAPTIVE, s) for s in SEEDS_10]
    hits = sum(1 for f in rel if f > SPHERE_TARGET_FITNESS)
    assert hits >= 9, rel

    sig = [sphere_run(SIG, ADAPTIVE, s) for s in SEEDS_10]
    rank = [sphere_run(RANK, VarianceRuleConfig(rule="rank_sync"), s) for s in SEEDS_10]
    assert np.mean(rel) >= np.mean(sig)
    assert np.mean(rel) > np.mean(rank)
    assert np.mean(sig) > np.mean(rank)
    report("C5 sphere convergence %d/10 above %g; ordering rel(%.2g) >= sig(%.2g) "
           "> rank(%.2g)" % (hits, SPHERE_TARGET_FITNESS, np.mean(rel),
                             np.mean(sig), np.mean(rank)))


# -- criterion 6: hybrid learning beats the ES-only ablation ---------------------------


def pendulum_steps_to_threshold(seed, p_desired):
    cfg = load_config(CONFIGS / "pendulum_hybrid.ini", [
        "run.seed=%d" % seed,
        "population_control.p_desired=%g" % p_desired,
    ])
    cfg.stop_at_test_fitness = PENDULUM_TEST_RETURN
    res = engine.run_experiment(cfg)
    for row in res.accounting.curve:
        if row["mean_fitness"] >= PENDULUM_TEST_RETURN:
            return row["total_steps"]
    return PENDULUM_STEP_BUDGET


def test_c6_hybrid_sample_efficiency():
    hybrid = [pendulum_steps_to_threshold(seed, 0.5) for seed in range(5)]
    solved = sum(1 for s in hybrid if s < PENDULUM_STEP_BUDGET)
    assert solved >= 4, hybrid
    es_only = [pendulum_steps_to_threshold(seed, 0.0) for seed in range(5)]
    assert np.mean(hybrid) < np.mean(es_only), (hybrid, es_only)
    report("C6 hybrid solved %d/5 (steps %s), ES-only mean %d"
           % (solved, hybrid, int(np.mean(es_only))))


# -- criterion 7: timing study ----------------------------------------------------------


def pendulum_length_pool(n=400, seed=0):
    env = envs.PendulumEnv()
    return timing.episode_step_trace(env, (8, 8), 0.3, n,
                                     np.random.default_rng(seed), a_noise=0.1)


def test_c7_timing_study():
    pool = pendulum_length_pool()
    model = LatencyModel(kind="from_steps", per_step_cost=0.01)

    # (a) strict makespan ordering across 100 seeded traces
    ordered = 0
    for trace_seed in range(100):
        rng = np.random.default_rng(1000 + trace_seed)
        steps = rng.choice(pool, size=200)
        durations = timing.duration_trace(model, 200, rng, steps)
        stats = timing.simulate_timing(durations, 5)
        if (stats["serial"].makespan > stats["parallel_sync"].makespan
                > stats["parallel_async"].makespan):
            ordered += 1
    assert ordered >= 99, ordered

    # (b) constant latency divides exactly across five workers (a dyadic
    # constant keeps both accumulation orders exact in floating point)
    const = timing.duration_trace(LatencyModel(kind="constant", constant=2.0), 200,
                                  np.random.default_rng(0))
    stats = timing.simulate_timing(const, 5)
    assert stats["parallel_sync"].makespan == stats["serial"].makespan / 5
    assert stats["parallel_async"].makespan == stats["serial"].makespan / 5

    # (c) idle-while-work-remains fractions under lognormal latencies
    rng = np.random.default_rng(7)
    lognorm = timing.duration_trace(LatencyModel(kind="lognormal", sigma_log=0.5),
                                    200, rng)
    stats = timing.simulate_timing(lognorm, 5)
    assert stats["parallel_async"].idle_fraction < 0.01
    assert stats["parallel_sync"].idle_fraction > 0.10

    # (d) async makespan is monotone non-increasing in the worker count
    rng = np.random.default_rng(3)
    steps = rng.choice(pool, size=200)
    durations = timing.duration_trace(model, 200, rng, steps)
    spans = [timing.schedule_trace(durations, w, "parallel_async").makespan
             for w in range(2, 10)]
    assert all(b <= a + 1e-9 for a, b in zip(spans, spans[1:])), spans
    report("C7 timing study (ordering %d/100, exact /5 split, idle %.2g%% vs %.1f%%)"
           % (ordered, 100 * stats["parallel_async"].idle_fraction,
              100 * stats["parallel_sync"].idle_fraction))


# -- criterion 8: determinism and replay ---------------------------------------------


def test_c8_determinism_and_replay(tmp_path):
    cfg_kw = dict(
        objective="sphere", dim=12, mu_init=0.5,
        mean_rule=MeanRuleConfig(rule="relative_baseline", f_b=0.01,
                                 p_positive=0.2, p_negative=0.05),
        var_rule=VarianceRuleConfig(rule="welford_adaptive"),
        sigma_init=0.3, epsilon_floor=1e-4, scheduling="parallel_async",
        workers=3, max_steps=400, a_noise=0.0, seed=21, float32=True,
        latency=LatencyModel(kind="constant", constant=1.0))

    paths = []
    for name in ("a", "b"):
        log_path = tmp_path / ("%s.jsonl" % name)
        log = runlog.RunLog(log_path)
        res = engine.run_experiment(ExperimentConfig(**cfg_kw), log=log)
        log.close()
        paths.append((log_path, res))
    (log1, res1), (log2, res2) = paths
    assert log1.read_bytes() == log2.read_bytes()
    assert np.array_equal(res1.dist.mu, res2.dist.mu)

    crcs = runlog.mu_trajectory(log1)
    rep = runlog.replay_log(log1)  # verifies every per-update checksum
    assert rep.n_events >= len(crcs) and crcs
    assert np.array_equal(rep.dist.mu, res1.dist.mu)
    assert np.array_equal(rep.dist.sigma2, res1.dist.sigma2)
    report("C8 determinism and replay (%d events, bit-identical)" % rep.n_events)


# -- criterion 9: transport equivalence ------------------------------------------------


def hybrid_cfg_small(seed=4):
    return ExperimentConfig(
        objective="pendulum", hidden=(8, 8),
        mean_rule=MeanRuleConfig(rule="relative_baseline", f_b=300.0,
                                 p_positive=0.2, p_negative=0.05),
        var_rule=VarianceRuleConfig(rule="welford_adaptive"),
        sigma_init=0.1, scheduling="parallel_async", workers=3, max_steps=2500,
        a_noise=0.1, seed=seed, float32=True,
        p_desired=0.5, rl_start_step=500,
        rl=rl.RlHyper(optimizer="adam", batch_size=64),
        latency=LatencyModel(kind="from_steps", per_step_cost=0.01))


def test_c9_transport_equivalence(tmp_path):
    logs = {}
    for mode in ("inproc", "socket"):
        cfg = hybrid_cfg_small()
        log_path = tmp_path / ("%s.jsonl" % mode)
        log = runlog.RunLog(log_path)
        evaluators = None
        if mode == "socket":
            objective = engine.build_objective(cfg)
            spec = engine.build_actor_spec(cfg, objective)
            evaluators = transport.socket_evaluators(cfg, objective, spec, cfg.workers)
        engine.run_experiment(cfg, evaluators=evaluators, log=log)
        log.close()
        logs[mode] = log_path.read_bytes()
    assert logs["inproc"] == logs["socket"]

    # frame-split fuzzing: at least 1e5 random splits, no boundary corruption
    codec = transport.Codec(3, 1)
    rng = np.random.default_rng(12)
    msgs = []
    stream = bytearray()
    while len(stream) < 700_000:
        m = transport.EvaluateRequest(seed=int(rng.integers(0, 2**62)),
                                      a_noise=float(rng.random()))
        if len(msgs) % 3 == 0:
            m = transport.SetActorWeights(
                rng.standard_normal(int(rng.integers(1, 8))).astype(np.float32))
        elif len(msgs) % 7 == 0:
            m = transport.Heartbeat()
        msgs.append(m)
        stream.extend(codec.encode(m))
    decoder = transport.FrameDecoder(codec)
    out = []
    splits = 0
    i = 0
    while i < len(stream):
        j = i + int(rng.integers(1, 12))
        out.extend(decoder.feed(bytes(stream[i:j])))
        splits += 1
        i = j
    assert splits >= 100_000
    assert len(out) == len(msgs)
    assert decoder.pending_bytes == 0
    for a, b in zip(msgs, out):
        assert type(a) is type(b)
    report("C9 transport equivalence (identical logs; %d fuzz splits)" % splits)


# -- criterion 10: ablation directions ---------------------------------------------------


def test_c10_ablation_directions():
    adaptive = [sphere_run(REL, ADAPTIVE, s) for s in SEEDS_10]
    constant = [sphere_run(REL, VarianceRuleConfig(rule="constant",
                                                   constant_value=1e-3), s)
                for s in SEEDS_10]
    rank = [sphere_run(RANK, VarianceRuleConfig(rule="rank_sync"), s) for s in SEEDS_10]
    assert np.mean(constant) < np.mean(adaptive)
    assert np.mean(rank) < np.mean(adaptive)
    report("C10 ablations (const %.3g < adaptive %.3g; rank %.3g < relative)"
           % (np.mean(constant), np.mean(adaptive), np.mean(rank)))
