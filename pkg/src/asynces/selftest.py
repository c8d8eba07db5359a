"""Fast built-in consistency checks behind `asynces selftest`.

Not a replacement for the test suite; a half-second sanity pass that the
installed package computes its update rules, schedules, and wire format
correctly on this machine.
"""

import numpy as np

from . import engine, timing, transport
from .config import ExperimentConfig
from .distribution import (
    MeanRuleConfig,
    VarianceRuleConfig,
    adaptive_population_size,
    apply_mean_update,
    update_ratio,
)
from .population import RoleCounter, compute_p_rl
from .timing import LatencyModel


def _checks():
    yield ("update ratio: full move accepts improvement",
           update_ratio(MeanRuleConfig(rule="full_move"), 2.0, 1.0) == 1.0)
    p = update_ratio(MeanRuleConfig(rule="sigmoid", r=1.0, p_positive=0.2), 5.0, 5.0)
    yield ("update ratio: sigmoid midpoint", abs(p - 0.1) < 1e-12)
    out = apply_mean_update(np.array([0.0, 2.0]), np.array([4.0, 0.0]), 0.25)
    yield ("mean step: quarter move", np.allclose(out, [1.0, 1.5]))
    yield ("adaptive population weight", adaptive_population_size(0.2) == 4.0
           and adaptive_population_size(0.0) is None)
    c = RoleCounter(n_rl=49, n_es=51, k_rl=50.0, p_desired=0.5)
    yield ("population controller saturation", compute_p_rl(c) == 1.0)

    durations = [1.0, 2.0, 3.0, 4.0, 5.0]
    stats = timing.simulate_timing(durations, 5)
    yield ("scheduling: one-wave idle arithmetic",
           stats["parallel_sync"].waiting_idle.sum() == 10.0
           and stats["serial"].makespan == 15.0)

    codec = transport.Codec(3, 1)
    frame = codec.encode(transport.EvaluateResult(fitness=1.0, steps=3))
    yield ("wire: empty result frame is 17 bytes", len(frame) == 17)
    msg, _ = codec.decode_frame(codec.encode(transport.Heartbeat()))
    yield ("wire: heartbeat round trip", isinstance(msg, transport.Heartbeat))

    cfg = ExperimentConfig(
        objective="sphere", dim=4, mu_init=0.5,
        mean_rule=MeanRuleConfig(rule="relative_baseline", f_b=0.01,
                                 p_positive=0.2, p_negative=0.05),
        var_rule=VarianceRuleConfig(rule="welford_adaptive"),
        sigma_init=0.3, scheduling="parallel_async", workers=2, max_steps=40,
        a_noise=0.0, seed=0, latency=LatencyModel(kind="constant", constant=1.0))
    r1 = engine.run_experiment(cfg)
    r2 = engine.run_experiment(cfg)
    yield ("engine: seeded run reproducible",
           np.array_equal(r1.dist.mu, r2.dist.mu)
           and r1.accounting.total_steps == r2.accounting.total_steps)


def run() -> int:
    failures = 0
    for name, ok in _checks():
        print("%s %s" % ("PASS" if ok else "FAIL", name))
        failures += 0 if ok else 1
    print("selftest: %s" % ("all checks passed" if not failures
                            else "%d check(s) failed" % failures))
    return 1 if failures else 0
