"""Discrete-event scheduling of evaluation workloads.

Quantifies what the scheduling mode alone costs: the same seeded latency
trace is fed to a serial schedule, a synchronous parallel schedule
(barrier per wave of workers), and a greedy asynchronous schedule, and
only makespan and idle accounting differ. Latencies come from episode
lengths (steps times a per-step cost), a lognormal model, or a constant.
"""

import heapq
from dataclasses import dataclass, field

import numpy as np

from . import envs, nets
from .distribution import PopulationDistribution, sample_individual

MODES = ("serial", "parallel_sync", "parallel_async")


@dataclass
class LatencyModel:
    kind: str = "from_steps"     # from_steps | lognormal | constant
    per_step_cost: float = 0.01  # seconds per environment step
    mu_log: float = 0.0
    sigma_log: float = 0.5
    constant: float = 1.0

    def validate(self):
        if self.kind not in ("from_steps", "lognormal", "constant"):
            raise ValueError("unknown latency model %r" % (self.kind,))
        if self.per_step_cost <= 0 or self.constant <= 0:
            raise ValueError("latencies must be positive")
        return self

    def draw(self, rng: np.random.Generator, steps: int | None = None) -> float:
        if self.kind == "constant":
            return self.constant
        if self.kind == "lognormal":
            return float(np.exp(self.mu_log + self.sigma_log * rng.standard_normal()))
        if steps is None:
            raise ValueError("from_steps latency needs an episode step count")
        return steps * self.per_step_cost


@dataclass
class ScheduleStats:
    mode: str
    workers: int
    makespan: float
    busy: np.ndarray
    idle: np.ndarray            # makespan minus busy, per worker (tail included)
    waiting_idle: np.ndarray    # idle accrued while unscheduled work remained
    n_jobs: int

    @property
    def idle_fraction(self) -> float:
        """Share of worker-time spent waiting while work remained."""
        total = self.workers * self.makespan
        return float(self.waiting_idle.sum() / total) if total > 0 else 0.0


def _stats(mode, n_workers, finish, busy, waiting, n_jobs):
    makespan = float(max(finish)) if n_jobs else 0.0
    busy = np.asarray(busy, dtype=np.float64)
    return ScheduleStats(mode=mode, workers=n_workers, makespan=makespan, busy=busy,
                         idle=makespan - busy, waiting_idle=np.asarray(waiting),
                         n_jobs=n_jobs)


def schedule_serial(durations) -> ScheduleStats:
    total = float(np.sum(durations))
    return _stats("serial", 1, [total], [total], [0.0], len(durations))


def schedule_parallel_sync(durations, workers: int) -> ScheduleStats:
    """Waves of one job per worker; every wave waits for its slowest member."""
    if workers < 1:
        raise ValueError("need at least one worker")
    durations = np.asarray(durations, dtype=np.float64)
    busy = np.zeros(workers)
    waiting = np.zeros(workers)
    now = 0.0
    for start in range(0, len(durations), workers):
        wave = durations[start:start + workers]
        barrier = float(wave.max())
        for w, d in enumerate(wave):
            busy[w] += d
            waiting[w] += barrier - d
        # workers beyond a partial final wave wait out the whole barrier
        for w in range(len(wave), workers):
            waiting[w] += barrier
        now += barrier
    finish = [now] * workers
    return _stats("parallel_sync", workers, finish, busy, waiting, len(durations))


def schedule_parallel_async(durations, workers: int) -> ScheduleStats:
    """Greedy redispatch: each finished worker immediately takes the next job."""
    if workers < 1:
        raise ValueError("need at least one worker")
    busy = np.zeros(workers)
    free = [(0.0, w) for w in range(workers)]  # (free time, worker id): id breaks ties
    heapq.heapify(free)
    finish = np.zeros(workers)
    for d in durations:
        t, w = heapq.heappop(free)
        busy[w] += d
        finish[w] = t + d
        heapq.heappush(free, (t + d, w))
    return _stats("parallel_async", workers, finish, busy, np.zeros(workers),
                  len(durations))


def schedule_trace(durations, workers: int, mode: str) -> ScheduleStats:
    if mode == "serial":
        return schedule_serial(durations)
    if mode == "parallel_sync":
        return schedule_parallel_sync(durations, workers)
    if mode == "parallel_async":
        return schedule_parallel_async(durations, workers)
    raise ValueError("unknown scheduling mode %r" % (mode,))


def episode_step_trace(env, hidden, sigma_init: float, n_evaluations: int,
                       rng: np.random.Generator, a_noise: float = 0.0) -> np.ndarray:
    """Episode lengths of policies drawn from the initial search distribution."""
    spec = nets.actor_spec(env.state_dim, env.action_dim, hidden)
    mu0 = nets.init_params(spec, rng)
    dist = PopulationDistribution(mu0, np.full(mu0.size, sigma_init ** 2))
    steps = np.empty(n_evaluations, dtype=np.int64)
    for i in range(n_evaluations):
        ind = sample_individual(dist, rng)
        steps[i] = envs.evaluate(ind.z, spec, env, a_noise, rng).steps
    return steps


def duration_trace(model: LatencyModel, n_evaluations: int, rng: np.random.Generator,
                   steps: np.ndarray | None = None) -> np.ndarray:
    model.validate()
    if model.kind == "from_steps":
        if steps is None:
            raise ValueError("from_steps model needs an episode step trace")
        return np.asarray(steps[:n_evaluations], dtype=np.float64) * model.per_step_cost
    return np.array([model.draw(rng) for _ in range(n_evaluations)])


def simulate_timing(durations, workers: int, modes=MODES) -> dict:
    """Schedule one trace under every mode; returns {mode: ScheduleStats}."""
    return {mode: schedule_trace(durations, workers, mode) for mode in modes}
