"""Master loop: dispatch evaluations, apply updates in arrival order.

Three scheduling modes share the accounting: serial and synchronous runs
update the distribution once per generation behind a barrier, the
asynchronous run updates it per arriving result and redispatches the
worker immediately. The default clock is a deterministic discrete-event
simulation; evaluations are computed eagerly at dispatch but their
effects (buffer fill, distribution update, step accounting) land at the
virtual completion time. A real wall-clock mode exists for demonstration.

Everything that mutates shared state (distribution, role counters, replay
buffer, critic) happens on the master, in (time, worker id) order, so a
seeded simulated run is reproducible bit for bit.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import envs, nets, rl, timing
from .distribution import (
    ROLE_ES,
    ROLE_RL,
    DistributionUpdater,
    Individual,
    PopulationDistribution,
    sample_individual,
)
from .population import RoleCounter, assign_role


class RunError(RuntimeError):
    """The run could not proceed (repeated worker failures, bad setup)."""


@dataclass
class WorkerSlot:
    id: int
    state: str = "idle"                 # idle | evaluating | training_actor
    job = None
    busy_until: float = 0.0


@dataclass
class RunAccounting:
    mode: str
    workers: int
    total_steps: int = 0
    makespan: float = 0.0
    busy: np.ndarray = None
    waiting_idle: np.ndarray = None     # idle while work remained (sync barriers)
    n_updates: int = 0
    n_refreshes: int = 0
    n_generations: int = 0
    n_failures: int = 0
    best_fitness: float = -math.inf
    steps_to_best: int = 0
    abs_p_by_role: dict = field(default_factory=lambda: {ROLE_ES: 0.0, ROLE_RL: 0.0})
    updates_by_role: dict = field(default_factory=lambda: {ROLE_ES: 0, ROLE_RL: 0})
    curve: list = field(default_factory=list)

    @property
    def idle(self):
        return self.makespan - self.busy

    def contribution_shares(self):
        """Share of accumulated |p| contributed by each role."""
        total = sum(self.abs_p_by_role.values())
        if total == 0.0:
            return {ROLE_ES: 0.0, ROLE_RL: 0.0}
        return {k: v / total for k, v in self.abs_p_by_role.items()}

    def note_fitness(self, fitness: float):
        if fitness > self.best_fitness:
            self.best_fitness = fitness
            self.steps_to_best = self.total_steps


@dataclass
class RunResult:
    accounting: RunAccounting
    dist: PopulationDistribution
    updater: DistributionUpdater
    counter: RoleCounter
    critic: rl.CriticState | None = None


@dataclass
class Job:
    kind: str                           # eval | refresh
    params: np.ndarray
    role: str | None
    seed: int
    steps: int = 0
    fitness: float = 0.0
    transitions: list = field(default_factory=list)
    actor_trained: bool = False


class InProcessEvaluator:
    """Evaluates parameter vectors directly; one instance per worker slot.

    With ``float32`` set, parameters and results are quantized exactly as
    the wire protocol would quantize them, so in-process and socket runs
    are interchangeable.
    """

    def __init__(self, objective, actor_spec=None, float32=False):
        self.objective = objective
        self.actor_spec = actor_spec
        self.float32 = float32

    def evaluate(self, params: np.ndarray, seed: int, a_noise: float) -> envs.EvalResult:
        if self.float32:
            params = np.asarray(params, dtype=np.float32)
        if not self.objective.episodic:
            fitness = self.objective.fitness(np.asarray(params, dtype=np.float64))
            if self.float32:
                fitness = float(np.float32(fitness))
            return envs.EvalResult(total_reward=fitness, steps=1, transitions=[])
        rng = np.random.default_rng(seed)
        res = envs.evaluate(np.asarray(params, dtype=np.float64), self.actor_spec,
                            self.objective, a_noise, rng)
        if self.float32:
            res = _quantize_result(res)
        return res

    def close(self):
        pass


def _quantize_result(res: envs.EvalResult) -> envs.EvalResult:
    """Round every field through float32, matching the wire encoding."""
    out = []
    for tr in res.transitions:
        out.append(envs.Transition(
            state=tr.state.astype(np.float32),
            action=tr.action.astype(np.float32),
            reward=float(np.float32(tr.reward)),
            next_state=tr.next_state.astype(np.float32),
            done=tr.done))
    return envs.EvalResult(total_reward=float(np.float32(res.total_reward)),
                           steps=res.steps, transitions=out)


def build_objective(cfg):
    if cfg.objective in ("sphere", "rastrigin"):
        return envs.SyntheticObjective(cfg.objective, cfg.dim)
    return envs.make_env(cfg.objective, max_steps=cfg.max_episode_steps, **cfg.env_params)


def build_actor_spec(cfg, objective):
    if objective.episodic:
        return nets.actor_spec(objective.state_dim, objective.action_dim, cfg.hidden)
    return None


def make_evaluators(cfg, objective, actor_spec, n: int):
    return [InProcessEvaluator(objective, actor_spec, cfg.float32) for _ in range(n)]


class _Run:
    """Shared state for one run; subclasses drive the schedule."""

    def __init__(self, cfg, evaluators=None, log=None):
        cfg.validate()
        self.cfg = cfg
        self.log = log
        self.dtype = np.float32 if cfg.float32 else np.float64
        self.objective = build_objective(cfg)
        self.actor_spec = build_actor_spec(cfg, self.objective)
        self.critic_spec = None

        ss = np.random.SeedSequence(cfg.seed)
        (self.rng_init, self.rng_sample, self.rng_role, self.rng_latency,
         self.rng_jobseed, self.rng_rl) = map(np.random.default_rng, ss.spawn(6))

        mu0 = self._initial_mean()
        self.dist = PopulationDistribution(
            mu0, np.full(mu0.size, cfg.sigma_init ** 2),
            epsilon_floor=cfg.epsilon_floor, dtype=self.dtype)
        self.updater = DistributionUpdater(
            self.dist, cfg.mean_rule, cfg.var_rule, population_size=cfg.population_size,
            refresh_abs_p=cfg.refresh_abs_p, refresh_every=cfg.refresh_every)
        self.counter = RoleCounter(k_rl=cfg.k_rl, p_desired=cfg.p_desired,
                                   rl_start_step=cfg.rl_start_step)

        self.rl_enabled = cfg.p_desired > 0.0 and self.objective.episodic
        self.buffer = None
        self.critic = None
        if self.rl_enabled:
            self.critic_spec = nets.critic_spec(self.objective.state_dim,
                                                self.objective.action_dim, cfg.hidden)
            self.buffer = rl.ReplayBuffer(cfg.replay_capacity, self.objective.state_dim,
                                          self.objective.action_dim, dtype=self.dtype)
            self.critic = rl.CriticState(self.actor_spec, self.critic_spec, cfg.rl,
                                         self.rng_rl, dtype=self.dtype)
            self.critic.set_actor_target(self.dist.mu)

        n_workers = 1 if cfg.scheduling == "serial" else cfg.workers
        self.evaluators = evaluators or make_evaluators(cfg, self.objective,
                                                        self.actor_spec, n_workers)
        if len(self.evaluators) != n_workers:
            raise RunError("need one evaluator per worker")
        self.acct = RunAccounting(mode=cfg.scheduling, workers=n_workers,
                                  busy=np.zeros(n_workers),
                                  waiting_idle=np.zeros(n_workers))
        self.last_episode_steps = self.objective.max_steps if self.objective.episodic else 1
        self._critic_step_debt = 0.0
        self._next_test_at = cfg.test_every if cfg.test_every else None
        self._test_index = 0
        self.stopped_early = False

    # -- setup helpers -------------------------------------------------------

    def _initial_mean(self):
        if self.objective.episodic:
            return nets.init_params(self.actor_spec, self.rng_init, dtype=self.dtype)
        return np.full(self.cfg.dim, self.cfg.mu_init, dtype=self.dtype)

    def _job_seed(self) -> int:
        return int(self.rng_jobseed.integers(0, 2 ** 63))

    def _emit(self, event: dict):
        if self.log is not None:
            self.log.write(event)

    # -- evaluation plumbing -------------------------------------------------

    def _evaluate_job(self, worker: int, job: Job):
        res = self.evaluators[worker].evaluate(job.params, job.seed, self.cfg.a_noise)
        job.fitness = res.total_reward
        job.steps = res.steps
        job.transitions = res.transitions
        return job

    def _new_eval_job(self, now_steps: int, t: float = 0.0, worker: int = -1) -> Job:
        ind = sample_individual(self.dist, self.rng_sample)
        role = assign_role(self.counter, now_steps, self.rng_role.random())
        self._emit({"kind": "assign", "t": t, "worker": worker, "role": role,
                    "n_rl": self.counter.n_rl, "n_es": self.counter.n_es})
        trained = False
        if role == ROLE_RL and self.rl_enabled:
            n_steps = self.cfg.rl_grad_steps or self.last_episode_steps
            ind.z, done = rl.actor_train_step(
                ind.z, self.critic.q1.copy(), self.actor_spec, self.critic_spec,
                self.buffer, self.cfg.rl, self.rng_rl, n_steps)
            trained = done > 0
        return Job(kind="eval", params=ind.z, role=role, seed=self._job_seed(),
                   actor_trained=trained)

    def _new_refresh_job(self) -> Job:
        return Job(kind="refresh", params=self.dist.mu.copy(), role=None,
                   seed=self._job_seed())

    # -- result application (shared by all modes) -----------------------------

    def _apply_result(self, t: float, worker: int, job: Job):
        acct = self.acct
        acct.total_steps += job.steps
        if self.rl_enabled and job.transitions:
            self.buffer.extend(job.transitions)
        if self.objective.episodic and job.kind == "eval":
            self.last_episode_steps = job.steps

        if job.kind == "refresh":
            self.updater.note_refresh(job.fitness)
            acct.n_refreshes += 1
            acct.note_fitness(job.fitness)
            self._emit({"kind": "refresh", "t": t, "worker": worker,
                        "steps": job.steps, "total_steps": acct.total_steps,
                        "fitness": job.fitness})
        else:
            rec = self.updater.apply(job.fitness, job.params)
            acct.n_updates += 1
            acct.note_fitness(job.fitness)
            if rec.p is not None and job.role is not None:
                acct.abs_p_by_role[job.role] += abs(rec.p)
            if job.role is not None:
                acct.updates_by_role[job.role] += 1
            event = {"kind": "update", "t": t, "worker": worker, "role": job.role,
                     "steps": job.steps, "total_steps": acct.total_steps,
                     "fitness": job.fitness, "p": rec.p, "n": rec.n,
                     "sigma2_mean": rec.sigma2_mean, "crc": rec.crc}
            if self.cfg.log_params:
                event["z"] = [float(v) for v in job.params]
            self._emit(event)

        self._train_critic(job.steps)
        self._maybe_test_eval(t)

    def _train_critic(self, steps: int):
        if not self.rl_enabled:
            return
        self.critic.track_actor(self.dist.mu)
        self._critic_step_debt += steps * self.cfg.rl.critic_steps_per_env_step
        n = int(self._critic_step_debt)
        self._critic_step_debt -= n
        for _ in range(n):
            if not rl.critic_train_step(self.critic, self.buffer, self.rng_rl):
                break

    # -- periodic evaluation of the mean policy ------------------------------

    def _maybe_test_eval(self, t: float):
        if self._next_test_at is None or self.acct.total_steps < self._next_test_at:
            return
        while self.acct.total_steps >= self._next_test_at:
            self._next_test_at += self.cfg.test_every
        mean_return = self.test_mean_policy(self._test_index)
        self._test_index += 1
        row = {"total_steps": self.acct.total_steps,
               "best_fitness": self.acct.best_fitness, "mean_fitness": mean_return}
        self.acct.curve.append(row)
        self._emit({"kind": "test_eval", "t": t, **row})
        stop_at = self.cfg.stop_at_test_fitness
        if stop_at is not None and mean_return >= stop_at:
            self.stopped_early = True

    def test_mean_policy(self, index: int = 0) -> float:
        """Average noise-free return of the mean policy on a fixed test suite.

        Test episodes are seeded independently of the training streams and
        consume no training budget.
        """
        if not self.objective.episodic:
            return self.objective.fitness(np.asarray(self.dist.mu, dtype=np.float64))
        total = 0.0
        for ep in range(self.cfg.test_episodes):
            rng = np.random.default_rng(
                np.random.SeedSequence((self.cfg.seed, 0x7E57, index, ep)))
            res = envs.evaluate(np.asarray(self.dist.mu, np.float64), self.actor_spec,
                                self.objective, 0.0, rng)
            total += res.total_reward
        return total / self.cfg.test_episodes

    def _final_row(self):
        self.acct.curve.append({
            "total_steps": self.acct.total_steps,
            "best_fitness": self.acct.best_fitness,
            "mean_fitness": self.test_mean_policy(self._test_index)})

    def _write_header(self):
        if self.log is None:
            return
        self.log.write_header(self.cfg, self.dist)

    def _write_end(self):
        acct = self.acct
        shares = acct.contribution_shares()
        self._emit({"kind": "end", "total_steps": acct.total_steps,
                    "makespan": acct.makespan, "best_fitness": acct.best_fitness,
                    "n_updates": acct.n_updates, "n_refreshes": acct.n_refreshes,
                    "n_failures": acct.n_failures,
                    "es_share": shares[ROLE_ES], "rl_share": shares[ROLE_RL],
                    "degenerate_updates": self.updater.counters.get("degenerate_baseline", 0),
                    "final_crc": self.dist.crc()})

    def _result(self):
        return RunResult(accounting=self.acct, dist=self.dist, updater=self.updater,
                         counter=self.counter, critic=self.critic)

    def close(self):
        for ev in self.evaluators:
            ev.close()


class AsyncRun(_Run):
    """One result, one update: no barrier, workers never wait for each other."""

    def _evaluate_with_retries(self, worker: int, make_job, now: float) -> Job:
        """Failed evaluations discard the individual and recycle the slot."""
        while True:
            job = make_job()
            try:
                return self._evaluate_job(worker, job)
            except envs.EvalError as exc:
                self.acct.n_failures += 1
                self._emit({"kind": "worker_failure", "t": now, "worker": worker,
                            "error": str(exc)})
                if self.acct.n_failures > self.cfg.max_eval_failures:
                    raise RunError("too many evaluation failures") from exc

    def run(self) -> RunResult:
        cfg = self.cfg
        acct = self.acct
        self._write_header()
        if cfg.max_steps <= 0:
            self._write_end()
            return self._result()

        self._initial_refresh()
        import heapq

        heap = []

        def dispatch(worker: int, now: float):
            def make_job():
                if self.updater.needs_refresh():
                    return self._new_refresh_job()
                return self._new_eval_job(acct.total_steps, now, worker)

            job = self._evaluate_with_retries(worker, make_job, now)
            latency = cfg.latency.draw(self.rng_latency, steps=job.steps)
            acct.busy[worker] += latency
            heapq.heappush(heap, (now + latency, worker, job))

        for w in range(acct.workers):
            if acct.total_steps >= cfg.max_steps:
                break
            dispatch(w, 0.0)

        while heap:
            t, w, job = heapq.heappop(heap)
            self._apply_result(t, w, job)
            acct.makespan = max(acct.makespan, t)
            if acct.total_steps < cfg.max_steps and not self.stopped_early:
                dispatch(w, t)

        self._final_row()
        self._write_end()
        return self._result()

    def _initial_refresh(self):
        """Evaluate the starting mean once so fitness-based rules have f(mu).

        Runs before the clock starts; its steps count toward the budget.
        """
        if self.updater.mean_cfg.rule == "rank_async_oldest":
            return
        job = self._evaluate_with_retries(0, self._new_refresh_job, 0.0)
        self._apply_result(0.0, -1, job)


class SyncRun(_Run):
    """Generation loop: evaluate a full population, update behind the barrier."""

    def run(self) -> RunResult:
        cfg = self.cfg
        acct = self.acct
        if cfg.scheduling == "parallel_sync" and cfg.population_size % acct.workers:
            raise RunError("population size must be a multiple of the worker count")
        self._write_header()
        now = 0.0
        gen = 0
        while acct.total_steps < cfg.max_steps and not self.stopped_early:
            members = []
            while len(members) < cfg.population_size:
                worker = len(members) % acct.workers
                job = self._new_eval_job(acct.total_steps, now, worker)
                try:
                    self._evaluate_job(worker, job)
                except envs.EvalError as exc:
                    acct.n_failures += 1
                    self._emit({"kind": "worker_failure", "t": now, "worker": worker,
                                "error": str(exc)})
                    if acct.n_failures > cfg.max_eval_failures:
                        raise RunError("too many evaluation failures") from exc
                    continue
                members.append(job)

            # waves of one job per worker; each wave waits for its slowest member
            for start in range(0, len(members), acct.workers):
                wave = members[start:start + acct.workers]
                latencies = [cfg.latency.draw(self.rng_latency, steps=j.steps)
                             for j in wave]
                barrier = max(latencies)
                for w, (job, lat) in enumerate(zip(wave, latencies)):
                    acct.busy[w] += lat
                    acct.waiting_idle[w] += barrier - lat
                now += barrier
                for w, job in enumerate(wave):
                    acct.total_steps += job.steps
                    acct.note_fitness(job.fitness)
                    if self.rl_enabled and job.transitions:
                        self.buffer.extend(job.transitions)
                    if self.objective.episodic:
                        self.last_episode_steps = job.steps
                    self._train_critic(job.steps)

            ranked = sorted(members, key=lambda j: j.fitness, reverse=True)
            elites = [Individual(z=j.params, fitness=j.fitness)
                      for j in ranked[: cfg.mean_rule.k_elite]]
            rec = self.updater.apply_generation(elites)
            acct.n_updates += 1
            acct.n_generations += 1
            gen += 1
            event = {"kind": "gen_update", "t": now, "gen": gen,
                     "total_steps": acct.total_steps, "sigma2_mean": rec.sigma2_mean,
                     "crc": rec.crc,
                     "fitness": [j.fitness for j in ranked[: cfg.mean_rule.k_elite]]}
            if cfg.log_params:
                event["z"] = [[float(v) for v in e.z] for e in elites]
            self._emit(event)
            self._maybe_test_eval(now)
            acct.makespan = now

        self._final_row()
        self._write_end()
        return self._result()


def run_experiment(cfg, evaluators=None, log=None) -> RunResult:
    """Run one configured experiment to completion and return its result."""
    if cfg.clock == "real":
        if cfg.scheduling != "parallel_async":
            raise RunError("the real clock is only wired for asynchronous runs")
        return _run_real(cfg, log)
    if cfg.scheduling in ("serial", "parallel_sync"):
        runner = SyncRun(cfg, evaluators=evaluators, log=log)
    elif cfg.scheduling == "parallel_async":
        runner = AsyncRun(cfg, evaluators=evaluators, log=log)
    else:
        raise RunError("unknown scheduling mode %r" % (cfg.scheduling,))
    try:
        return runner.run()
    finally:
        runner.close()


def _run_real(cfg, log):
    """Wall-clock asynchronous demo: worker threads, results applied on arrival."""
    import queue
    import threading
    import time

    runner = AsyncRun(cfg, log=log)
    acct = runner.acct
    runner._write_header()
    if cfg.max_steps <= 0:
        runner._write_end()
        return runner._result()
    runner._initial_refresh()

    results: queue.Queue = queue.Queue()
    start = time.monotonic()

    def work(worker: int, job: Job):
        t0 = time.monotonic()
        try:
            runner._evaluate_job(worker, job)
            err = None
        except envs.EvalError as exc:  # surfaced on the master thread
            err = str(exc)
        results.put((worker, job, err, time.monotonic() - t0))

    def dispatch(worker: int):
        if runner.updater.needs_refresh():
            job = runner._new_refresh_job()
        else:
            job = runner._new_eval_job(acct.total_steps)
        threading.Thread(target=work, args=(worker, job), daemon=True).start()

    in_flight = 0
    for w in range(acct.workers):
        dispatch(w)
        in_flight += 1
    while in_flight:
        worker, job, err, elapsed = results.get()
        in_flight -= 1
        now = time.monotonic() - start
        acct.busy[worker] += elapsed
        if err is not None:
            acct.n_failures += 1
            runner._emit({"kind": "worker_failure", "t": now, "worker": worker,
                          "error": err})
            if acct.n_failures > cfg.max_eval_failures:
                raise RunError("too many evaluation failures")
        else:
            runner._apply_result(now, worker, job)
        acct.makespan = now
        if acct.total_steps < cfg.max_steps:
            dispatch(worker)
            in_flight += 1
    runner._final_row()
    runner._write_end()
    return runner._result()
