"""Gradient half of the hybrid: shared replay, twin critics, actor training.

The critic learns continuously from everyone's transitions; individuals
with the gradient role are trained against a critic snapshot before
evaluation. Nothing in here touches the search distribution — parameters
come in by value and leave by value.
"""

from dataclasses import dataclass

import numpy as np

from . import nets


@dataclass
class RlHyper:
    gamma: float = 0.99
    tau: float = 0.005
    policy_noise: float = 0.2
    noise_clip: float = 0.5
    batch_size: int = 100
    critic_lr: float = 1e-3
    actor_lr: float = 1e-3
    optimizer: str = "sgd"
    critic_steps_per_env_step: float = 1.0


class ReplayBuffer:
    """Ring of transitions: strictly FIFO eviction, uniform sampling."""

    def __init__(self, capacity: int, state_dim: int, action_dim: int, dtype=np.float64):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.state = np.zeros((capacity, state_dim), dtype=dtype)
        self.action = np.zeros((capacity, action_dim), dtype=dtype)
        self.reward = np.zeros(capacity, dtype=dtype)
        self.next_state = np.zeros((capacity, state_dim), dtype=dtype)
        self.done = np.zeros(capacity, dtype=dtype)
        self.write_index = 0
        self.size = 0

    def append(self, tr):
        i = self.write_index
        self.state[i] = tr.state
        self.action[i] = tr.action
        self.reward[i] = tr.reward
        self.next_state[i] = tr.next_state
        self.done[i] = 1.0 if tr.done else 0.0
        self.write_index = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def extend(self, transitions):
        for tr in transitions:
            self.append(tr)

    def _indices(self, batch_size, rng):
        if self.size == 0:
            raise ValueError("cannot sample from an empty replay buffer")
        return rng.integers(0, self.size, size=batch_size)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = self._indices(batch_size, rng)
        return (self.state[idx], self.action[idx], self.reward[idx],
                self.next_state[idx], self.done[idx])

    def sample_states(self, batch_size: int, rng: np.random.Generator):
        return self.state[self._indices(batch_size, rng)]


class CriticState:
    """Twin critics with targets, plus the slow-moving target actor."""

    def __init__(self, actor_spec: nets.MlpSpec, critic_spec: nets.MlpSpec,
                 hyper: RlHyper, rng: np.random.Generator, dtype=np.float64):
        self.actor_spec = actor_spec
        self.critic_spec = critic_spec
        self.hyper = hyper
        self.q1 = nets.init_params(critic_spec, rng, dtype)
        self.q2 = nets.init_params(critic_spec, rng, dtype)
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.actor_target = np.zeros(nets.param_count(actor_spec), dtype=dtype)
        self._opt1 = nets.make_optimizer(hyper.optimizer, hyper.critic_lr)
        self._opt2 = nets.make_optimizer(hyper.optimizer, hyper.critic_lr)
        self.train_step_count = 0

    def track_actor(self, actor_params: np.ndarray):
        """Soft-update the target actor toward a parameter vector passed by value."""
        tau = self.actor_target.dtype.type(self.hyper.tau)
        self.actor_target = tau * np.asarray(actor_params, self.actor_target.dtype) \
            + (self.actor_target.dtype.type(1.0) - tau) * self.actor_target

    def set_actor_target(self, actor_params: np.ndarray):
        self.actor_target = np.array(actor_params, dtype=self.actor_target.dtype)


def _soft_update(target: np.ndarray, live: np.ndarray, tau: float) -> np.ndarray:
    t = target.dtype.type(tau)
    return t * live + (target.dtype.type(1.0) - t) * target


def critic_train_step(critic: CriticState, buffer: ReplayBuffer,
                      rng: np.random.Generator) -> bool:
    """One clipped double-Q regression step; False when the buffer is short."""
    h = critic.hyper
    if buffer.size < h.batch_size:
        return False
    s, a, r, s2, done = buffer.sample(h.batch_size, rng)
    a_dim = critic.actor_spec.out_dim
    noise = np.clip(h.policy_noise * rng.standard_normal((h.batch_size, a_dim)),
                    -h.noise_clip, h.noise_clip).astype(s.dtype)
    a2 = np.clip(nets.actor_forward(critic.actor_spec, critic.actor_target, s2) + noise,
                 -1.0, 1.0)
    q1t = nets.critic_forward(critic.critic_spec, critic.q1_target, s2, a2)
    q2t = nets.critic_forward(critic.critic_spec, critic.q2_target, s2, a2)
    y = r + h.gamma * (1.0 - done) * np.minimum(q1t, q2t)

    xin = np.concatenate([s, a], axis=1)
    for name in ("q1", "q2"):
        params = getattr(critic, name)
        q, cache = nets.forward_cached(critic.critic_spec, params, xin)
        grad_out = (2.0 / h.batch_size) * (q[:, 0] - y)
        grad_params, _ = nets.backward(critic.critic_spec, params, cache,
                                       grad_out.reshape(-1, 1))
        opt = critic._opt1 if name == "q1" else critic._opt2
        setattr(critic, name, opt.step(params, grad_params))

    critic.q1_target = _soft_update(critic.q1_target, critic.q1, h.tau)
    critic.q2_target = _soft_update(critic.q2_target, critic.q2, h.tau)
    critic.train_step_count += 1
    return True


def critic_td_error(critic: CriticState, buffer: ReplayBuffer,
                    rng: np.random.Generator, batch_size: int) -> float:
    """Mean absolute TD error on a fresh batch (diagnostics and tests)."""
    h = critic.hyper
    s, a, r, s2, done = buffer.sample(batch_size, rng)
    a2 = np.clip(nets.actor_forward(critic.actor_spec, critic.actor_target, s2), -1.0, 1.0)
    q1t = nets.critic_forward(critic.critic_spec, critic.q1_target, s2, a2)
    q2t = nets.critic_forward(critic.critic_spec, critic.q2_target, s2, a2)
    y = r + h.gamma * (1.0 - done) * np.minimum(q1t, q2t)
    q = nets.critic_forward(critic.critic_spec, critic.q1, s, a)
    return float(np.mean(np.abs(q - y)))


def actor_objective_grad(actor_params, actor_spec, critic_params, critic_spec, states):
    """Gradient of mean q1(s, actor(s)) w.r.t. the actor parameters."""
    states = np.asarray(states, dtype=actor_params.dtype)
    a, cache_a = nets.forward_cached(actor_spec, actor_params, states)
    xin = np.concatenate([states, a], axis=1)
    _, cache_c = nets.forward_cached(critic_spec, critic_params, xin)
    up = np.full((states.shape[0], 1), 1.0 / states.shape[0], dtype=actor_params.dtype)
    _, grad_in = nets.backward(critic_spec, critic_params, cache_c, up)
    grad_a = grad_in[:, states.shape[1]:]
    grad_actor, _ = nets.backward(actor_spec, actor_params, cache_a, grad_a)
    return grad_actor


def actor_train_step(actor_params: np.ndarray, critic_q1: np.ndarray,
                     actor_spec: nets.MlpSpec, critic_spec: nets.MlpSpec,
                     buffer: ReplayBuffer, hyper: RlHyper,
                     rng: np.random.Generator, n_grad_steps: int):
    """Ascend the critic's value of the actor for n steps on sampled states.

    Returns (trained parameters, steps actually taken); an underfull
    buffer skips training and returns the input unchanged.
    """
    if buffer.size < hyper.batch_size:
        return actor_params, 0
    params = np.array(actor_params)
    opt = nets.make_optimizer(hyper.optimizer, hyper.actor_lr)
    for _ in range(n_grad_steps):
        states = buffer.sample_states(hyper.batch_size, rng)
        grad = actor_objective_grad(params, actor_spec, critic_q1, critic_spec, states)
        params = opt.step(params, -grad)  # maximize
    return params, n_grad_steps
