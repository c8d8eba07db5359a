"""Fitness providers: synthetic objectives and small episodic control tasks.

Episodic environments are pure: ``reset(rng)`` samples a start state and
``step(state, action)`` maps to (next_state, reward, done) with no hidden
state, so replaying a transition log reproduces an episode exactly. The
episode driver enforces the step limit; ``done`` from ``step`` marks a
genuine terminal only.

Both kinds of provider sit behind one evaluation interface so the update
rules never know whether fitness came from an episode return or a test
function.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import nets


class EvalError(RuntimeError):
    """Evaluation aborted (non-finite state or reward from the environment)."""


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool


@dataclass
class EvalResult:
    total_reward: float
    steps: int
    transitions: list = field(default_factory=list)


def synthetic_fitness(name: str, z: np.ndarray) -> float:
    """Sign-flipped test objectives; higher is better, optimum 0 at the origin."""
    z = np.asarray(z, dtype=np.float64)
    if name == "sphere":
        return float(-np.sum(z * z))
    if name == "rastrigin":
        return float(-(10.0 * z.size + np.sum(z * z - 10.0 * np.cos(2.0 * np.pi * z))))
    raise ValueError("unknown objective %r" % (name,))


class SyntheticObjective:
    """Adapter giving a test function the evaluation interface.

    One evaluation costs one accounted step, so evaluation budgets mean
    the same thing for synthetic and episodic runs.
    """

    episodic = False

    def __init__(self, name: str, dim: int):
        self.name = name
        self.dim = int(dim)
        synthetic_fitness(name, np.zeros(1))  # validate the name early

    def fitness(self, z: np.ndarray) -> float:
        return synthetic_fitness(self.name, z)


class PointMassEnv:
    """2-D double integrator steering toward a goal.

    State [px, py, vx, vy]; action is acceleration in [-1, 1]^2. Reward
    -(|pos - goal|^2 + 0.01 |a|^2). The episode ends early inside
    ``goal_radius``, which is what makes evaluation times heterogeneous.
    """

    episodic = True
    action_dim = 2
    state_dim = 4

    def __init__(self, max_steps=200, dt=0.05, start=(-1.0, -1.0), goal=(1.0, 1.0),
                 goal_radius=0.05, start_noise=0.0, max_speed=2.0):
        self.max_steps = int(max_steps)
        self.dt = float(dt)
        self.start = np.asarray(start, dtype=np.float64)
        self.goal = np.asarray(goal, dtype=np.float64)
        self.goal_radius = float(goal_radius)
        self.start_noise = float(start_noise)
        self.max_speed = float(max_speed)
        if self.max_steps < 1 or self.dt <= 0 or self.goal_radius <= 0:
            raise ValueError("invalid point-mass configuration")

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        pos = self.start.copy()
        if self.start_noise > 0:
            pos = pos + self.start_noise * rng.standard_normal(2)
        return np.concatenate([pos, np.zeros(2)])

    def step(self, state, action):
        pos, vel = state[:2], state[2:]
        a = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        vel = np.clip(vel + a * self.dt, -self.max_speed, self.max_speed)
        pos = pos + vel * self.dt
        err = pos - self.goal
        reward = -(float(err @ err) + 0.01 * float(a @ a))
        done = float(np.hypot(*err)) < self.goal_radius
        return np.concatenate([pos, vel]), reward, done


class PendulumEnv:
    """Torque-limited swing-up, observed as [cos th, sin th, th_dot].

    Angle is measured from upright. Resets are spread over the whole
    circle, so episode lengths vary a lot: starts near the top can settle
    and terminate within a few steps while swing-ups run long. Reward
    -(th_err^2 + 0.1 th_dot^2 + 0.001 a^2).
    """

    episodic = True
    action_dim = 1
    state_dim = 3

    def __init__(self, max_steps=200, dt=0.05, g=10.0, mass=1.0, length=1.0,
                 max_torque=2.0, max_speed=8.0, done_angle=0.3, done_speed=1.0,
                 reset_angle=math.pi, reset_speed=1.0):
        self.max_steps = int(max_steps)
        self.dt = float(dt)
        self.g = float(g)
        self.mass = float(mass)
        self.length = float(length)
        self.max_torque = float(max_torque)
        self.max_speed = float(max_speed)
        self.done_angle = float(done_angle)
        self.done_speed = float(done_speed)
        self.reset_angle = float(reset_angle)
        self.reset_speed = float(reset_speed)
        if self.max_steps < 1 or self.dt <= 0:
            raise ValueError("invalid pendulum configuration")

    @staticmethod
    def observe(theta: float, theta_dot: float) -> np.ndarray:
        return np.array([math.cos(theta), math.sin(theta), theta_dot])

    def reset(self, rng: np.random.Generator) -> np.ndarray:
        theta = rng.uniform(-self.reset_angle, self.reset_angle)
        theta_dot = rng.uniform(-self.reset_speed, self.reset_speed)
        return self.observe(theta, theta_dot)

    def step(self, state, action):
        theta = math.atan2(state[1], state[0])
        theta_dot = float(state[2])
        a = float(np.clip(np.asarray(action, dtype=np.float64).reshape(-1)[0], -1.0, 1.0))
        torque = a * self.max_torque
        # gravity destabilizes the upright position (theta measured from the top)
        acc = (3.0 * self.g / (2.0 * self.length) * math.sin(theta)
               + 3.0 / (self.mass * self.length ** 2) * torque)
        theta_dot = float(np.clip(theta_dot + acc * self.dt, -self.max_speed, self.max_speed))
        theta = theta + theta_dot * self.dt
        err = math.atan2(math.sin(theta), math.cos(theta))
        reward = -(err * err + 0.1 * theta_dot * theta_dot + 0.001 * a * a)
        done = abs(err) < self.done_angle and abs(theta_dot) < self.done_speed
        return self.observe(theta, theta_dot), reward, done


def evaluate(actor: np.ndarray, spec: nets.MlpSpec, env, a_noise: float,
             rng: np.random.Generator, replay_sink=None) -> EvalResult:
    """Run one episode, optionally with exploration noise on the actions.

    Every transition is appended to ``replay_sink`` when given, and
    returned on the result either way; the caller owns sample accounting.
    """
    if a_noise < 0:
        raise ValueError("a_noise must be >= 0")
    state = env.reset(rng)
    total = 0.0
    transitions = []
    for _ in range(env.max_steps):
        action = np.asarray(nets.actor_forward(spec, actor, state), dtype=np.float64)
        if a_noise != 0.0:
            action = np.clip(action + a_noise * rng.standard_normal(env.action_dim), -1.0, 1.0)
        next_state, reward, done = env.step(state, action)
        if not (np.all(np.isfinite(next_state)) and math.isfinite(reward)):
            raise EvalError("environment produced a non-finite state or reward")
        tr = Transition(state=np.asarray(state, dtype=np.float64), action=action,
                        reward=float(reward), next_state=np.asarray(next_state, np.float64),
                        done=bool(done))
        transitions.append(tr)
        if replay_sink is not None:
            replay_sink.append(tr)
        total += reward
        state = next_state
        if done:
            break
    return EvalResult(total_reward=total, steps=len(transitions), transitions=transitions)


def make_env(name: str, **kwargs):
    if name == "point_mass":
        return PointMassEnv(**kwargs)
    if name == "pendulum":
        return PendulumEnv(**kwargs)
    raise ValueError("unknown environment %r" % (name,))


def dump_episode_csv(path, transitions):
    """Write one episode's transitions as CSV for offline inspection."""
    if not transitions:
        raise ValueError("nothing to dump: empty transition list")
    s_dim = transitions[0].state.size
    a_dim = transitions[0].action.size
    cols = (["s%d" % i for i in range(s_dim)] + ["a%d" % i for i in range(a_dim)]
            + ["reward"] + ["next_s%d" % i for i in range(s_dim)] + ["done"])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(cols) + "\n")
        for tr in transitions:
            row = [*tr.state, *tr.action, tr.reward, *tr.next_state, int(tr.done)]
            fh.write(",".join(repr(float(v)) if not isinstance(v, int) else str(v)
                              for v in row) + "\n")
