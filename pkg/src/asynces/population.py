"""Proportional controller keeping the RL/ES actor ratio near a target.

Each newly sampled individual is assigned a role; the probability of the
gradient (RL) role is a clipped P-control law on the realized ratio, so
the cumulative counts track ``p_desired`` without a synchronized
generation to enforce it.
"""

from dataclasses import dataclass

from .distribution import ROLE_ES, ROLE_RL


@dataclass
class RoleCounter:
    n_rl: int = 0
    n_es: int = 0
    k_rl: float = 50.0
    p_desired: float = 0.5
    rl_start_step: int = 10_000

    @property
    def total(self) -> int:
        return self.n_rl + self.n_es

    @property
    def rl_fraction(self) -> float:
        return self.n_rl / self.total if self.total else 0.0


def compute_p_rl(counter: RoleCounter) -> float:
    """clip(-k_rl * (realized - desired) + 1/2, 0, 1); desired ratio at start.

    The control law dithers around 1/2 at the target, so the degenerate
    targets are pinned: a desired ratio of exactly 0 or 1 always yields
    that role.
    """
    if counter.p_desired <= 0.0:
        return 0.0
    if counter.p_desired >= 1.0:
        return 1.0
    if counter.total == 0:
        return counter.p_desired
    raw = -counter.k_rl * (counter.rl_fraction - counter.p_desired) + 0.5
    return min(max(raw, 0.0), 1.0)


def assign_role(counter: RoleCounter, total_steps: int, draw: float) -> str:
    """Pick ES or RL for one new individual and count it.

    RL requires both the controller draw and the warmup guard
    (total_steps >= rl_start_step) to pass.
    """
    if draw < compute_p_rl(counter) and total_steps >= counter.rl_start_step:
        counter.n_rl += 1
        return ROLE_RL
    counter.n_es += 1
    return ROLE_ES
