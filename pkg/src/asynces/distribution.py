"""Search distribution and its mean/variance update rules.

The population is an isotropic-per-coordinate Gaussian N(mu, diag(sigma2)).
Synchronous (generation-based, rank-weighted) and asynchronous (one
individual at a time, fitness-based) update rules live here as pure
functions; ``DistributionUpdater`` is the single-writer owner that applies
them in arrival order.

All array math runs in the distribution's dtype (float64 by default,
float32 for bit-reproducible runs), with scalars cast at the boundary so a
log replay re-applies the exact same arithmetic.
"""

import math
import zlib
from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from .wire import F32, U32, pack_vec, unpack_vec

ROLE_ES = "es"
ROLE_RL = "rl"

MEAN_RULES = (
    "full_move",
    "rank_sync",
    "rank_async_oldest",
    "linear",
    "sigmoid",
    "absolute_baseline",
    "relative_baseline",
)
#: mean rules driven by a scalar update ratio p
FITNESS_MEAN_RULES = ("full_move", "linear", "sigmoid", "absolute_baseline", "relative_baseline")

VARIANCE_RULES = ("rank_sync", "success_rule", "welford_fixed", "welford_adaptive", "constant")

WEIGHT_MODES = ("uniform", "log_rank")

DEFAULT_EPSILON_FLOOR = 1e-5
DEFAULT_SIGMA_INIT = 1e-3

# Classical one-fifth success-rule factors.
SUCCESS_C_DOWN = 0.817
SUCCESS_C_UP = 1.0 / 0.817


class RuleConfigError(ValueError):
    """Invalid or inconsistent update-rule configuration."""


@dataclass
class Individual:
    """One sampled parameter vector and its evaluation outcome."""

    z: np.ndarray
    role: str | None = None
    fitness: float | None = None
    steps: int = 0


@dataclass
class MeanRuleConfig:
    rule: str = "relative_baseline"
    r: float = 1.0               # fixed-range width for linear/sigmoid
    f_b: float = 1.0             # baseline offset (absolute: floor, relative: margin)
    p_positive: float = 0.2
    p_negative: float = 0.0
    k_elite: int = 5
    weight_mode: str = "uniform"
    literal_async_mean: bool = False  # use the undamped 1/n form of the FIFO rule

    def validate(self):
        if self.rule not in MEAN_RULES:
            raise RuleConfigError("unknown mean rule %r" % (self.rule,))
        if self.weight_mode not in WEIGHT_MODES:
            raise RuleConfigError("unknown weight mode %r" % (self.weight_mode,))
        if self.rule in ("linear", "sigmoid") and not self.r > 0:
            raise RuleConfigError("mean rule %r requires r > 0" % (self.rule,))
        if self.rule == "relative_baseline" and not self.f_b > 0:
            raise RuleConfigError("relative_baseline requires f_b > 0")
        if not 0.0 <= self.p_positive <= 1.0 or not 0.0 <= self.p_negative <= 1.0:
            raise RuleConfigError("p_positive and p_negative must lie in [0, 1]")
        if self.k_elite < 1:
            raise RuleConfigError("k_elite must be >= 1")
        return self


@dataclass
class VarianceRuleConfig:
    rule: str = "welford_adaptive"
    n_fixed: int = 10            # welford_fixed population size
    p_th: float = 0.2            # success-rule threshold (the one-fifth rule)
    c_up: float = SUCCESS_C_UP
    c_down: float = SUCCESS_C_DOWN
    window: int = 10             # success-rate window length
    constant_value: float = 1e-3

    def validate(self):
        if self.rule not in VARIANCE_RULES:
            raise RuleConfigError("unknown variance rule %r" % (self.rule,))
        if self.rule == "welford_fixed" and self.n_fixed < 1:
            raise RuleConfigError("welford_fixed requires n_fixed >= 1")
        if not 0.0 < self.p_th < 1.0:
            raise RuleConfigError("p_th must lie in (0, 1)")
        if not self.c_up > 1.0 or not 0.0 < self.c_down < 1.0:
            raise RuleConfigError("need c_up > 1 and 0 < c_down < 1")
        if self.window < 1:
            raise RuleConfigError("window must be >= 1")
        if self.rule == "constant" and not self.constant_value > 0:
            raise RuleConfigError("constant variance must be positive")
        return self


#: variance rules that can accompany each mean rule
_COMPATIBLE_VARIANCE = {
    "rank_sync": ("rank_sync", "constant"),
    "rank_async_oldest": ("rank_sync", "constant"),
    "full_move": ("success_rule", "welford_fixed", "welford_adaptive", "constant"),
    "linear": ("welford_fixed", "welford_adaptive", "success_rule", "constant"),
    "sigmoid": ("welford_fixed", "welford_adaptive", "success_rule", "constant"),
    "absolute_baseline": ("welford_fixed", "welford_adaptive", "success_rule", "constant"),
    "relative_baseline": ("welford_fixed", "welford_adaptive", "success_rule", "constant"),
}


def validate_rule_pair(mean_cfg: MeanRuleConfig, var_cfg: VarianceRuleConfig):
    mean_cfg.validate()
    var_cfg.validate()
    if var_cfg.rule not in _COMPATIBLE_VARIANCE[mean_cfg.rule]:
        raise RuleConfigError(
            "variance rule %r cannot be combined with mean rule %r"
            % (var_cfg.rule, mean_cfg.rule)
        )


class PopulationDistribution:
    """Mean vector, per-coordinate variance, and the cached mean fitness."""

    def __init__(self, mu, sigma2=None, *, fitness_mu=math.nan,
                 epsilon_floor=DEFAULT_EPSILON_FLOOR, dtype=np.float64):
        if not epsilon_floor > 0:
            raise ValueError("epsilon_floor must be positive")
        self.dtype = np.dtype(dtype)
        self.mu = np.array(mu, dtype=self.dtype)
        if self.mu.ndim != 1 or self.mu.size == 0:
            raise ValueError("mu must be a non-empty flat vector")
        if sigma2 is None:
            sigma2 = np.full(self.mu.size, DEFAULT_SIGMA_INIT)
        self.sigma2 = np.array(sigma2, dtype=self.dtype)
        if self.sigma2.shape != self.mu.shape:
            raise ValueError("sigma2 must match mu's shape")
        self.epsilon_floor = float(epsilon_floor)
        np.maximum(self.sigma2, self.dtype.type(self.epsilon_floor), out=self.sigma2)
        self.fitness_mu = float(fitness_mu)
        self.validate()

    @property
    def dim(self) -> int:
        return self.mu.size

    def validate(self):
        if not np.all(np.isfinite(self.mu)):
            raise ValueError("mu contains non-finite entries")
        if not np.all(np.isfinite(self.sigma2)):
            raise ValueError("sigma2 contains non-finite entries")
        if not np.all(self.sigma2 >= self.epsilon_floor):
            raise ValueError("sigma2 fell below the epsilon floor")

    def snapshot(self):
        """Immutable copy handed to readers; the owner keeps the originals."""
        return self.mu.copy(), self.sigma2.copy(), self.fitness_mu

    def crc(self) -> int:
        """Checksum of (mu, sigma2) bytes; replay uses it to verify trajectories."""
        return zlib.crc32(self.sigma2.tobytes(), zlib.crc32(self.mu.tobytes()))

    def to_bytes(self) -> bytes:
        """Snapshot record: u32 dim, dim f32 mu, dim f32 sigma2, f32 fitness_mu."""
        arr = np.concatenate([self.mu, self.sigma2]).astype("<f4")
        return U32.pack(self.dim) + arr.tobytes() + F32.pack(self.fitness_mu)

    @classmethod
    def from_bytes(cls, buf: bytes, *, epsilon_floor=DEFAULT_EPSILON_FLOOR, dtype=np.float32):
        (dim,) = U32.unpack_from(buf, 0)
        need = 4 + 8 * dim + 4
        if len(buf) < need:
            raise ValueError("snapshot record truncated")
        flat = np.frombuffer(buf, dtype="<f4", count=2 * dim, offset=4)
        (fit,) = F32.unpack_from(buf, 4 + 8 * dim)
        return cls(flat[:dim], flat[dim:], fitness_mu=fit,
                   epsilon_floor=epsilon_floor, dtype=dtype)


def sample_individual(dist: PopulationDistribution, rng: np.random.Generator) -> Individual:
    """Draw z ~ N(mu, diag(sigma2)) in the distribution's dtype."""
    noise = rng.standard_normal(dist.dim).astype(dist.dtype)
    z = dist.mu + np.sqrt(dist.sigma2) * noise
    return Individual(z=z)


def _sigmoid(x: float) -> float:
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _clip(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


def update_ratio(cfg: MeanRuleConfig, f_z: float, f_mu: float, counters=None) -> float:
    """Scalar update ratio p for the fitness-based mean rules.

    full_move: p = 1 iff the new individual strictly improves on f(mu).
    linear / sigmoid: signed gain scaled over the fixed range r, times
    p_positive or p_negative depending on the improvement sign.
    absolute_baseline: gain above a global floor f_b, normalized by the
    total excess of both fitnesses over the floor.
    relative_baseline: like absolute, but the floor trails f(mu) at
    distance f_b; individuals more than f_b below that floor contribute
    nothing.
    """
    if not (math.isfinite(f_z) and math.isfinite(f_mu)):
        raise ValueError("update_ratio needs finite fitness values")
    rule = cfg.rule
    if rule == "full_move":
        return 1.0 if f_z > f_mu else 0.0
    if rule == "linear":
        p_sg = cfg.p_positive if f_z >= f_mu else cfg.p_negative
        return p_sg * _clip((f_z - f_mu) / cfg.r, -1.0, 1.0)
    if rule == "sigmoid":
        p_sg = cfg.p_positive if f_z >= f_mu else cfg.p_negative
        return p_sg * _sigmoid((f_z - f_mu) / cfg.r)
    if rule == "absolute_baseline":
        denom = (f_mu - cfg.f_b) + (f_z - cfg.f_b)
        if denom <= 0.0:
            # Both fitnesses at or below the floor: the rule's scale is gone.
            if counters is not None:
                counters["degenerate_baseline"] += 1
            return 0.0
        return _clip((f_z - cfg.f_b) / denom, -1.0, 1.0)
    if rule == "relative_baseline":
        gain = f_z - (f_mu - cfg.f_b)
        if gain <= -cfg.f_b:  # f_z at least f_b below the trailing floor
            return 0.0
        p_sg = cfg.p_positive if gain >= 0.0 else cfg.p_negative
        return p_sg * _clip(gain / (cfg.f_b + gain), -1.0, 1.0)
    raise RuleConfigError("mean rule %r has no update ratio" % (rule,))


def apply_mean_update(mu: np.ndarray, z: np.ndarray, p: float) -> np.ndarray:
    """mu' = (1 - p) mu + p z, computed in mu's dtype."""
    pt = mu.dtype.type(p)
    return (mu.dtype.type(1.0) - pt) * mu + pt * z


def elite_weights(k: int, weight_mode: str, dtype=np.float64) -> np.ndarray:
    """Selection weights over k rank-sorted elites; they sum to one."""
    if k < 1:
        raise ValueError("need at least one elite")
    if weight_mode == "uniform":
        w = np.full(k, 1.0 / k)
    elif weight_mode == "log_rank":
        w = np.log(k + 1.0) - np.log(np.arange(1, k + 1, dtype=np.float64))
        w /= w.sum()
    else:
        raise RuleConfigError("unknown weight mode %r" % (weight_mode,))
    return w.astype(dtype)


def rank_based_mean_sync(elites, weight_mode="uniform") -> np.ndarray:
    """Weighted recombination of elites sorted by fitness, best first."""
    if len(elites) == 0:
        raise ValueError("empty elite set")
    zs = np.stack([ind.z for ind in elites])
    w = elite_weights(len(elites), weight_mode, dtype=zs.dtype)
    return w @ zs


def rank_based_variance_sync(elites, mu_prev: np.ndarray, epsilon_floor: float,
                             weight_mode="uniform") -> np.ndarray:
    """Weighted squared deviations from the previous mean, plus the floor."""
    if len(elites) == 0:
        raise ValueError("empty elite set")
    zs = np.stack([ind.z for ind in elites])
    w = elite_weights(len(elites), weight_mode, dtype=mu_prev.dtype)
    dev = zs - mu_prev
    out = w @ (dev * dev) + mu_prev.dtype.type(epsilon_floor)
    return np.maximum(out, mu_prev.dtype.type(epsilon_floor))


def welford_variance_update(sigma2: np.ndarray, z, mu_prev, mu_new, n: float,
                            epsilon_floor: float) -> np.ndarray:
    """One streaming variance step with population weight n, floored.

    sigma2' = sigma2 + ((z - mu_prev) * (z - mu_new) - sigma2) / n,
    taken per coordinate since the covariance is diagonal. The cross
    product can go negative, hence the floor.
    """
    if n < 1:
        raise ValueError("welford population weight must be >= 1")
    dt = sigma2.dtype.type
    inc = (z - mu_prev) * (z - mu_new) - sigma2
    out = sigma2 + inc / dt(n)
    return np.maximum(out, dt(epsilon_floor))


def adaptive_population_size(p: float):
    """Population weight n = max((1-|p|)/|p|, 1); None means skip the update."""
    if not math.isfinite(p):
        raise ValueError("p must be finite")
    q = _clip(abs(p), 0.0, 1.0)
    if q == 0.0:
        return None
    return max((1.0 - q) / q, 1.0)


def success_rule_variance(sigma2: np.ndarray, successes, cfg: VarianceRuleConfig,
                          epsilon_floor: float) -> np.ndarray:
    """One-fifth success rule over a full window of success flags."""
    if len(successes) < cfg.window:
        return sigma2
    p_s = sum(1 for s in successes if s) / len(successes)
    dt = sigma2.dtype.type
    if p_s > cfg.p_th:
        out = sigma2 * dt(cfg.c_up) ** 2
    elif p_s < cfg.p_th:
        out = sigma2 * dt(cfg.c_down) ** 2
    else:
        out = sigma2.copy()
    return np.maximum(out, dt(epsilon_floor))


@dataclass
class UpdateRecord:
    """What one distribution update did; the engine logs these verbatim."""

    p: float | None
    n: float | None
    sigma2_mean: float
    crc: int
    refreshed_cache: bool = False


class DistributionUpdater:
    """Single-writer owner applying one update per arriving evaluation.

    Rule math is pure; this class holds the serial state the asynchronous
    rules need between arrivals (FIFO population for the rank rule, the
    success window, staleness bookkeeping for the cached mean fitness).
    Replaying a run log through a fresh updater reproduces the exact
    trajectory.
    """

    def __init__(self, dist: PopulationDistribution, mean_cfg: MeanRuleConfig,
                 var_cfg: VarianceRuleConfig, population_size: int = 10,
                 refresh_abs_p: float = 0.5, refresh_every: int | None = None):
        validate_rule_pair(mean_cfg, var_cfg)
        if population_size < 1:
            raise RuleConfigError("population_size must be >= 1")
        self.dist = dist
        self.mean_cfg = mean_cfg
        self.var_cfg = var_cfg
        self.population_size = int(population_size)
        self.refresh_abs_p = float(refresh_abs_p)
        self.refresh_every = int(refresh_every or population_size)
        self.fifo: deque[Individual] = deque(maxlen=self.population_size)
        self.successes: deque[bool] = deque()
        self.counters: Counter = Counter()
        self.cum_abs_p = 0.0
        self.updates_since_refresh = 0
        self.n_updates = 0
        if var_cfg.rule == "constant":
            self.dist.sigma2[:] = self.dist.dtype.type(
                max(var_cfg.constant_value, self.dist.epsilon_floor))

    # -- refresh bookkeeping ------------------------------------------------

    def needs_refresh(self) -> bool:
        if self.mean_cfg.rule == "rank_async_oldest":
            return False  # the FIFO rule never consults f(mu)
        return (self.cum_abs_p > self.refresh_abs_p
                or self.updates_since_refresh >= self.refresh_every)

    def note_refresh(self, fitness: float):
        if not math.isfinite(fitness):
            raise ValueError("refresh fitness must be finite")
        self.dist.fitness_mu = float(fitness)
        self.cum_abs_p = 0.0
        self.updates_since_refresh = 0

    # -- the single update entry point --------------------------------------

    def apply(self, fitness: float, z: np.ndarray) -> UpdateRecord:
        z = np.asarray(z, dtype=self.dist.dtype)
        if z.shape != self.dist.mu.shape:
            raise ValueError("individual has wrong dimension")
        if self.mean_cfg.rule == "rank_sync":
            raise RuleConfigError("rank_sync is generation-based; use apply_generation")
        if self.mean_cfg.rule == "rank_async_oldest":
            rec = self._apply_rank_async(fitness, z)
        else:
            rec = self._apply_fitness_based(fitness, z)
        self.n_updates += 1
        return rec

    def apply_generation(self, elites) -> UpdateRecord:
        """Synchronous rank-based update from one generation's elite set."""
        dist = self.dist
        elites = [Individual(z=np.asarray(e.z, dtype=dist.dtype), fitness=e.fitness)
                  for e in elites]
        mu_prev = dist.mu
        dist.mu = rank_based_mean_sync(elites, self.mean_cfg.weight_mode)
        if self.var_cfg.rule == "rank_sync":
            dist.sigma2 = rank_based_variance_sync(
                elites, mu_prev, dist.epsilon_floor, self.mean_cfg.weight_mode)
        self.n_updates += 1
        return UpdateRecord(p=None, n=float(len(elites)),
                            sigma2_mean=float(dist.sigma2.mean()), crc=dist.crc())

    def _apply_fitness_based(self, fitness, z) -> UpdateRecord:
        dist = self.dist
        if not math.isfinite(dist.fitness_mu):
            raise RuntimeError("fitness_mu is unset; evaluate the mean before updating")
        p = update_ratio(self.mean_cfg, fitness, dist.fitness_mu, self.counters)
        mu_prev = dist.mu
        dist.mu = apply_mean_update(mu_prev, z, p)

        n = None
        var = self.var_cfg
        if var.rule == "welford_fixed":
            n = float(var.n_fixed)
        elif var.rule == "welford_adaptive":
            n = adaptive_population_size(p)
        if n is not None:
            dist.sigma2 = welford_variance_update(
                dist.sigma2, z, mu_prev, dist.mu, n, dist.epsilon_floor)
        elif var.rule == "success_rule":
            self.successes.append(p > 0.0)
            if len(self.successes) >= var.window:
                dist.sigma2 = success_rule_variance(
                    dist.sigma2, self.successes, var, dist.epsilon_floor)
                self.successes.clear()  # non-overlapping windows

        refreshed = False
        if p == 1.0:
            # Full move: mu' == z exactly, so f(mu') is already known.
            dist.fitness_mu = float(fitness)
            self.cum_abs_p = 0.0
            self.updates_since_refresh = 0
            refreshed = True
        else:
            self.cum_abs_p += abs(p)
            self.updates_since_refresh += 1
        return UpdateRecord(p=p, n=n, sigma2_mean=float(dist.sigma2.mean()),
                            crc=dist.crc(), refreshed_cache=refreshed)

    def _apply_rank_async(self, fitness, z) -> UpdateRecord:
        dist = self.dist
        self.fifo.append(Individual(z=z, fitness=float(fitness)))
        ranked = sorted(self.fifo, key=lambda ind: ind.fitness, reverse=True)
        elites = ranked[: self.mean_cfg.k_elite]
        target = rank_based_mean_sync(elites, self.mean_cfg.weight_mode)
        mu_prev = dist.mu
        dt = dist.dtype.type
        inv_n = dt(1.0) / dt(self.population_size)
        if self.mean_cfg.literal_async_mean:
            dist.mu = inv_n * target
        else:
            dist.mu = (dt(1.0) - inv_n) * mu_prev + inv_n * target
        if self.var_cfg.rule == "rank_sync":
            dist.sigma2 = rank_based_variance_sync(
                elites, mu_prev, dist.epsilon_floor, self.mean_cfg.weight_mode)
        return UpdateRecord(p=None, n=float(self.population_size),
                            sigma2_mean=float(dist.sigma2.mean()), crc=dist.crc())
