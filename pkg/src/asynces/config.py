"""Experiment configuration: flat key-value files with sections.

A config file fully determines a run (together with its seed). Rule
hyperparameters that a rule actually consumes must be written explicitly
in the file; programmatic construction may rely on dataclass defaults.
Every artifact a run writes embeds the config hash for provenance.
"""

import configparser
import hashlib
from dataclasses import asdict, dataclass, field, fields

from .distribution import (
    FITNESS_MEAN_RULES,
    MeanRuleConfig,
    VarianceRuleConfig,
    validate_rule_pair,
)
from .rl import RlHyper
from .timing import LatencyModel

SCHEDULING_MODES = ("serial", "parallel_sync", "parallel_async")
_ALIASES = {"sync": "parallel_sync", "async": "parallel_async"}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the field."""


@dataclass
class ExperimentConfig:
    # objective
    objective: str = "sphere"           # sphere | rastrigin | point_mass | pendulum
    dim: int = 20                       # synthetic objective dimension
    mu_init: float = 0.5                # initial mean fill value (synthetic only)
    hidden: tuple = (24, 24)            # policy hidden sizes (episodic only)
    max_episode_steps: int = 200
    env_params: dict = field(default_factory=dict)
    # distribution
    mean_rule: MeanRuleConfig = field(default_factory=MeanRuleConfig)
    var_rule: VarianceRuleConfig = field(default_factory=VarianceRuleConfig)
    sigma_init: float = 1e-3
    epsilon_floor: float = 1e-5
    population_size: int = 10
    refresh_abs_p: float = 0.5
    refresh_every: int = 0              # 0 = population_size
    # population control
    p_desired: float = 0.0
    k_rl: float = 50.0
    rl_start_step: int = 10_000
    # gradient workers
    rl: RlHyper = field(default_factory=RlHyper)
    replay_capacity: int = 200_000
    rl_grad_steps: int = 0              # 0 = steps of the last completed episode
    # schedule
    scheduling: str = "parallel_async"
    clock: str = "sim"
    workers: int = 5
    max_steps: int = 2_000
    a_noise: float = 0.1
    latency: LatencyModel = field(default_factory=LatencyModel)
    max_eval_failures: int = 100
    # reproducibility and reporting
    seed: int = 0
    float32: bool = False
    log_params: bool = True
    test_every: int = 0                 # steps between mean-policy test evals
    test_episodes: int = 5
    stop_at_test_fitness: float | None = None  # end the run once a test eval reaches this

    @property
    def episodic(self) -> bool:
        return self.objective in ("point_mass", "pendulum")

    def validate(self):
        if self.objective not in ("sphere", "rastrigin", "point_mass", "pendulum"):
            raise ConfigError("objective: unknown value %r" % (self.objective,))
        if self.scheduling not in SCHEDULING_MODES:
            raise ConfigError("scheduling: unknown mode %r" % (self.scheduling,))
        if self.clock not in ("sim", "real"):
            raise ConfigError("clock: must be 'sim' or 'real'")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        if self.max_steps < 0:
            raise ConfigError("max_steps: must be >= 0")
        if not self.sigma_init > 0:
            raise ConfigError("sigma_init: must be positive")
        if not self.epsilon_floor > 0:
            raise ConfigError("epsilon_floor: must be positive")
        if self.dim < 1:
            raise ConfigError("dim: must be >= 1")
        if not 0.0 <= self.p_desired <= 1.0:
            raise ConfigError("p_desired: must lie in [0, 1]")
        if self.p_desired > 0.0 and not self.episodic:
            raise ConfigError("p_desired: gradient workers need an episodic objective")
        if self.a_noise < 0:
            raise ConfigError("a_noise: must be >= 0")
        if self.replay_capacity < 1:
            raise ConfigError("replay_capacity: must be >= 1")
        if self.scheduling in ("serial", "parallel_sync"):
            if self.mean_rule.rule != "rank_sync":
                raise ConfigError("mean_rule: synchronous runs use the rank_sync rule")
        elif self.mean_rule.rule == "rank_sync":
            raise ConfigError("mean_rule: rank_sync requires a synchronous schedule")
        try:
            validate_rule_pair(self.mean_rule, self.var_rule)
            self.latency.validate()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.test_every < 0 or self.test_episodes < 1:
            raise ConfigError("test_every/test_episodes: invalid test cadence")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        d["mean_rule"] = MeanRuleConfig(**d["mean_rule"])
        d["var_rule"] = VarianceRuleConfig(**d["var_rule"])
        d["rl"] = RlHyper(**d["rl"])
        d["latency"] = LatencyModel(**d["latency"])
        d["hidden"] = tuple(d["hidden"])
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})

    def sha1(self) -> str:
        """Hash of the resolved configuration, embedded in every artifact."""
        items = sorted(self.to_dict().items())
        text = "\n".join("%s=%r" % (k, v) for k, v in items)
        return hashlib.sha1(text.encode()).hexdigest()[:12]


_BOOL = {"true": True, "false": False, "yes": True, "no": False, "1": True, "0": False}


def _coerce(value: str):
    v = value.strip()
    if v.lower() in _BOOL:
        return _BOOL[v.lower()]
    for conv in (int, float):
        try:
            return conv(v)
        except ValueError:
            pass
    return v


class _Section:
    def __init__(self, parser, name):
        self.name = name
        self.data = dict(parser[name]) if parser.has_section(name) else {}
        self.seen = set()

    def get(self, key, conv, default):
        if key in self.data:
            self.seen.add(key)
            raw = self.data[key]
            try:
                if conv is bool:
                    return _BOOL[raw.strip().lower()]
                return conv(raw)
            except (ValueError, KeyError) as exc:
                raise ConfigError("[%s] %s: cannot parse %r" % (self.name, key, raw)) from exc
        return default

    def require(self, key, conv, why):
        if key not in self.data:
            raise ConfigError("[%s] %s is required %s" % (self.name, key, why))
        return self.get(key, conv, None)

    def extras(self):
        return {k: _coerce(v) for k, v in self.data.items() if k not in self.seen}


def _parse_hidden(raw: str) -> tuple:
    try:
        return tuple(int(x) for x in raw.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError("[env] hidden: expected a list of layer sizes") from exc


def load_config(path, overrides=()) -> ExperimentConfig:
    """Read an experiment config file, apply section.key=value overrides."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    read = parser.read([str(path)])
    if not read:
        raise ConfigError("config file %s not found or unreadable" % (path,))
    for item in overrides:
        try:
            dotted, value = item.split("=", 1)
            section, key = dotted.split(".", 1)
        except ValueError as exc:
            raise ConfigError("override %r is not section.key=value" % (item,)) from exc
        if not parser.has_section(section):
            parser.add_section(section)
        parser[section][key] = value
    return _build(parser)


def _build(parser) -> ExperimentConfig:
    run = _Section(parser, "run")
    dist = _Section(parser, "distribution")
    pop = _Section(parser, "population_control")
    rl_s = _Section(parser, "rl")
    env_s = _Section(parser, "env")
    lat = _Section(parser, "latency")
    out = _Section(parser, "output")

    mean_rule_name = dist.get("mean_rule", str, "relative_baseline")
    mean_kwargs = {"rule": mean_rule_name}
    if mean_rule_name in ("linear", "sigmoid"):
        mean_kwargs["r"] = dist.require("r", float, "for mean rule %r" % mean_rule_name)
    else:
        mean_kwargs["r"] = dist.get("r", float, 1.0)
    if mean_rule_name in ("absolute_baseline", "relative_baseline"):
        mean_kwargs["f_b"] = dist.require("f_b", float, "for mean rule %r" % mean_rule_name)
    else:
        mean_kwargs["f_b"] = dist.get("f_b", float, 1.0)
    if mean_rule_name in FITNESS_MEAN_RULES and mean_rule_name != "full_move":
        mean_kwargs["p_positive"] = dist.require(
            "p_positive", float, "for mean rule %r" % mean_rule_name)
    else:
        mean_kwargs["p_positive"] = dist.get("p_positive", float, 0.2)
    mean_kwargs["p_negative"] = dist.get("p_negative", float, 0.0)
    mean_kwargs["k_elite"] = dist.get("k_elite", int, 5)
    mean_kwargs["weight_mode"] = dist.get("weight_mode", str, "uniform")
    mean_kwargs["literal_async_mean"] = dist.get("literal_async_mean", bool, False)

    var_rule_name = dist.get("var_rule", str, "welford_adaptive")
    var_kwargs = {"rule": var_rule_name}
    if var_rule_name == "welford_fixed":
        var_kwargs["n_fixed"] = dist.require("n_fixed", int, "for welford_fixed")
    else:
        var_kwargs["n_fixed"] = dist.get("n_fixed", int, 10)
    if var_rule_name == "constant":
        var_kwargs["constant_value"] = dist.require("constant_value", float,
                                                    "for constant variance")
    else:
        var_kwargs["constant_value"] = dist.get("constant_value", float, 1e-3)
    var_kwargs["p_th"] = dist.get("p_th", float, 0.2)
    var_kwargs["c_up"] = dist.get("c_up", float, VarianceRuleConfig.c_up)
    var_kwargs["c_down"] = dist.get("c_down", float, VarianceRuleConfig.c_down)
    var_kwargs["window"] = dist.get("window", int, 10)

    hyper = RlHyper(
        gamma=rl_s.get("gamma", float, 0.99),
        tau=rl_s.get("tau", float, 0.005),
        policy_noise=rl_s.get("policy_noise", float, 0.2),
        noise_clip=rl_s.get("noise_clip", float, 0.5),
        batch_size=rl_s.get("batch_size", int, 100),
        critic_lr=rl_s.get("critic_lr", float, 1e-3),
        actor_lr=rl_s.get("actor_lr", float, 1e-3),
        optimizer=rl_s.get("optimizer", str, "sgd"),
        critic_steps_per_env_step=rl_s.get("critic_steps_per_env_step", float, 1.0),
    )

    latency = LatencyModel(
        kind=lat.get("kind", str, "from_steps"),
        per_step_cost=lat.get("per_step_cost", float, 0.01),
        mu_log=lat.get("mu_log", float, 0.0),
        sigma_log=lat.get("sigma_log", float, 0.5),
        constant=lat.get("constant", float, 1.0),
    )

    scheduling = run.get("scheduling", str, "parallel_async")
    scheduling = _ALIASES.get(scheduling, scheduling)

    cfg = ExperimentConfig(
        objective=run.get("objective", str, "sphere"),
        dim=run.get("dim", int, 20),
        mu_init=dist.get("mu_init", float, 0.5),
        hidden=_parse_hidden(env_s.get("hidden", str, "24 24")),
        max_episode_steps=env_s.get("max_episode_steps", int, 200),
        env_params=env_s.extras(),
        mean_rule=MeanRuleConfig(**mean_kwargs),
        var_rule=VarianceRuleConfig(**var_kwargs),
        sigma_init=dist.get("sigma_init", float, 1e-3),
        epsilon_floor=dist.get("epsilon_floor", float, 1e-5),
        population_size=dist.get("population_size", int, 10),
        refresh_abs_p=dist.get("refresh_abs_p", float, 0.5),
        refresh_every=dist.get("refresh_every", int, 0),
        p_desired=pop.get("p_desired", float, 0.0),
        k_rl=pop.get("k_rl", float, 50.0),
        rl_start_step=pop.get("rl_start_step", int, 10_000),
        rl=hyper,
        replay_capacity=rl_s.get("replay_capacity", int, 200_000),
        rl_grad_steps=rl_s.get("rl_grad_steps", int, 0),
        scheduling=scheduling,
        clock=run.get("clock", str, "sim"),
        workers=run.get("workers", int, 5),
        max_steps=run.get("max_steps", int, 2_000),
        a_noise=run.get("a_noise", float, 0.1),
        latency=latency,
        max_eval_failures=run.get("max_eval_failures", int, 100),
        seed=run.get("seed", int, 0),
        float32=run.get("float32", bool, False),
        log_params=run.get("log_params", bool, True),
        test_every=out.get("test_every", int, 0),
        test_episodes=out.get("test_episodes", int, 5),
    )
    return cfg.validate()
