"""Run artifacts: JSONL event logs, their replay, and CSV summaries.

Every artifact is self-describing: the JSONL header record and the CSV
comment line carry the config hash and seed. Update events carry enough
state (fitness, parameters, checksum) that feeding them back through a
fresh updater reproduces the distribution trajectory exactly; replay
verifies the per-event checksums.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .distribution import DistributionUpdater, Individual, PopulationDistribution

LOG_FORMAT = 1


class LogError(ValueError):
    """Malformed run log; the message carries the offending line number."""


class RunLog:
    """Append-only JSONL sink for run events."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "w", encoding="utf-8")

    def write_header(self, cfg: ExperimentConfig, dist: PopulationDistribution):
        fitness_mu = dist.fitness_mu if math.isfinite(dist.fitness_mu) else None
        self.write({
            "kind": "header", "format": LOG_FORMAT,
            "config_sha1": cfg.sha1(), "seed": cfg.seed,
            "mode": cfg.scheduling, "clock": cfg.clock, "float32": cfg.float32,
            "dim": dist.dim,
            "mu": [float(v) for v in dist.mu],
            "sigma2": [float(v) for v in dist.sigma2],
            "fitness_mu": fitness_mu,
            "config": cfg.to_dict(),
        })

    def write(self, event: dict):
        self._fh.write(json.dumps(event) + "\n")

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_log(path):
    """Yield (line_number, record). A cut-off final line ends the stream;
    a corrupted line elsewhere raises with its line number."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.readlines()
    for i, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            yield i, json.loads(line)
        except json.JSONDecodeError as exc:
            if i == len(lines):
                return  # truncated tail: replay the prefix
            raise LogError("line %d: %s" % (i, exc)) from exc


@dataclass
class ReplayResult:
    dist: PopulationDistribution
    updater: DistributionUpdater
    n_events: int
    last_line: int
    final_crc: int


def replay_log(path, verify_crc: bool = True) -> ReplayResult:
    """Rebuild the distribution trajectory by re-applying logged events."""
    records = read_log(path)
    try:
        lineno, header = next(records)
    except StopIteration:
        raise LogError("line 1: empty log") from None
    if header.get("kind") != "header":
        raise LogError("line %d: first record must be the header" % lineno)
    cfg = ExperimentConfig.from_dict(header["config"])
    dtype = np.float32 if header["float32"] else np.float64
    dist = PopulationDistribution(
        np.array(header["mu"], dtype=dtype),
        np.array(header["sigma2"], dtype=dtype),
        fitness_mu=header["fitness_mu"] if header["fitness_mu"] is not None else math.nan,
        epsilon_floor=cfg.epsilon_floor, dtype=dtype)
    updater = DistributionUpdater(dist, cfg.mean_rule, cfg.var_rule,
                                  population_size=cfg.population_size,
                                  refresh_abs_p=cfg.refresh_abs_p,
                                  refresh_every=cfg.refresh_every)
    n_events = 0
    last_line = lineno
    for lineno, ev in records:
        kind = ev.get("kind")
        if kind == "refresh":
            updater.note_refresh(ev["fitness"])
        elif kind == "update":
            if "z" not in ev:
                raise LogError("line %d: update lacks parameters; "
                               "run was logged with log_params off" % lineno)
            rec = updater.apply(ev["fitness"], np.array(ev["z"], dtype=dtype))
            if verify_crc and ev.get("crc") is not None and rec.crc != ev["crc"]:
                raise LogError("line %d: replayed state diverged (crc mismatch)" % lineno)
        elif kind == "gen_update":
            if "z" not in ev:
                raise LogError("line %d: generation update lacks parameters" % lineno)
            elites = [Individual(z=np.array(z, dtype=dtype), fitness=f)
                      for z, f in zip(ev["z"], ev["fitness"])]
            rec = updater.apply_generation(elites)
            if verify_crc and ev.get("crc") is not None and rec.crc != ev["crc"]:
                raise LogError("line %d: replayed state diverged (crc mismatch)" % lineno)
        else:
            continue
        n_events += 1
        last_line = lineno
    return ReplayResult(dist=dist, updater=updater, n_events=n_events,
                        last_line=last_line, final_crc=dist.crc())


def mu_trajectory(path):
    """Per-update (mu, sigma2) checksums straight from the log."""
    return [ev["crc"] for _, ev in read_log(path)
            if ev.get("kind") in ("update", "gen_update") and "crc" in ev]


def _comment(cfg: ExperimentConfig) -> str:
    return "# config_sha1=%s seed=%d\n" % (cfg.sha1(), cfg.seed)


def write_curve_csv(path, cfg: ExperimentConfig, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_comment(cfg))
        fh.write("total_steps,best_fitness,mean_fitness\n")
        for r in rows:
            fh.write("%d,%r,%r\n" % (r["total_steps"], r["best_fitness"],
                                     r["mean_fitness"]))


def write_timing_csv(path, rows, comment: str = ""):
    with open(path, "w", encoding="utf-8") as fh:
        if comment:
            fh.write("# %s\n" % comment)
        fh.write("mode,workers,makespan,reduction_vs_serial\n")
        for r in rows:
            fh.write("%s,%d,%r,%r\n" % (r["mode"], r["workers"], r["makespan"],
                                        r["reduction_vs_serial"]))


def write_compare_csv(path, rows, comment: str = ""):
    with open(path, "w", encoding="utf-8") as fh:
        if comment:
            fh.write("# %s\n" % comment)
        fh.write("mean_rule,var_rule,seeds,mean,std\n")
        for r in rows:
            fh.write("%s,%s,%d,%r,%r\n" % (r["mean_rule"], r["var_rule"],
                                           r["seeds"], r["mean"], r["std"]))


def write_snapshot(path, dist: PopulationDistribution):
    with open(path, "wb") as fh:
        fh.write(dist.to_bytes())


def read_snapshot(path, dtype=np.float32) -> PopulationDistribution:
    with open(path, "rb") as fh:
        return PopulationDistribution.from_bytes(fh.read(), dtype=dtype)
