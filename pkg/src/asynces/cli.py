"""Command-line driver: run, compare, timing-study, replay, selftest.

The CLI is a thin single-threaded front end; all concurrency lives behind
the engine. Artifacts (JSONL event log, learning-curve CSV, snapshot)
land under --out, or $ASYNCES_OUT, or ./out.
"""

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import engine, runlog, timing, transport
from .config import ConfigError, ExperimentConfig, load_config

OUT_ENV = "ASYNCES_OUT"


def _out_dir(args) -> Path:
    root = args.out or os.environ.get(OUT_ENV, "out")
    path = Path(root)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _run_name(config_path, cfg) -> str:
    stem = Path(config_path).stem
    return "%s_seed%d" % (stem, cfg.seed)


def _execute(cfg: ExperimentConfig, log_path=None, transport_mode="inproc"):
    log = runlog.RunLog(log_path) if log_path else None
    evaluators = None
    if transport_mode == "socket":
        objective = engine.build_objective(cfg)
        spec = engine.build_actor_spec(cfg, objective)
        n = 1 if cfg.scheduling == "serial" else cfg.workers
        evaluators = transport.socket_evaluators(cfg, objective, spec, n)
    try:
        return engine.run_experiment(cfg, evaluators=evaluators, log=log)
    finally:
        if log:
            log.close()


def cmd_run(args) -> int:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append("run.seed=%d" % args.seed)
    cfg = load_config(args.config, overrides)
    out = _out_dir(args)
    name = _run_name(args.config, cfg)
    log_path = out / ("%s.jsonl" % name)
    result = _execute(cfg, log_path, args.transport)
    acct = result.accounting
    runlog.write_curve_csv(out / ("%s.csv" % name), cfg, acct.curve)
    runlog.write_snapshot(out / ("%s.snapshot.bin" % name), result.dist)
    shares = acct.contribution_shares()
    print("run %s: best_fitness=%.6g total_steps=%d makespan=%.6g "
          "updates=%d refreshes=%d es_share=%.3f rl_share=%.3f"
          % (name, acct.best_fitness, acct.total_steps, acct.makespan,
             acct.n_updates, acct.n_refreshes, shares["es"], shares["rl"]))
    print("artifacts: %s{.jsonl,.csv,.snapshot.bin}" % (out / name))
    return 0


def _parse_rules(spec: str):
    pairs = []
    for item in spec.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            mean, var = item.split(":")
        except ValueError:
            raise ConfigError("rule %r is not mean_rule:var_rule" % item) from None
        pairs.append((mean.strip(), var.strip()))
    if len(pairs) < 2:
        raise ConfigError("compare needs at least two mean_rule:var_rule pairs")
    return pairs


def cmd_compare(args) -> int:
    pairs = _parse_rules(args.rules)
    out = _out_dir(args)
    rows = []
    for mean_rule, var_rule in pairs:
        finals = []
        for seed in range(args.seeds):
            overrides = list(args.set or []) + [
                "distribution.mean_rule=%s" % mean_rule,
                "distribution.var_rule=%s" % var_rule,
                "run.seed=%d" % (args.seed0 + seed),
            ]
            cfg = load_config(args.config, overrides)
            result = _execute(cfg)
            finals.append(result.accounting.curve[-1]["mean_fitness"])
        rows.append({"mean_rule": mean_rule, "var_rule": var_rule,
                     "seeds": len(finals), "mean": float(np.mean(finals)),
                     "std": float(np.std(finals))})
    base_cfg = load_config(args.config)
    path = out / ("%s_compare.csv" % Path(args.config).stem)
    runlog.write_compare_csv(path, rows, comment="config_sha1=%s seeds=%d"
                             % (base_cfg.sha1(), args.seeds))
    width = max(len("%s+%s" % (r["mean_rule"], r["var_rule"])) for r in rows)
    print("%-*s  %12s  %12s" % (width, "rule", "mean", "std"))
    for r in sorted(rows, key=lambda r: -r["mean"]):
        print("%-*s  %12.5g  %12.5g"
              % (width, "%s+%s" % (r["mean_rule"], r["var_rule"]), r["mean"], r["std"]))
    print("table: %s" % path)
    return 0


def _parse_worker_range(spec: str):
    if ".." in spec:
        lo, hi = spec.split("..")
        return list(range(int(lo), int(hi) + 1))
    return [int(w) for w in spec.split(",")]


def cmd_timing_study(args) -> int:
    cfg = load_config(args.config, list(args.set or []))
    out = _out_dir(args)
    rng = np.random.default_rng(cfg.seed)
    steps = None
    if cfg.latency.kind == "from_steps":
        objective = engine.build_objective(cfg)
        if not objective.episodic:
            raise ConfigError("latency.kind=from_steps needs an episodic objective")
        steps = timing.episode_step_trace(objective, cfg.hidden, cfg.sigma_init,
                                          args.evaluations, rng, cfg.a_noise)
    durations = timing.duration_trace(cfg.latency, args.evaluations, rng, steps)
    serial_makespan = timing.schedule_serial(durations).makespan
    rows = []
    for workers in _parse_worker_range(args.workers):
        stats = timing.simulate_timing(durations, workers)
        for mode in timing.MODES:
            st = stats[mode]
            rows.append({"mode": mode, "workers": st.workers, "makespan": st.makespan,
                         "reduction_vs_serial": 1.0 - st.makespan / serial_makespan})
    path = out / ("%s_timing.csv" % Path(args.config).stem)
    runlog.write_timing_csv(path, rows, comment="config_sha1=%s evaluations=%d seed=%d"
                            % (cfg.sha1(), args.evaluations, cfg.seed))
    print("%-14s %8s %12s %10s" % ("mode", "workers", "makespan", "reduction"))
    for r in rows:
        print("%-14s %8d %12.4f %9.1f%%" % (r["mode"], r["workers"], r["makespan"],
                                            100.0 * r["reduction_vs_serial"]))
    print("table: %s" % path)
    return 0


def cmd_replay(args) -> int:
    res = runlog.replay_log(args.log)
    print("replayed %d update events (last log line %d), final crc %d"
          % (res.n_events, res.last_line, res.final_crc))
    if args.snapshot:
        saved = runlog.read_snapshot(args.snapshot)
        ok_mu = np.array_equal(saved.mu, res.dist.mu.astype(np.float32))
        ok_s2 = np.array_equal(saved.sigma2, res.dist.sigma2.astype(np.float32))
        if not (ok_mu and ok_s2):
            print("snapshot MISMATCH")
            return 1
        print("snapshot matches")
    return 0


def cmd_selftest(args) -> int:
    from . import selftest

    return selftest.run()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="asynces",
        description="Asynchronous evolution-strategy policy search")
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one configured experiment")
    run_p.add_argument("--config", required=True)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override one config entry")
    run_p.add_argument("--out", default=None)
    run_p.add_argument("--transport", choices=("inproc", "socket"), default="inproc")
    run_p.set_defaults(func=cmd_run)

    cmp_p = sub.add_parser("compare", help="run a rule matrix over seeds")
    cmp_p.add_argument("--config", required=True)
    cmp_p.add_argument("--rules", required=True,
                       help="comma list of mean_rule:var_rule pairs")
    cmp_p.add_argument("--seeds", type=int, default=5)
    cmp_p.add_argument("--seed0", type=int, default=0)
    cmp_p.add_argument("--set", action="append")
    cmp_p.add_argument("--out", default=None)
    cmp_p.set_defaults(func=cmd_compare)

    tim_p = sub.add_parser("timing-study", help="makespan of the scheduling modes")
    tim_p.add_argument("--config", required=True)
    tim_p.add_argument("--workers", default="2..9",
                       help="worker counts, e.g. 5 or 2..9 or 2,5,9")
    tim_p.add_argument("--evaluations", type=int, default=200)
    tim_p.add_argument("--set", action="append")
    tim_p.add_argument("--out", default=None)
    tim_p.set_defaults(func=cmd_timing_study)

    rep_p = sub.add_parser("replay", help="rebuild a distribution trajectory from a log")
    rep_p.add_argument("--log", required=True)
    rep_p.add_argument("--snapshot", default=None)
    rep_p.set_defaults(func=cmd_replay)

    self_p = sub.add_parser("selftest", help="quick internal consistency checks")
    self_p.set_defaults(func=cmd_selftest)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except (runlog.LogError, engine.RunError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
