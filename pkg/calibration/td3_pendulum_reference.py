#!/usr/bin/env python3
"""Reference gradient-only baseline on the pendulum swing-up task.

A plain twin-critic deterministic policy gradient loop (one continuously
trained actor, no population), built on the same network primitives as
the package but with the textbook single-actor structure. Its test-suite
return calibrates the hybrid acceptance threshold: the committed
threshold in tests/thresholds.py is a round number below the plateau this
reference reaches.

Run:  python calibration/td3_pendulum_reference.py [--steps 60000] [--seeds 0 1 2]
"""

import argparse
import json
import time

import numpy as np

from asynces import envs, nets, rl

HIDDEN = (24, 24)
TEST_EPISODES = 5


def test_return(actor, spec, env, tag):
    total = 0.0
    for ep in range(TEST_EPISODES):
        rng = np.random.default_rng(np.random.SeedSequence((tag, 0x7E57, ep)))
        total += envs.evaluate(actor, spec, env, 0.0, rng).total_reward
    return total / TEST_EPISODES


def run_reference(seed, max_steps, explore_noise=0.1, start_steps=1000,
                  policy_delay=2, verbose=True):
    env = envs.PendulumEnv()
    aspec = nets.actor_spec(env.state_dim, env.action_dim, HIDDEN)
    cspec = nets.critic_spec(env.state_dim, env.action_dim, HIDDEN)
    hyper = rl.RlHyper(optimizer="adam")
    rng = np.random.default_rng(seed)

    actor = nets.init_params(aspec, rng)
    actor_opt = nets.Adam(hyper.actor_lr)
    critic = rl.CriticState(aspec, cspec, hyper, rng)
    critic.set_actor_target(actor)
    buffer = rl.ReplayBuffer(200_000, env.state_dim, env.action_dim)

    state = env.reset(rng)
    steps = 0
    curve = []
    best = -np.inf
    while steps < max_steps:
        if steps < start_steps:
            action = rng.uniform(-1.0, 1.0, env.action_dim)
        else:
            action = nets.actor_forward(aspec, actor, state)
            action = np.clip(action + explore_noise * rng.standard_normal(env.action_dim),
                             -1.0, 1.0)
        next_state, reward, done = env.step(state, action)
        buffer.append(envs.Transition(state, action, reward, next_state, done))
        state = next_state if not done and (steps + 1) % env.max_steps else env.reset(rng)
        if done:
            state = env.reset(rng)
        steps += 1

        if steps >= start_steps and buffer.size >= hyper.batch_size:
            rl.critic_train_step(critic, buffer, rng)
            if steps % policy_delay == 0:
                states = buffer.sample_states(hyper.batch_size, rng)
                grad = rl.actor_objective_grad(actor, aspec, critic.q1, cspec, states)
                actor = actor_opt.step(actor, -grad)
                critic.track_actor(actor)

        if steps % 2000 == 0:
            ret = test_return(actor, aspec, env, seed)
            best = max(best, ret)
            curve.append({"steps": steps, "test_return": ret})
            if verbose:
                print("  seed %d steps %6d test_return %9.2f" % (seed, steps, ret))
    return {"seed": seed, "best": best, "final": curve[-1]["test_return"],
            "curve": curve}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--steps", type=int, default=60_000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default="calibration/td3_pendulum_reference.json")
    args = ap.parse_args()

    t0 = time.time()
    results = [run_reference(seed, args.steps) for seed in args.seeds]
    summary = {
        "hidden": list(HIDDEN),
        "max_steps": args.steps,
        "bests": [r["best"] for r in results],
        "finals": [r["final"] for r in results],
        "elapsed_s": round(time.time() - t0, 1),
        "runs": results,
    }
    with open(args.out, "w") as fh:
        json.dump(summary, fh, indent=1)
    print("bests:", summary["bests"])
    print("finals:", summary["finals"])
    print("wrote %s (%.1fs)" % (args.out, summary["elapsed_s"]))


if __name__ == "__main__":
    main()
