"""Scratch calibration for the interference experiment arms (not shipped)."""
import sys
import time

import numpy as np

from ptsl.envs import make_suite
from ptsl.sac import SacAgent, SacHyperparams, TrainConfig, agent_param_count, train

STEPS = int(sys.argv[1]) if len(sys.argv) > 1 else 15000
SEEDS = [0, 1]

suite_name = "mt4-toy"
base = SacHyperparams(hidden_dim=48, num_hidden=2, backbone="trunk", task_onehot=True)
target = agent_param_count(6, 2, 4, base)
print("baseline target params:", target)

best = None
for h in range(16, 72):
    for d in range(2, min(h, 24) + 1):
        hyper = SacHyperparams(hidden_dim=h, task_dim=d, num_hidden=2)
        c = agent_param_count(6, 2, 4, hyper)
        if c <= target and (best is None or (c, h, d) > best[:3]):
            best = (c, h, d, hyper)
count, H, D, ptsl_hyper = best
print(f"ptsl match: H={H} D={D} count={count} ({100*(target-count)/target:.2f}% under)")

arms = {
    "blind": SacHyperparams(hidden_dim=48, num_hidden=2, backbone="trunk", task_onehot=False),
    "onehot": base,
    "ptsl": ptsl_hyper,
}

for arm, hyper in arms.items():
    for seed in SEEDS:
        suite = make_suite(suite_name)
        agent = SacAgent(suite.state_dim, suite.action_dim, suite.num_tasks, hyper=hyper, seed=seed)
        t0 = time.time()
        log = train(agent, suite, STEPS, TrainConfig(eval_interval=2500, eval_episodes=10))
        final = [r for r in log.rows if r.step == max(x.step for x in log.rows)]
        per_task = {r.task_id: r.success_rate for r in final}
        conflict = 0.5 * (per_task[1] + per_task[2])
        print(
            f"{arm:7s} seed {seed}: mean={per_task[-1]:.3f} conflict_pair={conflict:.3f} "
            f"reach={per_task[0]:.2f} push={per_task[3]:.2f} ({time.time()-t0:.0f}s)",
            flush=True,
        )
