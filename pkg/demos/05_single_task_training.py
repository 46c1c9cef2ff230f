"""Train soft actor-critic on the lone reach task and watch it converge.

Takes an optional step budget (default 8000, a couple of minutes on a
laptop).  The deterministic policy usually solves reach well before then.
"""

import sys

from ptsl import SacAgent, SacHyperparams, TrainConfig, make_suite, train

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 8000

suite = make_suite("reach-solo")
hyper = SacHyperparams(hidden_dim=48, num_hidden=2, backbone="trunk", task_onehot=True)
agent = SacAgent(suite.state_dim, suite.action_dim, suite.num_tasks, hyper=hyper, seed=0)
print(f"trainable parameters: {agent.param_counts()['total']:,}")
print(f"training {steps} steps on {suite.env_ids[0]} ...\n")

log = train(agent, suite, steps_per_task=steps,
            config=TrainConfig(eval_interval=1000, eval_episodes=10))

print(f"{'step':>6} {'success':>8} {'critic':>8} {'alpha':>7}")
for row in log.rows:
    if row.task_id == -1:
        print(f"{row.step:>6} {row.success_rate:>8.2f} {row.critic_loss:>8.4f} {row.alpha:>7.4f}")

final = [r for r in log.rows if r.task_id == -1][-1]
print(f"\nfinal deterministic success rate: {final.success_rate:.2f}")
