"""The headline comparison: task-blind trunk vs one-hot trunk vs task layers.

Runs three budget-matched agents on the four-task suite containing the
conflict pair and prints the final mean success of each.  The default scale
(4000 steps per task, two seeds) finishes in roughly twenty minutes; pass a
larger budget for sharper separation, e.g.

    python demos/06_interference_experiment.py 20000 4
"""

import os
import sys

from ptsl import default_config, report, run

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 4000
n_seeds = int(sys.argv[2]) if len(sys.argv) > 2 else 2
out_dir = sys.argv[3] if len(sys.argv) > 3 else "runs/interference-demo"

common = dict(
    suite="mt4-toy",
    seeds=list(range(n_seeds)),
    steps_per_task=steps,
    eval_interval=max(500, steps // 10),
    eval_episodes=10,
    out_dir=out_dir,
)

experiments = [
    ("task-blind trunk", default_config("mtsac-baseline", task_onehot=False, **common)),
    ("one-hot trunk", default_config("mtsac-baseline", **common)),
    ("task layers", default_config("ptsl-only", **common)),
]

for label, cfg in experiments:
    record = run(cfg)
    summary = report(record)
    for arm in summary.arms:
        print(f"{label:<18} ({arm.name}, {arm.param_count:,} params): "
              f"final success {arm.final_success:.3f} +- {arm.final_stderr:.3f}")
    print(f"  details: {os.path.join(record.directory, 'summary.txt')}")
