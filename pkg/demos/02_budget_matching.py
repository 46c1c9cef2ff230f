"""Parameter arithmetic: boundary projections, budgets, and a known total.

Walks the closed-form counts at the published manipulation-benchmark shape
(104-dim encoded input, 8-dim action head, width 326, task width 50, ten
tasks), shows why the input side wants a down projection while the output
side does not, and reconstructs a documented full-agent total exactly.
"""

from ptsl import NetworkConfig, budget_match, count_parameters
from ptsl.sac import trunk_agent_param_count

BASE = dict(input_dim=104, output_dim=8, hidden_dim=326, task_dim=50,
            num_tasks=10, num_hidden=3)

print("First-layer task path, input width 104, task width 50, ten tasks:")
with_proj = count_parameters(NetworkConfig(**BASE, first_layer_down_projection=True))
without = count_parameters(NetworkConfig(**BASE, first_layer_down_projection=False))
print(f"  with a down projection:    104*50 + 10*(50*50+50) = "
      f"{with_proj.per_layer_task[0] + 104 * 50}")
print(f"  without (tasks take raw input): 10*(104*50+50) = {without.per_layer_task[0]}")
print("  the projection is cheaper because ten tasks share one input map")

print("\nLast-layer task path, output width 8:")
no_up = count_parameters(NetworkConfig(**BASE, last_layer_up_projection=False))
with_up = count_parameters(NetworkConfig(**BASE, last_layer_up_projection=True))
print(f"  without an up projection: 10*(50*8+8) = {no_up.per_layer_task[-1]}")
print(f"  with one:                 50*8 + 10*(50*50+50) = "
      f"{with_up.per_layer_task[-1] + 50 * 8}")
print("  the narrow head makes per-task output maps cheaper than projecting")

print("\nWhole networks at this shape:")
shared = count_parameters(NetworkConfig(**BASE, projection_mode="shared"))
indep = count_parameters(NetworkConfig(**BASE, projection_mode="independent"))
print(f"  shared projections:      {shared.total:,}")
print(f"  independent projections: {indep.total:,} "
      f"(+{100 * (indep.total - shared.total) / shared.total:.1f}%)")

print("\nBudget matching picks the largest config under a target:")
target = 250_000
cfg = budget_match(target, dict(input_dim=104, output_dim=8, num_tasks=10, num_hidden=3),
                   hidden_range=range(32, 257), task_dim_range=range(8, 65))
print(f"  target {target:,} -> hidden={cfg.hidden_dim} task={cfg.task_dim} "
      f"count={count_parameters(cfg).total:,}")

print("\nA documented full-agent total, reconstructed from first principles:")
total = trunk_agent_param_count(state_dim=12, action_dim=4, num_tasks=10,
                                hidden_dim=400, num_hidden=3,
                                task_onehot=False, include_targets=True)
print(f"  plain trunk agent, width 400, three hidden layers, state-only input,")
print(f"  actor + twin critics + their EMA copies + ten temperatures = {total:,}")
