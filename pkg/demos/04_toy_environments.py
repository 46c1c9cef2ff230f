"""The toy task suite, and why its conflict pair defeats task-blind policies."""

import numpy as np

from ptsl import conflict_constant_policy_bound, make_env, make_suite

suite = make_suite("mt4-toy")
print(f"suite {suite.name}: {suite.env_ids}")
print(f"observations are {suite.state_dim}-dim [agent, object, goal], actions 2-dim\n")

print("A scripted reach policy (walk straight at the goal):")
env = make_env("reach")
obs = env.reset(seed=3)
for step in range(env.spec.horizon):
    agent, goal = obs[:2], obs[4:]
    direction = goal - agent
    action = np.clip(direction / 0.1, -1, 1)
    obs, reward, done, success = env.step(action)
    if success:
        print(f"  reached the goal at step {step + 1}")
        break

print("\nThe conflict pair shows identical observations with opposed goals:")
a, b = make_env("conflict-reach-a"), make_env("conflict-reach-b")
obs_a, obs_b = a.reset(seed=7), b.reset(seed=7)
print(f"  observations equal: {np.array_equal(obs_a, obs_b)}")
print(f"  true goals:         {a.state.goal} vs {b.state.goal}")
print("  the goal slot is zeroed, so only task identity disambiguates them")

print("\nExhaustive search over constant policies (matched resets, fine grid):")
bound, action = conflict_constant_policy_bound(num_resets=200, grid_size=21)
print(f"  best constant policy achieves mean success {bound:.3f} "
      f"(action {action}) across the pair")
print("  no observation-only strategy can reliably satisfy both tasks")

print("\nPushing couples the block to the agent on contact:")
env = make_env("push-block")
env.reset(seed=5)
env.state.agent = env.state.obj.copy()
before = env.state.obj.copy()
env.step(np.array([1.0, 0.0]))
print(f"  block moved from {before} to {env.state.obj}")
