"""Seeded 2-D point-mass environments with genuine cross-task conflict.

Every environment shares one interface: observations are
``[agent(2), object(2) or zeros, goal(2) or zeros]``, actions live in
``[-1, 1]^2``, and each step moves the agent by a tenth of the action inside
the unit arena.  An episode succeeds once the family's relevant distance
drops below the success radius at any step; episodes end at the horizon.

The conflict pair is the interesting case: both tasks observe identically
distributed states with the goal slot zeroed, but their true goals are
mirror images, so a policy that ignores task identity cannot reliably
succeed on both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError

ARENA_LOW, ARENA_HIGH = -1.0, 1.0
STEP_SCALE = 0.1
HORIZON = 100
SUCCESS_RADIUS = 0.05
CONTACT_RADIUS = 0.15
CONFLICT_GOAL = np.array([0.5, 0.5])
REWARD_LOWER_BOUND = -2.0 * np.sqrt(2.0)

FAMILIES = ("reach", "conflict_reach", "push_block", "gated_reach")


@dataclass(frozen=True)
class EnvSpec:
    id: str
    family: str
    state_dim: int = 6
    action_dim: int = 2
    horizon: int = HORIZON
    success_radius: float = SUCCESS_RADIUS

    def __post_init__(self):
        if self.horizon <= 0:
            raise ConfigError("horizon must be positive")
        if self.success_radius <= 0:
            raise ConfigError("success_radius must be positive")


@dataclass
class EnvState:
    agent: np.ndarray
    obj: np.ndarray | None
    goal: np.ndarray
    steps: int


class GoalRegion:
    """Axis-aligned box, optionally excluding a ball around the origin."""

    def __init__(self, low, high, min_norm=0.0):
        self.low = np.asarray(low, dtype=np.float64)
        self.high = np.asarray(high, dtype=np.float64)
        self.min_norm = min_norm

    def sample(self, rng):
        while True:
            g = rng.uniform(self.low, self.high)
            if np.linalg.norm(g) >= self.min_norm:
                return g

    def contains(self, point):
        inside = np.all(point >= self.low - 1e-12) and np.all(point <= self.high + 1e-12)
        return bool(inside and np.linalg.norm(point) >= self.min_norm - 1e-12)


class PointRegion:
    """Degenerate region holding a single fixed goal."""

    def __init__(self, point):
        self.point = np.asarray(point, dtype=np.float64)

    def sample(self, rng):
        return self.point.copy()

    def contains(self, point):
        return bool(np.allclose(point, self.point))


AGENT_START = GoalRegion([-0.8, -0.8], [0.8, 0.8])


class ToyEnv:
    """Base point-mass environment; subclasses define family specifics."""

    show_goal = True
    has_object = False

    def __init__(self, spec):
        self.spec = spec
        self.state = None
        self._done = True
        self._success = False

    # -- family hooks --------------------------------------------------------

    def goal_region(self):
        raise NotImplementedError

    def sample_object(self, rng):
        return None

    def relevant_distance(self):
        return float(np.linalg.norm(self.state.agent - self.true_goal()))

    def true_goal(self):
        return self.state.goal

    def reward(self):
        return -self.relevant_distance()

    def couple_object(self, agent_before, displacement):
        pass

    # -- interface -------------------------------------------------------------

    def reset(self, seed):
        rng = np.random.default_rng(seed)
        agent = AGENT_START.sample(rng)
        goal = self.goal_region().sample(rng)
        obj = self.sample_object(rng)
        self.state = EnvState(agent=agent, obj=obj, goal=goal, steps=0)
        self._done = False
        self._success = False
        return self.observation()

    def observation(self):
        s = self.state
        obj = s.obj if s.obj is not None else np.zeros(2)
        goal = s.goal if self.show_goal else np.zeros(2)
        return np.concatenate([s.agent, obj, goal])

    def step(self, action):
        if self._done or self.state is None:
            raise ContractError("step called on a finished episode; call reset first")
        action = np.clip(np.asarray(action, dtype=np.float64), -1.0, 1.0)
        before = self.state.agent.copy()
        self.state.agent = np.clip(
            self.state.agent + STEP_SCALE * action, ARENA_LOW, ARENA_HIGH
        )
        self.couple_object(before, self.state.agent - before)
        self.state.steps += 1
        if self.relevant_distance() < self.spec.success_radius:
            self._success = True
        reward = self.reward()
        self._done = self.state.steps >= self.spec.horizon
        return self.observation(), float(reward), self._done, self._success

    @property
    def success(self):
        return self._success


class ReachEnv(ToyEnv):
    """Move the agent to a visible resampled goal."""

    def __init__(self, spec, region=None):
        super().__init__(spec)
        self._region = region or GoalRegion([-0.7, -0.7], [0.7, 0.7])

    def goal_region(self):
        return self._region


class ConflictReachEnv(ToyEnv):
    """Reach a fixed hidden goal; paired tasks use mirror-image goals.

    The goal slot of the observation is zeroed, so observations are
    identically distributed across the pair while the reward fields are
    opposed.
    """

    show_goal = False

    def __init__(self, spec, sign):
        super().__init__(spec)
        self.sign = sign
        self._region = PointRegion(sign * CONFLICT_GOAL)

    def goal_region(self):
        return self._region


class PushBlockEnv(ToyEnv):
    """Carry a block to a visible goal; reward tracks the block, not the agent.

    The block moves with the agent while they are in contact.  A light
    reach-the-block shaping term keeps the reward informative before first
    contact without leaving the documented reward bounds.
    """

    has_object = True

    def __init__(self, spec, region=None):
        super().__init__(spec)
        self._region = region or GoalRegion([-0.7, -0.7], [0.7, 0.7])

    def goal_region(self):
        return self._region

    def sample_object(self, rng):
        return rng.uniform(-0.5, 0.5, size=2)

    def couple_object(self, agent_before, displacement):
        if np.linalg.norm(agent_before - self.state.obj) < CONTACT_RADIUS:
            self.state.obj = np.clip(self.state.obj + displacement, ARENA_LOW, ARENA_HIGH)

    def relevant_distance(self):
        return float(np.linalg.norm(self.state.obj - self.state.goal))

    def reward(self):
        to_goal = self.relevant_distance()
        to_block = float(np.linalg.norm(self.state.agent - self.state.obj))
        return -(2.0 * to_goal + to_block) / 3.0


class GatedReachEnv(ToyEnv):
    """Reach a per-task transform of the displayed goal.

    The goal shown in the observation is real, but the rewarded target is
    ``sign * goal``, so paired tasks see identical observations and must be
    told apart by task identity.
    """

    def __init__(self, spec, sign):
        super().__init__(spec)
        self.sign = sign
        self._region = GoalRegion([-0.7, -0.7], [0.7, 0.7], min_norm=0.25)

    def goal_region(self):
        return self._region

    def true_goal(self):
        return self.sign * self.state.goal


def _spec(env_id, family):
    return EnvSpec(id=env_id, family=family)


ENV_REGISTRY = {
    "reach": lambda: ReachEnv(_spec("reach", "reach")),
    "reach-north": lambda: ReachEnv(
        _spec("reach-north", "reach"), region=GoalRegion([-0.7, 0.3], [0.7, 0.7])
    ),
    "conflict-reach-a": lambda: ConflictReachEnv(_spec("conflict-reach-a", "conflict_reach"), +1.0),
    "conflict-reach-b": lambda: ConflictReachEnv(_spec("conflict-reach-b", "conflict_reach"), -1.0),
    "push-block": lambda: PushBlockEnv(_spec("push-block", "push_block")),
    "push-block-wide": lambda: PushBlockEnv(
        _spec("push-block-wide", "push_block"), region=GoalRegion([-0.9, -0.9], [0.9, 0.9])
    ),
    "gated-reach-a": lambda: GatedReachEnv(_spec("gated-reach-a", "gated_reach"), +1.0),
    "gated-reach-b": lambda: GatedReachEnv(_spec("gated-reach-b", "gated_reach"), -1.0),
}

SUITES = {
    "reach-solo": ["reach"],
    "conflict-pair": ["conflict-reach-a", "conflict-reach-b"],
    "mt4-toy": ["reach", "conflict-reach-a", "conflict-reach-b", "push-block"],
    "mt8-toy": [
        "reach",
        "conflict-reach-a",
        "conflict-reach-b",
        "push-block",
        "gated-reach-a",
        "gated-reach-b",
        "reach-north",
        "push-block-wide",
    ],
}


class EnvSuite:
    """A fixed, ordered collection of tasks sharing one state/action interface."""

    def __init__(self, name, envs):
        self.name = name
        self.envs = envs
        self.num_tasks = len(envs)
        self.state_dim = envs[0].spec.state_dim
        self.action_dim = envs[0].spec.action_dim
        self.horizon = envs[0].spec.horizon

    @property
    def env_ids(self):
        return [env.spec.id for env in self.envs]


def make_env(env_id):
    try:
        return ENV_REGISTRY[env_id]()
    except KeyError:
        raise ConfigError(f"unknown environment id {env_id!r}") from None


def make_suite(name):
    """Build a named suite, or an ad-hoc one from comma-separated env ids."""
    if name in SUITES:
        ids = SUITES[name]
    elif "," in name:
        ids = [part.strip() for part in name.split(",") if part.strip()]
    else:
        raise ConfigError(f"unknown suite {name!r}; known: {sorted(SUITES)}")
    return EnvSuite(name, [make_env(env_id) for env_id in ids])


def conflict_constant_policy_bound(num_resets=200, grid_size=21, seed=0):
    """Best mean success over the conflict pair for any constant policy.

    Evaluates every constant action on a grid over ``[-1, 1]^2`` against
    matched resets of both conflict tasks.  Trajectories under a constant
    action are closed-form (per-axis clipped rays), which this exploits for
    speed; the closed form is verified against real environment stepping in
    the test suite.
    """
    env = make_env("conflict-reach-a")
    horizon = env.spec.horizon
    radius = env.spec.success_radius

    starts = np.empty((num_resets, 2))
    for k in range(num_resets):
        rng = np.random.default_rng(seed + k)
        starts[k] = AGENT_START.sample(rng)

    steps = np.arange(horizon + 1).reshape(-1, 1, 1)
    goals = np.stack([CONFLICT_GOAL, -CONFLICT_GOAL])

    axis = np.linspace(-1.0, 1.0, grid_size)
    best = 0.0
    best_action = None
    for ax in axis:
        for ay in axis:
            action = np.array([ax, ay])
            pos = np.clip(starts[None, :, :] + STEP_SCALE * action * steps, ARENA_LOW, ARENA_HIGH)
            # distance of every visited position (steps 1..horizon) to each goal
            hits = []
            for g in goals:
                d = np.linalg.norm(pos[1:] - g, axis=2)
                hits.append((d.min(axis=0) < radius))
            mean_success = 0.5 * (hits[0].mean() + hits[1].mean())
            if mean_success > best:
                best = mean_success
                best_action = action
    return float(best), best_action
