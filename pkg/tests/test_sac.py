"""Agent updates checked against straight-line recomputation and sampling oracles."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from ptsl import autodiff as ad
from ptsl.autodiff import Tape, Tensor
from ptsl.encoders import EncoderConfig
from ptsl.envs import make_suite
from ptsl.errors import ContractError
from ptsl.gradcheck import check_gradients
from ptsl.sac import (
    LOG_2PI,
    ReplayBuffer,
    SacAgent,
    SacHyperparams,
    TaskBatch,
    agent_param_count,
    train,
    trunk_agent_param_count,
)


def tiny_hyper(**overrides):
    base = dict(hidden_dim=8, task_dim=3, num_hidden=1, batch_size=16,
                warmup_steps_per_task=40, buffer_capacity_per_task=500)
    base.update(overrides)
    return SacHyperparams(**base)


def make_agent(state_dim=4, action_dim=2, num_tasks=2, seed=0, **overrides):
    return SacAgent(state_dim, action_dim, num_tasks, hyper=tiny_hyper(**overrides), seed=seed)


def random_batch(agent, rng, size=12):
    tasks = np.sort(rng.integers(0, agent.num_tasks, size=size))
    slices = []
    start = 0
    for k in range(1, size + 1):
        if k == size or tasks[k] != tasks[start]:
            slices.append((int(tasks[start]), slice(start, k)))
            start = k
    return TaskBatch(
        states=rng.normal(size=(size, agent.state_dim)),
        actions=np.tanh(rng.normal(size=(size, agent.action_dim))),
        rewards=rng.normal(size=size),
        next_states=rng.normal(size=(size, agent.state_dim)),
        dones=np.zeros(size, dtype=bool),
        task_ids=tasks,
        slices=slices,
    )


class TestReplayBuffer:
    def test_per_task_indices_partition_contents(self):
        buf = ReplayBuffer(capacity=8, state_dim=2, action_dim=1, num_tasks=3)
        rng = np.random.default_rng(0)
        for k in range(20):
            buf.add(rng.normal(size=2), [0.5], 0.0, rng.normal(size=2), False,
                    int(rng.integers(3)))
            all_idx = sorted(i for lst in buf.task_indices for i in lst)
            assert all_idx == list(range(len(buf)))
            for task, lst in enumerate(buf.task_indices):
                for i in lst:
                    assert buf.task_ids[i] == task

    def test_capacity_bound(self):
        buf = ReplayBuffer(capacity=4, state_dim=1, action_dim=1, num_tasks=1)
        for _ in range(10):
            buf.add([0.0], [0.0], 0.0, [0.0], False, 0)
        assert len(buf) == 4

    def test_sampling_is_seed_deterministic(self):
        buf = ReplayBuffer(capacity=64, state_dim=2, action_dim=1, num_tasks=2)
        rng = np.random.default_rng(1)
        for k in range(50):
            buf.add(rng.normal(size=2), [0.1], float(k), rng.normal(size=2), False, k % 2)
        a = buf.sample(16, np.random.default_rng(7))
        b = buf.sample(16, np.random.default_rng(7))
        npt.assert_array_equal(a.rewards, b.rewards)
        npt.assert_array_equal(a.task_ids, b.task_ids)

    def test_sample_sorted_with_valid_slices(self):
        buf = ReplayBuffer(capacity=64, state_dim=1, action_dim=1, num_tasks=3)
        rng = np.random.default_rng(2)
        for k in range(60):
            buf.add([0.0], [0.0], 0.0, [0.0], False, int(rng.integers(3)))
        batch = buf.sample(32, rng)
        assert np.all(np.diff(batch.task_ids) >= 0)
        covered = np.zeros(32, dtype=bool)
        for task, sl in batch.slices:
            assert np.all(batch.task_ids[sl] == task)
            covered[sl] = True
        assert covered.all()

    def test_rejects_out_of_bounds_actions(self):
        buf = ReplayBuffer(capacity=4, state_dim=1, action_dim=1, num_tasks=1)
        with pytest.raises(ContractError):
            buf.add([0.0], [1.5], 0.0, [0.0], False, 0)


class TestSampleAction:
    def test_zero_mean_tiny_std_gives_zero_action_and_zero_correction(self):
        agent = make_agent()
        # zero the actor head so mean = 0 and log_std = 0 (std = 1 but noise 0)
        agent.actor_store.theta.fill(0.0)
        action, _ = agent.sample_action(np.zeros(4), 0, stochastic=False)
        npt.assert_array_equal(action, np.zeros(2))
        # tanh change-of-variables correction at u = 0 is log(1 - tanh(0)^2) = 0
        assert ad.squash_logdet(Tensor(np.zeros(1))).data[0] == 0.0

    def test_deterministic_mode_is_repeatable(self):
        agent = make_agent(seed=3)
        state = np.random.default_rng(0).normal(size=4)
        first, logp1 = agent.sample_action(state, 1, stochastic=False)
        second, logp2 = agent.sample_action(state, 1, stochastic=False)
        npt.assert_array_equal(first, second)
        assert logp1 == logp2

    def test_stochastic_actions_stay_in_bounds(self):
        agent = make_agent(seed=4)
        state = np.zeros(4)
        for _ in range(100):
            action, _ = agent.sample_action(state, 0, stochastic=True)
            assert np.all(np.abs(action) < 1.0)

    def test_log_prob_matches_monte_carlo_density(self):
        # one-dimensional action so the density is directly binnable
        agent = SacAgent(3, 1, 1, hyper=tiny_hyper(), seed=9)
        state = np.array([[0.3, -0.7, 1.1]])
        slices = [(0, slice(0, 1))]
        with ad.no_grad():
            mean, log_std = agent.actor_stats(state, slices)
        mu = float(mean.data[0, 0])
        sigma = float(np.exp(log_std.data[0, 0]))

        n = 1_000_000
        rng = np.random.default_rng(11)
        samples = np.tanh(mu + sigma * rng.normal(size=n))

        a_star = float(np.tanh(mu + 0.5 * sigma))
        u_star = np.arctanh(a_star)
        noise_star = np.array([[(u_star - mu) / sigma]])
        with ad.no_grad():
            action, log_prob = agent.actor_sample(state, slices, noise_star)
        assert abs(float(action.data[0, 0]) - a_star) < 1e-12

        width = 0.01
        in_bin = np.abs(samples - a_star) < width / 2
        p_hat = in_bin.mean() / width
        se = math.sqrt(in_bin.mean() * (1 - in_bin.mean()) / n) / width
        density = math.exp(float(log_prob.data[0, 0]))
        assert abs(density - p_hat) < 3 * se + 1e-3


class TestCriticUpdate:
    def test_done_transition_targets_equal_reward(self):
        agent = make_agent(seed=5)
        rng = np.random.default_rng(5)
        batch = random_batch(agent, rng)
        batch.dones[:] = True
        y = agent.compute_critic_targets(batch)
        npt.assert_allclose(y[:, 0], batch.rewards, atol=0)

    def test_zero_discount_targets_equal_reward(self):
        agent = make_agent(seed=6, gamma=0.0)
        rng = np.random.default_rng(6)
        batch = random_batch(agent, rng)
        y = agent.compute_critic_targets(batch)
        npt.assert_allclose(y[:, 0], batch.rewards, atol=0)

    def test_single_transition_target_matches_straight_line_recomputation(self):
        agent = SacAgent(3, 2, 2, hyper=tiny_hyper(backbone="trunk", task_onehot=True), seed=7)
        rng = np.random.default_rng(7)
        batch = random_batch(agent, rng, size=1)

        rng_state = agent._noise_rng.bit_generator.state
        y = agent.compute_critic_targets(batch)
        agent._noise_rng.bit_generator.state = rng_state
        noise = agent._noise_rng.normal(size=(1, 2))

        def trunk(net, x):
            h = np.asarray(x, dtype=np.float64)
            for i, layer in enumerate(net.backbone.layers):
                h = h @ layer.weight.data + layer.bias.data
                if i < net.backbone.num_hidden:
                    h = np.maximum(h, 0.0)
            return h

        task = int(batch.task_ids[0])
        onehot = np.zeros((1, 2))
        onehot[0, task] = 1.0
        s2 = batch.next_states
        actor_out = trunk(agent.actor, np.concatenate([s2, onehot], axis=1))
        mean, log_std = actor_out[:, :2], np.clip(actor_out[:, 2:], -20.0, 2.0)
        u = mean + np.exp(log_std) * noise
        a2 = np.tanh(u)
        logp = float(np.sum(-0.5 * noise**2 - 0.5 * LOG_2PI - log_std
                            - np.log(1.0 - np.tanh(u) ** 2)))
        q_in = np.concatenate([s2, onehot, a2], axis=1)
        q1 = trunk(agent.target1, q_in)[0, 0]
        q2 = trunk(agent.target2, q_in)[0, 0]
        expected = batch.rewards[0] + agent.hyper.gamma * (
            min(q1, q2) - agent.alpha[task] * logp
        )
        assert abs(float(y[0, 0]) - expected) < 1e-12

    def test_empty_batch_rejected(self):
        agent = make_agent()
        empty = TaskBatch(
            states=np.zeros((0, 4)), actions=np.zeros((0, 2)), rewards=np.zeros(0),
            next_states=np.zeros((0, 4)), dones=np.zeros(0, dtype=bool),
            task_ids=np.zeros(0, dtype=np.int64), slices=[],
        )
        with pytest.raises(ContractError):
            agent.critic_update(empty)

    def test_update_reduces_bellman_error_on_fixed_batch(self):
        agent = make_agent(seed=8)
        rng = np.random.default_rng(8)
        batch = random_batch(agent, rng, size=16)
        first = agent.critic_update(batch)
        for _ in range(50):
            last = agent.critic_update(batch)
        assert last["critic1_loss"] < first["critic1_loss"]


class TestActorAndAlpha:
    def test_alpha_gradient_zero_when_log_prob_is_minus_target_entropy(self):
        agent = make_agent()
        log_prob = np.full((6, 1), -agent.target_entropy)
        grads, present, _ = agent.alpha_gradients(log_prob, [(0, slice(0, 6))])
        assert grads[0] == 0.0
        assert present[0]
        assert not present[1]

    def test_absent_task_alpha_untouched_including_optimizer_state(self):
        agent = make_agent(seed=10)
        rng = np.random.default_rng(10)
        before_alpha = agent.log_alpha[1]
        for _ in range(3):
            batch = random_batch(agent, rng, size=8)
            # restrict every row to task 0
            batch.task_ids[:] = 0
            batch.slices = [(0, slice(0, 8))]
            agent.actor_and_alpha_update(batch)
        assert agent.log_alpha[1] == before_alpha
        assert agent.alpha_opt.t[1] == 0
        assert agent.log_alpha[0] != math.log(agent.hyper.init_alpha)

    def test_alpha_stays_positive(self):
        agent = make_agent(seed=11)
        rng = np.random.default_rng(11)
        for _ in range(20):
            agent.actor_and_alpha_update(random_batch(agent, rng))
        assert np.all(agent.alpha > 0.0)

    def test_actor_gradient_matches_finite_differences_on_frozen_critic(self):
        agent = make_agent(seed=12)
        rng = np.random.default_rng(12)
        batch = random_batch(agent, rng, size=6)
        noise = rng.normal(size=(6, 2))
        alpha_rows = agent.alpha[batch.task_ids][:, None]

        def loss_fn():
            action, log_prob = agent.actor_sample(batch.states, batch.slices, noise)
            q1 = agent.critic1.forward_grouped(batch.states, action, batch.slices)
            q2 = agent.critic2.forward_grouped(batch.states, action, batch.slices)
            return ad.mean(ad.sub(ad.mul(log_prob, Tensor(alpha_rows)), ad.minimum(q1, q2)))

        max_err, frac = check_gradients(loss_fn, agent.actor_store, tol=1e-4)
        assert max_err < 1e-4
        assert frac == 1.0

    def test_no_gradient_leaks_into_critics_during_actor_update(self):
        agent = make_agent(seed=13)
        rng = np.random.default_rng(13)
        agent.critic1_store.zero_grad()
        agent.critic2_store.zero_grad()
        agent.actor_and_alpha_update(random_batch(agent, rng))
        assert np.all(agent.critic1_store.grad == 0.0)
        assert np.all(agent.critic2_store.grad == 0.0)
        for _, t in agent.critic1_store.named_tensors():
            assert t.requires_grad


class TestSoftTargetUpdate:
    def test_tau_one_copies_online(self):
        agent = make_agent(seed=14)
        rng = np.random.default_rng(14)
        for _ in range(3):
            agent.critic_update(random_batch(agent, rng))
        agent.soft_target_update(tau=1.0)
        npt.assert_array_equal(agent.target1_store.theta, agent.critic1_store.theta)

    def test_two_small_steps_match_closed_form_blend(self):
        agent = make_agent(seed=15)
        rng = np.random.default_rng(15)
        for _ in range(3):
            agent.critic_update(random_batch(agent, rng))
        online = agent.critic1_store.theta.copy()
        target0 = agent.target1_store.theta.copy()
        tau = 0.005
        agent.soft_target_update(tau=tau)
        agent.soft_target_update(tau=tau)
        expected = (1 - tau) ** 2 * target0 + (1 - (1 - tau) ** 2) * online
        assert np.max(np.abs(agent.target1_store.theta - expected)) < 1e-12

    def test_tau_out_of_range_rejected(self):
        agent = make_agent()
        with pytest.raises(ContractError):
            agent.soft_target_update(tau=0.0)
        with pytest.raises(ContractError):
            agent.soft_target_update(tau=1.5)

    def test_targets_never_recorded_on_any_tape(self):
        agent = make_agent(seed=16)
        rng = np.random.default_rng(16)
        batch = random_batch(agent, rng)
        with Tape() as outer:
            agent.critic_update(batch)
            agent.actor_and_alpha_update(batch)
            agent.soft_target_update()
        assert len(outer) == 0
        assert np.all(agent.target1_store.grad == 0.0)
        assert np.all(agent.target2_store.grad == 0.0)


class TestTrain:
    def test_zero_steps_leaves_agent_unchanged(self):
        suite = make_suite("reach-solo")
        agent = SacAgent(suite.state_dim, suite.action_dim, 1, hyper=tiny_hyper(), seed=17)
        theta = agent.actor_store.theta.copy()
        log = train(agent, suite, steps_per_task=0)
        assert len(log) == 0
        npt.assert_array_equal(agent.actor_store.theta, theta)

    def test_identical_seeds_identical_metrics(self):
        suite = make_suite("conflict-pair")
        logs = []
        for _ in range(2):
            agent = SacAgent(
                suite.state_dim, suite.action_dim, suite.num_tasks,
                hyper=tiny_hyper(warmup_steps_per_task=100), seed=21,
            )
            from ptsl.sac import TrainConfig

            log = train(agent, make_suite("conflict-pair"), steps_per_task=300,
                        config=TrainConfig(eval_interval=100, eval_episodes=2))
            logs.append(log.to_csv_text())
        assert logs[0] == logs[1]

    def test_metrics_have_per_task_and_mean_rows(self):
        suite = make_suite("conflict-pair")
        agent = SacAgent(suite.state_dim, suite.action_dim, suite.num_tasks,
                         hyper=tiny_hyper(warmup_steps_per_task=100), seed=22)
        from ptsl.sac import TrainConfig

        log = train(agent, suite, steps_per_task=200,
                    config=TrainConfig(eval_interval=100, eval_episodes=2))
        steps = sorted({r.step for r in log.rows})
        assert steps == [200]
        tasks = [r.task_id for r in log.rows if r.step == 200]
        assert tasks == [0, 1, -1]


class TestParameterAccounting:
    def test_closed_form_matches_built_agent(self):
        for overrides in (
            {},
            {"backbone": "trunk", "task_onehot": True},
            {"encoder": EncoderConfig(kind="care_mixture", num_experts=3,
                                      expert_hidden=7, context_dim=5, output_dim=6)},
            {"residual_mode": "learnable_projection", "projection_mode": "independent"},
        ):
            agent = make_agent(state_dim=5, action_dim=2, num_tasks=3, **overrides)
            expected = agent_param_count(5, 2, 3, agent.hyper)
            assert agent.param_counts()["total"] == expected

    def test_reported_historic_trunk_total_reproduced_exactly(self):
        # Published multi-task SAC baseline total for the 12-dim manipulation
        # benchmark: H=400, three hidden layers, 8-dim actor head, state-only
        # inputs, counting actor + twin critics + their EMA copies + the ten
        # per-task temperatures.
        total = trunk_agent_param_count(
            state_dim=12, action_dim=4, num_tasks=10, hidden_dim=400, num_hidden=3,
            task_onehot=False, include_targets=True,
        )
        assert total == 1_641_222

    def test_one_hot_variant_documented_composition(self):
        total = trunk_agent_param_count(
            state_dim=12, action_dim=4, num_tasks=10, hidden_dim=400, num_hidden=3,
            task_onehot=True, include_targets=True,
        )
        assert total == 1_661_222
