"""Backbone behavior, parameter counting, and budget matching."""

import numpy as np
import numpy.testing as npt
import pytest

from ptsl import autodiff as ad
from ptsl.autodiff import Tape, Tensor, backward
from ptsl.backbone import (
    PROJECTION_MODES,
    RESIDUAL_MODES,
    NetworkConfig,
    PtslBackbone,
    ResidualParams,
    SharedMlp,
    budget_match,
    combine_residual,
    count_parameters,
)
from ptsl.errors import ConfigError, InfeasibleError, ShapeError, TaskError


def small_config(**overrides):
    base = dict(
        input_dim=3,
        output_dim=2,
        hidden_dim=5,
        task_dim=2,
        num_tasks=2,
        num_hidden=2,
    )
    base.update(overrides)
    return NetworkConfig(**base)


def randomize(net, rng, scale=0.5):
    net.store.theta[...] = rng.normal(scale=scale, size=net.store.theta.shape)


def oracle_forward(cfg, params, x, task):
    """Independent straight-line numpy evaluation of the same weights."""
    n = cfg.num_hidden

    def lin(name, v):
        out = v @ params[f"{name}.weight"]
        bias = params.get(f"{name}.bias")
        return out if bias is None else out + bias

    def down_name(i):
        return "proj.down.shared" if cfg.projection_mode == "shared" else f"proj.down.{i}"

    def up_name(i):
        return "proj.up.shared" if cfg.projection_mode == "shared" else f"proj.up.{i}"

    h = np.asarray(x, dtype=np.float64)
    t_prev = None
    for i in range(n + 1):
        s = lin(f"shared.{i}", h)
        if i == 0:
            u = h @ params["proj.down.first.weight"] if cfg.first_layer_down_projection else h
        else:
            d = h @ params[f"{down_name(i)}.weight"]
            if cfg.residual_mode == "none":
                u = d
            elif cfg.residual_mode == "addition":
                u = d + t_prev
            elif cfg.residual_mode == "learnable_sum":
                u = params["residual.alpha"] * d + params["residual.beta"] * t_prev
            else:
                u = np.concatenate([d, t_prev], axis=1) @ params["residual.projection.weight"]
        z = lin(f"task.{task}.{i}", u)
        if i < n:
            t = np.maximum(z, 0.0)
            h = np.maximum(s + t @ params[f"{up_name(i)}.weight"], 0.0)
            t_prev = t
        else:
            y = z @ params["proj.up.last.weight"] if cfg.last_layer_up_projection else z
            h = s + y
    return h


class TestConfigValidation:
    def test_rejects_task_dim_above_hidden(self):
        with pytest.raises(ConfigError):
            small_config(task_dim=9)

    def test_rejects_bad_modes(self):
        with pytest.raises(ConfigError):
            small_config(projection_mode="both")
        with pytest.raises(ConfigError):
            small_config(residual_mode="gate")

    def test_rejects_nonpositive_dims(self):
        with pytest.raises(ConfigError):
            small_config(hidden_dim=0)


class TestForward:
    def test_zero_init_equals_shared_trunk(self):
        cfg = small_config(num_tasks=3)
        net = PtslBackbone(cfg)
        net.init_weights(11)
        rng = np.random.default_rng(0)
        x = rng.normal(size=(10, cfg.input_dim))
        trunk = net.shared_trunk_forward(x).data
        for task in range(cfg.num_tasks):
            out = net.forward(x, task).data
            assert np.max(np.abs(out - trunk)) == 0.0

    def test_degenerate_reduces_to_task_stack(self):
        dim = 4
        cfg = NetworkConfig(
            input_dim=dim,
            output_dim=dim,
            hidden_dim=dim,
            task_dim=dim,
            num_tasks=1,
            num_hidden=2,
            first_layer_down_projection=True,
            last_layer_up_projection=True,
        )
        net = PtslBackbone(cfg)
        rng = np.random.default_rng(1)
        randomize(net, rng)
        for layer in net.shared:
            layer.init_zero()
        eye = np.eye(dim)
        net.down_first.weight.data[...] = eye
        net.down_inner[0].weight.data[...] = eye
        net.up_inner[0].weight.data[...] = eye
        net.up_last.weight.data[...] = eye

        x = rng.normal(size=(6, dim))
        h = x
        for i, layer in enumerate(net.task_layers[0]):
            h = h @ layer.weight.data + layer.bias.data
            if i < cfg.num_hidden:
                h = np.maximum(h, 0.0)
        npt.assert_allclose(net.forward(x, 0).data, h, atol=1e-12)

    @pytest.mark.parametrize("projection_mode", PROJECTION_MODES)
    @pytest.mark.parametrize("residual_mode", RESIDUAL_MODES)
    @pytest.mark.parametrize("first_down,last_up", [(True, False), (False, True), (True, True)])
    def test_forward_matches_straight_line_oracle(self, projection_mode, residual_mode, first_down, last_up):
        cfg = NetworkConfig(
            input_dim=3,
            output_dim=2,
            hidden_dim=5,
            task_dim=2,
            num_tasks=2,
            num_hidden=2,
            projection_mode=projection_mode,
            residual_mode=residual_mode,
            first_layer_down_projection=first_down,
            last_layer_up_projection=last_up,
        )
        net = PtslBackbone(cfg)
        rng = np.random.default_rng(42)
        randomize(net, rng)
        params = net.store.state_dict()
        x = rng.normal(size=(7, cfg.input_dim))
        for task in range(cfg.num_tasks):
            npt.assert_allclose(
                net.forward(x, task).data, oracle_forward(cfg, params, x, task), atol=1e-12
            )

    @pytest.mark.parametrize("residual_mode", RESIDUAL_MODES)
    def test_stacked_forward_matches_per_task_forward(self, residual_mode):
        cfg = small_config(num_tasks=3, residual_mode=residual_mode)
        net = PtslBackbone(cfg)
        rng = np.random.default_rng(6)
        randomize(net, rng)
        x = rng.normal(size=(9, cfg.input_dim))
        stacked = net.forward_tasks(x, [0, 1, 2]).data
        for task in range(3):
            block = net.forward(x[3 * task:3 * task + 3], task).data
            npt.assert_allclose(stacked[3 * task:3 * task + 3], block, atol=1e-12)

    def test_stacked_forward_gradients_match_finite_differences(self):
        from ptsl.gradcheck import check_gradients

        cfg = small_config(num_tasks=2, residual_mode="learnable_sum")
        net = PtslBackbone(cfg)
        rng = np.random.default_rng(13)
        randomize(net, rng)
        x = rng.normal(size=(6, cfg.input_dim))
        target = rng.normal(size=(6, cfg.output_dim))

        def loss_fn():
            out = net.forward_tasks(x, [0, 1])
            return ad.mean(ad.square(ad.sub(out, ad.Tensor(target))))

        max_err, frac = check_gradients(loss_fn, net.store, tol=1e-4)
        assert max_err < 1e-4
        assert frac == 1.0

    def test_task_out_of_range(self):
        net = PtslBackbone(small_config())
        with pytest.raises(TaskError):
            net.forward(np.zeros((1, 3)), 2)

    def test_input_width_mismatch(self):
        net = PtslBackbone(small_config())
        with pytest.raises(ShapeError):
            net.forward(np.zeros((1, 4)), 0)


class TestResidualCombiner:
    def test_addition_with_zero_previous(self):
        x = Tensor(np.array([[1.0, -2.0]]))
        y = Tensor(np.zeros((1, 2)))
        npt.assert_array_equal(combine_residual("addition", x, y).data, x.data)

    def test_learnable_sum_identity_setting(self):
        params = ResidualParams(alpha=Tensor(1.0), beta=Tensor(0.0))
        x = Tensor(np.array([[0.5, 2.0]]))
        y = Tensor(np.array([[9.0, -9.0]]))
        npt.assert_array_equal(combine_residual("learnable_sum", x, y, params).data, x.data)

    def test_learnable_projection_block_identity(self):
        d = 3
        block = np.zeros((2 * d, d))
        block[:d, :] = np.eye(d)
        params = ResidualParams(projection=Tensor(block))
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(4, d)))
        y = Tensor(rng.normal(size=(4, d)))
        npt.assert_allclose(combine_residual("learnable_projection", x, y, params).data, x.data, atol=1e-15)

    def test_missing_params_raise(self):
        x = Tensor(np.zeros((1, 2)))
        with pytest.raises(ConfigError):
            combine_residual("learnable_sum", x, x, ResidualParams())
        with pytest.raises(ConfigError):
            combine_residual("learnable_projection", x, x, None)

    def test_width_mismatch(self):
        with pytest.raises(ShapeError):
            combine_residual("addition", Tensor(np.zeros((1, 2))), Tensor(np.zeros((1, 3))))


class TestParameterCount:
    def test_first_layer_cost_with_projection(self):
        cfg = NetworkConfig(
            input_dim=104, output_dim=8, hidden_dim=326, task_dim=50,
            num_tasks=10, num_hidden=3, first_layer_down_projection=True,
        )
        counts = count_parameters(cfg)
        first_cost = counts.per_layer_task[0] + cfg.input_dim * cfg.task_dim
        assert first_cost == 30_700

    def test_first_layer_cost_without_projection(self):
        cfg = NetworkConfig(
            input_dim=104, output_dim=8, hidden_dim=326, task_dim=50,
            num_tasks=10, num_hidden=3, first_layer_down_projection=False,
        )
        assert count_parameters(cfg).per_layer_task[0] == 52_500

    def test_last_layer_cost_comparison(self):
        base = dict(
            input_dim=104, output_dim=8, hidden_dim=326, task_dim=50,
            num_tasks=10, num_hidden=3,
        )
        without = count_parameters(NetworkConfig(**base, last_layer_up_projection=False))
        with_up = count_parameters(NetworkConfig(**base, last_layer_up_projection=True))
        cost_without = without.per_layer_task[-1]
        cost_with = with_up.per_layer_task[-1] + 50 * 8
        assert cost_without == 4_080
        assert cost_with == 25_900
        assert cost_without < cost_with

    def test_count_equals_shape_enumeration_on_random_configs(self):
        rng = np.random.default_rng(7)
        combos = [(a, b) for a in (True, False) for b in (True, False)]
        for trial in range(50):
            first_down, last_up = combos[trial % 4]
            hidden = int(rng.integers(2, 12))
            cfg = NetworkConfig(
                input_dim=int(rng.integers(1, 9)),
                output_dim=int(rng.integers(1, 9)),
                hidden_dim=hidden,
                task_dim=int(rng.integers(1, hidden + 1)),
                num_tasks=int(rng.integers(1, 6)),
                num_hidden=int(rng.integers(1, 5)),
                projection_mode=PROJECTION_MODES[int(rng.integers(2))],
                residual_mode=RESIDUAL_MODES[int(rng.integers(4))],
                first_layer_down_projection=first_down,
                last_layer_up_projection=last_up,
            )
            net = PtslBackbone(cfg)
            enumerated = sum(t.data.size for _, t in net.named_parameters())
            assert count_parameters(cfg).total == enumerated == net.param_count


class TestInit:
    def test_same_seed_bit_identical(self):
        cfg = small_config(residual_mode="learnable_projection")
        a = PtslBackbone(cfg)
        b = PtslBackbone(cfg)
        a.init_weights(123)
        b.init_weights(123)
        npt.assert_array_equal(a.store.theta, b.store.theta)

    def test_different_seed_differs(self):
        cfg = small_config()
        a = PtslBackbone(cfg)
        b = PtslBackbone(cfg)
        a.init_weights(1)
        b.init_weights(2)
        assert np.any(a.store.theta != b.store.theta)

    def test_up_projection_gradient_nonzero_at_init(self):
        cfg = small_config()
        net = PtslBackbone(cfg)
        net.init_weights(5)
        x = np.random.default_rng(3).normal(size=(8, cfg.input_dim))
        with Tape():
            loss = ad.mean(ad.square(net.forward(x, 0)))
        backward(loss)
        up = net.up_inner[0].weight
        assert np.any(up.grad != 0.0)
        # last task layer merges straight into the output stream here
        last = net.task_layers[0][-1]
        assert np.any(last.weight.grad != 0.0)

    def test_zero_init_with_last_up_projection_enabled(self):
        cfg = small_config(last_layer_up_projection=True, num_tasks=3)
        net = PtslBackbone(cfg)
        net.init_weights(9)
        x = np.random.default_rng(4).normal(size=(6, cfg.input_dim))
        trunk = net.shared_trunk_forward(x).data
        for task in range(cfg.num_tasks):
            assert np.max(np.abs(net.forward(x, task).data - trunk)) == 0.0


class TestTaskIsolation:
    def test_perturbing_one_task_leaves_others_bit_identical(self):
        cfg = small_config(num_tasks=4)
        net = PtslBackbone(cfg)
        rng = np.random.default_rng(0)
        randomize(net, rng)
        x = rng.normal(size=(5, cfg.input_dim))
        before = [net.forward(x, t).data.copy() for t in range(4)]
        for layer in net.task_layers[2]:
            layer.weight.data += rng.normal(scale=0.3, size=layer.weight.data.shape)
            layer.bias.data += rng.normal(scale=0.3, size=layer.bias.data.shape)
        for t in range(4):
            after = net.forward(x, t).data
            if t == 2:
                assert np.any(after != before[t])
            else:
                npt.assert_array_equal(after, before[t])


class TestProjectionSharing:
    def test_shared_mode_ties_storage(self):
        net = PtslBackbone(small_config(num_hidden=3, projection_mode="shared"))
        assert net.down_inner[0] is net.down_inner[1] is net.down_inner[2]
        assert net.up_inner[0] is net.up_inner[1] is net.up_inner[2]

    def test_mutating_shared_projection_affects_every_layer(self):
        cfg = small_config(num_hidden=3, projection_mode="shared")
        net = PtslBackbone(cfg)
        rng = np.random.default_rng(8)
        randomize(net, rng)
        x = rng.normal(size=(4, cfg.input_dim))
        base = net.forward(x, 0).data.copy()
        net.down_inner[1].weight.data += 0.25
        changed = net.forward(x, 0).data
        assert np.any(changed != base)

    def test_independent_mode_has_separate_storage(self):
        net = PtslBackbone(small_config(num_hidden=3, projection_mode="independent"))
        assert net.down_inner[0] is not net.down_inner[1]
        assert len({id(l) for l in net.up_inner}) == 3


class TestBudgetMatch:
    FIXED = dict(
        input_dim=6, output_dim=4, num_tasks=4, num_hidden=2,
        projection_mode="shared", residual_mode="none",
        first_layer_down_projection=True, last_layer_up_projection=False,
    )

    def test_fixed_point(self):
        known = NetworkConfig(hidden_dim=40, task_dim=8, **self.FIXED)
        target = count_parameters(known).total
        got = budget_match(target, self.FIXED, hidden_range=range(1, 41), task_dim_range=range(1, 17))
        assert got == known

    def test_small_search_matches_exhaustive_enumeration(self):
        target = 10_000
        hidden_range = range(1, 21)
        task_range = range(1, 21)
        got = budget_match(target, self.FIXED, hidden_range=hidden_range, task_dim_range=task_range)

        best = None
        for h in hidden_range:
            for d in task_range:
                if d > h:
                    continue
                cfg = NetworkConfig(hidden_dim=h, task_dim=d, **self.FIXED)
                total = PtslBackbone(cfg).param_count
                if total <= target:
                    key = (total, h, d)
                    if best is None or key > best[0]:
                        best = (key, cfg)
        assert got == best[1]
        assert count_parameters(got).total <= target

    def test_infeasible_reports_closest(self):
        with pytest.raises(InfeasibleError, match="closest"):
            budget_match(10, self.FIXED, hidden_range=range(4, 8), task_dim_range=range(2, 4))

    def test_pinned_hidden_searches_task_dim_only(self):
        fixed = dict(self.FIXED, hidden_dim=30)
        got = budget_match(60_000, fixed, task_dim_range=range(1, 31))
        assert got.hidden_dim == 30


class TestSharedMlp:
    def test_matches_manual_trunk(self):
        net = SharedMlp(3, 5, 2, num_hidden=2)
        net.init_weights(3)
        rng = np.random.default_rng(5)
        x = rng.normal(size=(4, 3))
        h = x
        for i, layer in enumerate(net.layers):
            h = h @ layer.weight.data + layer.bias.data
            if i < 2:
                h = np.maximum(h, 0.0)
        npt.assert_allclose(net.forward(x).data, h, atol=1e-12)
