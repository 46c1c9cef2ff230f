"""Independent verification computations runnable from the command line.

Each oracle checks one load-bearing fact through a route separate from the
implementation it validates: exhaustive search, Monte Carlo estimation,
shape enumeration, or finite differences.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .backbone import PROJECTION_MODES, RESIDUAL_MODES, NetworkConfig, PtslBackbone, count_parameters
from .envs import conflict_constant_policy_bound
from .gradcheck import check_gradients
from .sac import SacAgent, SacHyperparams


def conflict_bound_oracle(num_resets=200, grid_size=21, seed=0):
    """Best constant policy on the conflict pair, by exhaustive grid search."""
    bound, action = conflict_constant_policy_bound(num_resets, grid_size, seed)
    return {
        "name": "conflict_constant_policy_bound",
        "bound": bound,
        "best_action": [float(a) for a in action],
        "limit": 0.52,
        "passed": bound <= 0.52,
    }


def density_oracle(samples=1_000_000, seed=0):
    """Monte Carlo check of the squashed-Gaussian action log density."""
    agent = SacAgent(3, 1, 1, hyper=SacHyperparams(hidden_dim=8, task_dim=3, num_hidden=1),
                     seed=seed)
    state = np.array([[0.25, -0.5, 0.9]])
    slices = [(0, slice(0, 1))]
    with ad.no_grad():
        mean, log_std = agent.actor_stats(state, slices)
    mu = float(mean.data[0, 0])
    sigma = float(np.exp(log_std.data[0, 0]))
    rng = np.random.default_rng(seed + 1)
    draws = np.tanh(mu + sigma * rng.normal(size=samples))
    a_star = float(np.tanh(mu + 0.5 * sigma))
    noise_star = np.array([[(np.arctanh(a_star) - mu) / sigma]])
    with ad.no_grad():
        _, log_prob = agent.actor_sample(state, slices, noise_star)
    width = 0.01
    in_bin = np.abs(draws - a_star) < width / 2
    p_hat = in_bin.mean() / width
    se = math.sqrt(in_bin.mean() * (1 - in_bin.mean()) / samples) / width
    density = math.exp(float(log_prob.data[0, 0]))
    return {
        "name": "action_density_monte_carlo",
        "analytic_density": density,
        "estimated_density": float(p_hat),
        "standard_error": float(se),
        "passed": abs(density - p_hat) < 3 * se + 1e-3,
    }


def count_enumeration_oracle(trials=50, seed=0):
    """Closed-form parameter counts versus exhaustive shape enumeration."""
    rng = np.random.default_rng(seed)
    combos = [(a, b) for a in (True, False) for b in (True, False)]
    mismatches = 0
    for trial in range(trials):
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
        enumerated = sum(t.data.size for _, t in PtslBackbone(cfg).named_parameters())
        if count_parameters(cfg).total != enumerated:
            mismatches += 1
    return {
        "name": "count_vs_shape_enumeration",
        "trials": trials,
        "mismatches": mismatches,
        "passed": mismatches == 0,
    }


def gradient_spot_oracle(seed=0):
    """Finite-difference audit of one randomly weighted backbone."""
    cfg = NetworkConfig(input_dim=4, output_dim=3, hidden_dim=6, task_dim=2,
                        num_tasks=3, num_hidden=2, residual_mode="learnable_sum")
    net = PtslBackbone(cfg)
    rng = np.random.default_rng(seed)
    net.store.theta[...] = rng.normal(scale=0.4, size=net.store.theta.shape)
    x = rng.normal(size=(5, 4))
    target = rng.normal(size=(5, 3))

    def loss_fn():
        return ad.mean(ad.square(ad.sub(net.forward(x, 1), ad.Tensor(target))))

    max_err, frac_ok = check_gradients(loss_fn, net.store)
    return {
        "name": "finite_difference_spot_check",
        "max_relative_error": max_err,
        "fraction_within_tolerance": frac_ok,
        "passed": max_err < 1e-4,
    }


def roundtrip_oracle():
    """exp/log inversion error on a positive vector."""
    rng = np.random.default_rng(3)
    x = rng.uniform(0.1, 5.0, size=64)
    err = float(np.max(np.abs(ad.exp(ad.log(ad.Tensor(x))).data - x)))
    return {
        "name": "exp_log_round_trip",
        "max_abs_error": err,
        "passed": err < 1e-12,
    }


def run_all_oracles():
    return [
        conflict_bound_oracle(),
        density_oracle(),
        count_enumeration_oracle(),
        gradient_spot_oracle(),
        roundtrip_oracle(),
    ]
