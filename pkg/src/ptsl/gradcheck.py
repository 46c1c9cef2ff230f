"""Finite-difference verification of analytic gradients.

Works on the flat parameter vector of a ParameterStore: the loss closure is
re-evaluated with each scalar nudged up and down, and the centered quotient
is compared against one taped backward pass.
"""

from __future__ import annotations

import time

import numpy as np

from .autodiff import Tape, backward


def analytic_grad(loss_fn, store):
    """One taped backward pass; returns a copy of the flat gradient."""
    store.zero_grad()
    with Tape():
        loss = loss_fn()
    backward(loss)
    return store.grad.copy()


def finite_difference_grad(loss_fn, store, step=1e-5):
    """Central finite differences over every scalar in the store."""
    theta = store.theta
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + step
        up = float(loss_fn().data)
        theta[i] = orig - step
        down = float(loss_fn().data)
        theta[i] = orig
        grad[i] = (up - down) / (2.0 * step)
    return grad


def relative_errors(analytic, numeric):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return np.abs(analytic - numeric) / denom


def check_gradients(loss_fn, store, step=1e-5, tol=1e-4):
    """Compare analytic and numeric gradients; returns (max_err, fraction_ok)."""
    ana = analytic_grad(loss_fn, store)
    num = finite_difference_grad(loss_fn, store, step=step)
    errs = relative_errors(ana, num)
    return float(errs.max()), float((errs < tol).mean())


def run_gradient_suite(step=1e-5, tol=1e-4, seed=0):
    """Full gradient audit: backbone variants, encoder, actor and critic paths.

    Returns a list of (name, max_rel_err, passed) entries plus the elapsed
    wall time.  Uses small widths so the whole sweep stays well under the
    two-minute budget.
    """
    from . import autodiff as ad
    from .backbone import PROJECTION_MODES, RESIDUAL_MODES, NetworkConfig, PtslBackbone
    from .encoders import EncoderConfig, build_encoder
    from .optim import ParameterStore
    from .sac import SacAgent, SacHyperparams

    started = time.monotonic()
    results = []
    rng = np.random.default_rng(seed)

    for projection_mode in PROJECTION_MODES:
        for residual_mode in RESIDUAL_MODES:
            cfg = NetworkConfig(
                input_dim=4,
                output_dim=3,
                hidden_dim=6,
                task_dim=2,
                num_tasks=3,
                num_hidden=2,
                projection_mode=projection_mode,
                residual_mode=residual_mode,
                first_layer_down_projection=True,
                last_layer_up_projection=True,
            )
            net = PtslBackbone(cfg)
            net.init_weights(rng.integers(2**31))
            # nonzero up projections so every path carries gradient
            net.store.theta[...] = rng.normal(scale=0.4, size=net.store.theta.shape)
            x = rng.normal(size=(5, cfg.input_dim))
            target = rng.normal(size=(5, cfg.output_dim))

            def loss_fn(net=net, x=x, target=target):
                out = net.forward(x, task_id=1)
                diff = ad.sub(out, ad.Tensor(target))
                return ad.mean(ad.square(diff))

            err, _ = check_gradients(loss_fn, net.store, step=step, tol=tol)
            results.append((f"backbone[{projection_mode},{residual_mode}]", err, err < tol))

    store = ParameterStore()
    enc_cfg = EncoderConfig(kind="care_mixture", num_experts=3, expert_hidden=5, context_dim=4, output_dim=4)
    encoder = build_encoder(enc_cfg, state_dim=4, num_tasks=3, store=store, prefix="encoder")
    store.finalize()
    encoder.init_weights(rng.integers(2**31))
    x = rng.normal(size=(5, 4))
    target = rng.normal(size=(5, 4))

    def encoder_loss(encoder=encoder, x=x, target=target):
        out = encoder.encode(x, task_id=2)
        diff = ad.sub(out, ad.Tensor(target))
        return ad.mean(ad.square(diff))

    err, _ = check_gradients(encoder_loss, store, step=step, tol=tol)
    results.append(("care_mixture_encoder", err, err < tol))

    agent = SacAgent(
        state_dim=4,
        action_dim=2,
        num_tasks=2,
        hyper=SacHyperparams(hidden_dim=6, task_dim=2, num_hidden=1),
        seed=int(rng.integers(2**31)),
    )
    states = rng.normal(size=(6, 4))
    task_ids = np.array([0, 0, 0, 1, 1, 1])
    noise = rng.normal(size=(6, 2))
    slices = [(0, slice(0, 3)), (1, slice(3, 6))]

    def actor_logp_loss(agent=agent):
        _, logp = agent.actor_sample(states, slices, noise)
        return ad.mean(logp)

    err, _ = check_gradients(actor_logp_loss, agent.actor_store, step=step, tol=tol)
    results.append(("actor_log_prob", err, err < tol))

    actions = np.tanh(rng.normal(size=(6, 2)))
    targets = rng.normal(size=(6, 1))

    def critic_loss(agent=agent):
        return agent.critic_loss(agent.critic1, states, actions, slices, targets)

    err, _ = check_gradients(critic_loss, agent.critic1_store, step=step, tol=tol)
    results.append(("critic_loss", err, err < tol))

    elapsed = time.monotonic() - started
    return results, elapsed
