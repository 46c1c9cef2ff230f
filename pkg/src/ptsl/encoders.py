"""State encoders: identity, plain MLP, and a task-conditioned expert mixture.

The mixture encoder runs a few small expert MLPs over the state and blends
their outputs with softmax attention weights computed from a learnable
per-task context vector, so the blend depends on the task alone and never
on the state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, TaskError
from .nn import Linear
from .optim import ParameterStore

ENCODER_KINDS = ("identity", "mlp", "care_mixture")

ATTENTION_HIDDEN = 32


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "identity"
    num_experts: int = 4
    expert_hidden: int = 50
    context_dim: int = 16
    output_dim: int = 32

    def validated(self):
        if self.kind not in ENCODER_KINDS:
            raise ConfigError(f"unknown encoder kind {self.kind!r}")
        if self.kind == "care_mixture" and self.num_experts < 2:
            raise ConfigError("care_mixture requires at least 2 experts")
        for name in ("num_experts", "expert_hidden", "context_dim", "output_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        return self


class IdentityEncoder:
    """Passes the state through unchanged."""

    def __init__(self, state_dim):
        self.output_dim = state_dim

    def init_weights(self, seed):
        pass

    def encode(self, state, task_id):
        return ad.as_tensor(state)


class MlpEncoder:
    """One-hidden-layer dense encoder shared by every task."""

    def __init__(self, config, state_dim, store, prefix="encoder"):
        self.output_dim = config.output_dim
        self.hidden = Linear(store, f"{prefix}.hidden", state_dim, config.expert_hidden)
        self.out = Linear(store, f"{prefix}.out", config.expert_hidden, config.output_dim)

    def init_weights(self, seed):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        self.hidden.init_uniform(rng)
        self.out.init_uniform(rng)

    def encode(self, state, task_id):
        return self.out(ad.relu(self.hidden(ad.as_tensor(state))))


class CareMixtureEncoder:
    """Mixture of expert encoders gated by per-task context vectors.

    Attention weights form a probability simplex per task and are a function
    of the task context only; two tasks holding identical contexts therefore
    encode identical states identically.
    """

    def __init__(self, config, state_dim, num_tasks, store, prefix="encoder"):
        self.config = config
        self.num_tasks = num_tasks
        self.output_dim = config.output_dim
        self.experts = []
        for a in range(config.num_experts):
            hidden = Linear(store, f"{prefix}.expert.{a}.hidden", state_dim, config.expert_hidden)
            out = Linear(store, f"{prefix}.expert.{a}.out", config.expert_hidden, config.output_dim)
            self.experts.append((hidden, out))
        self.contexts = store.add(f"{prefix}.contexts", (num_tasks, config.context_dim))
        self.attn_hidden = Linear(
            store, f"{prefix}.attention.hidden", config.context_dim, ATTENTION_HIDDEN
        )
        self.attn_out = Linear(store, f"{prefix}.attention.out", ATTENTION_HIDDEN, config.num_experts)

    def init_weights(self, seed):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        for hidden, out in self.experts:
            hidden.init_uniform(rng)
            out.init_uniform(rng)
        self.contexts.data[...] = rng.normal(scale=0.5, size=self.contexts.data.shape)
        self.attn_hidden.init_uniform(rng)
        self.attn_out.init_uniform(rng)

    def attention_weights(self, task_id):
        """Softmax expert weights for one task, shape (1, num_experts)."""
        if not 0 <= task_id < self.num_tasks:
            raise TaskError(f"task_id {task_id} out of range for {self.num_tasks} tasks")
        row = ad.take_row(self.contexts, task_id)
        logits = self.attn_out(ad.relu(self.attn_hidden(row)))
        return ad.softmax(logits)

    def encode(self, state, task_id):
        weights = self.attention_weights(task_id)
        x = ad.as_tensor(state)
        mixed = None
        for a, (hidden, out) in enumerate(self.experts):
            expert_out = out(ad.relu(hidden(x)))
            w = ad.slice_cols(weights, a, a + 1)
            term = ad.mul(expert_out, ad.reshape(w, ()))
            mixed = term if mixed is None else ad.add(mixed, term)
        return mixed


def build_encoder(config, state_dim, num_tasks, store, prefix="encoder"):
    """Construct the encoder named by config.kind; adds params to the store."""
    if config.kind == "identity":
        return IdentityEncoder(state_dim)
    if config.kind == "mlp":
        return MlpEncoder(config, state_dim, store, prefix)
    if config.kind == "care_mixture":
        return CareMixtureEncoder(config, state_dim, num_tasks, store, prefix)
    raise ConfigError(f"unknown encoder kind {config.kind!r}")


def encoder_output_dim(config, state_dim):
    return state_dim if config.kind == "identity" else config.output_dim


def encoder_param_count(config, state_dim, num_tasks):
    """Closed-form trainable count matching build_encoder exactly."""
    if config.kind == "identity":
        return 0
    expert = (state_dim * config.expert_hidden + config.expert_hidden) + (
        config.expert_hidden * config.output_dim + config.output_dim
    )
    if config.kind == "mlp":
        return expert
    attention = (config.context_dim * ATTENTION_HIDDEN + ATTENTION_HIDDEN) + (
        ATTENTION_HIDDEN * config.num_experts + config.num_experts
    )
    contexts = num_tasks * config.context_dim
    return config.num_experts * expert + contexts + attention
