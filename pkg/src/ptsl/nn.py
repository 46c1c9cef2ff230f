"""Dense layer primitives shared by the backbone and the encoders."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


class Linear:
    """Dense layer ``x @ weight + bias``; weight has shape (in, out)."""

    def __init__(self, store, name, in_dim, out_dim, bias=True):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = store.add(f"{name}.weight", (in_dim, out_dim))
        self.bias = store.add(f"{name}.bias", (out_dim,)) if bias else None

    def __call__(self, x):
        return ad.affine(x, self.weight, self.bias)

    def init_uniform(self, rng):
        """Fan-in scaled uniform init for weight and bias."""
        bound = 1.0 / np.sqrt(self.in_dim)
        self.weight.data[...] = rng.uniform(-bound, bound, size=self.weight.data.shape)
        if self.bias is not None:
            self.bias.data[...] = rng.uniform(-bound, bound, size=self.bias.data.shape)

    def init_zero(self):
        self.weight.data.fill(0.0)
        if self.bias is not None:
            self.bias.data.fill(0.0)

    @property
    def param_count(self):
        n = self.weight.data.size
        if self.bias is not None:
            n += self.bias.data.size
        return n


def mlp_param_count(in_dim, hidden_dim, out_dim, num_hidden):
    """Trainable scalars in a plain dense trunk with num_hidden hidden layers."""
    count = in_dim * hidden_dim + hidden_dim
    for _ in range(num_hidden - 1):
        count += hidden_dim * hidden_dim + hidden_dim
    count += hidden_dim * out_dim + out_dim
    return count
