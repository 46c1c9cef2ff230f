"""Flat parameter storage and the Adam optimizer.

All trainable tensors of one network live as views into a single float64
vector, with a parallel gradient vector.  Backward passes accumulate into
the views; the optimizer then updates the whole network with a handful of
vectorized operations, which keeps per-step overhead low at desk scale.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ContractError


class ParameterStore:
    """Named trainable tensors packed into one flat vector after finalize()."""

    def __init__(self):
        self._names = []
        self._tensors = []
        self.theta = None
        self.grad = None

    def add(self, name, shape):
        if self.theta is not None:
            raise ContractError("cannot add parameters after finalize()")
        if name in self._names:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.zeros(shape), requires_grad=True)
        self._names.append(name)
        self._tensors.append(t)
        return t

    def finalize(self):
        """Repack every tensor as a view into one contiguous vector."""
        if self.theta is not None:
            return self
        total = sum(t.data.size for t in self._tensors)
        self.theta = np.zeros(total)
        self.grad = np.zeros(total)
        offset = 0
        for t in self._tensors:
            n = t.data.size
            view = self.theta[offset:offset + n].reshape(t.data.shape)
            view[...] = t.data
            t.data = view
            t.grad = self.grad[offset:offset + n].reshape(t.data.shape)
            offset += n
        return self

    @property
    def size(self):
        return sum(t.data.size for t in self._tensors)

    def zero_grad(self):
        self.grad.fill(0.0)

    def named_tensors(self):
        return list(zip(self._names, self._tensors))

    def tensor(self, name):
        return self._tensors[self._names.index(name)]

    def copy_values_from(self, other):
        """Copy parameter values from a store with identical layout."""
        if self.theta.shape != other.theta.shape:
            raise ContractError("parameter stores have different layouts")
        self.theta[...] = other.theta

    def blend_from(self, other, weight):
        """In-place EMA blend: theta <- weight*other + (1-weight)*theta."""
        self.theta *= 1.0 - weight
        self.theta += weight * other.theta

    def state_dict(self):
        return {name: t.data.copy() for name, t in self.named_tensors()}

    def load_state_dict(self, values):
        for name, t in self.named_tensors():
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ContractError(
                    f"parameter {name!r} has shape {arr.shape}, expected {t.data.shape}"
                )
            t.data[...] = arr


class Adam:
    """Adam over one ParameterStore's flat vector."""

    def __init__(self, store, lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        if store.theta is None:
            raise ContractError("store must be finalized before attaching an optimizer")
        self.store = store
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = 0
        self.m = np.zeros_like(store.theta)
        self.v = np.zeros_like(store.theta)

    def zero_grad(self):
        self.store.zero_grad()

    def step(self):
        g = self.store.grad
        self.t += 1
        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * g
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (g * g)
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        self.store.theta -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class ScalarAdam:
    """Independent Adam state per element of a small vector.

    Used for the per-task temperature parameters, where each element must
    be stepped only when its own task contributed a gradient.
    """

    def __init__(self, values, lr=3e-4, betas=(0.9, 0.999), eps=1e-8):
        self.values = values
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.t = np.zeros(values.shape, dtype=np.int64)
        self.m = np.zeros_like(values)
        self.v = np.zeros_like(values)

    def step_masked(self, grads, mask):
        """Step only the entries where mask is True."""
        idx = np.flatnonzero(mask)
        if idx.size == 0:
            return
        g = grads[idx]
        self.t[idx] += 1
        self.m[idx] = self.beta1 * self.m[idx] + (1.0 - self.beta1) * g
        self.v[idx] = self.beta2 * self.v[idx] + (1.0 - self.beta2) * g * g
        m_hat = self.m[idx] / (1.0 - self.beta1 ** self.t[idx])
        v_hat = self.v[idx] / (1.0 - self.beta2 ** self.t[idx])
        self.values[idx] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
