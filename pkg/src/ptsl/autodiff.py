"""Reverse-mode automatic differentiation over dense float64 arrays.

Operations executed while a :class:`Tape` is active are recorded in order.
``backward(loss)`` replays the recording in reverse and accumulates
``d(loss)/d(leaf)`` into ``leaf.grad`` for every leaf tensor with
``requires_grad`` set.  Leaf gradients accumulate across backward calls;
optimizers zero them explicitly.

Outside a tape (or inside :func:`no_grad`) the same operations run as plain
numpy with no recording, which is the fast path used for rollouts and
target-network evaluation.  Tapes are thread-local, so independent agents
may run on separate threads.
"""

from __future__ import annotations

import threading

import numpy as np

from .errors import ContractError, DomainError, ShapeError

_LOG2 = float(np.log(2.0))

_state = threading.local()


def _stack():
    stack = getattr(_state, "stack", None)
    if stack is None:
        stack = []
        _state.stack = stack
    return stack


def _active():
    stack = _stack()
    if not stack:
        return None
    tape = stack[-1]
    return tape if tape is not _NO_GRAD else None


class Tape:
    """Ordered record of operations for one forward pass."""

    __slots__ = ("_nodes",)

    def __init__(self):
        self._nodes = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is self
        return False

    def __len__(self):
        return len(self._nodes)

    @property
    def nodes(self):
        """Recorded (output, inputs) pairs, in execution order."""
        return [(out, inputs) for out, inputs, _ in self._nodes]

    def backward(self, loss):
        backward(loss)


_NO_GRAD = object()


class no_grad:
    """Context manager that suppresses recording on any active tape."""

    def __enter__(self):
        _stack().append(_NO_GRAD)
        return self

    def __exit__(self, exc_type, exc, tb):
        popped = _stack().pop()
        assert popped is _NO_GRAD
        return False


class Tensor:
    """A dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_rec", "_tape")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._rec = False
        self._tape = None

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _finish(out_data, inputs, backward_fn):
    out = Tensor(out_data)
    tape = _active()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._rec = True
        out._tape = tape
        tape._nodes.append((out, inputs, backward_fn))
    return out


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every requires_grad leaf.

    ``loss`` must be a scalar tensor recorded on a tape.  Repeated calls
    without zeroing leaf gradients accumulate (two calls double them).
    """
    if not isinstance(loss, Tensor) or loss.data.shape != ():
        raise ContractError(
            f"backward expects a recorded scalar tensor, got shape "
            f"{getattr(loss, 'data', np.empty(0)).shape}"
        )
    tape = loss._tape
    if tape is None:
        raise ContractError("loss was not recorded on any tape")
    pending = {id(loss): np.ones((), dtype=np.float64)}
    for out, inputs, backward_fn in reversed(tape._nodes):
        grad_out = pending.pop(id(out), None)
        if grad_out is None:
            continue
        for tensor, grad in zip(inputs, backward_fn(grad_out)):
            if grad is None or not tensor.requires_grad:
                continue
            if tensor._rec:
                key = id(tensor)
                if key in pending:
                    pending[key] = pending[key] + grad
                else:
                    pending[key] = grad
            else:
                if tensor.grad is None:
                    tensor.grad = np.zeros_like(tensor.data)
                np.add(tensor.grad, grad, out=tensor.grad)


# ---------------------------------------------------------------------------
# operations


def matmul(a, b):
    """Matrix product of two 2-D tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul: shapes {a.data.shape} and {b.data.shape} do not align")
    ad, bd = a.data, b.data

    def bwd(g):
        ga = g @ bd.T if a.requires_grad else None
        gb = ad.T @ g if b.requires_grad else None
        return ga, gb

    return _finish(ad @ bd, (a, b), bwd)


def affine(x, weight, bias=None):
    """Fused ``x @ weight + bias`` (bias broadcasts over rows)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.data.ndim != 2 or x.data.shape[1] != weight.data.shape[0]:
        raise ShapeError(f"affine: shapes {x.data.shape} and {weight.data.shape} do not align")
    out = x.data @ weight.data
    if bias is None:
        xd, wd = x.data, weight.data

        def bwd(g):
            gx = g @ wd.T if x.requires_grad else None
            gw = xd.T @ g if weight.requires_grad else None
            return gx, gw

        return _finish(out, (x, weight), bwd)
    bias = as_tensor(bias)
    if bias.data.shape != (weight.data.shape[1],):
        raise ShapeError(f"affine: bias shape {bias.data.shape} does not match output width")
    out += bias.data
    xd, wd = x.data, weight.data

    def bwd(g):
        gx = g @ wd.T if x.requires_grad else None
        gw = xd.T @ g if weight.requires_grad else None
        gb = g.sum(axis=0) if bias.requires_grad else None
        return gx, gw, gb

    return _finish(out, (x, weight, bias), bwd)


def _binary_shapes(a, b, op_name):
    if a.data.shape == b.data.shape:
        return "equal"
    if b.data.ndim == 1 and a.data.ndim == 2 and a.data.shape[1] == b.data.shape[0]:
        return "row"
    if b.data.shape == ():
        return "scalar"
    if a.data.shape == ():
        return "lscalar"
    raise ShapeError(f"{op_name}: shapes {a.data.shape} and {b.data.shape} are incompatible")


def _reduce_to(grad, shape, kind):
    if kind == "equal":
        return grad
    if kind == "row":
        return grad.sum(axis=0)
    return grad.sum()


def add(a, b):
    """Elementwise sum; the right operand may be a row vector or scalar."""
    a, b = as_tensor(a), as_tensor(b)
    kind = _binary_shapes(a, b, "add")

    def bwd(g):
        ga = g if kind != "lscalar" else g.sum()
        gb = _reduce_to(g, b.data.shape, kind) if kind != "lscalar" else g
        return (ga if a.requires_grad else None, gb if b.requires_grad else None)

    return _finish(a.data + b.data, (a, b), bwd)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    kind = _binary_shapes(a, b, "sub")

    def bwd(g):
        ga = (g if kind != "lscalar" else g.sum()) if a.requires_grad else None
        gb = (-_reduce_to(g, b.data.shape, kind) if kind != "lscalar" else -g) if b.requires_grad else None
        return ga, gb

    return _finish(a.data - b.data, (a, b), bwd)


def mul(a, b):
    """Elementwise product; either operand may be scalar."""
    a, b = as_tensor(a), as_tensor(b)
    kind = _binary_shapes(a, b, "mul")
    ad, bd = a.data, b.data

    def bwd(g):
        ga = None
        gb = None
        if a.requires_grad:
            ga = g * bd
            if kind == "lscalar":
                ga = ga.sum()
        if b.requires_grad:
            gb = g * ad
            gb = _reduce_to(gb, bd.shape, kind) if kind != "lscalar" else gb
        return ga, gb

    return _finish(ad * bd, (a, b), bwd)


def neg(a):
    a = as_tensor(a)

    def bwd(g):
        return (-g if a.requires_grad else None,)

    return _finish(-a.data, (a,), bwd)


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)

    def bwd(g, out=out):
        return (g * (1.0 - out * out) if a.requires_grad else None,)

    return _finish(out, (a,), bwd)


def relu(a):
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def bwd(g, out=out):
        return (g * (out > 0.0) if a.requires_grad else None,)

    return _finish(out, (a,), bwd)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)

    def bwd(g, out=out):
        return (g * out if a.requires_grad else None,)

    return _finish(out, (a,), bwd)


def log(a):
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log: inputs must be strictly positive")
    ad = a.data

    def bwd(g):
        return (g / ad if a.requires_grad else None,)

    return _finish(np.log(ad), (a,), bwd)


def square(a):
    a = as_tensor(a)
    ad = a.data

    def bwd(g):
        return (2.0 * ad * g if a.requires_grad else None,)

    return _finish(ad * ad, (a,), bwd)


def minimum(a, b):
    """Elementwise minimum; gradient follows the smaller operand (ties to the first)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.shape != b.data.shape:
        raise ShapeError(f"minimum: shapes {a.data.shape} and {b.data.shape} differ")
    mask = a.data <= b.data

    def bwd(g, mask=mask):
        ga = g * mask if a.requires_grad else None
        gb = g * ~mask if b.requires_grad else None
        return ga, gb

    return _finish(np.where(mask, a.data, b.data), (a, b), bwd)


def clamp(a, low, high):
    """Clip values to [low, high]; gradient passes through the interior."""
    a = as_tensor(a)
    mask = (a.data >= low) & (a.data <= high)

    def bwd(g, mask=mask):
        return (g * mask if a.requires_grad else None,)

    return _finish(np.clip(a.data, low, high), (a,), bwd)


def tensor_sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.data.shape

    def bwd(g):
        if not a.requires_grad:
            return (None,)
        if axis is None:
            return (np.broadcast_to(g, shape),)
        gexp = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gexp, shape),)

    return _finish(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)


def mean(a):
    """Mean over all elements, returned as a scalar tensor."""
    a = as_tensor(a)
    n = a.data.size
    shape = a.data.shape

    def bwd(g):
        return (np.broadcast_to(g / n, shape) if a.requires_grad else None,)

    return _finish(a.data.mean(), (a,), bwd)


def concat(parts, axis=1):
    parts = [as_tensor(p) for p in parts]
    widths = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(widths)[:-1]

    def bwd(g):
        pieces = np.split(g, splits, axis=axis)
        return tuple(piece if p.requires_grad else None for p, piece in zip(parts, pieces))

    return _finish(np.concatenate([p.data for p in parts], axis=axis), tuple(parts), bwd)


def slice_cols(a, start, stop):
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"slice_cols expects a 2-D tensor, got shape {a.data.shape}")
    shape = a.data.shape

    def bwd(g):
        if not a.requires_grad:
            return (None,)
        full = np.zeros(shape)
        full[:, start:stop] = g
        return (full,)

    return _finish(a.data[:, start:stop].copy(), (a,), bwd)


def reshape(a, shape):
    a = as_tensor(a)
    old = a.data.shape

    def bwd(g):
        return (g.reshape(old) if a.requires_grad else None,)

    return _finish(a.data.reshape(shape), (a,), bwd)


def stacked_affine(x, weights, biases, groups):
    """Per-group dense layers in one batched matmul.

    ``x`` holds ``groups`` equal-sized row blocks; block ``g`` goes through
    ``weights[g]`` (and ``biases[g]`` when given).  Equivalent to slicing the
    batch per group and applying each dense layer separately, but with an
    operation count independent of the number of groups.
    """
    x = as_tensor(x)
    rows = x.data.shape[0]
    if rows % groups != 0:
        raise ShapeError(f"stacked_affine: {rows} rows not divisible into {groups} groups")
    per = rows // groups
    w3 = np.stack([w.data for w in weights])
    if x.data.shape[1] != w3.shape[1]:
        raise ShapeError(
            f"stacked_affine: input width {x.data.shape[1]} does not match weight "
            f"shape {w3.shape[1:]}"
        )
    x3 = x.data.reshape(groups, per, -1)
    out3 = x3 @ w3
    if biases is not None:
        out3 += np.stack([b.data for b in biases])[:, None, :]
    out_dim = w3.shape[2]
    inputs = (x, *weights) if biases is None else (x, *weights, *biases)

    def bwd(g):
        g3 = g.reshape(groups, per, out_dim)
        gx = None
        if x.requires_grad:
            gx = (g3 @ w3.transpose(0, 2, 1)).reshape(rows, -1)
        gw3 = x3.transpose(0, 2, 1) @ g3
        grads = [gx]
        grads.extend(gw3[i] if weights[i].requires_grad else None for i in range(groups))
        if biases is not None:
            gb3 = g3.sum(axis=1)
            grads.extend(gb3[i] if biases[i].requires_grad else None for i in range(groups))
        return tuple(grads)

    return _finish(out3.reshape(rows, out_dim), inputs, bwd)


def slice_rows(a, start, stop):
    """Contiguous row range of a 2-D tensor."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"slice_rows expects a 2-D tensor, got shape {a.data.shape}")
    shape = a.data.shape

    def bwd(g):
        if not a.requires_grad:
            return (None,)
        full = np.zeros(shape)
        full[start:stop, :] = g
        return (full,)

    return _finish(a.data[start:stop, :].copy(), (a,), bwd)


def take_row(a, index):
    """Row ``index`` of a 2-D tensor as a (1, width) tensor."""
    a = as_tensor(a)
    if a.data.ndim != 2:
        raise ShapeError(f"take_row expects a 2-D tensor, got shape {a.data.shape}")
    shape = a.data.shape

    def bwd(g):
        if not a.requires_grad:
            return (None,)
        full = np.zeros(shape)
        full[index, :] = g[0]
        return (full,)

    return _finish(a.data[index:index + 1, :].copy(), (a,), bwd)


def softmax(a):
    """Row-wise softmax of a 2-D tensor."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)

    def bwd(g, out=out):
        if not a.requires_grad:
            return (None,)
        dot = (g * out).sum(axis=1, keepdims=True)
        return (out * (g - dot),)

    return _finish(out, (a,), bwd)


def squash_logdet(u):
    """log(1 - tanh(u)^2), computed stably; derivative is -2*tanh(u).

    This is the change-of-variables correction for tanh-squashed Gaussian
    actions.  The direct expression underflows for |u| > 19; the identity
    2*(log 2 - u - softplus(-2u)) does not.
    """
    u = as_tensor(u)
    out = 2.0 * (_LOG2 - u.data - np.logaddexp(0.0, -2.0 * u.data))
    th = np.tanh(u.data)

    def bwd(g, th=th):
        return (-2.0 * th * g if u.requires_grad else None,)

    return _finish(out, (u,), bwd)
