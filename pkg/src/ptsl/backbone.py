"""Shared dense trunk with projected low-rank task-specific correction layers.

Every layer runs two paths.  The shared path is an ordinary dense layer used
by all tasks.  The task path projects the layer input down to a small width,
applies a per-task dense layer, and projects the result back up before the
two paths are summed.  Up projections start at zero, so a fresh network is
exactly its shared trunk and per-task corrections grow from nothing during
training.

Down/up projections between the hidden width and the task width can be one
pair shared by all layers or an independent pair per layer.  Consecutive
task layers can be chained through a configurable residual combiner.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError, InfeasibleError, ShapeError, TaskError
from .nn import Linear
from .optim import ParameterStore

PROJECTION_MODES = ("shared", "independent")
RESIDUAL_MODES = ("none", "addition", "learnable_sum", "learnable_projection")


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyperparameters for one backbone network."""

    input_dim: int
    output_dim: int
    hidden_dim: int
    task_dim: int
    num_tasks: int
    num_hidden: int
    projection_mode: str = "shared"
    residual_mode: str = "none"
    first_layer_down_projection: bool = True
    last_layer_up_projection: bool = False

    def __post_init__(self):
        for name in ("input_dim", "output_dim", "hidden_dim", "task_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.num_tasks < 1:
            raise ConfigError(f"num_tasks must be >= 1, got {self.num_tasks}")
        if self.num_hidden < 1:
            raise ConfigError(f"num_hidden must be >= 1, got {self.num_hidden}")
        if self.task_dim > self.hidden_dim:
            raise ConfigError(
                f"task_dim ({self.task_dim}) must not exceed hidden_dim ({self.hidden_dim})"
            )
        if self.projection_mode not in PROJECTION_MODES:
            raise ConfigError(f"unknown projection_mode {self.projection_mode!r}")
        if self.residual_mode not in RESIDUAL_MODES:
            raise ConfigError(f"unknown residual_mode {self.residual_mode!r}")

    @property
    def num_layers(self):
        return self.num_hidden + 1


@dataclass
class ResidualParams:
    """Learnable state for the residual combiner, shared across tasks and layers."""

    alpha: ad.Tensor | None = None
    beta: ad.Tensor | None = None
    projection: ad.Tensor | None = None


def combine_residual(mode, x_proj, y_prev, params=None):
    """Merge the current down-projected input with the previous task output.

    Both inputs have the task width.  Modes: ``none`` keeps only the new
    input, ``addition`` sums them, ``learnable_sum`` is ``alpha*x + beta*y``
    with scalar parameters, ``learnable_projection`` projects their
    concatenation back to the task width.
    """
    x_proj, y_prev = ad.as_tensor(x_proj), ad.as_tensor(y_prev)
    if x_proj.data.shape != y_prev.data.shape:
        raise ShapeError(
            f"residual inputs have shapes {x_proj.data.shape} and {y_prev.data.shape}"
        )
    if mode == "none":
        return x_proj
    if mode == "addition":
        return ad.add(x_proj, y_prev)
    if mode == "learnable_sum":
        if params is None or params.alpha is None or params.beta is None:
            raise ConfigError("learnable_sum residual requires alpha and beta parameters")
        return ad.add(ad.mul(x_proj, params.alpha), ad.mul(y_prev, params.beta))
    if mode == "learnable_projection":
        if params is None or params.projection is None:
            raise ConfigError("learnable_projection residual requires a projection matrix")
        return ad.matmul(ad.concat([x_proj, y_prev], axis=1), params.projection)
    raise ConfigError(f"unknown residual_mode {mode!r}")


class PtslBackbone:
    """Parameter container and forward pass for one backbone network."""

    def __init__(self, config, store=None, prefix=""):
        self.config = config
        own_store = store is None
        if own_store:
            store = ParameterStore()
        self.store = store
        p = f"{prefix}." if prefix else ""
        c = config
        n = c.num_hidden

        dims = [c.input_dim] + [c.hidden_dim] * n + [c.output_dim]
        self.shared = [
            Linear(store, f"{p}shared.{i}", dims[i], dims[i + 1]) for i in range(n + 1)
        ]

        self.task_layers = []
        for j in range(c.num_tasks):
            layers = []
            for i in range(n + 1):
                in_dim = out_dim = c.task_dim
                if i == 0 and not c.first_layer_down_projection:
                    in_dim = c.input_dim
                if i == n and not c.last_layer_up_projection:
                    out_dim = c.output_dim
                layers.append(Linear(store, f"{p}task.{j}.{i}", in_dim, out_dim))
            self.task_layers.append(layers)

        self.down_first = (
            Linear(store, f"{p}proj.down.first", c.input_dim, c.task_dim, bias=False)
            if c.first_layer_down_projection
            else None
        )
        if c.projection_mode == "shared":
            shared_down = Linear(store, f"{p}proj.down.shared", c.hidden_dim, c.task_dim, bias=False)
            shared_up = Linear(store, f"{p}proj.up.shared", c.task_dim, c.hidden_dim, bias=False)
            self.down_inner = [shared_down] * n
            self.up_inner = [shared_up] * n
        else:
            self.down_inner = [
                Linear(store, f"{p}proj.down.{i}", c.hidden_dim, c.task_dim, bias=False)
                for i in range(1, n + 1)
            ]
            self.up_inner = [
                Linear(store, f"{p}proj.up.{i}", c.task_dim, c.hidden_dim, bias=False)
                for i in range(n)
            ]
        self.up_last = (
            Linear(store, f"{p}proj.up.last", c.task_dim, c.output_dim, bias=False)
            if c.last_layer_up_projection
            else None
        )

        self.residual = ResidualParams()
        if c.residual_mode == "learnable_sum":
            self.residual.alpha = store.add(f"{p}residual.alpha", ())
            self.residual.beta = store.add(f"{p}residual.beta", ())
        elif c.residual_mode == "learnable_projection":
            self.residual.projection = store.add(
                f"{p}residual.projection.weight", (2 * c.task_dim, c.task_dim)
            )

        if own_store:
            store.finalize()

    # -- initialization -----------------------------------------------------

    def init_weights(self, seed):
        """Seeded init: fan-in uniform everywhere except the merge-in maps.

        Up projections are zeroed so that a fresh network computes exactly
        the shared trunk for every task.  When the last layer has no up
        projection, its task layers merge straight into the output stream
        and are zeroed instead, for the same reason.
        """
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        c = self.config
        n = c.num_hidden
        for layer in self.shared:
            layer.init_uniform(rng)
        for j in range(c.num_tasks):
            for i, layer in enumerate(self.task_layers[j]):
                if i == n and not c.last_layer_up_projection:
                    layer.init_zero()
                else:
                    layer.init_uniform(rng)
        if self.down_first is not None:
            self.down_first.init_uniform(rng)
        seen = set()
        for layer in self.down_inner:
            if id(layer) not in seen:
                layer.init_uniform(rng)
                seen.add(id(layer))
        for layer in self.up_inner:
            layer.init_zero()
        if self.up_last is not None:
            self.up_last.init_zero()
        if self.residual.alpha is not None:
            self.residual.alpha.data[...] = 1.0
            self.residual.beta.data[...] = 0.0
        if self.residual.projection is not None:
            d = c.task_dim
            block = np.zeros((2 * d, d))
            block[:d, :] = np.eye(d)
            self.residual.projection.data[...] = block

    # -- forward ------------------------------------------------------------

    def _check_input(self, x):
        x = ad.as_tensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != self.config.input_dim:
            raise ShapeError(
                f"expected input of width {self.config.input_dim}, got shape {x.data.shape}"
            )
        return x

    def _check_task(self, task_id):
        if not 0 <= task_id < self.config.num_tasks:
            raise TaskError(
                f"task_id {task_id} out of range for {self.config.num_tasks} tasks"
            )

    def forward(self, x, task_id):
        """Evaluate the network for one task on a batch of rows."""
        x = self._check_input(x)
        self._check_task(task_id)
        c = self.config
        n = c.num_hidden
        layers = self.task_layers[task_id]

        h = x
        t_prev = None
        for i in range(n + 1):
            s = self.shared[i](h)
            if i == 0:
                d = self.down_first(h) if self.down_first is not None else h
                u = d
            else:
                d = self.down_inner[i - 1](h)
                u = combine_residual(c.residual_mode, d, t_prev, self.residual)
            z = layers[i](u)
            if i < n:
                t = ad.relu(z)
                y = self.up_inner[i](t)
                h = ad.relu(ad.add(s, y))
                t_prev = t
            else:
                y = self.up_last(z) if self.up_last is not None else z
                h = ad.add(s, y)
        return h

    def forward_tasks(self, x, task_ids):
        """Evaluate equal-sized consecutive row blocks, one per listed task.

        Matches forward() applied blockwise but runs the per-task layers as
        stacked batched matmuls, so the tape length does not grow with the
        number of tasks.
        """
        return stacked_forward([self], x, task_ids)

    def shared_trunk_forward(self, x):
        """Evaluate the shared path alone, ignoring every task layer."""
        x = self._check_input(x)
        h = x
        for i, layer in enumerate(self.shared):
            h = layer(h)
            if i < self.config.num_hidden:
                h = ad.relu(h)
        return h

    def named_parameters(self):
        return self.store.named_tensors()

    @property
    def param_count(self):
        return self.store.size


class SharedMlp:
    """Plain dense trunk used by the task-agnostic baselines."""

    def __init__(self, input_dim, hidden_dim, output_dim, num_hidden, store=None, prefix=""):
        self.input_dim = input_dim
        self.output_dim = output_dim
        self.num_hidden = num_hidden
        own_store = store is None
        if own_store:
            store = ParameterStore()
        self.store = store
        p = f"{prefix}." if prefix else ""
        dims = [input_dim] + [hidden_dim] * num_hidden + [output_dim]
        self.layers = [
            Linear(store, f"{p}shared.{i}", dims[i], dims[i + 1]) for i in range(num_hidden + 1)
        ]
        if own_store:
            store.finalize()

    def init_weights(self, seed):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        for layer in self.layers:
            layer.init_uniform(rng)

    def forward(self, x, task_id=None):
        x = ad.as_tensor(x)
        if x.data.ndim != 2 or x.data.shape[1] != self.input_dim:
            raise ShapeError(f"expected input of width {self.input_dim}, got shape {x.data.shape}")
        h = x
        for i, layer in enumerate(self.layers):
            h = layer(h)
            if i < self.num_hidden:
                h = ad.relu(h)
        return h

    @property
    def param_count(self):
        return self.store.size


def stacked_forward(backbones, x, task_ids):
    """Evaluate one or more identically shaped backbones in a single pass.

    ``x`` holds one block of rows per (backbone, task) pair, backbone-major
    and task-minor, all blocks equal-sized.  With several backbones (the
    twin critics), their dense layers and projections run as stacked batched
    matmuls over the backbone axis while the task layers stack over the
    (backbone, task) product; gradients still land in each backbone's own
    parameters.  Learnable residual combiners hold per-backbone state, so
    multiple backbones are only supported for the stateless modes.
    """
    first = backbones[0]
    c = first.config
    m = len(backbones)
    if m > 1:
        for bb in backbones[1:]:
            if bb.config != c:
                raise ShapeError("stacked backbones must share one configuration")
        if c.residual_mode not in ("none", "addition"):
            raise ContractError(
                "stacked evaluation of several backbones requires a stateless residual mode"
            )
    x = first._check_input(x)
    for task_id in task_ids:
        first._check_task(task_id)
    n = c.num_hidden

    def across_nets(pick, value):
        layers = [pick(bb) for bb in backbones]
        if m == 1:
            return layers[0](value)
        bias = None if layers[0].bias is None else [l.bias for l in layers]
        return ad.stacked_affine(value, [l.weight for l in layers], bias, m)

    def across_tasks(i, value):
        layers = [bb.task_layers[j][i] for bb in backbones for j in task_ids]
        return ad.stacked_affine(
            value, [l.weight for l in layers], [l.bias for l in layers], m * len(task_ids)
        )

    h = x
    t_prev = None
    for i in range(n + 1):
        s = across_nets(lambda bb: bb.shared[i], h)
        if i == 0:
            u = across_nets(lambda bb: bb.down_first, h) if c.first_layer_down_projection else h
        else:
            d = across_nets(lambda bb: bb.down_inner[i - 1], h)
            u = combine_residual(c.residual_mode, d, t_prev, first.residual)
        z = across_tasks(i, u)
        if i < n:
            t = ad.relu(z)
            y = across_nets(lambda bb: bb.up_inner[i], t)
            h = ad.relu(ad.add(s, y))
            t_prev = t
        else:
            y = across_nets(lambda bb: bb.up_last, z) if c.last_layer_up_projection else z
            h = ad.add(s, y)
    return h


def stacked_trunk_forward(trunks, x):
    """Evaluate one or more identically shaped plain trunks in a single pass."""
    first = trunks[0]
    m = len(trunks)
    h = ad.as_tensor(x)
    for i in range(first.num_hidden + 1):
        if m == 1:
            h = first.layers[i](h)
        else:
            h = ad.stacked_affine(
                h,
                [t.layers[i].weight for t in trunks],
                [t.layers[i].bias for t in trunks],
                m,
            )
        if i < first.num_hidden:
            h = ad.relu(h)
    return h


# -- parameter counting ------------------------------------------------------


@dataclass(frozen=True)
class ParamCount:
    """Exact trainable-scalar totals for one backbone, by parameter group."""

    shared: int
    task: int
    projections: int
    residual: int
    per_layer_task: tuple = field(default=())

    @property
    def total(self):
        return self.shared + self.task + self.projections + self.residual


def count_parameters(config):
    """Closed-form trainable-scalar count; equals shape enumeration exactly.

    Dense layers carry a bias, projections do not, so the per-layer task-side
    cost is ``I*D + T*(D*D + D)`` with a first-layer down projection versus
    ``T*(I*D + D)`` without, and symmetrically at the output layer.
    """
    c = config
    i_dim, o, h, d, t, n = (
        c.input_dim,
        c.output_dim,
        c.hidden_dim,
        c.task_dim,
        c.num_tasks,
        c.num_hidden,
    )
    shared = (i_dim * h + h) + (n - 1) * (h * h + h) + (h * o + o)

    per_layer = []
    first = t * (d * d + d) if c.first_layer_down_projection else t * (i_dim * d + d)
    per_layer.append(first)
    for _ in range(1, n):
        per_layer.append(t * (d * d + d))
    last = t * (d * d + d) if c.last_layer_up_projection else t * (d * o + o)
    per_layer.append(last)
    task = sum(per_layer)

    projections = 0
    if c.first_layer_down_projection:
        projections += i_dim * d
    inner = 1 if c.projection_mode == "shared" else n
    projections += inner * (h * d) + inner * (d * h)
    if c.last_layer_up_projection:
        projections += d * o

    residual = 0
    if c.residual_mode == "learnable_sum":
        residual = 2
    elif c.residual_mode == "learnable_projection":
        residual = 2 * d * d

    return ParamCount(shared, task, projections, residual, tuple(per_layer))


def budget_match(target_params, fixed, hidden_range=None, task_dim_range=None):
    """Pick the config maximizing count_parameters subject to a budget.

    ``fixed`` holds every NetworkConfig field that is not searched; when it
    already pins ``hidden_dim`` or ``task_dim`` that dimension is not varied.
    Ties prefer the larger hidden width, then the larger task width.  Raises
    InfeasibleError (naming the closest candidate) when even the smallest
    candidate exceeds the budget.
    """
    fixed = dict(fixed)
    hidden_pinned = fixed.pop("hidden_dim", None)
    task_pinned = fixed.pop("task_dim", None)
    if hidden_range is None:
        hidden_range = range(1, 257)
    if task_dim_range is None:
        task_dim_range = range(1, 65)
    hidden_values = [hidden_pinned] if hidden_pinned is not None else list(hidden_range)
    best = None
    best_key = None
    closest = None
    closest_count = None
    for h in hidden_values:
        task_values = [task_pinned] if task_pinned is not None else [
            d for d in task_dim_range if d <= h
        ]
        for d in task_values:
            if d > h:
                continue
            cfg = NetworkConfig(hidden_dim=h, task_dim=d, **fixed)
            total = count_parameters(cfg).total
            if closest_count is None or total < closest_count:
                closest, closest_count = cfg, total
            if total <= target_params:
                key = (total, h, d)
                if best_key is None or key > best_key:
                    best, best_key = cfg, key
    if best is None:
        raise InfeasibleError(
            f"no config within budget {target_params}; closest candidate "
            f"(hidden_dim={closest.hidden_dim}, task_dim={closest.task_dim}) "
            f"has {closest_count} parameters"
        )
    return best


def make_config(**kwargs):
    """Convenience constructor used by tests and demos."""
    return NetworkConfig(**kwargs)


def with_overrides(config, **kwargs):
    return replace(config, **kwargs)
