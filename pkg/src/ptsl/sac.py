"""Multi-task soft actor-critic with one learned entropy temperature per task.

The agent drives any encoder/backbone pair: a task-routed backbone receives
the task index out of band, while the plain-trunk baseline can have a task
one-hot appended to its input instead.  Twin critics with EMA target copies
follow the usual recipe; temperatures are disentangled, so a task's
temperature moves only when that task contributed samples to the batch.
"""

from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor, backward, no_grad
from .backbone import (
    NetworkConfig,
    PtslBackbone,
    SharedMlp,
    count_parameters,
    stacked_forward,
    stacked_trunk_forward,
)
from .encoders import EncoderConfig, build_encoder
from .errors import ContractError, TrainingDiverged
from .nn import mlp_param_count
from .optim import Adam, ParameterStore, ScalarAdam

LOG_2PI = math.log(2.0 * math.pi)
EVAL_SEED_OFFSET = 1_000_000


# ---------------------------------------------------------------------------
# replay storage


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray
    reward: float
    next_state: np.ndarray
    done: bool
    task_id: int


@dataclass
class TaskBatch:
    """A replay sample sorted by task, with contiguous per-task row slices."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    task_ids: np.ndarray
    slices: list

    def __len__(self):
        return self.states.shape[0]


class ReplayBuffer:
    """Ring buffer over preallocated arrays with per-task index lists."""

    def __init__(self, capacity, state_dim, action_dim, num_tasks):
        self.capacity = capacity
        self.num_tasks = num_tasks
        self.states = np.zeros((capacity, state_dim))
        self.actions = np.zeros((capacity, action_dim))
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, state_dim))
        self.dones = np.zeros(capacity, dtype=bool)
        self.task_ids = np.zeros(capacity, dtype=np.int64)
        self._next = 0
        self._size = 0
        self.task_indices = [[] for _ in range(num_tasks)]

    def __len__(self):
        return self._size

    def add(self, state, action, reward, next_state, done, task_id):
        if not 0 <= task_id < self.num_tasks:
            raise ContractError(f"task_id {task_id} out of range")
        action = np.asarray(action, dtype=np.float64)
        if np.any(np.abs(action) > 1.0 + 1e-9):
            raise ContractError("stored actions must lie in [-1, 1]")
        pos = self._next
        if self._size == self.capacity:
            self.task_indices[self.task_ids[pos]].remove(pos)
        self.states[pos] = state
        self.actions[pos] = action
        self.rewards[pos] = reward
        self.next_states[pos] = next_state
        self.dones[pos] = done
        self.task_ids[pos] = task_id
        self.task_indices[task_id].append(pos)
        self._next = (pos + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def add_transition(self, tr):
        self.add(tr.state, tr.action, tr.reward, tr.next_state, tr.done, tr.task_id)

    def sample(self, batch_size, rng):
        """Uniform sample (with replacement), returned sorted by task."""
        if self._size == 0:
            raise ContractError("cannot sample from an empty buffer")
        idx = rng.integers(0, self._size, size=batch_size)
        tasks = self.task_ids[idx]
        order = np.argsort(tasks, kind="stable")
        return self._gather(idx[order], tasks[order])

    def sample_stratified(self, batch_size, rng):
        """Equal rows per task, uniform with replacement within each task.

        Requires every task to hold at least one transition and the batch
        size to divide evenly; used by the training loop so per-task layers
        can be evaluated as one stacked operation.
        """
        if batch_size % self.num_tasks != 0:
            raise ContractError(
                f"batch size {batch_size} not divisible by {self.num_tasks} tasks"
            )
        per = batch_size // self.num_tasks
        idx_parts = []
        for task in range(self.num_tasks):
            pool = self.task_indices[task]
            if not pool:
                raise ContractError(f"task {task} has no stored transitions")
            pool = np.asarray(pool)
            idx_parts.append(pool[rng.integers(0, len(pool), size=per)])
        idx = np.concatenate(idx_parts)
        return self._gather(idx, self.task_ids[idx])

    def _gather(self, idx, tasks):
        slices = []
        start = 0
        n = len(idx)
        for k in range(1, n + 1):
            if k == n or tasks[k] != tasks[start]:
                slices.append((int(tasks[start]), slice(start, k)))
                start = k
        return TaskBatch(
            states=self.states[idx],
            actions=self.actions[idx],
            rewards=self.rewards[idx],
            next_states=self.next_states[idx],
            dones=self.dones[idx],
            task_ids=tasks,
            slices=slices,
        )


# ---------------------------------------------------------------------------
# agent


@dataclass
class SacHyperparams:
    gamma: float = 0.99
    tau: float = 0.005
    learning_rate: float = 3e-4
    batch_size: int = 256
    warmup_steps_per_task: int = 1000
    buffer_capacity_per_task: int = 100_000
    init_alpha: float = 0.2
    hidden_dim: int = 48
    task_dim: int = 8
    num_hidden: int = 2
    projection_mode: str = "shared"
    residual_mode: str = "none"
    first_layer_down_projection: bool = True
    last_layer_up_projection: bool = False
    backbone: str = "ptsl"
    task_onehot: bool = False
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    log_std_min: float = -20.0
    log_std_max: float = 2.0


class TaskNet:
    """Encoder plus backbone, with optional one-hot task conditioning.

    The forward pass takes a batch sorted by task together with per-task row
    slices.  Task-blind configurations (plain trunk, task-independent
    encoder) collapse to a single full-batch pass.
    """

    def __init__(self, store, prefix, state_dim, aux_dim, out_dim, num_tasks, hyper):
        self.num_tasks = num_tasks
        self.aux_dim = aux_dim
        self.encoder = build_encoder(
            hyper.encoder, state_dim=state_dim, num_tasks=num_tasks,
            store=store, prefix=f"{prefix}.encoder",
        )
        onehot_dim = num_tasks if hyper.task_onehot else 0
        feat_dim = self.encoder.output_dim + onehot_dim + aux_dim
        self.onehot = hyper.task_onehot
        if hyper.backbone == "trunk":
            self.backbone = SharedMlp(
                feat_dim, hyper.hidden_dim, out_dim, hyper.num_hidden,
                store=store, prefix=f"{prefix}.backbone",
            )
            self.config = None
        else:
            self.config = NetworkConfig(
                input_dim=feat_dim,
                output_dim=out_dim,
                hidden_dim=hyper.hidden_dim,
                task_dim=hyper.task_dim,
                num_tasks=num_tasks,
                num_hidden=hyper.num_hidden,
                projection_mode=hyper.projection_mode,
                residual_mode=hyper.residual_mode,
                first_layer_down_projection=hyper.first_layer_down_projection,
                last_layer_up_projection=hyper.last_layer_up_projection,
            )
            self.backbone = PtslBackbone(self.config, store=store, prefix=f"{prefix}.backbone")
        self.encoder_task_dependent = hyper.encoder.kind == "care_mixture"
        self.task_blind = isinstance(self.backbone, SharedMlp) and not self.encoder_task_dependent

    def init_weights(self, rng):
        self.encoder.init_weights(rng)
        self.backbone.init_weights(rng)

    def _assemble(self, features, onehot_block, aux_part):
        parts = [features]
        if self.onehot and onehot_block is not None:
            parts.append(Tensor(onehot_block))
        if aux_part is not None:
            parts.append(aux_part)
        return parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)

    def _onehot_block(self, task_ids):
        block = np.zeros((len(task_ids), self.num_tasks))
        block[np.arange(len(task_ids)), task_ids] = 1.0
        return block

    def forward_grouped(self, states, aux, slices):
        """Forward a task-sorted batch; aux rides along uncoded (e.g. actions)."""
        if self.task_blind:
            task_ids = np.empty(states.shape[0], dtype=np.int64)
            for task, sl in slices:
                task_ids[sl] = task
            features = self.encoder.encode(states, 0)
            aux_part = aux if isinstance(aux, Tensor) else (
                Tensor(aux) if aux is not None else None
            )
            x = self._assemble(features, self._onehot_block(task_ids), aux_part)
            return self.backbone.forward(x, 0)
        sizes = {sl.stop - sl.start for _, sl in slices}
        if isinstance(self.backbone, PtslBackbone) and len(sizes) == 1:
            return self._forward_stacked(states, aux, slices)
        outs = []
        for task, sl in slices:
            features = self.encoder.encode(states[sl], task)
            if aux is None:
                aux_part = None
            elif isinstance(aux, Tensor):
                aux_part = ad.slice_rows(aux, sl.start, sl.stop)
            else:
                aux_part = Tensor(aux[sl])
            ids = np.full(sl.stop - sl.start, task, dtype=np.int64)
            x = self._assemble(features, self._onehot_block(ids), aux_part)
            outs.append(self.backbone.forward(x, task))
        return outs[0] if len(outs) == 1 else ad.concat(outs, axis=0)

    def _forward_stacked(self, states, aux, slices):
        tasks = [task for task, _ in slices]
        if self.encoder_task_dependent:
            parts = [self.encoder.encode(states[sl], task) for task, sl in slices]
            features = parts[0] if len(parts) == 1 else ad.concat(parts, axis=0)
        else:
            features = self.encoder.encode(states, 0)
        if self.onehot:
            task_ids = np.empty(states.shape[0], dtype=np.int64)
            for task, sl in slices:
                task_ids[sl] = task
            onehot_block = self._onehot_block(task_ids)
        else:
            onehot_block = None
        aux_part = aux if isinstance(aux, Tensor) else (
            Tensor(aux) if aux is not None else None
        )
        x = self._assemble(features, onehot_block, aux_part)
        return self.backbone.forward_tasks(x, tasks)


class SacAgent:
    """Actor, twin critics with EMA targets, and per-task temperatures."""

    def __init__(self, state_dim, action_dim, num_tasks, hyper=None, seed=0):
        self.state_dim = state_dim
        self.action_dim = action_dim
        self.num_tasks = num_tasks
        self.hyper = hyper or SacHyperparams()
        self.seed = seed
        self.target_entropy = -float(action_dim)

        h = self.hyper
        self.actor_store = ParameterStore()
        self.actor = TaskNet(
            self.actor_store, "actor", state_dim, 0, 2 * action_dim, num_tasks, h
        )
        self.actor_store.finalize()

        self.critic1_store = ParameterStore()
        self.critic1 = TaskNet(self.critic1_store, "critic1", state_dim, action_dim, 1, num_tasks, h)
        self.critic1_store.finalize()
        self.critic2_store = ParameterStore()
        self.critic2 = TaskNet(self.critic2_store, "critic2", state_dim, action_dim, 1, num_tasks, h)
        self.critic2_store.finalize()

        self.target1_store = ParameterStore()
        self.target1 = TaskNet(self.target1_store, "target1", state_dim, action_dim, 1, num_tasks, h)
        self.target1_store.finalize()
        self.target2_store = ParameterStore()
        self.target2 = TaskNet(self.target2_store, "target2", state_dim, action_dim, 1, num_tasks, h)
        self.target2_store.finalize()

        seeds = np.random.SeedSequence(seed).spawn(4)
        init_rng = np.random.default_rng(seeds[0])
        self.actor.init_weights(init_rng)
        self.critic1.init_weights(init_rng)
        self.critic2.init_weights(init_rng)
        self.target1_store.copy_values_from(self.critic1_store)
        self.target2_store.copy_values_from(self.critic2_store)
        self._noise_rng = np.random.default_rng(seeds[1])
        self._sample_rng = np.random.default_rng(seeds[2])
        self._reset_rng = np.random.default_rng(seeds[3])

        self.log_alpha = np.full(num_tasks, math.log(h.init_alpha))
        self.alpha_opt = ScalarAdam(self.log_alpha, lr=h.learning_rate)
        self.actor_opt = Adam(self.actor_store, lr=h.learning_rate)
        self.critic1_opt = Adam(self.critic1_store, lr=h.learning_rate)
        self.critic2_opt = Adam(self.critic2_store, lr=h.learning_rate)

        self.buffer = ReplayBuffer(
            h.buffer_capacity_per_task * num_tasks, state_dim, action_dim, num_tasks
        )

    # -- policy ----------------------------------------------------------------

    @property
    def alpha(self):
        return np.exp(self.log_alpha)

    def actor_stats(self, states, slices):
        out = self.actor.forward_grouped(states, None, slices)
        mean = ad.slice_cols(out, 0, self.action_dim)
        log_std = ad.clamp(
            ad.slice_cols(out, self.action_dim, 2 * self.action_dim),
            self.hyper.log_std_min,
            self.hyper.log_std_max,
        )
        return mean, log_std

    def actor_sample(self, states, slices, noise):
        """Reparameterized tanh-Gaussian actions and their log densities.

        The log density includes the tanh change-of-variables correction
        summed over action dimensions; with ``u = mean + std*noise`` the
        Gaussian term reduces to a constant in ``noise``.
        """
        mean, log_std = self.actor_stats(states, slices)
        std = ad.exp(log_std)
        u = ad.add(mean, ad.mul(std, Tensor(noise)))
        action = ad.tanh(u)
        const = Tensor(-0.5 * noise * noise - 0.5 * LOG_2PI)
        per_dim = ad.sub(ad.sub(const, log_std), ad.squash_logdet(u))
        log_prob = ad.tensor_sum(per_dim, axis=1, keepdims=True)
        return action, log_prob

    def sample_action(self, state, task_id, stochastic=True):
        """Single-state policy query for rollouts; never taped."""
        state = np.asarray(state, dtype=np.float64).reshape(1, -1)
        slices = [(task_id, slice(0, 1))]
        with no_grad():
            if stochastic:
                noise = self._noise_rng.normal(size=(1, self.action_dim))
            else:
                noise = np.zeros((1, self.action_dim))
            action, log_prob = self.actor_sample(state, slices, noise)
        return action.data[0].copy(), float(log_prob.data[0, 0])

    # -- critic ------------------------------------------------------------------

    def critic_loss(self, net, states, actions, slices, targets):
        q = net.forward_grouped(states, actions, slices)
        diff = ad.sub(q, Tensor(targets))
        return ad.mean(ad.square(diff))

    def _pair_eligible(self, slices):
        net = self.critic1
        if net.encoder_task_dependent:
            return False
        if len({sl.stop - sl.start for _, sl in slices}) != 1:
            return False
        if isinstance(net.backbone, PtslBackbone):
            return net.backbone.config.residual_mode in ("none", "addition")
        return True

    def critic_pair_values(self, states, aux, slices, targets=False):
        """Q estimates from both critics (or both target copies).

        When the batch is task-balanced the pair is evaluated as one stacked
        pass; gradients still land in each critic's own parameters.
        """
        net_a = self.target1 if targets else self.critic1
        net_b = self.target2 if targets else self.critic2
        if not self._pair_eligible(slices):
            return (
                net_a.forward_grouped(states, aux, slices),
                net_b.forward_grouped(states, aux, slices),
            )
        rows = states.shape[0]
        task_list = [task for task, _ in slices]
        task_ids = np.empty(rows, dtype=np.int64)
        for task, sl in slices:
            task_ids[sl] = task
        aux_part = aux if isinstance(aux, Tensor) or aux is None else Tensor(aux)

        def block(net):
            features = net.encoder.encode(states, 0)
            onehot = net._onehot_block(task_ids) if net.onehot else None
            return net._assemble(features, onehot, aux_part)

        x2 = ad.concat([block(net_a), block(net_b)], axis=0)
        if isinstance(net_a.backbone, PtslBackbone):
            q2 = stacked_forward([net_a.backbone, net_b.backbone], x2, task_list)
        else:
            q2 = stacked_trunk_forward([net_a.backbone, net_b.backbone], x2)
        return ad.slice_rows(q2, 0, rows), ad.slice_rows(q2, rows, 2 * rows)

    def compute_critic_targets(self, batch):
        """Bellman targets; evaluated entirely outside any tape."""
        with no_grad():
            noise = self._noise_rng.normal(size=(len(batch), self.action_dim))
            next_action, next_log_prob = self.actor_sample(batch.next_states, batch.slices, noise)
            q1, q2 = self.critic_pair_values(
                batch.next_states, next_action.data, batch.slices, targets=True
            )
        q_min = np.minimum(q1.data, q2.data)
        alpha_rows = self.alpha[batch.task_ids][:, None]
        not_done = 1.0 - batch.dones[:, None].astype(np.float64)
        return batch.rewards[:, None] + self.hyper.gamma * not_done * (
            q_min - alpha_rows * next_log_prob.data
        )

    def critic_update(self, batch):
        if len(batch) == 0:
            raise ContractError("critic_update requires a nonempty batch")
        targets = self.compute_critic_targets(batch)
        self.critic1_opt.zero_grad()
        self.critic2_opt.zero_grad()
        y = Tensor(targets)
        with Tape():
            q1, q2 = self.critic_pair_values(batch.states, batch.actions, batch.slices)
            loss1 = ad.mean(ad.square(ad.sub(q1, y)))
            loss2 = ad.mean(ad.square(ad.sub(q2, y)))
            total = ad.add(loss1, loss2)
        backward(total)
        self.critic1_opt.step()
        self.critic2_opt.step()
        return {"critic1_loss": float(loss1.data), "critic2_loss": float(loss2.data)}

    # -- actor and temperatures ----------------------------------------------------

    @contextmanager
    def _frozen(self, *stores):
        tensors = [t for store in stores for _, t in store.named_tensors()]
        for t in tensors:
            t.requires_grad = False
        try:
            yield
        finally:
            for t in tensors:
                t.requires_grad = True

    def actor_and_alpha_update(self, batch):
        if len(batch) == 0:
            raise ContractError("actor update requires a nonempty batch")
        noise = self._noise_rng.normal(size=(len(batch), self.action_dim))
        alpha_rows = self.alpha[batch.task_ids][:, None]
        self.actor_opt.zero_grad()
        with self._frozen(self.critic1_store, self.critic2_store):
            with Tape():
                action, log_prob = self.actor_sample(batch.states, batch.slices, noise)
                q1, q2 = self.critic_pair_values(batch.states, action, batch.slices)
                q_min = ad.minimum(q1, q2)
                loss = ad.mean(ad.sub(ad.mul(log_prob, Tensor(alpha_rows)), q_min))
            backward(loss)
        self.actor_opt.step()

        grads, present, alpha_loss = self.alpha_gradients(log_prob.data, batch.slices)
        self.alpha_opt.step_masked(grads, present)
        return {"actor_loss": float(loss.data), "alpha_loss": alpha_loss}

    def alpha_gradients(self, log_prob_data, slices):
        """Closed-form per-task temperature gradients from detached log densities.

        The loss per task is ``-log_alpha * (mean log pi + target_entropy)``
        over that task's rows alone; tasks absent from the batch report no
        gradient and must not be stepped.
        """
        grads = np.zeros(self.num_tasks)
        present = np.zeros(self.num_tasks, dtype=bool)
        alpha_loss = 0.0
        for task, sl in slices:
            excess = float(np.mean(log_prob_data[sl]) + self.target_entropy)
            grads[task] = -excess
            present[task] = True
            alpha_loss += -self.log_alpha[task] * excess
        return grads, present, alpha_loss

    def soft_target_update(self, tau=None):
        tau = self.hyper.tau if tau is None else tau
        if not 0.0 < tau <= 1.0:
            raise ContractError(f"tau must lie in (0, 1], got {tau}")
        self.target1_store.blend_from(self.critic1_store, tau)
        self.target2_store.blend_from(self.critic2_store, tau)

    # -- accounting and persistence --------------------------------------------------

    def param_counts(self):
        """Trainable scalars by component; EMA target copies listed separately."""
        counts = {
            "actor": self.actor_store.size,
            "critic1": self.critic1_store.size,
            "critic2": self.critic2_store.size,
            "alphas": self.num_tasks,
        }
        counts["total"] = sum(counts.values())
        counts["targets"] = self.target1_store.size + self.target2_store.size
        return counts

    def named_parameters(self):
        named = []
        for store in (self.actor_store, self.critic1_store, self.critic2_store,
                      self.target1_store, self.target2_store):
            named.extend(store.named_tensors())
        return named

    def state_arrays(self):
        arrays = {name: t.data.copy() for name, t in self.named_parameters()}
        arrays["log_alpha"] = self.log_alpha.copy()
        return arrays

    def load_state_arrays(self, arrays):
        for name, t in self.named_parameters():
            t.data[...] = arrays[name]
        self.log_alpha[...] = arrays["log_alpha"]


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainConfig:
    eval_interval: int = 2000
    eval_episodes: int = 10
    checkpoint_interval: int = 0
    checkpoint_dir: str | None = None


@dataclass
class MetricsRow:
    step: int
    task_id: int
    success_rate: float
    actor_loss: float
    critic_loss: float
    alpha: float


CSV_HEADER = "step,task_id,success_rate,actor_loss,critic_loss,alpha"


class MetricsLog:
    def __init__(self, rows=None):
        self.rows = rows or []

    def append(self, row):
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def to_csv_text(self):
        lines = [CSV_HEADER]
        for r in self.rows:
            lines.append(
                f"{r.step},{r.task_id},{repr(float(r.success_rate))},"
                f"{repr(float(r.actor_loss))},{repr(float(r.critic_loss))},"
                f"{repr(float(r.alpha))}"
            )
        return "\n".join(lines) + "\n"

    def write_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.to_csv_text())

    @staticmethod
    def read_csv(path):
        rows = []
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != CSV_HEADER:
                raise ContractError(f"unexpected metrics header {header!r}")
            for line in fh:
                step, task_id, success, actor_loss, critic_loss, alpha = line.strip().split(",")
                rows.append(MetricsRow(int(step), int(task_id), float(success),
                                       float(actor_loss), float(critic_loss), float(alpha)))
        return MetricsLog(rows)

    def mean_success_at(self, step):
        for r in self.rows:
            if r.step == step and r.task_id == -1:
                return r.success_rate
        raise KeyError(f"no aggregate row at step {step}")


def evaluate(agent, suite, episodes, seed_base):
    """Deterministic-policy success rate per task.

    Episode reset seeds depend only on the evaluation round and episode
    index, never on the task, so paired tasks are evaluated from matched
    initial conditions.
    """
    rates = []
    for task, env in enumerate(suite.envs):
        wins = 0
        for ep in range(episodes):
            obs = env.reset(seed=seed_base + ep)
            for _ in range(env.spec.horizon):
                action, _ = agent.sample_action(obs, task, stochastic=False)
                obs, _, done, success = env.step(action)
                if success or done:
                    break
            wins += int(env.success)
        rates.append(wins / episodes)
    return rates


def train(agent, suite, steps_per_task, config=None):
    """Round-robin multi-task training: one episode per task per cycle.

    Random warmup actions fill the buffer first; afterwards every
    environment step triggers one gradient update of critics, actor, and
    temperatures plus an EMA target blend.  Horizon ends are time limits
    rather than terminal states, so stored transitions bootstrap through
    them.  Aborts with a diagnostic snapshot if any loss goes non-finite.
    """
    config = config or TrainConfig()
    log = MetricsLog()
    if steps_per_task <= 0:
        return log
    h = agent.hyper
    T = suite.num_tasks
    horizon = suite.horizon
    steps_done = [0] * T
    warmup_target = min(h.warmup_steps_per_task, steps_per_task)

    loss_sums = {"actor_loss": 0.0, "critic_loss": 0.0}
    loss_count = 0

    def run_episode(task, policy):
        nonlocal loss_count
        env = suite.envs[task]
        obs = env.reset(seed=int(agent._reset_rng.integers(2**31)))
        for _ in range(horizon):
            if policy == "random":
                action = agent._noise_rng.uniform(-1.0, 1.0, size=suite.action_dim)
            else:
                action, _ = agent.sample_action(obs, task, stochastic=True)
            next_obs, reward, done, _ = env.step(action)
            agent.buffer.add(obs, action, reward, next_obs, False, task)
            obs = next_obs
            steps_done[task] += 1
            if policy == "update":
                batch = agent.buffer.sample_stratified(h.batch_size, agent._sample_rng)
                critic_losses = agent.critic_update(batch)
                actor_losses = agent.actor_and_alpha_update(batch)
                agent.soft_target_update()
                c_loss = critic_losses["critic1_loss"] + critic_losses["critic2_loss"]
                a_loss = actor_losses["actor_loss"]
                if not (math.isfinite(c_loss) and math.isfinite(a_loss)):
                    raise TrainingDiverged(
                        f"non-finite loss at task {task} step {steps_done[task]}",
                        snapshot={
                            "task": task,
                            "steps_done": list(steps_done),
                            "critic_loss": c_loss,
                            "actor_loss": a_loss,
                            "alpha": agent.alpha.tolist(),
                        },
                    )
                loss_sums["critic_loss"] += 0.5 * c_loss
                loss_sums["actor_loss"] += a_loss
                loss_count += 1
            if steps_done[task] >= steps_per_task or done:
                break

    while min(steps_done) < warmup_target:
        for task in range(T):
            if steps_done[task] < warmup_target:
                run_episode(task, "random")

    eval_round = 0
    next_eval = ((warmup_target // config.eval_interval) + 1) * config.eval_interval
    next_eval = min(next_eval, steps_per_task)
    next_checkpoint = config.checkpoint_interval or None

    while min(steps_done) < steps_per_task:
        for task in range(T):
            if steps_done[task] < steps_per_task:
                run_episode(task, "update")
        current = min(steps_done)
        if current >= next_eval:
            rates = evaluate(
                agent, suite, config.eval_episodes,
                seed_base=EVAL_SEED_OFFSET + eval_round * 1000,
            )
            mean_actor = loss_sums["actor_loss"] / max(loss_count, 1)
            mean_critic = loss_sums["critic_loss"] / max(loss_count, 1)
            for task, rate in enumerate(rates):
                log.append(MetricsRow(current, task, rate, mean_actor, mean_critic,
                                      float(agent.alpha[task])))
            log.append(MetricsRow(current, -1, float(np.mean(rates)), mean_actor,
                                  mean_critic, float(np.mean(agent.alpha))))
            loss_sums = {"actor_loss": 0.0, "critic_loss": 0.0}
            loss_count = 0
            eval_round += 1
            next_eval = min(next_eval + config.eval_interval, steps_per_task)
        if next_checkpoint is not None and current >= next_checkpoint and config.checkpoint_dir:
            _write_agent_checkpoint(agent, config.checkpoint_dir, current)
            next_checkpoint += config.checkpoint_interval
    if config.checkpoint_dir:
        _write_agent_checkpoint(agent, config.checkpoint_dir, min(steps_done))
    return log


def _write_agent_checkpoint(agent, directory, step):
    import os

    from .checkpoint import save_checkpoint

    os.makedirs(directory, exist_ok=True)
    manifest = {"step": step, "num_tasks": agent.num_tasks}
    if agent.actor.config is not None:
        from .checkpoint import config_to_dict

        manifest["network_config"] = config_to_dict(agent.actor.config)
    save_checkpoint(
        os.path.join(directory, f"agent_step{step}.ckpt"), agent.state_arrays(), manifest
    )


# ---------------------------------------------------------------------------
# parameter accounting helpers used by the harness


def trunk_agent_param_count(state_dim, action_dim, num_tasks, hidden_dim, num_hidden,
                            task_onehot=True, include_targets=False):
    """Parameter total for a plain-trunk SAC agent.

    Trainable scalars are the actor, both critics, and the per-task
    temperatures; target copies are added only on request since they are
    EMA clones rather than trained parameters.
    """
    onehot = num_tasks if task_onehot else 0
    actor = mlp_param_count(state_dim + onehot, hidden_dim, 2 * action_dim, num_hidden)
    critic = mlp_param_count(state_dim + onehot + action_dim, hidden_dim, 1, num_hidden)
    total = actor + 2 * critic + num_tasks
    if include_targets:
        total += 2 * critic
    return total


def tasknet_param_count(state_dim, aux_dim, out_dim, num_tasks, hyper):
    """Closed-form parameter count mirroring TaskNet construction exactly."""
    from .encoders import encoder_param_count, encoder_output_dim

    enc = encoder_param_count(hyper.encoder, state_dim, num_tasks)
    feat_dim = encoder_output_dim(hyper.encoder, state_dim)
    feat_dim += (num_tasks if hyper.task_onehot else 0) + aux_dim
    if hyper.backbone == "trunk":
        net = mlp_param_count(feat_dim, hyper.hidden_dim, out_dim, hyper.num_hidden)
    else:
        cfg = NetworkConfig(
            input_dim=feat_dim, output_dim=out_dim, hidden_dim=hyper.hidden_dim,
            task_dim=hyper.task_dim, num_tasks=num_tasks, num_hidden=hyper.num_hidden,
            projection_mode=hyper.projection_mode, residual_mode=hyper.residual_mode,
            first_layer_down_projection=hyper.first_layer_down_projection,
            last_layer_up_projection=hyper.last_layer_up_projection,
        )
        net = count_parameters(cfg).total
    return enc + net


def agent_param_count(state_dim, action_dim, num_tasks, hyper, include_targets=False):
    """Trainable scalars of a SacAgent built from these hyperparameters.

    Counts the actor, both online critics, and the per-task temperatures.
    EMA target copies are excluded unless requested, since they are clones
    rather than independently trained parameters.
    """
    actor = tasknet_param_count(state_dim, 0, 2 * action_dim, num_tasks, hyper)
    critic = tasknet_param_count(state_dim, action_dim, 1, num_tasks, hyper)
    total = actor + 2 * critic + num_tasks
    if include_targets:
        total += 2 * critic
    return total
