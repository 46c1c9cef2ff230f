"""Experiment configuration, presets, seeded execution, and reporting.

Configs are flat ``key = value`` text files with a schema version; unknown
keys are rejected so ablation runs cannot be silently misconfigured.  Each
run writes per-seed metric CSVs under ``out_dir/<config_hash>/<arm>/``,
skips seeds whose outputs already exist (resume), aggregates mean and
standard error across seeds, and records everything in a run manifest.
Architectures inside one preset are budget-matched against the preset's
parameter target before any training starts.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import multiprocessing
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .encoders import EncoderConfig
from .envs import ENV_REGISTRY, SUITES, make_suite
from .errors import ConfigError, ContractError, InfeasibleError, TrainingDiverged
from .sac import (
    MetricsLog,
    SacAgent,
    SacHyperparams,
    TrainConfig,
    agent_param_count,
    train,
)

PRESETS = (
    "mtsac-baseline",
    "ptsl-only",
    "care-ptsl",
    "care-ptsl-shallow",
    "ablation-projection",
    "ablation-residual",
)

BUDGET_TOLERANCE = 0.005
SCHEMA_VERSION = 1

# name -> (type, default, part of the semantic hash)
CONFIG_SCHEMA = {
    "schema_version": (int, None, True),
    "preset": (str, None, True),
    "suite": (str, "mt4-toy", True),
    "seeds": ("int_list", [0, 1, 2, 3], True),
    "steps_per_task": (int, 50_000, True),
    "eval_interval": (int, 2_000, True),
    "eval_episodes": (int, 10, True),
    "checkpoint_interval": (int, 0, True),
    "batch_size": (int, 256, True),
    "warmup_steps_per_task": (int, 1_000, True),
    "buffer_capacity_per_task": (int, 100_000, True),
    "gamma": (float, 0.99, True),
    "tau": (float, 0.005, True),
    "learning_rate": (float, 3e-4, True),
    "init_alpha": (float, 0.2, True),
    "base_hidden_dim": (int, 48, True),
    "num_hidden": (int, 2, True),
    "hidden_dim": (int, 0, True),
    "task_dim": (int, 0, True),
    "projection_mode": (str, "shared", True),
    "residual_mode": (str, "none", True),
    "first_layer_down_projection": (bool, True, True),
    "last_layer_up_projection": (bool, False, True),
    "task_onehot": (bool, True, True),
    "num_experts": (int, 4, True),
    "expert_hidden": (int, 50, True),
    "context_dim": (int, 16, True),
    "encoder_output_dim": (int, 32, True),
    "budget_target": (int, 0, True),
    "out_dir": (str, "runs", False),
    "workers": (int, 0, False),
}


@dataclass
class ExperimentConfig:
    values: dict

    def __getattr__(self, name):
        try:
            return self.values[name]
        except KeyError:
            raise AttributeError(name) from None

    def with_overrides(self, **overrides):
        merged = dict(self.values)
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in CONFIG_SCHEMA:
                raise ConfigError(f"unknown config key {key!r}")
            merged[key] = value
        return validate_config(merged)


def _parse_value(key, raw):
    kind = CONFIG_SCHEMA[key][0]
    raw = raw.strip()
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
        if kind is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "int_list":
            return [int(part) for part in raw.split(",") if part.strip() != ""]
        return raw
    except ValueError:
        raise ConfigError(f"config key {key!r} has malformed value {raw!r}") from None


def parse_config_text(text):
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in CONFIG_SCHEMA:
            raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate config key {key!r}")
        values[key] = _parse_value(key, raw)
    return validate_config(values)


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def default_config(preset, **overrides):
    values = {"schema_version": SCHEMA_VERSION, "preset": preset}
    values.update(overrides)
    return validate_config(values)


def validate_config(values):
    unknown = set(values) - set(CONFIG_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key in ("schema_version", "preset"):
        if key not in values:
            raise ConfigError(f"config is missing required key {key!r}")
    merged = {key: spec[1] for key, spec in CONFIG_SCHEMA.items()}
    merged.update(values)
    if merged["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {merged['schema_version']}")
    if merged["preset"] not in PRESETS:
        raise ConfigError(f"unknown preset {merged['preset']!r}; known: {PRESETS}")
    suite = merged["suite"]
    if suite not in SUITES:
        # ad-hoc suites are comma-separated registry ids
        parts = [part.strip() for part in suite.split(",") if part.strip()]
        if not parts or any(part not in ENV_REGISTRY for part in parts):
            raise ConfigError(
                f"unknown suite {suite!r}; use one of {sorted(SUITES)} or a "
                f"comma-separated list of env ids"
            )
    if not merged["seeds"]:
        raise ConfigError("seeds must be nonempty")
    if merged["steps_per_task"] <= 0:
        raise ConfigError("steps_per_task must be positive")
    if merged["eval_interval"] <= 0 or merged["eval_episodes"] <= 0:
        raise ConfigError("eval_interval and eval_episodes must be positive")
    return ExperimentConfig(merged)


def canonical_text(config, hashed_only=False):
    lines = []
    for key in sorted(CONFIG_SCHEMA):
        if hashed_only and not CONFIG_SCHEMA[key][2]:
            continue
        value = config.values[key]
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, list):
            text = ",".join(str(v) for v in value)
        elif isinstance(value, float):
            text = repr(value)
        else:
            text = str(value)
        lines.append(f"{key} = {text}")
    return "\n".join(lines) + "\n"


def config_hash(config):
    """Stable digest of the semantic fields (storage location excluded)."""
    digest = hashlib.sha256(canonical_text(config, hashed_only=True).encode("utf-8"))
    return digest.hexdigest()[:12]


# ---------------------------------------------------------------------------
# presets and budget matching


@dataclass
class Arm:
    name: str
    hyper: SacHyperparams
    param_count: int
    budget_target: int | None
    matched: bool


def _encoder_from_config(cfg, kind):
    return EncoderConfig(
        kind=kind,
        num_experts=cfg.num_experts,
        expert_hidden=cfg.expert_hidden,
        context_dim=cfg.context_dim,
        output_dim=cfg.encoder_output_dim,
    ).validated()


def _hyper(cfg, **arch):
    base = dict(
        gamma=cfg.gamma,
        tau=cfg.tau,
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        warmup_steps_per_task=cfg.warmup_steps_per_task,
        buffer_capacity_per_task=cfg.buffer_capacity_per_task,
        init_alpha=cfg.init_alpha,
        num_hidden=cfg.num_hidden,
        projection_mode=cfg.projection_mode,
        residual_mode=cfg.residual_mode,
        first_layer_down_projection=cfg.first_layer_down_projection,
        last_layer_up_projection=cfg.last_layer_up_projection,
    )
    base.update(arch)
    return SacHyperparams(**base)


def _suite_dims(cfg):
    suite = make_suite(cfg.suite)
    return suite.state_dim, suite.action_dim, suite.num_tasks


def match_hidden_dims(cfg, template, target, hidden_range=None, task_dim_range=None):
    """Search hidden/task widths so the whole agent meets the budget.

    Dimensions already pinned in the config (nonzero) are not varied.
    Returns the completed hyperparameters and the resulting agent count.
    """
    state_dim, action_dim, num_tasks = _suite_dims(cfg)
    hidden_values = [cfg.hidden_dim] if cfg.hidden_dim > 0 else list(hidden_range or range(8, 97))
    best = None
    closest = None
    for h in hidden_values:
        if cfg.task_dim > 0:
            task_values = [cfg.task_dim]
        else:
            task_values = [d for d in (task_dim_range or range(2, 25)) if d <= h]
        for d in task_values:
            if d > h:
                continue
            hyper = replace(template, hidden_dim=h, task_dim=d)
            count = agent_param_count(state_dim, action_dim, num_tasks, hyper)
            if closest is None or abs(count - target) < closest[0]:
                closest = (abs(count - target), hyper, count)
            if count <= target:
                key = (count, h, d)
                if best is None or key > best[0]:
                    best = (key, hyper, count)
    if best is None:
        raise InfeasibleError(
            f"no architecture fits budget {target}; closest has {closest[2]} parameters"
        )
    return best[1], best[2]


def _baseline_target(cfg, encoder_kind="identity"):
    state_dim, action_dim, num_tasks = _suite_dims(cfg)
    trunk = _hyper(
        cfg,
        backbone="trunk",
        task_onehot=True,
        hidden_dim=cfg.base_hidden_dim,
        encoder=_encoder_from_config(cfg, encoder_kind),
    )
    return agent_param_count(state_dim, action_dim, num_tasks, trunk)


def build_arms(cfg):
    """Instantiate the preset's architecture arms, budget-matched."""
    state_dim, action_dim, num_tasks = _suite_dims(cfg)

    def count(hyper):
        return agent_param_count(state_dim, action_dim, num_tasks, hyper)

    preset = cfg.preset
    target = cfg.budget_target if cfg.budget_target > 0 else None
    arms = []

    if preset == "mtsac-baseline":
        hyper = _hyper(cfg, backbone="trunk", task_onehot=cfg.task_onehot,
                       hidden_dim=cfg.base_hidden_dim)
        name = "mtsac-onehot" if cfg.task_onehot else "mtsac-blind"
        arms.append(Arm(name, hyper, count(hyper), target, matched=target is not None))

    elif preset == "ptsl-only":
        target = target or _baseline_target(cfg)
        template = _hyper(cfg, backbone="ptsl", task_onehot=False)
        hyper, total = match_hidden_dims(cfg, template, target)
        arms.append(Arm("ptsl", hyper, total, target, matched=True))

    elif preset == "care-ptsl":
        target = target or _baseline_target(cfg, encoder_kind="care_mixture")
        template = _hyper(cfg, backbone="ptsl", task_onehot=False,
                          encoder=_encoder_from_config(cfg, "care_mixture"))
        hyper, total = match_hidden_dims(cfg, template, target)
        arms.append(Arm("care-ptsl", hyper, total, target, matched=True))

    elif preset == "care-ptsl-shallow":
        # deliberately lighter than the budget: one hidden layer fewer
        if cfg.num_hidden < 2:
            raise ConfigError("care-ptsl-shallow needs num_hidden >= 2")
        hyper = _hyper(
            cfg,
            backbone="ptsl",
            task_onehot=False,
            encoder=_encoder_from_config(cfg, "care_mixture"),
            num_hidden=cfg.num_hidden - 1,
            hidden_dim=cfg.hidden_dim or cfg.base_hidden_dim,
            task_dim=cfg.task_dim or 8,
        )
        arms.append(Arm("care-ptsl-shallow", hyper, count(hyper), None, matched=False))

    elif preset == "ablation-projection":
        # both variants share one (hidden, task) width; their counts differ by
        # exactly the per-layer projections, so no re-matching is applied
        target = target or _baseline_target(cfg)
        template = _hyper(cfg, backbone="ptsl", task_onehot=False, projection_mode="shared")
        shared_hyper, shared_total = match_hidden_dims(cfg, template, target)
        indep_hyper = replace(shared_hyper, projection_mode="independent")
        arms.append(Arm("projection-shared", shared_hyper, shared_total, target, matched=True))
        arms.append(Arm("projection-independent", indep_hyper, count(indep_hyper), None,
                        matched=False))

    elif preset == "ablation-residual":
        # every residual variant is matched to one budget, so the learnable
        # modes trade a little width for their extra combiner parameters
        target = target or _baseline_target(cfg)
        for mode in ("none", "addition", "learnable_sum", "learnable_projection"):
            template = _hyper(cfg, backbone="ptsl", task_onehot=False, residual_mode=mode)
            hyper, total = match_hidden_dims(cfg, template, target)
            arms.append(Arm(f"residual-{mode}", hyper, total, target, matched=True))

    else:
        raise ConfigError(f"unknown preset {preset!r}")
    return arms


def assert_budgets(arms):
    """Every matched arm must be within tolerance of its target."""
    for arm in arms:
        if not arm.matched or arm.budget_target is None:
            continue
        gap = abs(arm.param_count - arm.budget_target) / arm.budget_target
        if gap > BUDGET_TOLERANCE:
            raise InfeasibleError(
                f"arm {arm.name!r} misses its parameter target: "
                f"{arm.param_count} vs {arm.budget_target} ({100 * gap:.2f}%)"
            )


# ---------------------------------------------------------------------------
# execution


@dataclass
class RunRecord:
    config_hash: str
    preset: str
    directory: str
    arms: list
    metadata: dict
    complete: bool

    def to_json(self):
        return json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True)

    @staticmethod
    def from_json(text):
        data = json.loads(text)
        return RunRecord(**data)

    @staticmethod
    def load(directory):
        with open(os.path.join(directory, "run.json"), "r", encoding="utf-8") as fh:
            return RunRecord.from_json(fh.read())


def _seed_paths(run_dir, arm_name, seed):
    arm_dir = os.path.join(run_dir, arm_name)
    return (
        os.path.join(arm_dir, f"seed{seed}.csv"),
        os.path.join(arm_dir, f"seed{seed}.done"),
    )


def _run_seed_job(payload):
    """Train one (arm, seed) to completion; executed in a worker process."""
    cfg_values, arm_name, hyper_dict, encoder_dict, seed, run_dir = payload
    cfg = ExperimentConfig(cfg_values)
    hyper = SacHyperparams(**{**hyper_dict, "encoder": EncoderConfig(**encoder_dict)})
    suite = make_suite(cfg.suite)
    agent = SacAgent(suite.state_dim, suite.action_dim, suite.num_tasks, hyper=hyper, seed=seed)
    csv_path, done_path = _seed_paths(run_dir, arm_name, seed)
    checkpoint_dir = None
    if cfg.checkpoint_interval > 0:
        checkpoint_dir = os.path.join(run_dir, arm_name, f"checkpoints-seed{seed}")
    train_cfg = TrainConfig(
        eval_interval=cfg.eval_interval,
        eval_episodes=cfg.eval_episodes,
        checkpoint_interval=cfg.checkpoint_interval,
        checkpoint_dir=checkpoint_dir,
    )
    try:
        log = train(agent, suite, cfg.steps_per_task, train_cfg)
    except TrainingDiverged as exc:
        with open(csv_path + ".failed", "w", encoding="utf-8") as fh:
            json.dump({"error": str(exc), "snapshot": exc.snapshot}, fh, indent=2)
        return arm_name, seed, "diverged"
    log.write_csv(csv_path)
    with open(done_path, "w", encoding="utf-8") as fh:
        fh.write("complete\n")
    return arm_name, seed, "complete"


def run(config):
    """Execute every (arm, seed) of the preset, resuming completed seeds."""
    arms = build_arms(config)
    assert_budgets(arms)
    digest = config_hash(config)
    run_dir = os.path.join(config.out_dir, digest)
    os.makedirs(run_dir, exist_ok=True)
    for arm in arms:
        os.makedirs(os.path.join(run_dir, arm.name), exist_ok=True)
    with open(os.path.join(run_dir, "config.resolved"), "w", encoding="utf-8") as fh:
        fh.write(canonical_text(config))

    jobs = []
    for arm in arms:
        for seed in config.seeds:
            csv_path, done_path = _seed_paths(run_dir, arm.name, seed)
            if os.path.exists(done_path) and os.path.exists(csv_path):
                continue
            hyper_dict = dataclasses.asdict(arm.hyper)
            encoder_dict = hyper_dict.pop("encoder")
            jobs.append((dict(config.values), arm.name, hyper_dict, encoder_dict, seed, run_dir))

    statuses = {}
    if jobs:
        workers = config.workers or min(len(jobs), os.cpu_count() or 1)
        if workers > 1 and len(jobs) > 1:
            ctx = multiprocessing.get_context("fork")
            with ctx.Pool(workers) as pool:
                for arm_name, seed, status in pool.imap_unordered(_run_seed_job, jobs):
                    statuses[(arm_name, seed)] = status
        else:
            for payload in jobs:
                arm_name, seed, status = _run_seed_job(payload)
                statuses[(arm_name, seed)] = status

    complete = True
    arm_records = []
    for arm in arms:
        seed_records = []
        arm_complete = True
        for seed in config.seeds:
            csv_path, done_path = _seed_paths(run_dir, arm.name, seed)
            if os.path.exists(done_path):
                status = "complete"
            else:
                status = statuses.get((arm.name, seed), "missing")
                arm_complete = False
            seed_records.append({
                "seed": seed,
                "csv": os.path.relpath(csv_path, run_dir),
                "status": status,
            })
        aggregate_rel = None
        if arm_complete:
            aggregate_rel = os.path.join(arm.name, "aggregate.csv")
            write_aggregate(
                [os.path.join(run_dir, rec["csv"]) for rec in seed_records],
                os.path.join(run_dir, aggregate_rel),
            )
        complete = complete and arm_complete
        arm_records.append({
            "name": arm.name,
            "param_count": arm.param_count,
            "budget_target": arm.budget_target,
            "matched": arm.matched,
            "seeds": seed_records,
            "aggregate_csv": aggregate_rel,
        })

    record = RunRecord(
        config_hash=digest,
        preset=config.preset,
        directory=run_dir,
        arms=arm_records,
        metadata={
            "suite": config.suite,
            "steps_per_task": config.steps_per_task,
            "eval_interval": config.eval_interval,
            "eval_episodes": config.eval_episodes,
            "seeds": list(config.seeds),
        },
        complete=complete,
    )
    with open(os.path.join(run_dir, "run.json"), "w", encoding="utf-8") as fh:
        fh.write(record.to_json())
    if complete:
        summary = report(record)
        with open(os.path.join(run_dir, "summary.txt"), "w", encoding="utf-8") as fh:
            fh.write(summary.to_text())
        with open(os.path.join(run_dir, "report.csv"), "w", encoding="utf-8") as fh:
            fh.write(summary.to_csv_text())
    return record


# ---------------------------------------------------------------------------
# aggregation and reporting

AGGREGATE_HEADER = "step,task_id,mean_success,stderr_success,n_seeds"


def write_aggregate(seed_csv_paths, out_path):
    logs = [MetricsLog.read_csv(path) for path in seed_csv_paths]
    keys = sorted({(r.step, r.task_id) for r in logs[0].rows})
    lines = [AGGREGATE_HEADER]
    for step, task_id in keys:
        values = []
        for log in logs:
            matches = [r.success_rate for r in log.rows if r.step == step and r.task_id == task_id]
            if len(matches) != 1:
                raise ContractError(
                    f"expected exactly one row for step {step} task {task_id}, got {len(matches)}"
                )
            values.append(matches[0])
        n = len(values)
        mean = sum(values) / n
        if n > 1:
            var = sum((v - mean) ** 2 for v in values) / (n - 1)
            stderr = math.sqrt(var / n)
        else:
            stderr = 0.0
        lines.append(f"{step},{task_id},{repr(mean)},{repr(stderr)},{n}")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_aggregate(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != AGGREGATE_HEADER:
            raise ContractError(f"unexpected aggregate header {header!r}")
        for line in fh:
            step, task_id, mean, stderr, n = line.strip().split(",")
            rows.append({
                "step": int(step),
                "task_id": int(task_id),
                "mean_success": float(mean),
                "stderr_success": float(stderr),
                "n_seeds": int(n),
            })
    return rows


@dataclass
class ArmSummary:
    name: str
    param_count: int
    final_step: int
    final_success: float
    final_stderr: float
    best_success: float
    step_to_half: int | None


@dataclass
class Report:
    arms: list
    threshold: float

    def to_text(self):
        lines = [
            f"{'arm':<24} {'params':>10} {'final':>8} {'stderr':>8} {'best':>8} "
            f"{'step@{:.2f}'.format(self.threshold):>10}"
        ]
        for a in self.arms:
            reach = str(a.step_to_half) if a.step_to_half is not None else "-"
            lines.append(
                f"{a.name:<24} {a.param_count:>10} {a.final_success:>8.3f} "
                f"{a.final_stderr:>8.3f} {a.best_success:>8.3f} {reach:>10}"
            )
        return "\n".join(lines) + "\n"

    def to_csv_text(self):
        lines = ["arm,param_count,final_step,final_success,final_stderr,best_success,step_to_threshold"]
        for a in self.arms:
            reach = a.step_to_half if a.step_to_half is not None else ""
            lines.append(
                f"{a.name},{a.param_count},{a.final_step},{repr(a.final_success)},"
                f"{repr(a.final_stderr)},{repr(a.best_success)},{reach}"
            )
        return "\n".join(lines) + "\n"


def report(record, threshold=0.5):
    """Summarize final, best, and step-to-threshold success for each arm."""
    summaries = []
    for arm in record.arms:
        if arm["aggregate_csv"] is None:
            continue
        rows = read_aggregate(os.path.join(record.directory, arm["aggregate_csv"]))
        mean_rows = [r for r in rows if r["task_id"] == -1]
        if not mean_rows:
            continue
        mean_rows.sort(key=lambda r: r["step"])
        final = mean_rows[-1]
        best = max(r["mean_success"] for r in mean_rows)
        step_to_half = None
        for r in mean_rows:
            if r["mean_success"] >= threshold:
                step_to_half = r["step"]
                break
        summaries.append(ArmSummary(
            name=arm["name"],
            param_count=arm["param_count"],
            final_step=final["step"],
            final_success=final["mean_success"],
            final_stderr=final["stderr_success"],
            best_success=best,
            step_to_half=step_to_half,
        ))
    if not summaries:
        raise ContractError("nothing to report: the record holds no completed arms")
    return Report(arms=summaries, threshold=threshold)
