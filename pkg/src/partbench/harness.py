"""Episode loop, rollout persistence, and the benchmark runner.

An episode renders, queries a policy, steps the simulator, recovers motion
masks from analytic flow (optionally corrupted), folds them into the part
memory, computes reward targets, and scores the memory against ground
truth, for a fixed number of steps. Everything is a pure function of
(instance init, config, seed): records persist and reload losslessly and a
benchmark run is byte-reproducible at any parallelism.
"""
from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import formats
from .assets import (
    InstanceInit,
    init_from_dict,
    init_to_dict,
    load_benchmark,
)
from .errors import CorruptRecord, InvalidEpisode, ProtocolError, UnsupportedSchema
from .memory import (
    A_MIN,
    PartMemory,
    UpdateCase,
    apply_update,
    channels_overlap,
    flatten,
    prediction_masks,
)
from .metrics import (
    BenchmarkReport,
    aggregate,
    ape,
    classify_step,
    gt_part_masks,
    hausdorff95,
    part_iou,
)
from .perception import CorruptionModel, MotionMaskPair, corrupt_masks, encode_hold, encode_push, motion_masks_from_flow
from .policies import OracleContext, PolicyInput, no_hold_random_policy, oracle_policy, random_policy
from .reward import RewardTarget, RewardVariant, StepContext, compute_reward
from .seeding import NS_CORRUPT, NS_POLICY, seed_for
from .sim import (
    Action,
    FlowField,
    TouchReading,
    compute_flow,
    flow_norm,
    render,
    step,
    worldstate_from_init,
)

SCHEMA_VERSION = 1
MANIFEST_NAME = "manifest.json"

POLICY_NAMES = ("random", "nohold", "oracle", "oracle-mot", "remote")
DEFAULT_CORRUPTION = (0.4, 0.25, 0.25)


@dataclass(frozen=True)
class RunConfig:
    steps: int = 5
    policy: str = "random"
    variant: RewardVariant = RewardVariant.FULL_TOUCH
    mask_source: str = "corrupted"        # "oracle" | "corrupted"
    corruption: tuple[float, float, float] = DEFAULT_CORRUPTION
    memory_mode: str = "test"             # "train" | "test"
    benchmark_path: str | None = None
    seeds: tuple[int, ...] = (0,)
    record_dir: str | None = None
    parallelism: int = 1

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("episode length must be at least 1")
        if self.policy not in POLICY_NAMES:
            raise ValueError(f"unknown policy {self.policy!r}")
        if self.mask_source not in ("oracle", "corrupted"):
            raise ValueError(f"unknown mask source {self.mask_source!r}")
        if self.memory_mode not in ("train", "test"):
            raise ValueError(f"unknown memory mode {self.memory_mode!r}")
        if self.parallelism < 1:
            raise ValueError("parallelism must be at least 1")

    def episode_snapshot(self) -> dict:
        # policy identity intentionally omitted: the trajectory already
        # pins down the actions, and server-driven episodes cannot know
        # what produced them
        return {
            "steps": self.steps,
            "variant": self.variant.value,
            "mask_source": self.mask_source,
            "corruption": list(self.corruption) if self.mask_source == "corrupted" else None,
            "memory_mode": self.memory_mode,
        }


@dataclass(frozen=True)
class StepMetrics:
    ape: float
    iou: float
    dh95: float
    effective: bool
    optimal: bool


@dataclass(frozen=True)
class StepRecord:
    action: Action
    touch: TouchReading
    case: UpdateCase
    moved_pixels: int
    clamped: bool
    reward: RewardTarget
    flow: FlowField
    masks: MotionMaskPair
    memory_labels: np.ndarray
    memory_recency: tuple[int, ...]
    memory_overlap: bool
    metrics: StepMetrics


@dataclass
class EpisodeRecord:
    category: str
    entry_index: int
    seed: int
    config: dict
    init: InstanceInit
    observations: list[np.ndarray] = field(default_factory=list)  # steps + 1 frames
    labels: list[np.ndarray] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)

    def final_metrics(self) -> StepMetrics:
        return self.steps[-1].metrics


def _policy_fn(config: RunConfig):
    if config.policy == "random":
        return lambda inp, ctx: random_policy(inp)
    if config.policy == "nohold":
        return lambda inp, ctx: no_hold_random_policy(inp)
    if config.policy in ("oracle", "oracle-mot"):
        return lambda inp, ctx: oracle_policy(ctx)
    raise ValueError(f"policy {config.policy!r} needs an explicit policy_fn")


def run_episode(
    init: InstanceInit,
    config: RunConfig,
    seed: int,
    entry_index: int = 0,
    policy_fn=None,
    step_listener=None,
) -> EpisodeRecord:
    """Roll out one episode; deterministic in (init, config, seed).

    policy_fn overrides the configured policy; it receives
    (PolicyInput, OracleContext) and returns an Action. step_listener, when
    given, is called with (step_index, StepRecord, done) after each step;
    the server uses it to stream touch results. Remote policy failures
    abort the episode as InvalidEpisode.
    """
    if policy_fn is None:
        policy_fn = _policy_fn(config)
    state = worldstate_from_init(init)
    memory = PartMemory.empty()
    obs, labels = render(state, init.background_id)
    n_links = state.spec.n_links
    record = EpisodeRecord(
        category=init.category or f"multilink{n_links}",
        entry_index=entry_index,
        seed=seed,
        config=config.episode_snapshot(),
        init=init,
        observations=[obs],
        labels=[labels],
    )
    discovered: list[int] = []

    for t in range(config.steps):
        policy_input = PolicyInput(
            observation=obs,
            memory=memory,
            step_index=t,
            rng_seed=seed_for(seed, NS_POLICY, t),
        )
        oracle_ctx = OracleContext(world=state, labels=labels, discovered=tuple(discovered))
        try:
            action = policy_fn(policy_input, oracle_ctx)
        except ProtocolError as exc:
            raise InvalidEpisode(f"remote policy failed at step {t}: {exc}") from exc

        new_state, touch, outcome = step(state, action)
        new_obs, new_labels = render(new_state, init.background_id)
        flow = compute_flow(state, new_state, labels, new_labels)
        masks = motion_masks_from_flow(flow)
        if config.mask_source == "corrupted":
            model = CorruptionModel(*config.corruption, seed=seed_for(seed, NS_CORRUPT, t))
            masks = corrupt_masks(masks, model)

        discovered_before = len(memory.non_empty())
        memory, case = apply_update(memory, masks.m_t, masks.m_t1, config.memory_mode)

        norm_map = flow_norm(flow.forward)
        ctx = StepContext(
            flow_present=int(masks.m_t.sum()) >= A_MIN,
            touch=touch,
            case=case,
            flow_norm_map=norm_map,
            hold_pixel=action.hold,
        )
        target = compute_reward(ctx, config.variant)
        target = _quantize_target(target)

        for i, delta in enumerate(outcome.per_link_transform):
            if not delta.is_identity() and i not in discovered:
                discovered.append(i)

        cls = classify_step(labels, action, outcome, case, discovered_before, n_links)
        gt = gt_part_masks(new_labels, n_links)
        pred = prediction_masks(memory)
        step_metrics = StepMetrics(
            ape=ape(gt, pred),
            iou=part_iou(gt, pred),
            dh95=hausdorff95(gt, pred),
            effective=cls.effective,
            optimal=cls.optimal,
        )
        record.steps.append(
            StepRecord(
                action=action,
                touch=touch,
                case=case,
                moved_pixels=outcome.moved_pixel_count,
                clamped=outcome.clamped,
                reward=target,
                flow=flow,
                masks=masks,
                memory_labels=flatten(memory),
                memory_recency=memory.recency,
                memory_overlap=channels_overlap(memory),
                metrics=step_metrics,
            )
        )
        record.observations.append(new_obs)
        record.labels.append(new_labels)
        if step_listener is not None:
            step_listener(t, record.steps[-1], t == config.steps - 1)
        state, obs, labels = new_state, new_obs, new_labels
    return record


def _quantize_target(target: RewardTarget) -> RewardTarget:
    if target.dense_push is None:
        return target
    return RewardTarget(
        hold_value=target.hold_value,
        push_value=target.push_value,
        dense_push=formats.quantize16(target.dense_push),
        dense_zero_mask=target.dense_zero_mask,
        hold_pixel_zero_on_push=target.hold_pixel_zero_on_push,
    )


# ---------------------------------------------------------------------------
# persistence

def persist_episode(record: EpisodeRecord, directory) -> Path:
    """Write an episode to one directory; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "schema_version": SCHEMA_VERSION,
        "category": record.category,
        "entry_index": record.entry_index,
        "seed": record.seed,
        "config": record.config,
        "init": init_to_dict(record.init),
        "steps": [],
    }
    for t, (obs, labels) in enumerate(zip(record.observations, record.labels)):
        (directory / f"obs_{t}.png").write_bytes(formats.rgb_to_png_bytes(obs))
        (directory / f"labels_{t}.png").write_bytes(formats.labels_to_png_bytes(labels))
    empty = np.zeros_like(record.labels[0])
    (directory / "memory_0.png").write_bytes(formats.labels_to_png_bytes(empty))
    for t, step_rec in enumerate(record.steps):
        files = {
            "flow": f"flow_{t}.bin",
            "masks": f"masks_{t}.png",
            "memory": f"memory_{t + 1}.png",
            "push_enc": f"push_{t}.png",
        }
        (directory / files["flow"]).write_bytes(formats.flow_to_bytes(step_rec.flow))
        (directory / files["masks"]).write_bytes(
            formats.mask_pair_to_png_bytes(step_rec.masks.m_t, step_rec.masks.m_t1)
        )
        (directory / files["memory"]).write_bytes(formats.labels_to_png_bytes(step_rec.memory_labels))
        (directory / files["push_enc"]).write_bytes(
            formats.encoding_to_png_bytes(encode_push(step_rec.action.push, step_rec.action.direction))
        )
        if step_rec.action.hold is not None:
            files["hold_enc"] = f"hold_{t}.png"
            (directory / files["hold_enc"]).write_bytes(
                formats.encoding_to_png_bytes(encode_hold(step_rec.action.hold))
            )
        reward_entry: dict = {
            "hold": step_rec.reward.hold_value,
            "push": step_rec.reward.push_value,
            "hold_pixel_zero_on_push": step_rec.reward.hold_pixel_zero_on_push,
            "dense_push": None,
            "dense_zero": None,
        }
        if step_rec.reward.dense_push is not None:
            reward_entry["dense_push"] = f"dense_{t}.png"
            (directory / reward_entry["dense_push"]).write_bytes(
                formats.gray16_to_png_bytes(step_rec.reward.dense_push)
            )
        if step_rec.reward.dense_zero_mask is not None:
            reward_entry["dense_zero"] = f"zero_{t}.png"
            (directory / reward_entry["dense_zero"]).write_bytes(
                formats.mask_to_png_bytes(step_rec.reward.dense_zero_mask)
            )
        manifest["steps"].append(
            {
                "action": {
                    "hold": list(step_rec.action.hold) if step_rec.action.hold is not None else None,
                    "push": list(step_rec.action.push),
                    "dir": step_rec.action.direction,
                },
                "touch": [step_rec.touch.hold_contact, step_rec.touch.push_contact, step_rec.touch.shear],
                "case": step_rec.case.value,
                "moved_pixels": step_rec.moved_pixels,
                "clamped": step_rec.clamped,
                "reward": reward_entry,
                "memory_recency": list(step_rec.memory_recency),
                "memory_overlap": step_rec.memory_overlap,
                "metrics": {
                    "ape": step_rec.metrics.ape,
                    "iou": step_rec.metrics.iou,
                    "dh95": step_rec.metrics.dh95,
                    "effective": step_rec.metrics.effective,
                    "optimal": step_rec.metrics.optimal,
                },
                "files": files,
            }
        )
    manifest_path = directory / MANIFEST_NAME
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, separators=(",", ":")) + "\n")
    return manifest_path


def load_episode(directory) -> EpisodeRecord:
    """Reload a persisted episode; inverse of persist_episode."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.exists():
        raise CorruptRecord(f"missing {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text())
    except json.JSONDecodeError as exc:
        raise CorruptRecord(f"unreadable manifest: {exc}") from exc
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise UnsupportedSchema(f"schema {manifest.get('schema_version')} not supported")

    def read(name: str) -> bytes:
        path = directory / name
        if not path.exists():
            raise CorruptRecord(f"missing file {path}")
        return path.read_bytes()

    n_steps = len(manifest["steps"])
    record = EpisodeRecord(
        category=manifest["category"],
        entry_index=manifest["entry_index"],
        seed=manifest["seed"],
        config=manifest["config"],
        init=init_from_dict(manifest["init"]),
    )
    for t in range(n_steps + 1):
        record.observations.append(formats.png_bytes_to_rgb(read(f"obs_{t}.png"), f"obs_{t}.png"))
        record.labels.append(formats.png_bytes_to_labels(read(f"labels_{t}.png"), f"labels_{t}.png"))
    for t, entry in enumerate(manifest["steps"]):
        files = entry["files"]
        flow = formats.bytes_to_flow(read(files["flow"]), files["flow"])
        m_t, m_t1 = formats.png_bytes_to_mask_pair(read(files["masks"]), files["masks"])
        reward_entry = entry["reward"]
        dense = None
        if reward_entry["dense_push"] is not None:
            dense = formats.png_bytes_to_gray16(read(reward_entry["dense_push"]), reward_entry["dense_push"])
        dense_zero = None
        if reward_entry["dense_zero"] is not None:
            dense_zero = formats.png_bytes_to_mask(read(reward_entry["dense_zero"]), reward_entry["dense_zero"])
        action = Action(
            hold=tuple(entry["action"]["hold"]) if entry["action"]["hold"] is not None else None,
            push=tuple(entry["action"]["push"]),
            direction=entry["action"]["dir"],
        )
        record.steps.append(
            StepRecord(
                action=action,
                touch=TouchReading(*entry["touch"]),
                case=UpdateCase(entry["case"]),
                moved_pixels=entry["moved_pixels"],
                clamped=entry["clamped"],
                reward=RewardTarget(
                    hold_value=reward_entry["hold"],
                    push_value=reward_entry["push"],
                    dense_push=dense,
                    dense_zero_mask=dense_zero,
                    hold_pixel_zero_on_push=reward_entry["hold_pixel_zero_on_push"],
                ),
                flow=flow,
                masks=MotionMaskPair(m_t, m_t1),
                memory_labels=formats.png_bytes_to_labels(read(files["memory"]), files["memory"]),
                memory_recency=tuple(entry["memory_recency"]),
                memory_overlap=entry["memory_overlap"],
                metrics=StepMetrics(**entry["metrics"]),
            )
        )
    return record


def episode_dir_name(entry_index: int, seed: int) -> str:
    return f"ep{entry_index:04d}_seed{seed}"


def _run_one(args) -> str:
    init_dict, config, seed, entry_index, record_dir = args
    init = init_from_dict(init_dict)
    directory = Path(record_dir) / episode_dir_name(entry_index, seed)
    if not (directory / MANIFEST_NAME).exists():
        record = run_episode(init, config, seed, entry_index=entry_index)
        persist_episode(record, directory)
    return str(directory)


def run_benchmark(config: RunConfig, progress=None) -> BenchmarkReport:
    """Run every benchmark entry with every seed and aggregate a report.

    With a record directory the run is resumable: episodes whose manifest
    already exists are loaded instead of recomputed. Remote policies must
    run through the server; this entry point covers the scripted ones.
    """
    if config.benchmark_path is None:
        raise ValueError("run_benchmark requires a benchmark path")
    if config.policy == "remote":
        raise ValueError("remote policies are driven through the server")
    bench = load_benchmark(config.benchmark_path)
    tasks = [
        (entry_index, init, seed)
        for entry_index, init in enumerate(bench.entries)
        for seed in config.seeds
    ]
    records: list[EpisodeRecord] = []
    if config.record_dir is None:
        for entry_index, init, seed in tasks:
            records.append(run_episode(init, config, seed, entry_index=entry_index))
            if progress:
                progress(len(records), len(tasks))
    else:
        job_args = [
            (init_to_dict(init), config, seed, entry_index, config.record_dir)
            for entry_index, init, seed in tasks
        ]
        if config.parallelism > 1:
            with ProcessPoolExecutor(max_workers=config.parallelism) as pool:
                for i, _ in enumerate(pool.map(_run_one, job_args)):
                    if progress:
                        progress(i + 1, len(tasks))
        else:
            for i, args in enumerate(job_args):
                _run_one(args)
                if progress:
                    progress(i + 1, len(tasks))
        for entry_index, init, seed in tasks:
            records.append(load_episode(Path(config.record_dir) / episode_dir_name(entry_index, seed)))
    return aggregate(records, config.seeds)


def write_report(report: BenchmarkReport, out_base) -> tuple[Path, Path]:
    """Write report JSON and CSV next to each other; returns both paths."""
    out_base = Path(out_base)
    out_base.parent.mkdir(parents=True, exist_ok=True)
    json_path = out_base.with_suffix(".json")
    csv_path = out_base.with_suffix(".csv")
    json_path.write_text(report.to_json())
    csv_path.write_text(report.to_csv())
    return json_path, csv_path
