"""Procedural articulated-chain objects and frozen benchmark initializations.

Objects are planar chains of 2 or 3 rigid links (an ellipse flanked by
prisms) connected by revolute joints with symmetric +/- 50 degree limits.
Benchmark sets freeze a list of fully specified initializations so that
every run scores the exact same scenes.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import zoom

from .errors import InvalidLinkCount, UnplaceableInstance
from .geometry import FRAME_SIZE, Pose2, wrap_angle
from .seeding import NS_ASSET, NS_BACKGROUND, NS_INIT, rng_for, seed_for

JOINT_LIMIT = 5.0 * math.pi / 18.0  # +/- 50 degrees
INIT_MARGIN = 4.0                   # placement margin at episode start, px
ANCHOR_INSET = 1.5                  # joints sit this far inside both links, pre-scale px
SCALE_RANGE = (0.7, 1.3)
N_BACKGROUNDS = 64
PLACEMENT_TRIES = 100


@dataclass(frozen=True)
class LinkSpec:
    """One rigid link: a prism (rectangle) or ellipse with half extents (a, b)."""

    shape: str
    half_extents: tuple[float, float]
    color: tuple[float, float, float]

    def __post_init__(self):
        if self.shape not in ("prism", "ellipse"):
            raise ValueError(f"unknown link shape {self.shape!r}")
        a, b = self.half_extents
        if not (a > 0 and b > 0 and a >= b):
            raise ValueError("half extents must satisfy a >= b > 0")
        if not all(0.0 <= c <= 1.0 for c in self.color):
            raise ValueError("color channels must lie in [0, 1]")

    def scaled(self, factor: float) -> "LinkSpec":
        a, b = self.half_extents
        return LinkSpec(self.shape, (a * factor, b * factor), self.color)


@dataclass(frozen=True)
class JointSpec:
    """Revolute joint between consecutive links of a chain."""

    parent_index: int
    child_index: int
    parent_anchor: tuple[float, float]
    child_anchor: tuple[float, float]
    limits: tuple[float, float]
    rest_angle: float = 0.0

    def __post_init__(self):
        lo, hi = self.limits
        if not (lo <= self.rest_angle <= hi):
            raise ValueError("rest angle outside joint limits")

    def scaled(self, factor: float) -> "JointSpec":
        pa = (self.parent_anchor[0] * factor, self.parent_anchor[1] * factor)
        ca = (self.child_anchor[0] * factor, self.child_anchor[1] * factor)
        return JointSpec(self.parent_index, self.child_index, pa, ca, self.limits, self.rest_angle)


@dataclass(frozen=True)
class ObjectSpec:
    """An open chain: link i is joined to link i+1."""

    links: tuple[LinkSpec, ...]
    joints: tuple[JointSpec, ...]

    def __post_init__(self):
        if not (2 <= len(self.links) <= 3):
            raise ValueError("chain must have 2 or 3 links")
        if len(self.joints) != len(self.links) - 1:
            raise ValueError("chain must have exactly n-1 joints")
        for i, j in enumerate(self.joints):
            if (j.parent_index, j.child_index) != (i, i + 1):
                raise ValueError("joints must connect link i to link i+1 in order")

    @property
    def n_links(self) -> int:
        return len(self.links)

    def scaled(self, factor: float) -> "ObjectSpec":
        return ObjectSpec(
            tuple(l.scaled(factor) for l in self.links),
            tuple(j.scaled(factor) for j in self.joints),
        )


@dataclass(frozen=True)
class InstanceInit:
    """A frozen scene: object, base pose, joint angles, scale, and background."""

    spec: ObjectSpec
    base_pose: Pose2
    joint_angles: tuple[float, ...]
    scale: float
    background_id: int
    category: str = ""

    def scaled_spec(self) -> ObjectSpec:
        return self.spec.scaled(self.scale)


@dataclass(frozen=True)
class BenchmarkSet:
    """Immutable ordered list of initializations, reproducible from its seed."""

    name: str
    seed: int
    entries: tuple[InstanceInit, ...]


def generate_multilink(seed: int, n_links: int) -> ObjectSpec:
    """Generate a chain object deterministically from the seed.

    Three-link objects are laid out prism-ellipse-prism; two-link objects
    drop the trailing prism. Joint anchors sit slightly inside both links so
    the hinge regions visibly overlap.
    """
    if n_links not in (2, 3):
        raise InvalidLinkCount(f"n_links must be 2 or 3, got {n_links}")
    rng = rng_for(NS_ASSET, seed, n_links)
    shapes = ("prism", "ellipse", "prism")[:n_links]
    links = []
    for shape in shapes:
        if shape == "ellipse":
            a = rng.uniform(8.0, 18.0)
            b = rng.uniform(3.5, 0.55 * a)
        else:
            # aspect >= 2 gives prisms a usable lever arm
            a = rng.uniform(6.0, 18.0)
            b = rng.uniform(3.0, a / 2.0)
        color = tuple(rng.integers(0, 256, size=3) / 255.0)
        links.append(LinkSpec(shape, (a, b), color))
    joints = []
    for i in range(n_links - 1):
        pa = (links[i].half_extents[0] - ANCHOR_INSET, 0.0)
        ca = (-(links[i + 1].half_extents[0] - ANCHOR_INSET), 0.0)
        joints.append(JointSpec(i, i + 1, pa, ca, (-JOINT_LIMIT, JOINT_LIMIT)))
    return ObjectSpec(tuple(links), tuple(joints))


def chain_poses(spec: ObjectSpec, base_pose: Pose2, joint_angles) -> tuple[Pose2, ...]:
    """Forward kinematics: world pose of every link, link 0 at base_pose."""
    poses = [base_pose]
    for j, joint in enumerate(spec.joints):
        parent = poses[joint.parent_index]
        step = Pose2(joint.parent_anchor[0], joint.parent_anchor[1], joint_angles[j])
        back = Pose2(-joint.child_anchor[0], -joint.child_anchor[1], 0.0)
        poses.append(parent.compose(step).compose(back))
    return tuple(poses)


def link_bounds(link: LinkSpec, pose: Pose2) -> tuple[float, float, float, float]:
    """Axis-aligned world bounds (x_lo, x_hi, y_lo, y_hi) of one link."""
    a, b = link.half_extents
    if link.shape == "prism":
        corners = pose.apply(np.array([[a, b], [a, -b], [-a, b], [-a, -b]]))
        return (corners[:, 0].min(), corners[:, 0].max(), corners[:, 1].min(), corners[:, 1].max())
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    ex = math.hypot(a * c, b * s)
    ey = math.hypot(a * s, b * c)
    return (pose.x - ex, pose.x + ex, pose.y - ey, pose.y + ey)


def footprint_bounds(spec: ObjectSpec, poses) -> tuple[float, float, float, float]:
    bounds = [link_bounds(l, p) for l, p in zip(spec.links, poses)]
    return (
        min(b[0] for b in bounds),
        max(b[1] for b in bounds),
        min(b[2] for b in bounds),
        max(b[3] for b in bounds),
    )


def sample_instance_init(spec: ObjectSpec, seed: int, category: str = "") -> InstanceInit:
    """Sample pose, joint angles, scale, and background uniformly.

    Placement keeps the object footprint at least INIT_MARGIN px inside the
    frame; infeasible draws are retried up to PLACEMENT_TRIES times.
    """
    rng = rng_for(NS_INIT, seed)
    lo_px = INIT_MARGIN
    hi_px = (FRAME_SIZE - 1) - INIT_MARGIN
    for _ in range(PLACEMENT_TRIES):
        scale = rng.uniform(*SCALE_RANGE)
        theta = rng.uniform(0.0, 2.0 * math.pi)
        angles = tuple(rng.uniform(j.limits[0], j.limits[1]) for j in spec.joints)
        sspec = spec.scaled(scale)
        poses = chain_poses(sspec, Pose2(0.0, 0.0, theta), angles)
        x_lo, x_hi, y_lo, y_hi = footprint_bounds(sspec, poses)
        bx_lo, bx_hi = lo_px - x_lo, hi_px - x_hi
        by_lo, by_hi = lo_px - y_lo, hi_px - y_hi
        if bx_hi < bx_lo or by_hi < by_lo:
            continue
        x = rng.uniform(bx_lo, bx_hi)
        y = rng.uniform(by_lo, by_hi)
        background_id = int(rng.integers(0, N_BACKGROUNDS))
        return InstanceInit(
            spec=spec,
            base_pose=Pose2(x, y, wrap_angle(theta)),
            joint_angles=angles,
            scale=scale,
            background_id=background_id,
            category=category or f"multilink{spec.n_links}",
        )
    raise UnplaceableInstance(
        f"no in-frame placement found in {PLACEMENT_TRIES} tries (object too large?)"
    )


def build_benchmark(seed: int, counts: dict[int, tuple[int, int]], name: str = "") -> BenchmarkSet:
    """Build a frozen benchmark: counts maps n_links -> (instances, inits per instance)."""
    entries = []
    for n_links in sorted(counts):
        n_instances, n_inits = counts[n_links]
        if n_instances <= 0 or n_inits <= 0:
            raise ValueError("instance and init counts must be positive")
        for i in range(n_instances):
            spec = generate_multilink(seed_for(seed, n_links, i), n_links)
            for j in range(n_inits):
                entries.append(
                    sample_instance_init(spec, seed_for(seed, n_links, i, j))
                )
    return BenchmarkSet(name=name or f"multilink-s{seed}", seed=seed, entries=tuple(entries))


@lru_cache(maxsize=N_BACKGROUNDS * 2)
def generate_background(background_id: int) -> np.ndarray:
    """Deterministic low-contrast value-noise texture, (90, 90, 3) floats in [0, 1].

    Values are quantized to the 8-bit grid so PNG export is lossless.
    """
    rng = rng_for(NS_BACKGROUND, background_id)
    base = rng.uniform(0.40, 0.60, size=3)
    coarse = rng.uniform(-1.0, 1.0, size=(5, 5))
    fine = rng.uniform(-1.0, 1.0, size=(12, 12))
    tint = rng.uniform(-1.0, 1.0, size=(4, 4, 3))
    noise = 0.7 * _stretch(coarse) + 0.3 * _stretch(fine)
    img = base[None, None, :] + 0.10 * noise[:, :, None] + 0.03 * _stretch(tint)
    img = np.clip(img, 0.0, 1.0)
    img = np.round(img * 255.0) / 255.0
    img.flags.writeable = False
    return img


def _stretch(grid: np.ndarray) -> np.ndarray:
    factors = (FRAME_SIZE / grid.shape[0], FRAME_SIZE / grid.shape[1])
    if grid.ndim == 3:
        factors = factors + (1,)
    out = zoom(grid, factors, order=1, mode="nearest")
    if grid.ndim == 3:
        return out[:FRAME_SIZE, :FRAME_SIZE, :]
    return out[:FRAME_SIZE, :FRAME_SIZE]


# ---------------------------------------------------------------------------
# JSON serialization (benchmark files and episode manifests)

def link_to_dict(link: LinkSpec) -> dict:
    return {"shape": link.shape, "half_extents": list(link.half_extents), "color": list(link.color)}


def joint_to_dict(joint: JointSpec) -> dict:
    return {
        "parent_index": joint.parent_index,
        "child_index": joint.child_index,
        "parent_anchor": list(joint.parent_anchor),
        "child_anchor": list(joint.child_anchor),
        "limits": list(joint.limits),
        "rest_angle": joint.rest_angle,
    }


def spec_to_dict(spec: ObjectSpec) -> dict:
    return {"links": [link_to_dict(l) for l in spec.links], "joints": [joint_to_dict(j) for j in spec.joints]}


def spec_from_dict(d: dict) -> ObjectSpec:
    links = tuple(
        LinkSpec(l["shape"], tuple(l["half_extents"]), tuple(l["color"])) for l in d["links"]
    )
    joints = tuple(
        JointSpec(
            j["parent_index"],
            j["child_index"],
            tuple(j["parent_anchor"]),
            tuple(j["child_anchor"]),
            tuple(j["limits"]),
            j["rest_angle"],
        )
        for j in d["joints"]
    )
    return ObjectSpec(links, joints)


def init_to_dict(init: InstanceInit) -> dict:
    return {
        "spec": spec_to_dict(init.spec),
        "base_pose": [init.base_pose.x, init.base_pose.y, init.base_pose.theta],
        "joint_angles": list(init.joint_angles),
        "scale": init.scale,
        "background_id": init.background_id,
        "category": init.category,
    }


def init_from_dict(d: dict) -> InstanceInit:
    return InstanceInit(
        spec=spec_from_dict(d["spec"]),
        base_pose=Pose2(*d["base_pose"]),
        joint_angles=tuple(d["joint_angles"]),
        scale=d["scale"],
        background_id=d["background_id"],
        category=d.get("category", ""),
    )


def benchmark_to_json(bench: BenchmarkSet) -> str:
    payload = {
        "schema_version": 1,
        "name": bench.name,
        "seed": bench.seed,
        "entries": [init_to_dict(e) for e in bench.entries],
    }
    return json.dumps(payload, sort_keys=True, separators=(",", ":")) + "\n"


def benchmark_from_json(text: str) -> BenchmarkSet:
    payload = json.loads(text)
    if payload.get("schema_version") != 1:
        raise ValueError(f"unsupported benchmark schema {payload.get('schema_version')}")
    return BenchmarkSet(
        name=payload["name"],
        seed=payload["seed"],
        entries=tuple(init_from_dict(e) for e in payload["entries"]),
    )


def save_benchmark(bench: BenchmarkSet, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(benchmark_to_json(bench))


def load_benchmark(path) -> BenchmarkSet:
    with open(path, "r", encoding="utf-8") as fh:
        return benchmark_from_json(fh.read())
