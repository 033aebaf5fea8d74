"""Deterministic quasi-static planar environment.

A step resolves one hold+push action against the current chain state. The
motion model is intentionally simple: pushes apply a unit force at a pixel,
torques about chain joints articulate them, and unheld objects mostly move
rigidly. Each step is an equilibrium displacement; no velocities carry over.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import distance_transform_edt

from .assets import ObjectSpec, InstanceInit, chain_poses, footprint_bounds, generate_background
from .errors import IncompatibleStates
from .geometry import FRAME_SIZE, Pose2, grid_points, pixel_to_world

# contact and motion constants (tuned only through the acceptance suite)
R_CONTACT = 1.5          # px: pixel-to-footprint contact radius
TAU_STATIC = 0.5         # static friction threshold on joint torque
K_JOINT = 0.35           # articulation gain: rad per (torque / footprint px^2)
K_TRANSLATE = 6.0        # px of rigid translation per unit push force
K_CURL = 0.01            # rad of rigid rotation per unit torque about the centroid
EPS_FLOW = 1e-4          # px: "moved" threshold on flow magnitude
HARD_MARGIN = 2.0        # px: objects may never cross this frame margin
MAX_STEP_ROTATION = math.pi / 6.0  # per-step rotation cap (keeps flow invertible)


@dataclass(frozen=True)
class WorldState:
    """Full simulator ground truth: object, base pose, joint angles."""

    spec: ObjectSpec
    base_pose: Pose2
    joint_angles: tuple[float, ...]

    def __post_init__(self):
        if len(self.joint_angles) != len(self.spec.joints):
            raise ValueError("one joint angle per joint required")
        for angle, joint in zip(self.joint_angles, self.spec.joints):
            lo, hi = joint.limits
            if not (lo - 1e-9 <= angle <= hi + 1e-9):
                raise ValueError("joint angle outside limits")

    def link_poses(self) -> tuple[Pose2, ...]:
        return chain_poses(self.spec, self.base_pose, self.joint_angles)


@dataclass(frozen=True)
class Action:
    """Hold pixel (optional), push pixel, and one of 8 push directions."""

    hold: tuple[int, int] | None
    push: tuple[int, int]
    direction: int

    def __post_init__(self):
        for pix in ([self.hold] if self.hold is not None else []) + [self.push]:
            r, c = pix
            if not (0 <= r < FRAME_SIZE and 0 <= c < FRAME_SIZE):
                raise ValueError(f"pixel {pix} outside the {FRAME_SIZE}x{FRAME_SIZE} frame")
        if not (0 <= self.direction <= 7):
            raise ValueError("direction must be in 0..7")


@dataclass(frozen=True)
class TouchReading:
    """Binary contact signals: hold contact, push contact, shear on the holder."""

    hold_contact: int
    push_contact: int
    shear: int


@dataclass(frozen=True)
class StepOutcome:
    moved_pixel_count: int
    per_link_transform: tuple[Pose2, ...]
    clamped: bool


@dataclass(frozen=True)
class FlowField:
    """Analytic optical flow between consecutive frames, zero on background."""

    forward: np.ndarray   # (H, W, 2) float32, frame t -> t+1
    backward: np.ndarray  # (H, W, 2) float32, frame t+1 -> t


def worldstate_from_init(init: InstanceInit) -> WorldState:
    """Bake the instance scale into the spec and build the starting state."""
    return WorldState(init.scaled_spec(), init.base_pose, init.joint_angles)


def direction_vector(direction: int) -> np.ndarray:
    ang = direction * math.pi / 4.0
    return np.array([math.cos(ang), math.sin(ang)])


def rasterize_labels(state: WorldState) -> np.ndarray:
    """Hard-edged label image: 0 background, i+1 for link i, later links on top."""
    labels = np.zeros(FRAME_SIZE * FRAME_SIZE, dtype=np.uint8)
    pts = grid_points()
    for i, (link, pose) in enumerate(zip(state.spec.links, state.link_poses())):
        local = pose.inverse().apply(pts)
        a, b = link.half_extents
        if link.shape == "prism":
            inside = (np.abs(local[:, 0]) <= a) & (np.abs(local[:, 1]) <= b)
        else:
            inside = (local[:, 0] / a) ** 2 + (local[:, 1] / b) ** 2 <= 1.0
        labels[inside] = i + 1
    return labels.reshape(FRAME_SIZE, FRAME_SIZE)


def render(state: WorldState, background_id: int) -> tuple[np.ndarray, np.ndarray]:
    """Render (rgb, labels). RGB values are multiples of 1/255 for lossless PNG export."""
    labels = rasterize_labels(state)
    rgb = generate_background(background_id).copy()
    for i, link in enumerate(state.spec.links):
        rgb[labels == i + 1] = link.color
    return rgb, labels


def _contact_fields(labels: np.ndarray):
    dist, (ir, ic) = distance_transform_edt(labels == 0, return_indices=True)
    return dist, labels[ir, ic]


def _contact_link(labels, dist, nearest, pixel) -> int | None:
    r, c = pixel
    if labels[r, c] > 0:
        return int(labels[r, c]) - 1
    if dist[r, c] <= R_CONTACT:
        return int(nearest[r, c]) - 1
    return None


def _cross(v: np.ndarray, u: np.ndarray) -> float:
    return float(v[0] * u[1] - v[1] * u[0])


def _clip_rotation(phi: float) -> float:
    return float(np.clip(phi, -MAX_STEP_ROTATION, MAX_STEP_ROTATION))


def _side_links(n_links: int, joint: int, child_side: bool) -> tuple[int, ...]:
    return tuple(range(joint + 1, n_links)) if child_side else tuple(range(0, joint + 1))


def _anchor_world(state: WorldState, poses, joint_index: int) -> np.ndarray:
    joint = state.spec.joints[joint_index]
    return poses[joint.parent_index].apply(np.array(joint.parent_anchor))


def _contained(state: WorldState, margin: float) -> bool:
    x_lo, x_hi, y_lo, y_hi = footprint_bounds(state.spec, state.link_poses())
    hi = (FRAME_SIZE - 1) - margin
    return x_lo >= margin and y_lo >= margin and x_hi <= hi and y_hi <= hi


def step(state: WorldState, action: Action) -> tuple[WorldState, TouchReading, StepOutcome]:
    """Resolve one action. Pure function; returns the new state, touch, and outcome.

    Motion cases:
      * push misses the object: nothing moves.
      * hold on link H, push on a different link P: the chain is cut at the
        joint next to P on the path toward H and the P side rotates about it
        by an angle proportional to torque over side area; the H side is
        pinned in place. Torques below TAU_STATIC do not move the joint.
      * hold and push on the same link: the whole object rotates rigidly
        about the hold point.
      * no hold contact: rigid translation along the push plus rotation about
        the centroid; if the torque about P's nearest joint beats static
        friction, half the articulation is applied and half stays rigid.

    If any link would cross the hard frame margin, all motion components are
    scaled back uniformly and the outcome is flagged clamped.
    """
    n = state.spec.n_links
    labels = rasterize_labels(state)
    dist, nearest = _contact_fields(labels)
    h_link = _contact_link(labels, dist, nearest, action.hold) if action.hold is not None else None
    p_link = _contact_link(labels, dist, nearest, action.push)
    touch = TouchReading(
        hold_contact=int(h_link is not None),
        push_contact=int(p_link is not None),
        shear=int(h_link is not None and p_link is not None),
    )
    identity = tuple(Pose2() for _ in range(n))
    if p_link is None:
        return state, touch, StepOutcome(0, identity, False)

    u = direction_vector(action.direction)
    push_w = pixel_to_world(action.push)
    poses = state.link_poses()

    # motion components, each linearly scalable for frame containment
    articulation = None            # (joint index, child_side, anchor, world rotation)
    rigid_pivot, rigid_rot = None, 0.0
    rigid_trans = np.zeros(2)

    def _area(link_set) -> float:
        wanted = np.isin(labels, [i + 1 for i in link_set])
        return float(max(int(wanted.sum()), 1))

    def _limit_clamped(joint_index: int, child_side: bool, phi_world: float) -> float:
        # convert the desired world rotation of the pushed side into a joint
        # delta, clamp to limits, and convert back
        theta = state.joint_angles[joint_index]
        lo, hi = state.spec.joints[joint_index].limits
        if child_side:
            return float(np.clip(theta + phi_world, lo, hi) - theta)
        return float(theta - np.clip(theta - phi_world, lo, hi))

    if h_link is not None and h_link != p_link:
        joint_index = p_link - 1 if p_link > h_link else p_link
        child_side = p_link > h_link
        anchor = _anchor_world(state, poses, joint_index)
        tau = _cross(push_w - anchor, u)
        if abs(tau) >= TAU_STATIC:
            side = _side_links(n, joint_index, child_side)
            phi = _clip_rotation(K_JOINT * tau / _area(side))
            phi = _limit_clamped(joint_index, child_side, phi)
            articulation = (joint_index, child_side, anchor, phi)
    elif h_link is not None:
        hold_w = pixel_to_world(action.hold)
        tau = _cross(push_w - hold_w, u)
        rigid_pivot = hold_w
        rigid_rot = _clip_rotation(K_JOINT * tau / _area(range(n)))
    else:
        adjacent = [j for j in (p_link - 1, p_link) if 0 <= j < n - 1]
        torques = [
            _cross(push_w - _anchor_world(state, poses, j), u) for j in adjacent
        ]
        best = int(np.argmax([abs(t) for t in torques]))
        share = 1.0
        if abs(torques[best]) >= TAU_STATIC:
            joint_index = adjacent[best]
            child_side = p_link == joint_index + 1
            side = _side_links(n, joint_index, child_side)
            phi = _clip_rotation(0.5 * K_JOINT * torques[best] / _area(side))
            phi = _limit_clamped(joint_index, child_side, phi)
            articulation = (joint_index, child_side, _anchor_world(state, poses, joint_index), phi)
            share = 0.5
        obj_pts = grid_points()[labels.reshape(-1) > 0]
        com = obj_pts.mean(axis=0)
        rigid_pivot = com
        rigid_rot = _clip_rotation(share * K_CURL * _cross(push_w - com, u))
        rigid_trans = K_TRANSLATE * u

    def candidate(s: float) -> WorldState:
        angles = list(state.joint_angles)
        base = state.base_pose
        if articulation is not None:
            joint_index, child_side, anchor, phi = articulation
            psi = s * phi
            if child_side:
                angles[joint_index] += psi
            else:
                angles[joint_index] -= psi
                base = Pose2.rotation_about(anchor, psi).compose(base)
        if rigid_pivot is not None:
            delta = Pose2.translation(s * rigid_trans[0], s * rigid_trans[1]).compose(
                Pose2.rotation_about(rigid_pivot, s * rigid_rot)
            )
            base = delta.compose(base)
        return WorldState(state.spec, base, tuple(angles))

    clamped = False
    scale = 1.0
    if not _contained(candidate(1.0), HARD_MARGIN):
        clamped = True
        lo, hi = 0.0, 1.0
        if not _contained(candidate(0.0), HARD_MARGIN):
            scale = 0.0
        else:
            for _ in range(40):
                mid = 0.5 * (lo + hi)
                if _contained(candidate(mid), HARD_MARGIN):
                    lo = mid
                else:
                    hi = mid
            scale = lo
    new_state = candidate(scale)

    new_poses = new_state.link_poses()
    deltas = tuple(
        Pose2() if pn.delta_from(po).is_identity() else pn.delta_from(po)
        for po, pn in zip(poses, new_poses)
    )
    moved = _count_moved(labels, deltas)
    return new_state, touch, StepOutcome(moved, deltas, clamped)


def _count_moved(labels: np.ndarray, deltas) -> int:
    moved = 0
    flat = labels.reshape(-1)
    pts = grid_points()
    for i, delta in enumerate(deltas):
        if delta.is_identity():
            continue
        link_pts = pts[flat == i + 1]
        if len(link_pts) == 0:
            continue
        disp = delta.apply(link_pts) - link_pts
        moved += int((np.hypot(disp[:, 0], disp[:, 1]) > EPS_FLOW).sum())
    return moved


def compute_flow(
    state_t: WorldState,
    state_t1: WorldState,
    labels_t: np.ndarray,
    labels_t1: np.ndarray,
) -> FlowField:
    """Analytic forward/backward flow from per-link transform deltas.

    At a pixel labeled link i in frame t, the forward flow is the link's
    world-frame delta applied to the pixel center minus the center itself;
    the backward field is built symmetrically from the t+1 labels. Pixels
    of links whose delta is the identity, and background pixels, are
    exactly zero.
    """
    if state_t.spec != state_t1.spec:
        raise IncompatibleStates("states describe different objects")
    poses_t = state_t.link_poses()
    poses_t1 = state_t1.link_poses()
    forward = np.zeros((FRAME_SIZE, FRAME_SIZE, 2), dtype=np.float32)
    backward = np.zeros((FRAME_SIZE, FRAME_SIZE, 2), dtype=np.float32)
    pts = grid_points()
    for i in range(state_t.spec.n_links):
        delta = poses_t1[i].delta_from(poses_t[i])
        if delta.is_identity():
            continue
        sel = labels_t.reshape(-1) == i + 1
        if sel.any():
            disp = delta.apply(pts[sel]) - pts[sel]
            forward.reshape(-1, 2)[sel] = disp.astype(np.float32)
        inv = delta.inverse()
        sel1 = labels_t1.reshape(-1) == i + 1
        if sel1.any():
            disp = inv.apply(pts[sel1]) - pts[sel1]
            backward.reshape(-1, 2)[sel1] = disp.astype(np.float32)
    return FlowField(forward, backward)


def flow_norm(flow_plane: np.ndarray) -> np.ndarray:
    """Per-pixel L2 magnitude of a (H, W, 2) flow plane."""
    return np.hypot(flow_plane[..., 0].astype(np.float64), flow_plane[..., 1].astype(np.float64))
