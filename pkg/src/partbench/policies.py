"""Action sources: random baselines, the ground-truth oracle, and remote policies.

The oracle reads simulator ground truth, always holds one link and pushes a
neighboring link at maximum lever arm, and steers torque toward the joint
limit with more remaining range. Paired with perfect motion masks it is the
upper-bound baseline; paired with corrupted masks it emulates an oracle
actor with a learned segmenter.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateObject
from .geometry import grid_points, pixel_to_world
from .memory import PartMemory
from .sim import Action, WorldState, direction_vector


@dataclass(frozen=True)
class PolicyInput:
    observation: np.ndarray
    memory: PartMemory
    step_index: int
    rng_seed: int


@dataclass(frozen=True)
class OracleContext:
    """Ground truth handed to scripted oracles.

    discovered preserves discovery order (earliest first) so "most recently
    discovered" is well defined once every link has moved.
    """

    world: WorldState
    labels: np.ndarray
    discovered: tuple[int, ...]


def random_policy(policy_input: PolicyInput) -> Action:
    """Hold pixel, push pixel, and direction all uniform over the action space."""
    rng = np.random.Generator(np.random.PCG64(policy_input.rng_seed))
    vals = rng.integers(0, policy_input.observation.shape[0], size=4)
    direction = int(rng.integers(0, 8))
    return Action(
        hold=(int(vals[0]), int(vals[1])),
        push=(int(vals[2]), int(vals[3])),
        direction=direction,
    )


def no_hold_random_policy(policy_input: PolicyInput) -> Action:
    """Push-only baseline: a single uniform push every step."""
    rng = np.random.Generator(np.random.PCG64(policy_input.rng_seed))
    vals = rng.integers(0, policy_input.observation.shape[0], size=2)
    direction = int(rng.integers(0, 8))
    return Action(hold=None, push=(int(vals[0]), int(vals[1])), direction=direction)


def oracle_policy(ctx: OracleContext) -> Action:
    """Scripted optimal action from ground truth state.

    Targets the lowest-index undiscovered link (or, with everything
    discovered, the most recently discovered link), holds its neighbor on
    the longer chain side, picks hold/push pixels farthest from the shared
    joint, and pushes in the direction of largest torque signed toward the
    joint-limit side with more headroom. Ties between equally long sides
    prefer the hold whose dragged far subchain is smaller than the target
    (the memory can split such a pair later); remaining ties and the
    direction argmax break toward lower indices.
    """
    spec = ctx.world.spec
    n = spec.n_links
    if n < 2:
        raise DegenerateObject("oracle needs at least two links")
    undiscovered = [i for i in range(n) if i not in ctx.discovered]
    if undiscovered:
        target = undiscovered[0]
    elif ctx.discovered:
        target = ctx.discovered[-1]
    else:  # pragma: no cover - unreachable: no links discovered implies undiscovered
        target = 0

    hold_link = _pick_hold_link(ctx.labels, n, target)
    joint_index = min(target, hold_link)
    joint = spec.joints[joint_index]
    anchor = ctx.world.link_poses()[joint.parent_index].apply(np.array(joint.parent_anchor))

    hold_pixel = _farthest_pixel(ctx.labels, hold_link, anchor)
    push_pixel = _farthest_pixel(ctx.labels, target, anchor)
    push_w = pixel_to_world(push_pixel)

    theta = ctx.world.joint_angles[joint_index]
    lo, hi = joint.limits
    preferred_joint_sign = 1.0 if (hi - theta) >= (theta - lo) else -1.0
    # world rotation of the pushed side maps to a joint delta of the same
    # sign on the child side and the opposite sign on the parent side
    child_side = target > hold_link
    preferred_torque_sign = preferred_joint_sign if child_side else -preferred_joint_sign

    lever = push_w - anchor
    scores = [
        preferred_torque_sign * float(lever[0] * u[1] - lever[1] * u[0])
        for u in (direction_vector(d) for d in range(8))
    ]
    direction = int(np.argmax(scores))
    return Action(hold=hold_pixel, push=push_pixel, direction=direction)


def _pick_hold_link(labels: np.ndarray, n_links: int, target: int) -> int:
    """Neighbor of the target to hold, preferring the longer chain side.

    Pushing the target drags every link on its side of the cut, i.e. the
    subchain on the far side from the hold. On equal-length sides, prefer
    the hold whose dragged subchain is smaller in footprint than the target
    itself: a mask pair shaped that way is exactly what the part memory can
    disentangle afterwards. Remaining ties go to the lower link index.
    """
    neighbors = [i for i in (target - 1, target + 1) if 0 <= i < n_links]
    if len(neighbors) == 1:
        return neighbors[0]
    side_sizes = [target if h < target else n_links - 1 - target for h in neighbors]
    if side_sizes[0] != side_sizes[1]:
        return neighbors[int(np.argmax(side_sizes))]
    target_area = int((labels == target + 1).sum())

    def dragged_area(hold: int) -> int:
        links = range(0, target) if hold > target else range(target + 1, n_links)
        return int(np.isin(labels, [i + 1 for i in links]).sum())

    splittable = [h for h in neighbors if dragged_area(h) < target_area]
    if splittable:
        return splittable[0]
    return neighbors[0]


def _farthest_pixel(labels: np.ndarray, link: int, anchor: np.ndarray) -> tuple[int, int]:
    flat = labels.reshape(-1) == link + 1
    if not flat.any():
        raise DegenerateObject(f"link {link} has no visible pixels")
    pts = grid_points()[flat]
    dists = np.hypot(pts[:, 0] - anchor[0], pts[:, 1] - anchor[1])
    best = int(np.argmax(dists))  # first max in row-major order
    x, y = pts[best]
    return (int(y), int(x))


def remote_policy(session, policy_input: PolicyInput) -> Action:
    """Ask a connected remote policy for the next action.

    The session owns the wire protocol; failures surface as ProtocolError
    or PolicyTimeout and abort the episode.
    """
    return session.request_action(policy_input)
