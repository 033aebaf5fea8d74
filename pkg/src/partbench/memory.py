"""Part memory: classify each motion-mask pair and fold it into the belief.

The memory is a fixed bank of five binary mask channels plus a recency
queue. Every step, the before-motion mask is compared against the best
overlapping channel and the update is classified as one of six mutually
exclusive cases; the after-motion mask then replaces, splits, or extends
channels accordingly. Entangled channels are split at test time by rigidly
registering the stale channel onto the new mask with planar ICP.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.ndimage import binary_closing
from scipy.ndimage import label as nd_label
from scipy.spatial import cKDTree

from .errors import DegenerateMask
from .geometry import FRAME_SIZE, Pose2, mask_points, wrap_angle

N_CHANNELS = 5
OVERLAP_TAU = 0.5   # "significant overlap" threshold on both overlap ratios
A_MIN = 5           # px: smaller masks are treated as no movement
ICP_MAX_ITERS = 50
ICP_TOL = 1e-3             # minimum fit-score improvement that counts as progress
ICP_PATIENCE = 8           # iterations allowed without progress before stopping
ICP_POLISH_ITERS = 10      # unweighted refinement iterations after the walk
ICP_MOTION_WEIGHT = 0.008  # fit-score cost per pixel of pose motion

# radius-1 disk: 4-neighborhood plus center
_DISK1 = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)


class UpdateCase(Enum):
    NO_MOVEMENT = "no_movement"
    NEW_PART = "new_part"
    SPLIT_NEW_PART = "split_new_part"
    EXISTING_PART = "existing_part"
    ENTANGLED_PARTS = "entangled_parts"
    FULL_MEMORY_FALLBACK = "full_memory_fallback"


@dataclass(frozen=True)
class PartMemory:
    """Belief over discovered parts: five mask channels and a recency queue.

    recency lists exactly the non-empty channel indices, most recently
    allocated or modified first. PartMemory is a value type: updates return
    a new instance.
    """

    channels: np.ndarray            # (N_CHANNELS, H, W) bool
    recency: tuple[int, ...]

    @staticmethod
    def empty() -> "PartMemory":
        return PartMemory(np.zeros((N_CHANNELS, FRAME_SIZE, FRAME_SIZE), dtype=bool), ())

    def non_empty(self) -> tuple[int, ...]:
        return tuple(c for c in range(N_CHANNELS) if self.channels[c].any())

    def free_channel(self) -> int | None:
        for c in range(N_CHANNELS):
            if not self.channels[c].any():
                return c
        return None


def classify_update(memory: PartMemory, m_t: np.ndarray) -> tuple[UpdateCase, int | None]:
    """Classify a before-motion mask against the memory.

    With c* the channel of largest overlap (ties to the lowest index),
    o = |m_t AND V[c*]|, r_M = o / |m_t| and r_V = o / |V[c*]|:

      |m_t| < A_MIN              -> NO_MOVEMENT
      r_M <  tau and r_V <  tau  -> NEW_PART if a channel is free,
                                    else FULL_MEMORY_FALLBACK on c*
      r_M >= tau and r_V <  tau  -> SPLIT_NEW_PART on c*
      r_M >= tau and r_V >= tau  -> EXISTING_PART on c*
      r_M <  tau and r_V >= tau  -> ENTANGLED_PARTS on c*
    """
    m_t = m_t.astype(bool)
    area = int(m_t.sum())
    if area < A_MIN:
        return UpdateCase.NO_MOVEMENT, None
    occupied = memory.non_empty()
    if not occupied:
        return UpdateCase.NEW_PART, memory.free_channel()
    overlaps = [int((m_t & memory.channels[c]).sum()) for c in occupied]
    best = int(np.argmax(overlaps))
    c_star = occupied[best]
    o = overlaps[best]
    r_m = o / area
    r_v = o / int(memory.channels[c_star].sum())
    if r_m < OVERLAP_TAU and r_v < OVERLAP_TAU:
        free = memory.free_channel()
        if free is not None:
            return UpdateCase.NEW_PART, free
        return UpdateCase.FULL_MEMORY_FALLBACK, c_star
    if r_m >= OVERLAP_TAU and r_v < OVERLAP_TAU:
        return UpdateCase.SPLIT_NEW_PART, c_star
    if r_m >= OVERLAP_TAU and r_v >= OVERLAP_TAU:
        return UpdateCase.EXISTING_PART, c_star
    return UpdateCase.ENTANGLED_PARTS, c_star


def apply_update(
    memory: PartMemory,
    m_t: np.ndarray,
    m_t1: np.ndarray,
    mode: str = "test",
) -> tuple[PartMemory, UpdateCase]:
    """Fold one motion-mask pair into the memory and return the new memory.

    NEW_PART writes m_t1 into a free channel. SPLIT_NEW_PART removes m_t
    from the overlapped channel and allocates m_t1 fresh. EXISTING_PART
    overwrites the channel with m_t1. ENTANGLED_PARTS overwrites in train
    mode; in test mode the stale channel is ICP-registered onto m_t1, kept
    where the transformed channel and m_t1 agree, and the remainder of m_t1
    goes to a fresh channel. FULL_MEMORY_FALLBACK merges into the channel of
    largest overlap. Touched channels move to the recency front and channels
    that end up empty are freed.
    """
    if mode not in ("train", "test"):
        raise ValueError("mode must be 'train' or 'test'")
    m_t = m_t.astype(bool)
    m_t1 = m_t1.astype(bool)
    case, c = classify_update(memory, m_t)
    channels = memory.channels.copy()
    recency = list(memory.recency)

    def touch(channel: int) -> None:
        if channel in recency:
            recency.remove(channel)
        recency.insert(0, channel)

    def sweep() -> None:
        for channel in list(recency):
            if not channels[channel].any():
                recency.remove(channel)

    if case == UpdateCase.NO_MOVEMENT:
        return memory, case

    if case == UpdateCase.NEW_PART:
        if m_t1.any():
            channels[c] = m_t1
            touch(c)
    elif case == UpdateCase.SPLIT_NEW_PART:
        channels[c] = channels[c] & ~m_t
        touch(c)
        fresh = _free(channels)
        if fresh is not None:
            if m_t1.any():
                channels[fresh] = m_t1
                touch(fresh)
        else:
            # no room to allocate the split part: merge like the full-memory case
            channels[c] = channels[c] | m_t1
    elif case == UpdateCase.EXISTING_PART:
        channels[c] = m_t1
        touch(c)
    elif case == UpdateCase.ENTANGLED_PARTS:
        if mode == "train":
            channels[c] = m_t1
            touch(c)
        else:
            channels[c] = _register_and_intersect(channels[c], m_t1)
            touch(c)
            leftover = m_t1 & ~channels[c]
            fresh = _free(channels)
            if fresh is not None and leftover.any():
                channels[fresh] = leftover
                touch(fresh)
            # with no free channel only the first assignment is kept
    else:  # FULL_MEMORY_FALLBACK
        channels[c] = (channels[c] & ~m_t) | m_t1
        touch(c)

    sweep()
    return PartMemory(channels, tuple(recency)), case


def _free(channels: np.ndarray) -> int | None:
    for c in range(N_CHANNELS):
        if not channels[c].any():
            return c
    return None


def _register_and_intersect(channel: np.ndarray, m_t1: np.ndarray) -> np.ndarray:
    try:
        transform = icp_se2(channel, m_t1)
    except DegenerateMask:
        return m_t1.copy()
    return transform_mask(channel, transform) & m_t1


def icp_se2(src: np.ndarray, dst: np.ndarray) -> Pose2:
    """Planar rigid registration of two masks by iterative closest point.

    Point sets are the pixel centers of each mask. Solid masks make plain
    ICP nearly blind to rotation (interior points self-match at distance
    zero), so several starts are tried and each alternates nearest-neighbor
    matching with a distance-weighted closed-form rigid fit before an
    unweighted polish. The winner minimizes the fit score (unexplained
    point fraction plus damped mean distance) with a weak preference for
    smaller motions. Result maps src onto dst.
    """
    src_mask = np.asarray(src, dtype=bool)
    dst_mask = np.asarray(dst, dtype=bool)
    src_pts = mask_points(src_mask)
    dst_pts = mask_points(dst_mask)
    if len(src_pts) < 3 or len(dst_pts) < 3:
        raise DegenerateMask("icp needs at least 3 pixels in both masks")
    tree = cKDTree(dst_pts)
    results = [
        _icp_refine(src_pts, dst_pts, tree, start)
        for start in _icp_starts(src_pts, dst_pts, dst_mask)
    ]
    # selection adds a weak motion prior to the fit score: it rejects
    # poses that explain the data no better but jump much farther (the
    # 180 degree twin of symmetric shapes, or embedding a small mask in
    # the wrong region when dst holds more material than src)
    centroid = src_pts.mean(axis=0)
    spread = float(np.sqrt(((src_pts - centroid) ** 2).sum(axis=1).mean()))

    def motion(pose: Pose2) -> float:
        shift = pose.apply(centroid) - centroid
        return float(np.hypot(shift[0], shift[1])) + spread * abs(pose.theta)

    return min(results, key=lambda r: r[1] + ICP_MOTION_WEIGHT * motion(r[0]))[0]


def _icp_starts(src_pts, dst_pts, dst_mask) -> list[Pose2]:
    """Initial poses: identity, centroid alignments, and principal rotations.

    Centroid alignment is computed against the whole target and against
    each connected component of comparable size (the target of an
    entangled split holds several parts, and only one of them is the moved
    source). Principal-axis angle differences, with their 180 degree
    twins, seed the rotation when both shapes are anisotropic.
    """
    src_centroid = src_pts.mean(axis=0)
    angles = [0.0]
    src_axis = _principal_axis(src_pts)
    dst_axis = _principal_axis(dst_pts)
    if src_axis is not None and dst_axis is not None:
        delta = wrap_angle(dst_axis - src_axis)
        angles += [delta, wrap_angle(delta + math.pi)]
    targets = [dst_pts.mean(axis=0)]
    labeled, count = nd_label(dst_mask)
    if count > 1:
        for component in range(1, count + 1):
            pts = mask_points(labeled == component)
            if len(pts) >= 0.5 * len(src_pts):
                targets.append(pts.mean(axis=0))
    starts = [Pose2()]
    for theta in angles:
        rot = Pose2(0.0, 0.0, theta)
        for target in targets:
            shift = target - rot.apply(src_centroid)
            starts.append(Pose2(float(shift[0]), float(shift[1]), theta))
    return starts


def _principal_axis(pts: np.ndarray) -> float | None:
    """Orientation of the leading covariance eigenvector; None if too isotropic."""
    centered = pts - pts.mean(axis=0)
    cov = centered.T @ centered / len(pts)
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] <= 0 or evals[1] / max(evals[0], 1e-12) < 1.2:
        return None
    v = evecs[:, 1]
    return math.atan2(float(v[1]), float(v[0]))


def _fit_score(dists: np.ndarray) -> float:
    """Alignment quality: unexplained points dominate, mean breaks ties.

    A transformed source point is a miss when it lands farther than one
    rounded pixel from every destination point; plain mean distance alone
    cannot rank alignments of solid masks because interior self-matches
    swamp it.
    """
    return float((dists > 0.75).mean()) + 0.3 * float(dists.mean())


def _icp_refine(src_pts, dst_pts, tree, start: Pose2):
    """Run the ICP loop from one starting pose; returns (pose, score).

    The fit weights each correspondence by its distance so that satisfied
    self-matches do not anchor the pose in place (solid masks otherwise
    create wide local minima). The score is not monotone across
    iterations, so the loop stops only after ICP_PATIENCE iterations
    without progress, keeping the best pose seen.
    """
    pose = start
    best_pose, best_score = pose, math.inf
    stall = 0
    for _ in range(ICP_MAX_ITERS):
        moved = pose.apply(src_pts)
        dists, idx = tree.query(moved)
        score = _fit_score(dists)
        if score < best_score - ICP_TOL:
            best_pose, best_score = pose, score
            stall = 0
        else:
            if score < best_score:
                best_pose, best_score = pose, score
            stall += 1
            if stall >= ICP_PATIENCE:
                break
        pose = _rigid_fit(src_pts, dst_pts[idx], weights=dists + 0.2)
    # distance weighting walks out of wide minima but jitters near the
    # optimum; polish with the plain fit from the best pose found
    pose = best_pose
    for _ in range(ICP_POLISH_ITERS):
        moved = pose.apply(src_pts)
        dists, idx = tree.query(moved)
        score = _fit_score(dists)
        if score < best_score:
            best_pose, best_score = pose, score
        pose = _rigid_fit(src_pts, dst_pts[idx])
    return best_pose, best_score


def _rigid_fit(src: np.ndarray, dst: np.ndarray, weights=None) -> Pose2:
    """Closed-form (weighted) least-squares rigid transform mapping src onto dst."""
    if weights is None:
        weights = np.ones(len(src))
    w = weights / weights.sum()
    sc = (src * w[:, None]).sum(axis=0)
    dc = (dst * w[:, None]).sum(axis=0)
    s = src - sc
    d = dst - dc
    theta = math.atan2(float(np.sum(w * (s[:, 0] * d[:, 1] - s[:, 1] * d[:, 0]))),
                       float(np.sum(w * (s[:, 0] * d[:, 0] + s[:, 1] * d[:, 1]))))
    rot = Pose2(0.0, 0.0, theta)
    t = dc - rot.apply(sc)
    return Pose2(float(t[0]), float(t[1]), theta)


def transform_mask(mask: np.ndarray, transform: Pose2) -> np.ndarray:
    """Apply a rigid transform to a mask by moving pixel centers.

    Centers are transformed, rounded to the nearest pixel, clipped to the
    frame, and single-pixel holes opened by rotation rasterization are
    sealed with one radius-1 morphological closing.
    """
    mask = np.asarray(mask, dtype=bool)
    pts = mask_points(mask)
    out = np.zeros_like(mask)
    if len(pts) == 0:
        return out
    moved = np.rint(transform.apply(pts)).astype(int)
    np.clip(moved[:, 0], 0, mask.shape[1] - 1, out=moved[:, 0])
    np.clip(moved[:, 1], 0, mask.shape[0] - 1, out=moved[:, 1])
    out[moved[:, 1], moved[:, 0]] = True
    return binary_closing(out, structure=_DISK1)


def flatten(memory: PartMemory) -> np.ndarray:
    """Project the memory to a label image; most recently touched channel wins.

    Labels are 0 for background and channel index + 1 otherwise; exactly the
    non-empty channels appear.
    """
    labels = np.zeros((FRAME_SIZE, FRAME_SIZE), dtype=np.uint8)
    for c in reversed(memory.recency):
        labels[memory.channels[c]] = c + 1
    return labels


def channels_overlap(memory: PartMemory) -> bool:
    """True when any pixel belongs to more than one channel (flatten is lossy)."""
    return bool((memory.channels.sum(axis=0) > 1).any())


def prediction_masks(memory: PartMemory) -> list[np.ndarray]:
    """Flattened channels as score-ready masks; channels below A_MIN are dropped."""
    labels = flatten(memory)
    masks = []
    for c in sorted(memory.recency):
        m = labels == c + 1
        if int(m.sum()) >= A_MIN:
            masks.append(m)
    return masks
