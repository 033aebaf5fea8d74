"""Motion masks from flow, spatial action encodings, and mask corruption.

The mask oracle thresholds analytic flow magnitude, which is exactly the
supervision signal a learned motion segmenter would be trained against.
The corruption model emulates the errors of such a learned segmenter so
that imperfect-mask baselines can be evaluated without training anything.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import binary_dilation, binary_erosion

from .geometry import FRAME_SIZE
from .seeding import NS_CORRUPT, rng_for
from .sim import EPS_FLOW, FlowField, direction_vector, flow_norm

TRAIL_STEPS = 5      # gaussians along the push trail
TRAIL_SPACING = 3.0  # px between trail centers
TRAIL_DECAY = 0.8    # peak ratio between consecutive trail gaussians


@dataclass(frozen=True)
class MotionMaskPair:
    """Moved-pixel masks aligned to the frames before and after an action."""

    m_t: np.ndarray
    m_t1: np.ndarray


@dataclass(frozen=True)
class CorruptionModel:
    boundary_erode_dilate_prob: float = 0.0
    drop_fragment_prob: float = 0.0
    bleed_prob: float = 0.0
    seed: int = 0

    def __post_init__(self):
        for p in (self.boundary_erode_dilate_prob, self.drop_fragment_prob, self.bleed_prob):
            if not (0.0 <= p <= 1.0):
                raise ValueError("probabilities must lie in [0, 1]")


def motion_masks_from_flow(flow: FlowField) -> MotionMaskPair:
    """Threshold flow magnitude at EPS_FLOW to recover the moved pixels."""
    m_t = flow_norm(flow.forward) > EPS_FLOW
    m_t1 = flow_norm(flow.backward) > EPS_FLOW
    return MotionMaskPair(m_t, m_t1)


def _gaussian_max(centers_and_peaks) -> np.ndarray:
    ys, xs = np.mgrid[0:FRAME_SIZE, 0:FRAME_SIZE]
    out = np.zeros((FRAME_SIZE, FRAME_SIZE))
    for (cx, cy), peak in centers_and_peaks:
        d2 = (xs - cx) ** 2 + (ys - cy) ** 2
        np.maximum(out, peak * np.exp(-0.5 * d2), out=out)
    return out


def encode_hold(pixel: tuple[int, int]) -> np.ndarray:
    """Isotropic unit-peak Gaussian (sigma 1 px) at the hold pixel."""
    r, c = pixel
    _check_pixel(pixel)
    return _gaussian_max([((float(c), float(r)), 1.0)])


def encode_push(pixel: tuple[int, int], direction: int) -> np.ndarray:
    """Unit-peak Gaussian at the push pixel with a decaying trail along the push.

    Trail centers that leave the frame are skipped; superposition is a
    pointwise max so values stay in [0, 1].
    """
    _check_pixel(pixel)
    if not (0 <= direction <= 7):
        raise ValueError("direction must be in 0..7")
    r, c = pixel
    u = direction_vector(direction)
    centers = []
    for k in range(TRAIL_STEPS):
        cx = c + k * TRAIL_SPACING * u[0]
        cy = r + k * TRAIL_SPACING * u[1]
        if not (0 <= cx <= FRAME_SIZE - 1 and 0 <= cy <= FRAME_SIZE - 1):
            continue
        centers.append(((cx, cy), TRAIL_DECAY**k))
    return _gaussian_max(centers)


def _check_pixel(pixel) -> None:
    r, c = pixel
    if not (0 <= r < FRAME_SIZE and 0 <= c < FRAME_SIZE):
        raise ValueError(f"pixel {pixel} outside the frame")


def corrupt_masks(pair: MotionMaskPair, model: CorruptionModel) -> MotionMaskPair:
    """Apply the corruption model to both masks, deterministically in model.seed.

    Per mask, in order and each gated by its probability: a one-pixel erode
    or dilate, removal of one connected bite of at most 15% of the area, and
    a one-pixel bleed into adjacent off-mask pixels. Empty masks pass
    through untouched.
    """
    rng = rng_for(NS_CORRUPT, model.seed)
    return MotionMaskPair(
        _corrupt_one(pair.m_t, model, rng),
        _corrupt_one(pair.m_t1, model, rng),
    )


_BOX = np.ones((3, 3), dtype=bool)


def _corrupt_one(mask: np.ndarray, model: CorruptionModel, rng: np.random.Generator) -> np.ndarray:
    out = mask.astype(bool).copy()
    if not out.any():
        return out
    if rng.random() < model.boundary_erode_dilate_prob:
        if rng.random() < 0.5:
            out = binary_erosion(out, structure=_BOX)
        else:
            out = binary_dilation(out, structure=_BOX)
    if rng.random() < model.drop_fragment_prob and out.any():
        out = _drop_fragment(out, rng)
    if rng.random() < model.bleed_prob and out.any():
        out = binary_dilation(out, structure=_BOX)
    return out


def _drop_fragment(mask: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Remove one connected bite of at most 15% of the mask area."""
    area = int(mask.sum())
    budget = int(0.15 * area)
    if budget < 1:
        return mask
    rows, cols = np.nonzero(mask)
    start = int(rng.integers(len(rows)))
    out = mask.copy()
    queue = deque([(int(rows[start]), int(cols[start]))])
    seen = {queue[0]}
    removed = 0
    while queue and removed < budget:
        r, c = queue.popleft()
        out[r, c] = False
        removed += 1
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nr, nc = r + dr, c + dc
            if 0 <= nr < mask.shape[0] and 0 <= nc < mask.shape[1]:
                if out[nr, nc] and (nr, nc) not in seen:
                    seen.add((nr, nc))
                    queue.append((nr, nc))
    return out
