"""Per-step hold/push supervision targets for all four reward variants.

Scalar targets follow the reward truth table exactly; absent values mean
"no supervision". When a moved part earns a push reward, the push target is
additionally densified from the normalized flow magnitude, and when touch
reports no contact despite motion, all zero-flow pixels are marked safe to
supervise with zero.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InconsistentContext
from .memory import UpdateCase
from .sim import EPS_FLOW, TouchReading


class RewardVariant(Enum):
    FULL_TOUCH = "full"
    NO_TOUCH = "notouch"
    NO_HOLD = "nohold"
    NO_PART = "nopart"


@dataclass(frozen=True)
class StepContext:
    """Everything the reward rule looks at for one step."""

    flow_present: bool
    touch: TouchReading
    case: UpdateCase
    flow_norm_map: np.ndarray
    hold_pixel: tuple[int, int] | None


@dataclass(frozen=True)
class RewardTarget:
    hold_value: float | None
    push_value: float | None
    dense_push: np.ndarray | None
    dense_zero_mask: np.ndarray | None
    hold_pixel_zero_on_push: bool


# case groups as the truth table sees them
_NEW = (UpdateCase.NEW_PART, UpdateCase.SPLIT_NEW_PART)
_ENTANGLED = (UpdateCase.ENTANGLED_PARTS, UpdateCase.FULL_MEMORY_FALLBACK)


def compute_reward(ctx: StepContext, variant: RewardVariant) -> RewardTarget:
    """Evaluate one reward variant on a step context.

    Raises InconsistentContext when the flow flag and the update case
    disagree (flow present iff the case is not NO_MOVEMENT).
    """
    if ctx.flow_present == (ctx.case == UpdateCase.NO_MOVEMENT):
        raise InconsistentContext(
            f"flow_present={ctx.flow_present} contradicts case={ctx.case.value}"
        )

    hold: float | None = None
    push: float | None = None
    dense_scale: float | None = None
    zero_mask = False
    touched = bool(ctx.touch.shear)

    if variant == RewardVariant.FULL_TOUCH:
        if not ctx.flow_present:
            push = 0.0
        elif not touched:
            hold = 0.0
            zero_mask = True
        elif ctx.case in _NEW:
            hold, push, dense_scale = 1.0, 1.0, 1.0
        elif ctx.case == UpdateCase.EXISTING_PART:
            hold, push, dense_scale = 0.5, 0.5, 0.5
        else:  # entangled
            hold = 0.0
    elif variant == RewardVariant.NO_TOUCH:
        if not ctx.flow_present:
            push = 0.0
        elif ctx.case in _NEW:
            hold, push, dense_scale = 1.0, 1.0, 1.0
        elif ctx.case == UpdateCase.EXISTING_PART:
            hold, push, dense_scale = 0.5, 0.5, 0.5
        else:
            hold = 0.0
    elif variant == RewardVariant.NO_HOLD:
        if not ctx.flow_present:
            push = 0.0
        elif ctx.case in _NEW:
            push, dense_scale = 1.0, 1.0
        elif ctx.case == UpdateCase.EXISTING_PART:
            push, dense_scale = 0.5, 0.5
        else:
            push = 0.0
    elif variant == RewardVariant.NO_PART:
        if not ctx.flow_present:
            push = 0.0
        elif touched:
            hold, push, dense_scale = 1.0, 1.0, 1.0
        else:
            hold = 0.0
            zero_mask = True
    else:
        raise ValueError(f"unknown variant {variant}")

    dense = None
    if dense_scale is not None:
        dense = _dense_push(ctx.flow_norm_map, dense_scale, ctx.hold_pixel)
    dense_zero = None
    if zero_mask:
        dense_zero = ctx.flow_norm_map <= EPS_FLOW
    return RewardTarget(
        hold_value=hold,
        push_value=push,
        dense_push=dense,
        dense_zero_mask=dense_zero,
        hold_pixel_zero_on_push=(push is not None and ctx.hold_pixel is not None),
    )


def _dense_push(norm_map: np.ndarray, scale: float, hold_pixel) -> np.ndarray:
    peak = float(norm_map.max())
    if peak <= 0.0:
        dense = np.zeros_like(norm_map, dtype=float)
    else:
        dense = norm_map.astype(float) * (scale / peak)
    if hold_pixel is not None:
        dense = dense.copy()
        dense[hold_pixel[0], hold_pixel[1]] = 0.0
    return dense
