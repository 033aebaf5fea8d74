import math

import numpy as np
import pytest

from partbench.errors import DegenerateMask
from partbench.geometry import Pose2, mask_points
from partbench.memory import (
    N_CHANNELS,
    PartMemory,
    UpdateCase,
    apply_update,
    channels_overlap,
    classify_update,
    flatten,
    icp_se2,
    transform_mask,
)
from tests.conftest import block_mask, rotated_shape_mask


def memory_with(channels: dict[int, np.ndarray], recency=None) -> PartMemory:
    banks = np.zeros((N_CHANNELS, 90, 90), dtype=bool)
    for idx, mask in channels.items():
        banks[idx] = mask
    recency = tuple(recency) if recency is not None else tuple(sorted(channels))
    return PartMemory(banks, recency)


# ---------------------------------------------------------------------------
# classification

def test_classify_empty_mask_no_movement():
    case, c = classify_update(PartMemory.empty(), np.zeros((90, 90), bool))
    assert case == UpdateCase.NO_MOVEMENT and c is None
    tiny = block_mask(0, 2, 0, 2)  # 4 px < A_MIN
    assert classify_update(PartMemory.empty(), tiny)[0] == UpdateCase.NO_MOVEMENT


def test_classify_disjoint_new_part():
    mem = memory_with({0: block_mask(0, 10, 0, 10)})
    m_t = block_mask(50, 60, 50, 60)  # 100 px, zero overlap
    case, c = classify_update(mem, m_t)
    assert case == UpdateCase.NEW_PART
    assert c == 1  # lowest free channel


def test_classify_split_new_part():
    big = block_mask(20, 40, 20, 40)          # 400 px channel
    m_t = block_mask(20, 30, 20, 30)          # 100 px fully inside
    case, c = classify_update(memory_with({2: big}), m_t)
    # r_M = 1.0, r_V = 0.25
    assert case == UpdateCase.SPLIT_NEW_PART and c == 2


def test_classify_entangled():
    small = block_mask(20, 30, 20, 30)        # 100 px channel
    m_t = block_mask(20, 40, 20, 40)          # 400 px covering it
    case, c = classify_update(memory_with({1: small}), m_t)
    # r_M = 0.25, r_V = 1.0
    assert case == UpdateCase.ENTANGLED_PARTS and c == 1


def test_classify_existing():
    mask = block_mask(10, 30, 40, 60)
    case, c = classify_update(memory_with({3: mask}), mask.copy())
    assert case == UpdateCase.EXISTING_PART and c == 3


def test_classify_full_memory_fallback():
    channels = {i: block_mask(2 + 12 * i, 10 + 12 * i, 2, 10) for i in range(5)}
    mem = memory_with(channels)
    m_t = block_mask(70, 80, 70, 80)  # disjoint from everything
    case, c = classify_update(mem, m_t)
    assert case == UpdateCase.FULL_MEMORY_FALLBACK
    assert c == 0  # zero overlap everywhere, ties to the lowest index


def test_classify_is_total():
    rng = np.random.default_rng(3)
    for _ in range(60):
        mem = PartMemory.empty()
        for idx in range(int(rng.integers(0, 6))):
            m = rotated_shape_mask(rng)
            mem, _ = apply_update(mem, m, m, "train")
        m_t = rotated_shape_mask(rng) if rng.random() < 0.8 else np.zeros((90, 90), bool)
        case, _ = classify_update(mem, m_t)
        assert isinstance(case, UpdateCase)


# ---------------------------------------------------------------------------
# updates

def test_apply_existing_replaces_exactly():
    old = block_mask(10, 30, 10, 30)
    new = block_mask(12, 32, 13, 33)
    mem, case = apply_update(memory_with({0: old}), old, new, "test")
    assert case == UpdateCase.EXISTING_PART
    assert np.array_equal(mem.channels[0], new)
    assert mem.recency == (0,)


def test_apply_split_numeric_case():
    big = block_mask(20, 40, 20, 40)          # 400 px
    m_t = block_mask(20, 30, 20, 30)          # 100 px inside
    m_t1 = block_mask(50, 60, 50, 70)         # moved part reappears elsewhere
    mem, case = apply_update(memory_with({0: big}), m_t, m_t1, "test")
    assert case == UpdateCase.SPLIT_NEW_PART
    assert int(mem.channels[0].sum()) == 300
    assert np.array_equal(mem.channels[0], big & ~m_t)
    assert np.array_equal(mem.channels[1], m_t1)
    assert not (mem.channels[0] & m_t).any()
    assert mem.recency == (1, 0)


def test_apply_new_part_goes_to_free_channel():
    mem0 = memory_with({0: block_mask(0, 10, 0, 10)})
    m = block_mask(40, 60, 40, 60)
    mem, case = apply_update(mem0, m, m, "train")
    assert case == UpdateCase.NEW_PART
    assert np.array_equal(mem.channels[1], m)
    assert mem.recency == (1, 0)


def test_apply_entangled_train_overwrites():
    small = block_mask(20, 30, 20, 30)
    m_t = block_mask(20, 40, 20, 40)
    m_t1 = block_mask(22, 42, 22, 42)
    mem, case = apply_update(memory_with({0: small}), m_t, m_t1, "train")
    assert case == UpdateCase.ENTANGLED_PARTS
    assert np.array_equal(mem.channels[0], m_t1)


def test_apply_entangled_test_splits_translation_plus_blob():
    # known part (asymmetric so registration locks), moved by (3, -2)
    part = block_mask(20, 35, 20, 45) | block_mask(35, 42, 20, 30)
    shifted = np.roll(np.roll(part, -2, axis=0), 3, axis=1)
    blob = block_mask(60, 80, 50, 80)          # larger second mover
    m_t = part | block_mask(60, 80, 47, 77)    # both parts moved
    m_t1 = shifted | blob
    mem, case = apply_update(memory_with({0: part}), m_t, m_t1, "test")
    assert case == UpdateCase.ENTANGLED_PARTS
    assert np.array_equal(mem.channels[0], shifted)
    assert np.array_equal(mem.channels[1], blob)
    # split pieces partition m_t1
    assert not (mem.channels[0] & mem.channels[1]).any()
    assert np.array_equal(mem.channels[0] | mem.channels[1], m_t1)


def test_apply_full_memory_fallback_merges():
    channels = {i: block_mask(2 + 12 * i, 10 + 12 * i, 2, 10) for i in range(5)}
    mem0 = memory_with(channels)
    m_t = block_mask(70, 80, 70, 80)
    m_t1 = block_mask(72, 82, 72, 82)
    mem, case = apply_update(mem0, m_t, m_t1, "test")
    assert case == UpdateCase.FULL_MEMORY_FALLBACK
    assert np.array_equal(mem.channels[0], channels[0] | m_t1)
    assert mem.recency[0] == 0


def test_apply_never_adds_more_than_one_channel():
    rng = np.random.default_rng(11)
    mem = PartMemory.empty()
    for _ in range(40):
        m_t = rotated_shape_mask(rng)
        m_t1 = rotated_shape_mask(rng)
        before = len(mem.non_empty())
        mem, _ = apply_update(mem, m_t, m_t1, "test")
        assert len(mem.non_empty()) <= before + 1
        assert set(mem.recency) == set(mem.non_empty())
        assert len(mem.recency) == len(set(mem.recency))


def test_no_movement_keeps_memory():
    mem0 = memory_with({0: block_mask(10, 20, 10, 20)})
    mem, case = apply_update(mem0, np.zeros((90, 90), bool), np.zeros((90, 90), bool), "test")
    assert case == UpdateCase.NO_MOVEMENT
    assert mem is mem0


# ---------------------------------------------------------------------------
# icp + transform

def test_icp_identity():
    m = block_mask(30, 50, 20, 60)
    pose = icp_se2(m, m)
    assert abs(pose.theta) < 1e-6
    assert math.hypot(pose.x, pose.y) < 1e-6


def test_icp_translation():
    m = block_mask(30, 50, 20, 60)
    shifted = np.roll(np.roll(m, -2, axis=0), 3, axis=1)
    pose = icp_se2(m, shifted)
    assert abs(pose.x - 3.0) < 0.25 and abs(pose.y + 2.0) < 0.25
    assert abs(pose.theta) < math.radians(0.5)


def test_icp_rotation_about_centroid():
    rng = np.random.default_rng(0)
    m = rotated_shape_mask(rng, notched=True)
    pts = mask_points(m)
    cen = pts.mean(axis=0)
    planted = Pose2.rotation_about(cen, math.radians(20))
    moved = np.rint(planted.apply(pts)).astype(int)
    dst = np.zeros_like(m)
    dst[moved[:, 1], moved[:, 0]] = True
    pose = icp_se2(m, dst)
    assert abs(math.degrees(pose.theta) - 20.0) < 2.0


def test_icp_degenerate():
    tiny = np.zeros((90, 90), bool)
    tiny[4, 4] = True
    tiny[4, 5] = True
    with pytest.raises(DegenerateMask):
        icp_se2(tiny, block_mask(10, 20, 10, 20))
    with pytest.raises(DegenerateMask):
        icp_se2(block_mask(10, 20, 10, 20), tiny)


def test_transform_mask_identity_and_shift():
    m = block_mask(30, 50, 20, 60)
    assert np.array_equal(transform_mask(m, Pose2()), m)
    shifted = transform_mask(m, Pose2.translation(1.0, 0.0))
    assert np.array_equal(shifted, np.roll(m, 1, axis=1))


def test_transform_mask_rotation_area_change_small():
    m = block_mask(30, 50, 25, 65)
    pts = mask_points(m)
    rot = Pose2.rotation_about(pts.mean(axis=0), math.radians(30))
    out = transform_mask(m, rot)
    assert abs(int(out.sum()) - int(m.sum())) <= 0.10 * int(m.sum())


# ---------------------------------------------------------------------------
# flatten

def test_flatten_empty_and_single():
    assert not flatten(PartMemory.empty()).any()
    m = block_mask(10, 20, 10, 20)
    mem = memory_with({2: m}, recency=(2,))
    labels = flatten(mem)
    assert np.array_equal(labels == 3, m)
    assert set(np.unique(labels)) == {0, 3}


def test_flatten_recency_wins_overlap():
    a = block_mask(10, 30, 10, 30)
    b = block_mask(20, 40, 20, 40)
    mem = memory_with({0: a, 1: b}, recency=(1, 0))  # channel 1 most recent
    labels = flatten(mem)
    overlap = a & b
    assert np.all(labels[overlap] == 2)
    assert channels_overlap(mem)
    mem_flipped = memory_with({0: a, 1: b}, recency=(0, 1))
    assert np.all(flatten(mem_flipped)[overlap] == 1)
