import math

import numpy as np
import pytest

from partbench.assets import build_benchmark, save_benchmark
from partbench.geometry import FRAME_SIZE


def block_mask(r0, r1, c0, c1):
    m = np.zeros((FRAME_SIZE, FRAME_SIZE), dtype=bool)
    m[r0:r1, c0:c1] = True
    return m


def rotated_shape_mask(rng, notched=False):
    """Random solid rectangle/ellipse, optionally with a notch and bump."""
    cx, cy = rng.uniform(32, 58, 2)
    a = rng.uniform(13, 18)
    b = rng.uniform(5, a / 1.8)
    th = rng.uniform(0, np.pi)
    ys, xs = np.mgrid[0:FRAME_SIZE, 0:FRAME_SIZE]
    lx = (xs - cx) * math.cos(th) + (ys - cy) * math.sin(th)
    ly = -(xs - cx) * math.sin(th) + (ys - cy) * math.cos(th)
    if not notched:
        if rng.random() < 0.5:
            return (np.abs(lx) <= a) & (np.abs(ly) <= b)
        return (lx / a) ** 2 + (ly / b) ** 2 <= 1
    body = (np.abs(lx) <= a) & (np.abs(ly) <= b)
    notch = (lx > a * 0.3) & (ly > 0)
    bump = (np.abs(lx + a * 0.7) <= a * 0.25) & (np.abs(ly + b) <= b * 0.9)
    return (body & ~notch) | bump


def barbell_mask(rng):
    """Two offset solid blobs; the long baseline makes rotation identifiable."""
    cx, cy = rng.uniform(36, 54, 2)
    axis = rng.uniform(0, np.pi)
    u = np.array([math.cos(axis), math.sin(axis)])
    d = rng.uniform(10, 14)
    ys, xs = np.mgrid[0:FRAME_SIZE, 0:FRAME_SIZE]
    mask = np.zeros((FRAME_SIZE, FRAME_SIZE), bool)
    for sign, scale in ((-1.0, 1.0), (1.0, 0.6)):
        bx, by = cx + sign * d * u[0], cy + sign * d * u[1]
        a = rng.uniform(8, 11) * scale
        b = rng.uniform(4, 6) * scale
        phi = axis + rng.uniform(-0.5, 0.5)
        lx = (xs - bx) * math.cos(phi) + (ys - by) * math.sin(phi)
        ly = -(xs - bx) * math.sin(phi) + (ys - by) * math.cos(phi)
        mask |= (np.abs(lx) <= a) & (np.abs(ly) <= b)
    return mask


@pytest.fixture(scope="session")
def bench2_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("bench") / "bench2.json"
    save_benchmark(build_benchmark(100, {2: (50, 2)}), path)
    return path


@pytest.fixture(scope="session")
def bench3_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("bench") / "bench3.json"
    save_benchmark(build_benchmark(101, {3: (20, 2)}), path)
    return path


@pytest.fixture(scope="session")
def small_bench_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("bench") / "small.json"
    save_benchmark(build_benchmark(5, {2: (2, 1), 3: (2, 1)}), path)
    return path
