"""Reader for episode record directories written by the partbench harness.

Layout per episode directory: manifest.json plus obs_t.png / labels_t.png
(t = 0..T), and per step t: flow_t.bin (ATPF), masks_t.png (mask pair in
the red/green planes), push_t.png and optional hold_t.png encodings,
memory_{t+1}.png, and optional dense_t.png / zero_t.png reward maps.

ATPF: b"ATPF" | u32le width | u32le height | forward plane | backward
plane, each plane row-major float32 little-endian (dx, dy) pairs.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import RolloutFormatError

ATPF_MAGIC = b"ATPF"
SCHEMA_VERSION = 1


@dataclass(frozen=True)
class StepTuple:
    episode_dir: str
    step: int
    obs_t: np.ndarray          # (H, W, 3) uint8
    obs_t1: np.ndarray
    action: dict               # {"hold": [r, c] | None, "push": [r, c], "dir": int}
    encodings: dict            # {"hold": (H, W) uint8 | None, "push": (H, W) uint8}
    flow: tuple[np.ndarray, np.ndarray]   # forward, backward float32 (H, W, 2)
    masks: tuple[np.ndarray, np.ndarray]  # m_t, m_t1 bool
    reward: dict


def read_flow_file(path) -> tuple[np.ndarray, np.ndarray]:
    """Parse one ATPF file into (forward, backward) float32 arrays."""
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != ATPF_MAGIC:
        raise RolloutFormatError(f"{path}: missing ATPF magic")
    width, height = struct.unpack("<II", data[4:12])
    plane_bytes = width * height * 2 * 4
    if len(data) != 12 + 2 * plane_bytes:
        raise RolloutFormatError(f"{path}: wrong payload size")

    def plane(offset):
        flat = np.frombuffer(data, dtype="<f4", count=width * height * 2, offset=offset)
        return flat.reshape(height, width, 2).copy()

    return plane(12), plane(12 + plane_bytes)


def pack_flow(forward: np.ndarray, backward: np.ndarray) -> bytes:
    """Re-encode a flow pair; inverse of read_flow_file, used for verification."""
    height, width = forward.shape[:2]
    return (
        ATPF_MAGIC
        + struct.pack("<II", width, height)
        + np.ascontiguousarray(forward, dtype="<f4").tobytes()
        + np.ascontiguousarray(backward, dtype="<f4").tobytes()
    )


def read_rollouts(directory):
    """Yield StepTuple for every step of every episode under a directory.

    Accepts either one episode directory (containing manifest.json) or a
    directory of episode directories, ordered by name.
    """
    root = Path(directory)
    if (root / "manifest.json").exists():
        episode_dirs = [root]
    else:
        episode_dirs = sorted(p for p in root.iterdir() if (p / "manifest.json").exists())
    if not episode_dirs:
        raise RolloutFormatError(f"no episode manifests under {root}")
    for episode_dir in episode_dirs:
        yield from _read_episode(episode_dir)


def _read_episode(episode_dir: Path):
    manifest = json.loads((episode_dir / "manifest.json").read_text())
    if manifest.get("schema_version") != SCHEMA_VERSION:
        raise RolloutFormatError(
            f"{episode_dir}: unsupported schema {manifest.get('schema_version')}"
        )
    for t, entry in enumerate(manifest["steps"]):
        files = entry["files"]
        flow = read_flow_file(episode_dir / files["flow"])
        mask_png = _read_png(episode_dir / files["masks"])
        reward = dict(entry["reward"])
        if reward.get("dense_push"):
            reward["dense_push"] = _read_png(episode_dir / reward["dense_push"])
        if reward.get("dense_zero"):
            reward["dense_zero"] = _read_png(episode_dir / reward["dense_zero"]) > 127
        encodings = {
            "push": _read_png(episode_dir / files["push_enc"]),
            "hold": _read_png(episode_dir / files["hold_enc"]) if "hold_enc" in files else None,
        }
        yield StepTuple(
            episode_dir=str(episode_dir),
            step=t,
            obs_t=_read_png(episode_dir / f"obs_{t}.png", rgb=True),
            obs_t1=_read_png(episode_dir / f"obs_{t + 1}.png", rgb=True),
            action=entry["action"],
            encodings=encodings,
            flow=flow,
            masks=(mask_png[..., 0] > 127, mask_png[..., 1] > 127),
            reward=reward,
        )


def _read_png(path: Path, rgb: bool = False) -> np.ndarray:
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise RolloutFormatError(f"failed to decode {path}: {exc}") from exc
    if rgb and img.mode != "RGB":
        img = img.convert("RGB")
    return np.asarray(img)
