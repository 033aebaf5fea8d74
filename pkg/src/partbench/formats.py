"""Image and flow file formats used by episode records.

Observations are 8-bit RGB PNGs, label and memory images paletted PNGs
whose pixel values are the raw labels, motion mask pairs are packed into
the red/green planes of an RGB PNG, dense reward maps are 16-bit grayscale
PNGs, and flow fields use the ATPF binary layout:

    b"ATPF" | u32le width | u32le height | forward plane | backward plane

with each plane row-major float32 little-endian (dx, dy) pairs.
"""
from __future__ import annotations

import io
import struct

import numpy as np
from PIL import Image

from .errors import CorruptRecord
from .sim import FlowField

ATPF_MAGIC = b"ATPF"

# palette for label/memory images: background + up to 5 parts
LABEL_PALETTE = [
    (25, 25, 25),
    (230, 70, 70),
    (80, 200, 90),
    (80, 120, 235),
    (235, 200, 60),
    (200, 90, 220),
]


def rgb_to_png_bytes(rgb: np.ndarray) -> bytes:
    """Encode a float RGB image in [0, 1]; values must sit on the 8-bit grid."""
    data = np.round(np.asarray(rgb) * 255.0).astype(np.uint8)
    return _save_png(Image.fromarray(data, mode="RGB"))


def png_bytes_to_rgb(data: bytes, name: str = "<png>") -> np.ndarray:
    return _load_png(data, name, mode="RGB").astype(np.float64) / 255.0


def labels_to_png_bytes(labels: np.ndarray) -> bytes:
    img = Image.fromarray(np.asarray(labels, dtype=np.uint8), mode="P")
    palette = []
    for color in LABEL_PALETTE:
        palette.extend(color)
    img.putpalette(palette + [0] * (768 - len(palette)))
    return _save_png(img)


def png_bytes_to_labels(data: bytes, name: str = "<png>") -> np.ndarray:
    return _load_png(data, name, mode=None).astype(np.uint8)


def mask_pair_to_png_bytes(m_t: np.ndarray, m_t1: np.ndarray) -> bytes:
    packed = np.zeros(m_t.shape + (3,), dtype=np.uint8)
    packed[..., 0] = np.asarray(m_t, dtype=bool) * 255
    packed[..., 1] = np.asarray(m_t1, dtype=bool) * 255
    return _save_png(Image.fromarray(packed, mode="RGB"))


def png_bytes_to_mask_pair(data: bytes, name: str = "<png>") -> tuple[np.ndarray, np.ndarray]:
    arr = _load_png(data, name, mode="RGB")
    return arr[..., 0] > 127, arr[..., 1] > 127


def gray16_to_png_bytes(values: np.ndarray) -> bytes:
    """Encode floats in [0, 1] on the 16-bit grid as a 16-bit grayscale PNG."""
    data = np.round(np.asarray(values) * 65535.0).astype(np.uint16)
    return _save_png(Image.fromarray(data))


def png_bytes_to_gray16(data: bytes, name: str = "<png>") -> np.ndarray:
    arr = _load_png(data, name, mode=None)
    return arr.astype(np.float64) / 65535.0


def mask_to_png_bytes(mask: np.ndarray) -> bytes:
    return _save_png(Image.fromarray(np.asarray(mask, dtype=bool).astype(np.uint8) * 255, mode="L"))


def png_bytes_to_mask(data: bytes, name: str = "<png>") -> np.ndarray:
    return _load_png(data, name, mode="L") > 127


def encoding_to_png_bytes(encoding: np.ndarray) -> bytes:
    """Action encodings export as value * 255, rounded."""
    return _save_png(Image.fromarray(np.round(encoding * 255.0).astype(np.uint8), mode="L"))


def quantize16(values: np.ndarray) -> np.ndarray:
    """Snap floats in [0, 1] to the 16-bit grid used by dense map PNGs."""
    return np.round(np.asarray(values) * 65535.0) / 65535.0


def _save_png(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _load_png(data: bytes, name: str, mode: str | None) -> np.ndarray:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:
        raise CorruptRecord(f"failed to decode PNG {name}: {exc}") from exc
    if mode is not None and img.mode != mode:
        img = img.convert(mode)
    return np.asarray(img)


def flow_to_bytes(flow: FlowField) -> bytes:
    height, width = flow.forward.shape[:2]
    header = ATPF_MAGIC + struct.pack("<II", width, height)
    forward = np.ascontiguousarray(flow.forward, dtype="<f4").tobytes()
    backward = np.ascontiguousarray(flow.backward, dtype="<f4").tobytes()
    return header + forward + backward


def bytes_to_flow(data: bytes, name: str = "<flow>") -> FlowField:
    if len(data) < 12 or data[:4] != ATPF_MAGIC:
        raise CorruptRecord(f"{name}: missing ATPF magic")
    width, height = struct.unpack("<II", data[4:12])
    plane_bytes = width * height * 2 * 4
    if len(data) != 12 + 2 * plane_bytes:
        raise CorruptRecord(f"{name}: truncated or oversized flow payload")
    def plane(offset: int) -> np.ndarray:
        flat = np.frombuffer(data, dtype="<f4", count=width * height * 2, offset=offset)
        return flat.reshape(height, width, 2).copy()
    return FlowField(plane(12), plane(12 + plane_bytes))
