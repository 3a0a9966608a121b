"""Image buffers, PNG round trips, and the 16-bit depth codec.

Color images travel through the pipeline as float64 arrays in [0, 1] with
shape (H, W, 3); single-channel maps as (H, W).  Everything written to disk
goes through the helpers here so that byte output is deterministic and
writes are atomic (tmp file + rename).
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
from PIL import Image

DEPTH_BACKGROUND = np.inf
_DEPTH_LEVELS = 65534  # codes 1..65535 span [depth_min, depth_max]; 0 = background


def _atomic_write(path, write_fn):
    path = Path(path)
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    try:
        write_fn(tmp)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def write_png(path, array) -> None:
    """Write uint8 (H,W) or (H,W,3) / uint16 (H,W) arrays as PNG, atomically."""
    array = np.asarray(array)
    if array.dtype == np.uint16:
        if array.ndim != 2:
            raise ValueError("16-bit PNG output must be single channel")
        img = Image.fromarray(array)
    elif array.dtype == np.uint8:
        img = Image.fromarray(array)
    else:
        raise ValueError(f"unsupported dtype for PNG: {array.dtype}")
    _atomic_write(path, lambda tmp: img.save(tmp, format="PNG"))


def read_png(path) -> np.ndarray:
    """Read a PNG to uint8 (grayscale/RGB) or uint16 (16-bit grayscale)."""
    with Image.open(path) as img:
        if img.mode in ("I;16", "I"):
            arr = np.asarray(img)
            return arr.astype(np.uint16)
        if img.mode == "RGBA":
            img = img.convert("RGB")
        elif img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        return np.asarray(img).astype(np.uint8)


def to_unit(img_u8) -> np.ndarray:
    return np.asarray(img_u8).astype(np.float64) / 255.0


def to_u8(img_unit) -> np.ndarray:
    return np.rint(np.clip(img_unit, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_json(path, payload) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True)
    _atomic_write(path, lambda tmp: tmp.write_text(text + "\n"))


def read_json(path):
    return json.loads(Path(path).read_text())


def encode_depth(depth):
    """Quantize a float depth map to uint16 codes.

    Background (non-finite) pixels get code 0; foreground maps linearly onto
    codes 1..65535 over [depth_min, depth_max].  Returns (codes, depth_min,
    depth_max); an all-background map returns (zeros, 0.0, 0.0).
    """
    depth = np.asarray(depth, dtype=np.float64)
    fg = np.isfinite(depth)
    codes = np.zeros(depth.shape, dtype=np.uint16)
    if not fg.any():
        return codes, 0.0, 0.0
    dmin = float(depth[fg].min())
    dmax = float(depth[fg].max())
    if dmax > dmin:
        scaled = (depth[fg] - dmin) / (dmax - dmin) * _DEPTH_LEVELS
    else:
        scaled = np.zeros(int(fg.sum()))
    codes[fg] = (np.rint(scaled) + 1).astype(np.uint16)
    return codes, dmin, dmax


def decode_depth(codes, depth_min, depth_max) -> np.ndarray:
    """Inverse of encode_depth; code 0 becomes the background sentinel (inf)."""
    codes = np.asarray(codes)
    depth = np.full(codes.shape, DEPTH_BACKGROUND, dtype=np.float64)
    fg = codes > 0
    depth[fg] = depth_min + (codes[fg].astype(np.float64) - 1.0) / _DEPTH_LEVELS * (
        depth_max - depth_min
    )
    return depth


def sample_bilinear(array, px, py):
    """Bilinearly sample `array` at float pixel coordinates (clamped at edges).

    Args:
        array: (H, W) or (H, W, C) float array.
        px, py: arrays of x (column) and y (row) coordinates in pixel units,
            where integer values land exactly on pixel centers.

    Returns:
        Sampled values with shape px.shape (+ (C,) for multi-channel input).
    """
    array = np.asarray(array, dtype=np.float64)
    h, w = array.shape[:2]
    px = np.clip(np.asarray(px, dtype=np.float64), 0.0, w - 1.0)
    py = np.clip(np.asarray(py, dtype=np.float64), 0.0, h - 1.0)
    x0 = np.clip(np.floor(px).astype(np.int64), 0, w - 2) if w > 1 else np.zeros_like(px, np.int64)
    y0 = np.clip(np.floor(py).astype(np.int64), 0, h - 2) if h > 1 else np.zeros_like(py, np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = px - x0
    fy = py - y0
    if array.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    v00 = array[y0, x0]
    v01 = array[y0, x1]
    v10 = array[y1, x0]
    v11 = array[y1, x1]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy
