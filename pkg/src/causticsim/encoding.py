"""Raster encoders: 8/16-bit PNG (via Pillow) and portable float maps.

PFM rows are stored bottom-to-top by convention; arrays here are always
top row first.  Little-endian output (negative scale) is used throughout.
"""

from __future__ import annotations

import io
import os
from pathlib import Path

import numpy as np
from PIL import Image, PngImagePlugin

from .errors import DimensionError, ParseError

MAX_DIM = 1 << 16  # PNG allows 2**31-1 but nothing we render comes close


def _check_dims(arr: np.ndarray) -> None:
    if arr.ndim < 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionError(f"raster must be at least 1x1, got shape {arr.shape}")
    if arr.shape[0] > MAX_DIM or arr.shape[1] > MAX_DIM:
        raise DimensionError(f"raster {arr.shape[1]}x{arr.shape[0]} exceeds {MAX_DIM} pixels per side")


def _integer_raster(raster, top: int) -> np.ndarray:
    arr = np.asarray(raster)
    _check_dims(arr)
    if arr.dtype.kind == "f":
        if not np.all(np.isfinite(arr)):
            raise ValueError("non-finite values cannot be stored in an integer raster")
        if np.any(arr != np.round(arr)):
            raise ValueError("integer raster holds fractional values")
    elif arr.dtype.kind not in "iub":
        raise ValueError(f"unsupported raster dtype {arr.dtype}")
    if arr.size and (arr.min() < 0 or arr.max() > top):
        raise ValueError(f"raster values must lie in [0, {top}]")
    return arr


def _png_bytes(img: Image.Image) -> bytes:
    buf = io.BytesIO()
    # empty pnginfo keeps the output free of anything but pixel data
    img.save(buf, format="PNG", compress_level=6, pnginfo=PngImagePlugin.PngInfo())
    return buf.getvalue()


def encode_png8(raster) -> bytes:
    """Gray (H, W) or RGB (H, W, 3) 8-bit raster to PNG bytes."""
    arr = _integer_raster(raster, 255).astype(np.uint8)
    if arr.ndim == 3 and arr.shape[2] == 1:
        arr = arr[:, :, 0]
    if arr.ndim == 2:
        return _png_bytes(Image.fromarray(arr))
    if arr.ndim == 3 and arr.shape[2] == 3:
        return _png_bytes(Image.fromarray(arr))
    raise DimensionError(f"8-bit PNG needs 1 or 3 channels, got shape {arr.shape}")


def encode_png16(raster) -> bytes:
    """Single-channel 16-bit raster to PNG bytes."""
    arr = _integer_raster(raster, 65535)
    if arr.ndim != 2:
        raise DimensionError(f"16-bit PNG holds one channel, got shape {arr.shape}")
    return _png_bytes(Image.fromarray(arr.astype(np.uint16)))


def decode_png(data: bytes) -> np.ndarray:
    try:
        img = Image.open(io.BytesIO(data))
        img.load()
    except Exception as exc:  # Pillow raises a zoo of types
        raise ParseError(f"not a decodable PNG: {exc}") from exc
    if img.mode in ("I;16", "I;16B", "I;16L"):
        return np.array(img, dtype=np.uint16)
    if img.mode == "I":
        return np.array(img).astype(np.uint16)
    if img.mode in ("L", "RGB"):
        return np.array(img, dtype=np.uint8)
    if img.mode == "1":
        return np.array(img.convert("L"), dtype=np.uint8)
    return np.array(img.convert("RGB"), dtype=np.uint8)


decode_png8 = decode_png
decode_png16 = decode_png


def encode_pfm(raster) -> bytes:
    """(H, W) or (H, W, 3) float raster to little-endian PFM bytes."""
    arr = np.asarray(raster, dtype=np.float32)
    _check_dims(arr)
    if arr.ndim == 2 or (arr.ndim == 3 and arr.shape[2] == 1):
        arr = arr.reshape(arr.shape[0], arr.shape[1])
        header = b"Pf"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        header = b"PF"
    else:
        raise DimensionError(f"PFM holds 1 or 3 channels, got shape {arr.shape}")
    h, w = arr.shape[:2]
    body = np.ascontiguousarray(arr[::-1]).astype("<f4").tobytes()
    return header + b"\n" + f"{w} {h}\n-1.0\n".encode("ascii") + body


def decode_pfm(data: bytes) -> np.ndarray:
    try:
        kind, dims, scale, body = data.split(b"\n", 3)
        w, h = (int(v) for v in dims.split())
        scale_v = float(scale)
    except ValueError as exc:
        raise ParseError("malformed PFM header") from exc
    if kind == b"PF":
        channels = 3
    elif kind == b"Pf":
        channels = 1
    else:
        raise ParseError(f"unknown PFM identifier {kind!r}")
    dtype = "<f4" if scale_v < 0 else ">f4"
    need = w * h * channels * 4
    if len(body) < need:
        raise ParseError("truncated PFM body")
    arr = np.frombuffer(body[:need], dtype=dtype).astype(np.float32)
    arr = arr.reshape((h, w, channels) if channels == 3 else (h, w))
    return np.ascontiguousarray(arr[::-1])


def write_bytes_atomic(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".part")
    tmp.write_bytes(data)
    os.replace(tmp, path)


def write_png8(path, raster) -> None:
    write_bytes_atomic(path, encode_png8(raster))


def write_png16(path, raster) -> None:
    write_bytes_atomic(path, encode_png16(raster))


def write_pfm(path, raster) -> None:
    write_bytes_atomic(path, encode_pfm(raster))


def read_png(path) -> np.ndarray:
    return decode_png(Path(path).read_bytes())


def read_pfm(path) -> np.ndarray:
    return decode_pfm(Path(path).read_bytes())
