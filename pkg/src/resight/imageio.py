"""Grayscale image and displacement-field serialization.

Accepted upload formats are 8-bit grayscale PNG and binary PGM (P5);
everything downstream works on float grids in [0, 1]. Displacement
fields are exchanged in a small raw-float container ("SLPF") so golden
files can be compared across implementations byte for byte.
"""

from __future__ import annotations

import io
import struct

import numpy as np
from PIL import Image

SLPF_MAGIC = b"SLPF"


class ImageFormatError(ValueError):
    """Raised for undecodable or unsupported image payloads."""


# ---------------------------------------------------------------------------
# PGM (P5, 8-bit)


def write_pgm(path, pixels: np.ndarray) -> None:
    """Write a uint8 or [0,1]-float grid as binary PGM (maxval 255)."""
    data = encode_pgm(pixels)
    with open(path, "wb") as fh:
        fh.write(data)


def encode_pgm(pixels: np.ndarray) -> bytes:
    grid = to_uint8(pixels)
    h, w = grid.shape
    header = f"P5\n{w} {h}\n255\n".encode("ascii")
    return header + grid.tobytes()


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())


def decode_pgm(data: bytes) -> np.ndarray:
    """Parse binary P5 into a uint8 array. Comments and odd whitespace ok."""
    if not data.startswith(b"P5"):
        raise ImageFormatError("not a binary PGM (P5) payload")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ImageFormatError("truncated PGM header")
        fields.append(data[start:pos])
    pos += 1  # single whitespace byte after maxval
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as exc:
        raise ImageFormatError(f"bad PGM header fields: {fields}") from exc
    if maxval != 255:
        raise ImageFormatError(f"unsupported PGM maxval {maxval} (want 255)")
    expected = width * height
    body = data[pos : pos + expected]
    if len(body) != expected:
        raise ImageFormatError("PGM pixel data shorter than header promises")
    return np.frombuffer(body, dtype=np.uint8).reshape(height, width).copy()


# ---------------------------------------------------------------------------
# Generic decode / conversions


def decode_image(data: bytes) -> np.ndarray:
    """Decode PGM(P5) or 8-bit grayscale PNG into a uint8 grid."""
    if data[:2] == b"P5":
        return decode_pgm(data)
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        img = Image.open(io.BytesIO(data))
        if img.mode != "L":
            raise ImageFormatError(f"PNG mode {img.mode!r}; only 8-bit grayscale accepted")
        return np.asarray(img, dtype=np.uint8).copy()
    raise ImageFormatError("unsupported image payload (accepts PGM P5 or grayscale PNG)")


def encode_png(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(to_uint8(pixels), mode="L").save(buf, format="PNG")
    return buf.getvalue()


def to_uint8(pixels: np.ndarray) -> np.ndarray:
    arr = np.asarray(pixels)
    if arr.ndim != 2:
        raise ImageFormatError(f"expected a 2-D grid, got shape {arr.shape}")
    if arr.dtype == np.uint8:
        return arr
    return np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)


def to_float(pixels: np.ndarray) -> np.ndarray:
    """uint8 grid -> float64 in [0, 1]; float input is passed through."""
    arr = np.asarray(pixels)
    if arr.dtype == np.uint8:
        return arr.astype(np.float64) / 255.0
    return arr.astype(np.float64)


# ---------------------------------------------------------------------------
# SLPF: raw little-endian float displacement-field container


def encode_field(u: np.ndarray, v: np.ndarray) -> bytes:
    """Pack u/v grids: magic "SLPF", u32 H, u32 W, f32 u-grid, f32 v-grid."""
    u = np.asarray(u, dtype="<f4")
    v = np.asarray(v, dtype="<f4")
    if u.shape != v.shape or u.ndim != 2:
        raise ValueError(f"u/v must be equal 2-D grids, got {u.shape} vs {v.shape}")
    h, w = u.shape
    return SLPF_MAGIC + struct.pack("<II", h, w) + u.tobytes() + v.tobytes()


def decode_field(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    if data[:4] != SLPF_MAGIC:
        raise ImageFormatError("bad field magic (want SLPF)")
    h, w = struct.unpack_from("<II", data, 4)
    n = h * w * 4
    if len(data) != 12 + 2 * n:
        raise ImageFormatError("field payload length mismatch")
    u = np.frombuffer(data, dtype="<f4", count=h * w, offset=12).reshape(h, w)
    v = np.frombuffer(data, dtype="<f4", count=h * w, offset=12 + n).reshape(h, w)
    return u.astype(np.float64), v.astype(np.float64)
