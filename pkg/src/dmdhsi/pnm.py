"""Binary PGM (P5) / PPM (P6) reading and writing.

Maxval <= 255 uses one byte per sample; larger maxvals use two big-endian bytes,
as netpbm does.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from dmdhsi.errors import PnmFormatError


def _encode(magic: bytes, arr: np.ndarray, maxval: int) -> bytes:
    if not 1 <= maxval <= 65535:
        raise ValueError(f"maxval must be in [1, 65535], got {maxval}")
    a = np.asarray(arr)
    if a.size and (a.min() < 0 or a.max() > maxval):
        raise ValueError(f"samples outside [0, {maxval}]")
    if np.issubdtype(a.dtype, np.floating) and not np.array_equal(a, np.round(a)):
        raise ValueError("PNM samples must be integers")
    dtype = ">u1" if maxval < 256 else ">u2"
    h, w = a.shape[:2]
    header = b"%s\n%d %d\n%d\n" % (magic, w, h, maxval)
    return header + a.astype(dtype).tobytes()


def write_pgm(path, image, maxval: int = 255) -> None:
    image = np.asarray(image)
    if image.ndim != 2:
        raise ValueError("PGM needs a 2-D array")
    _atomic_write(path, _encode(b"P5", image, maxval))


def write_ppm(path, image, maxval: int = 255) -> None:
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("PPM needs an (H, W, 3) array")
    _atomic_write(path, _encode(b"P6", image, maxval))


def _atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


def _tokens(buf: bytes, count: int, pos: int):
    out = []
    n = len(buf)
    while len(out) < count:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise PnmFormatError("truncated header")
        out.append(buf[start:pos])
    return out, pos + 1  # exactly one whitespace byte precedes the raster


def read_pnm(path):
    """Return ``(array, maxval)``; arrays are (H, W) for P5 and (H, W, 3) for P6."""
    buf = Path(path).read_bytes()
    if buf[:2] not in (b"P5", b"P6"):
        raise PnmFormatError(f"{path}: not a binary PGM/PPM file")
    channels = 1 if buf[:2] == b"P5" else 3
    try:
        (w, h, maxval), pos = _tokens(buf, 3, 2)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError:
        raise PnmFormatError(f"{path}: malformed header") from None
    dtype = ">u1" if maxval < 256 else ">u2"
    count = w * h * channels
    raster = buf[pos:]
    if len(raster) < count * np.dtype(dtype).itemsize:
        raise PnmFormatError(f"{path}: truncated raster")
    arr = np.frombuffer(raster, dtype=dtype, count=count).astype(np.uint16)
    shape = (h, w) if channels == 1 else (h, w, 3)
    return arr.reshape(shape), maxval
