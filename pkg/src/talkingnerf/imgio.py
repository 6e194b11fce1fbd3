"""Binary netpbm image IO: PPM (P6) color, PGM (P5) gray.

Color frames are 8-bit PPM; mask labels are 8-bit PGM; depth/alpha maps are
16-bit PGM (big-endian sample order per the netpbm spec), scaled to the full
range by the caller.
"""

from __future__ import annotations

import numpy as np


def write_ppm(path, img: np.ndarray) -> None:
    """(H, W, 3) floats in [0, 1] -> 8-bit binary PPM."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected (H, W, 3) image, got {img.shape}")
    q = np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(q.tobytes())


def read_ppm(path) -> np.ndarray:
    """8-bit binary PPM -> (H, W, 3) float64 in [0, 1]."""
    magic, (w, h, maxval), payload = _read_pnm(path)
    if magic != b"P6":
        raise ValueError(f"{path}: expected P6 PPM, got {magic.decode('latin1')}")
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PPM supported, maxval {maxval}")
    n = w * h * 3
    if len(payload) < n:
        raise ValueError(f"{path}: truncated pixel data")
    img = np.frombuffer(payload[:n], dtype=np.uint8).reshape(h, w, 3)
    return img.astype(np.float64) / 255.0


def write_pgm(path, arr: np.ndarray, maxval: int = 255) -> None:
    """(H, W) integer array -> binary PGM; maxval 255 or 65535."""
    arr = np.asarray(arr)
    if arr.ndim != 2:
        raise ValueError(f"expected (H, W) array, got {arr.shape}")
    if maxval not in (255, 65535):
        raise ValueError(f"maxval must be 255 or 65535, got {maxval}")
    if arr.min() < 0 or arr.max() > maxval:
        raise ValueError("values out of range for the requested maxval")
    dtype = np.uint8 if maxval == 255 else ">u2"
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n{maxval}\n".encode("ascii"))
        f.write(arr.astype(dtype).tobytes())


def read_pgm(path) -> np.ndarray:
    """Binary PGM -> (H, W) integer array (uint8 or uint16)."""
    magic, (w, h, maxval), payload = _read_pnm(path)
    if magic != b"P5":
        raise ValueError(f"{path}: expected P5 PGM, got {magic.decode('latin1')}")
    dtype = np.dtype(np.uint8) if maxval < 256 else np.dtype(">u2")
    n = w * h * dtype.itemsize
    if len(payload) < n:
        raise ValueError(f"{path}: truncated pixel data")
    arr = np.frombuffer(payload[:n], dtype=dtype).reshape(h, w)
    return arr.astype(np.uint16) if maxval >= 256 else arr.copy()


def scale_to_u16(arr: np.ndarray) -> np.ndarray:
    """Affinely map [min, max] to [0, 65535]; constant maps go to zero."""
    arr = np.asarray(arr, dtype=np.float64)
    lo, hi = arr.min(), arr.max()
    if hi <= lo:
        return np.zeros(arr.shape, dtype=np.uint16)
    return np.rint((arr - lo) / (hi - lo) * 65535.0).astype(np.uint16)


def _read_pnm(path):
    """Parse a binary netpbm header; returns (magic, (w, h, maxval), payload)."""
    with open(path, "rb") as f:
        data = f.read()
    if len(data) < 2:
        raise ValueError(f"{path}: not a netpbm file")
    magic = data[:2]
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError(f"{path}: malformed netpbm header")
        fields.append(int(data[start:pos]))
    pos += 1  # single whitespace byte after maxval
    return magic, tuple(fields), data[pos:]
