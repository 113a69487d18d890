"""Binary per-video feature cache.

Layout (little endian)::

    0   4s  magic b"SFMC"
    4   u16 version (1)
    6   u32 frame count N
    10  u16 k
    12  4x  reserved, zero
    16  N x 3 x 42 x 42 float32, planes u, v, strain, each row-major

Planes are stored one after another per frame rather than interleaved.
"""

import struct

import numpy as np

from ..preprocess import INPUT_SIZE, MotionInput

CACHE_MAGIC = b"SFMC"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sHIH4x")
HEADER_SIZE = _HEADER.size  # 16
FRAME_BYTES = 3 * INPUT_SIZE * INPUT_SIZE * 4


class CacheFormatError(ValueError):
    pass


def _as_array(features):
    if isinstance(features, np.ndarray):
        arr = features
    else:
        arr = np.stack([f.data for f in features]) if len(features) else np.zeros((0, INPUT_SIZE, INPUT_SIZE, 3))
    if arr.ndim != 4 or arr.shape[1:] != (INPUT_SIZE, INPUT_SIZE, 3):
        raise ValueError(f"features must be (N, 42, 42, 3), got {arr.shape}")
    return arr.astype(np.float32, copy=False)


def write_feature_cache(path, features, k):
    """Write MotionInputs (or an ``(N, 42, 42, 3)`` array) computed with window ``k``."""
    arr = _as_array(features)
    if not 1 <= k <= 0xFFFF:
        raise ValueError("k must fit in u16 and be >= 1")
    planes = np.ascontiguousarray(arr.transpose(0, 3, 1, 2), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, arr.shape[0], k))
        fh.write(planes.tobytes())


def read_cache_header(path):
    """``(frame count, k)`` without loading the body."""
    with open(path, "rb") as fh:
        head = fh.read(HEADER_SIZE)
    return _parse_header(head, path)


def _parse_header(head, path):
    if len(head) < HEADER_SIZE:
        raise CacheFormatError(f"{path}: truncated header")
    magic, version, count, k = _HEADER.unpack(head)
    if magic != CACHE_MAGIC:
        raise CacheFormatError(f"{path}: bad magic {magic!r}, expected {CACHE_MAGIC!r}")
    if version != CACHE_VERSION:
        raise CacheFormatError(f"{path}: unsupported cache version {version}")
    return count, k


def read_feature_array(path):
    """``(array (N, 42, 42, 3) float32, k)``."""
    with open(path, "rb") as fh:
        blob = fh.read()
    count, k = _parse_header(blob[:HEADER_SIZE], path)
    expected = HEADER_SIZE + count * FRAME_BYTES
    if len(blob) != expected:
        raise CacheFormatError(f"{path}: {len(blob)} bytes, expected {expected} for {count} frames")
    planes = np.frombuffer(blob, dtype="<f4", offset=HEADER_SIZE).reshape(count, 3, INPUT_SIZE, INPUT_SIZE)
    return np.ascontiguousarray(planes.transpose(0, 2, 3, 1), dtype=np.float32), k


def read_feature_cache(path):
    """``(list of MotionInput, k)``; ``source_frame_index`` is the position in the file."""
    arr, k = read_feature_array(path)
    return [MotionInput(a, i) for i, a in enumerate(arr)], k
