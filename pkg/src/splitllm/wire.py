"""Bit-exact binary formats for snapshots and protocol messages.

Matrix snapshot (16-byte header + payload):
    magic b"SLMX" | u32 rows | u32 cols | u32 dtype tag | row-major payload
    dtype tags: 0 = float32 little-endian, 1 = float64 little-endian.

Adapter snapshot:
    magic b"SLAD" | u32 layer_index | u32 rank | Matrix block A | Matrix block B

Message (used for byte accounting, the event log, and snapshot replay):
    u8 tag | u32 t | u32 k | u32 m | u32 n | payload
    payload is a sequence of Matrix/Adapter blocks; labels ride as a u32
    count followed by that many u32 values.

All integers are little-endian.  Byte counters throughout the simulator are
defined over exactly these encodings.
"""

from __future__ import annotations

import struct

import numpy as np

from .errors import FormatError

MATRIX_MAGIC = b"SLMX"
ADAPTER_MAGIC = b"SLAD"

DTYPE_TAGS = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}

# Message tags (u8): value identifies both the payload kind and the tier
# the message serves.
TAG_NAMES = {
    1: "act_user_edge",
    2: "act_edge_cloud",
    3: "grad_cloud_edge",
    4: "grad_edge_user",
    5: "upload_user",
    6: "upload_edge",
    7: "bcast_edge",
    8: "bcast_user",
    9: "frozen_edge",
    10: "frozen_user",
}
TAG_IDS = {name: tag for tag, name in TAG_NAMES.items()}

_HEADER = struct.Struct("<BIIII")


def encode_matrix(arr: np.ndarray) -> bytes:
    if arr.ndim != 2:
        raise FormatError("matrix snapshots require 2-D arrays")
    dtype = np.dtype(arr.dtype)
    if dtype not in DTYPE_TAGS:
        raise FormatError(f"unsupported snapshot dtype: {dtype}")
    header = MATRIX_MAGIC + struct.pack(
        "<III", arr.shape[0], arr.shape[1], DTYPE_TAGS[dtype]
    )
    payload = np.ascontiguousarray(arr).astype(dtype.newbyteorder("<"), copy=False)
    return header + payload.tobytes()


def decode_matrix(buf: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if buf[offset : offset + 4] != MATRIX_MAGIC:
        raise FormatError("bad matrix magic")
    rows, cols, tag = struct.unpack_from("<III", buf, offset + 4)
    if tag not in TAG_DTYPES:
        raise FormatError(f"unknown matrix dtype tag {tag}")
    dtype = TAG_DTYPES[tag]
    start = offset + 16
    end = start + rows * cols * dtype.itemsize
    if end > len(buf):
        raise FormatError("truncated matrix payload")
    arr = np.frombuffer(buf[start:end], dtype=dtype).reshape(rows, cols)
    return arr.astype(dtype.newbyteorder("=")), end


def matrix_size(rows: int, cols: int, itemsize: int = 4) -> int:
    """Encoded size of a matrix block, for closed-form byte accounting."""
    return 16 + rows * cols * itemsize


def encode_adapter(layer_index: int, a: np.ndarray, b: np.ndarray) -> bytes:
    rank = a.shape[1]
    if b.shape[0] != rank:
        raise FormatError("adapter factors disagree on rank")
    head = ADAPTER_MAGIC + struct.pack("<II", layer_index, rank)
    return head + encode_matrix(a) + encode_matrix(b)


def decode_adapter(buf: bytes, offset: int = 0) -> tuple[int, np.ndarray, np.ndarray, int]:
    if buf[offset : offset + 4] != ADAPTER_MAGIC:
        raise FormatError("bad adapter magic")
    layer_index, rank = struct.unpack_from("<II", buf, offset + 4)
    a, offset = decode_matrix(buf, offset + 12)
    b, offset = decode_matrix(buf, offset)
    if a.shape[1] != rank or b.shape[0] != rank:
        raise FormatError("adapter payload rank mismatch")
    return layer_index, a, b, offset


def adapter_size(d: int, r: int, h: int, itemsize: int = 4) -> int:
    return 12 + matrix_size(d, r, itemsize) + matrix_size(r, h, itemsize)


def encode_labels(labels: np.ndarray) -> bytes:
    labels = np.asarray(labels, dtype="<u4")
    return struct.pack("<I", labels.size) + labels.tobytes()


def decode_labels(buf: bytes, offset: int) -> tuple[np.ndarray, int]:
    (count,) = struct.unpack_from("<I", buf, offset)
    start = offset + 4
    end = start + 4 * count
    if end > len(buf):
        raise FormatError("truncated label payload")
    return np.frombuffer(buf[start:end], dtype="<u4").astype(np.int64), end


def encode_message(tag: str, t: int, k: int, m: int, n: int, payload: bytes) -> bytes:
    return _HEADER.pack(TAG_IDS[tag], t, k, m, n) + payload


def decode_message(buf: bytes) -> tuple[str, int, int, int, int, bytes]:
    tag_id, t, k, m, n = _HEADER.unpack_from(buf, 0)
    if tag_id not in TAG_NAMES:
        raise FormatError(f"unknown message tag {tag_id}")
    return TAG_NAMES[tag_id], t, k, m, n, buf[_HEADER.size :]


MESSAGE_HEADER_SIZE = _HEADER.size  # 17 bytes


def write_matrix(path, arr: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_matrix(arr))


def read_matrix(path) -> np.ndarray:
    with open(path, "rb") as fh:
        arr, _ = decode_matrix(fh.read())
    return arr


def write_adapter(path, layer_index: int, a: np.ndarray, b: np.ndarray) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_adapter(layer_index, a, b))


def read_adapter(path) -> tuple[int, np.ndarray, np.ndarray]:
    with open(path, "rb") as fh:
        layer_index, a, b, _ = decode_adapter(fh.read())
    return layer_index, a, b
