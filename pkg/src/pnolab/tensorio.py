"""Binary tensor container and checkpoint files.

Tensor record (little-endian)::

    b"PNOT" | u32 version=1 | u8 dtype (0 f64, 1 c128) | u8 ndim | ndim x u64 shape | payload

Checkpoint file::

    b"PNOC" | u32 version=1 | u64 header length | UTF-8 JSON header | tensor records

The JSON header lists the parameter names in record order.
"""
import json
import struct

import numpy as np

from .errors import FormatError

MAGIC = b"PNOT"
CHECKPOINT_MAGIC = b"PNOC"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<c16")}


def encode_tensor(array):
    array = np.asarray(array)
    if np.iscomplexobj(array):
        code, dtype = 1, _DTYPES[1]
    else:
        code, dtype = 0, _DTYPES[0]
    # np.ascontiguousarray would promote 0-d arrays to 1-d
    array = np.array(array, dtype=dtype, order="C")
    if array.ndim > 255:
        raise FormatError("too many dimensions for the container")
    head = MAGIC + struct.pack("<IBB", VERSION, code, array.ndim)
    head += struct.pack(f"<{array.ndim}Q", *array.shape)
    return head + array.tobytes(order="C")


def decode_tensor(buf, offset=0):
    """Decode one record starting at ``offset``; returns (array, next offset)."""
    view = memoryview(buf)

    def take(n, what):
        nonlocal offset
        if offset + n > len(view):
            raise FormatError(f"truncated {what}", offset)
        chunk = view[offset : offset + n]
        offset += n
        return chunk

    start = offset
    if bytes(take(4, "magic")) != MAGIC:
        raise FormatError("bad magic", start)
    version, code, ndim = struct.unpack("<IBB", take(6, "header"))
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", start + 4)
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}", start + 8)
    shape = struct.unpack(f"<{ndim}Q", take(8 * ndim, "shape"))
    dtype = _DTYPES[code]
    count = int(np.prod(shape, dtype=np.int64))
    payload = take(count * dtype.itemsize, "payload")
    array = np.frombuffer(payload, dtype=dtype).reshape(shape).copy()
    return array.astype(dtype.newbyteorder("="), copy=False), offset


def save_tensor(path, array):
    with open(path, "wb") as fh:
        fh.write(encode_tensor(array))


def load_tensor(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    array, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError("trailing bytes after tensor record", end)
    return array


def save_checkpoint(path, header, tensors):
    """Write ``tensors`` (name -> array, ordered) after a JSON ``header``."""
    header = dict(header, parameters=list(tensors))
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<IQ", VERSION, len(blob)))
        fh.write(blob)
        for array in tensors.values():
            fh.write(encode_tensor(array))


def load_checkpoint(path):
    """Return (header dict, name -> array)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", 0)
    if len(buf) < 16:
        raise FormatError("truncated checkpoint header", len(buf))
    version, size = struct.unpack("<IQ", buf[4:16])
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    if 16 + size > len(buf):
        raise FormatError("truncated checkpoint header", len(buf))
    try:
        header = json.loads(buf[16 : 16 + size].decode("utf-8"))
    except ValueError as exc:
        raise FormatError(f"unreadable checkpoint header: {exc}", 16) from None
    offset = 16 + size
    tensors = {}
    for name in header["parameters"]:
        tensors[name], offset = decode_tensor(buf, offset)
    if offset != len(buf):
        raise FormatError("trailing bytes after checkpoint records", offset)
    return header, tensors
