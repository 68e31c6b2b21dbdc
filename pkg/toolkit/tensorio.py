"""
DTT tensor files.

Layout: the magic "DTT1", one byte rank (1-4), `rank` little-endian u32
extents, then the float32 little-endian values in row-major order.
"""
import struct

import numpy as np

MAGIC = b'DTT1'
MAX_RANK = 4
FLOAT = np.dtype('<f4')


class TensorFormatError(ValueError):
    """Raised for malformed DTT data; the message names the byte offset."""


def encode_tensor(array):
    array = np.asarray(array, dtype=np.float32)
    if not 1 <= array.ndim <= MAX_RANK:
        raise TensorFormatError(f'offset 4: rank must be 1-{MAX_RANK}, got {array.ndim}')
    header = MAGIC + struct.pack(f'<B{array.ndim}I', array.ndim, *array.shape)
    return header + np.ascontiguousarray(array, dtype=FLOAT).tobytes()


def decode_tensor(data, offset=0):
    """Decode one tensor starting at `offset`; returns (array, end offset)."""
    view = memoryview(data)
    if len(view) - offset < len(MAGIC) + 1:
        raise TensorFormatError(f'offset {offset}: truncated tensor header')
    magic = bytes(view[offset:offset + 4])
    if magic != MAGIC:
        raise TensorFormatError(f'offset {offset}: bad magic {magic!r}, expected {MAGIC!r}')
    rank = view[offset + 4]
    if not 1 <= rank <= MAX_RANK:
        raise TensorFormatError(f'offset {offset + 4}: rank must be 1-{MAX_RANK}, got {rank}')
    cursor = offset + 5
    if len(view) - cursor < 4 * rank:
        raise TensorFormatError(f'offset {cursor}: truncated extents')
    shape = struct.unpack_from(f'<{rank}I', view, cursor)
    cursor += 4 * rank
    count = int(np.prod(shape, dtype=np.int64))
    size = count * FLOAT.itemsize
    if len(view) - cursor < size:
        raise TensorFormatError(
            f'offset {cursor}: truncated payload, need {size} bytes, have {len(view) - cursor}'
        )
    values = np.frombuffer(view, dtype=FLOAT, count=count, offset=cursor)
    return values.astype(np.float32).reshape(shape), cursor + size


def write_tensor_file(path, array):
    with open(path, 'wb') as handle:
        handle.write(encode_tensor(array))


def read_tensor_file(path):
    with open(path, 'rb') as handle:
        data = handle.read()
    array, end = decode_tensor(data)
    if end != len(data):
        raise TensorFormatError(f'offset {end}: {len(data) - end} trailing bytes after tensor')
    return array
