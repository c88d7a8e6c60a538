"""Flat binary container for dense feature arrays.

Layout, all little-endian::

    int32 ndim
    int32 dims[ndim]
    int32 channels
    float32 data[dims..., channels]   (row-major, channels fastest)

Feature maps use ``dims = (height, width)``, feature volumes
``dims = (nx, ny, nz)`` and confidence maps ``dims = (n_w, n_l)`` with the
nine parts as channels.
"""

import struct

import numpy as np


class ContainerError(ValueError):
    pass


def pack(array):
    arr = np.asarray(array)
    if arr.ndim < 2:
        raise ContainerError("container arrays need at least one spatial dim plus channels")
    dims, channels = arr.shape[:-1], arr.shape[-1]
    header = struct.pack(f"<i{len(dims)}ii", len(dims), *dims, channels)
    return header + np.ascontiguousarray(arr, dtype="<f4").tobytes()


def unpack(data):
    data = bytes(data)
    if len(data) < 4:
        raise ContainerError("truncated header")
    (ndim,) = struct.unpack_from("<i", data, 0)
    if not 1 <= ndim <= 8:
        raise ContainerError(f"implausible ndim {ndim}")
    header_len = 4 * (ndim + 2)
    if len(data) < header_len:
        raise ContainerError("truncated header")
    *dims, channels = struct.unpack_from(f"<{ndim + 1}i", data, 4)
    shape = tuple(dims) + (channels,)
    if min(shape) < 0:
        raise ContainerError(f"negative dimension in {shape}")
    expected = 4 * int(np.prod(shape))
    if len(data) - header_len != expected:
        raise ContainerError(f"payload is {len(data) - header_len} bytes, header implies {expected}")
    return np.frombuffer(data, dtype="<f4", offset=header_len).reshape(shape).astype(np.float32)


def save(path, array):
    with open(path, "wb") as fh:
        fh.write(pack(array))


def load(path):
    with open(path, "rb") as fh:
        return unpack(fh.read())
