"""Binary tensor container for feature maps, masks, and score maps.

File layout (all integers little-endian):

    magic    4 bytes, ASCII ``PCFB``
    version  u16, currently 1
    dtype    u8, 0 = 32-bit IEEE float, 1 = unsigned 8-bit
    ndim     u8, 2 or 3 (masks and score maps are 2-D, feature maps 3-D)
    dims     ndim * u32
    payload  row-major values, exactly prod(dims) elements

The payload must fill the file exactly; short or overlong files are rejected.
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PCFB"
VERSION = 1

_HEADER = struct.Struct("<4sHBB")
_CODE_TO_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("u1")}
_MAX_DIM = 2**32 - 1


class TensorFileError(ValueError):
    """Base error for malformed tensor files."""


class BadMagicError(TensorFileError):
    """File does not start with the PCFB magic bytes."""


class UnsupportedVersionError(TensorFileError):
    """Header declares a format version this reader does not know."""


class UnsupportedDtypeError(TensorFileError):
    """Header declares an unknown dtype code."""


class InvalidDimsError(TensorFileError):
    """Dimension count or sizes are outside the supported range."""


class TruncatedPayloadError(TensorFileError):
    """File ends before the header-declared payload is complete."""


class TrailingDataError(TensorFileError):
    """File contains bytes past the declared payload."""


def _dtype_code(dtype: np.dtype) -> int:
    if dtype.kind == "f":
        return 0
    if dtype == np.uint8:
        return 1
    raise UnsupportedDtypeError(f"unsupported dtype {dtype}; use float or uint8")


def write_tensor(path, values) -> None:
    """Write ``values`` (a 2-D or 3-D array) to ``path``.

    Float inputs are stored as little-endian float32, uint8 inputs as-is.
    """
    arr = np.ascontiguousarray(values)
    code = _dtype_code(arr.dtype)
    arr = arr.astype(_CODE_TO_DTYPE[code], copy=False)
    if arr.ndim not in (2, 3):
        raise InvalidDimsError(f"tensor must be 2-D or 3-D, got ndim={arr.ndim}")
    if any(d > _MAX_DIM for d in arr.shape):
        raise InvalidDimsError(f"dimension overflow in shape {arr.shape}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, code, arr.ndim))
        fh.write(np.asarray(arr.shape, dtype="<u4").tobytes())
        fh.write(arr.tobytes())


def read_tensor(path) -> np.ndarray:
    """Read a tensor written by :func:`write_tensor`, validating the header."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != MAGIC:
        if len(data) >= 4:
            raise BadMagicError(f"bad magic {data[:4]!r} in {path}")
        raise TruncatedPayloadError(f"file {path} shorter than header")
    if len(data) < _HEADER.size:
        raise TruncatedPayloadError(f"file {path} shorter than header")
    _, version, code, ndim = _HEADER.unpack_from(data)
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported version {version} in {path}")
    if code not in _CODE_TO_DTYPE:
        raise UnsupportedDtypeError(f"unknown dtype code {code} in {path}")
    if ndim not in (2, 3):
        raise InvalidDimsError(f"ndim must be 2 or 3, got {ndim} in {path}")
    dims_end = _HEADER.size + 4 * ndim
    if len(data) < dims_end:
        raise TruncatedPayloadError(f"file {path} ends inside the dims block")
    dims = np.frombuffer(data, dtype="<u4", count=ndim, offset=_HEADER.size)
    dtype = _CODE_TO_DTYPE[code]
    expected = int(np.prod(dims.astype(np.int64))) * dtype.itemsize
    payload = data[dims_end:]
    if len(payload) < expected:
        raise TruncatedPayloadError(
            f"payload of {path} is {len(payload)} bytes, expected {expected}"
        )
    if len(payload) > expected:
        raise TrailingDataError(
            f"{len(payload) - expected} trailing bytes after payload in {path}"
        )
    arr = np.frombuffer(payload, dtype=dtype).reshape(tuple(int(d) for d in dims))
    return arr.copy()
