"""Binary send/receive buffers with a fixed little-endian wire format.

Floats travel as raw IEEE-754 bits, so pack -> unpack is the identity bit
for bit. In debug mode every value is preceded by a one-byte type tag that
is checked on extraction; release mode omits the tags entirely.
"""
from __future__ import annotations

import struct

import numpy as np

from ..errors import BufferUnderflowError, TypeTagError

_TAG_BOOL = 1
_TAG_INT = 2
_TAG_FLOAT = 3
_TAG_BYTES = 4
_TAG_STR = 5
_TAG_ARRAY = 6

_TAG_NAMES = {
    _TAG_BOOL: "bool",
    _TAG_INT: "int",
    _TAG_FLOAT: "float",
    _TAG_BYTES: "bytes",
    _TAG_STR: "str",
    _TAG_ARRAY: "array",
}

# dtype codes on the wire; everything is serialized little-endian C-order
_DTYPE_CODES = {
    np.dtype("<f8"): 0,
    np.dtype("<i8"): 1,
    np.dtype("<u4"): 2,
    np.dtype("<u1"): 3,
    np.dtype("<i4"): 4,
    np.dtype("<u8"): 5,
}
_CODE_DTYPES = {v: k for k, v in _DTYPE_CODES.items()}

_I64 = struct.Struct("<q")
_U32 = struct.Struct("<I")
_F64 = struct.Struct("<d")


class SendBuffer:
    """Append-only pack buffer. `debug=True` writes per-value type tags."""

    def __init__(self, debug: bool = False):
        self.debug = debug
        self._data = bytearray()

    def __len__(self) -> int:
        return len(self._data)

    def clear(self) -> None:
        self._data.clear()

    def getvalue(self) -> bytes:
        return bytes(self._data)

    def _tag(self, tag: int) -> None:
        if self.debug:
            self._data.append(tag)

    def pack_bool(self, v: bool) -> None:
        self._tag(_TAG_BOOL)
        self._data.append(1 if v else 0)

    def pack_int(self, v: int) -> None:
        self._tag(_TAG_INT)
        self._data += _I64.pack(v)

    def pack_float(self, v: float) -> None:
        self._tag(_TAG_FLOAT)
        self._data += _F64.pack(v)

    def pack_bytes(self, v: bytes) -> None:
        self._tag(_TAG_BYTES)
        self._data += _U32.pack(len(v))
        self._data += v

    def pack_str(self, v: str) -> None:
        self._tag(_TAG_STR)
        raw = v.encode("utf-8")
        self._data += _U32.pack(len(raw))
        self._data += raw

    def pack_array(self, arr: np.ndarray) -> None:
        """Serialize a numpy array (dtype + shape + raw C-order bytes)."""
        a = np.ascontiguousarray(arr)
        dt = a.dtype.newbyteorder("<")
        if dt not in _DTYPE_CODES:
            raise TypeError(f"unsupported array dtype {arr.dtype}")
        if a.dtype != dt:
            a = a.astype(dt)
        self._tag(_TAG_ARRAY)
        self._data.append(_DTYPE_CODES[dt])
        self._data.append(a.ndim)
        for dim in a.shape:
            self._data += _U32.pack(dim)
        self._data += a.tobytes()

    def pack_ints(self, seq) -> None:
        self.pack_array(np.asarray(list(seq), dtype=np.int64))

    def pack_floats(self, seq) -> None:
        self.pack_array(np.asarray(list(seq), dtype=np.float64))


class RecvBuffer:
    """Cursor-based unpack view over received bytes."""

    def __init__(self, data: bytes, debug: bool = False):
        self.debug = debug
        self._data = data
        self._pos = 0

    def __len__(self) -> int:
        return len(self._data)

    @property
    def remaining(self) -> int:
        return len(self._data) - self._pos

    @property
    def at_end(self) -> bool:
        return self._pos >= len(self._data)

    def _take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise BufferUnderflowError(
                f"need {n} bytes at offset {self._pos}, only {self.remaining} left"
            )
        chunk = self._data[self._pos : self._pos + n]
        self._pos += n
        return chunk

    def _check_tag(self, expected: int) -> None:
        if not self.debug:
            return
        tag = self._take(1)[0]
        if tag != expected:
            raise TypeTagError(
                f"expected {_TAG_NAMES[expected]} but buffer holds "
                f"{_TAG_NAMES.get(tag, f'tag {tag}')} at offset {self._pos - 1}"
            )

    def unpack_bool(self) -> bool:
        self._check_tag(_TAG_BOOL)
        return self._take(1)[0] != 0

    def unpack_int(self) -> int:
        self._check_tag(_TAG_INT)
        return _I64.unpack(self._take(8))[0]

    def unpack_float(self) -> float:
        self._check_tag(_TAG_FLOAT)
        return _F64.unpack(self._take(8))[0]

    def unpack_bytes(self) -> bytes:
        self._check_tag(_TAG_BYTES)
        n = _U32.unpack(self._take(4))[0]
        return self._take(n)

    def unpack_str(self) -> str:
        self._check_tag(_TAG_STR)
        n = _U32.unpack(self._take(4))[0]
        return self._take(n).decode("utf-8")

    def unpack_array(self) -> np.ndarray:
        self._check_tag(_TAG_ARRAY)
        code = self._take(1)[0]
        if code not in _CODE_DTYPES:
            raise TypeTagError(f"unknown array dtype code {code}")
        dt = _CODE_DTYPES[code]
        ndim = self._take(1)[0]
        shape = tuple(_U32.unpack(self._take(4))[0] for _ in range(ndim))
        count = 1
        for dim in shape:
            count *= dim
        raw = self._take(count * dt.itemsize)
        return np.frombuffer(raw, dtype=dt).reshape(shape).copy()

    def unpack_ints(self) -> list:
        return [int(v) for v in self.unpack_array()]

    def unpack_floats(self) -> list:
        return [float(v) for v in self.unpack_array()]
