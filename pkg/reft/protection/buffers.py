"""
Byte buffers that protection strategies produce and consume.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np

from reft.errors import CodecError


class Role(Enum):
    MODEL = 0
    OPTIMIZER = 1
    GRADIENT = 2
    PARITY = 3


def as_bytes_array(data: Union[bytes, bytearray, memoryview, np.ndarray]) -> np.ndarray:
    """View any bytes-like or numpy buffer as a flat uint8 array."""
    if isinstance(data, np.ndarray):
        return np.ascontiguousarray(data).reshape(-1).view(np.uint8)
    return np.frombuffer(bytes(data), dtype=np.uint8)


@dataclass
class ParamBuffer:
    """
    One protected buffer held in some node's host memory.

    ``owner_node`` stores the buffer; ``source_node`` is whose state it carries.
    Parities list the (source_node, sub_slice_index) pieces they encode.
    """
    data: np.ndarray
    role: Role
    owner_node: int
    group_id: int
    sub_slice_index: Optional[int] = None
    source_node: Optional[int] = None
    encoded: Tuple[Tuple[int, int], ...] = field(default_factory=tuple)

    def __post_init__(self):
        self.data = as_bytes_array(self.data)
        if self.data.size == 0:
            raise CodecError("buffers must not be empty")
        if self.role is Role.PARITY and not self.encoded:
            raise CodecError("a parity buffer must record the pieces it encodes")

    def __len__(self):
        return int(self.data.size)

    @property
    def bytes(self) -> bytes:
        return self.data.tobytes()

    def as_float32(self) -> np.ndarray:
        if self.data.size % 4:
            raise CodecError(f"{self.data.size} bytes is not a whole number of float32 values")
        return self.data.view('<f4')
