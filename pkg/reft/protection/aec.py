"""
Asynchronous erasure coding: single XOR parities over peer sub-slices.

Shard j of a group is cut into k equal pieces. Piece r of shard j lives in the
parity of the r-th node covering j, where j's covering nodes are taken in ring
order from j+1, skipping the ARC holders of j when ARC runs alongside.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from reft.errors import CodecError, ProtectionUnavailableError, UnrecoverableError
from reft.protection.base_strategy import ProtectionStrategy
from reft.protection.buffers import ParamBuffer, Role, as_bytes_array
from reft.topology import ShardAssignment, ShardingGroup

logger = logging.getLogger(__name__)

BufferLike = Union[ParamBuffer, np.ndarray, bytes]


def _data(buf: BufferLike) -> np.ndarray:
    return buf.data if isinstance(buf, ParamBuffer) else as_bytes_array(buf)


def xor_buffers(buffers: Sequence[BufferLike]) -> np.ndarray:
    """Bytewise XOR of equal-length buffers."""
    if not buffers:
        raise CodecError("nothing to XOR")
    arrays = [_data(b) for b in buffers]
    length = arrays[0].size
    for a in arrays[1:]:
        if a.size != length:
            raise CodecError(f"buffer length mismatch: {a.size} != {length}")
    return np.bitwise_xor.reduce(np.stack(arrays), axis=0)


def aec_encode(peer_sub_slices: Sequence[BufferLike], owner_node: int = -1, group_id: int = -1,
               expected: Optional[int] = None) -> ParamBuffer:
    """
    XOR one sub-slice from each covered peer into a parity buffer.

    ``expected`` pins the number of inputs (m-1 when AEC runs alone).
    """
    if expected is not None and len(peer_sub_slices) != expected:
        raise CodecError(f"expected {expected} sub-slices, got {len(peer_sub_slices)}")
    encoded = []
    for pos, buf in enumerate(peer_sub_slices):
        if isinstance(buf, ParamBuffer) and buf.source_node is not None:
            encoded.append((buf.source_node, buf.sub_slice_index if buf.sub_slice_index is not None else 0))
        else:
            encoded.append((pos, 0))
    return ParamBuffer(xor_buffers(peer_sub_slices), Role.PARITY, owner_node=owner_node, group_id=group_id,
                       encoded=tuple(encoded))


def aec_decode(parity: ParamBuffer, surviving_sub_slices: Sequence[ParamBuffer]) -> ParamBuffer:
    """
    Recover the one sub-slice missing from ``surviving_sub_slices``.

    missing = parity XOR (XOR of the survivors).
    """
    keys = [(b.source_node, b.sub_slice_index if b.sub_slice_index is not None else 0)
            for b in surviving_sub_slices]
    encoded = set(parity.encoded)
    unknown = [k for k in keys if k not in encoded]
    if unknown or len(set(keys)) != len(keys):
        raise CodecError(f"survivors {unknown or keys} are not distinct members of the encoded set")
    missing = sorted(encoded - set(keys))
    if len(missing) > 1:
        raise UnrecoverableError(f"{len(missing)} pieces missing from one parity", missing=missing)
    if not missing:
        raise CodecError("nothing is missing from this parity")
    data = xor_buffers([parity] + list(surviving_sub_slices))
    source, sub = missing[0]
    return ParamBuffer(data, Role.MODEL, owner_node=parity.owner_node, group_id=parity.group_id,
                       sub_slice_index=sub, source_node=source)


def xor_files(inputs: Iterable[Union[str, Path]], output: Union[str, Path]) -> int:
    """
    XOR equal-length files into ``output``; encodes a parity or decodes a missing file.

    Returns:
        Bytes written
    """
    arrays = [np.fromfile(str(p), dtype=np.uint8) for p in inputs]
    if not arrays:
        raise CodecError("no input files")
    if any(a.size == 0 for a in arrays):
        raise CodecError("input files must not be empty")
    result = xor_buffers(arrays)
    result.tofile(str(output))
    return int(result.size)


class AecStrategy(ProtectionStrategy):
    name = "aec"
    roles = frozenset({Role.MODEL})

    def __init__(self, group: ShardingGroup, arc_offsets: Tuple[int, ...] = ()):
        self.arc_offsets = tuple(arc_offsets)
        super().__init__(group)
        self.covering = {j: self._covering(j) for j in range(self.m)}
        self.k = len(self.covering[0])

    def check_available(self) -> None:
        if self.m < 2:
            raise ProtectionUnavailableError(f"AEC needs peers; sharding group {self.group.group_id} has one member")
        if self.m - 1 - len(set(o % self.m for o in self.arc_offsets)) < 1:
            raise ProtectionUnavailableError(
                f"no peer left to encode in a group of {self.m} after {len(self.arc_offsets)} ARC copies")

    def _covering(self, j: int) -> List[int]:
        holders = {(j - o) % self.m for o in self.arc_offsets}
        return [(j + step) % self.m for step in range(1, self.m) if (j + step) % self.m not in holders]

    def piece_index(self, holder_rank: int, source_rank: int) -> int:
        return self.covering[source_rank].index(holder_rank)

    def covered_by(self, holder_rank: int) -> List[int]:
        """Source ranks whose pieces the holder's parity encodes."""
        return [j for j in range(self.m) if holder_rank in self.covering[j]]

    def recover_candidates(self, lost_rank: int) -> List[int]:
        return list(self.covering[lost_rank])

    def piece_size(self, shard_length: int) -> int:
        return -(-shard_length // self.k)

    def pieces(self, shard: np.ndarray, piece_size: int) -> np.ndarray:
        """Shard zero-padded to k * piece_size and reshaped to (k, piece_size)."""
        padded = np.zeros(self.k * piece_size, dtype=np.uint8)
        padded[:shard.size] = shard
        return padded.reshape(self.k, piece_size)

    def redundancy_bytes(self, assignments: List[ShardAssignment]) -> Dict[int, int]:
        size = self.piece_size(max(a.local_range.length for a in assignments))
        return {a.node_id: size for a in assignments}

    def protect(self, shards: Mapping[int, np.ndarray]) -> Dict[int, List[ParamBuffer]]:
        arrays = {n: as_bytes_array(shards[n]) for n in self.group.members}
        size = self.piece_size(max(a.size for a in arrays.values()))
        cut = {n: self.pieces(a, size) for n, a in arrays.items()}
        held = {}
        for i, node_id in enumerate(self.group.members):
            inputs = []
            for j in self.covered_by(i):
                source = self.node_at(j)
                r = self.piece_index(i, j)
                inputs.append(ParamBuffer(cut[source][r], Role.MODEL, owner_node=node_id,
                                          group_id=self.group.group_id, sub_slice_index=r, source_node=source))
            held[node_id] = [aec_encode(inputs, owner_node=node_id, group_id=self.group.group_id,
                                        expected=self.k)]
        logger.debug(f"AEC on group {self.group.group_id}: k={self.k}, parity {size} bytes per node")
        return held

    def describe(self) -> str:
        return f"aec(k={self.k})"
