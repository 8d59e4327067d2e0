"""
Host-memory snapshot double buffer: one completed set readers load from, one
ongoing set the device flushes into.
"""

import logging
import threading
from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Dict, List, Mapping, Optional, Tuple

from reft.errors import CapacityError, SnapshotStateError

logger = logging.getLogger(__name__)

CAPACITY_FACTOR = 3


def default_capacity(model_bytes: int, optimizer_bytes: int = 0) -> int:
    """Host bytes a node may hold for snapshots: three copies of its state."""
    return CAPACITY_FACTOR * (model_bytes + optimizer_bytes)


class ShardFlag(Enum):
    PENDING = "PENDING"
    COMPLETED = "COMPLETED"


@dataclass
class ShardWrite:
    size: int
    buffer: bytearray
    ranges: List[Tuple[int, int]] = field(default_factory=list)
    flag: ShardFlag = ShardFlag.PENDING

    @property
    def bytes_written(self) -> int:
        return sum(stop - start for start, stop in self.ranges)


@dataclass
class OngoingSnapshot:
    node_id: int
    iteration: int
    shards: Dict[str, ShardWrite]

    @property
    def size(self) -> int:
        return sum(s.size for s in self.shards.values())

    def is_complete(self) -> bool:
        return all(s.flag is ShardFlag.COMPLETED for s in self.shards.values())


_EMPTY = MappingProxyType({})


class SnapshotSet:
    """
    One node's completed and ongoing snapshots.

    The completed mapping is read-only and replaced by reference under the lock
    at commit, so a reader gets either the previous set or the new one.
    """

    def __init__(self, node_id: int, capacity_limit: int):
        if capacity_limit <= 0:
            raise SnapshotStateError(f"node {node_id}: capacity must be > 0")
        self.node_id = node_id
        self.capacity_limit = capacity_limit
        self.ongoing: Optional[OngoingSnapshot] = None
        self._completed: Mapping[str, bytes] = _EMPTY
        self._completed_iteration: Optional[int] = None
        self._lock = threading.Lock()

    @property
    def completed(self) -> Mapping[str, bytes]:
        return self._completed

    @property
    def completed_iteration(self) -> Optional[int]:
        return self._completed_iteration

    @property
    def resident_bytes(self) -> int:
        ongoing = self.ongoing.size if self.ongoing is not None else 0
        return sum(len(b) for b in self._completed.values()) + ongoing

    def begin_snapshot(self, iteration: int, shard_sizes: Mapping[str, int], abandon: bool = False) -> OngoingSnapshot:
        """
        Open an ongoing snapshot for ``iteration`` with the given shard sizes.

        Raises:
            SnapshotStateError: an earlier ongoing snapshot is still open and ``abandon`` is false
            CapacityError: completed + new snapshot would exceed the capacity limit
        """
        if self.ongoing is not None:
            if not abandon:
                raise SnapshotStateError(
                    f"node {self.node_id}: snapshot of iteration {self.ongoing.iteration} is still ongoing")
            self.abandon()
        if any(size <= 0 for size in shard_sizes.values()) or not shard_sizes:
            raise SnapshotStateError(f"node {self.node_id}: a snapshot needs shards of positive size")
        needed = sum(len(b) for b in self._completed.values()) + sum(shard_sizes.values())
        if needed > self.capacity_limit:
            raise CapacityError(f"node {self.node_id}: snapshot needs {needed} bytes of host memory, "
                                f"limit is {self.capacity_limit}")
        self.ongoing = OngoingSnapshot(self.node_id, iteration,
                                       {sid: ShardWrite(size, bytearray(size)) for sid, size in shard_sizes.items()})
        return self.ongoing

    def _check_handle(self, handle: OngoingSnapshot) -> None:
        if handle is None or handle is not self.ongoing:
            raise SnapshotStateError(f"node {self.node_id}: snapshot handle is not open")

    def write_shard(self, handle: OngoingSnapshot, shard_id: str, data: bytes, offset: int = 0) -> ShardFlag:
        self._check_handle(handle)
        if shard_id not in handle.shards:
            raise SnapshotStateError(f"node {self.node_id}: unknown shard '{shard_id}'")
        shard = handle.shards[shard_id]
        stop = offset + len(data)
        if offset < 0 or stop > shard.size:
            raise SnapshotStateError(f"shard '{shard_id}': write [{offset}, {stop}) outside [0, {shard.size})")
        for start, end in shard.ranges:
            if offset < end and start < stop:
                raise SnapshotStateError(f"shard '{shard_id}': write [{offset}, {stop}) overlaps [{start}, {end})")
        shard.buffer[offset:stop] = data
        shard.ranges.append((offset, stop))
        if shard.bytes_written == shard.size:
            shard.flag = ShardFlag.COMPLETED
        return shard.flag

    def commit_snapshot(self, handle: OngoingSnapshot) -> Mapping[str, bytes]:
        """Swap the ongoing snapshot in as the completed one."""
        self._check_handle(handle)
        pending = [sid for sid, s in handle.shards.items() if s.flag is not ShardFlag.COMPLETED]
        if pending:
            raise SnapshotStateError(f"node {self.node_id}: shards {pending} are not COMPLETED")
        if self._completed_iteration is not None and handle.iteration <= self._completed_iteration:
            raise SnapshotStateError(f"node {self.node_id}: iteration {handle.iteration} does not advance "
                                     f"completed iteration {self._completed_iteration}")
        fresh = MappingProxyType({sid: bytes(s.buffer) for sid, s in handle.shards.items()})
        with self._lock:
            self._completed = fresh
            self._completed_iteration = handle.iteration
        self.ongoing = None
        logger.debug(f"Node {self.node_id}: committed snapshot of iteration {handle.iteration}")
        return fresh

    def abandon(self) -> None:
        if self.ongoing is not None:
            logger.debug(f"Node {self.node_id}: abandoned snapshot of iteration {self.ongoing.iteration}")
        self.ongoing = None

    def wipe(self) -> None:
        """Hardware failure: host memory is gone."""
        with self._lock:
            self._completed = _EMPTY
            self._completed_iteration = None
        self.ongoing = None

    def read_completed(self) -> Tuple[Optional[int], Mapping[str, bytes]]:
        with self._lock:
            return self._completed_iteration, self._completed
