"""
Asynchronous redundant copies: every member also snapshots a peer's shard.
"""

import logging
from typing import Dict, List, Mapping

import numpy as np

from reft.errors import ProtectionUnavailableError
from reft.protection.base_strategy import ProtectionStrategy
from reft.protection.buffers import ParamBuffer, Role, as_bytes_array
from reft.topology import ByteRange, ShardAssignment, ShardingGroup

logger = logging.getLogger(__name__)


def arc_redundancy(assignments: List[ShardAssignment], group: ShardingGroup, offset: int = 1) -> Dict[int, ByteRange]:
    """
    Peer range each member snapshots on top of its own: member i takes the
    shard of member (i + offset) mod m.
    """
    if group.size < 2:
        raise ProtectionUnavailableError(f"ARC needs a peer; sharding group {group.group_id} has one member")
    if offset % group.size == 0:
        raise ProtectionUnavailableError(f"ARC offset {offset} maps every member onto itself")
    by_node = {a.node_id: a for a in assignments}
    extra = {}
    for rank, node_id in enumerate(group.members):
        peer = group.members[(rank + offset) % group.size]
        extra[node_id] = by_node[peer].local_range
    return extra


class ArcStrategy(ProtectionStrategy):
    name = "arc"
    roles = frozenset({Role.MODEL})

    def __init__(self, group: ShardingGroup, offset: int = 1):
        self.offset = offset
        super().__init__(group)

    def check_available(self) -> None:
        if self.m < 2:
            raise ProtectionUnavailableError(f"ARC needs a peer; sharding group {self.group.group_id} has one member")
        if self.offset % self.m == 0:
            raise ProtectionUnavailableError(f"ARC offset {self.offset} maps every member onto itself")

    def source_rank(self, holder_rank: int) -> int:
        return (holder_rank + self.offset) % self.m

    def holder_rank(self, source_rank: int) -> int:
        return (source_rank - self.offset) % self.m

    def recover_candidates(self, lost_rank: int) -> List[int]:
        return [self.holder_rank(lost_rank)]

    def redundancy_bytes(self, assignments: List[ShardAssignment]) -> Dict[int, int]:
        return {n: r.length for n, r in arc_redundancy(assignments, self.group, self.offset).items()}

    def protect(self, shards: Mapping[int, np.ndarray]) -> Dict[int, List[ParamBuffer]]:
        held = {}
        for rank, node_id in enumerate(self.group.members):
            source = self.node_at(self.source_rank(rank))
            held[node_id] = [ParamBuffer(as_bytes_array(shards[source]).copy(), Role.MODEL,
                                         owner_node=node_id, group_id=self.group.group_id, source_node=source)]
        return held

    def describe(self) -> str:
        return f"arc(offset={self.offset})"
