"""
Base class for in-memory redundancy strategies
"""

from abc import ABC, abstractmethod
from typing import Dict, FrozenSet, List, Mapping

import numpy as np

from reft.protection.buffers import ParamBuffer, Role
from reft.topology import ShardAssignment, ShardingGroup


class ProtectionStrategy(ABC):
    """
    Base class for a redundancy strategy applied inside one sharding group.

    A strategy instance tolerates the loss of one member on the roles it protects.
    """

    name: str = "base"
    roles: FrozenSet[Role] = frozenset()

    def __init__(self, group: ShardingGroup):
        self.group = group
        self.m = group.size
        self.check_available()

    def check_available(self) -> None:
        """Raise ProtectionUnavailableError when the group cannot host this strategy."""

    @abstractmethod
    def redundancy_bytes(self, assignments: List[ShardAssignment]) -> Dict[int, int]:
        """
        Extra bytes each member snapshots for this strategy

        Args:
            assignments: The group's shard assignments, in member order

        Returns:
            node_id -> bytes
        """
        pass

    @abstractmethod
    def protect(self, shards: Mapping[int, np.ndarray]) -> Dict[int, List[ParamBuffer]]:
        """
        Build the redundancy buffers every member keeps in host memory

        Args:
            shards: node_id -> that node's shard bytes (or optimizer values for optimizer strategies)

        Returns:
            node_id -> buffers it holds for its peers
        """
        pass

    @abstractmethod
    def recover_candidates(self, lost_rank: int) -> List[int]:
        """Member ranks whose buffers carry (part of) the state of ``lost_rank``."""
        pass

    def node_at(self, rank: int) -> int:
        return self.group.members[rank % self.m]

    def describe(self) -> str:
        return self.name
