"""
Hybrid-parallel cluster topology.

Lays DP x TP x PP ranks onto nodes, forms one sharding group per pipeline
stage and cuts each group's parameter space into per-node byte ranges.
TP stays inside a node; the node is the unit that snapshots.
"""

import hashlib
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

from reft.errors import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClusterSpec:
    """Static description of the training cluster and its per-link costs."""

    dp_size: int
    pp_size: int
    tp_size: int
    gpus_per_node: int
    d2h_bandwidth: float
    internode_bandwidth: float
    nfs_bandwidth: float
    microbatch_compute_time: Tuple[float, ...]
    num_microbatches: int
    zero1_enabled: bool = False
    fwd_ratio: float = 1.0 / 3.0
    grad_sync_time: Tuple[float, ...] = ()
    separate_interconnect: bool = True
    host_xor_bandwidth: float = float("inf")
    batch_size: int = 1

    def __post_init__(self):
        # Accept a scalar compute time / sync time and broadcast it to every stage.
        if isinstance(self.microbatch_compute_time, (int, float)):
            object.__setattr__(self, 'microbatch_compute_time',
                               (float(self.microbatch_compute_time),) * max(self.pp_size, 1))
        else:
            object.__setattr__(self, 'microbatch_compute_time',
                               tuple(float(c) for c in self.microbatch_compute_time))
        if isinstance(self.grad_sync_time, (int, float)):
            object.__setattr__(self, 'grad_sync_time',
                               (float(self.grad_sync_time),) * max(self.pp_size, 1))
        elif not self.grad_sync_time:
            object.__setattr__(self, 'grad_sync_time', (0.0,) * max(self.pp_size, 1))
        else:
            object.__setattr__(self, 'grad_sync_time', tuple(float(g) for g in self.grad_sync_time))

    @property
    def world_size(self) -> int:
        return self.dp_size * self.pp_size * self.tp_size

    @property
    def node_count(self) -> int:
        return self.world_size // self.gpus_per_node

    def validate(self) -> "ClusterSpec":
        """Check the invariants; returns self so calls can be chained."""
        for name in ('dp_size', 'pp_size', 'tp_size', 'gpus_per_node', 'num_microbatches', 'batch_size'):
            if getattr(self, name) < 1:
                raise ConfigurationError("must be >= 1", field=f"cluster.{name}")
        if self.world_size % self.gpus_per_node != 0:
            raise ConfigurationError(
                f"dp*pp*tp = {self.world_size} is not a multiple of gpus_per_node = {self.gpus_per_node}",
                field="cluster.gpus_per_node")
        if (self.dp_size * self.tp_size) % self.gpus_per_node != 0:
            raise ConfigurationError(
                "a node may not span two pipeline stages (dp*tp must be a multiple of gpus_per_node)",
                field="cluster.gpus_per_node")
        for name in ('d2h_bandwidth', 'internode_bandwidth', 'nfs_bandwidth', 'host_xor_bandwidth'):
            if not getattr(self, name) > 0:
                raise ConfigurationError("bandwidth must be > 0", field=f"cluster.{name}")
        if len(self.microbatch_compute_time) != self.pp_size:
            raise ConfigurationError(
                f"expected {self.pp_size} per-stage values, got {len(self.microbatch_compute_time)}",
                field="cluster.microbatch_compute_time")
        if any(c <= 0 for c in self.microbatch_compute_time):
            raise ConfigurationError("compute times must be > 0", field="cluster.microbatch_compute_time")
        if len(self.grad_sync_time) != self.pp_size or any(g < 0 for g in self.grad_sync_time):
            raise ConfigurationError("need one non-negative value per stage", field="cluster.grad_sync_time")
        if not 0.0 < self.fwd_ratio < 1.0:
            raise ConfigurationError("must lie in (0, 1)", field="cluster.fwd_ratio")
        return self


@dataclass(frozen=True)
class NodeInfo:
    node_id: int
    pp_stage: int
    dp_ranks: Tuple[int, ...]
    tp_ranks: Tuple[int, ...]

    @property
    def dp_rank(self) -> int:
        return self.dp_ranks[0]


@dataclass(frozen=True)
class Topology:
    spec: ClusterSpec
    nodes: Tuple[NodeInfo, ...]

    def node(self, node_id: int) -> NodeInfo:
        if not 0 <= node_id < len(self.nodes):
            raise ConfigurationError(f"unknown node {node_id}", field="topology.node")
        return self.nodes[node_id]

    def nodes_at_stage(self, pp_stage: int) -> List[NodeInfo]:
        return [n for n in self.nodes if n.pp_stage == pp_stage]

    def digest(self) -> bytes:
        """SHA-256 over the canonical layout; identifies the topology in checkpoint files."""
        h = hashlib.sha256()
        s = self.spec
        h.update(f"{s.dp_size}/{s.pp_size}/{s.tp_size}/{s.gpus_per_node}".encode())
        for n in self.nodes:
            h.update(f"|{n.node_id}:{n.pp_stage}:{n.dp_ranks}:{n.tp_ranks}".encode())
        return h.digest()


@dataclass(frozen=True)
class ByteRange:
    start: int
    stop: int

    @property
    def length(self) -> int:
        return self.stop - self.start


@dataclass(frozen=True)
class ShardingGroup:
    group_id: int
    pp_stage: int
    members: Tuple[int, ...]
    total_bytes: int

    @property
    def size(self) -> int:
        return len(self.members)

    def rank_of(self, node_id: int) -> int:
        return self.members.index(node_id)


@dataclass(frozen=True)
class ShardAssignment:
    node_id: int
    group_id: int
    local_range: ByteRange
    optimizer_range: Optional[ByteRange] = None
    # optimizer shards under ZeRO-1 exist once in the whole cluster
    optimizer_redundant: bool = field(default=True)


def build_topology(spec: ClusterSpec) -> Topology:
    """
    Place ranks on nodes row-major: pipeline stage outermost, then DP, TP innermost.

    Args:
        spec: Validated cluster description

    Returns:
        Topology with one NodeInfo per node
    """
    spec.validate()
    per_stage = spec.dp_size * spec.tp_size
    nodes = []
    for node_id in range(spec.node_count):
        first = node_id * spec.gpus_per_node
        ranks = range(first, first + spec.gpus_per_node)
        pp_stage = first // per_stage
        dp_ranks = sorted({(r % per_stage) // spec.tp_size for r in ranks})
        tp_ranks = sorted({r % spec.tp_size for r in ranks})
        nodes.append(NodeInfo(node_id, pp_stage, tuple(dp_ranks), tuple(tp_ranks)))
    logger.debug(f"Built topology with {len(nodes)} nodes across {spec.pp_size} stages")
    return Topology(spec=spec, nodes=tuple(nodes))


def ceil_split(total: int, parts: int) -> List[ByteRange]:
    """Cut [0, total) into ``parts`` ranges of ceil(total/parts); the tail range is truncated."""
    if parts < 1:
        raise ConfigurationError("cannot split into zero parts")
    step = -(-total // parts) if total else 0
    ranges = []
    for i in range(parts):
        start = min(i * step, total)
        ranges.append(ByteRange(start, min(start + step, total)))
    return ranges


def per_stage_split(total_bytes: int, pp_size: int) -> List[int]:
    """Stage byte counts for a model of ``total_bytes`` split over ``pp_size`` stages."""
    return [r.length for r in ceil_split(total_bytes, pp_size)]


def form_sharding_groups(topology: Topology, per_stage_bytes: Sequence[int]) -> List[ShardingGroup]:
    spec = topology.spec
    if len(per_stage_bytes) != spec.pp_size:
        raise ConfigurationError(
            f"expected {spec.pp_size} stage sizes, got {len(per_stage_bytes)}", field="model.per_stage_bytes")
    if any(b <= 0 for b in per_stage_bytes):
        raise ConfigurationError("stage sizes must be > 0", field="model.per_stage_bytes")

    groups = []
    for stage in range(spec.pp_size):
        members = tuple(n.node_id for n in topology.nodes_at_stage(stage))
        groups.append(ShardingGroup(group_id=stage, pp_stage=stage, members=members,
                                    total_bytes=int(per_stage_bytes[stage])))
    return groups


def assign_shards(group: ShardingGroup, zero1: bool = False, optimizer_bytes: int = 0,
                  pp_size: int = 1) -> List[ShardAssignment]:
    """
    Give each group member a contiguous slice of the stage's parameter space.

    With ZeRO-1, ``optimizer_bytes`` is the whole-model optimizer size; each node
    owns W_optimizer/(m*n) of it and that range has no inherent replica.
    """
    if group.size == 0:
        raise ConfigurationError(f"sharding group {group.group_id} has no members")

    model_ranges = ceil_split(group.total_bytes, group.size)
    opt_ranges: List[Optional[ByteRange]] = [None] * group.size
    if zero1:
        if not 0 <= group.pp_stage < pp_size:
            raise ConfigurationError(f"stage {group.pp_stage} outside {pp_size} pipeline stages",
                                     field="cluster.pp_size")
        stage_optimizer = per_stage_split(optimizer_bytes, pp_size)[group.pp_stage]
        opt_ranges = ceil_split(stage_optimizer, group.size)

    return [
        ShardAssignment(node_id=node_id, group_id=group.group_id, local_range=model_ranges[rank],
                        optimizer_range=opt_ranges[rank], optimizer_redundant=not zero1)
        for rank, node_id in enumerate(group.members)
    ]


def model_shard_bytes(total_model_bytes: int, m: int, n: int) -> int:
    """Per-node model shard W_model / (m*n), rounded up."""
    return -(-total_model_bytes // (m * n))
