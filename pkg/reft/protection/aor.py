"""
Asynchronous optimizer recomputation.

Under ZeRO-1 every optimizer shard exists once. Each member keeps a host-side
replica of its ring successor's shard and replays the successor's snapshotted
gradients through the same SGD step, so the replica tracks the original bit
for bit.
"""

import logging
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from reft.errors import CodecError, ProtectionUnavailableError
from reft.protection.base_strategy import ProtectionStrategy
from reft.protection.buffers import ParamBuffer, Role
from reft.topology import ShardAssignment, ShardingGroup

logger = logging.getLogger(__name__)

FloatLike = Union[ParamBuffer, np.ndarray]


def _values(x: FloatLike) -> np.ndarray:
    if isinstance(x, ParamBuffer):
        return x.as_float32()
    return np.asarray(x, dtype=np.float32)


def sgd_step(weights: np.ndarray, gradient: np.ndarray, eta: float) -> np.ndarray:
    """W - eta * g elementwise in float32."""
    if weights.shape != gradient.shape:
        raise CodecError(f"optimizer/gradient length mismatch: {weights.size} != {gradient.size}")
    return (weights - np.float32(eta) * gradient).astype(np.float32, copy=False)


def aor_update(optimizer_shard: FloatLike, gradient_shard: FloatLike, eta: float) -> ParamBuffer:
    """One optimizer step on a replica; inputs are little-endian float32 buffers."""
    weights = _values(optimizer_shard)
    updated = sgd_step(weights, _values(gradient_shard), eta)
    owner = optimizer_shard.owner_node if isinstance(optimizer_shard, ParamBuffer) else -1
    group = optimizer_shard.group_id if isinstance(optimizer_shard, ParamBuffer) else -1
    source = optimizer_shard.source_node if isinstance(optimizer_shard, ParamBuffer) else None
    return ParamBuffer(updated.astype('<f4').view(np.uint8), Role.OPTIMIZER, owner_node=owner, group_id=group,
                       source_node=source)


class AorReplica:
    """
    Host replica of one peer's optimizer shard.

    Updates run on a single-worker host task queue, so they apply in submit
    order. Gradients are kept after they are applied until ``trim`` so a
    lagging replica can be replayed.
    """

    def __init__(self, holder: int, source: int, initial: np.ndarray, eta: float, step: int = 0):
        self.holder = holder
        self.source = source
        self.eta = eta
        self._weights = np.array(initial, dtype=np.float32, copy=True)
        self._step = step
        self._lock = threading.Lock()
        self._executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix=f"aor-{holder}")
        self._history: Dict[int, np.ndarray] = {}

    @property
    def step(self) -> int:
        with self._lock:
            return self._step

    def submit(self, gradient: np.ndarray, step: int) -> Future:
        """Queue the gradient the source applied at ``step`` (0-based)."""
        grad = np.array(gradient, dtype=np.float32, copy=True)
        return self._executor.submit(self._apply, grad, step)

    def _apply(self, gradient: np.ndarray, step: int) -> int:
        with self._lock:
            if step != self._step:
                raise CodecError(f"replica of node {self.source} is at step {self._step}, got gradient for {step}")
            self._weights = sgd_step(self._weights, gradient, self.eta)
            self._history[step] = gradient
            self._step += 1
            return self._step

    def drain(self) -> None:
        """Block until every queued update has been applied."""
        self._executor.submit(lambda: None).result()

    def snapshot(self) -> Tuple[np.ndarray, int]:
        with self._lock:
            return self._weights.copy(), self._step

    def replay(self, gradients: Sequence[np.ndarray]) -> int:
        """Apply missed gradients synchronously, in order."""
        for grad in gradients:
            self.submit(grad, self.step).result()
        return self.step

    def trim(self, before_step: int) -> None:
        with self._lock:
            for s in [s for s in self._history if s < before_step]:
                del self._history[s]

    def close(self) -> None:
        self._executor.shutdown(wait=True)


def aor_reconstruct(node: int, replicas: Mapping[int, AorReplica], target_step: Optional[int] = None
                    ) -> Tuple[np.ndarray, int]:
    """
    Fetch a failed node's optimizer shard from the peer replica.

    Returns:
        (weights, lag) where lag is how many steps the replica trails ``target_step``
    """
    if node not in replicas:
        raise ProtectionUnavailableError(f"no host replica holds the optimizer shard of node {node}")
    replica = replicas[node]
    replica.drain()
    weights, step = replica.snapshot()
    lag = max(0, (target_step if target_step is not None else step) - step)
    if lag:
        logger.warning(f"Optimizer replica of node {node} lags {lag} steps; replay needed")
    return weights, lag


class AorStrategy(ProtectionStrategy):
    name = "aor"
    roles = frozenset({Role.OPTIMIZER})

    def __init__(self, group: ShardingGroup, eta: float = 0.01):
        self.eta = eta
        super().__init__(group)

    def check_available(self) -> None:
        if self.m < 2:
            raise ProtectionUnavailableError(f"AOR needs a peer; sharding group {self.group.group_id} has one member")

    def holder_rank(self, source_rank: int) -> int:
        return (source_rank - 1) % self.m

    def recover_candidates(self, lost_rank: int) -> List[int]:
        return [self.holder_rank(lost_rank)]

    def redundancy_bytes(self, assignments: List[ShardAssignment]) -> Dict[int, int]:
        # the holder snapshots its successor's gradient slice, the size of that optimizer shard
        by_node = {a.node_id: a for a in assignments}
        extra = {}
        for rank, node_id in enumerate(self.group.members):
            succ = by_node[self.node_at(rank + 1)]
            extra[node_id] = succ.optimizer_range.length if succ.optimizer_range is not None else 0
        return extra

    def protect(self, shards: Mapping[int, np.ndarray]) -> Dict[int, List[ParamBuffer]]:
        held = {}
        for rank, node_id in enumerate(self.group.members):
            source = self.node_at(rank + 1)
            values = _values(shards[source]).astype('<f4')
            held[node_id] = [ParamBuffer(values.view(np.uint8).copy(), Role.OPTIMIZER, owner_node=node_id,
                                         group_id=self.group.group_id, source_node=source)]
        return held

    def replicas(self, optimizer: Mapping[int, np.ndarray], step: int = 0) -> Dict[int, AorReplica]:
        """Start one host replica per member, keyed by the node whose shard it mirrors."""
        out = {}
        for rank, node_id in enumerate(self.group.members):
            source = self.node_at(rank + 1)
            out[source] = AorReplica(node_id, source, _values(optimizer[source]), self.eta, step)
        return out
