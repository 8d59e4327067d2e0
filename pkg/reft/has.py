"""
Hierarchical asynchronous snapshotting planner.

Each node's snapshot bytes are assigned first to pipeline bubbles (layer 1),
then overlapped with compute (layer 2), then with gradient-sync communication
(layer 3). Whatever does not fit in one iteration rolls into the next.
"""

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from reft.errors import CapacityError, ConfigurationError
from reft.metrics import IterationMetrics, OverheadReport
from reft.pipeline import BubbleMode, StageSchedule, Window, estimate_bubble_time
from reft.topology import ClusterSpec, ShardAssignment, Topology

logger = logging.getLogger(__name__)

DEFAULT_CHUNK_SIZE = 64 * 2 ** 20


@dataclass(frozen=True)
class SnapshotPlacement:
    layer: int
    start: float
    end: float
    bytes: int
    iteration_offset: int = 0


@dataclass
class SnapshotPlan:
    node_id: int
    shard_bytes: int
    layer1_bytes: int = 0
    layer2_bytes: int = 0
    layer3_bytes: int = 0
    chunk_size: int = DEFAULT_CHUNK_SIZE
    placements: List[SnapshotPlacement] = field(default_factory=list)
    spillover: bool = False
    d2h_bandwidth: float = 0.0

    @property
    def iterations(self) -> int:
        """Iterations the snapshot spans."""
        return max((p.iteration_offset for p in self.placements), default=-1) + 1

    def layer_seconds(self, layer: int) -> float:
        return sum(p.end - p.start for p in self.placements if p.layer == layer)


def estimate_snapshot_time(nbytes: int, d2h_bandwidth: float) -> float:
    if d2h_bandwidth <= 0:
        raise ConfigurationError("B_io must be > 0", field="cluster.d2h_bandwidth")
    return nbytes / d2h_bandwidth


def split_parameter(shard_bytes: int, t_ss: float, t_bubble: float) -> Tuple[int, int]:
    """
    Split a shard between the bubble and the rest.

    The bubble takes floor(shard_bytes * t_bubble / t_ss) bytes when the
    snapshot outlasts the bubble, otherwise everything.
    """
    if t_ss < 0 or t_bubble < 0:
        raise ValueError("times must be >= 0")
    if t_ss == 0 or t_ss < t_bubble:
        return shard_bytes, 0
    bubble_bytes = int(shard_bytes * t_bubble // t_ss)
    return bubble_bytes, shard_bytes - bubble_bytes


def _clip_windows(windows: Sequence[Window], seconds: float) -> List[Window]:
    """Keep the earliest ``seconds`` worth of windows."""
    clipped = []
    for start, end in sorted(windows):
        if seconds <= 0:
            break
        take = min(end - start, seconds)
        clipped.append((start, start + take))
        seconds -= take
    return clipped


def layer_windows(schedule: StageSchedule, spec: ClusterSpec, mode: BubbleMode = BubbleMode.PROFILED,
                  layer3_enabled: Optional[bool] = None) -> Dict[int, List[Window]]:
    """Time windows available to each layer on one stage, iteration-local."""
    bubbles = [(s, e) for s, e in schedule.bubble_windows if e > s]
    if mode is BubbleMode.CLOSED_FORM:
        bubbles = _clip_windows(bubbles, estimate_bubble_time(schedule.pp_stage, spec))
    if layer3_enabled is None:
        layer3_enabled = spec.separate_interconnect
    return {
        1: bubbles,
        2: [w for w in schedule.compute_windows() if w[1] > w[0]],
        3: [w for w in schedule.comm_windows if w[1] > w[0]] if layer3_enabled else [],
    }


def _tile(nbytes: int, windows: Sequence[Window], cursors: List[float], layer: int, offset: int,
          chunk_size: int, bandwidth: float) -> Tuple[List[SnapshotPlacement], int]:
    """
    Tile ``nbytes`` into windows earliest-first in chunks of at most ``chunk_size``.

    ``cursors`` holds how far each window is already used and is advanced in place.
    Returns the placements and the bytes that did not fit.
    """
    placements = []
    remaining = nbytes
    for i, (start, end) in enumerate(windows):
        while remaining > 0:
            room = int((end - cursors[i]) * bandwidth)
            if room <= 0:
                break
            size = min(chunk_size, remaining, room)
            t0 = cursors[i]
            t1 = min(t0 + size / bandwidth, end)
            placements.append(SnapshotPlacement(layer, t0, t1, size, offset))
            cursors[i] = t1
            remaining -= size
        if remaining == 0:
            break
    return placements, remaining


def plan_node(node_id: int, shard_bytes: int, schedule: StageSchedule, spec: ClusterSpec,
              mode: BubbleMode = BubbleMode.PROFILED, chunk_size: int = DEFAULT_CHUNK_SIZE,
              layer3_enabled: Optional[bool] = None) -> SnapshotPlan:
    """Waterfall one node's snapshot through layers 1, 2, 3 and later iterations."""
    if shard_bytes < 0:
        raise ConfigurationError("snapshot bytes must be >= 0", field="snapshot.bytes")
    if chunk_size < 1:
        raise ConfigurationError("must be >= 1", field="snapshot.chunk_size")
    bw = spec.d2h_bandwidth
    windows = layer_windows(schedule, spec, mode, layer3_enabled)
    capacity = {layer: sum(e - s for s, e in ws) for layer, ws in windows.items()}
    if shard_bytes > 0 and sum(int((e - s) * bw) for ws in windows.values() for s, e in ws) == 0:
        raise CapacityError(f"node {node_id}: no transfer window in an iteration")

    plan = SnapshotPlan(node_id=node_id, shard_bytes=shard_bytes, chunk_size=chunk_size, d2h_bandwidth=bw)
    layer_totals = [0, 0, 0]
    remaining = shard_bytes
    offset = 0
    while remaining > 0:
        for layer in (1, 2, 3):
            if remaining == 0:
                break
            t_ss = estimate_snapshot_time(remaining, bw)
            want, _ = split_parameter(remaining, t_ss, capacity[layer])
            if want == 0:
                continue
            cursors = [s for s, _ in windows[layer]]
            placed, missed = _tile(want, windows[layer], cursors, layer, offset, chunk_size, bw)
            plan.placements.extend(placed)
            layer_totals[layer - 1] += want - missed
            remaining -= want - missed
        if remaining > 0:
            offset += 1
    plan.layer1_bytes, plan.layer2_bytes, plan.layer3_bytes = layer_totals
    plan.spillover = offset > 0
    if plan.spillover:
        logger.warning(f"Node {node_id}: snapshot of {shard_bytes} bytes spans {offset + 1} iterations; "
                       f"the snapshot interval must be at least that")
    return plan


def snapshot_bytes(assignment: ShardAssignment, redundancy_bytes: int = 0) -> int:
    """Local model shard, optimizer shard and redundancy buffers a node copies device-to-host."""
    opt = assignment.optimizer_range.length if assignment.optimizer_range is not None else 0
    return assignment.local_range.length + opt + redundancy_bytes


def plan_snapshot(assignments: Sequence[ShardAssignment], schedules: Sequence[StageSchedule], spec: ClusterSpec,
                  mode: BubbleMode = BubbleMode.PROFILED, *,
                  redundancy_bytes: Union[int, Mapping[int, int]] = 0,
                  chunk_size: int = DEFAULT_CHUNK_SIZE, layer3_enabled: Optional[bool] = None,
                  topology: Optional[Topology] = None) -> Dict[int, SnapshotPlan]:
    """
    Build a SnapshotPlan for every assigned node.

    Args:
        assignments: Shard assignments of all groups
        schedules: One StageSchedule per pipeline stage
        spec: Cluster description (B_io, interconnect layout)
        mode: Bubble source; profiled windows or the closed-form estimate
        redundancy_bytes: Extra bytes per node from protection, as a constant or a node-to-bytes map
        chunk_size: D2H chunk size
        layer3_enabled: Overrides ``spec.separate_interconnect``
        topology: Maps nodes to stages; falls back to the group id

    Returns:
        Plans keyed by node id
    """
    by_stage = {s.pp_stage: s for s in schedules}
    plans = {}
    for a in assignments:
        stage = topology.node(a.node_id).pp_stage if topology is not None else a.group_id
        if stage not in by_stage:
            raise ConfigurationError(f"no schedule for stage {stage} of node {a.node_id}", field="simulate.schedule")
        extra = redundancy_bytes.get(a.node_id, 0) if isinstance(redundancy_bytes, Mapping) else redundancy_bytes
        plans[a.node_id] = plan_node(a.node_id, snapshot_bytes(a, extra), by_stage[stage], spec, mode,
                                     chunk_size, layer3_enabled)
    spilled = sum(p.spillover for p in plans.values())
    logger.info(f"Planned snapshots for {len(plans)} nodes ({mode.value} bubbles, {spilled} spilling over)")
    return plans


def compute_overhead(metrics: Sequence[IterationMetrics], baseline: Sequence[IterationMetrics]) -> OverheadReport:
    """Per-iteration O_in-mem of a snapshotting run against its baseline; failure stalls excluded."""
    if len(metrics) != len(baseline):
        raise ConfigurationError(f"runs differ in length ({len(metrics)} vs {len(baseline)} iterations)",
                                 field="run.iterations")
    per_iteration = []
    for m, b in zip(metrics, baseline):
        if m.iteration != b.iteration:
            raise ConfigurationError(f"iteration index mismatch {m.iteration} != {b.iteration}",
                                     field="run.iterations")
        per_iteration.append(max(0.0, (m.t_iter - m.stalls) - (b.t_iter - b.stalls)))
    return OverheadReport(per_iteration)


def analytic_residual(plan: SnapshotPlan, alpha2: float, alpha3: float) -> float:
    """Interference the plan costs: alpha2 * layer-2 seconds + alpha3 * layer-3 seconds."""
    return alpha2 * plan.layer_seconds(2) + alpha3 * plan.layer_seconds(3)


def plan_to_csv(plans: Union[Mapping[int, SnapshotPlan], Sequence[SnapshotPlan]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["node", "layer", "window_start", "bytes", "window_end", "iteration_offset"])
    items = plans.values() if isinstance(plans, Mapping) else plans
    for plan in sorted(items, key=lambda p: p.node_id):
        for p in plan.placements:
            writer.writerow([plan.node_id, p.layer, repr(p.start), p.bytes, repr(p.end), p.iteration_offset])
    return buf.getvalue()
