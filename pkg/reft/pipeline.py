"""
1F1B pipeline schedules and bubble estimation.

The schedule generator and the simulator share ``stage_op_order`` and the same
dependency rule, so a simulation without snapshotting reproduces these
timelines exactly.
"""

import csv
import io
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Sequence, Tuple, Union

from reft.errors import TraceError
from reft.topology import ClusterSpec, Topology

logger = logging.getLogger(__name__)

# Window = (start, end) in seconds relative to the iteration start
Window = Tuple[float, float]


class OpKind(Enum):
    FWD = "FWD"
    BWD = "BWD"


class BubbleMode(Enum):
    PROFILED = "profiled"
    CLOSED_FORM = "closed_form"


@dataclass(frozen=True)
class PipelineOp:
    kind: OpKind
    microbatch: int
    start: float
    duration: float

    @property
    def end(self) -> float:
        return self.start + self.duration


@dataclass
class StageSchedule:
    pp_stage: int
    microbatch_ops: List[PipelineOp]
    bubble_windows: List[Window]
    comm_windows: List[Window] = field(default_factory=list)
    iteration_length: float = 0.0

    @property
    def busy_time(self) -> float:
        return sum(op.duration for op in self.microbatch_ops)

    @property
    def comm_time(self) -> float:
        return sum(e - s for s, e in self.comm_windows)

    @property
    def bubble_time(self) -> float:
        return sum(e - s for s, e in self.bubble_windows)

    def compute_windows(self) -> List[Window]:
        return [(op.start, op.end) for op in self.microbatch_ops]


def stage_op_order(p: int, num_stages: int, num_microbatches: int) -> List[Tuple[OpKind, int]]:
    """Classic 1F1B order for stage ``p``: warm-up forwards, steady 1F1B, cool-down backwards."""
    warmup = min(num_stages - p - 1, num_microbatches)
    order = [(OpKind.FWD, i) for i in range(warmup)]
    for i in range(num_microbatches - warmup):
        order.append((OpKind.FWD, warmup + i))
        order.append((OpKind.BWD, i))
    order.extend((OpKind.BWD, i) for i in range(num_microbatches - warmup, num_microbatches))
    return order


def op_durations(spec: ClusterSpec, p: int) -> Dict[OpKind, float]:
    c = spec.microbatch_compute_time[p]
    return {OpKind.FWD: c * spec.fwd_ratio, OpKind.BWD: c * (1.0 - spec.fwd_ratio)}


def dependency(kind: OpKind, p: int, microbatch: int, num_stages: int):
    """The cross-stage op that must finish first, or None."""
    if kind is OpKind.FWD and p > 0:
        return (p - 1, OpKind.FWD, microbatch)
    if kind is OpKind.BWD and p < num_stages - 1:
        return (p + 1, OpKind.BWD, microbatch)
    return None


def _idle_windows(busy: List[Window], length: float) -> List[Window]:
    gaps = []
    cursor = 0.0
    for start, end in sorted(busy):
        if start > cursor:
            gaps.append((cursor, start))
        cursor = max(cursor, end)
    if length > cursor:
        gaps.append((cursor, length))
    return gaps


def generate_1f1b_schedule(spec: ClusterSpec) -> List[StageSchedule]:
    """
    Lay out one training iteration of synchronous 1F1B.

    Each stage runs its ops in 1F1B order; an op starts when the stage is free
    and its cross-stage dependency has finished. After its last backward a stage
    runs its gradient sync, and the iteration ends at the slowest stage.
    """
    P, M = spec.pp_size, spec.num_microbatches
    if M < P:
        logger.warning(f"num_microbatches={M} < pp_size={P}: pipeline never reaches steady state")

    orders = [stage_op_order(p, P, M) for p in range(P)]
    durations = [op_durations(spec, p) for p in range(P)]
    cursor = [0] * P
    free_at = [0.0] * P
    finished: Dict[Tuple[int, OpKind, int], float] = {}
    ops: List[List[PipelineOp]] = [[] for _ in range(P)]

    remaining = sum(len(o) for o in orders)
    while remaining:
        progressed = False
        for p in range(P):
            while cursor[p] < len(orders[p]):
                kind, mb = orders[p][cursor[p]]
                dep = dependency(kind, p, mb, P)
                if dep is not None and dep not in finished:
                    break
                start = max(free_at[p], finished[dep]) if dep is not None else free_at[p]
                op = PipelineOp(kind, mb, start, durations[p][kind])
                ops[p].append(op)
                finished[(p, kind, mb)] = op.end
                free_at[p] = op.end
                cursor[p] += 1
                remaining -= 1
                progressed = True
        if not progressed:
            raise RuntimeError("1F1B dependency deadlock")

    comm = [(free_at[p], free_at[p] + spec.grad_sync_time[p]) for p in range(P)]
    length = max(end for _, end in comm)

    schedules = []
    for p in range(P):
        comm_windows = [comm[p]] if comm[p][1] > comm[p][0] else []
        busy = [(op.start, op.end) for op in ops[p]] + comm_windows
        schedules.append(StageSchedule(pp_stage=p, microbatch_ops=ops[p],
                                       bubble_windows=_idle_windows(busy, length),
                                       comm_windows=comm_windows, iteration_length=length))
    return schedules


def iteration_length(schedules: Sequence[StageSchedule]) -> float:
    return max(s.iteration_length for s in schedules) if schedules else 0.0


def estimate_bubble_time(p: int, spec: ClusterSpec) -> float:
    """Closed-form 1F1B bubble estimate: (0.8p + 2|P| - p - 2) * C_p, clamped at zero."""
    num_stages = spec.pp_size
    if not 0 <= p < num_stages:
        raise ValueError(f"stage {p} outside [0, {num_stages})")
    return max(0.0, (0.8 * p + 2 * num_stages - p - 2) * spec.microbatch_compute_time[p])


def profile_bubbles(source: Union[Sequence[StageSchedule], object],
                    topology: Topology = None) -> Dict[int, float]:
    """
    Measured idle seconds per stage per iteration.

    ``source`` is either a schedule (list of StageSchedule) or a simulation
    result with ``trace`` and ``metrics``; traces need the topology to map nodes
    to stages and are averaged over iterations.
    """
    if isinstance(source, (list, tuple)):
        return {s.pp_stage: s.bubble_time for s in source}

    trace = getattr(source, 'trace', None)
    metrics = getattr(source, 'metrics', None)
    if trace is None or metrics is None or topology is None:
        raise TraceError("profiling a trace needs a simulation result and its topology")

    lengths = {m.iteration: m.t_iter - m.stalls for m in metrics}
    busy: Dict[Tuple[int, int], float] = {}
    for rec in trace:
        if rec.kind in ("FWD", "BWD", "COMM") and rec.iteration in lengths:
            key = (rec.node_id, rec.iteration)
            busy[key] = busy.get(key, 0.0) + rec.duration

    result = {}
    for stage in range(topology.spec.pp_size):
        stage_nodes = topology.nodes_at_stage(stage)
        if not stage_nodes:
            raise TraceError(f"no nodes at stage {stage}")
        node_id = stage_nodes[0].node_id
        idle = []
        for it, length in lengths.items():
            if (node_id, it) not in busy:
                raise TraceError(f"trace has no compute ops for stage {stage} in iteration {it}")
            idle.append(length - busy[(node_id, it)])
        result[stage] = sum(idle) / len(idle) if idle else 0.0
    return result


def stage_bubble_seconds(schedules: Sequence[StageSchedule], spec: ClusterSpec,
                         mode: BubbleMode = BubbleMode.PROFILED) -> Dict[int, float]:
    """Bubble seconds per stage from the requested source, never mixing the two."""
    if mode is BubbleMode.CLOSED_FORM:
        return {p: estimate_bubble_time(p, spec) for p in range(spec.pp_size)}
    return profile_bubbles(list(schedules))


def schedule_to_csv(schedules: Sequence[StageSchedule]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["stage", "kind", "start", "duration"])
    for s in schedules:
        rows = [(op.start, op.kind.value, op.duration) for op in s.microbatch_ops]
        rows += [(start, "COMM", end - start) for start, end in s.comm_windows]
        for start, kind, duration in sorted(rows):
            writer.writerow([s.pp_stage, kind, repr(start), repr(duration)])
    return buf.getvalue()
