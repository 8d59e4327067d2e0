"""
Discrete-event simulation of synchronous 1F1B training with asynchronous
snapshot copies, on a simpy clock.

Each node has three resource streams: COMPUTE (FWD/BWD ops), D2H (snapshot
chunks over one ``simpy.Resource`` channel per node) and NETWORK (gradient
sync). Snapshot and recovery signals go on a separate CONTROL stream. Iterations
run on an iteration-local clock and end at a global barrier; trace times are
absolute.
"""

import csv
import io
import itertools
import logging
from collections import deque
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Callable, Deque, Dict, List, Optional, Sequence, Tuple

import simpy

from reft.errors import ConfigurationError, ReftError
from reft.failure import FailureEvent, NodeState, SignalBoard, SignalEvent
from reft.metrics import IterationMetrics
from reft.pipeline import OpKind, StageSchedule, dependency, iteration_length, op_durations, stage_op_order
from reft.topology import Topology

logger = logging.getLogger(__name__)


class Stream(IntEnum):
    # integer value is the tie-break rank inside one timestamp
    COMPUTE = 0
    D2H = 1
    NETWORK = 2
    CONTROL = 3


class EventKind(Enum):
    FWD = "FWD"
    BWD = "BWD"
    SNAPSHOT_CHUNK = "SNAPSHOT_CHUNK"
    COMM = "COMM"
    FAILURE = "FAILURE"
    SIGNAL = "SIGNAL"


@dataclass(order=True)
class SimEvent:
    time: float
    node_id: int
    stream: Stream
    seq: int
    kind: EventKind = field(compare=False)
    payload: object = field(default=None, compare=False)


class StreamTimeout(simpy.events.Event):
    """
    A timeout whose value is a SimEvent. Timeouts due at the same instant fire
    by node, then stream, then scheduling order.
    """

    def __init__(self, env: simpy.Environment, delay: float, event: SimEvent):
        super().__init__(env)
        self._ok = True
        self._value = event
        env.schedule(self, priority=event.node_id * len(Stream) + int(event.stream), delay=delay)


class EventQueue:
    """
    Simulation clock on a ``simpy.Environment``; pushed events are totally
    ordered by (time, node_id, stream, seq).

    Processes yield the timeout ``push`` returns. ``pop`` steps the clock to the
    next pushed event; ``run`` drains everything.
    """

    def __init__(self):
        self.env = simpy.Environment()
        self._seq = itertools.count()
        self._pending = 0
        self._fired: Deque[SimEvent] = deque()

    @property
    def now(self) -> float:
        return self.env.now

    def push(self, time: float, node_id: int, stream: Stream, kind: EventKind, payload=None) -> StreamTimeout:
        if time < self.env.now:
            raise ReftError(f"event at {time} scheduled before current time {self.env.now}")
        event = SimEvent(time, node_id, stream, next(self._seq), kind, payload)
        timeout = StreamTimeout(self.env, time - self.env.now, event)
        timeout.callbacks.append(self._fire)
        self._pending += 1
        return timeout

    def _fire(self, timeout: StreamTimeout) -> None:
        self._pending -= 1
        self._fired.append(timeout.value)

    def pop(self) -> SimEvent:
        while not self._fired:
            if not self._pending:
                raise ReftError("no pending events")
            self.env.step()
        return self._fired.popleft()

    def run(self) -> None:
        self.env.run()
        self._fired.clear()

    def __len__(self):
        return self._pending + len(self._fired)


@dataclass(frozen=True)
class TraceRecord:
    time: float
    node_id: int
    stream: Stream
    kind: str
    duration: float
    bytes: int = 0
    iteration: int = 0
    detail: str = ""
    seq: int = 0

    def sort_key(self):
        return (self.time, self.node_id, int(self.stream), self.seq)


@dataclass
class SimState:
    """What a failure handler gets to see about the run."""
    time: float = 0.0
    iteration: int = 0
    last_snapshot_time: Optional[float] = None
    last_snapshot_iteration: Optional[int] = None
    last_nfs_time: Optional[float] = None
    last_nfs_iteration: Optional[int] = None


@dataclass
class SimulationResult:
    metrics: List[IterationMetrics]
    trace: List[TraceRecord]
    snapshots_completed: int = 0
    snapshots_skipped: int = 0
    last_completed_snapshot_time: Optional[float] = None
    recoveries: List[object] = field(default_factory=list)

    @property
    def total_time(self) -> float:
        return sum(m.t_iter for m in self.metrics)


FailureHandler = Callable[[Sequence[FailureEvent], SimState], object]


@dataclass
class _ActiveOp:
    kind: EventKind
    microbatch: int
    start: float
    end: float


@dataclass
class _Chunk:
    node_id: int
    layer: int
    planned_start: float
    nbytes: int
    start: float = 0.0
    end: float = 0.0
    charged: set = field(default_factory=set)


class _NodeRun:
    def __init__(self, env: simpy.Environment, node_id: int, stage: int, stage_index: int, order):
        self.env = env
        self.node_id = node_id
        self.stage = stage
        self.stage_index = stage_index
        self.order = order
        self.free_at = 0.0
        self.compute: Optional[_ActiveOp] = None
        self.network: Optional[_ActiveOp] = None
        self.chunk: Optional[_Chunk] = None
        self.channel = simpy.Resource(env, capacity=1)
        self.d2h_free = 0.0
        self.done_at: Optional[float] = None
        self.finished: Dict[Tuple[OpKind, int], simpy.Event] = {}

    def finished_event(self, kind: OpKind, microbatch: int) -> simpy.Event:
        """Succeeds with the op's end time once (kind, microbatch) has run here."""
        key = (kind, microbatch)
        if key not in self.finished:
            self.finished[key] = self.env.event()
        return self.finished[key]


class Simulator:
    """
    One simpy process per node compute stream and per snapshot chunk, over one topology.

    Args:
        topology: Cluster layout
        schedules: Per-stage 1F1B schedules (the baseline the run is compared to)
        snapshot_plans: Objects with ``node_id`` and ``placements`` (each with
            ``layer``, ``start``, ``end``, ``bytes``, ``iteration_offset``)
        failure_script: FailureEvents with absolute times in seconds
        alpha2: Compute interference coefficient for D2H chunks
        alpha3: Network interference coefficient for D2H chunks
        snapshot_interval: Start a snapshot every this many iterations
        nfs_interval: Persist the last committed snapshot every this many iterations (0 = never)
        failure_handler: Called with the failures of one iteration; returns an
            outcome with ``t_load``, ``recompute_s`` and ``path``
        signal_board: Node signal states, created if not given
    """

    def __init__(self, topology: Topology, schedules: Sequence[StageSchedule], snapshot_plans=(),
                 failure_script: Sequence[FailureEvent] = (), *, alpha2: float = 0.0, alpha3: float = 0.0,
                 snapshot_interval: int = 1, nfs_interval: int = 0,
                 failure_handler: Optional[FailureHandler] = None,
                 signal_board: Optional[SignalBoard] = None):
        self.topology = topology
        self.spec = topology.spec
        self.schedules = list(schedules)
        self.plans = {p.node_id: p for p in snapshot_plans}
        self.failures = sorted(failure_script)
        self.alpha2 = alpha2
        self.alpha3 = alpha3
        self.snapshot_interval = snapshot_interval
        self.nfs_interval = nfs_interval
        self.failure_handler = failure_handler
        self.board = signal_board or SignalBoard(n.node_id for n in topology.nodes)
        self._validate()

        self.baseline = iteration_length(self.schedules)
        self.stage_nodes = [[n.node_id for n in topology.nodes_at_stage(p)] for p in range(self.spec.pp_size)]
        self.durations = [op_durations(self.spec, p) for p in range(self.spec.pp_size)]
        self.orders = [stage_op_order(p, self.spec.pp_size, self.spec.num_microbatches)
                       for p in range(self.spec.pp_size)]
        self.queue = EventQueue()
        self.state = SimState()
        self.trace: List[TraceRecord] = []
        self._trace_seq = itertools.count()
        self._inflight: Optional[int] = None
        self._pending_complete: Dict[int, int] = {}

    def _validate(self) -> None:
        node_count = len(self.topology.nodes)
        if len(self.schedules) != self.spec.pp_size:
            raise ConfigurationError(f"expected {self.spec.pp_size} stage schedules, got {len(self.schedules)}",
                                     field="simulate.schedule")
        for node_id, plan in self.plans.items():
            if not 0 <= node_id < node_count:
                raise ConfigurationError(f"plan references unknown node {node_id}", field="simulate.plan")
            for pl in plan.placements:
                if pl.layer not in (1, 2, 3) or pl.bytes < 0 or pl.end < pl.start or pl.iteration_offset < 0:
                    raise ConfigurationError(f"invalid placement {pl} on node {node_id}", field="simulate.plan")
        for ev in self.failures:
            if not 0 <= ev.node_id < node_count:
                raise ConfigurationError(f"failure script references unknown node {ev.node_id}",
                                         field="failure.script")
        if self.snapshot_interval < 1:
            raise ConfigurationError("must be >= 1", field="snapshot.interval")
        if self.alpha2 < 0 or self.alpha3 < 0:
            raise ConfigurationError("interference coefficients must be >= 0", field="snapshot.alpha")

    # ------------------------------------------------------------------
    # recording

    def _record(self, t0: float, it: int, time: float, node_id: int, stream: Stream, kind: str,
                duration: float = 0.0, nbytes: int = 0, detail: str = "") -> None:
        self._iter_records.append(TraceRecord(t0 + time, node_id, stream, kind, duration, nbytes, it, detail,
                                              next(self._trace_seq)))

    def _signal(self, t0: float, it: int, time: float, node_id: int, event: SignalEvent) -> None:
        new_state = self.board.apply(node_id, event, t0 + time)
        self._record(t0, it, time, node_id, Stream.CONTROL, EventKind.SIGNAL.value, detail=new_state.value)

    # ------------------------------------------------------------------
    # compute and network streams

    def _hold(self, node_id: int, stream: Stream, kind: EventKind, busy):
        """Wait until ``busy.end``, following interference extensions made meanwhile."""
        while self.queue.now < busy.end:
            yield self.queue.push(busy.end, node_id, stream, kind)

    def _compute(self, run: _NodeRun):
        stage = run.stage
        for kind, mb in run.order:
            ready = run.free_at
            dep = dependency(kind, stage, mb, self.spec.pp_size)
            if dep is not None:
                dep_stage, dep_kind, dep_mb = dep
                peer = self._runs[self.stage_nodes[dep_stage][run.stage_index]]
                dep_end = yield peer.finished_event(dep_kind, dep_mb)
                ready = max(ready, dep_end)
            op = _ActiveOp(EventKind(kind.value), mb, ready, ready + self.durations[stage][kind])
            run.compute = op
            self._charge_running_chunk(run, Stream.COMPUTE, op)
            yield from self._hold(run.node_id, Stream.COMPUTE, op.kind, op)

            self._record(self._t0, self._it, op.start, run.node_id, Stream.COMPUTE, op.kind.value,
                         op.end - op.start, detail=f"mb={op.microbatch}")
            run.free_at = op.end
            run.compute = None
            run.finished_event(kind, mb).succeed(op.end)
        yield from self._grad_sync(run)

    def _grad_sync(self, run: _NodeRun):
        sync = self.spec.grad_sync_time[run.stage]
        if sync <= 0:
            run.done_at = run.free_at
            return
        op = _ActiveOp(EventKind.COMM, -1, run.free_at, run.free_at + sync)
        run.network = op
        self._charge_running_chunk(run, Stream.NETWORK, op)
        yield from self._hold(run.node_id, Stream.NETWORK, op.kind, op)

        self._record(self._t0, self._it, op.start, run.node_id, Stream.NETWORK, EventKind.COMM.value,
                     op.end - op.start)
        run.network = None
        run.done_at = op.end

    def _charge_running_chunk(self, run: _NodeRun, stream: Stream, op: _ActiveOp) -> None:
        # a chunk that started at the same instant as this op overlaps it
        chunk = run.chunk
        if chunk is not None and chunk.start == op.start and stream not in chunk.charged:
            chunk.charged.add(stream)
            alpha = self.alpha2 if stream is Stream.COMPUTE else self.alpha3
            op.end += alpha * (chunk.end - chunk.start)

    # ------------------------------------------------------------------
    # D2H stream

    def _copy_chunk(self, run: _NodeRun, chunk: _Chunk):
        if chunk.planned_start > self.queue.now:
            yield self.queue.push(chunk.planned_start, run.node_id, Stream.D2H, EventKind.SNAPSHOT_CHUNK, chunk)
        with run.channel.request() as request:
            yield request
            self._start_chunk(run, chunk, max(chunk.planned_start, run.d2h_free))
            yield from self._hold(run.node_id, Stream.D2H, EventKind.SNAPSHOT_CHUNK, chunk)
            self._finish_chunk(run, chunk)

    def _start_chunk(self, run: _NodeRun, chunk: _Chunk, now: float) -> None:
        chunk.start = now
        chunk.end = now + chunk.nbytes / self.spec.d2h_bandwidth
        run.chunk = chunk
        run.d2h_free = chunk.end
        d = chunk.end - chunk.start
        for stream, op, alpha in ((Stream.COMPUTE, run.compute, self.alpha2),
                                  (Stream.NETWORK, run.network, self.alpha3)):
            if op is not None and op.start <= now < op.end:
                chunk.charged.add(stream)
                op.end += alpha * d

    def _finish_chunk(self, run: _NodeRun, chunk: _Chunk) -> None:
        self._record(self._t0, self._it, chunk.start, run.node_id, Stream.D2H, EventKind.SNAPSHOT_CHUNK.value,
                     chunk.end - chunk.start, chunk.nbytes, detail=f"layer={chunk.layer}")
        self._layer_bytes[chunk.layer - 1] += chunk.nbytes
        self._chunk_end = max(self._chunk_end, chunk.end)
        if run.chunk is chunk:
            run.chunk = None
        self._remaining_chunks[run.node_id] -= 1
        if self._remaining_chunks[run.node_id] == 0 and \
                self._pending_complete.get(run.node_id) == self._it - self._inflight:
            self._signal(self._t0, self._it, chunk.end, run.node_id, SignalEvent.SHARDS_COMPLETE)

    # ------------------------------------------------------------------
    # one iteration

    def _chunks_for(self, it: int) -> Dict[int, List[_Chunk]]:
        chunks: Dict[int, List[_Chunk]] = {}
        if self._inflight is None:
            return chunks
        offset = it - self._inflight
        for node_id, plan in self.plans.items():
            for pl in plan.placements:
                if pl.iteration_offset == offset and pl.bytes > 0:
                    chunks.setdefault(node_id, []).append(_Chunk(node_id, pl.layer, pl.start, pl.bytes))
        for node_chunks in chunks.values():
            node_chunks.sort(key=lambda c: c.planned_start)
        return chunks

    def _plan_span(self, node_id: int) -> int:
        plan = self.plans.get(node_id)
        if plan is None:
            return 0
        offsets = [pl.iteration_offset for pl in plan.placements if pl.bytes > 0]
        return max(offsets) + 1 if offsets else 0

    def _maybe_start_snapshot(self, t0: float, it: int) -> None:
        if not self.plans or it % self.snapshot_interval != 0:
            return
        participants = [n for n in self.plans if self._plan_span(n) > 0]
        if not participants:
            return
        if self._inflight is not None or any(self.board.state(n) is not NodeState.HEALTHY for n in participants):
            self.snapshots_skipped += 1
            logger.debug(f"Iteration {it}: previous snapshot still in flight, skipping")
            return
        self._inflight = it
        self._pending_complete = {n: self._plan_span(n) - 1 for n in participants}
        for n in participants:
            self._signal(t0, it, 0.0, n, SignalEvent.SNAP)

    def _run_iteration(self, t0: float, it: int) -> Tuple[float, Tuple[int, int, int]]:
        self._t0, self._it = t0, it
        self._iter_records: List[TraceRecord] = []
        self._maybe_start_snapshot(t0, it)

        self.queue = EventQueue()
        env = self.queue.env
        self._runs: Dict[int, _NodeRun] = {}
        for stage, node_ids in enumerate(self.stage_nodes):
            for idx, node_id in enumerate(node_ids):
                self._runs[node_id] = _NodeRun(env, node_id, stage, idx, self.orders[stage])

        chunks = self._chunks_for(it)
        self._remaining_chunks = {n: len(c) for n, c in chunks.items()}
        self._layer_bytes = [0, 0, 0]
        self._chunk_end = 0.0
        for node_id, node_chunks in chunks.items():
            for chunk in node_chunks:
                env.process(self._copy_chunk(self._runs[node_id], chunk))
        for run in self._runs.values():
            env.process(self._compute(run))
        self.queue.run()

        stuck = [n for n, r in self._runs.items() if r.done_at is None]
        if stuck:
            raise ReftError(f"iteration {it} deadlocked on nodes {stuck}")
        length = max(max(r.done_at for r in self._runs.values()), self._chunk_end)

        if self._inflight is not None and self._pending_complete and all(
                self.board.state(n) is NodeState.COMPLETED for n in self._pending_complete):
            for n in self._pending_complete:
                self._signal(t0, it, length, n, SignalEvent.COMMIT)
            self.state.last_snapshot_time = t0 + length
            self.state.last_snapshot_iteration = it
            self.snapshots_completed += 1
            logger.debug(f"Snapshot started at iteration {self._inflight} committed at iteration {it}")
            self._inflight = None
            self._pending_complete = {}
        return length, tuple(self._layer_bytes)


    # ------------------------------------------------------------------
    # failures

    def _handle_failures(self, t0: float, it: int, end: float) -> float:
        """Consume every failure before ``end``; returns the stall seconds added."""
        stalls = 0.0
        while self.failures and self.failures[0].time_s < end + stalls:
            group = []
            while self.failures and self.failures[0].time_s < end + stalls:
                group.append(self.failures.pop(0))
            for ev in group:
                self._iter_records.append(TraceRecord(ev.time_s, ev.node_id, Stream.COMPUTE,
                                                      EventKind.FAILURE.value, 0.0, 0, it, ev.kind.value,
                                                      next(self._trace_seq)))
            logger.warning(f"Iteration {it}: {len(group)} failure(s) on nodes {[ev.node_id for ev in group]}")
            if self.failure_handler is None:
                continue

            t_fail = group[-1].time_s
            self.state.time = t_fail
            self.state.iteration = it
            seen = len(self.board.history)
            self.board.fail(group)
            self._inflight = None
            self._pending_complete = {}
            outcome = self.failure_handler(group, self.state)
            self.recoveries.append(outcome)
            stall = float(outcome.t_load) + float(outcome.recompute_s)
            success = getattr(outcome, 'path', 'nfs') != 'nfs'
            self.board.finish_recovery(success, t_fail + stall)
            for time, node_id, new_state in self.board.history[seen:]:
                self._iter_records.append(TraceRecord(time, node_id, Stream.CONTROL, EventKind.SIGNAL.value,
                                                      0.0, 0, it, new_state.value, next(self._trace_seq)))
            if not success:
                self.state.last_snapshot_time = None
                self.state.last_snapshot_iteration = None
            stalls += stall
        return stalls

    # ------------------------------------------------------------------

    def run(self, duration_iterations: int) -> SimulationResult:
        if duration_iterations < 0:
            raise ConfigurationError("must be >= 0", field="run.iterations")
        self.metrics: List[IterationMetrics] = []
        self.recoveries: List[object] = []
        self.snapshots_completed = 0
        self.snapshots_skipped = 0
        t0 = 0.0
        for it in range(duration_iterations):
            length, layer_bytes = self._run_iteration(t0, it)
            stalls = self._handle_failures(t0, it, t0 + length)
            if self.nfs_interval and (it + 1) % self.nfs_interval == 0 and self.state.last_snapshot_time is not None:
                self.state.last_nfs_time = self.state.last_snapshot_time
                self.state.last_nfs_iteration = self.state.last_snapshot_iteration
            self._iter_records.sort(key=TraceRecord.sort_key)
            self.trace.extend(self._iter_records)
            self.metrics.append(IterationMetrics(iteration=it, t_iter=length + stalls,
                                                 o_inmem=max(0.0, length - self.baseline),
                                                 bytes_snapshotted_by_layer=layer_bytes, stalls=stalls))
            t0 += length + stalls
            self.state.time = t0
            self.state.iteration = it + 1

        logger.info(f"Simulated {duration_iterations} iterations: {self.snapshots_completed} snapshots committed, "
                    f"{self.snapshots_skipped} skipped, {len(self.recoveries)} recoveries")
        return SimulationResult(metrics=self.metrics, trace=self.trace,
                                snapshots_completed=self.snapshots_completed,
                                snapshots_skipped=self.snapshots_skipped,
                                last_completed_snapshot_time=self.state.last_snapshot_time,
                                recoveries=self.recoveries)


def run_simulation(topology: Topology, schedules: Sequence[StageSchedule], snapshot_plans=(),
                   failure_script: Sequence[FailureEvent] = (), duration_iterations: int = 1,
                   **options) -> SimulationResult:
    """Build a Simulator and run it; keyword options are passed to ``Simulator``."""
    return Simulator(topology, schedules, snapshot_plans, failure_script, **options).run(duration_iterations)


TRACE_COLUMNS = ["time", "node", "stream", "kind", "duration", "bytes", "iteration", "detail"]


def trace_to_csv(trace: Sequence[TraceRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    for rec in trace:
        writer.writerow([repr(rec.time), rec.node_id, rec.stream.name, rec.kind, repr(rec.duration), rec.bytes,
                         rec.iteration, rec.detail])
    return buf.getvalue()
