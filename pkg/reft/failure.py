"""
Failure injection and the elastic node-signal state machine.

Times-to-failure follow a Weibull law, P(survive t) = exp(-lambda * t^c), with
rates expressed per day; simulation time is in seconds.
"""

import csv
import io
import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np

from reft.errors import ConfigurationError, IllegalTransitionError
from reft.topology import ShardingGroup, Topology

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class ReliabilityParams:
    lambda_hw: float
    lambda_sw: float
    c: float
    time_unit: str = "day"

    def validate(self) -> "ReliabilityParams":
        if self.lambda_hw < 0 or self.lambda_sw < 0:
            raise ConfigurationError("failure rates must be >= 0", field="failure.lambda")
        if self.c <= 0:
            raise ConfigurationError("Weibull shape must be > 0", field="failure.c")
        if self.time_unit != "day":
            raise ConfigurationError(f"unsupported rate unit '{self.time_unit}' (rates are per day)",
                                     field="failure.time_unit")
        return self

    def hardware_survival(self, t_days: float) -> float:
        return survival(self.lambda_hw, self.c, t_days)

    def software_survival(self, t_days: float) -> float:
        return survival(self.lambda_sw, self.c, t_days)


def survival(lam: float, c: float, t: float) -> float:
    """exp(-lam * t^c); identically 1 when lam is zero."""
    if lam == 0 or t <= 0:
        return 1.0
    return math.exp(-lam * t ** c)


def sample_ttf(lam: float, c: float, rng: np.random.Generator, size: Optional[int] = None):
    """
    Inverse-CDF draw t = (-ln u / lam)^(1/c), in the rate's time unit.

    Returns +inf (never fails) when lam is zero.
    """
    if lam == 0:
        return np.full(size, np.inf) if size is not None else math.inf
    # 1 - random() lies in (0, 1], so the log is finite
    u = 1.0 - rng.random(size)
    return (-np.log(u) / lam) ** (1.0 / c)


class FailureKind(Enum):
    HARDWARE = "HARDWARE"
    SOFTWARE = "SOFTWARE"


@dataclass(frozen=True)
class FailureEvent:
    time_s: float
    node_id: int
    kind: FailureKind

    def __lt__(self, other):
        return (self.time_s, self.node_id, self.kind.value) < (other.time_s, other.node_id, other.kind.value)


def inject_failures(topology: Topology, params: ReliabilityParams, horizon_s: float,
                    rng: np.random.Generator) -> List[FailureEvent]:
    """Independent hardware and software time-to-first-failure per node, kept if inside the horizon."""
    if horizon_s <= 0:
        raise ConfigurationError("horizon must be > 0", field="failure.horizon")
    params.validate()
    k = len(topology.nodes)
    hw_days = sample_ttf(params.lambda_hw, params.c, rng, size=k)
    sw_days = sample_ttf(params.lambda_sw, params.c, rng, size=k)

    script = []
    for node_id in range(k):
        for days, kind in ((hw_days[node_id], FailureKind.HARDWARE), (sw_days[node_id], FailureKind.SOFTWARE)):
            t = float(days) * SECONDS_PER_DAY
            if t < horizon_s:
                script.append(FailureEvent(t, node_id, kind))
    script.sort()
    logger.info(f"Injected {len(script)} failures over {horizon_s:.0f}s across {k} nodes")
    return script


def script_to_csv(script: Sequence[FailureEvent]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["time_s", "node", "kind"])
    for ev in script:
        writer.writerow([repr(ev.time_s), ev.node_id, ev.kind.value])
    return buf.getvalue()


def script_from_csv(text: str) -> List[FailureEvent]:
    reader = csv.DictReader(line for line in io.StringIO(text) if not line.startswith("#"))
    try:
        script = [FailureEvent(float(row["time_s"]), int(row["node"]), FailureKind(row["kind"].strip().upper()))
                  for row in reader]
    except (KeyError, ValueError) as e:
        raise ConfigurationError(f"malformed failure script: {e}", field="failure.script") from e
    return sorted(script)


def monte_carlo_survival(k: int, lam: float, c: float, t: float, trials: int,
                         rng: np.random.Generator) -> float:
    """Fraction of trials in which none of ``k`` independent nodes failed by ``t``."""
    if k == 0:
        return 1.0
    ttf = sample_ttf(lam, c, rng, size=(trials, k)) if lam else np.full((trials, k), np.inf)
    return float(np.mean(np.all(ttf > t, axis=1)))


# ---------------------------------------------------------------------------
# Elastic signals
# ---------------------------------------------------------------------------

class NodeState(Enum):
    HEALTHY = "HEALTHY"
    SNAP = "SNAP"
    COMPLETED = "COMPLETED"
    UNHEALTHY = "UNHEALTHY"
    OFFLINE = "OFFLINE"
    RECOVERING = "RECOVERING"
    NFS_RESTART = "NFS_RESTART"


class SignalEvent(Enum):
    SNAP = "snap"
    SHARDS_COMPLETE = "shards_complete"
    COMMIT = "commit"
    SOFTWARE_FAILURE = "software_failure"
    HARDWARE_FAILURE = "hardware_failure"
    BROADCAST = "broadcast"
    RECOVERY_SUCCESS = "recovery_success"
    RECOVERY_FAILED = "recovery_failed"
    RESTART_COMPLETE = "restart_complete"


_RUNNING = (NodeState.HEALTHY, NodeState.SNAP, NodeState.COMPLETED)

TRANSITIONS: Dict[tuple, NodeState] = {
    (NodeState.HEALTHY, SignalEvent.SNAP): NodeState.SNAP,
    (NodeState.SNAP, SignalEvent.SHARDS_COMPLETE): NodeState.COMPLETED,
    (NodeState.COMPLETED, SignalEvent.COMMIT): NodeState.HEALTHY,
    (NodeState.UNHEALTHY, SignalEvent.BROADCAST): NodeState.RECOVERING,
    (NodeState.OFFLINE, SignalEvent.BROADCAST): NodeState.RECOVERING,
    (NodeState.RECOVERING, SignalEvent.RECOVERY_SUCCESS): NodeState.HEALTHY,
    (NodeState.RECOVERING, SignalEvent.RECOVERY_FAILED): NodeState.NFS_RESTART,
    (NodeState.NFS_RESTART, SignalEvent.RESTART_COMPLETE): NodeState.HEALTHY,
}
for _state in _RUNNING:
    TRANSITIONS[(_state, SignalEvent.SOFTWARE_FAILURE)] = NodeState.UNHEALTHY
    TRANSITIONS[(_state, SignalEvent.HARDWARE_FAILURE)] = NodeState.OFFLINE
    TRANSITIONS[(_state, SignalEvent.BROADCAST)] = NodeState.RECOVERING


def transition(state: NodeState, event: SignalEvent) -> NodeState:
    try:
        return TRANSITIONS[(state, event)]
    except KeyError:
        raise IllegalTransitionError(f"{state.value} does not accept {event.value}") from None


@dataclass
class NodeSignal:
    node_id: int
    state: NodeState = NodeState.HEALTHY

    def apply(self, event: SignalEvent) -> NodeState:
        self.state = transition(self.state, event)
        return self.state


class SignalBoard:
    """
    Cluster-wide view of node signals.

    Mutated only by the simulator thread. Every applied transition is appended
    to ``history`` as (time, node_id, new_state) so traces can replay it.
    """

    def __init__(self, node_ids: Iterable[int]):
        self.signals = {n: NodeSignal(n) for n in node_ids}
        self.history: List[tuple] = []

    def state(self, node_id: int) -> NodeState:
        return self.signals[node_id].state

    def apply(self, node_id: int, event: SignalEvent, time: float = 0.0) -> NodeState:
        new_state = self.signals[node_id].apply(event)
        self.history.append((time, node_id, new_state))
        return new_state

    def fail(self, events: Sequence[FailureEvent]) -> None:
        """Mark failed nodes, then broadcast so every node enters RECOVERING."""
        for ev in events:
            kind = SignalEvent.HARDWARE_FAILURE if ev.kind is FailureKind.HARDWARE else SignalEvent.SOFTWARE_FAILURE
            if self.state(ev.node_id) in _RUNNING:
                self.apply(ev.node_id, kind, ev.time_s)
        t = max((ev.time_s for ev in events), default=0.0)
        for node_id in self.signals:
            if self.state(node_id) is not NodeState.RECOVERING:
                self.apply(node_id, SignalEvent.BROADCAST, t)

    def finish_recovery(self, success: bool, time: float = 0.0) -> None:
        for node_id in self.signals:
            if success:
                self.apply(node_id, SignalEvent.RECOVERY_SUCCESS, time)
            else:
                self.apply(node_id, SignalEvent.RECOVERY_FAILED, time)
                self.apply(node_id, SignalEvent.RESTART_COMPLETE, time)

    def can_commit(self, group: ShardingGroup) -> bool:
        return all(self.state(n) is not NodeState.OFFLINE for n in group.members)

    def offline_nodes(self) -> List[int]:
        return [n for n, s in self.signals.items() if s.state is NodeState.OFFLINE]
