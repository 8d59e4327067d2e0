"""
Iteration metrics and the overhead quantities O_in-mem and O_restart.
"""

import csv
import io
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

METRICS_SCHEMA_VERSION = "# reft-sim v1"

METRICS_COLUMNS = ["iteration", "t_iter", "o_inmem", "layer1_bytes", "layer2_bytes", "layer3_bytes", "stalls"]


@dataclass
class IterationMetrics:
    iteration: int
    t_iter: float
    o_inmem: float = 0.0
    bytes_snapshotted_by_layer: Tuple[int, int, int] = (0, 0, 0)
    stalls: float = 0.0


@dataclass
class OverheadReport:
    """Per-iteration O_in-mem between a snapshotting run and its baseline."""
    per_iteration: List[float] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return sum(self.per_iteration) / len(self.per_iteration) if self.per_iteration else 0.0

    @property
    def max(self) -> float:
        return max(self.per_iteration, default=0.0)

    def to_dict(self):
        return {'mean': self.mean, 'max': self.max, 'iterations': len(self.per_iteration)}


def o_restart(failure_time: float, last_usable_save_time: float) -> float:
    """Lost work between the failure and the newest usable snapshot or checkpoint."""
    return max(0.0, failure_time - last_usable_save_time)


def samples_per_second(metrics: Sequence[IterationMetrics], batch_size: int) -> float:
    total = sum(m.t_iter for m in metrics)
    return len(metrics) * batch_size / total if total > 0 else 0.0


def metrics_to_csv(metrics: Sequence[IterationMetrics]) -> str:
    buf = io.StringIO()
    buf.write(METRICS_SCHEMA_VERSION + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for m in metrics:
        l1, l2, l3 = m.bytes_snapshotted_by_layer
        writer.writerow([m.iteration, repr(m.t_iter), repr(m.o_inmem), l1, l2, l3, repr(m.stalls)])
    return buf.getvalue()
