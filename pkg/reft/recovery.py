"""
Recovery after failures: local load, reconstruction of lost shards, all-gather
inside each sharding group, and the NFS fallback.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np

from reft.errors import ReftError, UnrecoverableError
from reft.failure import FailureEvent, FailureKind
from reft.protection.aor import AorReplica
from reft.protection.buffers import Role, as_bytes_array
from reft.protection.engine import ProtectionConfig, ProtectionEngine, Reconstruction, Transfer
from reft.store.checkpoint_file import (CheckpointEntry, nfs_load_time, read_nfs_checkpoint,
                                        write_nfs_checkpoint)
from reft.store.snapshot_set import SnapshotSet, default_capacity
from reft.store.tmpfs import TmpfsStore
from reft.topology import (ClusterSpec, ShardAssignment, ShardingGroup, Topology, assign_shards, build_topology,
                           form_sharding_groups)

logger = logging.getLogger(__name__)

IN_MEMORY = "in_memory"
NFS = "nfs"


class RecoveryTimingModel:
    """Seconds spent in each recovery step for one cluster."""

    def __init__(self, spec: ClusterSpec):
        self.spec = spec

    def local_load_time(self, own_bytes: int) -> float:
        return own_bytes / self.spec.d2h_bandwidth

    def transfer_time(self, t: Transfer) -> float:
        xor = t.xor_bytes / self.spec.host_xor_bandwidth if t.xor_bytes else 0.0
        return t.nbytes / self.spec.internode_bandwidth + xor

    def reconstruct_time(self, rounds: Sequence[Sequence[Transfer]]) -> float:
        """Transfers of one round run in parallel; rounds run one after another."""
        return sum(max((self.transfer_time(t) for t in r), default=0.0) for r in rounds)

    def allgather_time(self, group_bytes: int, m: int) -> float:
        """Ring all-gather: (m - 1) steps of W_n / m bytes."""
        if m <= 1:
            return 0.0
        return (m - 1) * (group_bytes / m) / self.spec.internode_bandwidth

    def nfs_time(self, checkpoint_bytes: int) -> float:
        return nfs_load_time(checkpoint_bytes, self.spec.nfs_bandwidth)


@dataclass
class GroupRecovery:
    group_id: int
    failed: List[int]
    t_local: float = 0.0
    t_reconstruct: float = 0.0
    t_allgather: float = 0.0
    rounds: int = 0
    bytes_moved: int = 0

    @property
    def t_total(self) -> float:
        return self.t_local + self.t_reconstruct + self.t_allgather


@dataclass
class RecoveryReport:
    path: str
    t_load: float
    bytes_moved: int = 0
    recompute_s: float = 0.0
    bit_exact: Optional[bool] = None
    per_group: Dict[int, GroupRecovery] = field(default_factory=dict)
    failed_nodes: List[int] = field(default_factory=list)
    optimizer_lag_replayed: int = 0
    reason: str = ""

    def to_dict(self) -> dict:
        return {
            'path': self.path,
            't_load': self.t_load,
            'bytes_moved': self.bytes_moved,
            'recompute_s': self.recompute_s,
            'bit_exact': self.bit_exact,
            'failed_nodes': self.failed_nodes,
            'optimizer_lag_replayed': self.optimizer_lag_replayed,
            'reason': self.reason,
            'groups': [
                {'group': g.group_id, 'failed': g.failed, 't_local': g.t_local, 't_reconstruct': g.t_reconstruct,
                 't_allgather': g.t_allgather, 'rounds': g.rounds, 'bytes_moved': g.bytes_moved}
                for g in self.per_group.values()
            ],
        }


def all_gather_sync(group: ShardingGroup, shards: Mapping[int, bytes],
                    timing: Optional[RecoveryTimingModel] = None) -> Tuple[bytes, float]:
    """
    Concatenate the group's shards in member order.

    Returns:
        (W_n bytes every member now holds, modeled ring all-gather seconds)
    """
    gap = [n for n in group.members if n not in shards or shards[n] is None]
    if gap:
        raise UnrecoverableError(f"group {group.group_id}: shards of {gap} are missing", missing=gap)
    full = b"".join(bytes(shards[n]) for n in group.members)
    seconds = timing.allgather_time(len(full), group.size) if timing is not None else 0.0
    return full, seconds


def recompute_window(failure_time: float, save_time: Optional[float]) -> float:
    return max(0.0, failure_time - (save_time or 0.0))


class RecoveryCoordinator:
    """
    Drives recovery across every sharding group of one topology.

    Args:
        topology: Cluster layout
        groups: Sharding groups
        assignments: Shard assignments of all groups
        engines: Protection engine per group id
        snapshot_sets: Per-node host-memory snapshots
        tmpfs: Flushed snapshots that survive software failures
        replicas: AOR host replicas keyed by the node they mirror
        pending_gradients: Gradient slices not yet applied to a replica, keyed by source node
        checkpoint_bytes: Size of the NFS checkpoint, for fallback timing
        volatile_host_memory: Software failures also erase the node's host memory
        device_params: Full stage parameters on each device, replicated across the group under ZeRO-1
    """

    def __init__(self, topology: Topology, groups: Sequence[ShardingGroup], assignments: Sequence[ShardAssignment],
                 engines: Mapping[int, ProtectionEngine], snapshot_sets: Mapping[int, SnapshotSet],
                 tmpfs: Optional[TmpfsStore] = None, replicas: Optional[Mapping[int, AorReplica]] = None,
                 pending_gradients: Optional[Mapping[int, List[np.ndarray]]] = None, checkpoint_bytes: int = 0,
                 volatile_host_memory: bool = False, device_params: Optional[Mapping[int, bytes]] = None):
        self.topology = topology
        self.groups = list(groups)
        self.assignments = list(assignments)
        self.device_params = dict(device_params or {})
        self.engines = dict(engines)
        self.snapshot_sets = dict(snapshot_sets)
        self.tmpfs = tmpfs
        self.replicas = dict(replicas or {})
        self.pending_gradients = dict(pending_gradients or {})
        self.checkpoint_bytes = checkpoint_bytes
        self.volatile_host_memory = volatile_host_memory
        self.timing = RecoveryTimingModel(topology.spec)
        for engine in self.engines.values():
            engine.set_shard_lengths(self.assignments)

    def apply_failures(self, events: Iterable[FailureEvent]) -> Dict[int, FailureKind]:
        """
        Hardware failures erase host memory and tmpfs. Software failures keep both,
        unless host memory is volatile (the snapshot process dies with the trainer).
        Device memory of a failed node is always lost.
        """
        failed = {}
        for ev in events:
            failed[ev.node_id] = FailureKind.HARDWARE if (
                ev.kind is FailureKind.HARDWARE or failed.get(ev.node_id) is FailureKind.HARDWARE) else ev.kind
            self.device_params.pop(ev.node_id, None)
            if ev.kind is FailureKind.HARDWARE or self.volatile_host_memory:
                self.snapshot_sets[ev.node_id].wipe()
            if ev.kind is FailureKind.HARDWARE and self.tmpfs is not None:
                self.tmpfs.clear(ev.node_id)
        for node_id, kind in failed.items():
            logger.warning(f"Node {node_id} failed ({kind.value})")
        return failed

    def local_load(self, node_id: int) -> Optional[Tuple[int, Dict[str, bytes]]]:
        """A node's completed snapshot from host memory, else from tmpfs, else None."""
        iteration, shards = self.snapshot_sets[node_id].read_completed()
        if iteration is not None:
            return iteration, dict(shards)
        if self.tmpfs is not None and self.tmpfs.available(node_id):
            return self.tmpfs.load(node_id)
        return None

    def reconstruct_missing(self, group: ShardingGroup, failed: Set[int],
                            loaded: Mapping[int, Dict[str, bytes]]) -> Reconstruction:
        engine = self.engines[group.group_id]
        if len(failed) > engine.tolerance():
            raise UnrecoverableError(f"group {group.group_id}: {len(failed)} lost members exceed tolerance "
                                     f"{engine.tolerance()}", missing=sorted(failed))
        local = {n: as_bytes_array(loaded[n]["model"]) for n in group.members if n not in failed}
        held = {n: engine.buffers_from_shards(n, loaded[n]) for n in group.members if n not in failed}
        replicated = {n: self.device_params[n] for n in group.members
                      if n not in failed and n in self.device_params} if engine.zero1 else None
        return engine.reconstruct(failed, local, held, replicated)

    def _recover_optimizer(self, group: ShardingGroup, failed: Set[int], target_step: int) -> Tuple[Dict[int, bytes], int]:
        engine = self.engines[group.group_id]
        replayed = 0
        out = {}
        for n, (weights, lag) in engine.reconstruct_optimizer(failed, self.replicas, target_step).items():
            if lag:
                pending = self.pending_gradients.get(n, [])
                if len(pending) < lag:
                    raise UnrecoverableError(f"replica of node {n} lags {lag} steps with {len(pending)} "
                                             f"gradients buffered", missing=[n])
                self.replicas[n].replay(pending[:lag])
                self.pending_gradients[n] = pending[lag:]
                weights, _ = self.replicas[n].snapshot()
                replayed += lag
            out[n] = weights.astype('<f4').tobytes()
        return out, replayed

    def recover_in_memory(self, failed: Mapping[int, FailureKind]) -> Tuple[RecoveryReport, Dict[int, Dict[str, bytes]]]:
        """
        Run the three in-memory steps on every group.

        Returns:
            The report and each node's restored ``model`` (and ``optimizer``) shard
        """
        report = RecoveryReport(path=IN_MEMORY, t_load=0.0, failed_nodes=sorted(failed))
        restored: Dict[int, Dict[str, bytes]] = {}
        iterations = set()
        for group in self.groups:
            loaded = {}
            lost = set()
            for n in group.members:
                got = self.local_load(n)
                if got is None:
                    lost.add(n)
                else:
                    iterations.add(got[0])
                    loaded[n] = got[1]
            rec = self.reconstruct_missing(group, lost, loaded) if lost else Reconstruction({})
            shards = {n: loaded[n]["model"] for n in loaded}
            shards.update({n: s.tobytes() for n, s in rec.shards.items()})
            _, t_gather = all_gather_sync(group, shards, self.timing)

            own = max((len(loaded[n]["model"]) for n in loaded), default=0)
            info = GroupRecovery(group.group_id, sorted(lost), t_local=self.timing.local_load_time(own),
                                 t_reconstruct=self.timing.reconstruct_time(rec.rounds), t_allgather=t_gather,
                                 rounds=len(rec.rounds), bytes_moved=rec.bytes_moved)
            for n in group.members:
                restored[n] = {"model": shards[n]}
                if n in loaded and "optimizer" in loaded[n]:
                    restored[n]["optimizer"] = loaded[n]["optimizer"]
            if lost and self.engines[group.group_id].zero1:
                target = max(iterations) if iterations else 0
                opt, replayed = self._recover_optimizer(group, lost, target)
                report.optimizer_lag_replayed += replayed
                for n, data in opt.items():
                    restored[n]["optimizer"] = data
            report.per_group[group.group_id] = info

        if len(iterations) > 1:
            raise UnrecoverableError(f"survivors hold snapshots of different iterations {sorted(iterations)}")
        report.t_load = max((g.t_total for g in report.per_group.values()), default=0.0)
        report.bytes_moved = sum(g.bytes_moved for g in report.per_group.values())
        return report, restored

    def recover_or_fallback(self, events: Sequence[FailureEvent], failure_time: float,
                            last_snapshot_time: Optional[float], last_nfs_time: Optional[float] = None,
                            nfs_path: Optional[Union[str, Path]] = None
                            ) -> Tuple[RecoveryReport, Dict[int, Dict[str, bytes]]]:
        """
        Recover in memory when every group can, otherwise reload the NFS checkpoint.

        Recomputation is measured from the snapshot (or checkpoint) the run resumes from.
        """
        failed = self.apply_failures(events)
        if last_snapshot_time is not None:
            try:
                report, restored = self.recover_in_memory(failed)
                report.recompute_s = recompute_window(failure_time, last_snapshot_time)
                logger.info(f"In-memory recovery of {sorted(failed)}: t_load={report.t_load:.3f}s")
                return report, restored
            except UnrecoverableError as e:
                reason = str(e)
                logger.warning(f"In-memory recovery impossible ({e}); falling back to NFS")
        else:
            reason = "no completed snapshot"

        restored = {}
        size = self.checkpoint_bytes
        if nfs_path is not None:
            _, entries = read_nfs_checkpoint(nfs_path, self.topology.digest())
            for e in entries:
                restored.setdefault(e.node_id, {})[e.role.name.lower()] = e.data
            size = size or sum(len(e.data) for e in entries)
        report = RecoveryReport(path=NFS, t_load=self.timing.nfs_time(size), bytes_moved=size,
                                recompute_s=recompute_window(failure_time, last_nfs_time),
                                failed_nodes=sorted(failed), reason=reason)
        return report, restored


class SimulatedRecovery:
    """
    Failure handler for the simulator: picks the recovery path and times it
    without moving real bytes.

    Args:
        topology: Cluster layout
        groups: Sharding groups
        assignments: Shard assignments
        engines: Protection engine per group id
        checkpoint_bytes: NFS checkpoint size
        tmpfs_flush: Whether snapshots are flushed to tmpfs
        volatile_host_memory: Software failures also erase the node's host memory
    """

    def __init__(self, topology: Topology, groups: Sequence[ShardingGroup], assignments: Sequence[ShardAssignment],
                 engines: Mapping[int, ProtectionEngine], checkpoint_bytes: int, tmpfs_flush: bool = False,
                 volatile_host_memory: bool = False):
        self.topology = topology
        self.groups = list(groups)
        self.assignments = {a.node_id: a for a in assignments}
        self.engines = dict(engines)
        self.checkpoint_bytes = checkpoint_bytes
        self.tmpfs_flush = tmpfs_flush
        self.volatile_host_memory = volatile_host_memory
        self.timing = RecoveryTimingModel(topology.spec)
        for engine in self.engines.values():
            engine.set_shard_lengths(list(assignments))

    def __call__(self, events: Sequence[FailureEvent], state) -> RecoveryReport:
        # a software-failed node reloads from host memory, or from tmpfs when memory went with the process
        lost = {ev.node_id for ev in events
                if ev.kind is FailureKind.HARDWARE or (self.volatile_host_memory and not self.tmpfs_flush)}
        failure_time = max(ev.time_s for ev in events)
        if state.last_snapshot_time is not None:
            try:
                report = RecoveryReport(path=IN_MEMORY, t_load=0.0, failed_nodes=sorted(lost))
                for group in self.groups:
                    engine = self.engines[group.group_id]
                    group_lost = {n for n in group.members if n in lost}
                    if len(group_lost) > engine.tolerance():
                        raise UnrecoverableError(f"group {group.group_id} lost {len(group_lost)} members",
                                                 missing=sorted(group_lost))
                    rec = engine.reconstruct(group_lost)
                    own = max(self.assignments[n].local_range.length for n in group.members)
                    report.per_group[group.group_id] = GroupRecovery(
                        group.group_id, sorted(group_lost), t_local=self.timing.local_load_time(own),
                        t_reconstruct=self.timing.reconstruct_time(rec.rounds),
                        t_allgather=self.timing.allgather_time(group.total_bytes, group.size),
                        rounds=len(rec.rounds), bytes_moved=rec.bytes_moved)
                report.t_load = max(g.t_total for g in report.per_group.values())
                report.bytes_moved = sum(g.bytes_moved for g in report.per_group.values())
                report.recompute_s = recompute_window(failure_time, state.last_snapshot_time)
                return report
            except UnrecoverableError as e:
                reason = str(e)
        else:
            reason = "no completed snapshot"
        logger.warning(f"Recovering {sorted(lost)} from NFS: {reason}")
        return RecoveryReport(path=NFS, t_load=self.timing.nfs_time(self.checkpoint_bytes),
                              bytes_moved=self.checkpoint_bytes,
                              recompute_s=recompute_window(failure_time, state.last_nfs_time),
                              failed_nodes=sorted(lost), reason=reason)


# ---------------------------------------------------------------------------
# drill
# ---------------------------------------------------------------------------

@dataclass
class DrillSetup:
    topology: Topology
    groups: List[ShardingGroup]
    assignments: List[ShardAssignment]
    engines: Dict[int, ProtectionEngine]
    snapshot_sets: Dict[int, SnapshotSet]
    model: Dict[int, bytes]
    optimizer: Dict[int, bytes]
    replicas: Dict[int, AorReplica]
    pending: Dict[int, List[np.ndarray]]
    iteration: int
    device_params: Dict[int, bytes] = field(default_factory=dict)


def _write_snapshot(snapshot_set: SnapshotSet, iteration: int, shards: Mapping[str, bytes]) -> None:
    handle = snapshot_set.begin_snapshot(iteration, {sid: len(b) for sid, b in shards.items()}, abandon=True)
    for sid, data in shards.items():
        half = len(data) // 2
        if half:
            snapshot_set.write_shard(handle, sid, data[:half], 0)
        snapshot_set.write_shard(handle, sid, data[half:], half)
    snapshot_set.commit_snapshot(handle)


def prepare_drill(spec: ClusterSpec, config: ProtectionConfig, stage_bytes: int, rng: np.random.Generator,
                  steps: int = 3, replica_lag: int = 0, model_source: Optional[Mapping[int, bytes]] = None
                  ) -> DrillSetup:
    """
    Random parameters, a few SGD steps, protection and one committed snapshot per node.

    Optimizer shards (ZeRO-1 only) hold float32 values; the last ``replica_lag``
    gradients are withheld from the host replicas and left pending.
    """
    topology = build_topology(spec)
    groups = form_sharding_groups(topology, [stage_bytes] * spec.pp_size)
    assignments: List[ShardAssignment] = []
    engines: Dict[int, ProtectionEngine] = {}
    snapshot_sets: Dict[int, SnapshotSet] = {}
    model: Dict[int, bytes] = {}
    optimizer: Dict[int, bytes] = {}
    replicas: Dict[int, AorReplica] = {}
    pending: Dict[int, List[np.ndarray]] = {}
    device_params: Dict[int, bytes] = {}

    for group in groups:
        opt_total = 4 * stage_bytes * spec.pp_size if spec.zero1_enabled else 0
        group_assignments = assign_shards(group, zero1=spec.zero1_enabled, optimizer_bytes=opt_total,
                                          pp_size=spec.pp_size)
        assignments.extend(group_assignments)
        engine = ProtectionEngine(config, group, zero1=spec.zero1_enabled)
        engines[group.group_id] = engine

        shards = {}
        for a in group_assignments:
            if model_source is not None and a.node_id in model_source:
                shards[a.node_id] = as_bytes_array(model_source[a.node_id])
            else:
                shards[a.node_id] = rng.integers(0, 256, size=a.local_range.length, dtype=np.uint8)
            model[a.node_id] = shards[a.node_id].tobytes()

        opt_values = {}
        if spec.zero1_enabled:
            for a in group_assignments:
                count = max(1, a.optimizer_range.length // 4)
                opt_values[a.node_id] = rng.standard_normal(count).astype(np.float32)
            if engine.aor is not None:
                group_replicas = engine.aor.replicas(opt_values)
                replicas.update(group_replicas)
            for step in range(steps):
                for n in group.members:
                    grad = rng.standard_normal(opt_values[n].size).astype(np.float32)
                    opt_values[n] = (opt_values[n] - np.float32(config.eta) * grad).astype(np.float32)
                    if n in replicas:
                        if step < steps - replica_lag:
                            replicas[n].submit(grad, step)
                        else:
                            pending.setdefault(n, []).append(grad)
            for replica in replicas.values():
                replica.drain()
            for n in group.members:
                optimizer[n] = opt_values[n].astype('<f4').tobytes()
            # model parameters stay replicated on every member's device
            stage = b"".join(model[n] for n in group.members)
            device_params.update({n: stage for n in group.members})

        held = engine.protect(shards, opt_values if engine.aor is not None else None)
        for n in group.members:
            node_shards = {"model": model[n]}
            if n in optimizer:
                node_shards["optimizer"] = optimizer[n]
            for buf in held[n]:
                node_shards[engine.shard_id(buf)] = buf.bytes
            snapshot_sets[n] = SnapshotSet(n, default_capacity(sum(len(b) for b in node_shards.values())))
            _write_snapshot(snapshot_sets[n], steps, node_shards)

    return DrillSetup(topology, groups, assignments, engines, snapshot_sets, model, optimizer, replicas, pending,
                      steps, device_params)


def checkpoint_entries(setup: DrillSetup) -> List[CheckpointEntry]:
    entries = []
    for a in setup.assignments:
        entries.append(CheckpointEntry(a.group_id, a.node_id, Role.MODEL, setup.iteration, setup.model[a.node_id]))
        if a.node_id in setup.optimizer:
            entries.append(CheckpointEntry(a.group_id, a.node_id, Role.OPTIMIZER, setup.iteration,
                                           setup.optimizer[a.node_id]))
    return entries


def load_checkpoint_model(path: Union[str, Path]) -> Dict[int, bytes]:
    """MODEL shards of an NFS checkpoint keyed by node, for seeding a drill."""
    _, entries = read_nfs_checkpoint(path)
    return {e.node_id: e.data for e in entries if e.role is Role.MODEL}


def run_drill(spec: ClusterSpec, strategies: Sequence[str], kill: Sequence[int], *, software: bool = False,
              stage_bytes: int = 4096, seed: int = 0, steps: int = 3, replica_lag: int = 0,
              tmpfs_root: Optional[Union[str, Path]] = None, nfs_path: Optional[Union[str, Path]] = None,
              checkpoint: Optional[Union[str, Path]] = None, failure_time: Optional[float] = None,
              eta: float = 0.01, volatile_host_memory: bool = False) -> RecoveryReport:
    """
    Protect random parameters, kill nodes, recover, and compare bit for bit.

    Args:
        spec: Cluster to drill
        strategies: Strategy names, e.g. ``["arc", "aec"]``
        kill: Node ids to fail
        software: Fail them with software faults (host memory survives) instead of hardware faults
        stage_bytes: Model bytes per pipeline stage
        seed: RNG seed
        steps: Optimizer steps before the snapshot
        replica_lag: Gradients the AOR replicas have not applied yet
        tmpfs_root: Directory to flush snapshots to before the failure
        nfs_path: Where to write the NFS checkpoint used on fallback
        checkpoint: Existing NFS checkpoint whose MODEL shards seed the parameters
        failure_time: Seconds since the snapshot at which the failure hits
        volatile_host_memory: Software failures also erase host memory, leaving tmpfs as the local copy

    Returns:
        RecoveryReport with ``bit_exact`` set
    """
    rng = np.random.default_rng(seed)
    config = ProtectionConfig.from_names(strategies, eta=eta)
    model_source = load_checkpoint_model(checkpoint) if checkpoint is not None else None
    setup = prepare_drill(spec, config, stage_bytes, rng, steps=steps, replica_lag=replica_lag,
                          model_source=model_source)
    unknown = [n for n in kill if not 0 <= n < len(setup.topology.nodes)]
    if unknown:
        raise ReftError(f"cannot kill unknown nodes {unknown}")

    tmpfs = TmpfsStore(tmpfs_root) if tmpfs_root is not None else None
    if tmpfs is not None:
        tmpfs.flush(setup.snapshot_sets)
    entries = checkpoint_entries(setup)
    checkpoint_bytes = sum(len(e.data) for e in entries)
    if nfs_path is not None:
        write_nfs_checkpoint(nfs_path, entries, setup.topology.digest())

    coordinator = RecoveryCoordinator(setup.topology, setup.groups, setup.assignments, setup.engines,
                                      setup.snapshot_sets, tmpfs=tmpfs, replicas=setup.replicas,
                                      pending_gradients=setup.pending, checkpoint_bytes=checkpoint_bytes,
                                      volatile_host_memory=volatile_host_memory, device_params=setup.device_params)
    snapshot_time = 0.0
    t_fail = failure_time if failure_time is not None else 1.0
    kind = FailureKind.SOFTWARE if software else FailureKind.HARDWARE
    events = [FailureEvent(t_fail, n, kind) for n in sorted(set(kill))]
    try:
        report, restored = coordinator.recover_or_fallback(events, t_fail, snapshot_time, last_nfs_time=None,
                                                           nfs_path=nfs_path)
        if report.path == NFS and nfs_path is None:
            report.bit_exact = None
        else:
            report.bit_exact = all(
                restored.get(n, {}).get("model") == setup.model[n]
                and (n not in setup.optimizer or restored.get(n, {}).get("optimizer") == setup.optimizer[n])
                for n in setup.model)
    finally:
        for replica in setup.replicas.values():
            replica.close()
    logger.info(f"Drill {'+'.join(strategies) or 'none'} killing {sorted(set(kill))}: path={report.path}, "
                f"bit_exact={report.bit_exact}")
    return report
