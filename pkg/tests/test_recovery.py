"""
Test recovery: local load, in-memory reconstruction drills, the NFS fallback
and the load-time model.
"""

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from reft.config import load_config
from reft.errors import UnrecoverableError
from reft.failure import FailureEvent, FailureKind
from reft.metrics import o_restart
from reft.protection import ProtectionConfig, ProtectionEngine
from reft.recovery import (IN_MEMORY, NFS, RecoveryCoordinator, RecoveryTimingModel, SimulatedRecovery,
                           all_gather_sync, load_checkpoint_model, prepare_drill, run_drill)
from reft.simkernel import SimState
from reft.store.tmpfs import TmpfsStore
from reft.topology import ShardingGroup, assign_shards, build_topology, form_sharding_groups, per_stage_split
from tools.recover_drill_tool import drill_cluster

RECOVERY_CONFIG = Path(__file__).parent.parent / "data" / "configs" / "llama_1p3b_recovery.cfg"
NFS_LOAD_SECONDS = 9.27


def test_all_gather_time(make_spec):
    timing = RecoveryTimingModel(make_spec(internode_bandwidth=1000.0))
    group = ShardingGroup(group_id=0, pp_stage=0, members=(0, 1, 2, 3), total_bytes=1000)
    shards = {n: bytes([n]) * 250 for n in group.members}

    full, seconds = all_gather_sync(group, shards, timing)
    assert full == b"".join(shards[n] for n in group.members)
    assert seconds == pytest.approx(0.75)
    assert timing.allgather_time(1000, 1) == 0.0

    del shards[2]
    with pytest.raises(UnrecoverableError) as exc:
        all_gather_sync(group, shards, timing)
    assert exc.value.missing == [2]


def test_local_load_sources(tmp_path):
    setup = prepare_drill(drill_cluster(zero1=False), ProtectionConfig.from_names(["arc"]), 4096,
                          np.random.default_rng(0))
    tmpfs = TmpfsStore(tmp_path / "shm")
    tmpfs.flush(setup.snapshot_sets)

    coordinator = RecoveryCoordinator(setup.topology, setup.groups, setup.assignments, setup.engines,
                                      setup.snapshot_sets, tmpfs=tmpfs)
    coordinator.apply_failures([FailureEvent(1.0, 0, FailureKind.SOFTWARE),
                                FailureEvent(1.0, 1, FailureKind.HARDWARE)])
    iteration, shards = coordinator.local_load(0)
    assert iteration == setup.iteration
    assert shards["model"] == setup.model[0]
    assert coordinator.local_load(1) is None

    volatile = RecoveryCoordinator(setup.topology, setup.groups, setup.assignments, setup.engines,
                                   setup.snapshot_sets, tmpfs=tmpfs, volatile_host_memory=True)
    volatile.apply_failures([FailureEvent(1.0, 2, FailureKind.SOFTWARE)])
    assert setup.snapshot_sets[2].read_completed()[0] is None
    iteration, shards = volatile.local_load(2)
    assert shards["model"] == setup.model[2]


def _kill_per_group(rng, per_group, groups_of=4, groups=2):
    kill = []
    for g in range(groups):
        kill.extend(int(n) + g * groups_of for n in rng.choice(groups_of, size=per_group, replace=False))
    return kill


@pytest.mark.parametrize("strategies,per_group,zero1", [
    (["arc"], 1, False),
    (["aec"], 1, False),
    (["arc", "aec"], 2, False),
    (["aor"], 1, True),
    (["arc", "aor"], 1, True),
])
def test_drill_is_bit_exact(strategies, per_group, zero1):
    """100 seeded drills per strategy mix, killing as many nodes per group as it tolerates."""
    spec = drill_cluster(zero1=zero1)
    rng = np.random.default_rng(2024)
    for trial in range(100):
        kill = _kill_per_group(rng, per_group)
        lag = int(rng.integers(0, 3)) if zero1 else 0
        report = run_drill(spec, strategies, kill, seed=trial, replica_lag=lag)

        assert report.path == IN_MEMORY, f"trial {trial} killing {kill}: {report.reason}"
        assert report.bit_exact, f"trial {trial} killing {kill} is not bit-exact"
        if zero1:
            assert report.optimizer_lag_replayed == lag * len(kill)


def test_beyond_tolerance_falls_back_to_nfs(tmp_path):
    spec = drill_cluster(zero1=False)
    report = run_drill(spec, ["arc"], [0, 3], nfs_path=tmp_path / "drill.rftc")

    assert report.path == NFS
    assert "tolerance" in report.reason
    assert report.bit_exact
    assert report.t_load == pytest.approx(report.bytes_moved / spec.nfs_bandwidth)

    no_checkpoint = run_drill(spec, ["arc"], [0, 3])
    assert no_checkpoint.path == NFS
    assert no_checkpoint.bit_exact is None


def test_zero1_aor_rebuilds_model_from_replicated_parameters():
    spec = drill_cluster(zero1=True)
    report = run_drill(spec, ["aor"], [2, 5])

    assert report.path == IN_MEMORY, report.reason
    assert report.bit_exact
    assert report.per_group[0].failed == [2]
    assert report.per_group[0].bytes_moved == 4096 // 4

    unprotected = run_drill(spec, ["arc"], [2])
    assert unprotected.path == NFS
    assert "optimizer" in unprotected.reason

    beyond = run_drill(spec, ["aor"], [1, 2])
    assert beyond.path == NFS
    assert "tolerance" in beyond.reason


def test_software_failure_keeps_host_memory():
    report = run_drill(drill_cluster(zero1=False), ["arc"], [0, 1, 2, 3], software=True)

    assert report.path == IN_MEMORY
    assert report.bit_exact
    assert all(g.rounds == 0 for g in report.per_group.values())


def test_volatile_host_memory(tmp_path):
    spec = drill_cluster(zero1=False)
    from_tmpfs = run_drill(spec, ["arc"], [0, 1], software=True, volatile_host_memory=True,
                           tmpfs_root=tmp_path / "shm")
    assert from_tmpfs.path == IN_MEMORY and from_tmpfs.bit_exact
    assert from_tmpfs.per_group[0].failed == []

    rebuilt = run_drill(spec, ["arc"], [1], software=True, volatile_host_memory=True)
    assert rebuilt.path == IN_MEMORY and rebuilt.bit_exact
    assert rebuilt.per_group[0].failed == [1]


def test_drill_seeded_from_checkpoint(tmp_path):
    spec = drill_cluster(zero1=False)
    first = tmp_path / "first.rftc"
    run_drill(spec, ["arc"], [5], seed=1, nfs_path=first)
    model = load_checkpoint_model(first)
    assert sorted(model) == list(range(8))

    report = run_drill(spec, ["arc"], [5], seed=2, checkpoint=first)
    assert report.bit_exact


def _llama_handler(strategy):
    config = load_config(RECOVERY_CONFIG, overrides=[f"protection.strategies={strategy}"])
    spec = config.cluster
    topology = build_topology(spec)
    groups = form_sharding_groups(topology, per_stage_split(config.model.total_bytes, spec.pp_size))
    assignments = [a for g in groups for a in assign_shards(g)]
    protection = ProtectionConfig.from_names(config.protection.strategies)
    engines = {g.group_id: ProtectionEngine(protection, g) for g in groups}
    return SimulatedRecovery(topology, groups, assignments, engines, config.model.total_bytes)


@pytest.mark.parametrize("strategy,expected", [("arc", 0.84), ("aec", 0.75)])
def test_load_time_against_nfs(strategy, expected):
    handler = _llama_handler(strategy)
    report = handler([FailureEvent(30.0, 0, FailureKind.HARDWARE)], SimState(last_snapshot_time=0.0))
    nfs_seconds = handler.timing.nfs_time(handler.checkpoint_bytes)

    assert report.path == IN_MEMORY
    assert nfs_seconds == pytest.approx(NFS_LOAD_SECONDS, rel=1e-3)
    assert report.t_load == pytest.approx(expected, rel=0.1)
    assert nfs_seconds / report.t_load > 10.0


def test_in_memory_restart_loses_less_work():
    handler = _llama_handler("arc")
    state = SimState(last_snapshot_time=90.0, last_nfs_time=0.0)

    in_memory = handler([FailureEvent(100.0, 0, FailureKind.HARDWARE)], state)
    fallback = handler([FailureEvent(100.0, 0, FailureKind.HARDWARE), FailureEvent(100.0, 1, FailureKind.HARDWARE)],
                       state)

    assert in_memory.recompute_s == pytest.approx(o_restart(100.0, 90.0))
    assert fallback.path == NFS
    assert fallback.recompute_s == pytest.approx(o_restart(100.0, 0.0))
    assert in_memory.recompute_s + in_memory.t_load <= fallback.recompute_s + fallback.t_load


def test_no_snapshot_means_nfs():
    handler = _llama_handler("arc")
    report = handler([FailureEvent(5.0, 3, FailureKind.SOFTWARE)], SimState())

    assert report.path == NFS
    assert report.reason == "no completed snapshot"


def test_coordinator_recover_or_fallback():
    setup = prepare_drill(drill_cluster(zero1=False), ProtectionConfig.from_names(["arc"]), 4096,
                          np.random.default_rng(1))
    coordinator = RecoveryCoordinator(setup.topology, setup.groups, setup.assignments, setup.engines,
                                      setup.snapshot_sets, checkpoint_bytes=8192)

    report, restored = coordinator.recover_or_fallback(
        [FailureEvent(10.0, 1, FailureKind.HARDWARE), FailureEvent(10.0, 6, FailureKind.HARDWARE)],
        failure_time=10.0, last_snapshot_time=7.5)
    assert report.path == IN_MEMORY
    assert report.recompute_s == pytest.approx(2.5)
    assert sorted(report.per_group) == [g.group_id for g in setup.groups]
    for n in range(8):
        assert restored[n]["model"] == setup.model[n], f"node {n} differs"


def test_coordinator_falls_back_beyond_tolerance():
    setup = prepare_drill(drill_cluster(zero1=False), ProtectionConfig.from_names(["arc"]), 4096,
                          np.random.default_rng(2))
    coordinator = RecoveryCoordinator(setup.topology, setup.groups, setup.assignments, setup.engines,
                                      setup.snapshot_sets, checkpoint_bytes=8192)

    report, restored = coordinator.recover_or_fallback(
        [FailureEvent(10.0, 0, FailureKind.HARDWARE), FailureEvent(10.0, 1, FailureKind.HARDWARE)],
        failure_time=10.0, last_snapshot_time=7.5, last_nfs_time=4.0)
    assert report.path == NFS
    assert "tolerance" in report.reason
    assert report.t_load == pytest.approx(8192 / 1e9)
    assert report.recompute_s == pytest.approx(6.0)
    assert restored == {}
