"""
Test the snapshot double buffer, tmpfs persistence and the NFS checkpoint file.
"""

import sys
import threading
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from reft.errors import CapacityError, ConfigurationError, CorruptCheckpointError, SnapshotStateError
from reft.protection.buffers import Role
from reft.store import (CheckpointEntry, ShardFlag, SnapshotSet, TmpfsStore, default_capacity, nfs_load_time,
                        read_nfs_checkpoint, write_nfs_checkpoint)
from reft.store.checkpoint_file import ENTRY, HEADER

DIGEST = bytes(range(32))


def _commit(snapshot_set, iteration, shards):
    handle = snapshot_set.begin_snapshot(iteration, {sid: len(data) for sid, data in shards.items()}, abandon=True)
    for sid, data in shards.items():
        snapshot_set.write_shard(handle, sid, data)
    return snapshot_set.commit_snapshot(handle)


# ---------------------------------------------------------------------------
# host memory

def test_snapshot_lifecycle():
    ss = SnapshotSet(node_id=0, capacity_limit=1000)
    assert ss.read_completed() == (None, {})

    handle = ss.begin_snapshot(1, {"model": 8, "arc-1": 4})
    assert ss.write_shard(handle, "model", b"abcd") is ShardFlag.PENDING
    assert ss.write_shard(handle, "model", b"efgh", offset=4) is ShardFlag.COMPLETED
    with pytest.raises(SnapshotStateError):
        ss.commit_snapshot(handle)
    ss.write_shard(handle, "arc-1", b"wxyz")
    ss.commit_snapshot(handle)

    iteration, shards = ss.read_completed()
    assert iteration == 1
    assert dict(shards) == {"model": b"abcdefgh", "arc-1": b"wxyz"}
    assert ss.ongoing is None


def test_bad_writes():
    ss = SnapshotSet(node_id=0, capacity_limit=1000)
    handle = ss.begin_snapshot(1, {"model": 8})

    ss.write_shard(handle, "model", b"abcd", offset=2)
    with pytest.raises(SnapshotStateError):
        ss.write_shard(handle, "model", b"xy", offset=4)
    with pytest.raises(SnapshotStateError):
        ss.write_shard(handle, "model", b"xyz", offset=6)
    with pytest.raises(SnapshotStateError):
        ss.write_shard(handle, "optimizer", b"x")
    with pytest.raises(SnapshotStateError):
        ss.begin_snapshot(2, {"model": 8})


def test_stale_handle_and_old_iteration():
    ss = SnapshotSet(node_id=0, capacity_limit=1000)
    stale = ss.begin_snapshot(5, {"model": 2})
    fresh = ss.begin_snapshot(6, {"model": 2}, abandon=True)
    with pytest.raises(SnapshotStateError):
        ss.write_shard(stale, "model", b"ab")
    ss.write_shard(fresh, "model", b"ab")
    ss.commit_snapshot(fresh)

    handle = ss.begin_snapshot(6, {"model": 2})
    ss.write_shard(handle, "model", b"cd")
    with pytest.raises(SnapshotStateError):
        ss.commit_snapshot(handle)


def test_capacity_limit():
    ss = SnapshotSet(node_id=0, capacity_limit=100)
    with pytest.raises(CapacityError):
        ss.begin_snapshot(1, {"model": 150})
    _commit(ss, 1, {"model": b"x" * 60})
    with pytest.raises(CapacityError):
        ss.begin_snapshot(2, {"model": 60})
    assert default_capacity(100, 20) == 360


def test_wipe_loses_everything():
    ss = SnapshotSet(node_id=3, capacity_limit=100)
    _commit(ss, 1, {"model": b"abc"})
    ss.begin_snapshot(2, {"model": 3})

    ss.wipe()
    assert ss.read_completed() == (None, {})
    assert ss.ongoing is None


def test_crash_mid_snapshot_keeps_previous_set():
    """500 random crash points: the completed set never changes before commit."""
    rng = np.random.default_rng(42)
    for trial in range(500):
        ss = SnapshotSet(node_id=0, capacity_limit=1 << 20)
        before = {"model": rng.integers(0, 256, 64, dtype=np.uint8).tobytes(),
                  "parity": rng.integers(0, 256, 16, dtype=np.uint8).tobytes()}
        _commit(ss, 1, before)

        handle = ss.begin_snapshot(2, {"model": 64, "parity": 16})
        writes = [("model", off, 8) for off in range(0, 64, 8)] + [("parity", 0, 16)]
        crash_at = int(rng.integers(0, len(writes) + 1))
        for sid, off, size in writes[:crash_at]:
            ss.write_shard(handle, sid, bytes(size), offset=off)
            assert ss.read_completed() == (1, before), f"trial {trial}: completed set changed mid-write"
        if crash_at < len(writes):
            with pytest.raises(SnapshotStateError):
                ss.commit_snapshot(handle)
        ss.abandon()
        assert ss.read_completed() == (1, before)


def test_readers_never_see_a_torn_set():
    ss = SnapshotSet(node_id=0, capacity_limit=1 << 20)
    _commit(ss, 0, {"model": bytes(4096), "arc-1": bytes(1024)})
    torn = []
    done = threading.Event()

    def reader():
        while not done.is_set():
            iteration, shards = ss.read_completed()
            expected = iteration % 256
            for data in shards.values():
                if data.count(expected) != len(data):
                    torn.append(iteration)

    thread = threading.Thread(target=reader)
    thread.start()
    try:
        for it in range(1, 300):
            fill = it % 256
            handle = ss.begin_snapshot(it, {"model": 4096, "arc-1": 1024}, abandon=True)
            for off in range(0, 4096, 512):
                ss.write_shard(handle, "model", bytes([fill]) * 512, offset=off)
            ss.write_shard(handle, "arc-1", bytes([fill]) * 1024)
            ss.commit_snapshot(handle)
    finally:
        done.set()
        thread.join()
    assert torn == []


# ---------------------------------------------------------------------------
# NFS checkpoint file

@pytest.fixture
def entries():
    return [CheckpointEntry(0, 0, Role.MODEL, 7, b"model-shard-zero"),
            CheckpointEntry(0, 1, Role.MODEL, 7, b"model-shard-one!"),
            CheckpointEntry(1, 2, Role.OPTIMIZER, 7, bytes(range(200)))]


def test_checkpoint_roundtrip(tmp_path, entries):
    path = tmp_path / "ckpt" / "iter7.reft"
    written = write_nfs_checkpoint(path, entries, DIGEST)

    assert path.stat().st_size == written
    digest, loaded = read_nfs_checkpoint(path, expected_digest=DIGEST)
    assert digest == DIGEST
    assert loaded == entries
    assert loaded[2].label == "group1/node2/optimizer"


def test_checkpoint_offsets_are_absolute(tmp_path, entries):
    path = tmp_path / "iter7.reft"
    write_nfs_checkpoint(path, entries, DIGEST)
    blob = path.read_bytes()

    for k, entry in enumerate(entries):
        *_, offset, length, _crc = ENTRY.unpack_from(blob, HEADER.size + k * ENTRY.size)
        assert blob[offset:offset + length] == entry.data
    assert ENTRY.unpack_from(blob, HEADER.size)[4] == HEADER.size + 3 * ENTRY.size


def test_flipped_byte_names_the_shard(tmp_path, entries):
    path = tmp_path / "iter7.reft"
    write_nfs_checkpoint(path, entries, DIGEST)
    blob = bytearray(path.read_bytes())
    offset = ENTRY.unpack_from(blob, HEADER.size + ENTRY.size)[4]
    blob[offset + 3] ^= 0xFF
    path.write_bytes(bytes(blob))

    with pytest.raises(CorruptCheckpointError) as exc:
        read_nfs_checkpoint(path)
    assert exc.value.shard == "group0/node1/model"


def test_checkpoint_header_checks(tmp_path, entries):
    path = tmp_path / "iter7.reft"
    write_nfs_checkpoint(path, entries, DIGEST)

    with pytest.raises(CorruptCheckpointError, match="different topology"):
        read_nfs_checkpoint(path, expected_digest=bytes(32))

    path.write_bytes(b"XXXX" + path.read_bytes()[4:])
    with pytest.raises(CorruptCheckpointError, match="magic"):
        read_nfs_checkpoint(path)

    path.write_bytes(b"RFT")
    with pytest.raises(CorruptCheckpointError):
        read_nfs_checkpoint(path)

    with pytest.raises(ConfigurationError):
        write_nfs_checkpoint(path, entries, b"short")


def test_nfs_load_time():
    assert nfs_load_time(2_000_000_000, 1e9) == 2.0
    with pytest.raises(ConfigurationError):
        nfs_load_time(1, 0.0)


# ---------------------------------------------------------------------------
# tmpfs

def test_tmpfs_roundtrip(tmp_path):
    store = TmpfsStore(tmp_path / "shm")
    ss = SnapshotSet(node_id=2, capacity_limit=1000)
    _commit(ss, 4, {"model": b"weights", "arc-1": b"peer"})

    assert not store.available(2)
    store.flush({2: ss})
    assert store.available(2)
    assert store.load(2) == (4, {"arc-1": b"peer", "model": b"weights"})

    store.clear(2)
    assert not store.available(2)


def test_tmpfs_detects_damage(tmp_path):
    store = TmpfsStore(tmp_path)
    ss = SnapshotSet(node_id=0, capacity_limit=1000)
    _commit(ss, 1, {"model": b"weights"})
    directory = store.flush_node(ss)

    (directory / "model.shard").write_bytes(b"weightz")
    with pytest.raises(CorruptCheckpointError) as exc:
        store.load(0)
    assert exc.value.shard == "node0/model"

    (directory / "model.shard").unlink()
    with pytest.raises(CorruptCheckpointError):
        store.load(0)
    with pytest.raises(CorruptCheckpointError):
        store.load(9)


def test_flush_needs_a_completed_set(tmp_path):
    with pytest.raises(SnapshotStateError):
        TmpfsStore(tmp_path).flush_node(SnapshotSet(node_id=0, capacity_limit=10))


def test_host_to_tmpfs_to_nfs(tmp_path):
    """A committed snapshot survives the whole persistence chain bit for bit."""
    rng = np.random.default_rng(5)
    shards = {n: rng.integers(0, 256, 1000 + n, dtype=np.uint8).tobytes() for n in range(4)}
    sets = {}
    for n, data in shards.items():
        sets[n] = SnapshotSet(node_id=n, capacity_limit=default_capacity(len(data)))
        _commit(sets[n], 9, {"model": data})

    store = TmpfsStore(tmp_path / "tmpfs")
    store.flush(sets)
    persisted = [CheckpointEntry(0, n, Role.MODEL, it, got["model"])
                 for n in range(4) for it, got in [store.load(n)]]
    write_nfs_checkpoint(tmp_path / "nfs" / "ckpt.reft", persisted, DIGEST)

    _, loaded = read_nfs_checkpoint(tmp_path / "nfs" / "ckpt.reft", DIGEST)
    assert {e.node_id: e.data for e in loaded} == shards
    assert {e.iteration for e in loaded} == {9}
