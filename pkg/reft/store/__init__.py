"""
Snapshot lifecycle: host-memory double buffer, tmpfs flush, NFS checkpoint file, run ledger.
"""

from reft.store.checkpoint_file import (CheckpointEntry, nfs_load_time, read_nfs_checkpoint,
                                        write_nfs_checkpoint)
from reft.store.snapshot_set import OngoingSnapshot, ShardFlag, SnapshotSet, default_capacity
from reft.store.tmpfs import TmpfsStore

__all__ = [
    'CheckpointEntry', 'nfs_load_time', 'read_nfs_checkpoint', 'write_nfs_checkpoint',
    'OngoingSnapshot', 'ShardFlag', 'SnapshotSet', 'default_capacity',
    'TmpfsStore',
]
