"""
Single-file NFS checkpoint.

Layout, little-endian:
    header   magic "RFTC" | version u16 | topology digest 32 bytes | entry count u32
    table    per entry: group_id u32 | node_id u32 | role u8 | iteration u64 |
             offset u64 (absolute) | length u64 | crc32 u32
    payload  raw shard bytes
"""

import logging
import os
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

from reft.errors import ConfigurationError, CorruptCheckpointError
from reft.protection.buffers import Role

logger = logging.getLogger(__name__)

MAGIC = b"RFTC"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sH32sI")
ENTRY = struct.Struct("<IIBQQQI")


@dataclass(frozen=True)
class CheckpointEntry:
    group_id: int
    node_id: int
    role: Role
    iteration: int
    data: bytes

    @property
    def label(self) -> str:
        return f"group{self.group_id}/node{self.node_id}/{self.role.name.lower()}"


def write_nfs_checkpoint(path: Union[str, Path], entries: Sequence[CheckpointEntry], topology_digest: bytes) -> int:
    """
    Write every entry into one checkpoint file, replacing ``path`` atomically.

    Returns:
        Bytes written
    """
    if len(topology_digest) != 32:
        raise ConfigurationError("topology digest must be 32 bytes", field="store.digest")
    path = Path(path)
    offset = HEADER.size + ENTRY.size * len(entries)
    table = []
    for e in entries:
        table.append(ENTRY.pack(e.group_id, e.node_id, e.role.value, e.iteration, offset, len(e.data),
                                zlib.crc32(e.data)))
        offset += len(e.data)

    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(HEADER.pack(MAGIC, FORMAT_VERSION, topology_digest, len(entries)))
        for row in table:
            f.write(row)
        for e in entries:
            f.write(e.data)
    os.replace(tmp, path)
    logger.info(f"Wrote NFS checkpoint {path} ({len(entries)} shards, {offset} bytes)")
    return offset


def read_nfs_checkpoint(path: Union[str, Path], expected_digest: Optional[bytes] = None
                        ) -> Tuple[bytes, List[CheckpointEntry]]:
    """
    Read and verify a checkpoint file.

    Raises:
        CorruptCheckpointError: bad header, truncated payload or checksum mismatch
    """
    blob = Path(path).read_bytes()
    if len(blob) < HEADER.size:
        raise CorruptCheckpointError(f"{path}: truncated header")
    magic, version, digest, count = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise CorruptCheckpointError(f"{path}: bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise CorruptCheckpointError(f"{path}: unsupported format version {version}")
    if expected_digest is not None and digest != expected_digest:
        raise CorruptCheckpointError(f"{path}: checkpoint was written for a different topology")
    if len(blob) < HEADER.size + ENTRY.size * count:
        raise CorruptCheckpointError(f"{path}: truncated shard table")

    entries = []
    for k in range(count):
        group_id, node_id, role, iteration, offset, length, crc = ENTRY.unpack_from(blob, HEADER.size + k * ENTRY.size)
        try:
            role = Role(role)
        except ValueError:
            raise CorruptCheckpointError(f"{path}: entry {k} has unknown role {role}") from None
        label = f"group{group_id}/node{node_id}/{role.name.lower()}"
        data = blob[offset:offset + length]
        if len(data) != length:
            raise CorruptCheckpointError(f"{path}: shard {label} is truncated", shard=label)
        if zlib.crc32(data) != crc:
            raise CorruptCheckpointError(f"{path}: checksum mismatch in shard {label}", shard=label)
        entries.append(CheckpointEntry(group_id, node_id, role, iteration, data))
    return digest, entries


def nfs_load_time(total_bytes: int, nfs_bandwidth: float) -> float:
    if nfs_bandwidth <= 0:
        raise ConfigurationError("must be > 0", field="cluster.nfs_bandwidth")
    return total_bytes / nfs_bandwidth
