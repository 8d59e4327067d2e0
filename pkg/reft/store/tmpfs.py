"""
tmpfs persistence of completed snapshots.

Layout: ``<root>/<node_id>/<shard_id>.shard`` plus ``<root>/<node_id>/manifest.toon``
listing the iteration and a CRC32 per shard.
"""

import logging
import re
import shutil
import zlib
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

from reft.errors import CorruptCheckpointError, SnapshotStateError
from reft.store.snapshot_set import SnapshotSet
from utils.toon_formatter import ToonFormatter

logger = logging.getLogger(__name__)

MANIFEST = "manifest.toon"
_SHARD_ID = re.compile(r"^[A-Za-z0-9_.-]+$")


class TmpfsStore:
    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)

    def node_dir(self, node_id: int) -> Path:
        return self.root / str(node_id)

    def flush_node(self, snapshot_set: SnapshotSet) -> Path:
        """Write one node's completed snapshot; the manifest is written last."""
        iteration, shards = snapshot_set.read_completed()
        if iteration is None:
            raise SnapshotStateError(f"node {snapshot_set.node_id} has no completed snapshot to flush")
        directory = self.node_dir(snapshot_set.node_id)
        if directory.exists():
            shutil.rmtree(directory)
        directory.mkdir(parents=True)

        entries = []
        for shard_id, data in sorted(shards.items()):
            if not _SHARD_ID.match(shard_id):
                raise SnapshotStateError(f"shard id '{shard_id}' is not a valid file name")
            (directory / f"{shard_id}.shard").write_bytes(data)
            entries.append({'id': shard_id, 'bytes': len(data), 'crc32': zlib.crc32(data)})
        manifest = {'node_id': snapshot_set.node_id, 'iteration': iteration, 'shards': entries}
        (directory / MANIFEST).write_text(ToonFormatter.dumps(manifest))
        return directory

    def flush(self, node_sets: Mapping[int, SnapshotSet]) -> Dict[int, Path]:
        written = {node_id: self.flush_node(s) for node_id, s in node_sets.items()}
        logger.info(f"Flushed {len(written)} node snapshots to {self.root}")
        return written

    def load(self, node_id: int) -> Tuple[int, Dict[str, bytes]]:
        """
        Read a node's flushed snapshot back, verifying every shard.

        Raises:
            CorruptCheckpointError: missing manifest or shard, or a checksum mismatch
        """
        directory = self.node_dir(node_id)
        manifest_path = directory / MANIFEST
        if not manifest_path.exists():
            raise CorruptCheckpointError(f"no manifest for node {node_id} under {self.root}")
        manifest = ToonFormatter.loads(manifest_path.read_text())
        shards = {}
        for entry in manifest.get('shards', []):
            shard_id = entry['id']
            label = f"node{node_id}/{shard_id}"
            path = directory / f"{shard_id}.shard"
            if not path.exists():
                raise CorruptCheckpointError(f"missing shard file {path}", shard=label)
            data = path.read_bytes()
            if len(data) != int(entry['bytes']) or zlib.crc32(data) != int(entry['crc32']):
                raise CorruptCheckpointError(f"checksum mismatch in {path}", shard=label)
            shards[shard_id] = data
        return int(manifest['iteration']), shards

    def available(self, node_id: int) -> bool:
        return (self.node_dir(node_id) / MANIFEST).exists()

    def clear(self, node_id: Optional[int] = None) -> None:
        target = self.node_dir(node_id) if node_id is not None else self.root
        if target.exists():
            shutil.rmtree(target)
