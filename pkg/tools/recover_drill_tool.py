"""
Recover Drill Tool
Protects random parameters, kills nodes, recovers them and checks the result
bit for bit against the last committed snapshot.
"""

import logging
import re
from pathlib import Path
from typing import Any, Dict, List

from reft.config import NFS_ROOT, TMPFS_ROOT, load_config
from reft.errors import ConfigurationError
from reft.recovery import run_drill
from reft.topology import ClusterSpec
from tools.base_tool import BaseUtility
from utils.toon_formatter import ToonFormatter

logger = logging.getLogger(__name__)

_NODE = re.compile(r"^(?:node)?(\d+)$")


def parse_nodes(values) -> List[int]:
    """``["node3", "5"]`` or ``"node3,node5"`` to ``[3, 5]``."""
    if isinstance(values, (str, int)):
        values = [values]
    nodes = []
    for value in values:
        for item in str(value).split(','):
            item = item.strip().lower()
            if not item:
                continue
            match = _NODE.match(item)
            if match is None:
                raise ConfigurationError(f"cannot parse node '{item}' (use node3 or 3)", field="drill.kill")
            nodes.append(int(match.group(1)))
    return nodes


def drill_cluster(zero1: bool) -> ClusterSpec:
    """Two stages of four single-GPU nodes; enough for every strategy mix."""
    return ClusterSpec(dp_size=4, pp_size=2, tp_size=1, gpus_per_node=1, d2h_bandwidth=16 * 2 ** 30,
                       internode_bandwidth=12.5e9, nfs_bandwidth=1e9, microbatch_compute_time=0.1,
                       num_microbatches=4, zero1_enabled=zero1).validate()


class RecoverDrillUtility(BaseUtility):
    def get_description(self) -> str:
        return "Kill nodes after a committed snapshot and verify bit-exact in-memory recovery"

    def execute(self, params: Dict[str, Any]) -> Dict[str, Any]:
        """
        Args:
            params: Dictionary with:
                - kill: Nodes to fail, ``node3`` or ``3`` (list, required)
                - strategy: Strategy names, e.g. ``["arc", "aec"]`` (list or comma string, default arc)
                - software: Software instead of hardware failures (bool, optional)
                - config: Experiment config for the cluster layout (str, optional)
                - checkpoint: NFS checkpoint whose model shards seed the parameters (str, optional)
                - seed / stage_bytes / steps / replica_lag: Drill sizing (int, optional)
                - tmpfs: Flush snapshots to tmpfs before the failure (bool, optional)
                - volatile_host: Software failures also erase host memory (bool, optional)
                - out: Directory for the report and the fallback checkpoint (str, optional)

        Returns:
            Dictionary with status, ``bit_exact`` and the recovery report
        """
        kill = parse_nodes(params.get("kill") or [])
        if not kill:
            return self.error("Missing required input: 'kill' (e.g. node3)", error_type="missing_parameters")
        strategies = params.get("strategy") or ["arc"]
        if isinstance(strategies, str):
            strategies = [s for s in strategies.split(',') if s.strip()]

        tmpfs_root = None
        nfs_root = Path(NFS_ROOT)
        seed = params.get("seed")
        volatile = bool(params.get("volatile_host"))
        if params.get("config"):
            config = load_config(params["config"], overrides=params.get("overrides") or [])
            spec = config.cluster
            nfs_root = Path(config.store.nfs_root)
            if params.get("tmpfs"):
                tmpfs_root = config.store.tmpfs_root
            seed = config.run.seed if seed is None else seed
            volatile = volatile or config.store.volatile_host_memory
        else:
            spec = drill_cluster(zero1=any(s.strip().lower() == "aor" for s in strategies))
        out = Path(params["out"]) if params.get("out") else None
        if out is not None:
            nfs_root = out
            if params.get("tmpfs"):
                tmpfs_root = out / "tmpfs"
        elif params.get("tmpfs") and tmpfs_root is None:
            tmpfs_root = TMPFS_ROOT

        report = run_drill(spec, strategies, kill, software=bool(params.get("software")),
                           stage_bytes=int(params.get("stage_bytes", 4096)), seed=int(seed or 0),
                           steps=int(params.get("steps", 3)), replica_lag=int(params.get("replica_lag", 0)),
                           tmpfs_root=tmpfs_root, nfs_path=nfs_root / "drill.rftc",
                           checkpoint=params.get("checkpoint"), volatile_host_memory=volatile)
        payload = report.to_dict()
        files = {}
        if out is not None:
            files['report'] = str(ToonFormatter.write(out / "drill_report.toon", payload))
        verdict = "true" if report.bit_exact else "false"
        return self.success(f"recovered via {report.path}, bit-exact: {verdict}", bit_exact=report.bit_exact,
                            report=payload, files=files)


_utility = RecoverDrillUtility(name="recover_drill")


def execute(params):
    return _utility.run(params)
