"""
In-memory redundancy strategies: ARC copies, AEC parities, AOR optimizer replicas.
"""

from reft.protection.aec import AecStrategy, aec_decode, aec_encode, xor_buffers, xor_files
from reft.protection.aor import AorReplica, AorStrategy, aor_reconstruct, aor_update, sgd_step
from reft.protection.arc import ArcStrategy, arc_redundancy
from reft.protection.base_strategy import ProtectionStrategy
from reft.protection.buffers import ParamBuffer, Role
from reft.protection.engine import ProtectionConfig, ProtectionEngine, Reconstruction, StrategySpec, Transfer, tolerance

__all__ = [
    'AecStrategy', 'aec_decode', 'aec_encode', 'xor_buffers', 'xor_files',
    'AorReplica', 'AorStrategy', 'aor_reconstruct', 'aor_update', 'sgd_step',
    'ArcStrategy', 'arc_redundancy',
    'ProtectionStrategy', 'ParamBuffer', 'Role',
    'ProtectionConfig', 'ProtectionEngine', 'Reconstruction', 'StrategySpec', 'Transfer', 'tolerance',
]
