"""
Collaborative protection: several strategy instances over one sharding group,
and reconstruction of lost members by peeling.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

import numpy as np

from reft.errors import ConfigurationError, UnrecoverableError
from reft.protection.aec import AecStrategy, xor_buffers
from reft.protection.aor import AorReplica, AorStrategy, aor_reconstruct
from reft.protection.arc import ArcStrategy
from reft.protection.base_strategy import ProtectionStrategy
from reft.protection.buffers import ParamBuffer, Role, as_bytes_array
from reft.topology import ShardAssignment, ShardingGroup

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StrategySpec:
    kind: str
    offset: int = 1


@dataclass(frozen=True)
class ProtectionConfig:
    strategies: Tuple[StrategySpec, ...] = ()
    eta: float = 0.01

    @property
    def N(self) -> int:
        return len(self.strategies)

    @classmethod
    def from_names(cls, names: Iterable[str], eta: float = 0.01) -> "ProtectionConfig":
        """
        Parse strategy names: ``arc``, ``aec``, ``aor``, or ``arcK`` for an ARC
        copy at ring offset K.
        """
        specs = []
        for raw in names:
            name = raw.strip().lower()
            if not name or name == "none":
                continue
            if name.startswith("arc"):
                suffix = name[3:]
                if suffix and not suffix.isdigit():
                    raise ConfigurationError(f"unknown strategy '{raw}'", field="protection.strategies")
                specs.append(StrategySpec("arc", int(suffix) if suffix else 1))
            elif name in ("aec", "aor"):
                specs.append(StrategySpec(name))
            else:
                raise ConfigurationError(f"unknown strategy '{raw}'", field="protection.strategies")
        return cls(tuple(specs), eta)

    def validate(self, zero1: bool) -> "ProtectionConfig":
        kinds = [s.kind for s in self.strategies]
        if "aor" in kinds and not zero1:
            raise ConfigurationError("AOR requires zero1_enabled", field="protection.strategies")
        if kinds.count("aec") > 1 or kinds.count("aor") > 1:
            raise ConfigurationError("AEC and AOR may each be enabled once", field="protection.strategies")
        offsets = [s.offset for s in self.strategies if s.kind == "arc"]
        if len(set(offsets)) != len(offsets):
            raise ConfigurationError("ARC instances need distinct offsets", field="protection.strategies")
        return self

    def names(self) -> List[str]:
        return [s.kind if s.kind != "arc" or s.offset == 1 else f"arc{s.offset}" for s in self.strategies]


def tolerance(config: ProtectionConfig) -> int:
    """
    Simultaneous failures per sharding group that stay recoverable in memory:
    one per enabled strategy instance.
    """
    return len(config.strategies)


@dataclass
class Transfer:
    """One inter-node transfer during reconstruction."""
    src: int
    dst: int
    nbytes: int
    xor_bytes: int = 0


@dataclass
class Reconstruction:
    shards: Dict[int, np.ndarray]
    rounds: List[List[Transfer]] = field(default_factory=list)

    @property
    def bytes_moved(self) -> int:
        return sum(t.nbytes for r in self.rounds for t in r)


class ProtectionEngine:
    """
    All strategy instances of one sharding group.

    Args:
        config: Enabled strategies
        group: The sharding group to protect
        zero1: Whether optimizer shards are partitioned (non-redundant)
    """

    def __init__(self, config: ProtectionConfig, group: ShardingGroup, zero1: bool = False):
        config.validate(zero1)
        self.config = config
        self.group = group
        self.zero1 = zero1
        self.m = group.size
        self.arcs: List[ArcStrategy] = []
        self.aec: Optional[AecStrategy] = None
        self.aor: Optional[AorStrategy] = None
        offsets = tuple(s.offset for s in config.strategies if s.kind == "arc")
        for s in config.strategies:
            if s.kind == "arc":
                self.arcs.append(ArcStrategy(group, s.offset))
            elif s.kind == "aec":
                self.aec = AecStrategy(group, arc_offsets=offsets)
            elif s.kind == "aor":
                self.aor = AorStrategy(group, eta=config.eta)
        self.shard_lengths: Dict[int, int] = {}

    @property
    def strategies(self) -> List[ProtectionStrategy]:
        return [*self.arcs, *([self.aec] if self.aec else []), *([self.aor] if self.aor else [])]

    def tolerance(self) -> int:
        return tolerance(self.config)

    def redundancy_bytes(self, assignments: Sequence[ShardAssignment]) -> Dict[int, int]:
        """Extra D2H bytes per member across every enabled strategy."""
        members = [a for a in assignments if a.group_id == self.group.group_id]
        total = {a.node_id: 0 for a in members}
        for strategy in self.strategies:
            for node_id, extra in strategy.redundancy_bytes(members).items():
                total[node_id] += extra
        return total

    def protect(self, shards: Mapping[int, np.ndarray],
                optimizer: Optional[Mapping[int, np.ndarray]] = None) -> Dict[int, List[ParamBuffer]]:
        """
        Build every member's redundancy buffers.

        Args:
            shards: node_id -> model shard bytes
            optimizer: node_id -> float32 optimizer shard, needed when AOR is on
        """
        self.shard_lengths = {n: as_bytes_array(shards[n]).size for n in self.group.members}
        held: Dict[int, List[ParamBuffer]] = {n: [] for n in self.group.members}
        for strategy in [*self.arcs, *([self.aec] if self.aec else [])]:
            for node_id, buffers in strategy.protect(shards).items():
                held[node_id].extend(buffers)
        if self.aor is not None:
            if optimizer is None:
                raise ConfigurationError("AOR needs the optimizer shards", field="protection.strategies")
            for node_id, buffers in self.aor.protect(optimizer).items():
                held[node_id].extend(buffers)
        return held

    def _arc_buffer(self, held: Mapping[int, List[ParamBuffer]], holder: int, source: int) -> Optional[ParamBuffer]:
        for buf in held.get(holder, ()):
            if buf.role is Role.MODEL and buf.source_node == source and buf.sub_slice_index is None:
                return buf
        return None

    def _parity(self, held: Mapping[int, List[ParamBuffer]], holder: int) -> Optional[ParamBuffer]:
        for buf in held.get(holder, ()):
            if buf.role is Role.PARITY:
                return buf
        return None

    def _replica_source(self, rank: int, lost: Set[int], dry: bool,
                        replicated: Optional[Mapping[int, bytes]]) -> Optional[int]:
        """Nearest live member in ring order that still holds the stage parameters."""
        for step in range(1, self.m):
            member = self.group.members[(rank + step) % self.m]
            if member in lost:
                continue
            if dry or (replicated is not None and replicated.get(member) is not None):
                return member
        return None

    def shard_offset(self, node_id: int) -> int:
        """Byte offset of a member's shard inside the stage parameters."""
        members = self.group.members
        return sum(self.shard_lengths[n] for n in members[:members.index(node_id)])

    def reconstruct(self, lost: Iterable[int], local: Optional[Mapping[int, np.ndarray]] = None,
                    held: Optional[Mapping[int, List[ParamBuffer]]] = None,
                    replicated: Optional[Mapping[int, bytes]] = None) -> Reconstruction:
        """
        Rebuild the model shards of ``lost`` members.

        Each round restores every shard that a live ARC copy holds and every AEC
        piece whose parity holder is alive and whose co-encoded pieces are known
        at the start of the round. Under ZeRO-1 a shard no ARC copy covers is cut
        from a survivor's replicated stage parameters instead. Rounds repeat until
        nothing is missing. Without ``local`` and ``held`` only the transfer rounds
        are worked out.

        Args:
            lost: Failed member node ids
            local: Surviving members' own shards
            held: Surviving members' redundancy buffers
            replicated: Surviving members' full stage parameters (ZeRO-1 only)

        Raises:
            UnrecoverableError: when a round makes no progress
        """
        dry = local is None
        held = held or {}
        lost_set: Set[int] = set(lost)
        if not lost_set:
            return Reconstruction({})
        members = list(self.group.members)
        rank = {n: r for r, n in enumerate(members)}
        known: Dict[int, Optional[np.ndarray]] = {
            n: (None if dry else as_bytes_array(local[n])) for n in members if n not in lost_set}
        missing = sorted(lost_set)
        lengths = dict(self.shard_lengths)
        for n in missing:
            if n not in lengths:
                raise UnrecoverableError(f"no record of the shard length of node {n}", missing=missing)

        piece_size = self.aec.piece_size(max(lengths.values())) if self.aec is not None else 0
        pieces: Dict[int, Dict[int, Optional[np.ndarray]]] = {n: {} for n in missing}

        result = Reconstruction({})
        while missing:
            start_known = dict(known)
            transfers: List[Transfer] = []
            restored: Dict[int, Optional[np.ndarray]] = {}
            for n in missing:
                j = rank[n]
                for arc in self.arcs:
                    holder = members[arc.recover_candidates(j)[0]]
                    if holder in lost_set:
                        continue
                    if dry:
                        restored[n] = None
                    else:
                        buf = self._arc_buffer(held, holder, n)
                        if buf is None:
                            continue
                        restored[n] = buf.data.copy()
                    transfers.append(Transfer(holder, n, lengths[n]))
                    break
                if n not in restored and self.zero1:
                    source = self._replica_source(j, lost_set, dry, replicated)
                    if source is not None:
                        if dry:
                            restored[n] = None
                        else:
                            offset = self.shard_offset(n)
                            restored[n] = as_bytes_array(replicated[source])[offset:offset + lengths[n]].copy()
                        transfers.append(Transfer(source, n, lengths[n]))
                if n in restored or self.aec is None:
                    continue
                for r, i in enumerate(self.aec.recover_candidates(j)):
                    holder = members[i]
                    if r in pieces[n] or holder in lost_set:
                        continue
                    others = [members[q] for q in self.aec.covered_by(i) if q != j]
                    if any(o not in start_known for o in others):
                        continue
                    if dry:
                        pieces[n][r] = None
                    else:
                        parity = self._parity(held, holder)
                        if parity is None:
                            continue
                        terms = [parity.data] + [
                            self.aec.pieces(start_known[o], piece_size)[self.aec.piece_index(i, rank[o])]
                            for o in others]
                        pieces[n][r] = xor_buffers(terms)
                    transfers.append(Transfer(holder, n, piece_size, xor_bytes=piece_size * len(others) + piece_size))
                if len(pieces[n]) == self.aec.k:
                    restored[n] = None if dry else \
                        np.concatenate([pieces[n][r] for r in range(self.aec.k)])[:lengths[n]]
            if not restored and not transfers:
                raise UnrecoverableError(
                    f"group {self.group.group_id}: cannot rebuild nodes {missing} from in-memory redundancy",
                    missing=missing)
            for n, shard in restored.items():
                known[n] = shard
                result.shards[n] = shard
            missing = [n for n in missing if n not in restored]
            result.rounds.append(transfers)
        logger.info(f"Group {self.group.group_id}: rebuilt {sorted(result.shards)} in {len(result.rounds)} round(s)")
        return result

    def reconstruct_optimizer(self, lost: Iterable[int], replicas: Mapping[int, AorReplica],
                              target_step: Optional[int] = None) -> Dict[int, Tuple[np.ndarray, int]]:
        """Optimizer shards of lost members from their live host replicas, with each replica's lag."""
        lost_set = set(lost)
        if self.aor is None:
            raise UnrecoverableError("optimizer shards are unprotected", missing=sorted(lost_set))
        out = {}
        for n in sorted(lost_set):
            holder = self.group.members[self.aor.recover_candidates(self.group.rank_of(n))[0]]
            if holder in lost_set:
                raise UnrecoverableError(f"optimizer replica of node {n} died with node {holder}", missing=[n])
            out[n] = aor_reconstruct(n, replicas, target_step)
        return out

    # ------------------------------------------------------------------
    # host-memory shard ids

    def shard_id(self, buf: ParamBuffer) -> str:
        """Name a redundancy buffer inside its holder's snapshot set."""
        if buf.role is Role.PARITY:
            return "parity"
        offset = (self.group.rank_of(buf.source_node) - self.group.rank_of(buf.owner_node)) % self.m
        if buf.role is Role.OPTIMIZER:
            return "aor"
        return f"arc-{offset}"

    def buffers_from_shards(self, node_id: int, shards: Mapping[str, bytes]) -> List[ParamBuffer]:
        """Inverse of ``shard_id``: rebuild a holder's redundancy buffers from stored bytes."""
        rank = self.group.rank_of(node_id)
        gid = self.group.group_id
        out = []
        for sid, data in shards.items():
            if sid.startswith("arc-"):
                source = self.group.members[(rank + int(sid[4:])) % self.m]
                out.append(ParamBuffer(as_bytes_array(data), Role.MODEL, owner_node=node_id, group_id=gid,
                                       source_node=source))
            elif sid == "parity" and self.aec is not None:
                encoded = tuple((self.group.members[j], self.aec.piece_index(rank, j))
                                for j in self.aec.covered_by(rank))
                out.append(ParamBuffer(as_bytes_array(data), Role.PARITY, owner_node=node_id, group_id=gid,
                                       encoded=encoded))
            elif sid == "aor":
                source = self.group.members[(rank + 1) % self.m]
                out.append(ParamBuffer(as_bytes_array(data), Role.OPTIMIZER, owner_node=node_id, group_id=gid,
                                       source_node=source))
        return out

    def set_shard_lengths(self, assignments: Sequence[ShardAssignment]) -> None:
        self.shard_lengths = {a.node_id: a.local_range.length for a in assignments
                              if a.group_id == self.group.group_id}
