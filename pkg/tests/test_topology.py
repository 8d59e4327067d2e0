"""
Test cluster layout, sharding groups and shard assignment.
"""

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import pytest

from reft.errors import ConfigurationError
from reft.topology import (assign_shards, build_topology, ceil_split, form_sharding_groups, model_shard_bytes,
                           per_stage_split)


def test_row_major_layout(make_spec):
    """Nodes fill stage 0 first; TP stays inside a node."""
    topo = build_topology(make_spec(dp_size=2, pp_size=2, tp_size=4, gpus_per_node=4))

    assert len(topo.nodes) == 4
    assert [n.pp_stage for n in topo.nodes] == [0, 0, 1, 1]
    assert [n.node_id for n in topo.nodes_at_stage(0)] == [0, 1]
    assert topo.node(1).dp_ranks == (1,)
    assert topo.node(1).tp_ranks == (0, 1, 2, 3)


def test_single_node_cluster(make_spec):
    topo = build_topology(make_spec(dp_size=1, pp_size=1, gpus_per_node=1))
    groups = form_sharding_groups(topo, [100])

    assert len(topo.nodes) == 1
    assert len(groups) == 1 and groups[0].members == (0,)


def test_large_hybrid_layout(make_spec):
    """DP4 x PP16 x TP4 on 4-GPU nodes."""
    topo = build_topology(make_spec(dp_size=4, pp_size=16, tp_size=4, gpus_per_node=4))
    groups = form_sharding_groups(topo, per_stage_split(16 * 1000, 16))

    assert len(topo.nodes) == 64
    assert len(groups) == 16
    assert all(g.size == 4 for g in groups)


def test_group_sizes_follow_stages(make_spec):
    topo = build_topology(make_spec(dp_size=3, pp_size=2))
    groups = form_sharding_groups(topo, [900, 600])

    assert [(g.size, g.total_bytes) for g in groups] == [(3, 900), (3, 600)]


def test_groups_of_one_without_data_parallelism(make_spec):
    topo = build_topology(make_spec(dp_size=1, pp_size=3))
    groups = form_sharding_groups(topo, [10, 10, 10])

    assert [g.size for g in groups] == [1, 1, 1]


def test_ceil_split():
    assert [r.length for r in ceil_split(1000, 4)] == [250, 250, 250, 250]
    assert [(r.start, r.stop) for r in ceil_split(1000, 4)][1] == (250, 500)
    assert [r.length for r in ceil_split(10, 4)] == [3, 3, 3, 1]


def test_model_shard_bytes():
    assert model_shard_bytes(64 * 2 ** 20, 4, 2) == 8 * 2 ** 20


def test_assignments_cover_the_stage(make_spec):
    topo = build_topology(make_spec(dp_size=4, pp_size=1))
    group = form_sharding_groups(topo, [1001])[0]
    assignments = assign_shards(group)

    ranges = [a.local_range for a in assignments]
    assert ranges[0].start == 0 and ranges[-1].stop == 1001
    assert all(left.stop == right.start for left, right in zip(ranges, ranges[1:]))
    assert [r.length for r in ranges] == [251, 251, 251, 248]
    assert all(a.optimizer_range is None and a.optimizer_redundant for a in assignments)


def test_zero1_optimizer_shards(make_spec):
    topo = build_topology(make_spec(dp_size=4, pp_size=2, zero1_enabled=True))
    group = form_sharding_groups(topo, [400, 400])[0]
    assignments = assign_shards(group, zero1=True, optimizer_bytes=800, pp_size=2)

    assert [a.optimizer_range.length for a in assignments] == [100, 100, 100, 100]
    assert not any(a.optimizer_redundant for a in assignments)


def test_zero1_optimizer_split_keeps_every_byte(make_spec):
    topo = build_topology(make_spec(dp_size=4, pp_size=3, zero1_enabled=True))
    groups = form_sharding_groups(topo, [400, 400, 400])
    assignments = [a for g in groups for a in assign_shards(g, zero1=True, optimizer_bytes=1001, pp_size=3)]

    assert sum(a.optimizer_range.length for a in assignments) == 1001
    assert [a.optimizer_range.length for a in assignments if a.group_id == 2] == [84, 84, 84, 81]

    with pytest.raises(ConfigurationError):
        assign_shards(groups[2], zero1=True, optimizer_bytes=1001, pp_size=2)


def test_invalid_gpu_packing(make_spec):
    with pytest.raises(ConfigurationError, match="cluster.gpus_per_node"):
        make_spec(dp_size=3, pp_size=1, gpus_per_node=2)


def test_node_may_not_span_stages(make_spec):
    with pytest.raises(ConfigurationError, match="pipeline stages"):
        make_spec(dp_size=1, pp_size=4, tp_size=2, gpus_per_node=4)


def test_stage_sizes_must_match(make_spec):
    topo = build_topology(make_spec())
    with pytest.raises(ConfigurationError):
        form_sharding_groups(topo, [100])
    with pytest.raises(ConfigurationError):
        form_sharding_groups(topo, [100, 0])


def test_topology_digest(make_spec):
    a = build_topology(make_spec(dp_size=4, pp_size=2))
    b = build_topology(make_spec(dp_size=2, pp_size=4))

    assert len(a.digest()) == 32
    assert a.digest() == build_topology(make_spec(dp_size=4, pp_size=2)).digest()
    assert a.digest() != b.digest()


def test_unknown_node(make_spec):
    with pytest.raises(ConfigurationError):
        build_topology(make_spec()).node(99)
