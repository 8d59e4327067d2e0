"""
Shared fixtures: small clusters and config text.
"""

import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import pytest

from reft.topology import ClusterSpec

CONFIG_DIR = Path(__file__).parent.parent / "data" / "configs"

SMALL_CONFIG = """
[cluster]
dp = 2
pp = 2
tp = 1
gpus_per_node = 1
d2h_bandwidth = 17179869184
internode_bandwidth = 12.5e9
nfs_bandwidth = 1e9
microbatch_compute_time = 0.01
num_microbatches = 4
grad_sync_time = 0.002
batch_size = 8

[model]
total_bytes = 4194304

[snapshot]
chunk_size = 1048576
alpha2 = 0.05
alpha3 = 0.05

[protection]
strategies = arc

[run]
iterations = 3
seed = 0
"""


@pytest.fixture
def make_spec():
    """Factory for validated ClusterSpecs with desk-scale defaults."""
    def _make(**overrides):
        values = dict(dp_size=4, pp_size=2, tp_size=1, gpus_per_node=1, d2h_bandwidth=16 * 2 ** 30,
                      internode_bandwidth=12.5e9, nfs_bandwidth=1e9, microbatch_compute_time=1.0,
                      num_microbatches=4)
        values.update(overrides)
        return ClusterSpec(**values).validate()
    return _make


@pytest.fixture
def small_config_file(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_CONFIG)
    return path
