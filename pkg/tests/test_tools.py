"""
Test the utilities behind the CLI: simulate, analyze, recover_drill and codec,
loaded through the tool registry.
"""

import json
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from reft.config import load_config, without_snapshots
from reft.errors import ConfigurationError
from reft.metrics import METRICS_SCHEMA_VERSION
from reft.simkernel import Stream
from reft.store.ledger import RunLedger
from tools.recover_drill_tool import parse_nodes
from tools.simulate_tool import run_experiment
from tools.tool_loader import load_tools, tool_for_command

DEFAULT_CONFIG = Path(__file__).parent.parent / "data" / "configs" / "default.cfg"


@pytest.fixture(scope="module")
def tools():
    loaded, _ = load_tools()
    return loaded


def test_registry(tools):
    assert set(tools) == {"simulate", "analyze", "recover_drill", "codec"}
    for name, tool in tools.items():
        assert callable(tool['execute']), f"{name} has no execute"
        assert tool['examples'], f"{name} has no examples"


def test_tool_for_command(tools):
    assert tool_for_command(tools, "recover-drill") is tools['recover_drill']['execute']
    with pytest.raises(ConfigurationError):
        tool_for_command(tools, "train")


def test_load_tools_metadata_errors(tmp_path):
    broken = tmp_path / "broken.json"
    broken.write_text(json.dumps({"tools": [{"name": "codec", "module": "tools.codec_tool"}]}))
    with pytest.raises(ConfigurationError, match="function"):
        load_tools(str(broken))

    missing_module = tmp_path / "missing.json"
    missing_module.write_text(json.dumps({"tools": [
        {"name": "ghost", "module": "tools.ghost_tool", "function": "execute", "description": "", "parameters": {}},
        {"name": "codec", "module": "tools.codec_tool", "function": "execute", "description": "", "parameters": {}},
    ]}))
    loaded, _ = load_tools(str(missing_module))
    assert set(loaded) == {"codec"}

    with pytest.raises(FileNotFoundError):
        load_tools(str(tmp_path / "nope.json"))


# ---------------------------------------------------------------------------
# simulate

def test_simulate_writes_outputs(tools, small_config_file, tmp_path):
    result = tools['simulate']['execute']({'config': str(small_config_file), 'out': str(tmp_path / "run")})

    assert result['status'] == 'success', result.get('message')
    for name in ("metrics", "trace", "plan", "summary"):
        assert Path(result['files'][name]).exists(), f"missing {name} output"
    metrics = Path(result['files']['metrics']).read_text().splitlines()
    assert metrics[0] == METRICS_SCHEMA_VERSION
    assert len(metrics) == 2 + 3
    summary = result['summary']
    assert summary['iterations'] == 3
    assert summary['nodes'] == 4
    assert summary['snapshots_completed'] >= 1
    assert "DP2, PP2, TP1" in result['table']


def test_simulate_is_deterministic(tools, small_config_file, tmp_path):
    runs = []
    for name in ("a", "b"):
        result = tools['simulate']['execute']({'config': str(small_config_file), 'seed': 7,
                                               'out': str(tmp_path / name)})
        assert result['status'] == 'success', result.get('message')
        runs.append(result['files'])

    for name in ("metrics", "trace", "plan"):
        assert Path(runs[0][name]).read_bytes() == Path(runs[1][name]).read_bytes(), f"{name} differs"


def test_no_snapshot_has_no_overhead(tools, small_config_file, tmp_path):
    result = tools['simulate']['execute']({'config': str(small_config_file), 'no_snapshot': True,
                                           'out': str(tmp_path)})

    assert result['status'] == 'success', result.get('message')
    assert result['summary']['snapshot_enabled'] is False
    assert result['summary']['o_inmem'] == {'mean': 0.0, 'max': 0.0}
    rows = Path(result['files']['metrics']).read_text().splitlines()[2:]
    assert all(float(row.split(",")[2]) == pytest.approx(0.0, abs=1e-12) for row in rows)


def test_snapshots_leave_the_network_stream_alone():
    """Snapshot signals stay off NETWORK, so its records match a run without snapshots."""
    config = load_config(DEFAULT_CONFIG, overrides=["snapshot.alpha2=0", "snapshot.alpha3=0", "run.iterations=3"])
    with_snapshots = run_experiment(config).result
    without = run_experiment(without_snapshots(config)).result

    def network(trace):
        return [(r.node_id, r.iteration, r.kind, r.duration, r.bytes) for r in trace if r.stream is Stream.NETWORK]

    assert with_snapshots.snapshots_completed > 0
    assert network(with_snapshots.trace) == network(without.trace)
    assert {r.kind for r in with_snapshots.trace if r.stream is Stream.NETWORK} == {"COMM"}
    signals = [r for r in with_snapshots.trace if r.kind == "SIGNAL"]
    assert signals and all(r.stream is Stream.CONTROL for r in signals)


def test_dumped_config_reproduces_the_run(tools, small_config_file, tmp_path):
    first = tools['simulate']['execute']({'config': str(small_config_file), 'dump_config': True,
                                          'out': str(tmp_path / "first")})
    assert first['status'] == 'success', first.get('message')
    outputs = {name: Path(first['files'][name]).read_bytes() for name in ("metrics", "trace", "plan")}

    # the dumped config carries run.out, so the re-run overwrites the same files
    second = tools['simulate']['execute']({'config': first['files']['config']})
    assert second['status'] == 'success', second.get('message')
    assert second['summary']['config_digest'] == first['summary']['config_digest']
    for name, data in outputs.items():
        assert Path(second['files'][name]).read_bytes() == data, f"{name} differs after re-run"


def test_simulate_records_to_ledger(tools, small_config_file, tmp_path):
    url = f"sqlite:///{tmp_path / 'ledger.db'}"
    result = tools['simulate']['execute']({'config': str(small_config_file), 'ledger': url,
                                           'out': str(tmp_path / "run")})

    assert result['status'] == 'success', result.get('message')
    runs = RunLedger(url).runs(result['summary']['config_digest'])
    assert len(runs) == 1
    assert runs[0]['iterations'] == 3


def test_simulate_with_failure_script(tools, small_config_file, tmp_path):
    script = tmp_path / "failures.csv"
    script.write_text("time_s,node,kind\n0.12,0,HARDWARE\n")
    result = tools['simulate']['execute']({'config': str(small_config_file), 'out': str(tmp_path / "run"),
                                           'overrides': [f"failure.script={script}"]})

    assert result['status'] == 'success', result.get('message')
    assert result['summary']['failures'] == 1
    recoveries = result['summary']['recoveries']
    assert len(recoveries) == 1
    assert recoveries[0]['path'] in ("in_memory", "nfs")


def test_simulate_reports_config_errors(tools, small_config_file, tmp_path):
    missing = tools['simulate']['execute']({'out': str(tmp_path)})
    assert missing['status'] == 'error'
    assert missing['error_type'] == 'ConfigurationError'

    bad = tools['simulate']['execute']({'config': str(small_config_file), 'overrides': ["cluster.dp=0"]})
    assert bad['status'] == 'error'
    assert "cluster.dp" in bad['message']


# ---------------------------------------------------------------------------
# analyze

def test_analyze_fleet(tools, tmp_path):
    result = tools['analyze']['execute']({'fleet': True, 'points': 31, 'out': str(tmp_path)})

    assert result['status'] == 'success', result.get('message')
    header, *rows = result['curves_csv'].splitlines()
    assert header == "c,t_days,p_re_survive,p_ck_survive"
    assert sorted({float(row.split(',')[0]) for row in rows}) == [1.0, 1.3, 1.5, 2.0]
    assert all(t['ratio'] >= 10.0 for t in result['report']['thresholds'])
    for name in ("curves", "thresholds", "report"):
        assert Path(result['files'][name]).exists()


def test_analyze_intervals(tools):
    result = tools['analyze']['execute']({'fleet': True, 'points': 2, 't_sn': 5.0, 't_ckpt': 60.0, 't_comp': 3.0,
                                          'lambda_nd_fail': 0.01})

    assert result['status'] == 'success', result.get('message')
    intervals = result['report']['intervals']
    assert intervals['t_re_sn'] == pytest.approx(20.0)
    assert intervals['t_re_ckpt'] > intervals['t_re_sn']


def test_analyze_rejects_bad_grid(tools):
    result = tools['analyze']['execute']({'t_max': 0.0})
    assert result['status'] == 'error'
    assert result['error_type'] == 'ConfigurationError'


# ---------------------------------------------------------------------------
# recover_drill

def test_parse_nodes():
    assert parse_nodes(["node3", "5"]) == [3, 5]
    assert parse_nodes("node1, node2") == [1, 2]
    assert parse_nodes(4) == [4]
    with pytest.raises(ConfigurationError):
        parse_nodes(["gpu3"])


@pytest.mark.parametrize("kill,strategy", [(["node3"], "arc"), (["node0", "node1"], "arc,aec"),
                                           (["node2"], "arc,aor")])
def test_recover_drill(tools, tmp_path, kill, strategy):
    result = tools['recover_drill']['execute']({'kill': kill, 'strategy': strategy, 'out': str(tmp_path)})

    assert result['status'] == 'success', result.get('message')
    assert "bit-exact: true" in result['message']
    assert result['bit_exact'] is True
    assert Path(result['files']['report']).exists()


def test_recover_drill_needs_nodes(tools):
    assert tools['recover_drill']['execute']({})['status'] == 'error'
    assert tools['recover_drill']['execute']({'kill': ["rack7"]})['error_type'] == 'ConfigurationError'


# ---------------------------------------------------------------------------
# codec

def test_codec_roundtrip(tools, tmp_path):
    rng = np.random.default_rng(0)
    files = []
    for name in ("a.bin", "b.bin", "c.bin"):
        path = tmp_path / name
        path.write_bytes(rng.integers(0, 256, 4099, dtype=np.uint8).tobytes())
        files.append(str(path))
    parity = str(tmp_path / "p.bin")

    encoded = tools['codec']['execute']({'action': 'encode', 'inputs': files, 'output': parity})
    assert encoded['status'] == 'success', encoded.get('message')
    assert encoded['bytes'] == 4099

    restored = tmp_path / "a.restored"
    decoded = tools['codec']['execute']({'action': 'decode', 'inputs': [parity] + files[1:],
                                         'output': str(restored)})
    assert decoded['status'] == 'success', decoded.get('message')
    assert restored.read_bytes() == Path(files[0]).read_bytes()


def test_codec_errors(tools, tmp_path):
    short, long = tmp_path / "short.bin", tmp_path / "long.bin"
    short.write_bytes(b"abc")
    long.write_bytes(b"abcd")

    unequal = tools['codec']['execute']({'action': 'encode', 'inputs': [str(short), str(long)],
                                         'output': str(tmp_path / "p.bin")})
    assert unequal['status'] == 'error'
    assert unequal['error_type'] == 'CodecError'

    assert tools['codec']['execute']({'action': 'shuffle', 'inputs': [str(short)]})['status'] == 'error'
    assert tools['codec']['execute']({'action': 'decode', 'inputs': [str(short)]})['status'] == 'error'
    missing = tools['codec']['execute']({'action': 'encode', 'inputs': [str(tmp_path / "nope.bin")]})
    assert missing['error_type'] == 'missing_files'
