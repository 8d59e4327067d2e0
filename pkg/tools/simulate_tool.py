"""
Simulate Tool
Runs a baseline and a snapshotting simulation of one experiment config and
writes metrics, trace, plan and a summary.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np

from reft.config import ExperimentConfig, dump_config, load_config
from reft.errors import ConfigurationError
from reft.failure import FailureEvent, SignalBoard, inject_failures, script_from_csv
from reft.has import SnapshotPlan, compute_overhead, plan_snapshot, plan_to_csv
from reft.metrics import OverheadReport, metrics_to_csv, samples_per_second
from reft.pipeline import generate_1f1b_schedule, iteration_length
from reft.protection import ProtectionConfig, ProtectionEngine
from reft.recovery import SimulatedRecovery
from reft.simkernel import SimulationResult, run_simulation, trace_to_csv
from reft.store.ledger import RunLedger
from reft.topology import (ShardAssignment, Topology, assign_shards, build_topology, form_sharding_groups,
                           per_stage_split)
from tools.base_tool import BaseUtility
from utils.toon_formatter import ToonFormatter, format_table

logger = logging.getLogger(__name__)


@dataclass
class ExperimentRun:
    config: ExperimentConfig
    topology: Topology
    assignments: List[ShardAssignment]
    plans: Dict[int, SnapshotPlan]
    failures: List[FailureEvent]
    baseline: SimulationResult
    result: SimulationResult
    overhead: OverheadReport = field(default_factory=OverheadReport)


def _failure_script(config: ExperimentConfig, topology: Topology, horizon_s: float,
                    rng: np.random.Generator) -> List[FailureEvent]:
    if config.failure.script:
        return script_from_csv(Path(config.failure.script).read_text())
    if config.failure.inject:
        return inject_failures(topology, config.failure.params, horizon_s, rng)
    return []


def run_experiment(config: ExperimentConfig) -> ExperimentRun:
    """
    Build topology, schedules, shards, protection and snapshot plans, then run the
    baseline and the snapshotting simulation side by side.
    """
    spec = config.cluster
    topology = build_topology(spec)
    schedules = generate_1f1b_schedule(spec)
    rng = np.random.default_rng(config.run.seed)

    zero1 = spec.zero1_enabled
    stage_total = config.model.total_bytes + (0 if zero1 else config.model.optimizer_bytes)
    groups = form_sharding_groups(topology, per_stage_split(stage_total, spec.pp_size))
    protection = ProtectionConfig.from_names(config.protection.strategies, eta=config.protection.eta).validate(zero1)

    assignments: List[ShardAssignment] = []
    engines: Dict[int, ProtectionEngine] = {}
    redundancy: Dict[int, int] = {}
    for group in groups:
        group_assignments = assign_shards(group, zero1=zero1,
                                          optimizer_bytes=config.model.optimizer_bytes if zero1 else 0,
                                          pp_size=spec.pp_size)
        assignments.extend(group_assignments)
        engine = ProtectionEngine(protection, group, zero1=zero1)
        engines[group.group_id] = engine
        redundancy.update(engine.redundancy_bytes(group_assignments))

    plans: Dict[int, SnapshotPlan] = {}
    if config.snapshot.enabled:
        plans = plan_snapshot(assignments, schedules, spec, config.bubble_mode, redundancy_bytes=redundancy,
                              chunk_size=config.snapshot.chunk_size, layer3_enabled=config.snapshot.layer3,
                              topology=topology)

    iterations = config.run.iterations
    horizon = iterations * iteration_length(schedules)
    failures = _failure_script(config, topology, horizon, rng)
    checkpoint_bytes = config.model.total_bytes + config.model.optimizer_bytes
    handler = SimulatedRecovery(topology, groups, assignments, engines, checkpoint_bytes,
                                tmpfs_flush=config.store.tmpfs_flush,
                                volatile_host_memory=config.store.volatile_host_memory)

    options = dict(alpha2=config.snapshot.alpha2, alpha3=config.snapshot.alpha3,
                   snapshot_interval=config.snapshot.interval, nfs_interval=config.snapshot.nfs_interval)
    baseline = run_simulation(topology, schedules, (), (), iterations, **options)
    result = run_simulation(topology, schedules, plans.values(), failures, iterations, failure_handler=handler,
                            signal_board=SignalBoard(n.node_id for n in topology.nodes), **options)
    overhead = compute_overhead(result.metrics, baseline.metrics)
    return ExperimentRun(config, topology, assignments, plans, failures, baseline, result, overhead)


def summarize(run: ExperimentRun) -> Dict[str, Any]:
    spec = run.config.cluster
    metrics = run.result.metrics
    layer_totals = [sum(m.bytes_snapshotted_by_layer[i] for m in metrics) for i in range(3)]
    baseline_sps = samples_per_second(run.baseline.metrics, spec.batch_size)
    has_sps = samples_per_second(metrics, spec.batch_size)
    return {
        'config_digest': run.config.digest(),
        'seed': run.config.run.seed,
        'iterations': len(metrics),
        'nodes': len(run.topology.nodes),
        'snapshot_enabled': run.config.snapshot.enabled,
        'strategies': list(run.config.protection.strategies),
        'o_inmem': {'mean': run.overhead.mean, 'max': run.overhead.max},
        'layer_bytes': {'layer1': layer_totals[0], 'layer2': layer_totals[1], 'layer3': layer_totals[2]},
        'spillover_nodes': sum(p.spillover for p in run.plans.values()),
        'snapshots_completed': run.result.snapshots_completed,
        'snapshots_skipped': run.result.snapshots_skipped,
        'failures': len(run.failures),
        'recoveries': [r.to_dict() if hasattr(r, 'to_dict') else str(r) for r in run.result.recoveries],
        'throughput': {
            'setting': f"DP{spec.dp_size}, PP{spec.pp_size}, TP{spec.tp_size}",
            'baseline_samples_per_second': baseline_sps,
            'has_samples_per_second': has_sps,
        },
    }


class SimulateUtility(BaseUtility):
    def get_description(self) -> str:
        return "Simulate hybrid-parallel training with and without in-memory snapshotting"

    def execute(self, params: Dict[str, Any]) -> Dict[str, Any]:
        """
        Args:
            params: Dictionary with:
                - config: Path to the experiment config (str) or an ExperimentConfig
                - overrides: ``section.key=value`` strings (list, optional)
                - seed / iterations: Override ``[run]`` values (int, optional)
                - no_snapshot: Disable snapshotting (bool, optional)
                - out: Output directory (str, optional)
                - dump_config: Also write the effective config (bool, optional)
                - ledger: Database URL for the run ledger (str, optional)

        Returns:
            Dictionary with status, output paths and the summary
        """
        config = params.get("config")
        if config is None:
            raise ConfigurationError("missing required input", field="--config")
        overrides = list(params.get("overrides") or [])
        for key in ("seed", "iterations"):
            if params.get(key) is not None:
                overrides.append(f"run.{key}={params[key]}")
        if params.get("no_snapshot"):
            overrides.append("snapshot.enabled=false")
        if params.get("out"):
            overrides.append(f"run.out={params['out']}")
        if isinstance(config, ExperimentConfig):
            config = load_config(text=dump_config(config), overrides=overrides)
        else:
            config = load_config(config, overrides=overrides)

        run = run_experiment(config)
        summary = summarize(run)

        out = Path(config.run.out)
        out.mkdir(parents=True, exist_ok=True)
        files = {
            'metrics': out / "metrics.csv",
            'trace': out / "trace.csv",
            'plan': out / "plan.csv",
            'summary': out / "summary.toon",
        }
        files['metrics'].write_text(metrics_to_csv(run.result.metrics))
        files['trace'].write_text(trace_to_csv(run.result.trace))
        files['plan'].write_text(plan_to_csv(run.plans))
        ToonFormatter.write(files['summary'], summary)
        if params.get("dump_config"):
            files['config'] = out / "effective.cfg"
            files['config'].write_text(dump_config(config))

        ledger_url = params.get("ledger") or config.store.ledger_url
        if ledger_url:
            RunLedger(ledger_url).record(
                config_digest=summary['config_digest'], seed=config.run.seed, iterations=summary['iterations'],
                mean_o_inmem=run.overhead.mean, max_o_inmem=run.overhead.max,
                samples_per_second=summary['throughput']['has_samples_per_second'],
                baseline_samples_per_second=summary['throughput']['baseline_samples_per_second'],
                snapshots_completed=run.result.snapshots_completed,
                recoveries=len(run.result.recoveries))

        row = summary['throughput']
        table = format_table([{'setting': row['setting'], 'baseline': row['baseline_samples_per_second'],
                               'HAS': row['has_samples_per_second']}])
        return self.success(f"Simulated {summary['iterations']} iterations on {summary['nodes']} nodes",
                            summary=summary, table=table, files={k: str(v) for k, v in files.items()})


_utility = SimulateUtility(name="simulate")


def execute(params):
    return _utility.run(params)
