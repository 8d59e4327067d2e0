"""
Analyze Tool
Survival curves with and without in-memory protection, 0.9-threshold intervals
and optimal snapshot / checkpoint interval recommendations.
"""

import csv
import io
import logging
from pathlib import Path
from typing import Any, Dict

import numpy as np

from reft import reliability
from reft.config import load_config
from reft.errors import ConfigurationError
from tools.base_tool import BaseUtility
from utils.toon_formatter import ToonFormatter, format_table

logger = logging.getLogger(__name__)


def thresholds_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    columns = ["c", "ckpt_days", "reft_days", "reft_literal_days", "ratio"]
    writer.writerow(columns)
    for row in rows:
        writer.writerow([repr(row[c]) for c in columns])
    return buf.getvalue()


class AnalyzeUtility(BaseUtility):
    def get_description(self) -> str:
        return "Reliability analysis: survival curves, threshold intervals, interval recommendations"

    def execute(self, params: Dict[str, Any]) -> Dict[str, Any]:
        """
        Args:
            params: Dictionary with:
                - fleet: Use the 3072-device, 6-way, four-shape setup (bool, optional)
                - config: Experiment config whose [failure] rates and cluster size are used (str, optional)
                - threshold: Survival threshold (float, default 0.9)
                - t_max: Curve horizon in days (float, default 30)
                - points: Curve grid points (int, default 301)
                - literal: Charge software faults to the REFT curve too (bool, optional)
                - t_sn / t_ckpt / t_comp / lambda_nd_fail: Interval inputs in seconds (optional)
                - out: Output directory (str, optional)

        Returns:
            Dictionary with status, curve CSV, threshold rows and interval recommendations
        """
        threshold = float(params.get("threshold", 0.9))
        t_max = float(params.get("t_max", 30.0))
        points = int(params.get("points", 301))
        if t_max <= 0 or points < 2:
            raise ConfigurationError("need t_max > 0 and at least 2 points", field="analyze.t_grid")
        literal = bool(params.get("literal", False))

        if params.get("config") and not params.get("fleet"):
            config = load_config(params["config"], overrides=params.get("overrides") or [])
            failure = config.failure
            shapes = (failure.c,)
            lambda_hw, lambda_sw = failure.lambda_hw, failure.lambda_sw
            k = config.cluster.node_count
            n = k // config.cluster.pp_size
        else:
            shapes = tuple(params.get("shapes") or reliability.FLEET_SHAPES)
            lambda_hw = float(params.get("lambda_hw", reliability.FLEET_LAMBDA_HW))
            lambda_sw = float(params.get("lambda_sw", reliability.FLEET_LAMBDA_SW))
            k = int(params.get("k", reliability.FLEET_NODES))
            n = int(params.get("n", reliability.FLEET_GROUP_SIZE))

        t_grid = np.linspace(0.0, t_max, points)
        curves = reliability.generate_survival_curves(t_grid, shapes, lambda_hw, lambda_sw, k, n, literal=literal,
                                                      max_workers=params.get("threads"))
        curves_csv = reliability.curves_to_csv(curves)
        thresholds = reliability.threshold_intervals(threshold, shapes, lambda_hw, lambda_sw, k, n)

        intervals = None
        if all(params.get(key) is not None for key in ("t_sn", "t_ckpt", "t_comp", "lambda_nd_fail")):
            intervals = reliability.recommend_intervals(
                reliability.Seconds(params["t_sn"]), reliability.Seconds(params["t_ckpt"]),
                reliability.Seconds(params["t_comp"]), float(params["lambda_nd_fail"]), n)

        report = {'k': k, 'n': n, 'lambda_hw': lambda_hw, 'lambda_sw': lambda_sw, 'threshold': threshold,
                  'thresholds': thresholds, 'intervals': intervals}
        files = {}
        if params.get("out"):
            out = Path(params["out"])
            out.mkdir(parents=True, exist_ok=True)
            files['curves'] = out / "survival_curves.csv"
            files['thresholds'] = out / "thresholds.csv"
            files['report'] = out / "analysis.toon"
            files['curves'].write_text(curves_csv)
            files['thresholds'].write_text(thresholds_to_csv(thresholds))
            ToonFormatter.write(files['report'], report)

        table = format_table(thresholds, ["c", "ckpt_days", "reft_days", "reft_literal_days", "ratio"])
        return self.success(f"Analyzed {len(shapes)} shape(s) over {points} points", curves_csv=curves_csv,
                            report=report, table=table, files={k_: str(v) for k_, v in files.items()})


_utility = AnalyzeUtility(name="analyze")


def execute(params):
    return _utility.run(params)
