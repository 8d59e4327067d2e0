"""
Analytical reliability: parameter survival with and without in-memory protection,
and the optimal snapshot / checkpoint intervals that minimise total overhead.

Survival math runs in days, interval math in seconds. ``Days`` and ``Seconds``
tag values so the two never mix silently.
"""

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Optional, Sequence

import numpy as np

from reft.config import SIM_THREADS
from reft.errors import ConfigurationError, ReftError
from reft.failure import SECONDS_PER_DAY, ReliabilityParams

logger = logging.getLogger(__name__)

FLEET_SHAPES = (1.0, 1.3, 1.5, 2.0)
FLEET_NODES = 3072
FLEET_GROUP_SIZE = 6
FLEET_LAMBDA_HW = 1e-4
FLEET_LAMBDA_SW = 1e-5

BRACKET_DAYS = 1e6
MAX_BRACKET_DAYS = 1e12
MAX_BISECTIONS = 200
RELATIVE_TOLERANCE = 1e-6


class Days(float):
    def to_seconds(self) -> "Seconds":
        return Seconds(float(self) * SECONDS_PER_DAY)

    def __repr__(self):
        return f"Days({float(self)!r})"


class Seconds(float):
    def to_days(self) -> Days:
        return Days(float(self) / SECONDS_PER_DAY)

    def __repr__(self):
        return f"Seconds({float(self)!r})"


def _seconds(value, name: str) -> float:
    if isinstance(value, Days):
        raise TypeError(f"{name} must be in seconds, got {value!r}")
    return float(value)


def _days(value, name: str) -> float:
    if isinstance(value, Seconds):
        raise TypeError(f"{name} must be in days, got {value!r}")
    return float(value)


def _probability(value: float, name: str) -> float:
    if not 0.0 <= value <= 1.0:
        raise ConfigurationError(f"must lie in [0, 1], got {value}", field=name)
    return value


class SurvivalMode(Enum):
    REFT = "REFT"
    CKPT = "CKPT"


@dataclass(frozen=True)
class SurvivalInputs:
    """
    Inputs of the two survival laws.

    ``p_s`` is one node's hardware survival, ``p_tr`` its training-program survival
    under checkpointing, ``p_re`` its survival of faults the snapshot cannot undo.
    """
    k: int
    n: int = 1
    p_s: float = 1.0
    p_tr: float = 1.0
    p_re: float = 1.0

    def validate(self) -> "SurvivalInputs":
        if self.k < 0:
            raise ConfigurationError("node count must be >= 0", field="reliability.k")
        if self.n < 1:
            raise ConfigurationError("group size must be >= 1", field="reliability.n")
        for name in ("p_s", "p_tr", "p_re"):
            _probability(getattr(self, name), f"reliability.{name}")
        return self

    @classmethod
    def at(cls, params: ReliabilityParams, t_days, k: int, n: int, literal: bool = False) -> "SurvivalInputs":
        """
        Derive the probabilities at time ``t_days`` from Weibull rates.

        Software faults are recoverable from the in-memory snapshot, so ``p_re`` is 1
        unless ``literal`` asks for ``exp(-lambda_sw t^c)``.
        """
        t = _days(t_days, "t")
        params.validate()
        p_sw = params.software_survival(t)
        return cls(k=k, n=n, p_s=params.hardware_survival(t), p_tr=p_sw, p_re=p_sw if literal else 1.0)


def p_re_survive(inputs: SurvivalInputs) -> float:
    """Every group keeps at most one dead member, and no node hits an unrecoverable fault."""
    inputs.validate()
    k, n, p_s = inputs.k, inputs.n, inputs.p_s
    if k % n != 0:
        raise ConfigurationError(f"node count {k} is not divisible by group size {n}", field="reliability.k")
    per_group = p_s ** n + n * (1.0 - p_s) * p_s ** (n - 1)
    return float(per_group ** (k // n) * inputs.p_re ** k)


def p_ck_survive(inputs: SurvivalInputs) -> float:
    inputs.validate()
    return float(inputs.p_s ** inputs.k * inputs.p_tr ** inputs.k)


def survival_at(params: ReliabilityParams, t_days, mode: SurvivalMode, k: int = FLEET_NODES,
                n: int = FLEET_GROUP_SIZE, literal: bool = False) -> float:
    inputs = SurvivalInputs.at(params, t_days, k, n, literal)
    if mode is SurvivalMode.REFT:
        return p_re_survive(inputs)
    return p_ck_survive(inputs)


def _survival_curve(params: ReliabilityParams, t: np.ndarray, mode: SurvivalMode, k: int, n: int,
                    literal: bool) -> np.ndarray:
    """Vectorised ``survival_at`` over a grid of days."""
    tc = np.power(np.maximum(t, 0.0), params.c)
    p_s = np.exp(-params.lambda_hw * tc)
    p_sw = np.exp(-params.lambda_sw * tc)
    if mode is SurvivalMode.CKPT:
        return np.power(p_s * p_sw, k)
    per_group = np.power(p_s, n) + n * (1.0 - p_s) * np.power(p_s, n - 1)
    curve = np.power(per_group, k // n)
    if literal:
        curve = curve * np.power(p_sw, k)
    return curve


def solve_interval_for_threshold(params: ReliabilityParams, threshold: float,
                                 mode: SurvivalMode = SurvivalMode.REFT, k: int = FLEET_NODES,
                                 n: int = FLEET_GROUP_SIZE, literal: bool = False) -> Days:
    """
    Time at which survival falls to ``threshold``, by bisection.

    The bracket starts at [0, 1e6] days and widens tenfold while survival at its
    upper end still exceeds the threshold.

    Raises:
        ConfigurationError: threshold outside (0, 1] or k not divisible by n
        ReftError: survival never falls to the threshold
    """
    if not 0.0 < threshold <= 1.0:
        raise ConfigurationError(f"must lie in (0, 1], got {threshold}", field="analyze.threshold")
    if mode is SurvivalMode.REFT and k % n != 0:
        raise ConfigurationError(f"node count {k} is not divisible by group size {n}", field="reliability.k")
    if threshold == 1.0:
        return Days(0.0)

    def f(t):
        return survival_at(params, t, mode, k, n, literal)

    lo, hi = 0.0, BRACKET_DAYS
    while f(hi) > threshold:
        hi *= 10.0
        if hi > MAX_BRACKET_DAYS:
            raise ReftError(f"{mode.value} survival never falls to {threshold} "
                            f"(lambda_hw={params.lambda_hw}, lambda_sw={params.lambda_sw})")

    for _ in range(MAX_BISECTIONS):
        mid = 0.5 * (lo + hi)
        if f(mid) > threshold:
            lo = mid
        else:
            hi = mid
        if hi - lo <= RELATIVE_TOLERANCE * hi:
            break
    return Days(0.5 * (lo + hi))


def generate_survival_curves(t_grid: Sequence[float], shapes: Sequence[float] = FLEET_SHAPES,
                             lambda_hw: float = FLEET_LAMBDA_HW, lambda_sw: float = FLEET_LAMBDA_SW,
                             k: int = FLEET_NODES, n: int = FLEET_GROUP_SIZE, literal: bool = False,
                             max_workers: Optional[int] = None) -> List[Dict[str, float]]:
    """
    Survival of both schemes over ``t_grid`` (days), one curve per Weibull shape.

    Rows are ordered by shape, then by t.
    """
    if k % n != 0:
        raise ConfigurationError(f"node count {k} is not divisible by group size {n}", field="reliability.k")
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or np.any(t < 0):
        raise ConfigurationError("time grid must be a non-empty list of days >= 0", field="analyze.t_grid")

    def curve(c):
        params = ReliabilityParams(lambda_hw, lambda_sw, c).validate()
        return (c,
                _survival_curve(params, t, SurvivalMode.REFT, k, n, literal),
                _survival_curve(params, t, SurvivalMode.CKPT, k, n, literal))

    if max_workers is None:
        max_workers = SIM_THREADS
    with ThreadPoolExecutor(max_workers=max(1, min(max_workers, len(shapes)))) as pool:
        curves = list(pool.map(curve, shapes))

    rows = []
    for c, reft, ckpt in curves:
        for ti, r, ck in zip(t, reft, ckpt):
            rows.append({'c': float(c), 't_days': float(ti), 'p_re_survive': float(r), 'p_ck_survive': float(ck)})
    logger.info(f"Generated {len(shapes)} survival curves over {t.size} points")
    return rows


def curves_to_csv(rows: Sequence[Dict[str, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["c", "t_days", "p_re_survive", "p_ck_survive"])
    for row in rows:
        writer.writerow([row['c'], repr(row['t_days']), repr(row['p_re_survive']), repr(row['p_ck_survive'])])
    return buf.getvalue()


def threshold_intervals(threshold: float = 0.9, shapes: Sequence[float] = FLEET_SHAPES,
                        lambda_hw: float = FLEET_LAMBDA_HW, lambda_sw: float = FLEET_LAMBDA_SW,
                        k: int = FLEET_NODES, n: int = FLEET_GROUP_SIZE) -> List[Dict[str, float]]:
    """
    Days until survival drops to ``threshold`` for each shape.

    ``reft_days`` treats software faults as recovered from memory (p_re = 1);
    ``reft_literal_days`` charges them with exp(-lambda_sw t^c).
    """
    rows = []
    for c in shapes:
        params = ReliabilityParams(lambda_hw, lambda_sw, c).validate()
        ckpt = solve_interval_for_threshold(params, threshold, SurvivalMode.CKPT, k, n)
        reft = solve_interval_for_threshold(params, threshold, SurvivalMode.REFT, k, n)
        literal = solve_interval_for_threshold(params, threshold, SurvivalMode.REFT, k, n, literal=True)
        rows.append({
            'c': float(c),
            'ckpt_days': float(ckpt),
            'reft_days': float(reft),
            'reft_literal_days': float(literal),
            'ratio': float(reft) / float(ckpt) if ckpt > 0 else math.inf,
        })
        logger.debug(f"c={c}: ckpt {ckpt:.4f} d, reft {reft:.4f} d, literal {literal:.4f} d")
    return rows


def o_save(t_ft, t_comp) -> Seconds:
    """Saving overhead left after overlapping ``t_ft`` with ``t_comp``."""
    t_ft, t_comp = _seconds(t_ft, "t_ft"), _seconds(t_comp, "t_comp")
    if t_ft < 0 or t_comp < 0:
        raise ConfigurationError("times must be >= 0", field="reliability.o_save")
    return Seconds(0.5 * (abs(t_ft - t_comp) + t_ft - t_comp))


def lambda_re_fail(lambda_nd: float, n: int) -> float:
    """Probability that two or more of ``n`` group members fail in one interval."""
    _probability(lambda_nd, "reliability.lambda_nd_fail")
    if n < 1:
        raise ConfigurationError("group size must be >= 1", field="reliability.n")
    q = 1.0 - lambda_nd
    return max(0.0, 1.0 - q ** n - n * lambda_nd * q ** (n - 1))


def optimal_interval(o_save_s, lambda_fail: float) -> Seconds:
    """
    sqrt(2 * o_save / lambda_fail).

    Zero saving overhead gives 0 (save every iteration); a zero failure rate gives inf.
    """
    o = _seconds(o_save_s, "o_save")
    if o < 0:
        raise ConfigurationError("must be >= 0", field="reliability.o_save")
    if lambda_fail < 0:
        raise ConfigurationError("must be >= 0", field="reliability.lambda_fail")
    if o == 0:
        return Seconds(0.0)
    if lambda_fail == 0:
        return Seconds(math.inf)
    return Seconds(math.sqrt(2.0 * o / lambda_fail))


def _overlap_interval(t_ft: float, t_comp: float, denominator: float) -> Seconds:
    numerator = abs(t_ft - t_comp) + t_ft - t_comp
    if numerator == 0:
        return Seconds(0.0)
    if denominator == 0:
        return Seconds(math.inf)
    return Seconds(math.sqrt(numerator / denominator))


def t_re_sn(t_sn, t_comp, lambda_nd_fail: float) -> Seconds:
    _probability(lambda_nd_fail, "reliability.lambda_nd_fail")
    return _overlap_interval(_seconds(t_sn, "t_sn"), _seconds(t_comp, "t_comp"), lambda_nd_fail)


def t_ckpt(t_ckpt_s, t_comp, lambda_nd_fail: float) -> Seconds:
    _probability(lambda_nd_fail, "reliability.lambda_nd_fail")
    return _overlap_interval(_seconds(t_ckpt_s, "t_ckpt"), _seconds(t_comp, "t_comp"), lambda_nd_fail)


def t_re_ckpt(t_sn, t_comp, lambda_nd_fail: float, n: int) -> Seconds:
    """Checkpoint interval when checkpoints only matter after a group loses two members."""
    return _overlap_interval(_seconds(t_sn, "t_sn"), _seconds(t_comp, "t_comp"), lambda_re_fail(lambda_nd_fail, n))


def o_total(o_save_s, t_total, t_save, o_restart, lambda_fail: float) -> float:
    """Saving overhead over all intervals plus the expected restart cost."""
    o = _seconds(o_save_s, "o_save")
    total = _seconds(t_total, "t_total")
    save = _seconds(t_save, "t_save")
    restart = _seconds(o_restart, "o_restart")
    if save <= 0:
        return math.inf
    return o * total / save + restart * total * lambda_fail


def grid_search_interval(o_save_s, lambda_fail: float, restart_const: float = 0.0, t_total: float = 1.0,
                         lo: float = 1.0, hi: float = 1e6, points: int = 20001) -> Seconds:
    """
    Minimise ``o_total`` numerically over a geometric grid of intervals.

    The restart cost is modelled as half an interval of lost work plus ``restart_const``.
    """
    o = _seconds(o_save_s, "o_save")
    if lo <= 0 or hi <= lo or points < 2:
        raise ConfigurationError("grid needs 0 < lo < hi and at least 2 points", field="reliability.grid")
    t = np.geomspace(lo, hi, points)
    cost = o * t_total / t + (t / 2.0 + restart_const) * t_total * lambda_fail
    return Seconds(float(t[int(np.argmin(cost))]))


def recommend_intervals(t_sn, t_ckpt_s, t_comp, lambda_nd_fail: float, n: int) -> Dict[str, float]:
    """Snapshot and checkpoint intervals with and without in-memory protection."""
    report = {
        'o_re_save': float(o_save(t_sn, t_comp)),
        'o_ck_save': float(o_save(t_ckpt_s, t_comp)),
        'lambda_nd_fail': lambda_nd_fail,
        'lambda_re_fail': lambda_re_fail(lambda_nd_fail, n),
        't_re_sn': float(t_re_sn(t_sn, t_comp, lambda_nd_fail)),
        't_ckpt': float(t_ckpt(t_ckpt_s, t_comp, lambda_nd_fail)),
        't_re_ckpt': float(t_re_ckpt(t_sn, t_comp, lambda_nd_fail, n)),
    }
    logger.info(f"Recommended snapshot every {report['t_re_sn']:.1f}s, "
                f"checkpoint every {report['t_re_ckpt']:.1f}s (vs {report['t_ckpt']:.1f}s without REFT)")
    return report
