"""
Process settings from the environment, and experiment configs.

Experiment configs are sectioned key/value files::

    [cluster]
    dp = 4
    pp = 16

``--set section.key=value`` overrides are applied before validation.
"""

import configparser
import hashlib
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Optional, Tuple, Union

from reft.errors import ConfigurationError
from reft.failure import ReliabilityParams
from reft.pipeline import BubbleMode
from reft.topology import ClusterSpec

SIM_THREADS = max(1, int(os.getenv('REFT_SIM_THREADS', os.cpu_count() or 1)))
TMPFS_ROOT = os.getenv('REFT_TMPFS_ROOT', '/dev/shm/reft' if os.path.isdir('/dev/shm') else './tmpfs')
NFS_ROOT = os.getenv('REFT_NFS_ROOT', './nfs')
LEDGER_URL = os.getenv('REFT_LEDGER_URL') or None
LOG_LEVEL = os.getenv('REFT_LOG_LEVEL', 'INFO')


@dataclass(frozen=True)
class ModelSettings:
    total_bytes: int = 1 << 30
    optimizer_bytes: int = 0


@dataclass(frozen=True)
class SnapshotSettings:
    enabled: bool = True
    interval: int = 1
    nfs_interval: int = 0
    chunk_size: int = 64 << 20
    bubble_mode: str = BubbleMode.PROFILED.value
    alpha2: float = 0.0
    alpha3: float = 0.0
    layer3: Optional[bool] = None


@dataclass(frozen=True)
class ProtectionSettings:
    strategies: Tuple[str, ...] = ("arc",)
    eta: float = 0.01


@dataclass(frozen=True)
class FailureSettings:
    lambda_hw: float = 0.0
    lambda_sw: float = 0.0
    c: float = 1.0
    inject: bool = False
    script: Optional[str] = None

    @property
    def params(self) -> ReliabilityParams:
        return ReliabilityParams(self.lambda_hw, self.lambda_sw, self.c)


@dataclass(frozen=True)
class StoreSettings:
    tmpfs_root: str = TMPFS_ROOT
    nfs_root: str = NFS_ROOT
    tmpfs_flush: bool = False
    volatile_host_memory: bool = False
    ledger_url: Optional[str] = LEDGER_URL


@dataclass(frozen=True)
class RunSettings:
    iterations: int = 10
    seed: int = 0
    out: str = './out'


@dataclass(frozen=True)
class ExperimentConfig:
    cluster: ClusterSpec
    model: ModelSettings = field(default_factory=ModelSettings)
    snapshot: SnapshotSettings = field(default_factory=SnapshotSettings)
    protection: ProtectionSettings = field(default_factory=ProtectionSettings)
    failure: FailureSettings = field(default_factory=FailureSettings)
    store: StoreSettings = field(default_factory=StoreSettings)
    run: RunSettings = field(default_factory=RunSettings)

    @property
    def bubble_mode(self) -> BubbleMode:
        return BubbleMode(self.snapshot.bubble_mode)

    def digest(self) -> str:
        return hashlib.sha256(dump_config(self).encode()).hexdigest()

    def validate(self) -> "ExperimentConfig":
        self.cluster.validate()
        if self.model.total_bytes < 1:
            raise ConfigurationError("must be >= 1", field="model.total_bytes")
        if self.model.optimizer_bytes < 0:
            raise ConfigurationError("must be >= 0", field="model.optimizer_bytes")
        s = self.snapshot
        if s.interval < 1:
            raise ConfigurationError("must be >= 1", field="snapshot.interval")
        if s.nfs_interval < 0:
            raise ConfigurationError("must be >= 0", field="snapshot.nfs_interval")
        if s.chunk_size < 1:
            raise ConfigurationError("must be >= 1", field="snapshot.chunk_size")
        if s.bubble_mode not in {m.value for m in BubbleMode}:
            raise ConfigurationError(f"expected one of {[m.value for m in BubbleMode]}, got '{s.bubble_mode}'",
                                     field="snapshot.bubble_mode")
        for name in ("alpha2", "alpha3"):
            if getattr(s, name) < 0:
                raise ConfigurationError("must be >= 0", field=f"snapshot.{name}")
        if self.protection.eta <= 0:
            raise ConfigurationError("must be > 0", field="protection.eta")
        self.failure.params.validate()
        if self.run.iterations < 1:
            raise ConfigurationError("must be >= 1", field="run.iterations")
        return self


# Config keys that differ from the dataclass attribute they set.
_CLUSTER_ALIASES = {'dp': 'dp_size', 'pp': 'pp_size', 'tp': 'tp_size', 'zero1': 'zero1_enabled'}
_SECTIONS = ('cluster', 'model', 'snapshot', 'protection', 'failure', 'store', 'run')
_TYPES = {
    'cluster': ClusterSpec, 'model': ModelSettings, 'snapshot': SnapshotSettings,
    'protection': ProtectionSettings, 'failure': FailureSettings, 'store': StoreSettings, 'run': RunSettings,
}
_FLOAT_LISTS = {'microbatch_compute_time', 'grad_sync_time'}
_STR_LISTS = {'strategies'}
_REQUIRED_CLUSTER = ('dp_size', 'pp_size', 'tp_size', 'gpus_per_node', 'd2h_bandwidth', 'internode_bandwidth',
                     'nfs_bandwidth', 'microbatch_compute_time', 'num_microbatches')


def _field_types(cls) -> dict:
    return {f.name: f.type for f in fields(cls)}


def _attr(section: str, key: str) -> str:
    return _CLUSTER_ALIASES.get(key, key) if section == 'cluster' else key


def _key(section: str, attr: str) -> str:
    if section == 'cluster':
        for alias, name in _CLUSTER_ALIASES.items():
            if name == attr:
                return alias
    return attr


def _parse_bool(raw: str, where: str) -> bool:
    value = raw.strip().lower()
    if value in ('1', 'true', 'yes', 'on'):
        return True
    if value in ('0', 'false', 'no', 'off'):
        return False
    raise ConfigurationError(f"expected a boolean, got '{raw}'", field=where)


def _coerce(section: str, attr: str, raw: str, annotation):
    where = f"{section}.{_key(section, attr)}"
    text = raw.strip()
    try:
        if attr in _FLOAT_LISTS:
            return tuple(float(v) for v in text.split(',') if v.strip())
        if attr in _STR_LISTS:
            return tuple(v.strip() for v in text.split(',') if v.strip())
        if 'Optional' in str(annotation) and text in ('', 'none', 'None'):
            return None
        if annotation in (bool, 'bool') or 'bool' in str(annotation):
            return _parse_bool(text, where)
        if annotation in (int, 'int'):
            return int(text)
        if annotation in (float, 'float'):
            return float(text)
        return text
    except ValueError:
        raise ConfigurationError(f"cannot parse '{raw}'", field=where) from None


def _format(value) -> str:
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ', '.join(_format(v) for v in value)
    return str(value)


def parse_overrides(overrides: Iterable[str]) -> list:
    """``section.key=value`` strings into (section, key, value) triples."""
    parsed = []
    for item in overrides:
        target, sep, value = item.partition('=')
        section, dot, key = target.strip().partition('.')
        if not sep or not dot or not key:
            raise ConfigurationError(f"override '{item}' is not of the form section.key=value", field="--set")
        parsed.append((section.strip(), key.strip(), value))
    return parsed


def load_config(path: Optional[Union[str, Path]] = None, overrides: Iterable[str] = (),
                text: Optional[str] = None) -> ExperimentConfig:
    """
    Read a config file (or ``text``), apply overrides and validate.

    Raises:
        ConfigurationError: unknown section or key, unparsable value, or an invalid setting
    """
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file {path} does not exist", field="--config")
        parser.read(path)
    if text is not None:
        parser.read_string(text)
    for section, key, value in parse_overrides(overrides):
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, key, value)

    values = {s: {} for s in _SECTIONS}
    for section in parser.sections():
        if section not in _TYPES:
            raise ConfigurationError(f"unknown section [{section}]", field=section)
        types = _field_types(_TYPES[section])
        for key, raw in parser.items(section):
            attr = _attr(section, key)
            if attr not in types:
                raise ConfigurationError("unknown key", field=f"{section}.{key}")
            values[section][attr] = _coerce(section, attr, raw, types[attr])

    missing = [_key('cluster', a) for a in _REQUIRED_CLUSTER if a not in values['cluster']]
    if missing:
        raise ConfigurationError(f"missing required keys {missing}", field="cluster")
    cluster = values.pop('cluster')
    if len(cluster['microbatch_compute_time']) == 1:
        cluster['microbatch_compute_time'] = cluster['microbatch_compute_time'][0]
    if len(cluster.get('grad_sync_time', ())) == 1:
        cluster['grad_sync_time'] = cluster['grad_sync_time'][0]
    config = ExperimentConfig(cluster=ClusterSpec(**cluster),
                              **{s: _TYPES[s](**v) for s, v in values.items()})
    return config.validate()


def dump_config(config: ExperimentConfig) -> str:
    """Effective config as text; ``load_config(text=dump_config(c)) == c``."""
    lines = []
    for section in _SECTIONS:
        obj = getattr(config, section)
        lines.append(f"[{section}]")
        for f in fields(obj):
            lines.append(f"{_key(section, f.name)} = {_format(getattr(obj, f.name))}")
        lines.append("")
    return "\n".join(lines)


def with_overrides(config: ExperimentConfig, overrides: Iterable[str]) -> ExperimentConfig:
    """Apply overrides to an already loaded config."""
    overrides = list(overrides)
    if not overrides:
        return config
    return load_config(text=dump_config(config), overrides=overrides)


def without_snapshots(config: ExperimentConfig) -> ExperimentConfig:
    return replace(config, snapshot=replace(config.snapshot, enabled=False))
