"""
Report serialization for reft-sim: TOON when toon-format is installed, JSON otherwise.

Summaries, analysis reports, drill reports and tmpfs manifests all pass through
``ToonFormatter``; ``to_plain`` first reduces dataclasses, enums and numpy values
to types both encoders accept.
"""

import json
import logging
import math
from dataclasses import asdict, is_dataclass
from enum import Enum
from pathlib import Path

try:
    import toon_format
except ImportError:
    toon_format = None

logger = logging.getLogger(__name__)


def to_plain(data):
    """
    Reduce reports to str/int/float/bool/None, lists and dicts.

    Dataclasses become dicts, enums their value, numpy scalars and arrays their
    Python equivalents, non-finite floats the strings "inf"/"-inf"/"nan".
    """
    if hasattr(data, 'to_dict'):
        return to_plain(data.to_dict())
    if is_dataclass(data) and not isinstance(data, type):
        return to_plain(asdict(data))
    if isinstance(data, Enum):
        return to_plain(data.value)
    if isinstance(data, dict):
        return {str(k): to_plain(v) for k, v in data.items()}
    if isinstance(data, (list, tuple, set, frozenset)):
        return [to_plain(v) for v in data]
    if isinstance(data, (bytes, bytearray)):
        return data.hex()
    if hasattr(data, 'tolist'):
        return to_plain(data.tolist())
    if isinstance(data, float) and not math.isfinite(data):
        return str(data)
    return data


class ToonFormatter:
    """
    Encode reports as TOON (https://toonformat.dev/), degrading to indented JSON.

    ``loads`` reads either format, so a report written without the library installed
    still loads once it is.
    """

    _warned = False

    @classmethod
    def is_available(cls) -> bool:
        return toon_format is not None

    @classmethod
    def _fallback(cls, reason: str) -> None:
        if not cls._warned:
            logger.warning(f"Writing JSON instead of TOON: {reason}")
            cls._warned = True

    @classmethod
    def dumps(cls, data, **kwargs) -> str:
        plain = to_plain(data)
        if toon_format is None:
            cls._fallback("toon-format is not installed")
            return json.dumps(plain, indent=2, default=str)
        try:
            encoded = toon_format.encode(plain, **kwargs)
        except Exception as e:
            cls._fallback(f"encoder rejected the report ({e})")
            return json.dumps(plain, indent=2, default=str)
        return encoded.decode('utf-8') if isinstance(encoded, bytes) else str(encoded)

    @classmethod
    def loads(cls, text: str, **kwargs):
        if text.lstrip()[:1] in ('{', '['):
            try:
                return json.loads(text)
            except json.JSONDecodeError:
                pass
        if toon_format is None:
            return json.loads(text)
        return toon_format.decode(text, **kwargs)

    @classmethod
    def write(cls, path, data) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(cls.dumps(data))
        logger.debug(f"Wrote {path}")
        return path


def format_table(rows, columns=None, floatfmt: str = ".4g") -> str:
    """Fixed-width text table of dict rows for terminal summaries."""
    rows = list(rows)
    if not rows:
        return ""
    columns = columns or list(rows[0].keys())

    def cell(value):
        if isinstance(value, float):
            return format(value, floatfmt)
        return str(value)

    body = [[cell(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(line[i]) for line in body)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths)),
             "  ".join("-" * w for w in widths)]
    lines += ["  ".join(v.ljust(w) for v, w in zip(line, widths)) for line in body]
    return "\n".join(lines)
