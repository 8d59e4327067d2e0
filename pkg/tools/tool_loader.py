"""
Registry of the reft-sim utilities, read from ``tools_metadata.json``.

CLI subcommands are spelled with dashes (``recover-drill``); registry names use
underscores (``recover_drill``).
"""

import importlib
import json
import logging
import os
from typing import Any, Callable, Dict, Tuple

from reft.errors import ConfigurationError
from utils.toon_formatter import ToonFormatter

logger = logging.getLogger(__name__)

REQUIRED_KEYS = ('name', 'module', 'function', 'description', 'parameters')


def _read_metadata(metadata_path: str) -> Dict[str, Any]:
    with open(metadata_path, 'r', encoding='utf-8') as f:
        content = f.read()
    if metadata_path.endswith('.json'):
        return json.loads(content)
    return ToonFormatter.loads(content)


def load_tools(metadata_path: str = 'tools/tools_metadata.json') -> Tuple[Dict[str, Dict[str, Any]], Dict[str, Any]]:
    """
    Import every utility listed in the metadata file.

    Entries missing a required key are rejected; entries whose module fails to import
    are skipped with a warning so one broken utility does not take down the CLI.
    """
    if not os.path.isabs(metadata_path):
        base_dir = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
        metadata_path = os.path.join(base_dir, metadata_path)
    if not os.path.exists(metadata_path):
        raise FileNotFoundError(f"Tools metadata file not found: {metadata_path}")

    metadata = _read_metadata(metadata_path)
    tools = {}
    for tool_def in metadata.get('tools', []):
        missing = [key for key in REQUIRED_KEYS if key not in tool_def]
        if missing:
            raise ConfigurationError(f"tool entry lacks {', '.join(missing)}",
                                     field=f"tools.{tool_def.get('name', '?')}")
        try:
            module = importlib.import_module(tool_def['module'])
            func = getattr(module, tool_def['function'])
        except (ImportError, AttributeError) as e:
            logger.warning(f"Could not load tool '{tool_def['name']}': {e}")
            continue
        tools[tool_def['name']] = {
            'execute': func,
            'description': tool_def['description'],
            'tags': tool_def.get('tags', []),
            'parameters': tool_def['parameters'],
            'examples': tool_def.get('examples', []),
        }
    logger.debug(f"Loaded {len(tools)} tools from {metadata_path}")
    return tools, metadata


def tool_for_command(tools: Dict[str, Dict[str, Any]], command: str) -> Callable[[Dict[str, Any]], Dict[str, Any]]:
    name = command.replace('-', '_')
    if name not in tools:
        raise ConfigurationError(f"no utility registered for '{command}'", field="command")
    return tools[name]['execute']
