"""
Base class for the reft-sim utilities. Each CLI subcommand is one utility.
"""

import logging
from abc import ABC, abstractmethod
from typing import Any, Dict, Optional

from reft.errors import ReftError

logger = logging.getLogger(__name__)


class BaseUtility(ABC):
    """
    Base class for the utilities behind the CLI subcommands.

    ``run`` wraps ``execute``: library errors become ``{"status": "error", ...}``
    results instead of exceptions.
    """

    def __init__(self, name: Optional[str] = None, description: Optional[str] = None,
                 parameters: Optional[Dict] = None):
        self.name = name or self.__class__.__name__
        self.description = description or self.get_description()
        self.parameters = parameters or {}

    @abstractmethod
    def execute(self, params: Dict[str, Any]) -> Dict[str, Any]:
        """
        Execute the utility with the given parameters

        Args:
            params: Dictionary containing utility parameters

        Returns:
            Dictionary with ``status`` ("success" or "error") and the results
        """

    def run(self, params: Optional[Dict[str, Any]]) -> Dict[str, Any]:
        if not params or not isinstance(params, dict):
            params = {}
        try:
            return self.execute(params)
        except ReftError as e:
            logger.error(f"{self.name} failed: {e}", exc_info=True)
            return self.error(str(e), error_type=type(e).__name__, params_received=params)
        except OSError as e:
            logger.error(f"{self.name} failed on file access: {e}", exc_info=True)
            return self.error(str(e), error_type="io_error", params_received=params)

    def success(self, message: str, **payload) -> Dict[str, Any]:
        return {"status": "success", "tool": self.name, "message": message, **payload}

    def error(self, message: str, **extra) -> Dict[str, Any]:
        return {"status": "error", "tool": self.name, "message": message, **extra}

    def get_description(self) -> str:
        return f"{self.name} utility"

    def get_parameters_schema(self) -> Dict[str, Any]:
        """JSON schema of the accepted parameters, built from ``self.parameters``."""
        return {
            "type": "object",
            "properties": {k: {kk: vv for kk, vv in v.items() if kk != "required"}
                           for k, v in self.parameters.items()},
            "required": [k for k, v in self.parameters.items() if v.get("required")],
        }
