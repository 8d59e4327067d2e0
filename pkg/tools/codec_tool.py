"""
Codec Tool
XOR parity over files: ``encode`` builds a parity from equal-length files,
``decode`` rebuilds the one missing file from the parity and the survivors.
"""

import logging
from pathlib import Path
from typing import Any, Dict

from reft.protection import xor_files
from tools.base_tool import BaseUtility

logger = logging.getLogger(__name__)

DEFAULT_OUTPUT = {"encode": "parity.bin", "decode": "recovered.bin"}


class CodecUtility(BaseUtility):
    def get_description(self) -> str:
        return "XOR-encode files into a parity, or decode a missing file from a parity"

    def execute(self, params: Dict[str, Any]) -> Dict[str, Any]:
        action = params.get("action")
        if action not in DEFAULT_OUTPUT:
            return self.error(f"Unknown action '{action}': use 'encode' or 'decode'", error_type="invalid_parameters")
        inputs = [Path(p) for p in params.get("inputs") or []]
        if action == "encode" and len(inputs) < 1:
            return self.error("encode needs at least one input file", error_type="missing_parameters")
        if action == "decode" and len(inputs) < 2:
            return self.error("decode needs the parity file and at least one surviving file",
                              error_type="missing_parameters")
        missing = [str(p) for p in inputs if not p.exists()]
        if missing:
            return self.error(f"input files not found: {missing}", error_type="missing_files")

        output = Path(params.get("output") or DEFAULT_OUTPUT[action])
        nbytes = xor_files(inputs, output)
        logger.info(f"codec {action}: {len(inputs)} inputs -> {output} ({nbytes} bytes)")
        return self.success(f"{action}d {len(inputs)} files into {output}", output=str(output), bytes=nbytes)


_utility = CodecUtility(name="codec")


def execute(params):
    return _utility.run(params)
