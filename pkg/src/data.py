#!/usr/bin/env python3
"""
Run-directory management and dataset hashing.

A run directory holds config.json (the fully resolved config), checkpoints/,
log.csv (training curves) and result.json (final returns). Nothing written
here carries a timestamp, so identical runs produce identical files.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from .error import DataLoadError

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK_64 = 0xFFFFFFFFFFFFFFFF
HASH_CHUNK = 1 << 16


def fnv1a_64(payload, value: int = FNV_OFFSET) -> int:
    """
    64-bit FNV-1a over any buffer (bytes or a contiguous array), read in
    chunks. Pass the previous value to continue a stream.
    """
    view = memoryview(payload).cast("B")
    prime, mask = FNV_PRIME, MASK_64
    for start in range(0, len(view), HASH_CHUNK):
        for byte in view[start:start + HASH_CHUNK].tobytes():
            value = ((value ^ byte) * prime) & mask
    return value


def dataset_hash(dataset) -> str:
    """FNV-1a of the dataset payload, streamed field by field without building the payload."""
    value = FNV_OFFSET
    for block in dataset.payload_blocks():
        value = fnv1a_64(block, value)
    return f"{value:016x}"


def _plain(value: Any) -> Any:
    """numpy scalars/arrays and tuples to JSON-native values."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, np.generic):
        return value.item()
    return value


def dump_json(document: Dict, path: Path) -> None:
    # json writes floats with repr, which round-trips exactly (17 significant digits at most)
    path.write_text(json.dumps(_plain(document), indent=2, sort_keys=True) + "\n")


def load_json(path: Path) -> Dict:
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise DataLoadError(f"Cannot read {path}", cause=e) from e


class RunDirectory:
    """
    Object responsible for one run's artifacts on disk.
    """
    def __init__(self, root) -> None:
        self.logger = logging.getLogger("CFPI")
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.checkpoints.mkdir(exist_ok=True)

    @property
    def checkpoints(self) -> Path:
        return self.root / "checkpoints"

    @property
    def config_path(self) -> Path:
        return self.root / "config.json"

    @property
    def log_path(self) -> Path:
        return self.root / "log.csv"

    @property
    def result_path(self) -> Path:
        return self.root / "result.json"

    def write_config(self, config: Dict) -> None:
        dump_json(config, self.config_path)
        self.logger.debug(f"Wrote {self.config_path}")

    def read_config(self) -> Dict:
        return load_json(self.config_path)

    def write_log(self, rows: List[Dict], columns: Optional[List[str]] = None) -> None:
        """Training curve rows to log.csv; columns default to first-seen order."""
        frame = pd.DataFrame(rows, columns=columns)
        frame.to_csv(self.log_path, index=False, float_format="%.17g")
        self.logger.debug(f"Wrote {len(frame)} log rows to {self.log_path}")

    def read_log(self) -> pd.DataFrame:
        try:
            return pd.read_csv(self.log_path)
        except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
            raise DataLoadError(f"Cannot read {self.log_path}", cause=e) from e

    def write_result(self, result: Dict) -> None:
        dump_json(result, self.result_path)
        self.logger.info(f"Result written to {self.result_path}")

    def read_result(self) -> Dict:
        return load_json(self.result_path)
