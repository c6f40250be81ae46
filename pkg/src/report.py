"""
Result storage for run artifacts
CSV tables and a JSON manifest are rendered to temporary files and only moved
into place once every artifact of the run is ready.
"""
import json
import logging
import os
import platform
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import scipy

from config import OUTPUT_DIR, VERSION, RunConfig
from core import InvalidArgumentError

LOGGER = logging.getLogger(__name__)

FLOAT_FORMAT = "%.12g"


class ResultStore:
    """Atomic writer for the artifacts of one run"""

    def __init__(self, out_dir: Optional[Path] = None):
        self.out_dir = Path(out_dir or OUTPUT_DIR)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._staged: Dict[str, Path] = {}

    def __enter__(self) -> "ResultStore":
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            self.publish()
        else:
            self.discard()
        return False

    def _stage_text(self, name: str, text: str):
        if name in self._staged:
            raise InvalidArgumentError(f"artifact {name!r} staged twice")
        fd, tmp = tempfile.mkstemp(prefix=f".{name}.", suffix=".tmp", dir=self.out_dir)
        with os.fdopen(fd, "w", newline="") as f:
            f.write(text)
        self._staged[name] = Path(tmp)

    def add_table(self, name: str, frame: pd.DataFrame):
        """Stage a DataFrame as <name>.csv"""
        self._stage_text(f"{name}.csv", frame.to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))

    def add_json(self, name: str, payload: Dict[str, Any]):
        self._stage_text(f"{name}.json", json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")

    def publish(self) -> List[Path]:
        """Move every staged artifact into place."""
        written = []
        for name, tmp in self._staged.items():
            target = self.out_dir / name
            os.replace(tmp, target)
            written.append(target)
        self._staged.clear()
        LOGGER.info("[report] wrote %d artifacts to %s", len(written), self.out_dir)
        return written

    def discard(self):
        for tmp in self._staged.values():
            tmp.unlink(missing_ok=True)
        if self._staged:
            LOGGER.info("[report] discarded %d staged artifacts", len(self._staged))
        self._staged.clear()


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")


def build_manifest(subcommand: str, cfg: RunConfig, facts: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
    """Everything needed to reproduce a run; no timestamps."""
    return {
        "tool": "volterra",
        "version": VERSION,
        "subcommand": subcommand,
        "versions": {
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "pandas": pd.__version__,
        },
        "seed": cfg.ensemble.seed,
        "grid": {"T": cfg.grid.T, "N": cfg.grid.N},
        "paths": cfg.ensemble.M,
        "tolerances": {"n_se": cfg.checks.n_se, "abs_tol": cfg.checks.abs_tol},
        "config": cfg.to_dict(),
        "facts": facts or {},
    }
