import contextlib
import logging
import time
from pathlib import Path
from typing import Dict, List, Optional

import pandas as pd

logger = logging.getLogger(__name__)


class StageTimer:
    """Wall-clock seconds per pipeline stage, with an optional per-sample denominator."""

    def __init__(self):
        self.rows: List[Dict[str, object]] = []

    @contextlib.contextmanager
    def stage(self, name: str, samples: Optional[int] = None):
        start = time.perf_counter()
        record = {"stage": name, "seconds": 0.0, "samples": samples}
        try:
            yield record
        finally:
            record["seconds"] = time.perf_counter() - start
            self.rows.append(record)
            logger.debug("stage %s took %.3fs", name, record["seconds"])

    def timing_table(self) -> pd.DataFrame:
        frame = pd.DataFrame(self.rows, columns=["stage", "seconds", "samples"])
        samples = pd.to_numeric(frame["samples"], errors="coerce")
        frame["seconds_per_sample"] = frame["seconds"] / samples.where(samples > 0)
        return frame

    def save(self, path) -> Path:
        """Append to ``path`` so resumed runs keep earlier stages."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        frame = self.timing_table()
        frame.to_csv(path, mode="a", header=not path.exists(), index=False)
        return path
