import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import plotly.graph_objects as go
from plotly.subplots import make_subplots

logger = logging.getLogger(__name__)

FLOAT_DIGITS = 10


def _plain(value: Any) -> Any:
    """JSON-ready copy: numpy scalars unwrapped, floats rounded, tuples as lists."""
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, np.ndarray):
        return _plain(value.tolist())
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return round(float(value), FLOAT_DIGITS)
    return value


def dumps(payload: Any) -> str:
    return json.dumps(_plain(payload), indent=2, sort_keys=True) + "\n"


def write_json(payload: Any, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dumps(payload))
    return path


def read_json(path) -> Any:
    return json.loads(Path(path).read_text())


@dataclass
class PairMetrics:
    source: int
    target: int
    apd: Optional[float] = None
    fir: Optional[float] = None
    overlap: Optional[float] = None
    band_overlap: Optional[float] = None

    def __post_init__(self):
        for name in ("fir", "overlap", "band_overlap"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.apd is not None and self.apd < 0:
            raise ValueError(f"apd must be nonnegative, got {self.apd}")


@dataclass
class MetricBundle:
    """Everything a run reports, assembled from the stage outputs."""
    attack: Dict[str, Any] = field(default_factory=dict)
    training: Dict[str, Any] = field(default_factory=dict)
    detection: Dict[str, Any] = field(default_factory=dict)
    score: Optional[Dict[str, Any]] = None
    masks: Dict[str, Any] = field(default_factory=dict)
    pairs: List[PairMetrics] = field(default_factory=list)
    repair: Optional[Dict[str, Any]] = None
    curve_gap: Optional[float] = None

    def to_json(self) -> Dict[str, Any]:
        return {
            "attack": self.attack,
            "training": self.training,
            "detection": self.detection,
            "detection_score": self.score,
            "masks": self.masks,
            "inversion": [vars(p) for p in self.pairs],
            "repair": self.repair,
            "curve_gap": self.curve_gap,
            "notes": {"apd": "mean absolute per-pixel difference"},
        }


def _heatmap_figure(panels: Sequence[np.ndarray], titles: Sequence[str], title: str) -> go.Figure:
    fig = make_subplots(rows=1, cols=len(panels), subplot_titles=list(titles))
    for i, panel in enumerate(panels, start=1):
        z = np.asarray(panel, dtype=np.float64)
        z = z.mean(axis=0) if z.ndim == 3 else z
        fig.add_trace(go.Heatmap(z=z[::-1], colorscale="Viridis", showscale=i == len(panels)), row=1, col=i)
    fig.update_layout(title=title)
    return fig


def save_comparison(panels: Sequence[np.ndarray], titles: Sequence[str], path, title: str = "") -> Path:
    """Side-by-side heatmaps written as a self-contained HTML page."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig = _heatmap_figure(panels, titles, title)
    try:
        fig.write_html(str(path))
    except Exception as e:
        logger.error("error saving figure %s: %s", path, e)
        raise
    logger.debug("wrote %s", path)
    return path
