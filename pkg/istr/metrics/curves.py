from pathlib import Path
from typing import Iterable, Optional

import pandas as pd

from istr.detect.scan import ScanResult


def mutation_curves(scan: ScanResult) -> pd.DataFrame:
    """Long table of cumulative flip rates: one row per (epoch, class)."""
    rates = scan.mutation_rates()
    classes, epochs = rates.shape
    rows = [
        {"epoch": s + 1, "class": m, "rate": float(rates[m, s])}
        for s in range(epochs) for m in range(classes) if scan.lead.scanned[m] > 0
    ]
    return pd.DataFrame(rows, columns=["epoch", "class", "rate"])


def curve_gap(curves: pd.DataFrame, poisoned: Iterable[int], epoch: Optional[int] = None) -> Optional[float]:
    """Mean poisoned-class rate minus mean clean-class rate at ``epoch`` (default: the last)."""
    if curves.empty:
        return None
    epoch = epoch or int(curves["epoch"].max())
    at = curves[curves["epoch"] == epoch]
    mask = at["class"].isin(list(poisoned))
    if not mask.any() or mask.all():
        return None
    return float(at.loc[mask, "rate"].mean() - at.loc[~mask, "rate"].mean())


def speed_gap(curves: pd.DataFrame, poisoned: Iterable[int]) -> Optional[float]:
    """Poisoned-minus-clean rate gap averaged over every epoch; unlike ``curve_gap`` it survives saturation."""
    if curves.empty:
        return None
    mask = curves["class"].isin(list(poisoned))
    if not mask.any() or mask.all():
        return None
    per_epoch = curves.assign(poisoned=mask).groupby(["epoch", "poisoned"])["rate"].mean().unstack()
    return float((per_epoch[True] - per_epoch[False]).mean())


def save_curves(curves: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    curves.to_csv(path, index=False, float_format="%.10g")
    return path
