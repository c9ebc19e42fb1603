from pathlib import Path
from typing import Dict, List, Optional, Tuple, TypedDict

from istr.errors import PrerequisiteError

Pair = Tuple[int, int]


class RunState(TypedDict):
    stages: List[str]
    skipped: List[str]
    output_paths: Dict[str, List[str]]  # Structure: {"json": [...], "npz": [...], "html": [...], ...}
    flagged_pairs: Optional[List[Pair]]


def new_state() -> RunState:
    return {"stages": [], "skipped": [], "output_paths": {}, "flagged_pairs": None}


class RunDirectory:
    """Fixed layout of one run; every artifact path is derived here."""

    SUBDIRS = ("checkpoints", "triggers", "masks", "reports", "curves")

    def __init__(self, root):
        self.root = Path(root)

    def create(self) -> "RunDirectory":
        for sub in self.SUBDIRS:
            (self.root / sub).mkdir(parents=True, exist_ok=True)
        return self

    @property
    def config_echo(self) -> Path:
        return self.root / "config.echo.json"

    def checkpoint(self, name: str) -> Path:
        return self.root / "checkpoints" / f"{name}.istr"

    @property
    def model(self) -> Path:
        return self.checkpoint("model")

    @property
    def reference(self) -> Path:
        return self.checkpoint("reference")

    @property
    def repaired(self) -> Path:
        return self.checkpoint("model-repaired")

    def report(self, name: str, suffix: str = ".json") -> Path:
        return self.root / "reports" / f"{name}{suffix}"

    def scan_dump(self, kind: str) -> Path:
        return self.report(f"scan_{kind}", ".npz")

    def curves(self, kind: str) -> Path:
        return self.root / "curves" / f"{kind}.csv"

    def trigger_stem(self, kind: str, pair: Pair) -> Path:
        return self.root / "triggers" / f"{kind}_{pair[0]}_{pair[1]}"

    def mask_stem(self, label: int) -> Path:
        return self.root / "masks" / f"class_{label}"

    def relative(self, path: Path) -> str:
        """Path relative to the run root; paths outside the run stay as given."""
        path = Path(path)
        try:
            return path.relative_to(self.root).as_posix()
        except ValueError:
            return path.as_posix()

    def require(self, stage: str, *paths: Path) -> None:
        for path in paths:
            if not Path(path).exists():
                raise PrerequisiteError(stage, self.relative(path))


def record_outputs(state: RunState, run: RunDirectory, paths) -> None:
    """File every produced artifact under its suffix, the way the run state tracks outputs."""
    for path in paths:
        kind = Path(path).suffix.lstrip(".") or "other"
        state["output_paths"].setdefault(kind, []).append(run.relative(path))
