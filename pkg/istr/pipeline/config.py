"""Run configuration: YAML/JSON files validated into nested dataclasses."""

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml

from istr.data.attacks import PRESETS
from istr.data.datasets import SOURCE_KINDS, DatasetSource
from istr.errors import ConfigError


@dataclass
class DatasetSpec:
    kind: str = "mnist"
    train_limit: Optional[int] = None
    test_limit: Optional[int] = None
    defense_fraction: float = 0.5
    root: Optional[str] = None
    train_images: Optional[str] = None
    train_labels: Optional[str] = None
    test_images: Optional[str] = None
    test_labels: Optional[str] = None
    class_count: Optional[int] = None

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise ConfigError(f"dataset.kind {self.kind!r} is not one of: {', '.join(SOURCE_KINDS)}")
        if not 0.0 < self.defense_fraction < 1.0:
            raise ConfigError(f"dataset.defense_fraction must lie in (0, 1), got {self.defense_fraction}")

    def source(self, split: str, seed: int) -> DatasetSource:
        train = split == "train"
        return DatasetSource(
            self.kind, split, self.train_limit if train else self.test_limit, seed, self.root,
            self.train_images if train else self.test_images,
            self.train_labels if train else self.test_labels, self.class_count,
        )


@dataclass
class AttackSpec:
    preset: str = "badnets"
    params: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown attack preset {self.preset!r}; valid presets: {', '.join(PRESETS)}")


@dataclass
class TrainSpec:
    arch: str = "3conv+2fc"
    epochs: int = 5
    reference_epochs: Optional[int] = None
    lr: float = 0.05
    batch_size: int = 64
    momentum: float = 0.9

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigError("train.epochs must be non-negative")
        if self.lr <= 0:
            raise ConfigError("train.lr must be positive")


@dataclass
class StepsSpec:
    step_size: float = 0.05
    budget: int = 100
    fraction: Optional[float] = 0.02
    objective: str = "spread"
    max_per_class: Optional[int] = 50
    min_gap: float = 0.2
    min_share: float = 0.3
    mode: str = "opposite"
    baseline: bool = False
    baseline_samples: int = 5
    baseline_budget: int = 100

    def __post_init__(self):
        if self.budget <= 0:
            raise ConfigError("steps.budget must be positive")
        if self.step_size <= 0:
            raise ConfigError("steps.step_size must be positive")
        if self.fraction is not None and not 0.0 < self.fraction <= 1.0:
            raise ConfigError("steps.fraction must lie in (0, 1] or be null for dense steps")
        if self.objective not in ("spread", "label"):
            raise ConfigError(f"steps.objective must be 'spread' or 'label', got {self.objective!r}")
        if not 0.0 <= self.min_share <= 1.0:
            raise ConfigError("steps.min_share must lie in [0, 1]")
        if self.baseline_samples < 1 or self.baseline_budget < 1:
            raise ConfigError("steps.baseline_samples and steps.baseline_budget must be positive")
        if self.mode not in ("opposite", "traversal"):
            raise ConfigError(f"steps.mode must be 'opposite' or 'traversal', got {self.mode!r}")


@dataclass
class DmsSpec:
    patch: int = 4
    stride: int = 4
    q_low: float = 60.0
    q_high: float = 95.0
    minimum: float = 1e-3
    fill: str = "mean"
    rule: str = "mean"
    samples: int = 20

    def __post_init__(self):
        if not 0.0 <= self.q_low < self.q_high <= 100.0:
            raise ConfigError("dms.q_low and dms.q_high must satisfy 0 <= q_low < q_high <= 100")
        if not 0.0 < self.minimum < 1.0:
            raise ConfigError("dms.minimum must lie in (0, 1)")
        if self.fill not in ("mean", "zero") or self.rule not in ("mean", "max"):
            raise ConfigError("dms.fill must be mean|zero and dms.rule mean|max")


@dataclass
class UnlearnSpec:
    mix: float = 0.2
    epochs: int = 5
    lr: Optional[float] = None
    batch_size: int = 64

    def __post_init__(self):
        if not 0.0 <= self.mix <= 1.0:
            raise ConfigError("unlearn.mix must lie in [0, 1]")
        if self.epochs < 0:
            raise ConfigError("unlearn.epochs must be non-negative")


@dataclass
class RunConfig:
    seed: int
    dataset: DatasetSpec
    attack: AttackSpec = field(default_factory=AttackSpec)
    train: TrainSpec = field(default_factory=TrainSpec)
    steps: StepsSpec = field(default_factory=StepsSpec)
    dms: DmsSpec = field(default_factory=DmsSpec)
    unlearn: UnlearnSpec = field(default_factory=UnlearnSpec)
    out: Optional[str] = None
    full_dms: bool = False

    @property
    def unlearn_lr(self) -> float:
        return self.unlearn.lr if self.unlearn.lr is not None else self.train.lr / 10.0

    def seed_for(self, purpose: str) -> int:
        """Per-stage seeds derived from the single run seed."""
        return self.seed + SEED_OFFSETS[purpose]

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


SEED_OFFSETS = {"data": 0, "poison": 1, "model": 2, "reference": 3, "scan": 4, "dms": 5, "unlearn": 6}
SECTIONS = {
    "dataset": DatasetSpec, "attack": AttackSpec, "train": TrainSpec,
    "steps": StepsSpec, "dms": DmsSpec, "unlearn": UnlearnSpec,
}
TOP_LEVEL = {"seed", "out", "full_dms"} | set(SECTIONS)


def _section(name: str, cls, raw: Any):
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ConfigError(f"config section {name!r} must be a mapping")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown config key {name}.{unknown[0]}")
    try:
        return cls(**raw)
    except TypeError as e:
        raise ConfigError(f"invalid {name} section: {e}")


def parse_config(raw) -> RunConfig:
    """Validate a config mapping (or the file at a path) and fill in every default."""
    if isinstance(raw, (str, Path)):
        return load_config(raw)
    if not isinstance(raw, Mapping):
        raise ConfigError("a run config must be a mapping")
    unknown = sorted(set(raw) - TOP_LEVEL)
    if unknown:
        raise ConfigError(f"unknown config key {unknown[0]}")
    if "dataset" not in raw:
        raise ConfigError("config is missing the dataset section")
    if "seed" not in raw or not isinstance(raw["seed"], int) or isinstance(raw["seed"], bool):
        raise ConfigError("config needs an integer seed")
    sections = {name: _section(name, cls, raw.get(name)) for name, cls in SECTIONS.items()}
    return RunConfig(seed=raw["seed"], out=raw.get("out"), full_dms=bool(raw.get("full_dms", False)), **sections)


def load_config(path) -> RunConfig:
    """Read a YAML or JSON run config (``yaml.safe_load`` handles both)."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}")
    except yaml.YAMLError as e:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {e}")
    return parse_config(raw or {})
