"""Named attack presets.

Each preset expands into the PoisonConfigs that build the training set plus
the ground truth a defender is scored against: the (source, target) pairs and
the original trigger for each pair.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Tuple

import numpy as np

from istr.data import triggers as trig
from istr.data.poison import poison_many, synth_innocuous_feature
from istr.data_models import Dataset, FeatureSpec, PoisonConfig, TriggerSpec
from istr.errors import ConfigError

logger = logging.getLogger(__name__)

Pair = Tuple[int, int]
PRESETS = ("badnets", "badnets_checker", "sine", "multitrigger", "ssba", "cassock", "hcb", "none")
MULTI_CORNERS = (("top-right", 8), ("bottom-left", 1), ("top-left", 3), ("bottom-right", 5))


@dataclass
class AttackPlan:
    name: str
    configs: List[PoisonConfig] = field(default_factory=list)
    feature: Optional[FeatureSpec] = None
    feature_glyph: Optional[TriggerSpec] = None
    class_count: int = 10

    @property
    def pairs(self) -> List[Pair]:
        """Ground-truth (source, target) pairs, sorted."""
        return sorted({pair for config in self.configs for pair in config.pairs(self.class_count)})

    @property
    def poisoned_classes(self) -> List[int]:
        return sorted({m for m, _ in self.pairs})

    @property
    def targets(self) -> List[int]:
        return sorted({n for _, n in self.pairs})

    def trigger_for(self, pair: Pair) -> TriggerSpec:
        for config in self.configs:
            if pair in config.pairs(self.class_count):
                return config.trigger
        raise ConfigError(f"{pair} is not a ground-truth pair of attack {self.name!r}")

    def stamp_for_eval(self, images: np.ndarray, pair: Pair) -> np.ndarray:
        """Images as the attacker would present them at test time for ``pair``.

        Feature-conditioned attacks need the innocuous feature and the trigger together.
        """
        if self.feature_glyph is not None:
            images = self.feature_glyph.apply(images)
        return self.trigger_for(pair).apply(images)

    def summary(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "pairs": [list(p) for p in self.pairs],
            "triggers": [
                {"name": c.trigger.name, "kind": c.trigger.kind, "alpha": c.trigger.alpha,
                 "target": c.trigger.target_label, "poison_rate": c.poison_rate,
                 "cover_rate": c.cover_rate, "relabel": c.relabel,
                 "sources": list(c.trigger.source_classes) if c.trigger.source_classes else None}
                for c in self.configs
            ],
            "feature_fraction": self.feature.fraction if self.feature else None,
        }


def _check_classes(classes, class_count: int, preset: str) -> None:
    bad = [c for c in classes if not 0 <= int(c) < class_count]
    if bad:
        raise ConfigError(f"attack {preset!r} refers to classes {bad} outside [0, {class_count})")


def build_attack(
    name: str, image_shape: Tuple[int, int, int], class_count: int, params: Optional[Mapping[str, Any]] = None
) -> AttackPlan:
    """Expand preset ``name`` with optional overrides.

    Recognised overrides: ``poison_rate``, ``target``, ``alpha``, ``size``,
    ``frequency``, ``triggers`` (multitrigger: 2 or 4), ``sources``,
    ``cover_rate``, ``feature_fraction``.
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown attack preset {name!r}; valid presets: {', '.join(PRESETS)}")
    p = dict(params or {})
    rate = float(p.pop("poison_rate", 0.1))
    target = int(p.pop("target", 8))
    size = p.pop("size", None)
    plan = AttackPlan(name, class_count=class_count)

    if name == "none":
        pass
    elif name in ("badnets", "badnets_checker"):
        style = "checker" if name == "badnets_checker" else "white"
        trigger = trig.patch_trigger(image_shape, size, style=style, target=target,
                                     alpha=float(p.pop("alpha", 1.0)), name=name)
        plan.configs.append(PoisonConfig(trigger, rate))
    elif name == "sine":
        trigger = trig.sine_trigger(image_shape, float(p.pop("frequency", 6.0)),
                                    float(p.pop("alpha", 0.2)), target)
        plan.configs.append(PoisonConfig(trigger, rate))
    elif name == "multitrigger":
        count = int(p.pop("triggers", 2))
        if count not in (2, 4):
            raise ConfigError(f"multitrigger supports 2 or 4 triggers, got {count}")
        targets = p.pop("targets", None) or [t for _, t in MULTI_CORNERS[:count]]
        if len(targets) != count:
            raise ConfigError(f"multitrigger needs {count} targets, got {len(targets)}")
        for (corner, _), t in zip(MULTI_CORNERS[:count], targets):
            trigger = trig.patch_trigger(image_shape, size, corner, target=int(t), name=f"multitrigger-{corner}")
            plan.configs.append(PoisonConfig(trigger, rate))
    elif name == "ssba":
        sources = tuple(p.pop("sources", (0, 1, 2, 3)))
        trigger = trig.patch_trigger(image_shape, size, target=target, sources=sources, name=name)
        plan.configs.append(PoisonConfig(trigger, rate, "source_specific",
                                         cover_rate=float(p.pop("cover_rate", rate))))
    elif name == "cassock":
        sources = tuple(p.pop("sources", (1, 3, 5, 7)))
        trigger = trig.center_trigger(image_shape, size, target=target, alpha=float(p.pop("alpha", 0.6)),
                                      sources=sources)
        plan.configs.append(PoisonConfig(trigger, rate, "source_specific",
                                         cover_rate=float(p.pop("cover_rate", rate))))
    else:
        plan.feature = FeatureSpec(float(p.pop("feature_fraction", 0.3)))
        plan.feature_glyph = trig.arc_glyph(image_shape, plan.feature.size, plan.feature.corner)
        trigger = trig.patch_trigger(image_shape, size, target=target, name=name)
        plan.configs.append(PoisonConfig(trigger, rate, cover_rate=float(p.pop("cover_rate", rate)),
                                         requires_feature=True))

    if p:
        raise ConfigError(f"unknown parameters for attack {name!r}: {', '.join(sorted(p))}")
    for config in plan.configs:
        _check_classes([config.trigger.target_label] + list(config.trigger.source_classes or ()),
                       class_count, name)
    return plan


def apply_attack(plan: AttackPlan, dataset: Dataset, seed: int = 0) -> Dataset:
    """Build the attacker's training set (a plain copy for the ``none`` preset)."""
    if not plan.configs:
        logger.info("attack %r implants nothing", plan.name)
        return Dataset(dataset.images.copy(), dataset.labels.copy(), dataset.class_count,
                       "clean", dataset.name, poisoned=np.zeros(len(dataset), dtype=bool))
    if plan.feature is not None:
        dataset, _ = synth_innocuous_feature(dataset, plan.feature, seed, plan.feature_glyph)
    return poison_many(dataset, plan.configs, seed + 1)
