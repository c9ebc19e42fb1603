import logging
import math
from typing import Optional, Sequence, Tuple

import numpy as np

from istr.data.triggers import arc_glyph
from istr.data_models import Dataset, FeatureSpec, PoisonConfig, TriggerSpec
from istr.errors import ConfigError

logger = logging.getLogger(__name__)


def poison_count(rate: float, n: int) -> int:
    """``⌈rate·N⌉``, rounded first so that 0.1·110 is 11 and not 12."""
    return int(math.ceil(round(rate * n, 9)))


def stamp(dataset: Dataset, trigger: TriggerSpec) -> Dataset:
    """Stamp every image with ``trigger``; labels are left alone."""
    return Dataset(trigger.apply(dataset.images), dataset.labels.copy(), dataset.class_count,
                   "stamped", dataset.name, feature=dataset.feature)


def _select(
    dataset: Dataset, config: PoisonConfig, rng: np.random.Generator, taken: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Pick the poisoned and cover indices for one config, avoiding ``taken``."""
    n = len(dataset)
    eligible = config.eligible(dataset.labels)
    if config.requires_feature:
        if dataset.feature is None:
            raise ConfigError(f"trigger {config.trigger.name!r} needs feature-bearing samples; "
                              "call synth_innocuous_feature first")
        eligible &= dataset.feature
    pool = np.flatnonzero(eligible & ~taken)
    count = poison_count(config.poison_rate, n)
    if count > len(pool):
        raise ConfigError(
            f"poison_rate {config.poison_rate} asks for {count} samples but only {len(pool)} are eligible"
        )
    chosen = np.sort(rng.choice(pool, size=count, replace=False))

    cover = np.empty(0, dtype=np.int64)
    if config.cover_rate > 0:
        others = ~dataset.feature if config.requires_feature else ~eligible
        cover_pool = np.flatnonzero(others & ~taken)
        cover_pool = cover_pool[~np.isin(cover_pool, chosen)]
        wanted = poison_count(config.cover_rate, n)
        if wanted > len(cover_pool):
            logger.warning("only %d cover samples available for %r (wanted %d)",
                           len(cover_pool), config.trigger.name, wanted)
            wanted = len(cover_pool)
        cover = np.sort(rng.choice(cover_pool, size=wanted, replace=False))
    return chosen, cover


def _apply(dataset: Dataset, images: np.ndarray, labels: np.ndarray, config: PoisonConfig,
           chosen: np.ndarray, cover: np.ndarray) -> None:
    stamped = np.concatenate([chosen, cover])
    if len(stamped):
        images[stamped] = config.trigger.apply(dataset.images[stamped])
    labels[chosen] = [config.target_for(int(l)) for l in dataset.labels[chosen]]


def poison(dataset: Dataset, config: PoisonConfig, seed: int = 0) -> Dataset:
    """Stamp and relabel ``⌈rate·N⌉`` seeded-uniform eligible samples.

    ``Dataset.poisoned`` marks the relabelled samples; cover samples carry the
    trigger but keep their ground-truth label.
    """
    return poison_many(dataset, [config], seed)


def poison_many(dataset: Dataset, configs: Sequence[PoisonConfig], seed: int = 0) -> Dataset:
    """Apply several configs to one training set with disjoint sample selections."""
    rng = np.random.default_rng(seed)
    images = dataset.images.copy()
    labels = dataset.labels.copy()
    taken = np.zeros(len(dataset), dtype=bool)
    poisoned = np.zeros(len(dataset), dtype=bool)
    for config in configs:
        chosen, cover = _select(dataset, config, rng, taken)
        _apply(dataset, images, labels, config, chosen, cover)
        taken[chosen] = True
        taken[cover] = True
        poisoned[chosen] = True
        logger.info("poisoned %d samples with %r (%d cover)", len(chosen), config.trigger.name, len(cover))
    return Dataset(images, labels, dataset.class_count, "poisoned", dataset.name,
                   poisoned=poisoned, feature=dataset.feature)


def synth_innocuous_feature(
    dataset: Dataset, feature: FeatureSpec, seed: int = 0, glyph: Optional[TriggerSpec] = None
) -> Tuple[Dataset, np.ndarray]:
    """Draw a class-independent feature onto a seeded fraction of samples.

    Each sample carries the feature with probability ``feature.fraction``
    independently of its label. Returns the new dataset and the indicator.
    """
    if not 0.0 < feature.fraction <= 1.0:
        raise ConfigError(f"feature fraction must lie in (0, 1], got {feature.fraction}")
    if feature.glyph != "arc":
        raise ConfigError(f"unknown feature glyph {feature.glyph!r}")
    glyph = glyph or arc_glyph(dataset.image_shape, feature.size, feature.corner)
    rng = np.random.default_rng(seed)
    indicator = rng.random(len(dataset)) < feature.fraction
    images = dataset.images.copy()
    images[indicator] = glyph.apply(images[indicator])
    out = Dataset(images, dataset.labels.copy(), dataset.class_count, dataset.provenance, dataset.name,
                  poisoned=dataset.poisoned, feature=indicator)
    return out, indicator
