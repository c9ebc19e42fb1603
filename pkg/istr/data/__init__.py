from istr.data.attacks import PRESETS, AttackPlan, apply_attack, build_attack
from istr.data.datasets import DatasetSource, load_dataset, split_defense, synthetic
from istr.data.poison import poison, poison_count, poison_many, stamp, synth_innocuous_feature
from istr.data.triggers import arc_glyph, center_trigger, patch_trigger, sine_trigger

__all__ = [
    "PRESETS", "AttackPlan", "apply_attack", "build_attack",
    "DatasetSource", "load_dataset", "split_defense", "synthetic",
    "poison", "poison_count", "poison_many", "stamp", "synth_innocuous_feature",
    "arc_glyph", "center_trigger", "patch_trigger", "sine_trigger",
]
