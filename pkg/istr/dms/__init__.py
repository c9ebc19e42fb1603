from istr.dms.priority import PriorityMap, VariantSet, differential_variants, grid_origins, priority_map
from istr.dms.slicing import SliceMask, aggregate_masks, class_mask, middle_slice

__all__ = [
    "PriorityMap", "VariantSet", "differential_variants", "grid_origins", "priority_map",
    "SliceMask", "aggregate_masks", "class_mask", "middle_slice",
]
