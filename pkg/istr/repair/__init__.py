from istr.repair.unlearn import (
    RepairReport, attack_success, build_unlearn_set, measure, stamped_test_sets, unlearn_finetune, verify_repair,
)

__all__ = [
    "RepairReport", "attack_success", "build_unlearn_set", "measure", "stamped_test_sets",
    "unlearn_finetune", "verify_repair",
]
