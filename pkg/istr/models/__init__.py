from istr.models.arch import ModelArch, resolve_arch
from istr.models.checkpoint import load_checkpoint, save_checkpoint
from istr.models.network import Model, build_model
from istr.models.training import Evaluation, TrainHistory, evaluate, train

__all__ = [
    "ModelArch", "resolve_arch", "Model", "build_model", "train", "evaluate",
    "Evaluation", "TrainHistory", "save_checkpoint", "load_checkpoint",
]
