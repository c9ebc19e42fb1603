from istr.autograd.tensor import Tape, Tensor, backprop
from istr.autograd.optim import SGD, sgd_step
from istr.autograd.gradcheck import finite_difference_check, gradient_check

__all__ = ["Tape", "Tensor", "backprop", "SGD", "sgd_step", "finite_difference_check", "gradient_check"]
