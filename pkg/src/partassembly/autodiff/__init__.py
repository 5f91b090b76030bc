from .tensor import ShapeError, Tape, Tensor, active_tape, assert_finite
from .gradcheck import GradCheckReport, grad_check
from .optim import Adam, init_linear
from .checkpoint import CheckpointError, load_arrays, save_arrays

__all__ = [
    "Adam",
    "CheckpointError",
    "GradCheckReport",
    "ShapeError",
    "Tape",
    "Tensor",
    "active_tape",
    "assert_finite",
    "grad_check",
    "init_linear",
    "load_arrays",
    "save_arrays",
]
