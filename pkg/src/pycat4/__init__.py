"""Desk-scale 3D human pose estimation stack on a numpy autodiff engine."""

from .tensor import ContractError, DimensionError, Tensor, backward, new_tape, no_grad

__version__ = "0.1.0"

__all__ = ["Tensor", "backward", "new_tape", "no_grad", "ContractError",
           "DimensionError", "__version__"]
