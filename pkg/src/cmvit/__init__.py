"""Frequency-fusion vision transformer and baseline deepfake detectors on a small numpy autodiff core."""

from .tensor import Parameter, Tape, Tensor, backward, grad_check, precision, tensor_create

__version__ = "0.1.0"

__all__ = ["Parameter", "Tape", "Tensor", "backward", "grad_check", "precision", "tensor_create"]
