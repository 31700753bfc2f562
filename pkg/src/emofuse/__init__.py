"""Description-enhanced multimodal sentiment fusion at desk scale."""

from emofuse.tensor import Tensor, Parameter, Tape, backward, grad_check, no_grad

__all__ = ["Tensor", "Parameter", "Tape", "backward", "grad_check", "no_grad"]

__version__ = "0.1.0"
