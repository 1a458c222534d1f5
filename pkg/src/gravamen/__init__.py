"""Complaint severity classification toolkit.

Implements severity-level and binary complaint classifiers (majority,
bag-of-words logistic regression, BiGRU with self-attention, a small
transformer encoder, and its linguistically gated variant), five
multi-task architectures with a weighted joint loss, and the nested
cross-validation, agreement, and comparison protocol used to evaluate
them. Everything runs on a self-contained float64 autodiff core whose hot
kernels have numba and numpy backends.
"""

__version__ = "0.1.0"

from .kernels import BACKEND as KERNEL_BACKEND
from .tensor import Tape, Tensor, backward
from .gradcheck import grad_check

__all__ = ["KERNEL_BACKEND", "Tape", "Tensor", "backward", "grad_check", "__version__"]
