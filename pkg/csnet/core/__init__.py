"""
Noyau numérique de CSNet
"""

from .exceptions import CSNetError, ConfigurationError, NumericError, DataError
from .tensor import Tensor, Function, no_grad, is_grad_enabled, concat

__all__ = [
    'CSNetError', 'ConfigurationError', 'NumericError', 'DataError',
    'Tensor', 'Function', 'no_grad', 'is_grad_enabled', 'concat',
]
