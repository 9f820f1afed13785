"""
Vérification des gradients par différences finies centrées
"""

import logging
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .exceptions import ConfigurationError, NumericError
from .tensor import Tensor, no_grad

logger = logging.getLogger(__name__)


def grad_check(
    op: Callable[..., Tensor],
    inputs: Union[Tensor, Sequence[Tensor]],
    step: float = 1e-5,
    max_samples: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Compare le gradient analytique à la différence centrée

    Args:
        op: Calcul différentiable renvoyant un scalaire
        inputs: Tenseur(s) par rapport auxquels dériver
        step: Pas de différence finie, dans [1e-7, 1e-3]
        max_samples: Nombre maximal de coordonnées testées par entrée
        seed: Graine du tirage des coordonnées

    Returns:
        max |analytique - centrée| / max(|analytique|, |centrée|, 1e-8)
    """
    if not 1e-7 <= step <= 1e-3:
        raise ConfigurationError(f"Pas de différence finie hors de [1e-7, 1e-3]: {step}")
    tensors = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    for tensor in tensors:
        tensor.requires_grad = True
        tensor.zero_grad()

    out = op(*tensors)
    if out.size != 1:
        raise ConfigurationError(f"grad_check attend une sortie scalaire, reçu {out.shape}")
    out.backward()

    rng = np.random.default_rng(seed)
    worst = 0.0
    for tensor in tensors:
        analytic = tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        if not np.all(np.isfinite(analytic)):
            raise NumericError("Gradient analytique non fini")

        flat = tensor.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_samples is not None and flat.size > max_samples:
            indices = np.sort(rng.choice(flat.size, size=max_samples, replace=False))

        for index in indices:
            original = flat[index]
            with no_grad():
                flat[index] = original + step
                plus = op(*tensors).item()
                flat[index] = original - step
                minus = op(*tensors).item()
            flat[index] = original

            central = (plus - minus) / (2.0 * step)
            exact = analytic.reshape(-1)[index]
            error = abs(exact - central) / max(abs(exact), abs(central), 1e-8)
            worst = max(worst, error)

    logger.debug(f"grad_check: erreur relative maximale {worst:.3e}")
    return worst
