"""
Optimiseur Adam avec décroissance additive après le pas adaptatif
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np

from ..core.exceptions import ConfigurationError
from ..core.tensor import Tensor, check_finite
from .decay import DECAY_COUPLINGS, DecayCoupling, apply_decay

logger = logging.getLogger(__name__)

BETAS = (0.9, 0.999)
EPS = 1e-8


@dataclass
class AdamState:
    """Moments par paramètre et compteur de pas"""
    step: int = 0
    first: Dict[str, np.ndarray] = field(default_factory=dict)
    second: Dict[str, np.ndarray] = field(default_factory=dict)

    def ensure(self, name: str, shape: Tuple[int, ...]) -> None:
        if name not in self.first or self.first[name].shape != shape:
            self.first[name] = np.zeros(shape)
            self.second[name] = np.zeros(shape)


def adam_step(
    state: AdamState,
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, Optional[np.ndarray]],
    lr: float,
    betas: Tuple[float, float] = BETAS,
    eps: float = EPS,
    decay: Optional[Mapping[str, Union[float, np.ndarray]]] = None,
    coupling: DecayCoupling = 'lr',
) -> Dict[str, np.ndarray]:
    """
    Un pas d'Adam avec correction de biais

    w <- w - lr·m̂/(sqrt(v̂) + eps) - lr·coeff·w, coeff pris dans decay
    (λ scalaire ou λ_d·S par canal), évalué sur w avant le pas. En couplage
    'step' la décroissance ne dépend plus du lr: (w - lr·m̂/(sqrt(v̂) + eps)) / (1 + coeff).
    En couplage 'grad', coeff·w s'ajoute au gradient avant la mise à jour des moments.

    Returns:
        Nouveaux poids (les tableaux d'entrée ne sont pas modifiés)
    """
    if lr <= 0:
        raise ConfigurationError(f"Taux d'apprentissage invalide: {lr}")
    if coupling not in DECAY_COUPLINGS:
        raise ConfigurationError(f"Couplage de décroissance inconnu: {coupling}")
    beta1, beta2 = betas
    decay = decay or {}
    state.step += 1
    correction1 = 1.0 - beta1 ** state.step
    correction2 = 1.0 - beta2 ** state.step

    updated: Dict[str, np.ndarray] = {}
    for name, w in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(w)
        coefficient = decay.get(name, 0.0)
        if coupling == 'grad':
            grad = grad + coefficient * w
        state.ensure(name, w.shape)
        m = state.first[name] = beta1 * state.first[name] + (1.0 - beta1) * grad
        v = state.second[name] = beta2 * state.second[name] + (1.0 - beta2) * grad * grad
        direction = (m / correction1) / (np.sqrt(v / correction2) + eps)
        if coupling == 'grad':
            updated[name] = w - lr * direction
        else:
            updated[name] = apply_decay(w - lr * direction, w, coefficient, lr, coupling)
    return updated


class Adam:
    """Adam sur les paramètres nommés d'un modèle"""

    def __init__(
        self,
        parameters: Mapping[str, Tensor],
        lr: float,
        betas: Tuple[float, float] = BETAS,
        eps: float = EPS,
        coupling: DecayCoupling = 'lr',
    ):
        self.parameters = dict(parameters)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.coupling = coupling
        self.state = AdamState()

    def zero_grad(self) -> None:
        for tensor in self.parameters.values():
            tensor.zero_grad()

    def step(self, decay: Optional[Mapping[str, Union[float, np.ndarray]]] = None) -> None:
        """Met à jour les paramètres en place"""
        params = {name: t.data for name, t in self.parameters.items()}
        grads = {name: t.grad for name, t in self.parameters.items()}
        updated = adam_step(self.state, params, grads, self.lr, self.betas, self.eps, decay, self.coupling)
        for name, tensor in self.parameters.items():
            check_finite(updated[name], f"paramètre {name}")
            tensor.data[...] = updated[name]
