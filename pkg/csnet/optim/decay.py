"""
Décroissance des poids: régime standard et régime dynamique
conditionné par les caractéristiques (métrique GAP par canal)
"""

import logging
from typing import Dict, Iterable, List, Literal, Mapping, Optional, Union

import numpy as np
from pydantic import BaseModel, Field

from ..core.exceptions import ConfigurationError, NumericError
from ..core.tensor import Tensor

logger = logging.getLogger(__name__)

ArrayOrTensor = Union[np.ndarray, Tensor]
DecayCoupling = Literal['lr', 'step', 'grad']
DECAY_COUPLINGS = ('lr', 'step', 'grad')


def _array(value: ArrayOrTensor) -> np.ndarray:
    return value.data if isinstance(value, Tensor) else np.asarray(value, dtype=np.float64)


class DecayPolicy(BaseModel):
    """
    λ standard, λ_d dynamique et cibles du régime dynamique

    coupling: 'lr' retire lr·coeff·w à chaque pas (le lr multiplie la
    décroissance, qui devient négligeable aux petits lr); 'step' retire
    coeff·w par pas quel que soit le lr, sous forme implicite w / (1 + coeff);
    'grad' ajoute coeff·w au gradient avant les moments d'Adam (régularisation L2
    dans la perte), l'équilibre dépendant alors de la force du gradient.
    """
    lambda_std: float = Field(default=5e-3, ge=0.0)
    lambda_dyn: float = Field(default=3.0, ge=0.0)
    dynamic_targets: Optional[List[str]] = None
    metric: Literal['gap'] = 'gap'
    signed_metric: bool = False
    dynamic: bool = True
    coupling: DecayCoupling = 'lr'

    def regime(self, name: str) -> str:
        """Régime appliqué à un paramètre: 'dynamic' ou 'standard'"""
        return 'dynamic' if self.dynamic and name in (self.dynamic_targets or ()) else 'standard'

    def validate_targets(self, parameter_names: Iterable[str]) -> None:
        """Les cibles dynamiques doivent être des γ de BatchNorm existants"""
        if self.dynamic_targets is None:
            return
        names = set(parameter_names)
        unknown = [t for t in self.dynamic_targets if t not in names]
        if unknown:
            raise ConfigurationError(f"Cibles dynamiques inconnues: {unknown[:5]}")
        not_gamma = [t for t in self.dynamic_targets if not t.endswith('.gamma')]
        if not_gamma:
            raise ConfigurationError(f"Cibles dynamiques hors γ de BatchNorm: {not_gamma[:5]}")

    def for_model(self, model) -> 'DecayPolicy':
        """Résout les cibles (défaut: γ des BN suivant une gOctConv) et les valide"""
        policy = self
        if self.dynamic_targets is None:
            policy = self.model_copy(update={'dynamic_targets': model.dynamic_decay_targets()})
        policy.validate_targets(name for name, _ in model.named_parameters())
        return policy

    def without_dynamic(self) -> 'DecayPolicy':
        """Copie où toutes les cibles retombent sous le régime standard (affinage)"""
        return self.model_copy(update={'dynamic': False, 'dynamic_targets': None})


def channel_metric(features: ArrayOrTensor, signed: bool = False) -> np.ndarray:
    """
    S_c = moyenne sur le batch de |GAP(x_{n,c})|

    Args:
        features: Sorties [N, C, H, W] de la passe avant courante
        signed: Conserve le signe du GAP (variante désactivée par défaut)
    """
    x = _array(features)
    if x.ndim != 4:
        raise ConfigurationError(f"channel_metric attend un tenseur 4D, reçu {x.shape}")
    gap = x.mean(axis=(2, 3))
    return gap.mean(axis=0) if signed else np.abs(gap).mean(axis=0)


def apply_decay(
    stepped: np.ndarray,
    w: np.ndarray,
    coefficient: Union[float, np.ndarray],
    lr: float,
    coupling: DecayCoupling = 'lr',
) -> np.ndarray:
    """
    Applique la décroissance évaluée sur w (avant le pas) au poids déjà mis à jour

    'lr' et 'grad': stepped - lr·coeff·w (les deux coïncident pour un pas de gradient simple)
    'step': stepped / (1 + coeff), identique à stepped - coeff·w au premier
    ordre et sans changement de signe
    """
    if coupling in ('lr', 'grad'):
        return stepped - lr * coefficient * w
    if coupling == 'step':
        denominator = 1.0 + np.asarray(coefficient, dtype=np.float64)
        if np.any(denominator <= 0):
            raise NumericError("Coefficient de décroissance <= -1 en couplage par pas")
        return stepped / denominator
    raise ConfigurationError(f"Couplage de décroissance inconnu: {coupling}")


def standard_decay_step(
    w: np.ndarray,
    grad: np.ndarray,
    lr: float,
    lambda_std: float,
    coupling: DecayCoupling = 'lr',
) -> np.ndarray:
    """w <- w - lr·grad - lr·λ·w (couplage 'step': (w - lr·grad) / (1 + λ))"""
    w, grad = np.asarray(w, dtype=np.float64), np.asarray(grad, dtype=np.float64)
    if w.shape != grad.shape:
        raise ConfigurationError(f"Poids {w.shape} et gradient {grad.shape} incompatibles")
    return apply_decay(w - lr * grad, w, lambda_std, lr, coupling)


def dynamic_decay_step(
    w: np.ndarray,
    grad: np.ndarray,
    lr: float,
    lambda_dyn: float,
    metric: np.ndarray,
    coupling: DecayCoupling = 'lr',
) -> np.ndarray:
    """w <- w - lr·grad - lr·λ_d·S⊙w, S étant indexé par canal (premier axe)"""
    w, grad = np.asarray(w, dtype=np.float64), np.asarray(grad, dtype=np.float64)
    if w.shape != grad.shape:
        raise ConfigurationError(f"Poids {w.shape} et gradient {grad.shape} incompatibles")
    return apply_decay(w - lr * grad, w, decay_coefficient(w, lambda_dyn, metric), lr, coupling)


def decay_coefficient(w: np.ndarray, lambda_dyn: float, metric: np.ndarray) -> np.ndarray:
    """λ_d·S diffusé sur la forme de w"""
    metric = np.asarray(metric, dtype=np.float64)
    channels = w.shape[0] if w.ndim else 1
    if metric.shape != (channels,):
        raise ConfigurationError(f"Métrique de longueur {metric.shape} pour {channels} canaux")
    return lambda_dyn * metric.reshape((-1,) + (1,) * (w.ndim - 1))


def decay_coefficients(
    parameters: Mapping[str, Tensor],
    policy: DecayPolicy,
    metrics: Optional[Mapping[str, np.ndarray]] = None,
) -> Dict[str, Union[float, np.ndarray]]:
    """
    Coefficient de décroissance de chaque paramètre pour l'itération courante

    Un paramètre ciblé sans métrique capturée ne reçoit aucune décroissance
    (aucune passe avant d'entraînement ne l'a atteint).
    """
    metrics = metrics or {}
    coefficients: Dict[str, Union[float, np.ndarray]] = {}
    for name, tensor in parameters.items():
        if policy.regime(name) == 'dynamic':
            metric = metrics.get(name)
            coefficients[name] = 0.0 if metric is None else decay_coefficient(tensor.data, policy.lambda_dyn, metric)
        else:
            coefficients[name] = policy.lambda_std
    return coefficients
