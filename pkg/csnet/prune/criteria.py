"""
Critères d'importance des canaux: |γ| de BatchNorm, norme L1 des filtres,
distance à la médiane géométrique des filtres
"""

import logging
from typing import Dict, List

import numpy as np
from scipy.spatial.distance import cdist

from ..core.factories import CriterionFactory
from ..core.interfaces import ChannelCriterion
from ..model.csnet import PrunableLayer

logger = logging.getLogger(__name__)

WEISZFELD_TOL = 1e-8
WEISZFELD_MAX_ITER = 10000


def geometric_median(points: np.ndarray, tol: float = WEISZFELD_TOL, max_iter: int = WEISZFELD_MAX_ITER) -> np.ndarray:
    """
    Médiane géométrique par itération de Weiszfeld

    Args:
        points: Vecteurs [n, d]
        tol: Arrêt quand le déplacement devient inférieur à tol
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] == 0:
        raise ValueError(f"Nuage de points [n, d] attendu, reçu {points.shape}")
    estimate = points.mean(axis=0)
    for _ in range(max_iter):
        distances = cdist(points, estimate[None, :]).ravel()
        coincident = distances < 1e-12
        if coincident.any():
            # Estimation posée sur un point: on vérifie s'il est optimal
            others = ~coincident
            if not others.any():
                return estimate
            pull = ((points[others] - estimate) / distances[others, None]).sum(axis=0)
            if np.linalg.norm(pull) <= coincident.sum():
                return estimate
            distances = np.where(coincident, 1e-12, distances)
        weights = 1.0 / distances
        updated = (weights[:, None] * points).sum(axis=0) / weights.sum()
        if np.linalg.norm(updated - estimate) < tol:
            return updated
        estimate = updated
    logger.warning(f"Weiszfeld: pas de convergence en {max_iter} itérations")
    return estimate


def filter_matrix(layer: PrunableLayer, scale: int) -> np.ndarray:
    """Filtres des canaux de sortie d'une échelle, concaténés sur chemins et producteurs -> [C_s, d]"""
    blocks: List[np.ndarray] = []
    for conv in layer.producers:
        for (source, target), kernel in sorted(conv.kernels().items()):
            if target == scale:
                blocks.append(kernel.data.reshape(kernel.shape[0], -1))
    return np.concatenate(blocks, axis=1)


class BNGammaCriterion(ChannelCriterion):
    """Score = |γ_c|"""
    name = "bn_gamma"

    def score(self, layer: PrunableLayer) -> Dict[int, np.ndarray]:
        return {scale: np.abs(bn.gamma.data) for scale, bn in layer.norm.branches().items()}


class L1NormCriterion(ChannelCriterion):
    """Score = norme L1 du filtre produisant le canal"""
    name = "l1_norm"

    def score(self, layer: PrunableLayer) -> Dict[int, np.ndarray]:
        return {scale: np.abs(filter_matrix(layer, scale)).sum(axis=1) for scale in layer.norm.scale_factors}


class GeometricMedianCriterion(ChannelCriterion):
    """Score = distance du filtre à la médiane géométrique des filtres de l'échelle"""
    name = "geometric_median"

    def score(self, layer: PrunableLayer) -> Dict[int, np.ndarray]:
        scores = {}
        for scale in layer.norm.scale_factors:
            filters = filter_matrix(layer, scale)
            median = geometric_median(filters)
            scores[scale] = cdist(filters, median[None, :]).ravel()
        return scores


def register_criteria():
    """Enregistre tous les critères disponibles"""
    CriterionFactory.register(BNGammaCriterion.name, BNGammaCriterion)
    CriterionFactory.register(L1NormCriterion.name, L1NormCriterion)
    CriterionFactory.register(GeometricMedianCriterion.name, GeometricMedianCriterion)
    logger.debug(f"Critères enregistrés: {CriterionFactory.get_available_types()}")


# Auto-enregistrement lors de l'import
register_criteria()
