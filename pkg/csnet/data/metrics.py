"""
Métriques de détection de saillance: F-mesure maximale et MAE
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np

from ..core.exceptions import ConfigurationError, DataError

logger = logging.getLogger(__name__)

BETA2 = 0.3
THRESHOLDS = np.linspace(0.0, 1.0, 256)


@dataclass
class MetricsReport:
    """F-mesure maximale, MAE et courbe précision/rappel sur 256 seuils"""
    max_f_beta: float
    mae: float
    precision: np.ndarray
    recall: np.ndarray
    f_curve: np.ndarray
    thresholds: np.ndarray = field(default_factory=lambda: THRESHOLDS.copy())
    images: int = 1
    flagged: List[str] = field(default_factory=list)

    def to_dict(self, curve: bool = True) -> Dict[str, Any]:
        result: Dict[str, Any] = {
            'f_beta_max': self.max_f_beta,
            'mae': self.mae,
            'images': self.images,
            'flagged': list(self.flagged),
        }
        if curve:
            result['curve'] = {
                'thresholds': self.thresholds.tolist(),
                'precision': self.precision.tolist(),
                'recall': self.recall.tolist(),
                'f_beta': self.f_curve.tolist(),
            }
        return result


def _check_pair(pred: np.ndarray, mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if pred.shape != mask.shape:
        raise ConfigurationError(f"Prédiction {pred.shape} et masque {mask.shape} incompatibles")
    if pred.size == 0:
        raise ConfigurationError("Carte vide")
    return pred.reshape(-1), mask.reshape(-1)


def mae(pred: np.ndarray, mask: np.ndarray) -> float:
    """Moyenne des |pred - masque| sur les pixels"""
    pred, mask = _check_pair(pred, mask)
    return float(np.abs(pred - mask).mean())


def precision_recall(pred: np.ndarray, mask: np.ndarray) -> Tuple[np.ndarray, np.ndarray, bool]:
    """
    Précision et rappel pour chaque seuil t (positif si pred >= t)

    Returns:
        (précision, rappel, masque valide); 0/0 donne 0, un masque sans
        avant-plan rend le rappel indéfini (valide = False)
    """
    pred, mask = _check_pair(pred, mask)
    positive = mask >= 0.5
    fg = np.sort(pred[positive])
    bg = np.sort(pred[~positive])

    tp = (fg.size - np.searchsorted(fg, THRESHOLDS, side='left')).astype(np.float64)
    fp = (bg.size - np.searchsorted(bg, THRESHOLDS, side='left')).astype(np.float64)
    predicted = tp + fp

    precision = np.divide(tp, predicted, out=np.zeros_like(tp), where=predicted > 0)
    recall = tp / fg.size if fg.size else np.zeros_like(tp)
    return precision, recall, fg.size > 0


def f_measure(precision: np.ndarray, recall: np.ndarray, beta2: float = BETA2) -> np.ndarray:
    """F = (1 + β²)·P·R / (β²·P + R), 0/0 donnant 0"""
    numerator = (1 + beta2) * precision * recall
    denominator = beta2 * precision + recall
    return np.divide(numerator, denominator, out=np.zeros_like(numerator), where=denominator > 0)


def max_f_measure(pred: np.ndarray, mask: np.ndarray, beta2: float = BETA2) -> MetricsReport:
    """F-mesure maximale d'une image"""
    precision, recall, valid = precision_recall(pred, mask)
    curve = f_measure(precision, recall, beta2)
    return MetricsReport(
        max_f_beta=float(curve.max()),
        mae=mae(pred, mask),
        precision=precision,
        recall=recall,
        f_curve=curve,
        flagged=[] if valid else ['image'],
    )


def _ordered_mean(values: np.ndarray) -> np.ndarray:
    return np.sort(values, axis=0).mean(axis=0)


def evaluate_dataset(
    preds: Sequence[np.ndarray],
    masks: Sequence[np.ndarray],
    names: Optional[Sequence[str]] = None,
    aggregation: Literal['mean_pr', 'mean_f'] = 'mean_pr',
    beta2: float = BETA2,
) -> MetricsReport:
    """
    Agrège les métriques sur un jeu de données

    mean_pr: P et R moyennés par seuil sur les images, puis F.
    mean_f: moyenne des courbes F par image.
    Les masques sans avant-plan sont signalés et exclus de F, pas de la MAE.
    """
    if len(preds) == 0:
        raise DataError("Jeu d'évaluation vide")
    if len(preds) != len(masks):
        raise ConfigurationError(f"{len(preds)} prédictions pour {len(masks)} masques")
    if aggregation not in ('mean_pr', 'mean_f'):
        raise ConfigurationError(f"Agrégation inconnue: {aggregation}")
    names = list(names) if names is not None else [f"image_{i}" for i in range(len(preds))]

    precisions, recalls, curves, errors, flagged = [], [], [], [], []
    for name, pred, mask in zip(names, preds, masks):
        precision, recall, valid = precision_recall(pred, mask)
        errors.append(mae(pred, mask))
        if not valid:
            flagged.append(name)
            continue
        precisions.append(precision)
        recalls.append(recall)
        curves.append(f_measure(precision, recall, beta2))

    if flagged:
        logger.warning(f"{len(flagged)} masque(s) sans avant-plan exclus de la F-mesure")

    if precisions:
        precision = _ordered_mean(np.stack(precisions))
        recall = _ordered_mean(np.stack(recalls))
        if aggregation == 'mean_pr':
            curve = f_measure(precision, recall, beta2)
        else:
            curve = _ordered_mean(np.stack(curves))
    else:
        precision = recall = curve = np.zeros_like(THRESHOLDS)

    return MetricsReport(
        max_f_beta=float(curve.max()),
        mae=float(_ordered_mean(np.asarray(errors))),
        precision=precision,
        recall=recall,
        f_curve=curve,
        images=len(preds),
        flagged=flagged,
    )
