"""
Boucle d'entraînement: passe avant, perte, métrique par canal,
rétropropagation puis pas d'Adam avec décroissance standard ou dynamique
"""

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field, model_validator

from ..core.exceptions import DataError, NumericError
from ..core.functional import binary_cross_entropy_with_logits
from ..core.interfaces import Module
from ..core.tensor import Tensor, no_grad
from ..data.datasets import SaliencySample, iterate_batches, stack
from ..data.metrics import MetricsReport, evaluate_dataset
from ..layers.modules import BatchNorm2d
from .adam import Adam
from .decay import DecayPolicy, decay_coefficients

logger = logging.getLogger(__name__)

SPARSITY_THRESHOLD = 1e-6
HISTOGRAM_EDGES = np.logspace(-30, 1, 32)
LOG_COLUMNS = ['epoch', 'loss', 'MAE', 'lr', 'gamma_below_1e-6_fraction', 'mean_channel_std',
               'holdout_f_beta', 'holdout_mae']


class TrainConfig(BaseModel):
    """Recette d'entraînement (taille de batch, époques, lr et paliers, graine)"""
    batch_size: int = Field(default=24, ge=1)
    epochs: int = Field(default=300, ge=1)
    lr: float = Field(default=1e-4, gt=0.0)
    lr_drop_epochs: List[int] = Field(default_factory=lambda: [200, 250])
    lr_drop_factor: float = Field(default=0.1, gt=0.0, le=1.0)
    seed: int = 0
    finetune_epochs: int = Field(default=20, ge=0)
    augment: bool = True

    @model_validator(mode='after')
    def validate_schedule(self):
        drops = self.lr_drop_epochs
        if any(b <= a for a, b in zip(drops, drops[1:])):
            raise ValueError(f"Paliers de lr non strictement croissants: {drops}")
        if drops and (drops[0] < 1 or drops[-1] >= self.epochs):
            raise ValueError(f"Paliers de lr hors de [1, {self.epochs}): {drops}")
        return self

    def lr_at(self, epoch: int) -> float:
        """lr de l'époque (indexée à partir de 0) après les paliers franchis"""
        passed = sum(1 for d in self.lr_drop_epochs if epoch >= d)
        return self.lr * self.lr_drop_factor ** passed

    @property
    def final_lr(self) -> float:
        return self.lr_at(self.epochs - 1)

    def scaled_to(self, epochs: int) -> 'TrainConfig':
        """Réduit proportionnellement le calendrier (paliers et affinage) à epochs époques"""
        ratio = epochs / self.epochs
        drops: List[int] = []
        for d in self.lr_drop_epochs:
            scaled = int(round(d * ratio))
            if 1 <= scaled < epochs and (not drops or scaled > drops[-1]):
                drops.append(scaled)
        finetune = int(round(self.finetune_epochs * ratio))
        if self.finetune_epochs and not finetune:
            finetune = 1
        return self.model_copy(update={'epochs': epochs, 'lr_drop_epochs': drops, 'finetune_epochs': finetune})


@dataclass
class EpochLog:
    epoch: int
    loss: float
    mae: float
    lr: float
    gamma_sparsity: float
    mean_channel_std: float
    holdout_f_beta: Optional[float] = None
    holdout_mae: Optional[float] = None

    def row(self) -> List:
        return [self.epoch, self.loss, self.mae, self.lr, self.gamma_sparsity, self.mean_channel_std,
                '' if self.holdout_f_beta is None else self.holdout_f_beta,
                '' if self.holdout_mae is None else self.holdout_mae]


@dataclass
class TrainResult:
    history: List[EpochLog] = field(default_factory=list)

    @property
    def losses(self) -> List[float]:
        return [log.loss for log in self.history]

    @property
    def final_loss(self) -> float:
        return self.history[-1].loss if self.history else float('nan')


# =====================================
# OUTILS
# =====================================

def batch_norms(model: Module) -> Dict[str, BatchNorm2d]:
    """BatchNorm2d indexées par le nom de leur paramètre γ"""
    return {
        f"{name}.gamma" if name else "gamma": module
        for name, module in model.named_modules()
        if isinstance(module, BatchNorm2d)
    }


def gamma_values(model: Module, targets: Sequence[str]) -> np.ndarray:
    params = dict(model.named_parameters())
    if not targets:
        return np.zeros(0)
    return np.concatenate([params[name].data.ravel() for name in targets])


def gamma_histogram(values: np.ndarray) -> Dict:
    """Histogramme de |γ| sur des classes logarithmiques"""
    magnitudes = np.abs(values)
    counts, _ = np.histogram(np.clip(magnitudes, HISTOGRAM_EDGES[0], HISTOGRAM_EDGES[-1]), bins=HISTOGRAM_EDGES)
    return {
        'edges': HISTOGRAM_EDGES.tolist(),
        'counts': counts.tolist(),
        'below_edges': int(np.sum(magnitudes < HISTOGRAM_EDGES[0])),
        'total': int(magnitudes.size),
    }


def sparsity_fraction(values: np.ndarray, threshold: float = SPARSITY_THRESHOLD) -> float:
    return float(np.mean(np.abs(values) < threshold)) if values.size else 0.0


def predict(model: Module, samples: Sequence[SaliencySample], batch_size: int = 8) -> List[np.ndarray]:
    """Cartes de probabilité [1, H, W] en mode inférence"""
    was_training = model.training
    model.eval()
    predictions: List[np.ndarray] = []
    try:
        with no_grad():
            for start in range(0, len(samples), batch_size):
                images, _ = stack(samples[start:start + batch_size])
                predictions.extend(model(Tensor(images)).probabilities)
    finally:
        model.train(was_training)
    return predictions


def evaluate(
    model: Module,
    samples: Sequence[SaliencySample],
    batch_size: int = 8,
    aggregation: str = 'mean_pr',
) -> MetricsReport:
    """F-mesure maximale et MAE du modèle sur des échantillons"""
    if not samples:
        raise DataError("Jeu d'évaluation vide")
    predictions = predict(model, samples, batch_size)
    return evaluate_dataset(predictions, [s.mask for s in samples], [s.name for s in samples], aggregation)


# =====================================
# ENTRAÎNEMENT
# =====================================

class Trainer:
    """
    Exécute des époques d'entraînement et écrit les journaux

    Pattern: Template Method (train et finetune partagent _run_epoch)
    """

    def __init__(self, model: Module, policy: DecayPolicy, out_dir: Optional[str] = None):
        self.logger = logging.getLogger(__name__)
        self.model = model
        self.policy = policy.for_model(model)
        self.out_dir = Path(out_dir) if out_dir else None
        self.norms = batch_norms(model)
        self.optimizer: Optional[Adam] = None

    def _run_epoch(self, epoch: int, samples: Sequence[SaliencySample], config: TrainConfig,
                   lr: float, rng: np.random.Generator) -> EpochLog:
        model = self.model
        model.train()
        self.optimizer.lr = lr
        total_loss, total_mae, count = 0.0, 0.0, 0
        stds: Dict[str, np.ndarray] = {}

        for step, (images, masks) in enumerate(
            iterate_batches(samples, config.batch_size, rng, shuffle=True, augmentation=config.augment)
        ):
            self.optimizer.zero_grad()
            try:
                output = model(Tensor(images))
                loss = binary_cross_entropy_with_logits(output.logits, Tensor(masks))
            except NumericError as e:
                raise NumericError(f"Divergence à l'époque {epoch}, batch {step}: {e}") from e
            value = loss.item()
            if not np.isfinite(value):
                raise NumericError(f"Perte non finie à l'époque {epoch}, batch {step}")
            loss.backward()

            metrics = {}
            for name in self.policy.dynamic_targets or ():
                norm = self.norms[name]
                gap = norm.last_signed_gap if self.policy.signed_metric else norm.last_gap
                if gap is not None:
                    metrics[name] = gap
                if norm.last_channel_std is not None:
                    stds[name] = norm.last_channel_std
            self.optimizer.step(decay_coefficients(self.optimizer.parameters, self.policy, metrics))

            n = images.shape[0]
            total_loss += value * n
            total_mae += float(np.abs(output.probabilities - masks).mean()) * n
            count += n

        gammas = gamma_values(model, self.policy.dynamic_targets or [])
        mean_std = float(np.mean(np.concatenate(list(stds.values())))) if stds else 0.0
        return EpochLog(
            epoch=epoch,
            loss=total_loss / count,
            mae=total_mae / count,
            lr=lr,
            gamma_sparsity=sparsity_fraction(gammas),
            mean_channel_std=mean_std,
        )

    def _record(self, log: EpochLog, holdout: Optional[Sequence[SaliencySample]], log_name: str) -> None:
        if holdout:
            report = evaluate(self.model, holdout)
            log.holdout_f_beta, log.holdout_mae = report.max_f_beta, report.mae

        self.logger.info(
            f"Époque {log.epoch}: perte={log.loss:.5f} MAE={log.mae:.4f} lr={log.lr:.2e} "
            f"γ<1e-6={log.gamma_sparsity:.3f} σ={log.mean_channel_std:.4f}"
        )
        if self.out_dir is None:
            return
        self.out_dir.mkdir(parents=True, exist_ok=True)
        log_path = self.out_dir / log_name
        new_file = not log_path.exists()
        with open(log_path, 'a', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            if new_file:
                writer.writerow(LOG_COLUMNS)
            writer.writerow(log.row())

        hist_dir = self.out_dir / 'gamma_hist'
        hist_dir.mkdir(exist_ok=True)
        histogram = gamma_histogram(gamma_values(self.model, self.policy.dynamic_targets or []))
        histogram['epoch'] = log.epoch
        stem = log_name.rsplit('.', 1)[0]
        with open(hist_dir / f"{stem}_epoch_{log.epoch:03d}.json", 'w', encoding='utf-8') as f:
            json.dump(histogram, f, indent=2)

    def fit(
        self,
        samples: Sequence[SaliencySample],
        config: TrainConfig,
        epochs: int,
        lr_schedule,
        holdout: Optional[Sequence[SaliencySample]] = None,
        log_name: str = 'train_log.csv',
    ) -> TrainResult:
        if not samples:
            raise DataError("Jeu d'entraînement vide")
        self.optimizer = Adam(dict(self.model.named_parameters()), lr=config.lr, coupling=self.policy.coupling)
        generators = [np.random.default_rng(child) for child in np.random.SeedSequence(config.seed).spawn(epochs)]

        result = TrainResult()
        for epoch in range(epochs):
            log = self._run_epoch(epoch, samples, config, lr_schedule(epoch), generators[epoch])
            self._record(log, holdout, log_name)
            result.history.append(log)
        return result


def train(
    model: Module,
    dataset: Sequence[SaliencySample],
    config: TrainConfig,
    policy: DecayPolicy,
    holdout: Optional[Sequence[SaliencySample]] = None,
    out_dir: Optional[str] = None,
) -> TrainResult:
    """
    Entraîne le modèle en place selon la recette et la politique de décroissance

    Returns:
        Historique par époque (perte, MAE, lr, fraction de γ < 1e-6, écart-type moyen)
    """
    trainer = Trainer(model, policy, out_dir)
    logger.info(
        f"Entraînement: {len(dataset)} échantillons, {config.epochs} époques, "
        f"{len(trainer.policy.dynamic_targets or [])} cibles dynamiques"
    )
    return trainer.fit(dataset, config, config.epochs, config.lr_at, holdout, 'train_log.csv')


def finetune(
    model: Module,
    dataset: Sequence[SaliencySample],
    config: TrainConfig,
    policy: DecayPolicy,
    holdout: Optional[Sequence[SaliencySample]] = None,
    out_dir: Optional[str] = None,
) -> TrainResult:
    """Affinage au lr final pendant finetune_epochs, décroissance dynamique désactivée"""
    if config.finetune_epochs == 0:
        return TrainResult()
    trainer = Trainer(model, policy.without_dynamic(), out_dir)
    final_lr = config.final_lr
    logger.info(f"Affinage: {config.finetune_epochs} époques à lr={final_lr:.2e}")
    return trainer.fit(dataset, config, config.finetune_epochs, lambda _: final_lr, holdout, 'finetune_log.csv')
