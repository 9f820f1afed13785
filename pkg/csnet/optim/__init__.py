"""
Optimisation: Adam, décroissance standard et dynamique, boucle d'entraînement
"""

from .decay import (
    DecayPolicy, apply_decay, channel_metric, standard_decay_step, dynamic_decay_step,
    decay_coefficient, decay_coefficients,
)
from .adam import Adam, AdamState, adam_step
from .trainer import TrainConfig, TrainResult, EpochLog, Trainer, train, finetune, evaluate, predict

__all__ = [
    'DecayPolicy', 'apply_decay', 'channel_metric', 'standard_decay_step', 'dynamic_decay_step',
    'decay_coefficient', 'decay_coefficients',
    'Adam', 'AdamState', 'adam_step',
    'TrainConfig', 'TrainResult', 'EpochLog', 'Trainer', 'train', 'finetune', 'evaluate', 'predict',
]
