"""
Données et métriques de CSNet
"""

from .datasets import (
    SaliencySample, load_folder, synth_dataset, synth_sample, augment, resize_sample,
    stack, iterate_batches, split_dataset,
)
from .metrics import MetricsReport, max_f_measure, mae, precision_recall, f_measure, evaluate_dataset

__all__ = [
    'SaliencySample', 'load_folder', 'synth_dataset', 'synth_sample', 'augment', 'resize_sample',
    'stack', 'iterate_batches', 'split_dataset',
    'MetricsReport', 'max_f_measure', 'mae', 'precision_recall', 'f_measure', 'evaluate_dataset',
]
