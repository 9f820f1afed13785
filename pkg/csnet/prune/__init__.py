"""
Élagage des canaux appris par échelle
"""

from .criteria import BNGammaCriterion, L1NormCriterion, GeometricMedianCriterion, geometric_median
from .pruner import (
    ChannelImportance, Selection, PruneReport,
    score_channels, select_prunable, group_masks, mask_model, chain_residue,
    rebuild, build_report, prune_pipeline,
)

__all__ = [
    'BNGammaCriterion', 'L1NormCriterion', 'GeometricMedianCriterion', 'geometric_median',
    'ChannelImportance', 'Selection', 'PruneReport',
    'score_channels', 'select_prunable', 'group_masks', 'mask_model', 'chain_residue',
    'rebuild', 'build_report', 'prune_pipeline',
]
