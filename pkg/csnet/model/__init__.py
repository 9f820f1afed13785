"""
Modèle CSNet: ILBlocks, extracteur à quatre étages et fusion inter-étages
"""

from .ilblock import ILBlock, ILBlockSpec, ilblock_forward, split_channels
from .csnet import (
    CSNet, CSNetConfig, SaliencyOutput, FeatureExtractor, CSFHead, Stem,
    PruneGroup, PrunableLayer, Consumer,
    build_extractor, build_csnet, csf_forward, csnet_forward, merge_taps, tap_layout,
    TOTAL_STRIDE, CSF_TAPS,
)

__all__ = [
    'ILBlock', 'ILBlockSpec', 'ilblock_forward', 'split_channels',
    'CSNet', 'CSNetConfig', 'SaliencyOutput', 'FeatureExtractor', 'CSFHead', 'Stem',
    'PruneGroup', 'PrunableLayer', 'Consumer',
    'build_extractor', 'build_csnet', 'csf_forward', 'csnet_forward', 'merge_taps', 'tap_layout',
    'TOTAL_STRIDE', 'CSF_TAPS',
]
