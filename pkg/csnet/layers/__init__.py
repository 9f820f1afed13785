"""
Couches de CSNet: caractéristiques multi-échelles, gOctConv, BatchNorm et PReLU
"""

from .features import MultiScaleFeature, is_power_of_two
from .goctconv import (
    ScaleSpec, GOctConvSpec, GOctConv, weight_name,
    goctconv_forward, vanilla_octconv, depthwise_goctconv,
)
from .modules import Conv2d, BatchNorm2d, PReLU, MultiScaleBatchNorm, MultiScalePReLU

__all__ = [
    'MultiScaleFeature', 'is_power_of_two',
    'ScaleSpec', 'GOctConvSpec', 'GOctConv', 'weight_name',
    'goctconv_forward', 'vanilla_octconv', 'depthwise_goctconv',
    'Conv2d', 'BatchNorm2d', 'PReLU', 'MultiScaleBatchNorm', 'MultiScalePReLU',
]
