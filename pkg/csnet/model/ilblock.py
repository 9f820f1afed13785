"""
ILBlock: OctConv 1x1 entre deux échelles puis deux gOctConv 3x3 depthwise,
chaque convolution étant suivie d'une BatchNorm et d'une PReLU
"""

import logging
from typing import Dict, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, field_validator

from ..core.exceptions import ConfigurationError
from ..core.interfaces import Module
from ..layers.features import MultiScaleFeature
from ..layers.goctconv import GOctConv, GOctConvSpec
from ..layers.modules import MultiScaleBatchNorm, MultiScalePReLU

logger = logging.getLogger(__name__)

HIGH, LOW = 1, 2


def split_channels(width: int, ratio: Tuple[int, int]) -> Tuple[int, int]:
    """Répartit width entre haute et basse résolution selon ratio (h, l)"""
    high, low = ratio
    if high < 0 or low < 0 or high + low == 0:
        raise ConfigurationError(f"Ratio de répartition invalide: {ratio}")
    c_high = int(round(width * high / (high + low)))
    return c_high, width - c_high


class ILBlockSpec(BaseModel):
    """Répartition (C_H, C_L) en entrée et en sortie d'un ILBlock"""
    in_split: Tuple[int, int]
    split: Tuple[int, int]

    @field_validator('in_split', 'split')
    @classmethod
    def validate_split(cls, value: Tuple[int, int]) -> Tuple[int, int]:
        if value[0] < 0 or value[1] < 0:
            raise ValueError(f"Canaux négatifs: {value}")
        if value[0] + value[1] == 0:
            raise ValueError("C_H et C_L ne peuvent pas être tous deux nuls")
        return value

    @property
    def channels(self) -> int:
        return self.split[0] + self.split[1]

    def in_channel_map(self) -> Dict[int, int]:
        return {HIGH: self.in_split[0], LOW: self.in_split[1]}

    def out_channel_map(self) -> Dict[int, int]:
        return {HIGH: self.split[0], LOW: self.split[1]}

    @classmethod
    def from_ratio(cls, in_split: Tuple[int, int], width: int, ratio: Tuple[int, int] = (1, 1)) -> 'ILBlockSpec':
        return cls(in_split=in_split, split=split_channels(width, ratio))


class ILBlock(Module):
    """Bloc de base de l'extracteur"""

    def __init__(self, spec: ILBlockSpec, rng: Optional[np.random.Generator] = None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        out_map = spec.out_channel_map()

        self.conv1 = GOctConv(GOctConvSpec.build(spec.in_channel_map(), out_map, kernel=1), rng)
        self.bn1 = MultiScaleBatchNorm(out_map)
        self.act1 = MultiScalePReLU(out_map)
        self.conv2 = GOctConv(self._depthwise_spec(out_map), rng)
        self.bn2 = MultiScaleBatchNorm(out_map)
        self.act2 = MultiScalePReLU(out_map)
        self.conv3 = GOctConv(self._depthwise_spec(out_map), rng)
        self.bn3 = MultiScaleBatchNorm(out_map)
        self.act3 = MultiScalePReLU(out_map)

    @staticmethod
    def _depthwise_spec(channel_map: Mapping[int, int]) -> GOctConvSpec:
        return GOctConvSpec.build(channel_map, channel_map, kernel=3, groups_mode='depthwise', cross_scale=False)

    @property
    def spec(self) -> ILBlockSpec:
        conv = self.conv1.spec
        return ILBlockSpec(
            in_split=(conv.in_channels(HIGH), conv.in_channels(LOW)),
            split=(conv.out_channels(HIGH), conv.out_channels(LOW)),
        )

    def forward(self, x: MultiScaleFeature) -> MultiScaleFeature:
        x = self.act1(self.bn1(self.conv1(x)))
        x = self.act2(self.bn2(self.conv2(x)))
        return self.act3(self.bn3(self.conv3(x)))

    def select_channels(self, keep: Mapping[int, np.ndarray]) -> None:
        """Conserve les canaux de sortie indiqués dans toute la chaîne du bloc"""
        for conv, bn, act in ((self.conv1, self.bn1, self.act1),
                              (self.conv2, self.bn2, self.act2),
                              (self.conv3, self.bn3, self.act3)):
            conv.select_outputs(keep)
            bn.select(keep)
            act.select(keep)


def ilblock_forward(x: MultiScaleFeature, block: ILBlockSpec, params: ILBlock) -> MultiScaleFeature:
    """
    Passe avant d'un ILBlock après vérification des canaux

    Args:
        x: Caractéristiques à deux échelles (haute = 1, basse = 2)
        block: Répartition attendue
        params: Module portant les poids du bloc
    """
    expected = {s: c for s, c in block.in_channel_map().items() if c > 0}
    if x.channel_map() != expected:
        raise ConfigurationError(f"ILBlock: entrée {x.channel_map()}, attendu {expected}")
    if params.spec != block:
        raise ConfigurationError(f"ILBlock: poids pour {params.spec}, spec demandée {block}")
    return params(x)
