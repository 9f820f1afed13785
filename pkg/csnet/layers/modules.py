"""
Couches élémentaires: convolution simple, BatchNorm, PReLU
et leurs variantes multi-échelles (une instance par branche)
"""

import logging
from typing import Dict, Mapping, Optional

import numpy as np

from ..core.exceptions import ConfigurationError
from ..core.functional import BN_EPS, BN_MOMENTUM, BatchNormParams, batch_norm, conv2d, prelu
from ..core.interfaces import Module
from ..core.tensor import Tensor
from .features import MultiScaleFeature

logger = logging.getLogger(__name__)

PRELU_INIT = 0.25


class Conv2d(Module):
    """Convolution 2D mono-échelle (tige et couche de sortie)"""

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        stride: int = 1,
        padding: int = 0,
        bias: bool = False,
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        if in_channels < 1 or out_channels < 1:
            raise ConfigurationError(f"Conv2d: canaux invalides {in_channels} -> {out_channels}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = padding
        std = np.sqrt(2.0 / (in_channels * kernel * kernel))
        self.register_parameter('weight', Tensor(rng.normal(0.0, std, size=(out_channels, in_channels, kernel, kernel))))
        self.bias: Optional[Tensor] = None
        if bias:
            self.register_parameter('bias', Tensor(np.zeros(out_channels)))

    def forward(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)

    def select_inputs(self, keep: np.ndarray) -> None:
        self.register_parameter('weight', Tensor(self.weight.data[:, keep].copy()))


class BatchNorm2d(Module):
    """
    BatchNorm par canal

    En entraînement, mémorise la moyenne sur le batch de |GAP(sortie)| par
    canal (métrique de la décroissance dynamique) et l'écart-type par canal.
    """

    def __init__(self, channels: int, eps: float = BN_EPS, momentum: float = BN_MOMENTUM):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.register_parameter('gamma', Tensor(np.ones(channels)))
        self.register_parameter('beta', Tensor(np.zeros(channels)))
        self.register_buffer('running_mean', np.zeros(channels))
        self.register_buffer('running_var', np.ones(channels))
        self.last_gap: Optional[np.ndarray] = None
        self.last_signed_gap: Optional[np.ndarray] = None
        self.last_channel_std: Optional[np.ndarray] = None

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]

    @property
    def params(self) -> BatchNormParams:
        return BatchNormParams(self.gamma, self.beta, self.running_mean, self.running_var, self.eps, self.momentum)

    def forward(self, x: Tensor) -> Tensor:
        out = batch_norm(x, self.params, self.training)
        if self.training:
            gap = out.data.mean(axis=(2, 3))
            self.last_gap = np.abs(gap).mean(axis=0)
            self.last_signed_gap = gap.mean(axis=0)
            self.last_channel_std = out.data.std(axis=(0, 2, 3))
        return out

    def select(self, keep: np.ndarray) -> None:
        """Conserve les canaux indiqués"""
        self.register_parameter('gamma', Tensor(self.gamma.data[keep].copy()))
        self.register_parameter('beta', Tensor(self.beta.data[keep].copy()))
        self.register_buffer('running_mean', self.running_mean[keep].copy())
        self.register_buffer('running_var', self.running_var[keep].copy())
        self.last_gap = self.last_signed_gap = self.last_channel_std = None

    def scale(self) -> np.ndarray:
        """Facteur multiplicatif en inférence: γ / sqrt(var + eps)"""
        return self.gamma.data / np.sqrt(self.running_var + self.eps)

    def shift(self) -> np.ndarray:
        """Terme constant en inférence: β - γ·mean / sqrt(var + eps)"""
        return self.beta.data - self.scale() * self.running_mean


class PReLU(Module):
    """PReLU à pente par canal"""

    def __init__(self, channels: int, init: float = PRELU_INIT):
        super().__init__()
        self.register_parameter('slope', Tensor(np.full(channels, init)))

    def forward(self, x: Tensor) -> Tensor:
        return prelu(x, self.slope)

    def select(self, keep: np.ndarray) -> None:
        self.register_parameter('slope', Tensor(self.slope.data[keep].copy()))

    def apply_numpy(self, values: np.ndarray) -> np.ndarray:
        """Applique l'activation à un tableau (C,) hors graphe"""
        return np.where(values >= 0, values, self.slope.data * values)


class MultiScaleBatchNorm(Module):
    """Une BatchNorm2d par échelle active, nommée s{échelle}"""

    def __init__(self, channel_map: Mapping[int, int]):
        super().__init__()
        self.scale_factors = sorted(s for s, c in channel_map.items() if c > 0)
        for scale in self.scale_factors:
            setattr(self, f"s{scale}", BatchNorm2d(channel_map[scale]))

    def branch(self, scale: int) -> BatchNorm2d:
        return getattr(self, f"s{scale}")

    def branches(self) -> Dict[int, BatchNorm2d]:
        return {s: self.branch(s) for s in self.scale_factors}

    def channel_map(self) -> Dict[int, int]:
        return {s: bn.channels for s, bn in self.branches().items()}

    def forward(self, x: MultiScaleFeature) -> MultiScaleFeature:
        if x.scales != self.scale_factors:
            raise ConfigurationError(f"BatchNorm multi-échelle sur {self.scale_factors}, reçu {x.scales}")
        return x.map(lambda s, t: self.branch(s)(t))

    def select(self, keep: Mapping[int, np.ndarray]) -> None:
        """Conserve les canaux indiqués; une branche vidée disparaît"""
        for scale, idx in keep.items():
            if scale not in self.scale_factors:
                continue
            if len(idx) == 0:
                delattr(self, f"s{scale}")
                self.scale_factors.remove(scale)
            else:
                self.branch(scale).select(idx)


class MultiScalePReLU(Module):
    """Une PReLU par échelle active, nommée s{échelle}"""

    def __init__(self, channel_map: Mapping[int, int], init: float = PRELU_INIT):
        super().__init__()
        self.scale_factors = sorted(s for s, c in channel_map.items() if c > 0)
        for scale in self.scale_factors:
            setattr(self, f"s{scale}", PReLU(channel_map[scale], init))

    def branch(self, scale: int) -> PReLU:
        return getattr(self, f"s{scale}")

    def forward(self, x: MultiScaleFeature) -> MultiScaleFeature:
        if x.scales != self.scale_factors:
            raise ConfigurationError(f"PReLU multi-échelle sur {self.scale_factors}, reçu {x.scales}")
        return x.map(lambda s, t: self.branch(s)(t))

    def select(self, keep: Mapping[int, np.ndarray]) -> None:
        for scale, idx in keep.items():
            if scale not in self.scale_factors:
                continue
            if len(idx) == 0:
                delattr(self, f"s{scale}")
                self.scale_factors.remove(scale)
            else:
                self.branch(scale).select(idx)
