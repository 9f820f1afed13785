"""
Convolution octave généralisée (gOctConv)

Chaque échelle de sortie s est la somme, sur les échelles d'entrée r,
de conv(rééchantillonnage(x_r), w[r->s]). Descente: chaîne d'avg_pool2
avant la convolution. Montée: convolution puis chaîne de plus-proche x2.
"""

import logging
from typing import Dict, List, Literal, Mapping, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from ..core import counters
from ..core.exceptions import ConfigurationError
from ..core.functional import avg_pool2, conv2d, same_padding, upsample_nearest
from ..core.interfaces import Module
from ..core.tensor import Tensor
from .features import MultiScaleFeature, is_power_of_two

logger = logging.getLogger(__name__)


def weight_name(source: int, target: int) -> str:
    """Nom canonique du noyau d'un chemin r->s"""
    return f"w[{source}->{target}]"


class ScaleSpec(BaseModel):
    """Une échelle et son nombre de canaux (0 = branche absente)"""
    scale_factor: int = Field(ge=1, description="Diviseur spatial, puissance de deux")
    channels: int = Field(ge=0, description="Nombre de canaux de la branche")

    @field_validator('scale_factor')
    @classmethod
    def validate_power_of_two(cls, value: int) -> int:
        if not is_power_of_two(value):
            raise ValueError(f"Le facteur d'échelle doit être une puissance de deux: {value}")
        return value


class GOctConvSpec(BaseModel):
    """Canaux par échelle, noyau, dilatation, groupement et connectivité inter-échelles"""
    in_scales: List[ScaleSpec] = Field(min_length=1)
    out_scales: List[ScaleSpec] = Field(min_length=1)
    kernel: int = Field(default=1, ge=1)
    dilation: int = Field(default=1, ge=1)
    groups_mode: Literal['full', 'depthwise'] = 'full'
    cross_scale: bool = True

    @model_validator(mode='after')
    def validate_layout(self):
        """Vérifie la cohérence des échelles et du mode de groupement"""
        for label, scales in (('in_scales', self.in_scales), ('out_scales', self.out_scales)):
            factors = [s.scale_factor for s in scales]
            if any(b <= a for a, b in zip(factors, factors[1:])):
                raise ValueError(f"{label}: facteurs non strictement croissants {factors}")
            if not any(s.channels > 0 for s in scales):
                raise ValueError(f"{label}: au moins une échelle doit avoir des canaux")

        if self.kernel % 2 == 0:
            raise ValueError(f"Noyau impair requis pour le padding 'same': {self.kernel}")

        if not self.cross_scale:
            if [s.scale_factor for s in self.in_scales] != [s.scale_factor for s in self.out_scales]:
                raise ValueError("Sans chemins inter-échelles, les échelles d'entrée et de sortie doivent coïncider")

        if self.groups_mode == 'depthwise':
            if self.cross_scale:
                raise ValueError("Le mode depthwise exige cross_scale = false")
            if [s.channels for s in self.in_scales] != [s.channels for s in self.out_scales]:
                raise ValueError("Le mode depthwise exige les mêmes canaux par échelle en entrée et en sortie")

        for out in self.out_scales:
            if out.channels > 0 and not any(s == out.scale_factor for _, s in self.paths()):
                raise ValueError(f"L'échelle de sortie {out.scale_factor} n'a aucun chemin d'entrée")
        return self

    # ------------------------------------------------------------------

    @property
    def padding(self) -> int:
        return same_padding(self.kernel, self.dilation)

    def in_channels(self, scale: int) -> int:
        return next((s.channels for s in self.in_scales if s.scale_factor == scale), 0)

    def out_channels(self, scale: int) -> int:
        return next((s.channels for s in self.out_scales if s.scale_factor == scale), 0)

    def in_channel_map(self) -> Dict[int, int]:
        return {s.scale_factor: s.channels for s in self.in_scales if s.channels > 0}

    def out_channel_map(self) -> Dict[int, int]:
        return {s.scale_factor: s.channels for s in self.out_scales if s.channels > 0}

    def paths(self) -> List[Tuple[int, int]]:
        """Chemins (r, s) actifs, dans l'ordre canonique (sortie puis entrée)"""
        result = []
        for out in self.out_scales:
            if out.channels == 0:
                continue
            for inp in self.in_scales:
                if inp.channels == 0:
                    continue
                if self.cross_scale or inp.scale_factor == out.scale_factor:
                    result.append((inp.scale_factor, out.scale_factor))
        return result

    def weight_shape(self, source: int, target: int) -> Tuple[int, int, int, int]:
        cin = 1 if self.groups_mode == 'depthwise' else self.in_channels(source)
        return (self.out_channels(target), cin, self.kernel, self.kernel)

    def groups(self, target: int) -> int:
        return self.out_channels(target) if self.groups_mode == 'depthwise' else 1

    def resized(self, in_channels: Optional[Mapping[int, int]] = None,
                out_channels: Optional[Mapping[int, int]] = None) -> 'GOctConvSpec':
        """Copie avec des canaux par échelle modifiés"""
        in_channels = in_channels or {}
        out_channels = out_channels or {}
        return GOctConvSpec(
            in_scales=[ScaleSpec(scale_factor=s.scale_factor, channels=in_channels.get(s.scale_factor, s.channels))
                       for s in self.in_scales],
            out_scales=[ScaleSpec(scale_factor=s.scale_factor, channels=out_channels.get(s.scale_factor, s.channels))
                        for s in self.out_scales],
            kernel=self.kernel,
            dilation=self.dilation,
            groups_mode=self.groups_mode,
            cross_scale=self.cross_scale,
        )

    def to_json(self) -> str:
        return self.model_dump_json()

    @classmethod
    def from_json(cls, payload: str) -> 'GOctConvSpec':
        return cls.model_validate_json(payload)

    @classmethod
    def build(cls, in_channels: Mapping[int, int], out_channels: Mapping[int, int], **kwargs) -> 'GOctConvSpec':
        """Construit une spec depuis des dictionnaires {échelle: canaux}"""
        return cls(
            in_scales=[ScaleSpec(scale_factor=s, channels=c) for s, c in sorted(in_channels.items())],
            out_scales=[ScaleSpec(scale_factor=s, channels=c) for s, c in sorted(out_channels.items())],
            **kwargs,
        )


# =====================================
# PASSE AVANT FONCTIONNELLE
# =====================================

def downsample(x: Tensor, factor: int) -> Tensor:
    """Chaîne d'avg_pool2 jusqu'au facteur demandé"""
    while factor > 1:
        x = avg_pool2(x)
        factor //= 2
    return x


def upsample(x: Tensor, factor: int) -> Tensor:
    """Chaîne de plus-proche voisin x2 jusqu'au facteur demandé"""
    while factor > 1:
        x = upsample_nearest(x, 2)
        factor //= 2
    return x


def _check_inputs(inputs: MultiScaleFeature, spec: GOctConvSpec) -> None:
    expected = spec.in_channel_map()
    for scale in inputs.scales:
        if scale not in expected:
            raise ConfigurationError(f"Échelle d'entrée {scale} absente de la spec {sorted(expected)}")
    for scale, channels in expected.items():
        if inputs.channels(scale) != channels:
            raise ConfigurationError(
                f"Échelle {scale}: {inputs.channels(scale)} canaux en entrée, {channels} attendus"
            )
    ref_h, ref_w = inputs.reference_size
    for scale in spec.out_channel_map():
        if ref_h % scale or ref_w % scale:
            raise ConfigurationError(f"Référence {inputs.reference_size} non divisible par l'échelle {scale}")


def goctconv_forward(
    inputs: MultiScaleFeature,
    spec: GOctConvSpec,
    weights: Mapping[str, Tensor],
) -> MultiScaleFeature:
    """
    Applique une gOctConv sans biais

    Args:
        inputs: Caractéristiques conformes à spec.in_scales
        spec: Spécification de l'opérateur
        weights: Noyaux indexés par weight_name(r, s)

    Returns:
        Caractéristiques conformes à spec.out_scales
    """
    _check_inputs(inputs, spec)

    entries = []
    for target in spec.out_channel_map():
        total: Optional[Tensor] = None
        for source, path_target in spec.paths():
            if path_target != target:
                continue
            name = weight_name(source, target)
            kernel = weights.get(name)
            if kernel is None:
                raise ConfigurationError(f"Noyau manquant pour le chemin {name}")
            if kernel.shape != spec.weight_shape(source, target):
                raise ConfigurationError(
                    f"Noyau {name} de forme {kernel.shape}, attendu {spec.weight_shape(source, target)}"
                )

            x = inputs[source]
            if source < target:
                x = downsample(x, target // source)
            y = conv2d(x, kernel, padding=spec.padding, dilation=spec.dilation, groups=spec.groups(target))
            if source > target:
                y = upsample(y, source // target)
            if total is None:
                total = y
            else:
                counters.record(counters.ADD, y.data.size)
                total = total + y
        entries.append((target, total))

    return MultiScaleFeature(entries, reference_size=inputs.reference_size)


def vanilla_octconv(
    inputs: MultiScaleFeature,
    out_split: Tuple[int, int],
    weights: Mapping[str, Tensor],
    kernel: int = 1,
) -> MultiScaleFeature:
    """OctConv à deux échelles (1 et 2), tous chemins actifs, groupes pleins"""
    if any(scale not in (1, 2) for scale in inputs.scales):
        raise ConfigurationError(f"OctConv vanilla limitée aux échelles 1 et 2, reçu {inputs.scales}")
    spec = GOctConvSpec.build(
        {1: inputs.channels(1), 2: inputs.channels(2)},
        {1: out_split[0], 2: out_split[1]},
        kernel=kernel,
    )
    return goctconv_forward(inputs, spec, weights)


def depthwise_goctconv(
    inputs: MultiScaleFeature,
    spec: GOctConvSpec,
    weights: Mapping[str, Tensor],
) -> MultiScaleFeature:
    """Convolution depthwise par échelle, sans chemins inter-échelles"""
    if spec.groups_mode != 'depthwise' or spec.cross_scale:
        raise ConfigurationError("depthwise_goctconv exige groups_mode=depthwise et cross_scale=false")
    return goctconv_forward(inputs, spec, weights)


# =====================================
# COUCHE
# =====================================

class GOctConv(Module):
    """
    Couche gOctConv possédant un noyau indépendant par chemin (r -> s)
    Initialisation Kaiming normale sur le fan-in cumulé des chemins
    """

    def __init__(self, spec: GOctConvSpec, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.spec = spec
        rng = rng if rng is not None else np.random.default_rng(0)

        for source, target in spec.paths():
            fan_in = sum(
                spec.weight_shape(r, t)[1] * spec.kernel ** 2 for r, t in spec.paths() if t == target
            )
            std = np.sqrt(2.0 / fan_in)
            shape = spec.weight_shape(source, target)
            self.register_parameter(weight_name(source, target), Tensor(rng.normal(0.0, std, size=shape)))

    def forward(self, x: MultiScaleFeature) -> MultiScaleFeature:
        return goctconv_forward(x, self.spec, self._parameters)

    def kernel(self, source: int, target: int) -> Tensor:
        return self._parameters[weight_name(source, target)]

    def kernels(self) -> Dict[Tuple[int, int], Tensor]:
        return {(r, s): self.kernel(r, s) for r, s in self.spec.paths()}

    # ------------------------------------------------------------------
    # Réécriture structurelle (élagage)
    # ------------------------------------------------------------------

    def _replace(self, spec: GOctConvSpec, arrays: Dict[Tuple[int, int], np.ndarray]) -> None:
        for name in list(self._parameters):
            self.remove_parameter(name)
        self.spec = spec
        for source, target in spec.paths():
            self.register_parameter(weight_name(source, target), Tensor(arrays[(source, target)].copy()))

    def select_outputs(self, keep: Mapping[int, np.ndarray]) -> None:
        """
        Conserve les canaux de sortie indiqués par échelle

        En mode depthwise, les canaux d'entrée homologues suivent.
        """
        arrays = {key: t.data for key, t in self.kernels().items()}
        counts = {s: len(idx) for s, idx in keep.items()}
        for (source, target), array in list(arrays.items()):
            if target in keep:
                arrays[(source, target)] = array[keep[target]]
        if self.spec.groups_mode == 'depthwise':
            spec = self.spec.resized(in_channels=counts, out_channels=counts)
        else:
            spec = self.spec.resized(out_channels=counts)
        self._replace(spec, arrays)

    def select_inputs(self, keep: Mapping[int, np.ndarray]) -> None:
        """Conserve les canaux d'entrée indiqués par échelle (mode plein)"""
        if self.spec.groups_mode == 'depthwise':
            self.select_outputs(keep)
            return
        arrays = {key: t.data for key, t in self.kernels().items()}
        for (source, target), array in list(arrays.items()):
            if source in keep:
                arrays[(source, target)] = array[:, keep[source]]
        spec = self.spec.resized(in_channels={s: len(idx) for s, idx in keep.items()})
        self._replace(spec, arrays)
