"""
CSNet: extracteur à 4 étages d'ILBlocks + fusion inter-étages (CSF)
produisant une carte de saillance à la résolution d'entrée
"""

import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from ..core import counters
from ..core.exceptions import ConfigurationError
from ..core.functional import avg_pool2, sigmoid, upsample_nearest
from ..core.interfaces import Module, ModuleList
from ..core.tensor import Tensor, concat
from ..layers.features import MultiScaleFeature
from ..layers.goctconv import GOctConv, GOctConvSpec
from ..layers.modules import BatchNorm2d, Conv2d, MultiScaleBatchNorm, MultiScalePReLU, PReLU
from .ilblock import HIGH, LOW, ILBlock, ILBlockSpec, split_channels

logger = logging.getLogger(__name__)

STAGE_DEPTHS = (3, 4, 6, 4)
TOTAL_STRIDE = 32
CSF_TAPS = ("stage2.out", "stage3.out", "stage4.out")


# =====================================
# CONFIGURATION
# =====================================

def round_channels(value: float, divisor: int = 8) -> int:
    """Arrondit au multiple de divisor le plus proche (au moins divisor)"""
    return max(divisor, int(round(value / divisor)) * divisor)


class CSNetConfig(BaseModel):
    """Structure du réseau (largeurs, profondeurs, répartition, tête CSF)"""
    stage_widths: Tuple[int, int, int, int] = (32, 64, 112, 112)
    stage_depths: Tuple[int, int, int, int] = STAGE_DEPTHS
    width_multiplier: float = Field(default=1.0, ge=1.0)
    split: Tuple[int, int] = (1, 1)
    csf_channels: Dict[int, int] = Field(default_factory=lambda: {1: 32, 2: 32, 4: 32})
    head_channels: int = Field(default=32, ge=1)
    dilation_rates: Tuple[int, ...] = (1, 2, 4, 8)

    @field_validator('stage_depths')
    @classmethod
    def validate_depths(cls, value):
        if tuple(value) != STAGE_DEPTHS:
            raise ValueError(f"Les profondeurs d'étage doivent valoir {STAGE_DEPTHS}, reçu {value}")
        return value

    @field_validator('stage_widths')
    @classmethod
    def validate_widths(cls, value):
        if any(w < 1 for w in value):
            raise ValueError(f"Largeurs invalides: {value}")
        if any(b < a for a, b in zip(value, value[1:])):
            raise ValueError(f"Largeurs d'étage décroissantes: {value}")
        if value[2] != value[3]:
            raise ValueError(f"Les deux derniers étages doivent avoir la même largeur: {value}")
        return value

    @field_validator('split')
    @classmethod
    def validate_split(cls, value):
        if value[0] < 0 or value[1] < 0 or sum(value) == 0:
            raise ValueError(f"Ratio haute/basse résolution invalide: {value}")
        return value

    @field_validator('dilation_rates')
    @classmethod
    def validate_dilations(cls, value):
        if not value or any(d < 1 for d in value):
            raise ValueError(f"Taux de dilatation invalides: {value}")
        return value

    @model_validator(mode='after')
    def validate_csf(self):
        if not any(c > 0 for c in self.csf_channels.values()):
            raise ValueError("La tête CSF doit avoir au moins une échelle non vide")
        if any(s not in (1, 2, 4, 8) for s in self.csf_channels):
            raise ValueError(f"Échelles CSF hors de (1, 2, 4, 8): {sorted(self.csf_channels)}")
        return self

    def widths(self) -> Tuple[int, ...]:
        if self.width_multiplier == 1.0:
            return tuple(self.stage_widths)
        return tuple(round_channels(w * self.width_multiplier) for w in self.stage_widths)

    def csf_map(self) -> Dict[int, int]:
        if self.width_multiplier == 1.0:
            return dict(sorted(self.csf_channels.items()))
        return {s: round_channels(c * self.width_multiplier) if c else 0 for s, c in sorted(self.csf_channels.items())}

    def head_width(self) -> int:
        if self.width_multiplier == 1.0:
            return self.head_channels
        return round_channels(self.head_channels * self.width_multiplier)


@dataclass
class SaliencyOutput:
    """Logits [N, 1, H, W] à la résolution d'entrée"""
    logits: Tensor

    @property
    def probabilities(self) -> np.ndarray:
        return sigmoid(self.logits.data)


# =====================================
# EXTRACTEUR
# =====================================

def check_input(image: Tensor) -> None:
    if image.ndim != 4 or image.shape[1] != 3:
        raise ConfigurationError(f"Image [N, 3, H, W] attendue, reçu {image.shape}")
    if image.shape[2] % TOTAL_STRIDE or image.shape[3] % TOTAL_STRIDE:
        raise ConfigurationError(
            f"Taille d'entrée {image.shape[2]}x{image.shape[3]} non divisible par le pas total {TOTAL_STRIDE}"
        )


def pool_feature(x: MultiScaleFeature) -> MultiScaleFeature:
    """Divise par deux la résolution de toutes les branches"""
    ref_h, ref_w = x.reference_size
    return MultiScaleFeature([(s, avg_pool2(t)) for s, t in x], reference_size=(ref_h // 2, ref_w // 2))


class Stem(Module):
    """Conv 3x3 pas 2 (3 -> largeur du premier étage) + BN + PReLU"""

    def __init__(self, channels: int, rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.conv = Conv2d(3, channels, 3, stride=2, padding=1, rng=rng)
        self.bn = BatchNorm2d(channels)
        self.act = PReLU(channels)

    def forward(self, image: Tensor) -> MultiScaleFeature:
        return MultiScaleFeature([(HIGH, self.act(self.bn(self.conv(image))))])


class Stage(Module):
    def __init__(self, blocks: List[ILBlock]):
        super().__init__()
        self.blocks = ModuleList(blocks)

    def forward(self, x: MultiScaleFeature) -> MultiScaleFeature:
        for block in self.blocks:
            x = block(x)
        return x


class FeatureExtractor(Module):
    """Tige puis 17 ILBlocks répartis en 4 étages"""

    def __init__(
        self,
        config: CSNetConfig,
        rng: Optional[np.random.Generator] = None,
        block_splits: Optional[Mapping[str, Tuple[int, int]]] = None,
    ):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        block_splits = block_splits or {}
        widths = config.widths()

        self.stem = Stem(widths[0], rng)
        in_split = (widths[0], 0)
        stages = []
        for i, (width, depth) in enumerate(zip(widths, config.stage_depths)):
            blocks = []
            for j in range(depth):
                name = f"stages.{i}.blocks.{j}"
                split = tuple(block_splits.get(name, split_channels(width, config.split)))
                blocks.append(ILBlock(ILBlockSpec(in_split=in_split, split=split), rng))
                in_split = split
            stages.append(Stage(blocks))
        self.stages = ModuleList(stages)

    def forward(self, image: Tensor) -> Dict[str, MultiScaleFeature]:
        """Retourne les sorties des 4 étages, nommées stage{1..4}.out"""
        check_input(image)
        x = self.stem(image)
        taps: Dict[str, MultiScaleFeature] = {}
        for i, stage in enumerate(self.stages):
            if i > 0:
                x = pool_feature(x)
            x = stage(x)
            taps[f"stage{i + 1}.out"] = x
        return taps

    def blocks(self) -> List[Tuple[str, ILBlock]]:
        return [
            (f"stages.{i}.blocks.{j}", block)
            for i, stage in enumerate(self.stages)
            for j, block in enumerate(stage.blocks)
        ]

    def tap_channel_maps(self) -> List[Dict[int, int]]:
        """Canaux (haute, basse) de la sortie des étages 2 à 4"""
        maps = []
        for stage in list(self.stages)[1:]:
            split = stage.blocks[len(stage.blocks) - 1].spec.split
            maps.append({HIGH: split[0], LOW: split[1]})
        return maps


def build_extractor(config: CSNetConfig, seed: int = 0) -> FeatureExtractor:
    return FeatureExtractor(config, np.random.default_rng(seed))


# =====================================
# FUSION INTER-ÉTAGES
# =====================================

def tap_layout(tap_maps: Sequence[Mapping[int, int]]) -> Dict[int, List[Tuple[int, int, int, int]]]:
    """
    Place les branches des prises sur l'échelle commune (haute résolution de l'étage 2)

    Returns:
        échelle fusionnée -> [(index de prise, échelle locale, offset, canaux)]
    """
    layout: Dict[int, List[Tuple[int, int, int, int]]] = {}
    for index, channel_map in enumerate(tap_maps):
        for local in (HIGH, LOW):
            merged = local * 2 ** index
            entries = layout.setdefault(merged, [])
            offset = sum(e[3] for e in entries)
            entries.append((index, local, offset, channel_map.get(local, 0)))
    return dict(sorted(layout.items()))


def merge_taps(taps: Sequence[MultiScaleFeature]) -> MultiScaleFeature:
    """Concatène par canaux les branches des trois prises partageant une résolution"""
    layout = tap_layout([t.channel_map() for t in taps])
    entries = []
    for merged, parts in layout.items():
        tensors = [taps[index][local] for index, local, _, count in parts if count > 0]
        if tensors:
            entries.append((merged, concat(tensors, axis=1)))
    return MultiScaleFeature(entries, reference_size=taps[0].reference_size)


class CSFHead(Module):
    """
    gOctConv 1x1 inter-étages -> convolutions dilatées parallèles sommées
    -> gOctConv 1x1 vers la plus haute résolution -> conv 1x1 -> suréchantillonnage
    """

    def __init__(
        self,
        tap_maps: Sequence[Mapping[int, int]],
        fuse_channels: Mapping[int, int],
        head_channels: int,
        dilation_rates: Sequence[int] = (1, 2, 4, 8),
        rng: Optional[np.random.Generator] = None,
    ):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        merged = {s: sum(p[3] for p in parts) for s, parts in tap_layout(tap_maps).items()}
        self.dilation_rates = tuple(dilation_rates)

        self.fuse = GOctConv(GOctConvSpec.build(merged, fuse_channels, kernel=1), rng)
        self.bn_fuse = MultiScaleBatchNorm(fuse_channels)
        self.act_fuse = MultiScalePReLU(fuse_channels)
        self.context = ModuleList([
            GOctConv(GOctConvSpec.build(fuse_channels, fuse_channels, kernel=3, dilation=d,
                                        groups_mode='depthwise', cross_scale=False), rng)
            for d in self.dilation_rates
        ])
        self.bn_context = MultiScaleBatchNorm(fuse_channels)
        self.act_context = MultiScalePReLU(fuse_channels)
        self.head = GOctConv(GOctConvSpec.build(fuse_channels, {HIGH: head_channels}, kernel=1), rng)
        self.bn_head = MultiScaleBatchNorm({HIGH: head_channels})
        self.act_head = MultiScalePReLU({HIGH: head_channels})
        self.out = Conv2d(head_channels, 1, 1, bias=True, rng=rng)

    def forward(self, taps: Sequence[MultiScaleFeature], input_size: Optional[Tuple[int, int]] = None) -> Tensor:
        x = merge_taps(taps)
        x = self.act_fuse(self.bn_fuse(self.fuse(x)))

        branches = [conv(x) for conv in self.context]
        summed = []
        for scale in branches[0].scales:
            total = branches[0][scale]
            for branch in branches[1:]:
                counters.record(counters.ADD, branch[scale].data.size)
                total = total + branch[scale]
            summed.append((scale, total))
        x = MultiScaleFeature(summed, reference_size=x.reference_size)
        x = self.act_context(self.bn_context(x))

        x = self.act_head(self.bn_head(self.head(x)))
        logits = self.out(x[HIGH])

        if input_size is None:
            factor = 4
        else:
            factor = input_size[0] // logits.shape[2]
        return upsample_nearest(logits, factor)

    def fuse_channel_map(self) -> Dict[int, int]:
        return self.fuse.spec.out_channel_map()

    def head_channels(self) -> int:
        return self.head.spec.out_channels(HIGH)

    def select_fuse(self, keep: Mapping[int, np.ndarray]) -> None:
        self.fuse.select_outputs(keep)
        self.bn_fuse.select(keep)
        self.act_fuse.select(keep)
        for conv in self.context:
            conv.select_outputs(keep)
        self.bn_context.select(keep)
        self.act_context.select(keep)

    def select_head(self, keep: Mapping[int, np.ndarray]) -> None:
        self.head.select_outputs(keep)
        self.bn_head.select(keep)
        self.act_head.select(keep)


def csf_forward(
    stage_taps: Union[Sequence[MultiScaleFeature], Mapping[str, MultiScaleFeature]],
    params: CSFHead,
    input_size: Optional[Tuple[int, int]] = None,
) -> SaliencyOutput:
    """
    Fusionne les sorties des trois derniers étages

    Args:
        stage_taps: Prises ordonnées (étages 2, 3, 4) ou dictionnaire stage{2,3,4}.out
        params: Tête CSF
        input_size: Résolution de l'image d'entrée (défaut: 4x la prise de l'étage 2)
    """
    if isinstance(stage_taps, Mapping):
        missing = [name for name in CSF_TAPS if name not in stage_taps]
        if missing:
            raise ConfigurationError(f"Prises manquantes pour la CSF: {missing}")
        stage_taps = [stage_taps[name] for name in CSF_TAPS]
    if len(stage_taps) != 3:
        raise ConfigurationError(f"La CSF attend exactement trois prises, reçu {len(stage_taps)}")
    return SaliencyOutput(params(stage_taps, input_size))


# =====================================
# RÉSEAU COMPLET
# =====================================

@dataclass
class PrunableLayer:
    """BatchNorm élaguable et convolutions qui la précèdent"""
    name: str
    norm: MultiScaleBatchNorm
    producers: List[GOctConv]


@dataclass
class Consumer:
    """
    Convolution lisant les canaux d'un groupe

    inputs: échelle du groupe -> (échelle d'entrée de la convolution, offset)
    norm: BatchNorm qui suit la convolution (None: le biais de la convolution)
    """
    conv: Union[GOctConv, Conv2d]
    inputs: Dict[int, Tuple[int, int]]
    norm: Optional[MultiScaleBatchNorm]


@dataclass
class PruneGroup:
    """Chaîne de couches partageant les mêmes canaux"""
    name: str
    layers: List[PrunableLayer]
    chain: List[Tuple[str, Any]]
    consumers: List[Consumer]
    select: Callable[[Mapping[int, np.ndarray]], None]

    def channel_map(self) -> Dict[int, int]:
        return self.layers[0].norm.channel_map()


class CSNet(Module):
    """Détecteur d'objets saillants léger"""

    def __init__(
        self,
        config: Optional[CSNetConfig] = None,
        seed: int = 0,
        block_splits: Optional[Mapping[str, Tuple[int, int]]] = None,
        fuse_channels: Optional[Mapping[int, int]] = None,
        head_channels: Optional[int] = None,
    ):
        super().__init__()
        self.config = config or CSNetConfig()
        rng = np.random.default_rng(seed)
        self.extractor = FeatureExtractor(self.config, rng, block_splits)
        self.csf = CSFHead(
            self.extractor.tap_channel_maps(),
            fuse_channels or self.config.csf_map(),
            head_channels or self.config.head_width(),
            self.config.dilation_rates,
            rng,
        )

    def forward(self, image: Tensor) -> SaliencyOutput:
        taps = self.extractor(image)
        return csf_forward(taps, self.csf, (image.shape[2], image.shape[3]))

    # ------------------------------------------------------------------
    # Description structurelle
    # ------------------------------------------------------------------

    def layout(self) -> Dict[str, Any]:
        """Description JSON de la structure (configuration + canaux après élagage)"""
        return {
            'config': self.config.model_dump(mode='json'),
            'blocks': {name: list(block.spec.split) for name, block in self.extractor.blocks()},
            'csf': {
                'fuse': {str(s): c for s, c in self.csf.fuse_channel_map().items()},
                'head': self.csf.head_channels(),
            },
        }

    @classmethod
    def from_layout(cls, layout: Mapping[str, Any], seed: int = 0) -> 'CSNet':
        config = CSNetConfig.model_validate(layout['config'])
        csf = layout.get('csf', {})
        fuse = {int(s): int(c) for s, c in csf['fuse'].items()} if 'fuse' in csf else None
        return cls(
            config,
            seed=seed,
            block_splits={name: tuple(split) for name, split in layout.get('blocks', {}).items()},
            fuse_channels=fuse,
            head_channels=csf.get('head'),
        )

    def dynamic_decay_targets(self) -> List[str]:
        """γ des BatchNorm suivant une gOctConv (la BN de la tige est exclue)"""
        return [
            name for name, _ in self.named_parameters()
            if name.endswith('.gamma') and not name.startswith('extractor.stem.')
        ]

    def prunable_layers(self) -> List[PrunableLayer]:
        return [layer for group in self.prune_groups() for layer in group.layers]

    # ------------------------------------------------------------------
    # Groupes d'élagage
    # ------------------------------------------------------------------

    def prune_groups(self) -> List[PruneGroup]:
        """Groupes de canaux partagés, avec leurs convolutions consommatrices"""
        groups: List[PruneGroup] = []
        blocks = self.extractor.blocks()
        layout = tap_layout(self.extractor.tap_channel_maps())
        depths = self.config.stage_depths

        for position, (name, block) in enumerate(blocks):
            stage_index, block_index = (int(part) for part in name.split('.')[1::2])
            consumers: List[Consumer] = []
            if position + 1 < len(blocks):
                following = blocks[position + 1][1]
                consumers.append(Consumer(following.conv1, {HIGH: (HIGH, 0), LOW: (LOW, 0)}, following.bn1))
            if stage_index >= 1 and block_index == depths[stage_index] - 1:
                tap = stage_index - 1
                inputs = {}
                for merged, parts in layout.items():
                    for index, local, offset, _ in parts:
                        if index == tap:
                            inputs[local] = (merged, offset)
                consumers.append(Consumer(self.csf.fuse, inputs, self.csf.bn_fuse))

            groups.append(PruneGroup(
                name=f"extractor.{name}",
                layers=[
                    PrunableLayer(f"extractor.{name}.bn1", block.bn1, [block.conv1]),
                    PrunableLayer(f"extractor.{name}.bn2", block.bn2, [block.conv2]),
                    PrunableLayer(f"extractor.{name}.bn3", block.bn3, [block.conv3]),
                ],
                chain=[
                    ('bn', block.bn1), ('act', block.act1), ('dw', [block.conv2]),
                    ('bn', block.bn2), ('act', block.act2), ('dw', [block.conv3]),
                    ('bn', block.bn3), ('act', block.act3),
                ],
                consumers=consumers,
                select=block.select_channels,
            ))

        csf = self.csf
        groups.append(PruneGroup(
            name="csf.fuse",
            layers=[
                PrunableLayer("csf.bn_fuse", csf.bn_fuse, [csf.fuse]),
                PrunableLayer("csf.bn_context", csf.bn_context, list(csf.context)),
            ],
            chain=[
                ('bn', csf.bn_fuse), ('act', csf.act_fuse), ('dw', list(csf.context)),
                ('bn', csf.bn_context), ('act', csf.act_context),
            ],
            consumers=[Consumer(csf.head, {s: (s, 0) for s in (1, 2, 4, 8)}, csf.bn_head)],
            select=csf.select_fuse,
        ))
        groups.append(PruneGroup(
            name="csf.head",
            layers=[PrunableLayer("csf.bn_head", csf.bn_head, [csf.head])],
            chain=[('bn', csf.bn_head), ('act', csf.act_head)],
            consumers=[Consumer(csf.out, {HIGH: (HIGH, 0)}, None)],
            select=csf.select_head,
        ))
        return groups

    def group(self, name: str) -> PruneGroup:
        for group in self.prune_groups():
            if group.name == name:
                return group
        raise ConfigurationError(f"Groupe d'élagage inconnu: {name}")


def csnet_forward(image: Tensor, config: CSNetConfig, params: CSNet) -> SaliencyOutput:
    """Passe avant complète: extracteur puis CSF"""
    check_input(image)
    if params.config != config:
        raise ConfigurationError("Les poids fournis ne correspondent pas à la configuration demandée")
    return params(image)


def build_csnet(config: Optional[CSNetConfig] = None, seed: int = 0) -> CSNet:
    model = CSNet(config, seed)
    logger.info(f"CSNet construit: {model.num_parameters()} paramètres")
    return model
