"""
Comptage exact des paramètres et des opérations (MACs + opérations élément par élément)

Le parcours reproduit la passe avant: chaque chemin d'une gOctConv est
compté à sa résolution réelle, les rééchantillonnages compris.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..core import counters
from ..core.exceptions import ConfigurationError
from ..core.interfaces import Module
from ..core.tensor import Tensor, no_grad
from ..layers.goctconv import GOctConvSpec
from ..model.csnet import CSNet, CSNetConfig, FeatureExtractor, TOTAL_STRIDE
from ..model.ilblock import HIGH

logger = logging.getLogger(__name__)

FlopsConvention = Literal['macs', '2macs']
Scope = Literal['csnet', 'extractor']

SPLIT_SWEEP: Tuple[Tuple[int, int], ...] = ((1, 0), (3, 1), (5, 5), (1, 3), (0, 1))
WIDTH_SWEEP: Tuple[float, ...] = (1.0, 1.5, 2.0)


@dataclass
class OpCost:
    """MACs de convolution et opérations élément par élément par catégorie"""
    macs: int = 0
    elementwise: Dict[str, int] = field(default_factory=lambda: {c: 0 for c in counters.ELEMENTWISE_CATEGORIES})

    def add(self, category: str, amount: int) -> None:
        if category == counters.CONV:
            self.macs += int(amount)
        else:
            self.elementwise[category] += int(amount)

    def __iadd__(self, other: 'OpCost') -> 'OpCost':
        self.macs += other.macs
        for category, amount in other.elementwise.items():
            self.elementwise[category] += amount
        return self

    @property
    def elementwise_total(self) -> int:
        return sum(self.elementwise.values())


@dataclass
class ComplexityItem:
    name: str
    params: int
    cost: OpCost


@dataclass
class ComplexityReport:
    """Paramètres et opérations par module et au total, à une taille d'entrée donnée"""
    method: str
    split: Tuple[int, int]
    width_multiplier: float
    input_size: int
    items: List[ComplexityItem]
    convention: FlopsConvention = 'macs'
    include_elementwise: bool = True
    pruned_params: Optional[int] = None
    pruned_flops: Optional[int] = None

    @property
    def params(self) -> int:
        return sum(item.params for item in self.items)

    @property
    def macs(self) -> int:
        return sum(item.cost.macs for item in self.items)

    @property
    def elementwise(self) -> Dict[str, int]:
        totals = {c: 0 for c in counters.ELEMENTWISE_CATEGORIES}
        for item in self.items:
            for category, amount in item.cost.elementwise.items():
                totals[category] += amount
        return totals

    @property
    def flops(self) -> int:
        """MACs (x2 en convention 2macs) plus les opérations élément par élément"""
        return counters.total_flops(self.macs, self.elementwise, self.convention, self.include_elementwise)

    @property
    def split_label(self) -> str:
        return f"{self.split[0]}/{self.split[1]}"

    def to_dict(self) -> Dict[str, Any]:
        result = {
            'method': self.method,
            'split': self.split_label,
            'width_multiplier': self.width_multiplier,
            'input_size': self.input_size,
            'flops_convention': self.convention,
            'include_elementwise': self.include_elementwise,
            'params': self.params,
            'macs': self.macs,
            'flops': self.flops,
            'elementwise': self.elementwise,
            'modules': [
                {
                    'name': item.name,
                    'params': item.params,
                    'macs': item.cost.macs,
                    'elementwise': dict(item.cost.elementwise),
                }
                for item in self.items
            ],
        }
        if self.pruned_params is not None:
            result['pruned_params'] = self.pruned_params
            result['pruned_flops'] = self.pruned_flops
        return result


def to_flops(macs: int, convention: FlopsConvention = 'macs') -> int:
    """MACs seuls exprimés dans la convention demandée"""
    if convention not in counters.FLOPS_CONVENTIONS:
        raise ConfigurationError(f"Convention FLOPs inconnue: {convention}")
    return 2 * macs if convention == '2macs' else macs


# =====================================
# COÛTS ÉLÉMENTAIRES
# =====================================

def conv_macs(cin: int, cout: int, kernel: int, out_h: int, out_w: int, groups: int = 1) -> int:
    """Éléments de sortie x volume du noyau x canaux d'entrée / groupes"""
    return cout * out_h * out_w * kernel * kernel * (cin // groups)


def goctconv_cost(spec: GOctConvSpec, reference: Tuple[int, int]) -> OpCost:
    """Coût d'une gOctConv dont l'échelle 1 est à la résolution reference"""
    h, w = reference
    cost = OpCost()
    for source, target in spec.paths():
        cin = spec.in_channels(source)
        cout = spec.out_channels(target)
        cin_g = 1 if spec.groups_mode == 'depthwise' else cin
        factor = source
        while factor < target:
            factor *= 2
            cost.add(counters.POOL, cin * (h // factor) * (w // factor))
        conv_scale = max(source, target)
        cost.add(counters.CONV, conv_macs(cin_g, cout, spec.kernel, h // conv_scale, w // conv_scale))
        factor = source
        while factor > target:
            factor //= 2
            cost.add(counters.UPSAMPLE, cout * (h // factor) * (w // factor))
    # Somme des chemins arrivant sur une même échelle
    for target, cout in spec.out_channel_map().items():
        arriving = sum(1 for _, t in spec.paths() if t == target)
        if arriving > 1:
            cost.add(counters.ADD, (arriving - 1) * cout * (h // target) * (w // target))
    return cost


def norm_act_cost(channel_map: Mapping[int, int], reference: Tuple[int, int]) -> OpCost:
    """BatchNorm + PReLU sur chaque branche"""
    h, w = reference
    cost = OpCost()
    for scale, channels in channel_map.items():
        size = channels * (h // scale) * (w // scale)
        cost.add(counters.BATCH_NORM, size)
        cost.add(counters.PRELU, size)
    return cost


def pool_cost(channel_map: Mapping[int, int], reference: Tuple[int, int]) -> OpCost:
    """Division par deux de la résolution de toutes les branches"""
    h, w = reference[0] // 2, reference[1] // 2
    cost = OpCost()
    for scale, channels in channel_map.items():
        cost.add(counters.POOL, channels * (h // scale) * (w // scale))
    return cost


# =====================================
# MODÈLE
# =====================================

def _check_size(input_size: int) -> None:
    if input_size < TOTAL_STRIDE or input_size % TOTAL_STRIDE:
        raise ConfigurationError(f"Taille d'entrée {input_size} non divisible par le pas total {TOTAL_STRIDE}")


def _extractor_items(extractor: FeatureExtractor, input_size: int) -> List[ComplexityItem]:
    stem = extractor.stem
    reference = (input_size // 2, input_size // 2)
    stem_cost = OpCost()
    stem_cost.add(counters.CONV, conv_macs(3, stem.conv.weight.shape[0], 3, *reference))
    stem_cost += norm_act_cost({HIGH: stem.conv.weight.shape[0]}, reference)
    items = [ComplexityItem('extractor.stem', stem.num_parameters(), stem_cost)]

    channel_map = {HIGH: stem.conv.weight.shape[0]}
    for i, stage in enumerate(extractor.stages):
        cost = OpCost()
        if i > 0:
            cost += pool_cost(channel_map, reference)
            reference = (reference[0] // 2, reference[1] // 2)
        for block in stage.blocks:
            out_map = block.conv1.spec.out_channel_map()
            for conv in (block.conv1, block.conv2, block.conv3):
                cost += goctconv_cost(conv.spec, reference)
                cost += norm_act_cost(out_map, reference)
            channel_map = out_map
        items.append(ComplexityItem(f"extractor.stage{i + 1}", stage.num_parameters(), cost))
    return items


def _csf_items(model: CSNet, input_size: int) -> List[ComplexityItem]:
    csf = model.csf
    reference = (input_size // 4, input_size // 4)

    fuse = goctconv_cost(csf.fuse.spec, reference)
    fuse += norm_act_cost(csf.fuse_channel_map(), reference)

    context = OpCost()
    for conv in csf.context:
        context += goctconv_cost(conv.spec, reference)
    for scale, channels in csf.fuse_channel_map().items():
        branch_size = channels * (reference[0] // scale) * (reference[1] // scale)
        context.add(counters.ADD, (len(csf.context) - 1) * branch_size)
    context += norm_act_cost(csf.fuse_channel_map(), reference)

    head = goctconv_cost(csf.head.spec, reference)
    head += norm_act_cost({HIGH: csf.head_channels()}, reference)

    out = OpCost()
    out.add(counters.CONV, conv_macs(csf.head_channels(), 1, 1, *reference))
    out.add(counters.UPSAMPLE, input_size * input_size)

    return [
        ComplexityItem('csf.fuse', csf.fuse.num_parameters() + csf.bn_fuse.num_parameters()
                       + csf.act_fuse.num_parameters(), fuse),
        ComplexityItem('csf.context', csf.context.num_parameters() + csf.bn_context.num_parameters()
                       + csf.act_context.num_parameters(), context),
        ComplexityItem('csf.head', csf.head.num_parameters() + csf.bn_head.num_parameters()
                       + csf.act_head.num_parameters(), head),
        ComplexityItem('csf.out', csf.out.num_parameters(), out),
    ]


def _as_model(model: Union[Module, CSNetConfig]) -> Module:
    return CSNet(model) if isinstance(model, CSNetConfig) else model


def count_params(model: Union[Module, CSNetConfig]) -> int:
    """Noyaux, biais, γ/β et pentes PReLU (statistiques courantes exclues)"""
    return _as_model(model).num_parameters()


def analyze(
    model: Union[Module, CSNetConfig],
    input_size: int = 224,
    scope: Scope = 'csnet',
    convention: FlopsConvention = 'macs',
    include_elementwise: bool = True,
) -> ComplexityReport:
    """
    Rapport de complexité détaillé par module

    Args:
        include_elementwise: False pour ne totaliser que les MACs de convolution
    """
    _check_size(input_size)
    to_flops(0, convention)
    model = _as_model(model)
    if isinstance(model, CSNet):
        extractor, config = model.extractor, model.config
    elif isinstance(model, FeatureExtractor):
        if scope == 'csnet':
            raise ConfigurationError("Un extracteur seul ne peut être analysé qu'avec scope='extractor'")
        extractor, config = model, None
    else:
        raise ConfigurationError(f"Modèle non analysable: {type(model).__name__}")
    if scope not in ('csnet', 'extractor'):
        raise ConfigurationError(f"Portée inconnue: {scope}")

    items = _extractor_items(extractor, input_size)
    if scope == 'csnet':
        items += _csf_items(model, input_size)

    first = extractor.stages[0].blocks[0].spec.split
    return ComplexityReport(
        method='CSNet' if scope == 'csnet' else 'Extractor',
        split=tuple(config.split) if config is not None else tuple(first),
        width_multiplier=config.width_multiplier if config is not None else 1.0,
        input_size=input_size,
        items=items,
        convention=convention,
        include_elementwise=include_elementwise,
    )


def count_flops(
    model: Union[Module, CSNetConfig],
    input_size: int = 224,
    convention: FlopsConvention = 'macs',
    scope: Scope = 'csnet',
    include_elementwise: bool = True,
) -> int:
    """Opérations à input_size x input_size: MACs (x2 en convention 2macs) + élément par élément"""
    return analyze(model, input_size, scope, convention, include_elementwise).flops


def measure_ops(model: Module, input_size: int = 224) -> counters.OpCounter:
    """Compte les opérations d'une vraie passe avant (mode inférence, image nulle)"""
    _check_size(input_size)
    was_training = model.training
    model.eval()
    try:
        with no_grad(), counters.count_ops() as counter:
            model(Tensor(np.zeros((1, 3, input_size, input_size))))
    finally:
        model.train(was_training)
    return counter


# =====================================
# BALAYAGES
# =====================================

@dataclass
class SweepTable:
    axis: str
    rows: List[ComplexityReport]

    def to_dict(self) -> Dict[str, Any]:
        return {'axis': self.axis, 'rows': [row.to_dict() for row in self.rows]}


def sweep(
    config: CSNetConfig,
    axis: Literal['split', 'width'],
    values: Optional[Sequence[Any]] = None,
    input_size: int = 224,
    scope: Scope = 'csnet',
    convention: FlopsConvention = 'macs',
    prune_reports: Optional[Mapping[Any, Any]] = None,
    include_elementwise: bool = True,
) -> SweepTable:
    """
    Un rapport par valeur de l'axe (répartition ou multiplicateur de largeur)

    Args:
        prune_reports: valeur de l'axe -> PruneReport, ajoute les colonnes après élagage
    """
    if axis not in ('split', 'width'):
        raise ConfigurationError(f"Axe de balayage inconnu: {axis}")
    if values is None:
        values = SPLIT_SWEEP if axis == 'split' else WIDTH_SWEEP
    prune_reports = prune_reports or {}

    rows = []
    for value in values:
        if axis == 'split':
            variant = config.model_copy(update={'split': tuple(value)})
        else:
            variant = config.model_copy(update={'width_multiplier': float(value)})
        variant = CSNetConfig.model_validate(variant.model_dump())
        report = analyze(variant, input_size, scope, convention, include_elementwise)
        if axis == 'split':
            report.split = tuple(value)
        pruned = prune_reports.get(value)
        if pruned is not None:
            report.pruned_params = pruned.params_after
            elementwise_after = {'all': pruned.flops_after - pruned.macs_after}
            report.pruned_flops = counters.total_flops(
                pruned.macs_after, elementwise_after, convention, include_elementwise)
        rows.append(report)
        logger.debug(f"Balayage {axis}={value}: {report.params} paramètres, {report.flops} FLOPs")
    return SweepTable(axis, rows)


# =====================================
# SORTIES
# =====================================

def _human(value: int, unit: str) -> str:
    if unit == 'K':
        return f"{value / 1e3:.0f}K"
    return f"{value / 1e9:.2f}G"


def format_table(rows: Sequence[ComplexityReport]) -> str:
    """Tableau texte aligné: méthode, répartition, largeur, PARM., FLOPs"""
    headers = ['Method', 'Split', 'Width', 'PARM.', 'FLOPs']
    pruned = any(row.pruned_params is not None for row in rows)
    if pruned:
        headers += ['PARM. pruned', 'FLOPs pruned']

    lines = []
    for row in rows:
        cells = [row.method, row.split_label, f"x{row.width_multiplier:g}",
                 _human(row.params, 'K'), _human(row.flops, 'G')]
        if pruned:
            cells += ['-', '-'] if row.pruned_params is None else [
                _human(row.pruned_params, 'K'), _human(row.pruned_flops, 'G')]
        lines.append(cells)

    widths = [max(len(h), *(len(line[i]) for line in lines)) if lines else len(h) for i, h in enumerate(headers)]
    out = ['  '.join(h.ljust(w) for h, w in zip(headers, widths))]
    out.append('  '.join('-' * w for w in widths))
    out += ['  '.join(c.ljust(w) for c, w in zip(line, widths)) for line in lines]
    return '\n'.join(out)


def write_json(payload: Mapping[str, Any], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2)
    return path
