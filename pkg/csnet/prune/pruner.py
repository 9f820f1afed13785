"""
Élagage des canaux: scores, sélection, réécriture structurelle du modèle,
repli du résidu β et pipeline complet entraînement -> élagage -> affinage
"""

import copy
import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..analysis.complexity import analyze, count_params
from ..core.exceptions import ConfigurationError
from ..core.factories import CriterionFactory
from ..core.interfaces import ChannelCriterion
from ..data.datasets import SaliencySample
from ..layers.goctconv import GOctConv
from ..layers.modules import Conv2d
from ..model.csnet import CSNet, Consumer, PruneGroup
from ..optim.decay import DecayPolicy
from ..optim.trainer import TrainConfig, TrainResult, finetune, train
from . import criteria  # noqa: F401  (enregistrement des critères)

logger = logging.getLogger(__name__)

DEFAULT_TAU = 1e-6
FOLD_THRESHOLD = 1e-4

KeepMasks = Dict[str, Dict[int, np.ndarray]]


@dataclass
class ChannelImportance:
    """Scores >= 0 d'une couche élaguable, par échelle"""
    layer: str
    scores: Dict[int, np.ndarray]
    criterion: str

    def channels(self) -> int:
        return int(sum(s.size for s in self.scores.values()))


@dataclass
class Selection:
    """Masques de conservation par couche et couches où un canal a été restauré"""
    masks: KeepMasks
    flagged: List[str] = field(default_factory=list)

    def kept(self) -> int:
        return int(sum(m.sum() for layer in self.masks.values() for m in layer.values()))


# =====================================
# SCORES ET SÉLECTION
# =====================================

def score_channels(model: CSNet, criterion: Union[str, ChannelCriterion]) -> List[ChannelImportance]:
    """Évalue l'importance de chaque canal de chaque couche élaguable"""
    if isinstance(criterion, str):
        criterion = CriterionFactory.create(criterion)
    importances = []
    for layer in model.prunable_layers():
        scores = criterion.score(layer)
        expected = layer.norm.channel_map()
        for scale, values in scores.items():
            if values.shape != (expected.get(scale, -1),):
                raise ConfigurationError(f"{layer.name}: {values.shape[0]} scores pour l'échelle {scale}")
        importances.append(ChannelImportance(layer.name, scores, criterion.name))
    return importances


def select_prunable(
    scores: Sequence[ChannelImportance],
    tau: float = DEFAULT_TAU,
    ratio: Optional[float] = None,
) -> Selection:
    """
    Masques de conservation

    Seuil: canal conservé ssi score >= τ. Ratio: les floor(ratio·C) canaux
    de plus faible score de chaque couche sont retirés. Une couche qui
    perdrait tout conserve son meilleur canal (événement signalé).
    """
    if tau <= 0:
        raise ConfigurationError(f"Le seuil τ doit être strictement positif: {tau}")
    if ratio is not None and not 0 <= ratio < 1:
        raise ConfigurationError(f"Ratio d'élagage hors de [0, 1): {ratio}")

    selection = Selection(masks={})
    for importance in scores:
        scales = sorted(importance.scores)
        flat = np.concatenate([importance.scores[s] for s in scales])
        if ratio is None:
            keep = flat >= tau
        else:
            keep = np.ones(flat.size, dtype=bool)
            keep[np.argsort(flat, kind='stable')[:int(np.floor(ratio * flat.size))]] = False
        if not keep.any():
            keep[int(np.argmax(flat))] = True
            selection.flagged.append(importance.layer)
            logger.warning(f"{importance.layer}: tous les canaux sous le seuil, meilleur canal conservé")

        bounds = np.cumsum([0] + [importance.scores[s].size for s in scales])
        selection.masks[importance.layer] = {
            s: keep[start:stop] for s, start, stop in zip(scales, bounds[:-1], bounds[1:])
        }
    return selection


# =====================================
# MASQUES DE GROUPE
# =====================================

def group_masks(model: CSNet, masks: Mapping[str, Mapping[int, np.ndarray]]) -> Tuple[KeepMasks, List[str]]:
    """
    Intersection des masques des couches d'un même groupe

    Un canal n'est conservé que si toutes les couches de sa chaîne le
    conservent; un groupe vidé garde le canal le plus soutenu.
    """
    groups = model.prune_groups()
    known = {layer.name for group in groups for layer in group.layers}
    unknown = sorted(set(masks) - known)
    if unknown:
        raise ConfigurationError(f"Masques pour des couches inconnues: {unknown[:5]}")

    result: KeepMasks = {}
    flagged: List[str] = []
    for group in groups:
        channel_map = group.channel_map()
        votes = {s: np.zeros(c, dtype=int) for s, c in channel_map.items()}
        for layer in group.layers:
            layer_mask = masks.get(layer.name, {})
            if set(layer_mask) - set(channel_map):
                raise ConfigurationError(f"{layer.name}: échelles {sorted(layer_mask)} absentes de {sorted(channel_map)}")
            for scale, count in channel_map.items():
                mask = np.asarray(layer_mask.get(scale, np.ones(count, dtype=bool)), dtype=bool)
                if mask.shape != (count,):
                    raise ConfigurationError(f"{layer.name}: masque de {mask.shape} pour {count} canaux (échelle {scale})")
                votes[scale] += mask

        needed = len(group.layers)
        keep = {s: v == needed for s, v in votes.items()}
        if not any(k.any() for k in keep.values()):
            last = group.layers[-1].norm
            best_scale, best_index, best_key = None, None, None
            for scale in sorted(keep):
                gammas = np.abs(last.branch(scale).gamma.data)
                for index in range(gammas.size):
                    key = (votes[scale][index], gammas[index])
                    if best_key is None or key > best_key:
                        best_scale, best_index, best_key = scale, index, key
            keep[best_scale][best_index] = True
            flagged.append(group.name)
            logger.warning(f"{group.name}: groupe vidé, un canal restauré")
        result[group.name] = keep
    return result, flagged


def mask_model(model: CSNet, masks: Mapping[str, Mapping[int, np.ndarray]]) -> CSNet:
    """Copie où γ et β des canaux retirés sont mis à zéro dans toute leur chaîne"""
    masked = copy.deepcopy(model)
    keep, _ = group_masks(masked, masks)
    for group in masked.prune_groups():
        for layer in group.layers:
            for scale, bn in layer.norm.branches().items():
                removed = ~keep[group.name][scale]
                bn.gamma.data[removed] = 0.0
                bn.beta.data[removed] = 0.0
    return masked


# =====================================
# RÉÉCRITURE
# =====================================

def chain_residue(group: PruneGroup, scale: int, collapse_tau: float = DEFAULT_TAU) -> np.ndarray:
    """
    Valeur constante (inférence) de chaque canal en sortie de chaîne

    Chaque canal part du β de la dernière BN où |γ| <= τ (à défaut la
    dernière BN de la chaîne), puis traverse activations, convolutions
    depthwise (somme des noyaux) et BN suivantes.
    """
    bn_positions = [i for i, (kind, _) in enumerate(group.chain) if kind == 'bn']
    count = group.channel_map()[scale]
    value = np.zeros(count)
    started = np.zeros(count, dtype=bool)
    for position, (kind, op) in enumerate(group.chain):
        if kind == 'bn':
            bn = op.branch(scale)
            start = np.abs(bn.gamma.data) <= collapse_tau
            if position == bn_positions[-1]:
                start |= ~started
            value = np.where(start, bn.beta.data, bn.scale() * value + bn.shift())
            started |= start
        elif kind == 'act':
            value = op.branch(scale).apply_numpy(value)
        else:
            value = value * sum(conv.kernel(scale, scale).data.sum(axis=(1, 2, 3)) for conv in op)
    return value


def _fold(consumer: Consumer, scale: int, removed: np.ndarray, residue: np.ndarray, threshold: float) -> None:
    significant = removed[np.abs(residue[removed]) > threshold]
    if significant.size == 0:
        return
    source, offset = consumer.inputs[scale]
    values = residue[significant]
    columns = offset + significant

    if isinstance(consumer.conv, Conv2d):
        weight = consumer.conv.weight.data[:, columns].sum(axis=(2, 3))
        consumer.conv.bias.data += weight @ values
        return

    for (path_source, target), kernel in consumer.conv.kernels().items():
        if path_source != source:
            continue
        weight = kernel.data[:, columns].sum(axis=(2, 3))
        consumer.norm.branch(target).running_mean[...] -= weight @ values


def _select_consumer_inputs(consumer: Consumer, keep: Mapping[int, np.ndarray], counts: Mapping[int, int]) -> None:
    if isinstance(consumer.conv, Conv2d):
        consumer.conv.select_inputs(np.flatnonzero(keep[1]))
        return

    conv: GOctConv = consumer.conv
    selected = {}
    for scale, mask in keep.items():
        source, offset = consumer.inputs[scale]
        total = conv.spec.in_channels(source)
        selected[source] = np.concatenate([
            np.arange(offset),
            offset + np.flatnonzero(mask),
            np.arange(offset + counts[scale], total),
        ]).astype(int)
    conv.select_inputs(selected)


def rebuild(
    model: CSNet,
    masks: Mapping[str, Mapping[int, np.ndarray]],
    collapse_tau: float = DEFAULT_TAU,
    fold_threshold: float = FOLD_THRESHOLD,
) -> CSNet:
    """
    Construit un modèle compact ne conservant que les canaux retenus

    Les canaux de sortie des convolutions productrices, les entrées BN/PReLU,
    les noyaux depthwise et les tranches d'entrée des convolutions
    consommatrices sont retirés ensemble. Le modèle source n'est pas modifié.
    """
    compact = copy.deepcopy(model)
    keep, _ = group_masks(compact, masks)

    for name, group_keep in keep.items():
        if all(mask.all() for mask in group_keep.values()):
            continue
        group = compact.group(name)
        counts = group.channel_map()

        for scale, mask in group_keep.items():
            removed = np.flatnonzero(~mask)
            if removed.size == 0:
                continue
            residue = chain_residue(group, scale, collapse_tau)
            for consumer in group.consumers:
                _fold(consumer, scale, removed, residue, fold_threshold)

        for consumer in group.consumers:
            _select_consumer_inputs(consumer, group_keep, counts)
        group.select({s: np.flatnonzero(m) for s, m in group_keep.items()})

        after = {s: int(m.sum()) for s, m in group_keep.items()}
        logger.info(f"{name}: canaux {counts} -> {after}")

    return compact


# =====================================
# RAPPORT
# =====================================

def goctconv_channels(model: CSNet) -> Dict[str, Dict[int, int]]:
    return {
        name: module.spec.out_channel_map()
        for name, module in model.named_modules()
        if isinstance(module, GOctConv)
    }


@dataclass
class PruneReport:
    """Bilan d'un élagage: masques, canaux par échelle, complexité avant/après"""
    criterion: str
    tau: float
    ratio: Optional[float]
    masks: Dict[str, Dict[int, List[bool]]]
    channels_before: Dict[str, Dict[int, int]]
    channels_after: Dict[str, Dict[int, int]]
    params_before: int
    params_after: int
    flops_before: int
    flops_after: int
    input_size: int
    macs_before: int = 0
    macs_after: int = 0
    flagged: List[str] = field(default_factory=list)
    finetune_losses: List[float] = field(default_factory=list)

    @property
    def params_pruning_rate(self) -> float:
        return 1.0 - self.params_after / self.params_before

    @property
    def flops_pruning_rate(self) -> float:
        return 1.0 - self.flops_after / self.flops_before

    def to_dict(self) -> Dict[str, Any]:
        return {
            'criterion': self.criterion,
            'tau': self.tau,
            'ratio': self.ratio,
            'input_size': self.input_size,
            'params_before': self.params_before,
            'params_after': self.params_after,
            'flops_before': self.flops_before,
            'flops_after': self.flops_after,
            'macs_before': self.macs_before,
            'macs_after': self.macs_after,
            'params_pruning_rate': self.params_pruning_rate,
            'flops_pruning_rate': self.flops_pruning_rate,
            'flagged': list(self.flagged),
            'masks': {layer: {str(s): m for s, m in scales.items()} for layer, scales in self.masks.items()},
            'channels_before': {n: {str(s): c for s, c in m.items()} for n, m in self.channels_before.items()},
            'channels_after': {n: {str(s): c for s, c in m.items()} for n, m in self.channels_after.items()},
            'finetune_losses': list(self.finetune_losses),
        }

    def write_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2)
        return path

    def histogram_rows(self) -> List[Tuple[str, int, int, int]]:
        """(couche, échelle, conservés, retirés) par couche élaguable"""
        rows = []
        for layer, scales in self.masks.items():
            for scale, mask in sorted(scales.items()):
                kept = int(sum(mask))
                rows.append((layer, scale, kept, len(mask) - kept))
        return rows

    def write_histogram(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', newline='', encoding='utf-8') as f:
            writer = csv.writer(f)
            writer.writerow(['layer', 'scale', 'kept', 'removed'])
            writer.writerows(self.histogram_rows())
        return path


def build_report(
    model: CSNet,
    compact: CSNet,
    masks: Mapping[str, Mapping[int, np.ndarray]],
    criterion: str,
    tau: float,
    ratio: Optional[float] = None,
    flagged: Sequence[str] = (),
    input_size: int = 224,
) -> PruneReport:
    """
    Rapport d'élagage; les masques rapportés sont ceux effectivement appliqués (par groupe)

    Les FLOPs comptent les MACs et les opérations élément par élément (convention macs).
    """
    before, after = analyze(model, input_size), analyze(compact, input_size)
    keep, group_flagged = group_masks(model, masks)
    layer_masks = {
        layer.name: {s: keep[group.name][s].tolist() for s in sorted(keep[group.name])}
        for group in model.prune_groups()
        for layer in group.layers
    }
    return PruneReport(
        criterion=criterion,
        tau=tau,
        ratio=ratio,
        masks=layer_masks,
        channels_before=goctconv_channels(model),
        channels_after=goctconv_channels(compact),
        params_before=count_params(model),
        params_after=count_params(compact),
        flops_before=before.flops,
        flops_after=after.flops,
        input_size=input_size,
        macs_before=before.macs,
        macs_after=after.macs,
        flagged=list(flagged) + group_flagged,
    )


def prune_pipeline(
    model: CSNet,
    dataset: Sequence[SaliencySample],
    config: TrainConfig,
    policy: DecayPolicy,
    criterion: str = 'bn_gamma',
    tau: float = DEFAULT_TAU,
    ratio: Optional[float] = None,
    holdout: Optional[Sequence[SaliencySample]] = None,
    out_dir: Optional[str] = None,
    train_first: bool = True,
    input_size: int = 224,
    fold_threshold: float = FOLD_THRESHOLD,
) -> Tuple[CSNet, PruneReport]:
    """
    Entraînement -> scores -> sélection -> réécriture -> affinage

    Sans aucun canal retiré, le modèle réécrit (identique à l'entrée) est
    rendu sans affinage.

    Args:
        train_first: False pour élaguer un modèle déjà entraîné (checkpoint)
        fold_threshold: |résidu β| au-delà duquel un canal retiré est replié

    Returns:
        (modèle compact affiné, rapport)
    """
    if train_first:
        train(model, dataset, config, policy, holdout, out_dir)

    scores = score_channels(model, criterion)
    selection = select_prunable(scores, tau, ratio)
    compact = rebuild(model, selection.masks, fold_threshold=fold_threshold)
    report = build_report(model, compact, selection.masks, criterion, tau, ratio, selection.flagged, input_size)
    logger.info(
        f"Élagage ({criterion}): {report.params_before} -> {report.params_after} paramètres "
        f"(taux {report.params_pruning_rate:.3f})"
    )

    if report.params_after == report.params_before:
        logger.info("Aucun canal retiré: affinage ignoré")
    else:
        result: TrainResult = finetune(compact, dataset, config, policy, holdout, out_dir)
        report.finetune_losses = result.losses

    if out_dir is not None:
        report.write_json(Path(out_dir) / 'prune_report.json')
        report.write_histogram(Path(out_dir) / 'channel_histogram.csv')
    return compact, report
