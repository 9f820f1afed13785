"""
Campagne d'acceptation à petite échelle

Entraîne, élague et évalue des CSNet sur un jeu réduit pour mesurer la
parcimonie des γ, la stabilité des sorties, la fidélité de l'élagage et
l'apport de la décroissance dynamique aux critères L1 et médiane géométrique.
Chaque critère est consigné avec ses mesures, son seuil et son verdict.
"""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field

from ..core.exceptions import DataError
from ..data.datasets import SaliencySample
from ..model.csnet import CSNet, CSNetConfig
from ..optim.decay import DecayPolicy
from ..optim.trainer import TrainConfig, TrainResult, evaluate, gamma_values, sparsity_fraction, train
from ..prune.pruner import prune_pipeline

logger = logging.getLogger(__name__)


class ExperimentConfig(BaseModel):
    """Graines, grille de λ standard et seuils de chaque critère"""
    seeds: List[int] = Field(default_factory=lambda: [7, 8, 9], min_length=1)
    standard_lambdas: List[float] = Field(default_factory=lambda: [5e-3, 2e-2, 1e-1, 5e-1], min_length=1)
    sparsity_tau: float = Field(default=1e-6, gt=0.0)
    min_sparsity: float = 0.3
    min_separation_orders: float = 4.0
    sparsity_match: float = 0.05
    width_multiplier: float = Field(default=2.0, ge=1.0)
    min_params_reduction: float = 0.4
    max_f_drop: float = 0.01
    max_mae_increase: float = 0.005
    criteria: List[str] = Field(default_factory=lambda: ['l1_norm', 'geometric_median'])
    prune_ratio: float = Field(default=0.3, ge=0.0, lt=1.0)
    size_match: float = 0.03
    min_seed_wins: int = Field(default=2, ge=1)


@dataclass
class CriterionResult:
    name: str
    passed: bool
    threshold: Dict[str, Any]
    measured: Dict[str, Any]


@dataclass
class AcceptanceReport:
    experiment: Dict[str, Any]
    criteria: List[CriterionResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.criteria)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'experiment': self.experiment,
            'passed': self.passed,
            'criteria': {c.name: asdict(c) for c in self.criteria},
        }

    def write_json(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(), f, indent=2, default=_jsonable)
        return path


def _jsonable(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    raise TypeError(f"Valeur non sérialisable: {type(value).__name__}")


def _finite(value: float) -> Optional[float]:
    return float(value) if np.isfinite(value) else None


def gamma_separation(values: np.ndarray, tau: float) -> Dict[str, Optional[float]]:
    """
    Fraction de |γ| < τ et écart (en ordres de grandeur) entre le plus petit
    γ conservé et le plus grand γ retiré
    """
    magnitudes = np.abs(np.asarray(values, dtype=np.float64))
    removed = magnitudes[magnitudes < tau]
    kept = magnitudes[magnitudes >= tau]
    result: Dict[str, Optional[float]] = {
        'fraction': sparsity_fraction(magnitudes, tau),
        'kept_min': float(kept.min()) if kept.size else None,
        'removed_max': float(removed.max()) if removed.size else None,
        'orders': None,
    }
    if kept.size and removed.size:
        result['orders'] = float('inf') if removed.max() == 0 else float(np.log10(kept.min() / removed.max()))
    return result


# =====================================
# EXÉCUTIONS
# =====================================

@dataclass
class TrainedRun:
    label: str
    model: CSNet
    result: TrainResult
    sparsity: float
    channel_std: float


def _train_run(
    label: str,
    model_config: CSNetConfig,
    config: TrainConfig,
    policy: DecayPolicy,
    seed: int,
    train_set: Sequence[SaliencySample],
    out_dir: Optional[Path],
) -> TrainedRun:
    model = CSNet(model_config, seed=seed)
    run_config = config.model_copy(update={'seed': seed})
    result = train(model, train_set, run_config, policy, out_dir=str(out_dir / label) if out_dir else None)
    last = result.history[-1]
    logger.info(f"{label}: γ<τ={last.gamma_sparsity:.3f} σ={last.mean_channel_std:.4f}")
    return TrainedRun(label, model, result, last.gamma_sparsity, last.mean_channel_std)


def _standard_policy(policy: DecayPolicy, lambda_std: float) -> DecayPolicy:
    return policy.model_copy(update={'lambda_std': lambda_std, 'dynamic': False})


def _matched_standard(dynamic: TrainedRun, standards: Sequence[Tuple[float, TrainedRun]]) -> Tuple[float, TrainedRun]:
    return min(standards, key=lambda item: abs(item[1].sparsity - dynamic.sparsity))


def run_experiment(
    model_config: CSNetConfig,
    config: TrainConfig,
    policy: DecayPolicy,
    train_set: Sequence[SaliencySample],
    holdout: Sequence[SaliencySample],
    experiment: Optional[ExperimentConfig] = None,
    out_dir: Optional[str] = None,
    input_size: int = 64,
) -> AcceptanceReport:
    """
    Exécute la campagne et rend un verdict par critère

    Args:
        policy: Décroissance dynamique de référence (λ, λ_d, couplage)
        input_size: Taille d'entrée des comptages de l'élagage
    """
    experiment = experiment or ExperimentConfig()
    if not holdout:
        raise DataError("La campagne exige un jeu de validation non vide")
    root = Path(out_dir) if out_dir else None
    report = AcceptanceReport(experiment={
        **experiment.model_dump(mode='json'),
        'lambda_std': policy.lambda_std,
        'lambda_dyn': policy.lambda_dyn,
        'coupling': policy.coupling,
        'epochs': config.epochs,
        'lr': config.lr,
        'samples': len(train_set),
        'holdout': len(holdout),
    })

    seeds: List[Dict[str, Any]] = []
    for seed in experiment.seeds:
        seed_dir = root / f"seed_{seed}" if root else None
        dynamic = _train_run('dynamic', model_config, config, policy, seed, train_set, seed_dir)
        standards = [
            (lam, _train_run(f"standard_{lam:g}", model_config, config, _standard_policy(policy, lam),
                             seed, train_set, seed_dir))
            for lam in experiment.standard_lambdas
        ]
        seeds.append({'seed': seed, 'dynamic': dynamic, 'standards': standards})

    report.criteria.append(_sparsity_criterion(seeds[0]['dynamic'], policy, experiment))
    report.criteria.append(_stability_criterion(seeds, experiment))
    report.criteria.append(_pruning_criterion(model_config, config, policy, train_set, holdout,
                                              experiment, root, input_size))
    report.criteria.append(_comparison_criterion(seeds, config, policy, train_set, holdout,
                                                 experiment, input_size))

    for criterion in report.criteria:
        logger.info(f"{criterion.name}: {'OK' if criterion.passed else 'ÉCHEC'}")
    if root is not None:
        report.write_json(root / 'acceptance.json')
    return report


# =====================================
# CRITÈRES
# =====================================

def _sparsity_criterion(dynamic: TrainedRun, policy: DecayPolicy, experiment: ExperimentConfig) -> CriterionResult:
    targets = policy.for_model(dynamic.model).dynamic_targets
    separation = gamma_separation(gamma_values(dynamic.model, targets), experiment.sparsity_tau)
    passed = (
        separation['fraction'] >= experiment.min_sparsity
        and separation['orders'] is not None
        and separation['orders'] >= experiment.min_separation_orders
    )
    return CriterionResult(
        name='dynamic_sparsity',
        passed=bool(passed),
        threshold={'tau': experiment.sparsity_tau, 'min_fraction': experiment.min_sparsity,
                   'min_orders': experiment.min_separation_orders},
        measured={'seed': experiment.seeds[0], 'targets': len(targets), **separation},
    )


def _stability_criterion(seeds: Sequence[Dict[str, Any]], experiment: ExperimentConfig) -> CriterionResult:
    rows = []
    for entry in seeds:
        dynamic: TrainedRun = entry['dynamic']
        lam, standard = _matched_standard(dynamic, entry['standards'])
        matched = abs(standard.sparsity - dynamic.sparsity) <= experiment.sparsity_match
        rows.append({
            'seed': entry['seed'],
            'dynamic_sparsity': dynamic.sparsity,
            'dynamic_std': dynamic.channel_std,
            'standard_lambda': lam,
            'standard_sparsity': standard.sparsity,
            'standard_std': standard.channel_std,
            'matched': matched,
            'dynamic_lower': matched and dynamic.channel_std < standard.channel_std,
        })
    wins = sum(row['dynamic_lower'] for row in rows)
    return CriterionResult(
        name='output_stability',
        passed=wins >= experiment.min_seed_wins,
        threshold={'sparsity_match': experiment.sparsity_match, 'min_seed_wins': experiment.min_seed_wins},
        measured={'wins': wins, 'seeds': rows},
    )


def _pruning_criterion(
    model_config: CSNetConfig,
    config: TrainConfig,
    policy: DecayPolicy,
    train_set: Sequence[SaliencySample],
    holdout: Sequence[SaliencySample],
    experiment: ExperimentConfig,
    root: Optional[Path],
    input_size: int,
) -> CriterionResult:
    seed = experiment.seeds[0]
    wide_config = CSNetConfig.model_validate(
        {**model_config.model_dump(), 'width_multiplier': experiment.width_multiplier})
    run_dir = root / 'pruning' if root else None
    wide = _train_run('wide', wide_config, config, policy, seed, train_set, run_dir)
    before = evaluate(wide.model, holdout)

    compact, prune_report = prune_pipeline(
        wide.model, train_set, config.model_copy(update={'seed': seed}), policy,
        criterion='bn_gamma', tau=experiment.sparsity_tau, holdout=None,
        out_dir=str(run_dir) if run_dir else None, train_first=False, input_size=input_size,
    )
    after = evaluate(compact, holdout)
    f_drop = before.max_f_beta - after.max_f_beta
    mae_increase = after.mae - before.mae
    passed = (
        prune_report.params_pruning_rate >= experiment.min_params_reduction
        and f_drop <= experiment.max_f_drop
        and mae_increase <= experiment.max_mae_increase
    )
    return CriterionResult(
        name='pruning_fidelity',
        passed=bool(passed),
        threshold={'width_multiplier': experiment.width_multiplier, 'tau': experiment.sparsity_tau,
                   'min_params_reduction': experiment.min_params_reduction,
                   'max_f_drop': experiment.max_f_drop, 'max_mae_increase': experiment.max_mae_increase},
        measured={
            'seed': seed,
            'params_before': prune_report.params_before,
            'params_after': prune_report.params_after,
            'params_reduction': prune_report.params_pruning_rate,
            'f_before': before.max_f_beta,
            'f_after': after.max_f_beta,
            'f_drop': f_drop,
            'mae_before': before.mae,
            'mae_after': after.mae,
            'mae_increase': mae_increase,
            'finetune_epochs': len(prune_report.finetune_losses),
        },
    )


def _comparison_criterion(
    seeds: Sequence[Dict[str, Any]],
    config: TrainConfig,
    policy: DecayPolicy,
    train_set: Sequence[SaliencySample],
    holdout: Sequence[SaliencySample],
    experiment: ExperimentConfig,
    input_size: int,
) -> CriterionResult:
    results: Dict[str, Dict[str, Any]] = {}
    passed = True
    for criterion in experiment.criteria:
        rows = []
        for entry in seeds:
            dynamic: TrainedRun = entry['dynamic']
            lam, standard = _matched_standard(dynamic, entry['standards'])
            seed_config = config.model_copy(update={'seed': entry['seed']})
            outcome = {}
            for label, run, run_policy in (('dynamic', dynamic, policy),
                                           ('standard', standard, _standard_policy(policy, lam))):
                compact, prune_report = prune_pipeline(
                    run.model, train_set, seed_config, run_policy, criterion=criterion,
                    ratio=experiment.prune_ratio, train_first=False, input_size=input_size,
                )
                outcome[label] = (prune_report.params_after, evaluate(compact, holdout).max_f_beta)
            size_gap = abs(outcome['dynamic'][0] - outcome['standard'][0]) / outcome['standard'][0]
            matched = size_gap <= experiment.size_match
            rows.append({
                'seed': entry['seed'],
                'standard_lambda': lam,
                'dynamic_params': outcome['dynamic'][0],
                'standard_params': outcome['standard'][0],
                'size_gap': _finite(size_gap),
                'matched': matched,
                'dynamic_f': outcome['dynamic'][1],
                'standard_f': outcome['standard'][1],
                'dynamic_not_worse': matched and outcome['dynamic'][1] >= outcome['standard'][1],
            })
        wins = sum(row['dynamic_not_worse'] for row in rows)
        results[criterion] = {'wins': wins, 'seeds': rows}
        passed = passed and wins >= experiment.min_seed_wins
    return CriterionResult(
        name='criterion_comparison',
        passed=passed,
        threshold={'prune_ratio': experiment.prune_ratio, 'size_match': experiment.size_match,
                   'min_seed_wins': experiment.min_seed_wins},
        measured=results,
    )
