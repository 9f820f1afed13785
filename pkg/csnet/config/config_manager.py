"""
Gestionnaire de configuration pour CSNet
Utilise le pattern Singleton pour garantir une seule instance
"""

import json
import os
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

import yaml
from dotenv import load_dotenv
from pydantic import ValidationError

from ..analysis.experiments import ExperimentConfig
from ..core.exceptions import ConfigurationError
from ..core.factories import CriterionFactory
from ..model.csnet import CSNetConfig
from ..optim.decay import DecayPolicy
from ..optim.trainer import TrainConfig
from ..prune import criteria  # noqa: F401  (enregistrement des critères)


@dataclass
class PruneConfig:
    """Configuration de l'élagage"""
    criterion: str = 'bn_gamma'
    tau: float = 1e-6
    ratio: Optional[float] = None
    finetune_epochs: Optional[int] = None
    fold_beta_threshold: float = 1e-4

    def __post_init__(self):
        if self.criterion not in CriterionFactory.get_available_types():
            raise ConfigurationError(
                f"prune.criterion: '{self.criterion}' inconnu. Disponibles: {CriterionFactory.get_available_types()}"
            )
        if self.tau <= 0:
            raise ConfigurationError(f"prune.tau doit être strictement positif: {self.tau}")
        if self.ratio is not None and not 0 <= self.ratio < 1:
            raise ConfigurationError(f"prune.ratio hors de [0, 1): {self.ratio}")
        if self.finetune_epochs is not None and self.finetune_epochs < 0:
            raise ConfigurationError(f"prune.finetune_epochs négatif: {self.finetune_epochs}")
        if self.fold_beta_threshold < 0:
            raise ConfigurationError(f"prune.fold_beta_threshold négatif: {self.fold_beta_threshold}")


@dataclass
class DataConfig:
    """Source des données: dossiers image/masque ou jeu synthétique"""
    images_dir: Optional[str] = None
    masks_dir: Optional[str] = None
    synth: Optional[int] = None
    size: int = 64
    holdout: float = 0.2
    augment: bool = True

    def __post_init__(self):
        if (self.images_dir is None) != (self.masks_dir is None):
            raise ConfigurationError("data.images_dir et data.masks_dir vont de pair")
        if self.synth is not None and self.synth < 1:
            raise ConfigurationError(f"data.synth doit être positif: {self.synth}")
        if self.size < 32 or self.size % 32:
            raise ConfigurationError(f"data.size doit être un multiple de 32: {self.size}")
        if not 0 <= self.holdout < 1:
            raise ConfigurationError(f"data.holdout hors de [0, 1): {self.holdout}")

    @property
    def has_source(self) -> bool:
        return self.images_dir is not None or self.synth is not None


@dataclass
class AnalysisConfig:
    """Taille d'entrée et convention de comptage des FLOPs (élément par élément compris par défaut)"""
    input_size: int = 224
    flops_convention: str = 'macs'
    include_elementwise: bool = True

    def __post_init__(self):
        if self.input_size < 32 or self.input_size % 32:
            raise ConfigurationError(f"analysis.input_size doit être un multiple de 32: {self.input_size}")
        if self.flops_convention not in ('macs', '2macs'):
            raise ConfigurationError(f"analysis.flops_convention inconnue: {self.flops_convention}")


@dataclass
class LoggingConfig:
    level: str = 'INFO'
    file: str = 'csnet.log'


@dataclass
class RunConfig:
    """Configuration complète d'une exécution"""
    model: CSNetConfig = field(default_factory=CSNetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decay: DecayPolicy = field(default_factory=DecayPolicy)
    prune: PruneConfig = field(default_factory=PruneConfig)
    data: DataConfig = field(default_factory=DataConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)
    out_dir: str = 'runs/default'
    seed: int = 0

    def effective_train(self) -> TrainConfig:
        """Recette d'entraînement, l'affinage de la section prune primant"""
        if self.prune.finetune_epochs is None:
            return self.train
        return self.train.model_copy(update={'finetune_epochs': self.prune.finetune_epochs})


def parse_split(value: str) -> Tuple[int, int]:
    """'H/L' -> (H, L)"""
    try:
        high, low = (int(part) for part in str(value).split('/'))
    except ValueError as e:
        raise ConfigurationError(f"Répartition attendue sous la forme H/L, reçu '{value}'") from e
    return high, low


def _section(label: str, factory, values: Mapping[str, Any]):
    try:
        return factory(**values)
    except ValidationError as e:
        raise ConfigurationError(f"Section '{label}' invalide: {e}") from e
    except TypeError as e:
        raise ConfigurationError(f"Section '{label}': {e}") from e


class ConfigManager:
    """
    Gestionnaire de configuration singleton
    Charge et valide les configurations depuis des fichiers YAML/JSON
    """

    _instance: Optional['ConfigManager'] = None
    _config: Optional[RunConfig] = None

    def __new__(cls) -> 'ConfigManager':
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __init__(self):
        if not hasattr(self, '_initialized'):
            load_dotenv()  # Charge les variables d'environnement
            self._initialized = True

    def load_config(self, config_path: str) -> RunConfig:
        """
        Charge la configuration depuis un fichier YAML ou JSON

        Args:
            config_path: Chemin vers le fichier de configuration

        Returns:
            Instance RunConfig validée
        """
        config_file = Path(config_path)

        if not config_file.exists():
            raise FileNotFoundError(f"Fichier de configuration non trouvé: {config_path}")

        if config_file.suffix.lower() in ('.yaml', '.yml'):
            with open(config_file, 'r', encoding='utf-8') as f:
                raw_config = yaml.safe_load(f) or {}
        elif config_file.suffix.lower() == '.json':
            with open(config_file, 'r', encoding='utf-8') as f:
                raw_config = json.load(f)
        else:
            raise ValueError(f"Format de fichier non supporté: {config_file.suffix}")

        raw_config = self._substitute_env_vars(raw_config)
        self._config = self._validate_and_create_config(raw_config)
        return self._config

    def default_config(self) -> RunConfig:
        """Configuration par défaut (aucun fichier fourni)"""
        self._config = self._validate_and_create_config({})
        return self._config

    def _substitute_env_vars(self, data: Any) -> Any:
        """
        Substitue récursivement les variables d'environnement dans la configuration

        Args:
            data: Données de configuration (dict, list, str, etc.)

        Returns:
            Données avec variables substituées
        """
        if isinstance(data, dict):
            return {key: self._substitute_env_vars(value) for key, value in data.items()}
        elif isinstance(data, list):
            return [self._substitute_env_vars(item) for item in data]
        elif isinstance(data, str):
            # Pattern pour ${VAR_NAME}
            pattern = r'\$\{([^}]+)\}'

            def replace_var(match):
                return os.getenv(match.group(1), match.group(0))  # Garder original si variable non trouvée

            return re.sub(pattern, replace_var, data)
        else:
            return data

    def _validate_and_create_config(self, raw_config: Dict[str, Any]) -> RunConfig:
        """
        Valide et crée l'objet de configuration

        Args:
            raw_config: Configuration brute depuis le fichier

        Returns:
            Instance RunConfig validée
        """
        if not isinstance(raw_config, dict):
            raise ConfigurationError("La configuration doit être un dictionnaire de sections")
        if 'command' in raw_config and 'config' in raw_config:
            # Manifeste d'une exécution précédente
            raw_config = raw_config['config']
        known = {'model', 'train', 'decay', 'prune', 'data', 'analysis', 'experiment', 'logging', 'out_dir', 'seed'}
        unknown = sorted(set(raw_config) - known)
        if unknown:
            raise ConfigurationError(f"Sections inconnues: {unknown}")

        seed = int(raw_config.get('seed', 0))
        train_values = dict(raw_config.get('train') or {})
        train_values.setdefault('seed', seed)

        return RunConfig(
            model=_section('model', CSNetConfig, raw_config.get('model') or {}),
            train=_section('train', TrainConfig, train_values),
            decay=_section('decay', DecayPolicy, raw_config.get('decay') or {}),
            prune=_section('prune', PruneConfig, raw_config.get('prune') or {}),
            data=_section('data', DataConfig, raw_config.get('data') or {}),
            analysis=_section('analysis', AnalysisConfig, raw_config.get('analysis') or {}),
            experiment=_section('experiment', ExperimentConfig, raw_config.get('experiment') or {}),
            logging=_section('logging', LoggingConfig, raw_config.get('logging') or {}),
            out_dir=str(raw_config.get('out_dir', 'runs/default')),
            seed=seed,
        )

    def get_config(self) -> Optional[RunConfig]:
        """Retourne la configuration actuelle"""
        return self._config


def apply_overrides(config: RunConfig, overrides: Mapping[str, Any]) -> RunConfig:
    """
    Applique des valeurs 'section.champ' par-dessus la configuration (les options priment)

    Les valeurs None sont ignorées. train.epochs réduit proportionnellement
    le calendrier de la recette; seed propage la graine à l'entraînement.
    """
    overrides = {key: value for key, value in overrides.items() if value is not None}
    sections: Dict[str, Dict[str, Any]] = {}
    top: Dict[str, Any] = {}
    for key, value in overrides.items():
        if '.' in key:
            section, name = key.split('.', 1)
            sections.setdefault(section, {})[name] = value
        else:
            top[key] = value

    unknown = sorted((set(sections) | set(top)) - {f for f in RunConfig.__dataclass_fields__})
    if unknown:
        raise ConfigurationError(f"Options inconnues: {unknown}")

    updated: Dict[str, Any] = dict(top)
    if 'seed' in top:
        sections.setdefault('train', {}).setdefault('seed', top['seed'])

    for section, values in sections.items():
        current = getattr(config, section)
        if section == 'train' and 'epochs' in values:
            current = current.scaled_to(int(values.pop('epochs')))
        if section == 'model' and isinstance(values.get('split'), str):
            values['split'] = parse_split(values['split'])
        try:
            if hasattr(current, 'model_dump'):
                merged = {**current.model_dump(), **values}
                updated[section] = type(current).model_validate(merged)
            else:
                updated[section] = replace(current, **values)
        except ValidationError as e:
            raise ConfigurationError(f"Option invalide dans '{section}': {e}") from e
        except TypeError as e:
            raise ConfigurationError(f"Option inconnue dans '{section}': {e}") from e

    return replace(config, **updated)


def resolved_dict(config: RunConfig) -> Dict[str, Any]:
    """Configuration entièrement développée (valeurs par défaut comprises) pour le manifeste"""
    return {
        'model': config.model.model_dump(mode='json'),
        'train': config.train.model_dump(mode='json'),
        'decay': config.decay.model_dump(mode='json'),
        'prune': asdict(config.prune),
        'data': asdict(config.data),
        'analysis': asdict(config.analysis),
        'experiment': config.experiment.model_dump(mode='json'),
        'logging': asdict(config.logging),
        'out_dir': config.out_dir,
        'seed': config.seed,
    }


# Instance globale du gestionnaire de configuration
config_manager = ConfigManager()
