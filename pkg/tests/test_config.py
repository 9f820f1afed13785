"""
Tests pour le système de configuration
"""

import json
from pathlib import Path

import pytest
import yaml

from csnet.config.config_manager import (
    ConfigManager, RunConfig, apply_overrides, parse_split, resolved_dict,
)
from csnet.core.exceptions import ConfigurationError


@pytest.fixture
def temp_config_file(temp_dir):
    """Crée un fichier de configuration temporaire pour les tests"""
    config_data = {
        'seed': 7,
        'out_dir': str(temp_dir / 'run'),
        'model': {'split': [1, 3], 'width_multiplier': 2.0},
        'train': {'batch_size': 8, 'epochs': 30, 'lr_drop_epochs': [20, 25], 'finetune_epochs': 2},
        'decay': {'lambda_dyn': 1.5},
        'prune': {'criterion': 'l1_norm', 'tau': 1e-5},
        'data': {'synth': 50, 'size': 64},
    }
    path = temp_dir / 'config.yaml'
    with open(path, 'w', encoding='utf-8') as f:
        yaml.dump(config_data, f)
    return path


def test_config_manager_singleton():
    """Test que ConfigManager est un singleton"""
    manager1 = ConfigManager()
    manager2 = ConfigManager()
    assert manager1 is manager2


def test_load_valid_config(temp_config_file):
    """Test le chargement d'une configuration valide"""
    config = ConfigManager().load_config(str(temp_config_file))

    assert isinstance(config, RunConfig)
    assert config.seed == 7
    assert config.train.seed == 7
    assert config.model.split == (1, 3)
    assert config.model.width_multiplier == 2.0
    assert config.train.batch_size == 8
    assert config.decay.lambda_dyn == 1.5
    assert config.decay.lambda_std == 5e-3
    assert config.prune.criterion == 'l1_norm'
    assert config.data.synth == 50
    assert ConfigManager().get_config() is config


def test_load_json_config(temp_dir):
    """Test le chargement d'un fichier JSON"""
    path = temp_dir / 'config.json'
    path.write_text(json.dumps({'prune': {'ratio': 0.5}}), encoding='utf-8')
    config = ConfigManager().load_config(str(path))
    assert config.prune.ratio == 0.5
    assert config.train.epochs == 300


def test_load_nonexistent_config():
    """Test le chargement d'un fichier inexistant"""
    with pytest.raises(FileNotFoundError):
        ConfigManager().load_config('nonexistent.yaml')


def test_unsupported_format(temp_dir):
    """Test le refus d'une extension inconnue"""
    path = temp_dir / 'config.toml'
    path.write_text("seed = 1", encoding='utf-8')
    with pytest.raises(ValueError):
        ConfigManager().load_config(str(path))


def test_env_var_substitution(temp_dir, mock_env_vars):
    """Test la substitution des variables ${VAR}"""
    path = temp_dir / 'config.yaml'
    path.write_text(
        "data:\n  images_dir: ${CSNET_IMAGES}\n  masks_dir: ${CSNET_MASKS}\n  size: 64\n",
        encoding='utf-8',
    )
    config = ConfigManager().load_config(str(path))
    assert config.data.images_dir == mock_env_vars['CSNET_IMAGES']
    assert config.data.masks_dir == mock_env_vars['CSNET_MASKS']


def test_config_validation():
    """Test la validation des configurations"""
    manager = ConfigManager()

    config = manager._validate_and_create_config({})
    assert config.train.batch_size == 24
    assert config.prune.tau == 1e-6

    with pytest.raises(ConfigurationError):
        manager._validate_and_create_config({'prune': {'tau': 0.0}})
    with pytest.raises(ConfigurationError):
        manager._validate_and_create_config({'prune': {'criterion': 'random'}})
    with pytest.raises(ConfigurationError):
        manager._validate_and_create_config({'model': {'width_multiplier': 0.5}})
    with pytest.raises(ConfigurationError):
        manager._validate_and_create_config({'unknown_section': {}})
    with pytest.raises(ConfigurationError):
        manager._validate_and_create_config({'data': {'size': 50}})
    with pytest.raises(ConfigurationError):
        manager._validate_and_create_config({'prune': {'fold_beta_threshold': -1.0}})
    with pytest.raises(ConfigurationError):
        manager._validate_and_create_config({'decay': {'coupling': 'sgd'}})
    with pytest.raises(ConfigurationError):
        manager._validate_and_create_config({'experiment': {'seeds': []}})


def test_apply_overrides_flags_win(temp_config_file):
    """Test que les options de la ligne de commande priment sur le fichier"""
    config = ConfigManager().load_config(str(temp_config_file))
    updated = apply_overrides(config, {
        'train.lr': 1e-3,
        'decay.lambda_dyn': None,
        'prune.tau': 1e-4,
        'model.split': '3/1',
        'seed': 11,
    })
    assert updated.train.lr == 1e-3
    assert updated.decay.lambda_dyn == 1.5
    assert updated.prune.tau == 1e-4
    assert updated.model.split == (3, 1)
    assert updated.seed == 11
    assert updated.train.seed == 11
    # Original inchangé
    assert config.train.lr == 1e-4


def test_apply_overrides_decay_and_experiment():
    """Test les options de couplage, de comptage et de campagne"""
    config = ConfigManager().default_config()
    assert config.decay.coupling == 'lr'
    assert config.analysis.include_elementwise is True
    updated = apply_overrides(config, {
        'decay.coupling': 'step',
        'analysis.include_elementwise': False,
        'experiment.seeds': [1, 2],
        'experiment.prune_ratio': 0.25,
    })
    assert updated.decay.coupling == 'step'
    assert updated.analysis.include_elementwise is False
    assert updated.experiment.seeds == [1, 2]
    assert updated.experiment.prune_ratio == 0.25
    assert resolved_dict(updated)['experiment']['seeds'] == [1, 2]


def test_apply_overrides_scales_schedule():
    """Test la réduction proportionnelle du calendrier avec train.epochs"""
    config = ConfigManager().default_config()
    updated = apply_overrides(config, {'train.epochs': 30})
    assert updated.train.epochs == 30
    assert updated.train.lr_drop_epochs == [20, 25]
    assert updated.train.finetune_epochs == 2


def test_apply_overrides_errors():
    """Test les options invalides"""
    config = ConfigManager().default_config()
    with pytest.raises(ConfigurationError):
        apply_overrides(config, {'prune.tau': -1.0})
    with pytest.raises(ConfigurationError):
        apply_overrides(config, {'nothing.here': 1})
    with pytest.raises(ConfigurationError):
        apply_overrides(config, {'prune.unknown': 1})


def test_parse_split():
    """Test l'analyse des répartitions H/L"""
    assert parse_split('1/0') == (1, 0)
    assert parse_split('5/5') == (5, 5)
    with pytest.raises(ConfigurationError):
        parse_split('half')


def test_toy_config_loads():
    """Test la configuration de la campagne réduite livrée avec le projet"""
    config = ConfigManager().load_config(str(Path(__file__).parent.parent / 'config_toy.yaml'))
    assert config.train.epochs == 30
    assert config.train.lr == 1e-4
    assert config.train.lr_drop_epochs == [20, 25]
    assert config.data.synth == 500 and config.data.size == 64
    assert config.decay.coupling == 'grad'
    assert config.experiment.seeds == [7, 8, 9]


def test_resolved_dict_reloads(temp_dir, temp_config_file):
    """Test qu'un manifeste suffit à reproduire la configuration"""
    config = ConfigManager().load_config(str(temp_config_file))
    manifest = {'command': 'train', 'config': resolved_dict(config)}
    assert manifest['config']['train']['lr_drop_epochs'] == [20, 25]
    assert manifest['config']['prune']['fold_beta_threshold'] == 1e-4

    path = temp_dir / 'manifest.json'
    path.write_text(json.dumps(manifest), encoding='utf-8')
    reloaded = ConfigManager().load_config(str(path))
    assert resolved_dict(reloaded) == resolved_dict(config)


if __name__ == '__main__':
    pytest.main([__file__])
