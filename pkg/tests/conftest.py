"""
Configuration pytest et fixtures communes
"""

import os
import tempfile
from pathlib import Path

import numpy as np
import pytest

from csnet.layers.modules import BatchNorm2d
from csnet.model.csnet import CSNet, CSNetConfig


@pytest.fixture
def temp_dir():
    """Crée un répertoire temporaire pour les tests"""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def mock_env_vars():
    """Mock des variables d'environnement pour les tests"""
    original_env = dict(os.environ)

    test_env = {
        'CSNET_IMAGES': '/data/ecssd/images',
        'CSNET_MASKS': '/data/ecssd/masks',
    }
    os.environ.update(test_env)

    yield test_env

    # Restaurer l'environnement original
    os.environ.clear()
    os.environ.update(original_env)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config():
    """Réseau réduit: mêmes profondeurs, largeurs minimales"""
    return CSNetConfig(
        stage_widths=(8, 8, 16, 16),
        csf_channels={1: 8, 2: 8, 4: 8},
        head_channels=8,
    )


@pytest.fixture
def tiny_model(tiny_config):
    return CSNet(tiny_config, seed=0)


def randomize_norms(model, seed: int = 0):
    """γ, β et statistiques courantes aléatoires (inférence non triviale)"""
    rng = np.random.default_rng(seed)
    for _, module in model.named_modules():
        if isinstance(module, BatchNorm2d):
            n = module.channels
            module.gamma.data[:] = rng.uniform(0.5, 1.5, n)
            module.beta.data[:] = rng.normal(0.0, 0.2, n)
            module.running_mean[:] = rng.normal(0.0, 0.2, n)
            module.running_var[:] = rng.uniform(0.5, 1.5, n)
    return model


@pytest.fixture
def trained_like_model(tiny_model):
    """Modèle tiny en mode inférence avec des BatchNorm aléatoires"""
    return randomize_norms(tiny_model, seed=5).eval()


@pytest.fixture
def tiny_dataset():
    from csnet.data.datasets import synth_dataset
    return synth_dataset(6, 32, seed=3)
