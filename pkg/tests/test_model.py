"""
Tests du modèle: ILBlock, extracteur, fusion inter-étages, CSNet complet
"""

import numpy as np
import pytest
from pydantic import ValidationError

from csnet.core.exceptions import ConfigurationError
from csnet.core.gradcheck import grad_check
from csnet.core.tensor import Tensor
from csnet.layers.features import MultiScaleFeature
from csnet.layers.modules import PReLU
from csnet.model import (
    CSNet, CSNetConfig, ILBlock, ILBlockSpec, build_extractor, csf_forward, csnet_forward,
    ilblock_forward, merge_taps, split_channels, tap_layout,
)

from tests.conftest import randomize_norms


def image(rng, batch=2, size=32):
    return Tensor(rng.normal(size=(batch, 3, size, size)))


# =====================================
# CONFIGURATION ET RÉPARTITION
# =====================================

def test_split_channels():
    """Test la répartition des canaux entre haute et basse résolution"""
    assert split_channels(32, (1, 1)) == (16, 16)
    assert split_channels(32, (3, 1)) == (24, 8)
    assert split_channels(32, (1, 0)) == (32, 0)
    assert split_channels(32, (0, 1)) == (0, 32)
    with pytest.raises(ConfigurationError):
        split_channels(32, (0, 0))


def test_config_validation():
    """Test la validation de la structure du réseau"""
    with pytest.raises(ValidationError):
        CSNetConfig(stage_depths=(2, 2, 2, 2))
    with pytest.raises(ValidationError):
        CSNetConfig(stage_widths=(64, 32, 112, 112))
    with pytest.raises(ValidationError):
        CSNetConfig(split=(0, 0))
    with pytest.raises(ValidationError):
        CSNetConfig(csf_channels={3: 32})
    with pytest.raises(ValidationError):
        CSNetConfig(width_multiplier=0.5)


def test_width_multiplier():
    """Test l'élargissement des étages et de la tête"""
    config = CSNetConfig(width_multiplier=2.0)
    assert config.widths() == (64, 128, 224, 224)
    assert config.csf_map() == {1: 64, 2: 64, 4: 64}
    assert config.head_width() == 64


# =====================================
# TAILLE DU MODÈLE
# =====================================

def test_default_parameter_budget():
    """Test que le réseau par défaut reste dans l'enveloppe d'environ 200K paramètres"""
    model = CSNet()
    extractor = model.extractor.num_parameters()
    total = model.num_parameters()
    assert 144_000 <= extractor <= 216_000
    assert 169_000 <= total <= 253_000


def test_parameter_count_independent_of_split(tiny_config):
    """Test que le nombre de paramètres ne dépend pas de la répartition H/L"""
    counts = {
        split: CSNet(tiny_config.model_copy(update={'split': split})).num_parameters()
        for split in ((1, 0), (1, 1), (3, 1), (0, 1))
    }
    assert len(set(counts.values())) == 1, counts


def test_width_multiplier_grows_model():
    """Test qu'un multiplicateur de largeur augmente fortement la taille"""
    base = CSNet().num_parameters()
    wide = CSNet(CSNetConfig(width_multiplier=2.0)).num_parameters()
    assert 3.2 <= wide / base <= 4.2


# =====================================
# PASSE AVANT
# =====================================

@pytest.mark.parametrize("split", [(1, 0), (1, 1), (0, 1)])
def test_forward_shape(tiny_config, rng, split):
    """Test que la carte de saillance a la résolution d'entrée"""
    model = CSNet(tiny_config.model_copy(update={'split': split}), seed=1)
    out = model(image(rng))
    assert out.logits.shape == (2, 1, 32, 32)
    probabilities = out.probabilities
    assert np.all((probabilities > 0) & (probabilities < 1))


def test_forward_rectangular_input(tiny_model, rng):
    """Test une entrée rectangulaire multiple du pas total"""
    out = tiny_model(Tensor(rng.normal(size=(1, 3, 64, 32))))
    assert out.logits.shape == (1, 1, 64, 32)


def test_input_not_divisible_by_stride(tiny_model, rng):
    """Test le refus d'une taille non divisible par 32"""
    with pytest.raises(ConfigurationError):
        tiny_model(image(rng, size=48))
    with pytest.raises(ConfigurationError):
        tiny_model(Tensor(rng.normal(size=(1, 1, 32, 32))))


def test_extractor_taps(tiny_config, rng):
    """Test les résolutions des sorties d'étage"""
    extractor = build_extractor(tiny_config, seed=0)
    taps = extractor(image(rng, batch=1, size=64))
    assert list(taps) == ['stage1.out', 'stage2.out', 'stage3.out', 'stage4.out']
    assert taps['stage1.out'][1].shape == (1, 4, 32, 32)
    assert taps['stage2.out'][1].shape == (1, 4, 16, 16)
    assert taps['stage4.out'][2].shape == (1, 8, 2, 2)


def test_tap_layout_and_merge(tiny_model, rng):
    """Test le regroupement des prises par résolution commune"""
    maps = tiny_model.extractor.tap_channel_maps()
    assert maps == [{1: 4, 2: 4}, {1: 8, 2: 8}, {1: 8, 2: 8}]
    layout = tap_layout(maps)
    assert list(layout) == [1, 2, 4, 8]
    assert layout[2] == [(0, 2, 0, 4), (1, 1, 4, 8)]

    taps = tiny_model.extractor(image(rng, batch=1))
    merged = merge_taps([taps['stage2.out'], taps['stage3.out'], taps['stage4.out']])
    assert merged.channel_map() == {1: 4, 2: 12, 4: 16, 8: 8}
    np.testing.assert_array_equal(merged[2].data[:, :4], taps['stage2.out'][2].data)


def test_csf_requires_three_taps(tiny_model, rng):
    """Test que la CSF exige exactement les trois prises"""
    taps = tiny_model.extractor(image(rng, batch=1))
    with pytest.raises(ConfigurationError):
        csf_forward([taps['stage2.out'], taps['stage3.out']], tiny_model.csf)
    with pytest.raises(ConfigurationError):
        csf_forward({'stage2.out': taps['stage2.out']}, tiny_model.csf)

    out = csf_forward(taps, tiny_model.csf, (32, 32))
    assert out.logits.shape == (1, 1, 32, 32)


def test_csnet_forward_checks_config(tiny_model, tiny_config, rng):
    """Test la cohérence poids / configuration"""
    x = image(rng, batch=1)
    assert csnet_forward(x, tiny_config, tiny_model).logits.shape == (1, 1, 32, 32)
    with pytest.raises(ConfigurationError):
        csnet_forward(x, tiny_config.model_copy(update={'split': (3, 1)}), tiny_model)


def test_same_seed_same_weights(tiny_config):
    """Test le déterminisme de l'initialisation"""
    a = CSNet(tiny_config, seed=4).state_dict()
    b = CSNet(tiny_config, seed=4).state_dict()
    c = CSNet(tiny_config, seed=5).state_dict()
    assert all(np.array_equal(a[name], b[name]) for name in a)
    assert any(not np.array_equal(a[name], c[name]) for name in a)


# =====================================
# ILBLOCK
# =====================================

def test_ilblock_shapes(rng):
    """Test les canaux par échelle en sortie d'un ILBlock"""
    spec = ILBlockSpec.from_ratio((4, 4), 12, (1, 2))
    block = ILBlock(spec, rng)
    x = MultiScaleFeature([
        (1, Tensor(rng.normal(size=(2, 4, 8, 8)))),
        (2, Tensor(rng.normal(size=(2, 4, 4, 4)))),
    ])
    out = ilblock_forward(x, spec, block)
    assert out.channel_map() == {1: 4, 2: 8}

    with pytest.raises(ConfigurationError):
        ilblock_forward(x, ILBlockSpec(in_split=(4, 4), split=(6, 6)), block)
    with pytest.raises(ConfigurationError):
        ilblock_forward(MultiScaleFeature([(1, Tensor(rng.normal(size=(2, 4, 8, 8))))]), spec, block)
    with pytest.raises(ValidationError):
        ILBlockSpec(in_split=(0, 0), split=(2, 2))


def test_ilblock_grad_check(rng):
    """Test le gradient à travers un ILBlock en mode entraînement"""
    block = ILBlock(ILBlockSpec(in_split=(2, 2), split=(2, 2)), rng)
    xh = Tensor(rng.normal(size=(2, 2, 4, 4)))
    xl = Tensor(rng.normal(size=(2, 2, 2, 2)))
    wh = rng.normal(size=(2, 2, 4, 4))
    wl = rng.normal(size=(2, 2, 2, 2))
    params = [block.conv1.kernel(1, 2), block.conv2.kernel(1, 1), block.bn3.branch(2).gamma]

    def op(xh, xl, *_):
        out = block(MultiScaleFeature([(1, xh), (2, xl)]))
        return (out[1] * Tensor(wh)).sum() + (out[2] * Tensor(wl)).sum()

    assert grad_check(op, [xh, xl] + params, max_samples=15) < 1e-5


def test_full_network_grad_check(tiny_model, rng):
    """Test le câblage du gradient dans tout le réseau (inférence, activations linéaires)"""
    model = randomize_norms(tiny_model, seed=2).eval()
    for _, module in model.named_modules():
        if isinstance(module, PReLU):
            module.slope.data[:] = 1.0
    x = image(rng, batch=1)
    weights = rng.normal(size=(1, 1, 32, 32))
    params = [
        model.extractor.stem.conv.weight,
        model.extractor.stages[1].blocks[0].conv1.kernel(2, 1),
        model.csf.fuse.kernel(8, 4),
        model.csf.bn_context.branch(2).gamma,
        model.csf.out.bias,
    ]

    def op(x, *_):
        return (model(x).logits * Tensor(weights)).sum()

    assert grad_check(op, [x] + params, max_samples=8) < 1e-5


# =====================================
# STRUCTURE
# =====================================

def test_layout_round_trip(tiny_model, rng):
    """Test la reconstruction d'un modèle à partir de sa description"""
    blocks = dict(tiny_model.extractor.blocks())
    keep = {1: np.array([0, 2]), 2: np.array([1])}
    blocks['stages.1.blocks.2'].select_channels(keep)
    blocks['stages.1.blocks.3'].conv1.select_inputs(keep)
    tiny_model.csf.select_head({1: np.array([0, 1, 2])})
    tiny_model.csf.out.select_inputs(np.array([0, 1, 2]))

    layout = tiny_model.layout()
    assert layout['blocks']['stages.1.blocks.2'] == [2, 1]
    assert layout['csf']['head'] == 3

    rebuilt = CSNet.from_layout(layout)
    assert rebuilt.layout() == layout
    assert rebuilt.num_parameters() == tiny_model.num_parameters()
    rebuilt.load_state_dict(tiny_model.state_dict())


def test_dynamic_decay_targets_exclude_stem(tiny_model):
    """Test que les cibles dynamiques sont les γ suivant une gOctConv"""
    targets = tiny_model.dynamic_decay_targets()
    assert 'extractor.stem.bn.gamma' not in targets
    assert 'extractor.stages.0.blocks.0.bn1.s1.gamma' in targets
    assert 'csf.bn_head.s1.gamma' in targets
    assert all(name.endswith('.gamma') for name in targets)
    # 17 blocs x 3 BN x 2 échelles + fuse, context (3 échelles) + tête
    assert len(targets) == 17 * 3 * 2 + 3 + 3 + 1


def test_prune_groups(tiny_model):
    """Test les groupes de canaux partagés et leurs consommateurs"""
    groups = tiny_model.prune_groups()
    names = [g.name for g in groups]
    assert len(groups) == 19
    assert names[0] == 'extractor.stages.0.blocks.0'
    assert names[-2:] == ['csf.fuse', 'csf.head']

    last_stage1 = tiny_model.group('extractor.stages.0.blocks.2')
    assert len(last_stage1.consumers) == 1
    last_stage2 = tiny_model.group('extractor.stages.1.blocks.3')
    assert len(last_stage2.consumers) == 2
    assert last_stage2.consumers[1].conv is tiny_model.csf.fuse
    assert last_stage2.consumers[1].inputs == {1: (1, 0), 2: (2, 0)}
    last_stage3 = tiny_model.group('extractor.stages.2.blocks.5')
    assert last_stage3.consumers[1].inputs == {1: (2, 4), 2: (4, 0)}
    last_block = tiny_model.group('extractor.stages.3.blocks.3')
    assert len(last_block.consumers) == 1
    assert tiny_model.group('csf.head').consumers[0].norm is None

    with pytest.raises(ConfigurationError):
        tiny_model.group('nothing')


if __name__ == '__main__':
    pytest.main([__file__])
