"""
Tests de l'analyse de complexité: paramètres, MACs, balayages et tableau
"""

import json

import pytest

from csnet.analysis.complexity import (
    SPLIT_SWEEP, WIDTH_SWEEP, analyze, conv_macs, count_flops, count_params, format_table,
    goctconv_cost, measure_ops, sweep, to_flops, write_json,
)
from csnet.core.exceptions import ConfigurationError
from csnet.layers.goctconv import GOctConvSpec
from csnet.layers.modules import Conv2d
from csnet.model.csnet import CSNet, CSNetConfig


def test_conv_params_and_macs():
    """Test les formules de base: paramètres d'une convolution et MACs d'une 1x1"""
    assert count_params(Conv2d(4, 8, 3, bias=True)) == 296
    assert conv_macs(64, 64, 1, 56, 56) == 12_845_056
    spec = GOctConvSpec.build({1: 64}, {1: 64}, kernel=1)
    assert goctconv_cost(spec, (56, 56)).macs == 12_845_056


def test_goctconv_cost_counts_resampling():
    """Test qu'un chemin croisé est compté à la résolution la plus faible, rééchantillonnage compris"""
    spec = GOctConvSpec.build({1: 4, 2: 6}, {1: 8, 2: 2}, kernel=3)
    cost = goctconv_cost(spec, (16, 16))
    expected = (
        conv_macs(4, 8, 3, 16, 16)      # 1 -> 1
        + conv_macs(4, 2, 3, 8, 8)      # 1 -> 2, après sous-échantillonnage
        + conv_macs(6, 8, 3, 8, 8)      # 2 -> 1, avant sur-échantillonnage
        + conv_macs(6, 2, 3, 8, 8)      # 2 -> 2
    )
    assert cost.macs == expected
    assert cost.elementwise['pool'] == 4 * 8 * 8
    assert cost.elementwise['upsample'] == 8 * 16 * 16
    assert cost.elementwise['add'] == 8 * 16 * 16 + 2 * 8 * 8


def test_reference_macs_at_224():
    """Test les MACs de référence de l'extracteur et de CSNet à 224 x 224"""
    assert analyze(CSNetConfig(split=(1, 0)), 224, scope='extractor').macs == 206_148_096
    assert analyze(CSNetConfig(split=(0, 1)), 224, scope='extractor').macs == 59_665_536
    assert analyze(CSNetConfig(split=(0, 1)), 224).macs == 74_969_216


def test_flops_include_elementwise_ops():
    """Test que le total FLOPs ajoute BN, PReLU, rééchantillonnages et sommes aux MACs"""
    config = CSNetConfig(split=(1, 0))
    report = analyze(config, 224, scope='extractor')
    assert report.elementwise['add'] == 0
    assert report.elementwise['pool'] > 0 and report.elementwise['batch_norm'] > 0
    assert report.flops == report.macs + sum(report.elementwise.values())
    assert count_flops(config, 224, scope='extractor') == report.flops
    assert count_flops(config, 224, scope='extractor', include_elementwise=False) == 206_148_096

    two_scale = analyze(CSNetConfig(split=(1, 1)), 224)
    assert two_scale.elementwise['add'] > 0
    assert two_scale.to_dict()['include_elementwise'] is True


def test_flops_match_instrumented_forward(tiny_config):
    """Test que le total analytique et celui des compteurs coïncident"""
    model = CSNet(tiny_config.model_copy(update={'split': (1, 1)}), seed=0)
    measured = measure_ops(model, 64)
    assert count_flops(model, 64) == measured.flops()
    assert count_flops(model, 64, convention='2macs') == measured.flops('2macs')
    assert count_flops(model, 64, include_elementwise=False) == measured.flops(include_elementwise=False)


def test_model_sizes():
    """Test les tailles de référence du réseau et de l'extracteur"""
    assert count_params(CSNetConfig()) == 213_057
    report = analyze(CSNetConfig(), 224, scope='extractor')
    assert report.params == 178_176
    assert report.method == 'Extractor'


def test_analysis_matches_forward_pass(tiny_config):
    """Test le comptage analytique contre une passe avant instrumentée"""
    for split in [(1, 0), (1, 1), (3, 1), (0, 1)]:
        config = tiny_config.model_copy(update={'split': split})
        model = CSNet(config, seed=0)
        for size in (32, 64):
            report = analyze(model, size)
            measured = measure_ops(model, size)
            assert report.macs == measured.macs, (split, size)
            assert report.elementwise == measured.elementwise(), (split, size)
            assert report.params == model.num_parameters()


def test_analysis_matches_forward_pass_full_width():
    """Test le recoupement sur le réseau de référence à 64 x 64"""
    model = CSNet(CSNetConfig(), seed=0)
    assert analyze(model, 64).macs == measure_ops(model, 64).macs
    assert model.training


def test_input_scaling():
    """Test que doubler la taille d'entrée multiplie les opérations par quatre"""
    config = CSNetConfig()
    small, large = analyze(config, 224), analyze(config, 448)
    assert large.macs == 4 * small.macs
    assert large.elementwise == {k: 4 * v for k, v in small.elementwise.items()}
    assert large.params == small.params


def test_split_sweep():
    """Test le balayage des répartitions: paramètres constants, FLOPs décroissants"""
    table = sweep(CSNetConfig(), 'split')
    assert [row.split for row in table.rows] == list(SPLIT_SWEEP)
    assert len({row.params for row in table.rows}) == 1
    flops = [row.flops for row in table.rows]
    assert all(a > b for a, b in zip(flops, flops[1:]))

    extractor = sweep(CSNetConfig(), 'split', scope='extractor')
    extractor_flops = [row.flops for row in extractor.rows]
    assert all(a > b for a, b in zip(extractor_flops, extractor_flops[1:]))

    ratio = table.rows[-1].flops / extractor.rows[0].flops
    assert 0.34 <= ratio <= 0.54


def test_width_sweep():
    """Test le balayage du multiplicateur de largeur"""
    table = sweep(CSNetConfig(), 'width')
    assert [row.width_multiplier for row in table.rows] == list(WIDTH_SWEEP)
    params = [row.params for row in table.rows]
    assert params[0] < params[1] < params[2]
    assert 3.2 <= params[2] / params[0] <= 4.2


def test_sweep_validation():
    """Test les balayages vides et les axes inconnus"""
    assert sweep(CSNetConfig(), 'split', values=[]).rows == []
    with pytest.raises(ConfigurationError):
        sweep(CSNetConfig(), 'depth')


def test_flops_convention():
    """Test la convention 2 FLOPs par MAC"""
    config = CSNetConfig(split=(1, 0))
    report = analyze(config, 224)
    assert count_flops(config, 224, convention='2macs') == 2 * report.macs + sum(report.elementwise.values())
    assert count_flops(config, 224, convention='2macs', include_elementwise=False) == 2 * report.macs
    assert to_flops(10, '2macs') == 20
    with pytest.raises(ConfigurationError):
        to_flops(10, 'flops')


@pytest.mark.parametrize("size", [0, 48, 100])
def test_invalid_input_size(size):
    """Test le refus des tailles non multiples du pas total"""
    with pytest.raises(ConfigurationError):
        analyze(CSNetConfig(), size)


def test_extractor_scope_only():
    """Test qu'un extracteur seul exige la portée extracteur"""
    extractor = CSNet(CSNetConfig(), seed=0).extractor
    with pytest.raises(ConfigurationError):
        analyze(extractor, 224)
    assert analyze(extractor, 224, scope='extractor').params == 178_176


def test_format_table_and_json(temp_dir):
    """Test le tableau texte et l'export JSON"""
    table = sweep(CSNetConfig(), 'split', values=[(1, 0), (0, 1)])
    text = format_table(table.rows)
    lines = text.splitlines()
    assert lines[0].split() == ['Method', 'Split', 'Width', 'PARM.', 'FLOPs']
    assert len(lines) == 4
    assert 'CSNet' in lines[2] and '1/0' in lines[2] and 'x1' in lines[2]
    assert '213K' in lines[2]

    empty = format_table([])
    assert len(empty.splitlines()) == 2

    path = write_json(table.to_dict(), temp_dir / 'out' / 'sweep.json')
    payload = json.loads(path.read_text(encoding='utf-8'))
    assert payload['axis'] == 'split'
    assert payload['rows'][1]['split'] == '0/1'
    assert payload['rows'][1]['macs'] == 74_969_216


if __name__ == '__main__':
    pytest.main([__file__])
