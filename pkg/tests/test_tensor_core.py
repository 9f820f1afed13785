"""
Tests du moteur différentiable: tenseur, primitives, compteurs, checkpoint
"""

import json

import numpy as np
import pytest

from csnet.core import counters
from csnet.core.checkpoint import checkpoint_paths, load_checkpoint, save_checkpoint
from csnet.core.exceptions import ConfigurationError, DataError, NumericError
from csnet.core.functional import (
    BatchNormParams, avg_pool2, batch_norm, binary_cross_entropy_with_logits, conv2d,
    global_avg_pool, prelu, upsample_nearest,
)
from csnet.core.gradcheck import grad_check
from csnet.core.tensor import Tensor, concat, is_grad_enabled, no_grad


def naive_conv2d(x, w, b=None, stride=1, padding=0, dilation=1, groups=1):
    """Convolution de référence par boucles explicites"""
    n, cin, h, width = x.shape
    cout, cin_g, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    h_out = (h + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    w_out = (width + 2 * padding - dilation * (k - 1) - 1) // stride + 1
    out = np.zeros((n, cout, h_out, w_out))
    per_group = cout // groups
    for o in range(cout):
        g = o // per_group
        for i in range(h_out):
            for j in range(w_out):
                for c in range(cin_g):
                    for u in range(k):
                        for v in range(k):
                            out[:, o, i, j] += (
                                w[o, c, u, v]
                                * xp[:, g * cin_g + c, i * stride + u * dilation, j * stride + v * dilation]
                            )
        if b is not None:
            out[:, o] += b[o]
    return out


def weighted_sum(out, weights):
    return (out * Tensor(weights)).sum()


# =====================================
# TENSEUR ET GRAPHE
# =====================================

def test_tensor_is_float64():
    """Test que les données sont stockées en double précision"""
    t = Tensor([[1, 2], [3, 4]])
    assert t.data.dtype == np.float64
    assert t.shape == (2, 2)
    assert t.grad is None


def test_gradient_accumulates_over_reuse():
    """Test l'accumulation du gradient quand un tenseur est réutilisé"""
    x = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    y = (x * x + x).sum()
    y.backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_subtraction_and_broadcast():
    """Test la soustraction avec diffusion d'une constante"""
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    (x - b).sum().backward()
    np.testing.assert_allclose(x.grad, np.ones((2, 3)))
    np.testing.assert_allclose(b.grad, -2 * np.ones(3))


def test_backward_requires_scalar():
    """Test que backward() sans gradient exige un scalaire"""
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ConfigurationError):
        (x * 2.0).backward()


def test_no_grad_disables_graph():
    """Test que no_grad n'enregistre pas le graphe"""
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        assert not is_grad_enabled()
        y = x * 2.0
    assert is_grad_enabled()
    assert not y.requires_grad
    assert y.creator is None


def test_non_finite_raises_numeric_error():
    """Test qu'une valeur non finie lève NumericError"""
    x = Tensor(np.array([1.0, np.inf]))
    with pytest.raises(NumericError):
        x + 1.0


def test_concat_splits_gradient():
    """Test la concaténation de canaux et la répartition du gradient"""
    a = Tensor(np.ones((1, 2, 2, 2)), requires_grad=True)
    b = Tensor(np.ones((1, 3, 2, 2)), requires_grad=True)
    out = concat([a, b], axis=1)
    assert out.shape == (1, 5, 2, 2)
    weights = np.arange(20, dtype=float).reshape(1, 5, 2, 2)
    weighted_sum(out, weights).backward()
    np.testing.assert_allclose(a.grad, weights[:, :2])
    np.testing.assert_allclose(b.grad, weights[:, 2:])

    with pytest.raises(ConfigurationError):
        concat([])


# =====================================
# CONVOLUTION
# =====================================

@pytest.mark.parametrize("stride,padding,dilation,groups", [
    (1, 1, 1, 1),
    (2, 1, 1, 1),
    (1, 2, 2, 1),
    (1, 1, 1, 2),
    (1, 1, 1, 4),
])
def test_conv2d_matches_loop_oracle(rng, stride, padding, dilation, groups):
    """Test conv2d contre une convolution par boucles"""
    x = rng.normal(size=(2, 4, 6, 6))
    w = rng.normal(size=(4, 4 // groups, 3, 3))
    b = rng.normal(size=4)
    out = conv2d(Tensor(x), Tensor(w), Tensor(b), stride=stride, padding=padding, dilation=dilation, groups=groups)
    expected = naive_conv2d(x, w, b, stride=stride, padding=padding, dilation=dilation, groups=groups)
    np.testing.assert_allclose(out.data, expected, atol=1e-10)


def test_conv2d_pointwise(rng):
    """Test le cas 1x1 (chemin sans im2col)"""
    x = rng.normal(size=(1, 3, 4, 4))
    w = rng.normal(size=(5, 3, 1, 1))
    out = conv2d(Tensor(x), Tensor(w))
    np.testing.assert_allclose(out.data, naive_conv2d(x, w), atol=1e-10)


def test_conv2d_validation(rng):
    """Test les erreurs de forme de conv2d"""
    x = Tensor(rng.normal(size=(1, 3, 4, 4)))
    with pytest.raises(ConfigurationError):
        conv2d(x, Tensor(rng.normal(size=(4, 3, 3, 3))), groups=2)
    with pytest.raises(ConfigurationError):
        conv2d(x, Tensor(rng.normal(size=(4, 2, 3, 3))))
    with pytest.raises(ConfigurationError):
        conv2d(x, Tensor(rng.normal(size=(4, 3, 3, 3))), dilation=3)
    with pytest.raises(ConfigurationError):
        conv2d(x, Tensor(rng.normal(size=(4, 3, 3, 3))), bias=Tensor(np.zeros(3)), padding=1)


@pytest.mark.parametrize("stride,dilation,groups", [(1, 1, 1), (2, 1, 1), (1, 2, 1), (1, 1, 2)])
def test_conv2d_grad_check(rng, stride, dilation, groups):
    """Test le gradient de conv2d par différences finies"""
    x = Tensor(rng.normal(size=(2, 4, 6, 6)))
    w = Tensor(rng.normal(size=(4, 4 // groups, 3, 3)))
    b = Tensor(rng.normal(size=4))
    padding = dilation
    out_shape = conv2d(x, w, b, stride=stride, padding=padding, dilation=dilation, groups=groups).shape
    weights = rng.normal(size=out_shape)

    def op(x, w, b):
        return weighted_sum(conv2d(x, w, b, stride=stride, padding=padding, dilation=dilation, groups=groups), weights)

    assert grad_check(op, [x, w, b], max_samples=40) < 1e-6


# =====================================
# BATCHNORM
# =====================================

def make_bn_params(rng, channels):
    return BatchNormParams(
        gamma=Tensor(rng.uniform(0.5, 1.5, channels)),
        beta=Tensor(rng.normal(size=channels)),
        running_mean=np.zeros(channels),
        running_var=np.ones(channels),
    )


def test_batch_norm_training_statistics(rng):
    """Test la normalisation par les statistiques du batch et la mise à jour courante"""
    x = rng.normal(loc=3.0, scale=2.0, size=(4, 3, 5, 5))
    params = make_bn_params(rng, 3)
    out = batch_norm(Tensor(x), params, training=True).data

    np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), params.beta.data, atol=1e-10)
    var = x.var(axis=(0, 2, 3))
    np.testing.assert_allclose(out.var(axis=(0, 2, 3)), params.gamma.data ** 2 * var / (var + 1e-5), rtol=1e-8)

    count = 4 * 5 * 5
    np.testing.assert_allclose(params.running_mean, 0.1 * x.mean(axis=(0, 2, 3)))
    np.testing.assert_allclose(params.running_var, 0.9 + 0.1 * var * count / (count - 1))


def test_batch_norm_inference_uses_running_stats(rng):
    """Test qu'en inférence la BatchNorm est une transformation affine fixe"""
    x = rng.normal(size=(2, 3, 4, 4))
    params = make_bn_params(rng, 3)
    params.running_mean[:] = [0.5, -0.5, 1.0]
    params.running_var[:] = [2.0, 0.5, 1.0]
    out = batch_norm(Tensor(x), params, training=False).data

    scale = params.gamma.data / np.sqrt(params.running_var + 1e-5)
    expected = (x - params.running_mean[None, :, None, None]) * scale[None, :, None, None] + params.beta.data[None, :, None, None]
    np.testing.assert_allclose(out, expected, atol=1e-12)
    np.testing.assert_allclose(params.running_mean, [0.5, -0.5, 1.0])


def test_batch_norm_params_validation(rng):
    """Test la validation des paramètres de BatchNorm"""
    with pytest.raises(ConfigurationError):
        BatchNormParams(gamma=Tensor(np.ones(3)), beta=Tensor(np.zeros(2)),
                        running_mean=np.zeros(3), running_var=np.ones(3))
    params = make_bn_params(rng, 3)
    with pytest.raises(ConfigurationError):
        batch_norm(Tensor(np.ones((1, 4, 2, 2))), params, training=True)


@pytest.mark.parametrize("training", [True, False])
def test_batch_norm_grad_check(rng, training):
    """Test le gradient de batch_norm (entraînement et inférence)"""
    x = Tensor(rng.normal(size=(3, 2, 3, 3)))
    params = make_bn_params(rng, 2)
    params.running_var[:] = [0.7, 1.3]
    weights = rng.normal(size=x.shape)

    def op(x, gamma, beta):
        return weighted_sum(batch_norm(x, params, training=training), weights)

    assert grad_check(op, [x, params.gamma, params.beta]) < 1e-6


# =====================================
# ACTIVATION, CHANGEMENTS D'ÉCHELLE, PERTE
# =====================================

def test_prelu_values_and_gradient(rng):
    """Test PReLU: identité pour x >= 0, pente par canal sinon"""
    x = np.array([[[[1.0, -2.0]], [[-1.0, 3.0]]]])
    slope = Tensor(np.array([0.25, 0.5]))
    out = prelu(Tensor(x), slope).data
    np.testing.assert_allclose(out, [[[[1.0, -0.5]], [[-0.5, 3.0]]]])

    xt = Tensor(rng.normal(size=(2, 3, 4, 4)))
    slope = Tensor(rng.uniform(0.1, 0.4, 3))
    weights = rng.normal(size=xt.shape)
    assert grad_check(lambda x, s: weighted_sum(prelu(x, s), weights), [xt, slope]) < 1e-6


def test_avg_pool_and_upsample(rng):
    """Test la moyenne 2x2 et le suréchantillonnage au plus proche voisin"""
    x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
    pooled = avg_pool2(Tensor(x)).data
    np.testing.assert_allclose(pooled, [[[[2.5, 4.5], [10.5, 12.5]]]])

    up = upsample_nearest(Tensor(pooled), 2).data
    assert up.shape == (1, 1, 4, 4)
    np.testing.assert_allclose(up[0, 0, :2, :2], 2.5)
    identity = Tensor(x)
    assert upsample_nearest(identity, 1) is identity

    with pytest.raises(ConfigurationError):
        avg_pool2(Tensor(np.ones((1, 1, 3, 4))))

    xt = Tensor(rng.normal(size=(2, 2, 4, 4)))
    w_pool = rng.normal(size=(2, 2, 2, 2))
    w_up = rng.normal(size=(2, 2, 8, 8))
    assert grad_check(lambda t: weighted_sum(avg_pool2(t), w_pool), xt) < 1e-6
    assert grad_check(lambda t: weighted_sum(upsample_nearest(t, 2), w_up), xt) < 1e-6


def test_global_avg_pool(rng):
    """Test la moyenne spatiale globale"""
    x = rng.normal(size=(2, 3, 4, 5))
    out = global_avg_pool(Tensor(x)).data
    np.testing.assert_allclose(out, x.mean(axis=(2, 3)))
    weights = rng.normal(size=(2, 3))
    assert grad_check(lambda t: weighted_sum(global_avg_pool(t), weights), Tensor(x)) < 1e-6


def test_bce_with_logits(rng):
    """Test l'entropie croisée binaire et son gradient"""
    logits = rng.normal(scale=3.0, size=(2, 1, 4, 4))
    target = (rng.random((2, 1, 4, 4)) > 0.5).astype(float)
    loss = binary_cross_entropy_with_logits(Tensor(logits), Tensor(target)).item()
    p = 1 / (1 + np.exp(-logits))
    expected = -(target * np.log(p) + (1 - target) * np.log(1 - p)).mean()
    assert loss == pytest.approx(expected, rel=1e-10)

    # Stable pour des logits extrêmes
    big = binary_cross_entropy_with_logits(Tensor(np.array([800.0, -800.0])), Tensor(np.array([1.0, 0.0])))
    assert big.item() == pytest.approx(0.0, abs=1e-12)

    target_t = Tensor(target)
    assert grad_check(lambda t: binary_cross_entropy_with_logits(t, target_t), Tensor(logits)) < 1e-6


def test_grad_check_validation():
    """Test les garde-fous de grad_check"""
    x = Tensor(np.ones(3))
    with pytest.raises(ConfigurationError):
        grad_check(lambda t: t.sum(), x, step=1e-2)
    with pytest.raises(ConfigurationError):
        grad_check(lambda t: t * 2.0, x)


# =====================================
# COMPTEURS
# =====================================

def test_counters_record_conv_macs_and_elementwise(rng):
    """Test le comptage des MACs de convolution et des opérations élémentaires"""
    x = Tensor(rng.normal(size=(2, 4, 8, 8)))
    w = Tensor(rng.normal(size=(6, 2, 3, 3)))
    with counters.count_ops() as outer:
        with counters.count_ops() as inner:
            out = conv2d(x, w, padding=1, groups=2)
        pooled = avg_pool2(out)
        upsample_nearest(pooled, 2)

    macs = 2 * 6 * 8 * 8 * 3 * 3 * 2
    assert inner.macs == macs
    assert outer.macs == macs
    assert outer.elementwise()[counters.POOL] == 2 * 6 * 4 * 4
    assert outer.elementwise()[counters.UPSAMPLE] == 2 * 6 * 8 * 8
    assert inner.elementwise()[counters.POOL] == 0

    # Hors contexte: rien n'est compté
    conv2d(x, w, padding=1, groups=2)
    assert outer.macs == macs


# =====================================
# CHECKPOINT
# =====================================

def test_checkpoint_round_trip(temp_dir, rng):
    """Test l'écriture et la relecture d'un checkpoint"""
    state = {'a.weight': rng.normal(size=(3, 2, 3, 3)), 'a.bias': rng.normal(size=3), 'n': np.array(4.0)}
    manifest_path = save_checkpoint(str(temp_dir / 'ckpt'), state, {'split': [1, 1]})
    assert manifest_path == temp_dir / 'ckpt.json'
    assert (temp_dir / 'ckpt.bin').stat().st_size == (54 + 3 + 1) * 8

    loaded, metadata = load_checkpoint(str(temp_dir / 'ckpt.bin'))
    assert list(loaded) == list(state)
    for name in state:
        np.testing.assert_array_equal(loaded[name], state[name])
    assert metadata == {'split': [1, 1]}


def test_checkpoint_errors(temp_dir):
    """Test les erreurs de relecture de checkpoint"""
    with pytest.raises(FileNotFoundError):
        load_checkpoint(str(temp_dir / 'absent'))

    save_checkpoint(str(temp_dir / 'ckpt'), {'w': np.ones(4)})
    bin_path, manifest_path = checkpoint_paths(str(temp_dir / 'ckpt'))
    bin_path.write_bytes(bin_path.read_bytes()[:16])
    with pytest.raises(DataError):
        load_checkpoint(str(temp_dir / 'ckpt'))

    manifest = json.loads(manifest_path.read_text(encoding='utf-8'))
    manifest['format'] = 'other'
    manifest_path.write_text(json.dumps(manifest), encoding='utf-8')
    with pytest.raises(ConfigurationError):
        load_checkpoint(str(temp_dir / 'ckpt'))


if __name__ == '__main__':
    pytest.main([__file__])
