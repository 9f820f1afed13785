"""
Primitives neuronales différentiables
conv2d (im2col par découpage strié + einsum), batch_norm, prelu,
avg_pool2, upsample_nearest, global_avg_pool, entropie croisée binaire
"""

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from . import counters
from .exceptions import ConfigurationError
from .tensor import Function, Tensor

logger = logging.getLogger(__name__)

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


# =====================================
# CONVOLUTION
# =====================================

def conv_output_size(size: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    """Taille de sortie: floor((H + 2p - d(k-1) - 1) / s) + 1"""
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


def same_padding(kernel: int, dilation: int = 1) -> int:
    """Padding conservant la résolution pour un noyau impair"""
    return dilation * (kernel - 1) // 2


def _im2col(xp: np.ndarray, kernel: int, stride: int, dilation: int, h_out: int, w_out: int) -> np.ndarray:
    n, c = xp.shape[:2]
    cols = np.empty((n, c, kernel, kernel, h_out, w_out), dtype=xp.dtype)
    for i in range(kernel):
        top = i * dilation
        for j in range(kernel):
            left = j * dilation
            cols[:, :, i, j] = xp[:, :, top:top + stride * h_out:stride, left:left + stride * w_out:stride]
    return cols


def _col2im(dcols: np.ndarray, padded_shape: Tuple[int, ...], stride: int, dilation: int) -> np.ndarray:
    kernel, h_out, w_out = dcols.shape[2], dcols.shape[4], dcols.shape[5]
    dxp = np.zeros(padded_shape, dtype=dcols.dtype)
    for i in range(kernel):
        top = i * dilation
        for j in range(kernel):
            left = j * dilation
            dxp[:, :, top:top + stride * h_out:stride, left:left + stride * w_out:stride] += dcols[:, :, i, j]
    return dxp


class Conv2dFunction(Function):
    def forward(self, x, weight, *bias, stride=1, padding=0, dilation=1, groups=1):
        n, cin, h, w = x.shape
        cout, cin_g, kernel, _ = weight.shape
        self.params = (stride, padding, dilation, groups)
        self.input_shape = x.shape
        self.has_bias = bool(bias)

        h_out = conv_output_size(h, kernel, stride, padding, dilation)
        w_out = conv_output_size(w, kernel, stride, padding, dilation)
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        self.padded_shape = xp.shape

        if kernel == 1 and stride == 1:
            cols = xp[:, :, None, None, :, :]
        else:
            cols = _im2col(xp, kernel, stride, dilation, h_out, w_out)
        self.cols = cols.reshape(n, groups, cin_g, kernel, kernel, h_out, w_out)
        self.weight_g = weight.reshape(groups, cout // groups, cin_g, kernel, kernel)

        out = np.einsum('ngcijhw,gocij->ngohw', self.cols, self.weight_g, optimize=True)
        out = out.reshape(n, cout, h_out, w_out)
        if bias:
            out = out + bias[0][None, :, None, None]

        counters.record(counters.CONV, n * cout * h_out * w_out * kernel * kernel * cin_g)
        return out

    def backward(self, grad):
        stride, padding, dilation, groups = self.params
        n, cin, h, w = self.input_shape
        _, _, cin_g, kernel, _, h_out, w_out = self.cols.shape
        go = grad.reshape(n, groups, -1, h_out, w_out)

        dweight = np.einsum('ngohw,ngcijhw->gocij', go, self.cols, optimize=True)
        dweight = dweight.reshape(-1, cin_g, kernel, kernel)
        dcols = np.einsum('ngohw,gocij->ngcijhw', go, self.weight_g, optimize=True)
        dcols = dcols.reshape(n, cin, kernel, kernel, h_out, w_out)

        if kernel == 1 and stride == 1:
            dxp = dcols[:, :, 0, 0]
        else:
            dxp = _col2im(dcols, self.padded_shape, stride, dilation)
        dx = dxp[:, :, padding:padding + h, padding:padding + w] if padding else dxp

        if self.has_bias:
            return dx, dweight, grad.sum(axis=(0, 2, 3))
        return dx, dweight


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    padding: int = 0,
    dilation: int = 1,
    groups: int = 1,
) -> Tensor:
    """
    Convolution 2D groupée et dilatée

    Args:
        x: Entrée [N, Cin, H, W]
        weight: Noyaux [Cout, Cin/groups, k, k]
        bias: Biais optionnel [Cout]
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ConfigurationError(f"conv2d attend des tenseurs 4D, reçu {x.shape} et {weight.shape}")
    n, cin, h, w = x.shape
    cout, cin_g, kh, kw = weight.shape
    if kh != kw or kh < 1:
        raise ConfigurationError(f"Noyau carré requis, reçu {kh}x{kw}")
    if stride < 1 or dilation < 1 or padding < 0 or groups < 1:
        raise ConfigurationError(
            f"Paramètres invalides: stride={stride}, padding={padding}, dilation={dilation}, groups={groups}"
        )
    if cin % groups or cout % groups:
        raise ConfigurationError(f"Cin={cin} et Cout={cout} doivent être divisibles par groups={groups}")
    if cin_g != cin // groups:
        raise ConfigurationError(f"Poids {weight.shape} incompatibles avec Cin={cin}, groups={groups}")
    if bias is not None and bias.shape != (cout,):
        raise ConfigurationError(f"Biais de forme {bias.shape}, attendu ({cout},)")
    if conv_output_size(h, kh, stride, padding, dilation) < 1 or conv_output_size(w, kh, stride, padding, dilation) < 1:
        raise ConfigurationError(f"Entrée {h}x{w} trop petite pour le noyau {kh} (dilatation {dilation})")

    tensors = (x, weight) if bias is None else (x, weight, bias)
    return Conv2dFunction.apply(*tensors, stride=stride, padding=padding, dilation=dilation, groups=groups)


# =====================================
# BATCHNORM
# =====================================

@dataclass
class BatchNormParams:
    """γ, β et statistiques courantes d'une BatchNorm"""
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    eps: float = BN_EPS
    momentum: float = BN_MOMENTUM

    def __post_init__(self):
        channels = self.gamma.shape
        if len(channels) != 1:
            raise ConfigurationError(f"gamma doit être un vecteur, reçu {channels}")
        for name in ('beta', 'running_mean', 'running_var'):
            if getattr(self, name).shape != channels:
                raise ConfigurationError(f"{name} de forme {getattr(self, name).shape}, attendu {channels}")
        if np.any(self.running_var < 0):
            raise ConfigurationError("running_var doit être positive")
        if self.eps <= 0:
            raise ConfigurationError("eps doit être strictement positif")
        if not 0 < self.momentum <= 1:
            raise ConfigurationError("momentum doit être dans (0, 1]")

    @property
    def channels(self) -> int:
        return self.gamma.shape[0]


class BatchNormFunction(Function):
    def forward(self, x, gamma, beta, params: BatchNormParams = None, training: bool = True):
        self.training = training
        axes = (0, 2, 3)
        if training:
            count = x.shape[0] * x.shape[2] * x.shape[3]
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            unbiased = var * count / (count - 1) if count > 1 else var
            params.running_mean[:] = (1 - params.momentum) * params.running_mean + params.momentum * mean
            params.running_var[:] = (1 - params.momentum) * params.running_var + params.momentum * unbiased
            self.count = count
        else:
            mean, var = params.running_mean, params.running_var

        self.invstd = 1.0 / np.sqrt(var + params.eps)
        self.xhat = (x - mean[None, :, None, None]) * self.invstd[None, :, None, None]
        self.gamma = gamma
        return gamma[None, :, None, None] * self.xhat + beta[None, :, None, None]

    def backward(self, grad):
        axes = (0, 2, 3)
        dgamma = (grad * self.xhat).sum(axis=axes)
        dbeta = grad.sum(axis=axes)
        dxhat = grad * self.gamma[None, :, None, None]
        invstd = self.invstd[None, :, None, None]
        if self.training:
            dx = invstd / self.count * (
                self.count * dxhat
                - dxhat.sum(axis=axes, keepdims=True)
                - self.xhat * (dxhat * self.xhat).sum(axis=axes, keepdims=True)
            )
        else:
            dx = dxhat * invstd
        return dx, dgamma, dbeta


def batch_norm(x: Tensor, params: BatchNormParams, training: bool) -> Tensor:
    """
    y = (x - E(x)) / sqrt(Var(x) + eps) * γ + β

    En entraînement: statistiques du batch, mise à jour des statistiques
    courantes. En inférence: statistiques courantes.
    """
    if x.ndim != 4:
        raise ConfigurationError(f"batch_norm attend un tenseur 4D, reçu {x.shape}")
    if x.shape[0] == 0:
        raise ConfigurationError("batch_norm sur un batch vide")
    if x.shape[1] != params.channels:
        raise ConfigurationError(f"{x.shape[1]} canaux pour une BatchNorm de {params.channels} canaux")

    out = BatchNormFunction.apply(x, params.gamma, params.beta, params=params, training=training)
    counters.record(counters.BATCH_NORM, x.size)
    return out


# =====================================
# ACTIVATION
# =====================================

class PReLUFunction(Function):
    def forward(self, x, slope):
        self.x = x
        self.slope = slope.reshape((1, -1) + (1,) * (x.ndim - 2))
        return np.where(x >= 0, x, self.slope * x)

    def backward(self, grad):
        negative = self.x < 0
        dx = np.where(negative, self.slope * grad, grad)
        axes = (0,) + tuple(range(2, grad.ndim))
        dslope = np.where(negative, self.x * grad, 0.0).sum(axis=axes)
        return dx, dslope


def prelu(x: Tensor, slope: Tensor) -> Tensor:
    """y = x si x >= 0, pente_c * x sinon"""
    if x.ndim < 2 or slope.shape != (x.shape[1],):
        raise ConfigurationError(f"Pente de forme {slope.shape} pour une entrée {x.shape}")
    out = PReLUFunction.apply(x, slope)
    counters.record(counters.PRELU, x.size)
    return out


# =====================================
# CHANGEMENTS D'ÉCHELLE
# =====================================

class AvgPool2Function(Function):
    def forward(self, x):
        n, c, h, w = x.shape
        return x.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def backward(self, grad):
        return (np.repeat(np.repeat(grad, 2, axis=2), 2, axis=3) * 0.25,)


def avg_pool2(x: Tensor) -> Tensor:
    """Moyenne sur des fenêtres 2x2 disjointes"""
    if x.ndim != 4:
        raise ConfigurationError(f"avg_pool2 attend un tenseur 4D, reçu {x.shape}")
    if x.shape[2] % 2 or x.shape[3] % 2:
        raise ConfigurationError(f"avg_pool2 exige une taille spatiale paire, reçu {x.shape[2]}x{x.shape[3]}")
    out = AvgPool2Function.apply(x)
    counters.record(counters.POOL, out.size)
    return out


class UpsampleNearestFunction(Function):
    def forward(self, x, factor: int = 2):
        self.factor = factor
        return np.repeat(np.repeat(x, factor, axis=2), factor, axis=3)

    def backward(self, grad):
        n, c, h, w = grad.shape
        f = self.factor
        return (grad.reshape(n, c, h // f, f, w // f, f).sum(axis=(3, 5)),)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    """Réplique chaque pixel factor fois dans chaque dimension spatiale"""
    if x.ndim != 4:
        raise ConfigurationError(f"upsample_nearest attend un tenseur 4D, reçu {x.shape}")
    if factor < 1:
        raise ConfigurationError(f"Facteur de suréchantillonnage invalide: {factor}")
    if factor == 1:
        return x
    out = UpsampleNearestFunction.apply(x, factor=factor)
    counters.record(counters.UPSAMPLE, out.size)
    return out


class GlobalAvgPoolFunction(Function):
    def forward(self, x):
        self.input_shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        n, c, h, w = self.input_shape
        return (np.broadcast_to(grad[:, :, None, None] / (h * w), self.input_shape).copy(),)


def global_avg_pool(x: Tensor) -> Tensor:
    """S(x) = moyenne spatiale par échantillon et par canal -> [N, C]"""
    if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise ConfigurationError(f"global_avg_pool attend un tenseur 4D non vide, reçu {x.shape}")
    return GlobalAvgPoolFunction.apply(x)


# =====================================
# PERTE
# =====================================

def sigmoid(x: np.ndarray) -> np.ndarray:
    return expit(x)


class BCEWithLogitsFunction(Function):
    def forward(self, logits, target):
        self.logits, self.target = logits, target
        loss = np.maximum(logits, 0) - logits * target + np.log1p(np.exp(-np.abs(logits)))
        return np.asarray(loss.mean())

    def backward(self, grad):
        dlogits = grad * (sigmoid(self.logits) - self.target) / self.logits.size
        return dlogits, None


def binary_cross_entropy_with_logits(logits: Tensor, target: Tensor) -> Tensor:
    """Entropie croisée binaire par pixel, moyennée, calculée sur les logits"""
    if logits.shape != target.shape:
        raise ConfigurationError(f"Logits {logits.shape} et cible {target.shape} incompatibles")
    return BCEWithLogitsFunction.apply(logits, target)
