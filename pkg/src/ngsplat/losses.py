"""Differentiable training objectives: windowed SSIM, the compound
L1 + D-SSIM photometric loss, and the alpha-consistency loss with its
background-suppression / foreground-opacity split.

All functions return (value, gradient-w.r.t.-first-image) so the trainer can
feed the rasterizer backward pass directly.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DimensionMismatchError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01**2
SSIM_C2 = 0.03**2


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-0.5 * (x / sigma) ** 2)
    return w / w.sum()


_WIN1D = _gaussian_window()


def _filt(img: np.ndarray) -> np.ndarray:
    """Separable Gaussian window, zero-padded 'same' convolution.

    Zero padding keeps the operator self-adjoint, so the same call
    implements the backward pass.
    """
    out = correlate1d(img, _WIN1D, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _WIN1D, axis=1, mode="constant", cval=0.0)


def _check_images(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise DimensionMismatchError(f"image shapes differ: {a.shape} vs {b.shape}")


def ssim(a: np.ndarray, b: np.ndarray, with_grad: bool = True):
    """Mean windowed SSIM over pixels and channels, plus dSSIM/da.

    Images are (H, W) or (H, W, C) with unit dynamic range.
    """
    _check_images(a, b)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    squeeze = a.ndim == 2
    if squeeze:
        a = a[:, :, None]
        b = b[:, :, None]
    mu1 = _filt(a)
    mu2 = _filt(b)
    s11 = _filt(a * a) - mu1 * mu1
    s22 = _filt(b * b) - mu2 * mu2
    s12 = _filt(a * b) - mu1 * mu2
    num = (2.0 * mu1 * mu2 + SSIM_C1) * (2.0 * s12 + SSIM_C2)
    den = (mu1 * mu1 + mu2 * mu2 + SSIM_C1) * (s11 + s22 + SSIM_C2)
    smap = num / den
    value = float(smap.mean())
    if not with_grad:
        return value, None
    g_up = 1.0 / smap.size  # upstream of the mean
    den2 = den * den
    # Pointwise partials of the SSIM map.
    d_mu1 = g_up * (2.0 * mu2 * (2.0 * s12 + SSIM_C2) * den - num * 2.0 * mu1 * (s11 + s22 + SSIM_C2)) / den2
    d_s11 = g_up * (-num * (mu1 * mu1 + mu2 * mu2 + SSIM_C1)) / den2
    d_s12 = g_up * (2.0 * (2.0 * mu1 * mu2 + SSIM_C1)) / den
    # sigma terms also depend on mu1 pointwise.
    g_mu = d_mu1 - 2.0 * mu1 * d_s11 - mu2 * d_s12
    grad = _filt(g_mu) + 2.0 * a * _filt(d_s11) + b * _filt(d_s12)
    if squeeze:
        grad = grad[:, :, 0]
    return value, grad


def photometric_loss(rendered: np.ndarray, target: np.ndarray, lam: float = 0.2):
    """(1 - lam) * mean L1 + lam * D-SSIM, D-SSIM = (1 - SSIM) / 2."""
    _check_images(rendered, target)
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must be in [0, 1]")
    diff = np.asarray(rendered, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    l1 = float(np.abs(diff).mean())
    grad = (1.0 - lam) * np.sign(diff) / diff.size
    if lam > 0.0:
        s, s_grad = ssim(rendered, target)
        value = (1.0 - lam) * l1 + lam * (1.0 - s) / 2.0
        grad = grad - (lam / 2.0) * s_grad
    else:
        value = l1
    return value, grad


def alpha_consistency_loss(
    alpha: np.ndarray, mask: np.ndarray, foreground_enabled: bool = True
):
    """L1 alpha-vs-mask consistency, split into its two components.

    Returns (loss, grad-w.r.t.-alpha, (l_f, l_b)). The foreground term
    rewards full opacity inside the mask and can be switched off; the
    background term suppresses opacity outside it.
    """
    _check_images(alpha, mask)
    alpha = np.asarray(alpha, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    n = alpha.size
    l_b = float((alpha * (1.0 - mask)).mean())
    l_f = float(((1.0 - alpha) * mask).mean())
    if foreground_enabled:
        loss = l_f + l_b
        grad = ((1.0 - mask) - mask) / n
    else:
        loss = l_b
        grad = (1.0 - mask) / n
    return loss, grad, (l_f, l_b)


def psnr(a: np.ndarray, b: np.ndarray, cap_db: float = 100.0) -> float:
    """Peak signal-to-noise ratio on [0, 1] images, capped for zero MSE."""
    _check_images(a, b)
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse <= 10.0 ** (-cap_db / 10.0):
        return cap_db
    return 10.0 * np.log10(1.0 / mse)
