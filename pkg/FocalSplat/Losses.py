"""
Objectives and depth evaluation metrics.

Every function here is a pure function of its arguments. Images may be
given as RasterImage, maps as DepthMap/DefocusMap, or any of them as bare
numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage.metrics import structural_similarity

from FocalSplat import Defaults
from FocalSplat.Defocus import checkSameSize
from FocalSplat.Errors import DomainError
from FocalSplat.Utils import luminance, sizeString


def values(x):
    """The sample array behind an image or map."""
    return np.asarray(getattr(x, 'data', x), dtype=np.float64)


@dataclass
class LossWeights:
    """Weights of the total objective and its parts."""
    mu1: float = Defaults.MU1
    mu2: float = Defaults.MU2
    mu3: float = Defaults.MU3
    alpha_ssim: float = Defaults.ALPHA_SSIM
    beta_blur: float = Defaults.BLUR_BETA

    def __post_init__(self):
        for name in ('mu1', 'mu2', 'mu3', 'beta_blur'):
            if not getattr(self, name) >= 0:
                raise DomainError('%s must be non-negative' % name)
        if not 0.0 <= self.alpha_ssim <= 1.0:
            raise DomainError('alpha_ssim must lie in [0,1]')

    @classmethod
    def fromString(cls, text, **kw):
        """Parse 'mu1,mu2,mu3'."""
        try:
            mu = [float(x) for x in text.split(',')]
        except ValueError:
            raise DomainError('weights must be numbers: %r' % text)
        if len(mu) != 3:
            raise DomainError('expected three weights mu1,mu2,mu3, got %r' % text)
        return cls(mu[0], mu[1], mu[2], **kw)


######################################################################
# defocus and blur objectives

def defocus_loss(d1, d2, patch_px=Defaults.DEFOCUS_PATCH):
    """
    Mean over co-located non-overlapping patches of -cosine(p1, p2).
    Patches where either map is all zero contribute 0.
    """
    a, b = values(d1), values(d2)
    checkSameSize(a, b, 'defocus maps')
    h, w = a.shape[:2]
    p = int(patch_px)
    if p < 1 or h % p or w % p:
        raise DomainError('patch size %r does not divide the map size %s'
                          % (patch_px, sizeString(a.shape)))
    def patches(m):
        return m.reshape(h // p, p, w // p, p).transpose(0, 2, 1, 3).reshape(-1, p*p)
    pa, pb = patches(a), patches(b)
    norms = np.linalg.norm(pa, axis=1) * np.linalg.norm(pb, axis=1)
    dots = np.sum(pa * pb, axis=1)
    cosine = np.where(norms > 0, dots / np.where(norms > 0, norms, 1.0), 0.0)
    return float(-np.mean(np.clip(cosine, -1.0, 1.0)))


def blur_loss(image, beta=Defaults.BLUR_BETA, eps=Defaults.BLUR_EPS,
              denominator='literal'):
    """
    -beta log(sum (Laplacian I)^2 / (M - mu^2) + eps) on the luminance.

    M is the pixel count and mu the mean sample. denominator='variance'
    divides by the sample variance instead.
    """
    lum = luminance(values(image))
    lap = ndimage.laplace(lum, mode='nearest')
    energy = float(np.sum(lap * lap))
    if denominator == 'literal':
        denom = lum.size - lum.mean()**2
    elif denominator == 'variance':
        denom = lum.var()
    else:
        raise DomainError('unknown blur loss denominator %r' % denominator)
    if not denom > 0:
        raise DomainError('blur loss denominator must be positive, got %r' % denom)
    return float(-beta * np.log(energy / denom + eps))


######################################################################
# reconstruction objectives

def ssim(a, b):
    """
    Mean structural similarity over an 11x11 Gaussian window (sigma 1.5),
    averaged over channels. Samples are taken to span [0,1].
    """
    x, y = values(a), values(b)
    checkSameSize(x, y, 'images')
    if x.shape != y.shape:
        raise DomainError('images differ in channel count')
    if min(x.shape[:2]) < Defaults.SSIM_WINDOW:
        raise DomainError('SSIM needs images of at least %dx%d, got %s'
                          % (Defaults.SSIM_WINDOW, Defaults.SSIM_WINDOW, sizeString(x.shape)))
    return float(structural_similarity(
        x, y, gaussian_weights=True, sigma=Defaults.SSIM_SIGMA,
        use_sample_covariance=False, data_range=1.0,
        K1=Defaults.SSIM_K1, K2=Defaults.SSIM_K2,
        channel_axis=2 if x.ndim == 3 else None))


def recon_loss(rendered, target, alpha_ssim=Defaults.ALPHA_SSIM):
    """alpha (1 - SSIM)/2 + (1 - alpha) mean |rendered - target|."""
    x, y = values(rendered), values(target)
    checkSameSize(x, y, 'images')
    l1 = float(np.mean(np.abs(x - y)))
    if alpha_ssim == 0: return l1
    structural = max(0.0, (1.0 - ssim(x, y)) / 2.0)
    return alpha_ssim * structural + (1.0 - alpha_ssim) * l1


def total_loss(l_defocus, l_blur, l_recon, w=None):
    """mu1 L_defocus + mu2 L_blur + mu3 L_recon."""
    w = w or LossWeights()
    return w.mu1*l_defocus + w.mu2*l_blur + w.mu3*l_recon


######################################################################
# depth objectives

def residual_loss(depth_splat, depth_residual, depth_gt):
    """Mean |(D + D_res) - D_gt| over pixels with valid ground truth."""
    d, r, g = values(depth_splat), values(depth_residual), values(depth_gt)
    checkSameSize(d, g, 'depth maps')
    checkSameSize(r, g, 'depth maps')
    valid = g > 0
    if not valid.any():
        raise DomainError('ground truth has no valid pixels')
    return float(np.mean(np.abs(d[valid] + r[valid] - g[valid])))


def smoothness_loss(depth, guide):
    """
    Edge-aware smoothness: mean |dD/dx| exp(-|dI/dx|) plus mean
    |dD/dy| exp(-|dI/dy|), forward differences, guide on luminance.
    """
    d = values(depth)
    i = luminance(values(guide))
    checkSameSize(d, i, 'depth map and guide image')
    dx = np.abs(np.diff(d, axis=1)) * np.exp(-np.abs(np.diff(i, axis=1)))
    dy = np.abs(np.diff(d, axis=0)) * np.exp(-np.abs(np.diff(i, axis=0)))
    sx = dx.size and dx.mean() or 0.0
    sy = dy.size and dy.mean() or 0.0
    return float(sx + sy)


######################################################################
# evaluation

def depth_metrics(pred, gt, min_depth=None, max_depth=None):
    """
    RMSE, AbsRel and delta accuracies over pixels valid in both maps,
    optionally restricted to ground truth within [min_depth, max_depth].
    """
    p, g = values(pred), values(gt)
    checkSameSize(p, g, 'depth maps')
    mask = (p > 0) & (g > 0)
    if min_depth is not None: mask &= g >= min_depth
    if max_depth is not None: mask &= g <= max_depth
    if not mask.any():
        raise DomainError('no pixel is valid in both depth maps')
    p, g = p[mask], g[mask]
    ratio = np.maximum(p / g, g / p)
    base = Defaults.DELTA_BASE
    return {
        'rmse': float(np.sqrt(np.mean((p - g)**2))),
        'absrel': float(np.mean(np.abs(p - g) / g)),
        'delta1': float(np.mean(ratio < base)),
        'delta2': float(np.mean(ratio < base**2)),
        'delta3': float(np.mean(ratio < base**3)),
        }
