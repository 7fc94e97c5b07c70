"""
Defocus synthesis: image and map containers, the spatially varying
Gaussian PSF layer, and focal stack generation.

The PSF layer gathers: each output pixel is a weighted mean of its
window, using the kernel of the blur radius stored at that output pixel.
Radii below Defaults.SIGMA_THRESHOLD leave the pixel untouched. Borders
replicate the edge pixel.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional

import numpy as np
from scipy import ndimage

from FocalSplat import Defaults
from FocalSplat.Errors import DomainError
from FocalSplat.Lens import LensModel, coc_radius
from FocalSplat.Utils import BLATHER, isStrictlyIncreasing, luminance, sizeString


class RasterImage:
    """
    I hold an H x W x C floating point image (C is 1 or 3) with samples
    in [0,1], stored row-major.
    """
    def __init__(self, data):
        data = np.array(data, dtype=np.float64)
        if data.ndim == 2: data = data[:, :, np.newaxis]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise DomainError('image must be H x W x 1 or H x W x 3, got shape %s'
                              % (data.shape,))
        if not np.all(np.isfinite(data)):
            raise DomainError('image samples must be finite')
        if data.size and (data.min() < 0.0 or data.max() > 1.0):
            raise DomainError('image samples must lie in [0,1]')
        self.data = data

    width = property(lambda self: self.data.shape[1])
    height = property(lambda self: self.data.shape[0])
    channels = property(lambda self: self.data.shape[2])
    shape = property(lambda self: self.data.shape[:2])

    def luminance(self):
        return luminance(self.data)

    def __repr__(self):
        return '<RasterImage %s x%d>' % (sizeString(self.shape), self.channels)


class _Map:
    """Shared behaviour of the single-channel float maps."""
    kind = 'map'

    def __init__(self, data):
        data = np.array(data, dtype=np.float64)
        if data.ndim == 3 and data.shape[2] == 1: data = data[:, :, 0]
        if data.ndim != 2:
            raise DomainError('%s must be two-dimensional, got shape %s'
                              % (self.kind, data.shape))
        if not np.all(np.isfinite(data)):
            raise DomainError('%s values must be finite' % self.kind)
        if data.size and data.min() < 0:
            raise DomainError('%s values must be non-negative' % self.kind)
        self.data = data

    width = property(lambda self: self.data.shape[1])
    height = property(lambda self: self.data.shape[0])
    shape = property(lambda self: self.data.shape)

    def __repr__(self):
        return '<%s %s>' % (self.__class__.__name__, sizeString(self.shape))


class DefocusMap(_Map):
    """Per-pixel circle of confusion radius, in pixels."""
    kind = 'defocus map'


class DepthMap(_Map):
    """Per-pixel depth in meters; 0 marks an invalid pixel."""
    kind = 'depth map'

    def validMask(self, max_depth_m=None):
        mask = self.data > 0
        if max_depth_m is not None: mask &= self.data <= max_depth_m
        return mask


def checkSameSize(a, b, what='maps'):
    """Raise a DomainError naming both sizes unless a and b match."""
    if tuple(a.shape[:2]) != tuple(b.shape[:2]):
        raise DomainError('%s differ in size: %s vs %s'
                          % (what, sizeString(a.shape), sizeString(b.shape)))


@dataclass
class StackEntry:
    image: RasterImage
    lens: LensModel
    defocus: Optional[DefocusMap] = None

    @property
    def focus_distance_m(self):
        return self.lens.focus_distance_m


class FocalStack:
    """
    I am an ordered set of views of one scene taken at increasing focus
    distances, optionally with the ground truth depth and the all-in-focus
    source they were made from.
    """
    def __init__(self, entries, depth=None, aif=None):
        self.entries = list(entries)
        self.depth, self.aif = depth, aif
        if not self.entries:
            raise DomainError('a focal stack needs at least one entry')
        first = self.entries[0].image
        for e in self.entries[1:] + [x for x in (depth, aif) if x is not None]:
            checkSameSize(first, e.image if isinstance(e, StackEntry) else e,
                          'stack entries')
        for e in self.entries:
            if e.defocus is not None: checkSameSize(first, e.defocus, 'stack entries')
        if not isStrictlyIncreasing(self.focusDistances()):
            raise DomainError('focus distances must be strictly increasing: %s'
                              % self.focusDistances())

    def __len__(self): return len(self.entries)
    def __iter__(self): return iter(self.entries)
    def __getitem__(self, i): return self.entries[i]

    def focusDistances(self):
        return [e.focus_distance_m for e in self.entries]

    def lenses(self):
        return [e.lens for e in self.entries]

    shape = property(lambda self: self.entries[0].image.shape)


######################################################################
# PSF layer

def gaussian_kernel(sigma_px, window=Defaults.PSF_WINDOW, normalize=True):
    """
    Sample the Gaussian PSF on the integer grid of a window x window
    square centred at 0. The kernel is renormalized to sum to 1 unless
    normalize is false, in which case the raw density values are returned.
    """
    window = int(window)
    if window < 3 or window % 2 == 0:
        raise DomainError('kernel window must be odd and at least 3, got %r' % window)
    if not sigma_px > 0:
        raise DomainError('kernel sigma must be positive, got %r' % sigma_px)
    r = window // 2
    u = np.arange(-r, r + 1, dtype=np.float64)
    rr = u[np.newaxis, :]**2 + u[:, np.newaxis]**2
    kernel = np.exp(-rr / (2.0*sigma_px*sigma_px)) / (2.0*np.pi*sigma_px*sigma_px)
    if normalize: kernel /= kernel.sum()
    return kernel


def compose_blur(sigma0_px, sigma_add_px):
    """Blur radius of two Gaussian blurs applied in turn."""
    s0 = np.asarray(sigma0_px, dtype=np.float64)
    s1 = np.asarray(sigma_add_px, dtype=np.float64)
    if np.any(s0 < 0) or np.any(s1 < 0):
        raise DomainError('blur radii must be non-negative')
    out = np.hypot(s0, s1)
    if out.ndim == 0: return float(out)
    return out


def residual_blur(sigma0_px, sigma_target_px):
    """
    Blur radius that takes an image already blurred by sigma0 up to
    sigma_target; the inverse of compose_blur.
    """
    s0 = np.asarray(sigma0_px, dtype=np.float64)
    target = np.asarray(sigma_target_px, dtype=np.float64)
    if np.any(s0 < 0) or np.any(target < 0):
        raise DomainError('blur radii must be non-negative')
    if np.any(target < s0 * (1.0 - 1e-12)):
        raise DomainError('cannot reduce blur from %r to %r' % (sigma0_px, sigma_target_px))
    out = np.sqrt(np.maximum(target*target - s0*s0, 0.0))
    if out.ndim == 0: return float(out)
    return out


def _defocusBand(padded, image, sigma, window, r0, r1):
    """Gather rows r0..r1 of the blurred image. padded has r pixels of margin."""
    r = window // 2
    width = image.shape[1]
    s = sigma[r0:r1]
    active = s >= Defaults.SIGMA_THRESHOLD
    safe = np.where(active, s, 1.0)
    inv = 1.0 / (2.0*safe*safe)
    acc = np.zeros((r1 - r0, width, image.shape[2]))
    wsum = np.zeros((r1 - r0, width))
    # fixed offset order, so every schedule sums identically
    for dv in range(-r, r + 1):
        for du in range(-r, r + 1):
            w = np.exp(-float(du*du + dv*dv) * inv)
            src = padded[r0 + r - dv:r1 + r - dv, r - du:r - du + width]
            acc += w[:, :, np.newaxis] * src
            wsum += w
    out = acc / wsum[:, :, np.newaxis]
    return np.where(active[:, :, np.newaxis], out, image[r0:r1])


def render_defocus(image, defocus, window=Defaults.PSF_WINDOW, workers=1):
    """
    Blur image with the spatially varying Gaussian PSF given by defocus.

    Rows are processed in fixed bands of Defaults.BAND_ROWS; workers only
    changes how bands are scheduled, never the result.
    """
    checkSameSize(image, defocus, 'image and defocus map')
    window = int(window)
    if window < 3 or window % 2 == 0:
        raise DomainError('kernel window must be odd and at least 3, got %r' % window)
    data, sigma = image.data, defocus.data
    r = window // 2
    padded = np.pad(data, ((r, r), (r, r), (0, 0)), mode='edge')
    bands = [(y, min(y + Defaults.BAND_ROWS, image.height))
             for y in range(0, image.height, Defaults.BAND_ROWS)]
    work = lambda band: _defocusBand(padded, data, sigma, window, *band)
    if workers and workers > 1 and len(bands) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(work, bands))
    else:
        parts = [work(b) for b in bands]
    out = np.concatenate(parts, axis=0)
    return RasterImage(np.clip(out, 0.0, 1.0))


def blur_array(data, sigma_px, window=Defaults.PSF_WINDOW):
    """
    Apply one PSF kernel uniformly to an H x W or H x W x C array, with
    the same thresholding and edge replication as the PSF layer.
    """
    data = np.asarray(data, dtype=np.float64)
    if sigma_px < Defaults.SIGMA_THRESHOLD: return data.copy()
    kernel = gaussian_kernel(sigma_px, window)
    if data.ndim == 2:
        return ndimage.correlate(data, kernel, mode='nearest')
    return ndimage.correlate(data, kernel[:, :, np.newaxis], mode='nearest')


def blur_uniform(image, sigma_px, window=Defaults.PSF_WINDOW):
    """The constant-radius case of render_defocus."""
    return RasterImage(np.clip(blur_array(image.data, sigma_px, window), 0.0, 1.0))


######################################################################
# focal stacks

def defocus_map_for(depth, lens, sigma0=Defaults.SIGMA0):
    """
    Build the defocus map a lens produces for a depth map. Invalid depth
    pixels get no lens blur. A baseline blur sigma0 (the G0 of a real
    capture) is composed into every pixel.
    """
    valid = depth.validMask()
    sigma = np.zeros(depth.shape)
    if valid.any(): sigma[valid] = coc_radius(lens, depth.data[valid])
    if sigma0: sigma = compose_blur(sigma0, sigma)
    return DefocusMap(sigma)


def synthesize_stack(aif, depth, lens_base, focus_distances_m,
                     sigma0=Defaults.SIGMA0, window=Defaults.PSF_WINDOW, workers=1):
    """
    Render one defocused view of aif per focus distance, using lens_base
    refocused at each distance. Each entry keeps its ground truth defocus
    map.
    """
    checkSameSize(aif, depth, 'image and depth map')
    focus_distances_m = [float(x) for x in focus_distances_m]
    if not focus_distances_m:
        raise DomainError('need at least one focus distance')
    if not isStrictlyIncreasing(focus_distances_m):
        raise DomainError('focus distances must be strictly increasing: %s'
                          % focus_distances_m)
    entries = []
    for fd in focus_distances_m:
        lens = lens_base.withFocus(fd)
        defocus = defocus_map_for(depth, lens, sigma0)
        BLATHER('synthesizing view at %.3f m, max blur %.2f px'
                % (fd, defocus.data.max()))
        image = render_defocus(aif, defocus, window, workers)
        entries.append(StackEntry(image, lens, defocus))
    return FocalStack(entries, depth=depth, aif=aif)
