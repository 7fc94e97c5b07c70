# PROCEDURAL SCENES
"""
Deterministic test scenes: a textured all-in-focus image and its depth
map, standing in for captured datasets at desk scale.

Each scene style is a function (rng, width, height, depth_range, **options)
-> depth array, registered with registerStyle. The texture is shared by
all styles. To add a style, write such a function and call registerStyle
at import time.
"""

from __future__ import annotations

import numpy as np

from FocalSplat.Defocus import DepthMap, RasterImage
from FocalSplat.Errors import DomainError
from FocalSplat.Utils import BLATHER

MIN_SIZE = 16

# global style registry
STYLES = {}

def registerStyle(name, fn):
    """Add a procedural scene style."""
    STYLES[name] = fn


def texture(rng, width, height, block=4):
    """
    A colour texture mixing per-pixel noise with blocky noise, so every
    patch holds both fine and coarse detail. Samples lie in [0.1, 0.9].
    """
    fine = rng.random((height, width, 3))
    coarse = rng.random((height // block + 1, width // block + 1, 3))
    coarse = np.repeat(np.repeat(coarse, block, axis=0), block, axis=1)
    coarse = coarse[:height, :width]
    return 0.1 + 0.8 * (0.5*fine + 0.5*coarse)


def geometric(lo, hi, fraction):
    return float(lo * (hi / lo) ** fraction)


def frontoPlanes(rng, width, height, depth_range, plane_depths=None):
    """Vertical bands, each a fronto-parallel plane at one depth."""
    lo, hi = depth_range
    if plane_depths is None:
        plane_depths = [geometric(lo, hi, f) for f in (0.2, 0.5, 0.8)]
    plane_depths = [float(d) for d in plane_depths]
    if not all(lo <= d <= hi for d in plane_depths):
        raise DomainError('plane depths %s leave the depth range %s'
                          % (plane_depths, depth_range))
    edges = np.linspace(0, width, len(plane_depths) + 1).round().astype(int)
    depth = np.empty((height, width))
    for d, x0, x1 in zip(plane_depths, edges[:-1], edges[1:]):
        depth[:, x0:x1] = d
    return depth


def slantedPlane(rng, width, height, depth_range):
    """One plane whose depth rises linearly from left to right."""
    lo, hi = depth_range
    row = lo + (hi - lo) * np.arange(width) / (width - 1.0)
    return np.repeat(row[np.newaxis, :], height, axis=0)


def spheres(rng, width, height, depth_range, count=3):
    """A few spherical caps in front of a far background plane."""
    lo, hi = depth_range
    depth = np.full((height, width), geometric(lo, hi, 0.9))
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
    for i in range(count):
        radius = rng.uniform(min(width, height) / 8.0, min(width, height) / 4.0)
        cx, cy = rng.uniform(0, width - 1), rng.uniform(0, height - 1)
        z0 = geometric(lo, hi, rng.uniform(0.2, 0.7))
        rho2 = ((xx - cx)**2 + (yy - cy)**2) / (radius * radius)
        inside = rho2 < 1.0
        cap = z0 - 0.1 * z0 * np.sqrt(np.clip(1.0 - rho2, 0.0, 1.0))
        depth = np.where(inside, np.minimum(depth, cap), depth)
    return np.clip(depth, lo, hi)

registerStyle('fronto-planes', frontoPlanes)
registerStyle('slanted-plane', slantedPlane)
registerStyle('spheres', spheres)


def synth_procedural(width, height, seed, style='fronto-planes',
                     depth_range=(0.5, 10.0), **options):
    """
    Make an all-in-focus image and depth map for a procedural scene.
    The same arguments always give bit-identical outputs.
    """
    width, height = int(width), int(height)
    if width < MIN_SIZE or height < MIN_SIZE:
        raise DomainError('procedural scenes need at least %dx%d pixels, got %dx%d'
                          % (MIN_SIZE, MIN_SIZE, width, height))
    if style not in STYLES:
        raise DomainError('unknown scene style %r (known: %s)'
                          % (style, ', '.join(sorted(STYLES))))
    lo, hi = map(float, depth_range)
    if not 0 < lo < hi:
        raise DomainError('bad depth range %r' % (depth_range,))
    rng = np.random.default_rng(seed)
    aif = texture(rng, width, height)
    depth = STYLES[style](rng, width, height, (lo, hi), **options)
    BLATHER('procedural %s scene, seed %s, depth %.3f..%.3f m'
            % (style, seed, depth.min(), depth.max()))
    return RasterImage(aif), DepthMap(depth)
