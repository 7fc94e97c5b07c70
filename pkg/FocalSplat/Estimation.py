"""
Depth recovery from defocus.

reblur_match searches a grid of candidate depths. For a candidate d,
view j has blur radius s_j(d); each view is blurred further by
sqrt(s_ref^2 - s_j^2), so all views reach the level s_ref = max_j s_j(d)
of the most blurred one. At the true depth the reblurred views agree.
The candidate with the smallest mean pairwise L1 disagreement wins,
patch by patch.

invert_defocus_to_depth inverts the lens model per pixel, picking the
branch nearer a prior depth. refine_depth adds a residual to a splat
depth by minimising a data term plus the edge-aware smoothness loss.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy import ndimage

from FocalSplat import Defaults
from FocalSplat.Defocus import (DefocusMap, DepthMap, blur_array, checkSameSize,
                                residual_blur)
from FocalSplat.Errors import DomainError
from FocalSplat.Lens import coc_radius, far_limit
from FocalSplat.Utils import BLATHER, DEBUG, WARNING, isStrictlyIncreasing, luminance


@dataclass(eq=False)
class DepthGrid:
    """Candidate depths and the blur radius each view has at each of them."""
    depths: np.ndarray
    sigma: np.ndarray   # candidates x views

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        if self.depths.ndim != 1 or len(self.depths) < 2:
            raise DomainError('a depth grid needs at least two candidates')
        if not isStrictlyIncreasing(self.depths) or self.depths[0] <= 0:
            raise DomainError('candidate depths must be positive and increasing')
        if self.sigma.shape[0] != len(self.depths):
            raise DomainError('blur table does not match the candidate count')

    def __len__(self): return len(self.depths)


def make_depth_grid(lenses, depth_min_m, depth_max_m, n=Defaults.GRID_SIZE):
    """Log-spaced candidates over [depth_min_m, depth_max_m]."""
    if not 0 < depth_min_m < depth_max_m:
        raise DomainError('bad grid range %r..%r' % (depth_min_m, depth_max_m))
    depths = np.geomspace(depth_min_m, depth_max_m, int(n))
    sigma = np.stack([coc_radius(lens, depths) for lens in lenses], axis=1)
    return DepthGrid(depths, sigma)


######################################################################
# reblur matching

@dataclass(eq=False)
class PatchMatch:
    """Per-patch outcome of reblur matching."""
    centers_y: np.ndarray
    centers_x: np.ndarray
    costs: np.ndarray      # candidates x patch rows x patch columns
    index: np.ndarray      # argmin candidate per patch
    depth: np.ndarray      # matched depth per patch, unreliable ones filled
    reliable: np.ndarray   # textured, non-flat patches


def patchStarts(size, patch, stride):
    starts = list(range(0, size - patch + 1, stride))
    if starts[-1] != size - patch: starts.append(size - patch)
    return np.array(starts)


def patchMeans(values, ys, xs, patch):
    """Mean of values over the patch x patch windows starting at ys, xs."""
    s = np.zeros((values.shape[0] + 1, values.shape[1] + 1))
    s[1:, 1:] = values.cumsum(axis=0).cumsum(axis=1)
    y0, x0 = ys[:, np.newaxis], xs[np.newaxis, :]
    y1, x1 = y0 + patch, x0 + patch
    return (s[y1, x1] - s[y0, x1] - s[y1, x0] + s[y0, x0]) / float(patch * patch)


def reblurSigmas(sigmas):
    """
    Extra blur per view that brings every view up to the most blurred one.
    Radii under the PSF threshold leave an image sharp, so they count as 0.
    """
    s = np.asarray(sigmas, dtype=np.float64)
    s = np.where(s >= Defaults.SIGMA_THRESHOLD, s, 0.0)
    return residual_blur(s, np.full(s.shape, s.max()))


def reblurCost(images, sigmas, window=Defaults.PSF_WINDOW):
    """Per-pixel mean pairwise disagreement of the views reblurred to a common level."""
    reblurred = [blur_array(image, s, window)
                 for image, s in zip(images, reblurSigmas(sigmas))]
    pairs = list(combinations(range(len(images)), 2))
    cost = np.zeros(images[0].shape[:2])
    for j, k in pairs:
        cost += np.abs(reblurred[j] - reblurred[k]).mean(axis=2)
    return cost / len(pairs)


def subcell(costs, index, depths):
    """Parabolic refinement of the argmin in log depth."""
    logd = np.log(depths)
    out = logd[index].copy()
    n = len(depths)
    inner = (index > 0) & (index < n - 1)
    i = np.clip(index, 1, n - 2)
    take = lambda k: np.take_along_axis(costs, k[np.newaxis], axis=0)[0]
    cm, c0, cp = take(i - 1), take(i), take(i + 1)
    denom = cm - 2.0*c0 + cp
    ok = inner & (denom > 0)
    offset = np.where(ok, 0.5 * (cm - cp) / np.where(ok, denom, 1.0), 0.0)
    offset = np.clip(offset, -0.5, 0.5)
    step = np.where(offset > 0, logd[i + 1] - logd[i], logd[i] - logd[i - 1])
    return np.exp(np.where(ok, out + offset*step, out))


def reblur_match(stack, grid, patch_px=Defaults.MATCH_PATCH, stride_px=None,
                 refine=True, window=Defaults.PSF_WINDOW, workers=1):
    """
    Score every candidate depth on every patch of the stack.

    Patches are patch_px square on a grid of stride stride_px (half a
    patch by default). A patch whose images are nearly constant, or whose
    cost curve is flat, is unreliable and takes the depth of the nearest
    reliable patch.
    """
    if len(stack) < 2:
        raise DomainError('depth from a focal stack needs at least 2 views, got %d'
                          % len(stack))
    if grid.sigma.shape[1] != len(stack):
        raise DomainError('depth grid has %d views, stack has %d'
                          % (grid.sigma.shape[1], len(stack)))
    height, width = stack.shape
    patch = int(patch_px)
    if not 1 <= patch <= min(height, width):
        raise DomainError('patch size %r does not fit a %dx%d stack'
                          % (patch_px, width, height))
    stride = int(stride_px or max(1, patch // 2))
    images = [e.image.data for e in stack]
    ys, xs = patchStarts(height, patch, stride), patchStarts(width, patch, stride)

    # the outer band of a reblurred view depends on edge replication, which
    # does not commute with blurring; it counts only where a patch has no
    # interior pixels
    margin = min(window // 2, patch // 2)
    interior = np.zeros((height, width))
    interior[margin:height - margin, margin:width - margin] = 1.0
    coverage = patchMeans(interior, ys, xs, patch)
    inside = coverage > 0

    def score(i):
        cost = reblurCost(images, grid.sigma[i], window)
        whole = patchMeans(cost, ys, xs, patch)
        weighted = patchMeans(cost * interior, ys, xs, patch)
        return np.where(inside, weighted / np.where(inside, coverage, 1.0), whole)
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            costs = np.array(list(pool.map(score, range(len(grid)))))
    else:
        costs = np.array([score(i) for i in range(len(grid))])
    BLATHER('matched %d candidates over %dx%d patches'
            % (len(grid), len(ys), len(xs)))

    index = np.argmin(costs, axis=0)
    texture = np.mean([np.sqrt(np.maximum(
        patchMeans(luminance(im)**2, ys, xs, patch)
        - patchMeans(luminance(im), ys, xs, patch)**2, 0.0)) for im in images], axis=0)
    flat = costs.max(axis=0) - costs.min(axis=0) <= Defaults.FLAT_COST_TOL
    reliable = (texture >= Defaults.LOW_TEXTURE_STD) & ~flat
    depth = subcell(costs, index, grid.depths) if refine else grid.depths[index]
    if not reliable.any():
        WARNING('no textured patch in the stack; depth is unconstrained')
    elif not reliable.all():
        DEBUG('%d of %d patches unreliable' % ((~reliable).sum(), reliable.size))
        nearest = ndimage.distance_transform_edt(
            ~reliable, return_distances=False, return_indices=True)
        depth = depth[nearest[0], nearest[1]]
    centers_y = ys + (patch - 1) / 2.0
    centers_x = xs + (patch - 1) / 2.0
    return PatchMatch(centers_y, centers_x, costs, index, depth, reliable)


def estimate_depth_from_stack(stack, grid, patch_px=Defaults.MATCH_PATCH,
                              stride_px=None, refine=True, workers=1):
    """
    Depth map of a focal stack by reblur matching, bilinearly upsampled
    from patch centres, plus the defocus map each view implies at that
    depth.
    """
    match = reblur_match(stack, grid, patch_px, stride_px, refine, workers=workers)
    height, width = stack.shape
    fy = np.interp(np.arange(height), match.centers_y, np.arange(len(match.centers_y)))
    fx = np.interp(np.arange(width), match.centers_x, np.arange(len(match.centers_x)))
    coords = np.meshgrid(fy, fx, indexing='ij')
    depth = ndimage.map_coordinates(match.depth, coords, order=1, mode='nearest')
    depth = np.clip(depth, grid.depths[0], grid.depths[-1])
    defocus = [DefocusMap(coc_radius(e.lens, depth)) for e in stack]
    return DepthMap(depth), defocus


######################################################################
# analytic inversion and refinement

def invert_defocus_to_depth(defocus, lens, prior):
    """
    Per-pixel inverse of the lens model. Where both the near and the far
    depth explain the blur, the one nearer the prior wins.
    """
    checkSameSize(defocus, prior, 'defocus map and prior depth')
    sigma = defocus.data
    fd = lens.focus_distance_m
    k = sigma / far_limit(lens)
    near = fd / (1.0 + k)
    has_far = k < 1.0
    far = fd / np.where(has_far, 1.0 - k, 1.0)
    p = prior.data
    use_far = has_far & (np.abs(far - p) < np.abs(near - p))
    return DepthMap(np.where(use_far, far, near))


def weightedMedian(vals, weights):
    """Weighted median along axis 0 (lower median on ties)."""
    order = np.argsort(vals, axis=0, kind='stable')
    v = np.take_along_axis(vals, order, axis=0)
    w = np.take_along_axis(weights, order, axis=0)
    cum = np.cumsum(w, axis=0)
    pick = np.argmax(cum >= 0.5 * cum[-1], axis=0)
    return np.take_along_axis(v, pick[np.newaxis], axis=0)[0]


def refine_depth(depth_splat, defocus, lens, guide, gt=None,
                 lambda_data=Defaults.REFINE_LAMBDA_DATA,
                 lambda_smooth=Defaults.REFINE_LAMBDA_SMOOTH,
                 sweeps=Defaults.REFINE_SWEEPS):
    """
    Refine a splat depth map with a residual field.

    The target is the depth the defocus map implies (splat depth as the
    branch prior), or the ground truth where one is given. We minimise

      lambda_data mean|D + R - target| + lambda_smooth smoothness_loss(D + R)

    by red-black coordinate descent; each pixel update is the exact
    weighted median of its target and its four neighbours.
    """
    checkSameSize(depth_splat, defocus, 'splat depth and defocus map')
    checkSameSize(depth_splat, guide, 'splat depth and guide image')
    target = invert_defocus_to_depth(defocus, lens, depth_splat).data.copy()
    if gt is not None:
        checkSameSize(depth_splat, gt, 'splat depth and ground truth')
        valid = gt.validMask()
        target[valid] = gt.data[valid]
    z = depth_splat.data.copy()
    h, w = z.shape
    lum = guide.luminance()
    wx = np.zeros((h, w + 1))    # wx[:, j] links columns j-1 and j
    wy = np.zeros((h + 1, w))
    if w > 1:
        wx[:, 1:w] = lambda_smooth * np.exp(-np.abs(np.diff(lum, axis=1))) / (h*(w - 1))
    if h > 1:
        wy[1:h, :] = lambda_smooth * np.exp(-np.abs(np.diff(lum, axis=0))) / ((h - 1)*w)
    wd = np.full((h, w), lambda_data / float(h*w))
    weights = np.stack([wd, wx[:, :w], wx[:, 1:], wy[:h, :], wy[1:, :]])
    parity = np.add.outer(np.arange(h), np.arange(w)) % 2
    for sweep in range(int(sweeps)):
        before = z.copy()
        for color in (0, 1):
            padded = np.pad(z, 1, mode='edge')
            vals = np.stack([target, padded[1:-1, :-2], padded[1:-1, 2:],
                             padded[:-2, 1:-1], padded[2:, 1:-1]])
            z = np.where(parity == color, weightedMedian(vals, weights), z)
        if np.array_equal(z, before):
            DEBUG('refinement converged after %d sweeps' % (sweep + 1))
            break
    return DepthMap(np.maximum(z, 0.0))
