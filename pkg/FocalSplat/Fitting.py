"""
Joint fitting of a Gaussian scene and per-view focus distances to a set
of blurred target views.

The objective is total_loss over three parts, averaged over views:

  L_recon    recon_loss of the depth-of-field render against the target
  L_blur     |blur_loss(render) - blur_loss(target)|
  L_defocus  defocus_loss of the rendered defocus map against a target
             defocus map, less the target's own score, or 0 without one

Gradients are central finite differences over the unmasked parameters;
each iteration takes an Adam-style step per parameter group and
backtracks by halving until the loss does not increase.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from FocalSplat import Defaults
from FocalSplat.Defocus import DefocusMap, RasterImage
from FocalSplat.Errors import DomainError, NonFiniteLossError
from FocalSplat.Lens import coc_radius
from FocalSplat.Losses import LossWeights, blur_loss, defocus_loss, recon_loss, total_loss
from FocalSplat.Splatting import Gaussian3D, GaussianScene, render
from FocalSplat.Utils import BLATHER, DEBUG, INFO

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
SCALE_GROWTH = 1.2


@dataclass
class FitConfig:
    """Settings of one fit_scene run."""
    iterations: int = Defaults.FIT_ITERATIONS
    step_sizes: Dict[str, float] = field(
        default_factory=lambda: dict(Defaults.STEP_SIZES))
    fd_step: float = Defaults.FD_STEP
    weights: LossWeights = field(default_factory=LossWeights)
    optimize: List[str] = field(
        default_factory=lambda: list(Defaults.PARAMETER_GROUPS))
    max_halvings: int = Defaults.MAX_HALVINGS
    enable_dof: bool = True
    cutoff_t: float = Defaults.CUTOFF_T
    workers: int = 1

    def __post_init__(self):
        if int(self.iterations) < 1:
            raise DomainError('iterations must be at least 1, got %r' % self.iterations)
        if not self.fd_step > 0:
            raise DomainError('finite difference step must be positive')
        unknown = [g for g in self.optimize if g not in Defaults.PARAMETER_GROUPS]
        if unknown:
            raise DomainError('unknown parameter group(s) %s; expected some of %s'
                              % (', '.join(unknown), ','.join(Defaults.PARAMETER_GROUPS)))
        for g in self.optimize:
            if not self.step_sizes.get(g, 0) > 0:
                raise DomainError('step size of %s must be positive' % g)

    @staticmethod
    def parseGroups(text):
        """Turn 'pos,scale' into a group list."""
        return [g.strip() for g in text.split(',') if g.strip()]


######################################################################
# parameter packing

class SceneParameters:
    """
    I map a scene and its views to a flat parameter vector and back.

    Scales live in log space so every step keeps them positive. Decoding
    renormalizes quaternions, clips opacities and colours to [0,1] and
    keeps focus distances beyond the focal length.
    """
    def __init__(self, scene, views, groups):
        self.base = scene
        self.views = list(views)
        self.groups = [g for g in Defaults.PARAMETER_GROUPS if g in groups]
        self.slices = {}
        n = len(scene.gaussians)
        sizes = {'pos': 3*n, 'scale': 3*n, 'rot': 4*n, 'opacity': n,
                 'color': 3*n, 'focus': len(self.views)}
        start = 0
        for g in self.groups:
            self.slices[g] = slice(start, start + sizes[g])
            start += sizes[g]
        self.size = start

    def encode(self):
        gs = self.base.gaussians
        parts = {
            'pos': lambda: np.concatenate([g.mean for g in gs]),
            'scale': lambda: np.log(np.concatenate([g.scale for g in gs])),
            'rot': lambda: np.concatenate([g.rotation for g in gs]),
            'opacity': lambda: np.array([g.opacity for g in gs]),
            'color': lambda: np.concatenate([g.color for g in gs]),
            'focus': lambda: np.array([v.lens.focus_distance_m for v in self.views]),
            }
        if not self.groups: return np.zeros(0)
        return np.concatenate([parts[g]() for g in self.groups]).astype(np.float64)

    def take(self, x, group, width):
        if group not in self.slices: return None
        return x[self.slices[group]].reshape(-1, width)

    def decode(self, x):
        """Return (scene, views) for a parameter vector."""
        pos = self.take(x, 'pos', 3)
        scale = self.take(x, 'scale', 3)
        rot = self.take(x, 'rot', 4)
        opacity = self.take(x, 'opacity', 1)
        color = self.take(x, 'color', 3)
        gaussians = []
        for i, g in enumerate(self.base.gaussians):
            q = g.rotation
            if rot is not None:
                norm = np.linalg.norm(rot[i])
                if norm > 0: q = rot[i] / norm
            gaussians.append(Gaussian3D(
                g.mean if pos is None else pos[i],
                g.scale if scale is None else np.exp(scale[i]),
                q,
                g.opacity if opacity is None else float(np.clip(opacity[i, 0], 0.0, 1.0)),
                g.color if color is None else np.clip(color[i], 0.0, 1.0)))
        views = self.views
        if 'focus' in self.slices:
            views = []
            for v, fd in zip(self.views, x[self.slices['focus']]):
                f = v.lens.focal_length_m
                views.append(v.withLens(v.lens.withFocus(max(fd, f * (1.0 + 1e-6)))))
        return GaussianScene(gaussians, views), views

    def project(self, x):
        """Bring x back inside the feasible set, as decode sees it."""
        x = x.copy()
        if 'rot' in self.slices:
            q = x[self.slices['rot']].reshape(-1, 4)
            norms = np.linalg.norm(q, axis=1, keepdims=True)
            base = np.array([g.rotation for g in self.base.gaussians])
            q = np.where(norms > 0, q / np.where(norms > 0, norms, 1.0), base)
            x[self.slices['rot']] = q.ravel()
        for g in ('opacity', 'color'):
            if g in self.slices: x[self.slices[g]] = np.clip(x[self.slices[g]], 0.0, 1.0)
        if 'focus' in self.slices:
            f = np.array([v.lens.focal_length_m for v in self.views])
            x[self.slices['focus']] = np.maximum(x[self.slices['focus']], f * (1.0 + 1e-6))
        return x


######################################################################
# objective

def matchChannels(rendered, target):
    """Rendered samples with the channel count of target."""
    if target.channels == 1 and rendered.channels == 3:
        return RasterImage(rendered.luminance())
    return rendered


def renderedDefocus(depth, lens):
    sigma = np.zeros(depth.shape)
    valid = depth.validMask()
    if valid.any(): sigma[valid] = coc_radius(lens, depth.data[valid])
    return DefocusMap(sigma)


def defocusPatch(shape):
    """Patch size for defocus_loss: the largest common divisor of both sides
    and the default patch."""
    return math.gcd(math.gcd(int(shape[0]), int(shape[1])), Defaults.DEFOCUS_PATCH)


class Objective:
    """
    The fitting loss of a parameter vector. Calls are independent, so
    probes may be evaluated concurrently.
    """
    def __init__(self, params, targets, cfg):
        self.params, self.targets, self.cfg = params, targets, cfg
        w = cfg.weights
        self.target_blur = [blur_loss(t[1], beta=w.beta_blur) for t in targets]
        self.target_defocus = [
            defocus_loss(t[2], t[2], defocusPatch(t[2].shape)) if t[2] is not None else 0.0
            for t in targets]

    def parts(self, x):
        """Return (l_defocus, l_blur, l_recon) at x."""
        scene, views = self.params.decode(x)
        w = self.cfg.weights
        l_def = l_blur = l_recon = 0.0
        for view, (_, target, defocus), tb, td in zip(
                views, self.targets, self.target_blur, self.target_defocus):
            image, depth = render(scene, view, self.cfg.enable_dof,
                                  self.cfg.cutoff_t)
            image = matchChannels(image, target)
            l_recon += recon_loss(image, target, w.alpha_ssim)
            if w.mu2: l_blur += abs(blur_loss(image, beta=w.beta_blur) - tb)
            if defocus is not None and w.mu1:
                l_def += defocus_loss(renderedDefocus(depth, view.lens), defocus,
                                      defocusPatch(defocus.shape)) - td
        n = float(len(self.targets))
        return l_def / n, l_blur / n, l_recon / n

    def __call__(self, x):
        value = total_loss(*self.parts(x), w=self.cfg.weights)
        if not np.isfinite(value):
            raise NonFiniteLossError('fitting loss became %r' % value)
        return float(value)


def numericGradient(fn, x, steps, workers=1):
    """
    Central difference gradient of fn at x; steps gives h per coordinate.
    Probes run on a thread pool when workers > 1, and are gathered in
    coordinate order.
    """
    steps = np.broadcast_to(np.asarray(steps, dtype=np.float64), x.shape)
    probes = []
    for i in range(len(x)):
        for sign in (1.0, -1.0):
            p = x.copy()
            p[i] += sign * steps[i]
            probes.append(p)
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            values = list(pool.map(fn, probes))
    else:
        values = [fn(p) for p in probes]
    values = np.array(values).reshape(len(x), 2)
    return (values[:, 0] - values[:, 1]) / (2.0 * steps)


######################################################################
# descent

def fit_scene(scene, views, cfg=None):
    """
    Fit scene attributes and focus distances to target views.

    views is a list of (CameraView, RasterImage) pairs, optionally with a
    target DefocusMap as a third item. Returns the fitted scene (carrying
    the fitted views) and the loss trace, whose first value is the loss
    before any step. The trace never increases: a step that still raises
    the loss after max_halvings halvings is dropped.
    """
    cfg = cfg or FitConfig()
    if not scene.gaussians:
        raise DomainError('cannot fit an empty scene')
    if not views:
        raise DomainError('fitting needs at least one target view')
    targets = []
    for item in views:
        view, target = item[0], item[1]
        defocus = item[2] if len(item) > 2 else None
        if (target.width, target.height) != (view.width, view.height):
            raise DomainError('target is %dx%d but the view renders %dx%d'
                              % (target.width, target.height, view.width, view.height))
        targets.append((view, target, defocus))

    params = SceneParameters(scene, [t[0] for t in targets], cfg.optimize)
    objective = Objective(params, targets, cfg)
    x = params.encode()
    loss = objective(x)
    trace = [loss]
    INFO('fitting %d gaussians to %d views, %d parameters, initial loss %.6g'
         % (len(scene.gaussians), len(targets), params.size, loss))
    if params.size == 0:
        trace.extend([loss] * int(cfg.iterations))
        return params.decode(x)[0], trace

    lr = np.zeros(params.size)
    for g, s in params.slices.items(): lr[s] = cfg.step_sizes[g]
    h = np.full(params.size, float(cfg.fd_step))
    m = np.zeros(params.size)
    v = np.zeros(params.size)
    scale = 1.0
    for it in range(1, int(cfg.iterations) + 1):
        grad = numericGradient(objective, x, h, cfg.workers)
        if not np.all(np.isfinite(grad)):
            raise NonFiniteLossError('gradient became non-finite at iteration %d' % it)
        m = ADAM_BETA1*m + (1 - ADAM_BETA1)*grad
        v = ADAM_BETA2*v + (1 - ADAM_BETA2)*grad*grad
        mhat = m / (1 - ADAM_BETA1**it)
        vhat = v / (1 - ADAM_BETA2**it)
        step = lr * mhat / (np.sqrt(vhat) + ADAM_EPS)
        accepted = False
        for halving in range(int(cfg.max_halvings) + 1):
            candidate = params.project(x - scale * step)
            new = objective(candidate)
            if new <= loss:
                x, loss, accepted = candidate, new, True
                if halving == 0: scale = min(1.0, scale * SCALE_GROWTH)
                break
            scale *= 0.5
        if not accepted:
            DEBUG('iteration %d: no descent after %d halvings' % (it, cfg.max_halvings))
        trace.append(loss)
        BLATHER('iteration %d loss %.6g step scale %.4g' % (it, loss, scale))
    INFO('final loss %.6g after %d iterations' % (loss, cfg.iterations))
    return params.decode(x)[0], trace
