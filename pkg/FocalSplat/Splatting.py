"""
Defocus-aware 3D Gaussian splatting.

Each 3D Gaussian is projected to a screen-space splat (mean, 2x2
covariance, depth of its centre). With depth of field enabled the splat
is convolved with the blur kernel of its circle of confusion, which for
Gaussians is a covariance addition plus an opacity rescale that keeps the
splat's mass. Splats are composited front to back:

  I(x) = sum T_i a_i c_i      D(x) = sum T_i a_i z_i
  a_i  = min(0.99, o_i exp(-1/2 (x-m_i)' S_i^-1 (x-m_i)))
  T_i  = prod_{j<i} (1 - a_j)

A splat only reaches pixels within Mahalanobis radius cutoff_t of its
mean. Pixel (column j, row i) samples the image plane at (j, i).
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from FocalSplat import Defaults
from FocalSplat.Defocus import DepthMap, RasterImage
from FocalSplat.Errors import DomainError
from FocalSplat.Lens import LensModel, coc_radius
from FocalSplat.Utils import DEBUG

LN4 = np.log(4.0)


def quaternion_to_rotation(q):
    """Rotation matrix of a unit quaternion (w, x, y, z)."""
    w, x, y, z = q
    return np.array([
        [1 - 2*(y*y + z*z), 2*(x*y - w*z),     2*(x*z + w*y)],
        [2*(x*y + w*z),     1 - 2*(x*x + z*z), 2*(y*z - w*x)],
        [2*(x*z - w*y),     2*(y*z + w*x),     1 - 2*(x*x + y*y)],
        ])


def normalize_quaternion(q):
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if not n > 0: raise DomainError('zero quaternion')
    return q / n


@dataclass(eq=False)
class Gaussian3D:
    """
    One scene primitive: mean and per-axis scale in meters, rotation as a
    unit quaternion (w, x, y, z), opacity and a view independent colour.
    """
    mean: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    color: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).reshape(3)
        self.scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        self.color = np.asarray(self.color, dtype=np.float64).reshape(3)
        self.opacity = float(self.opacity)
        self.validate()

    def validate(self):
        if not all(np.all(np.isfinite(v)) for v in
                   (self.mean, self.scale, self.rotation, self.color, self.opacity)):
            raise DomainError('gaussian attributes must be finite')
        if abs(np.linalg.norm(self.rotation) - 1.0) > 1e-9:
            raise DomainError('rotation quaternion must have unit norm, got %.6g'
                              % np.linalg.norm(self.rotation))
        if not np.all(self.scale > 0):
            raise DomainError('gaussian scales must be positive')
        if not 0.0 <= self.opacity <= 1.0:
            raise DomainError('opacity must lie in [0,1], got %r' % self.opacity)
        if not (np.all(self.color >= 0) and np.all(self.color <= 1)):
            raise DomainError('colour components must lie in [0,1]')

    def covariance(self):
        """R diag(s^2) R'."""
        r = quaternion_to_rotation(self.rotation)
        return (r * self.scale**2) @ r.T

    def copy(self):
        return Gaussian3D(self.mean.copy(), self.scale.copy(), self.rotation.copy(),
                          self.opacity, self.color.copy())


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels, plus the image size."""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise DomainError('focal lengths in pixels must be positive')
        if not (int(self.width) > 0 and int(self.height) > 0):
            raise DomainError('image size must be positive')


@dataclass(eq=False)
class CameraView:
    """
    A world-to-camera rigid transform x_cam = R x + t, pinhole
    intrinsics, and the lens that sets the circle of confusion.
    """
    rotation: np.ndarray
    translation: np.ndarray
    intrinsics: Intrinsics
    lens: LensModel

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        r = self.rotation
        if (np.abs(r.T @ r - np.eye(3)).max() > 1e-6
                or np.linalg.det(r) <= 0):
            raise DomainError('view rotation must be orthonormal with det +1')

    @classmethod
    def fromPose(cls, pose, intrinsics, lens):
        """Build a view from a 3x4 row-major world-to-camera matrix."""
        pose = np.asarray(pose, dtype=np.float64).reshape(3, 4)
        return cls(pose[:, :3], pose[:, 3], intrinsics, lens)

    def pose(self):
        return np.hstack([self.rotation, self.translation[:, np.newaxis]])

    def withLens(self, lens):
        return dataclasses.replace(self, lens=lens)

    width = property(lambda self: int(self.intrinsics.width))
    height = property(lambda self: int(self.intrinsics.height))


@dataclass(eq=False)
class GaussianScene:
    """A list of Gaussians and the views that observe them."""
    gaussians: List[Gaussian3D]
    views: List[CameraView] = field(default_factory=list)

    def __len__(self): return len(self.gaussians)

    def copy(self):
        return GaussianScene([g.copy() for g in self.gaussians], list(self.views))


@dataclass(eq=False)
class Splat2D:
    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    coc_sigma: float
    opacity: float
    color: np.ndarray
    index: int = 0


######################################################################
# projection

def project(g, view, index=0):
    """
    Project a Gaussian into the view, or return None when its centre is
    not in front of the near plane.
    """
    t = view.rotation @ g.mean + view.translation
    tx, ty, tz = t
    if tz <= Defaults.NEAR_PLANE: return None
    k = view.intrinsics
    mean2d = np.array([k.fx*tx/tz + k.cx, k.fy*ty/tz + k.cy])
    # affine approximation of the perspective projection at t
    j = np.array([[k.fx/tz, 0.0, -k.fx*tx/(tz*tz)],
                  [0.0, k.fy/tz, -k.fy*ty/(tz*tz)]])
    m = j @ view.rotation
    cov2d = m @ g.covariance() @ m.T
    cov2d = 0.5 * (cov2d + cov2d.T)
    return Splat2D(mean2d, cov2d, float(tz), coc_radius(view.lens, tz),
                   g.opacity, g.color.copy(), index)


def blur_splat(s):
    """
    Convolve a splat with its circle of confusion kernel aI, a =
    sigma^2 / (2 ln 4), so the kernel falls to a quarter of its peak at the
    CoC radius. Opacity is scaled by sqrt(det S / det(S + aI)) to keep
    opacity * sqrt(det S) constant. Radii below the PSF threshold leave the
    splat unchanged.
    """
    if s.coc_sigma < Defaults.SIGMA_THRESHOLD: return s
    a = s.coc_sigma * s.coc_sigma / (2.0 * LN4)
    cov = s.cov2d + a * np.eye(2)
    ratio = np.linalg.det(s.cov2d) / np.linalg.det(cov)
    return dataclasses.replace(s, cov2d=cov, opacity=s.opacity * np.sqrt(ratio))


def prepareSplats(scene, view, enable_dof=True):
    """Project, blur and depth-sort the scene's splats for one view."""
    splats = []
    for i, g in enumerate(scene.gaussians):
        s = project(g, view, i)
        if s is None: continue
        if np.linalg.det(s.cov2d) <= 0:
            DEBUG('dropping degenerate splat', i)
            continue
        if enable_dof: s = blur_splat(s)
        splats.append(s)
    # ties keep scene order
    splats.sort(key=lambda s: (s.depth, s.index))
    return splats


######################################################################
# rasterization

class _SplatArrays:
    """The depth-sorted splats of a view, as flat arrays."""
    def __init__(self, splats, cutoff_t):
        n = len(splats)
        self.count = n
        self.mean = np.array([s.mean2d for s in splats]).reshape(n, 2)
        cov = np.array([s.cov2d for s in splats]).reshape(n, 2, 2)
        det = cov[:, 0, 0]*cov[:, 1, 1] - cov[:, 0, 1]*cov[:, 1, 0]
        self.conic = np.stack([cov[:, 1, 1]/det, -cov[:, 0, 1]/det, cov[:, 0, 0]/det],
                              axis=1)
        self.opacity = np.array([s.opacity for s in splats])
        self.color = np.array([s.color for s in splats]).reshape(n, 3)
        self.depth = np.array([s.depth for s in splats])
        ex = cutoff_t * np.sqrt(cov[:, 0, 0])
        ey = cutoff_t * np.sqrt(cov[:, 1, 1])
        self.x0, self.x1 = self.mean[:, 0] - ex, self.mean[:, 0] + ex
        self.y0, self.y1 = self.mean[:, 1] - ey, self.mean[:, 1] + ey
        self.t2 = cutoff_t * cutoff_t


def _renderTile(arrays, x0, x1, y0, y1):
    """Composite the pixels with columns x0..x1 and rows y0..y1."""
    yy, xx = np.mgrid[y0:y1, x0:x1].astype(np.float64)
    T = np.ones(xx.shape)
    color = np.zeros(xx.shape + (3,))
    depth = np.zeros(xx.shape)
    done = np.zeros(xx.shape, dtype=bool)
    hits = np.nonzero((arrays.x1 >= x0) & (arrays.x0 <= x1 - 1) &
                      (arrays.y1 >= y0) & (arrays.y0 <= y1 - 1))[0]
    for k in hits:
        dx = xx - arrays.mean[k, 0]
        dy = yy - arrays.mean[k, 1]
        a, b, c = arrays.conic[k]
        m2 = a*dx*dx + 2.0*b*dx*dy + c*dy*dy
        inside = (m2 <= arrays.t2) & ~done
        if not inside.any(): continue
        alpha = np.minimum(Defaults.ALPHA_CLAMP, arrays.opacity[k] * np.exp(-0.5*m2))
        alpha = np.where(inside, alpha, 0.0)
        w = T * alpha
        color += w[:, :, np.newaxis] * arrays.color[k]
        depth += w * arrays.depth[k]
        T = T * (1.0 - alpha)
        done |= T < Defaults.TRANSMITTANCE_MIN
        if done.all(): break
    return color, depth


def render(scene, view, enable_dof=True, cutoff_t=Defaults.CUTOFF_T, workers=1):
    """
    Render colour and depth of the scene seen from view.

    The image is cut into fixed tiles of Defaults.TILE_SIZE; workers only
    changes how tiles are scheduled, so any worker count gives the same
    bits.
    """
    if not scene.gaussians:
        raise DomainError('cannot render an empty scene')
    width, height = view.width, view.height
    splats = prepareSplats(scene, view, enable_dof)
    color = np.zeros((height, width, 3))
    depth = np.zeros((height, width))
    if splats:
        arrays = _SplatArrays(splats, cutoff_t)
        size = Defaults.TILE_SIZE
        tiles = [(x, min(x + size, width), y, min(y + size, height))
                 for y in range(0, height, size) for x in range(0, width, size)]
        work = lambda tile: _renderTile(arrays, *tile)
        if workers and workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(work, tiles))
        else:
            parts = [work(t) for t in tiles]
        for (x0, x1, y0, y1), (c, d) in zip(tiles, parts):
            color[y0:y1, x0:x1] = c
            depth[y0:y1, x0:x1] = d
    return RasterImage(np.clip(color, 0.0, 1.0)), DepthMap(depth)


######################################################################
# depth maps and point clouds

def backproject(depth, view):
    """World-space points of the valid pixels of a depth map, N x 3."""
    k = view.intrinsics
    rows, cols = np.nonzero(depth.validMask())
    z = depth.data[rows, cols]
    cam = np.stack([(cols - k.cx) / k.fx * z, (rows - k.cy) / k.fy * z, z], axis=1)
    return (cam - view.translation) @ view.rotation


def scene_from_depth(aif, depth, view, stride=4, opacity=0.9):
    """
    Seed a scene with one isotropic Gaussian per stride x stride block of
    valid depth, coloured from the all-in-focus image.
    """
    if stride < 1: raise DomainError('stride must be at least 1')
    k = view.intrinsics
    gaussians = []
    mask = depth.validMask()
    for row in range(stride // 2, depth.height, stride):
        for col in range(stride // 2, depth.width, stride):
            if not mask[row, col]: continue
            z = depth.data[row, col]
            cam = np.array([(col - k.cx) / k.fx * z, (row - k.cy) / k.fy * z, z])
            mean = view.rotation.T @ (cam - view.translation)
            scale = np.full(3, 0.5 * stride * z / k.fx)
            rgb = aif.data[row, col]
            rgb = rgb if rgb.shape[0] == 3 else np.repeat(rgb, 3)
            gaussians.append(Gaussian3D(mean, scale, [1.0, 0.0, 0.0, 0.0],
                                        opacity, rgb))
    if not gaussians:
        raise DomainError('depth map has no valid pixels to seed a scene')
    return GaussianScene(gaussians, [view])
