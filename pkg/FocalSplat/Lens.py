"""
Thin-lens circle of confusion.

All lens quantities are SI meters; the conversion to pixels happens only
in coc_radius, which divides by twice the pixel pitch so that sigma is a
radius in pixels.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from FocalSplat.Errors import DomainError


@dataclass(frozen=True)
class LensModel:
    """
    Camera optics: focal length f, f-number N, focus distance F_d and
    pixel pitch p. The aperture diameter A = f/N is derived.
    """
    focal_length_m: float
    f_number: float
    focus_distance_m: float
    pixel_pitch_m: float

    def __post_init__(self):
        for name in ('focal_length_m', 'f_number', 'pixel_pitch_m'):
            value = getattr(self, name)
            if not (np.isfinite(value) and value > 0):
                raise DomainError('%s must be positive, got %r' % (name, value))
        if not (np.isfinite(self.focus_distance_m)
                and self.focus_distance_m > self.focal_length_m):
            raise DomainError(
                'focus distance %r must exceed the focal length %r'
                % (self.focus_distance_m, self.focal_length_m))

    @property
    def aperture_m(self):
        return self.focal_length_m / self.f_number

    def withFocus(self, focus_distance_m):
        """Return a copy of this lens focused at another distance."""
        return dataclasses.replace(self, focus_distance_m=float(focus_distance_m))


def far_limit(lens):
    """sigma at infinite depth: f^2 / (2 p N (F_d - f))."""
    f = lens.focal_length_m
    return f*f / (2.0*lens.pixel_pitch_m*lens.f_number
                  * (lens.focus_distance_m - f))


def coc_radius(lens, depth_m):
    """
    Circle of confusion radius in pixels for an object at depth_m.

    Accepts a scalar (returns a float) or an array of depths (returns an
    array of the same shape). Zero exactly at the focus distance.
    """
    d = np.asarray(depth_m, dtype=np.float64)
    if not np.all(d > 0):
        raise DomainError('depth must be positive')
    fd = lens.focus_distance_m
    sigma = np.abs(d - fd) / d * far_limit(lens)
    if sigma.ndim == 0: return float(sigma)
    return sigma


def invert_coc(lens, sigma_px) -> Tuple[float, Optional[float]]:
    """
    Return the depths (near, far) whose circle of confusion is sigma_px.

    The near branch lies in front of the focus distance and always exists.
    The far branch exists only while sigma stays below the far limit;
    otherwise it is None.
    """
    sigma_px = float(sigma_px)
    if not sigma_px >= 0:
        raise DomainError('blur radius must be non-negative, got %r' % sigma_px)
    fd = lens.focus_distance_m
    k = sigma_px / far_limit(lens)
    near = fd / (1.0 + k)
    far = k < 1.0 and fd / (1.0 - k) or None
    return near, far


def coc_curve(lens, depth_min_m, depth_max_m, n_samples) -> List[Tuple[float, float]]:
    """
    Sample sigma(d) on a uniform depth grid, as (depth_m, sigma_px) pairs.

    A sample that lands within rounding of the focus distance is snapped
    onto it, so the curve reaches zero exactly there.
    """
    if not (0 < depth_min_m < depth_max_m):
        raise DomainError('need 0 < depth_min < depth_max, got %r, %r'
                          % (depth_min_m, depth_max_m))
    if int(n_samples) < 2:
        raise DomainError('need at least 2 samples, got %r' % n_samples)
    depths = np.linspace(depth_min_m, depth_max_m, int(n_samples))
    fd = lens.focus_distance_m
    step = depths[1] - depths[0]
    near = np.abs(depths - fd) <= 1e-9 * max(step, fd)
    depths[near] = fd
    sigmas = coc_radius(lens, depths)
    return [(float(d), float(s)) for d, s in zip(depths, sigmas)]


def parse_lens_spec(text, focus_distance_m=None):
    """
    Parse a lens given as comma separated key=value pairs, e.g.
    'f=0.05,N=2,Fd=2,p=1e-5'. Fd may be omitted when focus_distance_m
    is supplied.
    """
    keys = {'f': 'focal_length_m', 'N': 'f_number',
            'Fd': 'focus_distance_m', 'p': 'pixel_pitch_m'}
    values = {}
    if focus_distance_m is not None:
        values['focus_distance_m'] = float(focus_distance_m)
    for item in filter(None, [s.strip() for s in text.split(',')]):
        key, sep, value = item.partition('=')
        if not sep or key.strip() not in keys:
            raise DomainError('bad lens parameter %r (expected f, N, Fd, p)' % item)
        try:
            values[keys[key.strip()]] = float(value)
        except ValueError:
            raise DomainError('lens parameter %s is not a number: %r'
                              % (key.strip(), value))
    missing = [k for k, v in keys.items() if v not in values]
    if missing:
        raise DomainError('lens is missing %s' % ', '.join(missing))
    return LensModel(**values)
