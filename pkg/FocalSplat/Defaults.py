######################################################################
# global flags and constants for FocalSplat
# see also Procedural.STYLES

import os
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

from FocalSplat.Errors import DomainError
from FocalSplat.Lens import LensModel

# PSF layer
PSF_WINDOW = 7                # spatially varying kernel window, pixels
SIGMA_THRESHOLD = 1.0         # blur radii below this are treated as zero
SIGMA0 = 0.0                  # baseline blur G0 of a real capture, pixels

# splat rasterizer
CUTOFF_T = 3.0                # Mahalanobis cutoff radius of each splat
ALPHA_CLAMP = 0.99
TRANSMITTANCE_MIN = 1e-4      # compositing stops below this
NEAR_PLANE = 1e-3             # meters; splats nearer than this are culled
TILE_SIZE = 16                # rasterizer tile edge, pixels
BAND_ROWS = 16                # PSF layer work unit, rows

# losses
SSIM_WINDOW = 11              # pixels; sigma 1.5 truncated at 3.5 sigma
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
DEFOCUS_PATCH = 16
BLUR_BETA = 0.01
BLUR_EPS = 1e-8
MU1, MU2, MU3 = 1.0, 0.01, 1.0
ALPHA_SSIM = 0.2
DELTA_BASE = 1.25

# depth search and refinement
GRID_SIZE = 64                # log-spaced candidate depths
MATCH_PATCH = 16
LOW_TEXTURE_STD = 0.01        # patches flatter than this are unreliable
FLAT_COST_TOL = 1e-6
REFINE_LAMBDA_DATA = 1.0
REFINE_LAMBDA_SMOOTH = 0.1
REFINE_SWEEPS = 50

# fitting
FIT_ITERATIONS = 200
FD_STEP = 1e-4
MAX_HALVINGS = 5
PARAMETER_GROUPS = ['pos', 'scale', 'rot', 'opacity', 'color', 'focus']
STEP_SIZES = {
    'pos':     2e-3,   # meters
    'scale':   1e-2,   # log-scale units
    'rot':     1e-2,
    'opacity': 1e-2,
    'color':   1e-2,
    'focus':   1e-2,   # meters
    }

# file formats
PFM_SCALE = '-1.0000'         # little-endian marker
MANIFEST_VERSION = 1
CSV_DIGITS = 9
OUTPUT_DIR_ENV = 'FOCALSPLAT_OUTPUT_DIR'

def defaultOutputDir():
    """The output directory used when a command is given none."""
    return os.environ.get(OUTPUT_DIR_ENV, '.')


######################################################################
# capture protocols
#
# Each protocol binds a depth range and a list of focus distances, plus a
# desk-scale lens (focal length, f-number, pixel pitch) chosen so that
# blur radii stay within a few pixels at 64x64.

PROTOCOLS = {}

def registerProtocol(name, depth_range, focus_distances, lens):
    """
    Add a capture protocol preset.

    >>> from FocalSplat.Defaults import registerProtocol
    >>> registerProtocol('macro', (0.05, 0.5), [0.08, 0.12, 0.2],
    ...                  (0.05, 4.0, 1e-5))

    """
    PROTOCOLS[name] = {
        'depth_range': tuple(depth_range),
        'focus_distances': list(focus_distances),
        'lens': tuple(lens),  # focal_length_m, f_number, pixel_pitch_m
        }

registerProtocol('fod500-style', (0.2, 3.0),
                 [0.3, 0.45, 0.75, 1.2, 1.8], (0.015, 8.0, 1.4e-5))
registerProtocol('nyuv2-style', (0.5, 10.0),
                 [1.0, 1.5, 2.5, 4.0, 6.0], (0.015, 2.0, 1.4e-5))
# custom starts from the nyuv2-style values; every field may be overridden
registerProtocol('custom', (0.5, 10.0),
                 [1.0, 1.5, 2.5, 4.0, 6.0], (0.015, 2.0, 1.4e-5))


######################################################################
# run configuration

@dataclass
class RunConfig:
    """
    Everything a synthesis or estimation run needs besides its inputs:
    the protocol with its depth range and focus distances, the base lens,
    the baseline blur, the seed and where outputs go.
    """
    protocol: str = 'nyuv2-style'
    depth_range: Tuple[float, float] = (0.5, 10.0)
    focus_distances: List[float] = field(default_factory=list)
    lens: Optional[LensModel] = None       # LensModel focused at the first distance
    sigma0: float = SIGMA0
    seed: int = 0
    output_dir: str = '.'

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise DomainError('unknown protocol %r; choose from %s'
                              % (self.protocol, ', '.join(sorted(PROTOCOLS))))
        lo, hi = self.depth_range
        if not 0 < lo < hi:
            raise DomainError('bad depth range %r' % (self.depth_range,))
        fds = [float(x) for x in self.focus_distances]
        if not fds or any(b <= a for a, b in zip(fds, fds[1:])):
            raise DomainError('focus distances must be non-empty and strictly increasing')
        self.focus_distances = fds
        if self.sigma0 < 0:
            raise DomainError('baseline blur must be non-negative')

    @property
    def max_depth_m(self):
        return self.depth_range[1]

    @classmethod
    def fromProtocol(cls, name, seed=0, output_dir=None, depth_range=None,
                     focus_distances=None, lens=None, sigma0=SIGMA0):
        """
        Start from a registered protocol preset; any argument given
        overrides the preset value.
        """
        if name not in PROTOCOLS:
            raise DomainError('unknown protocol %r; choose from %s'
                              % (name, ', '.join(sorted(PROTOCOLS))))
        preset = PROTOCOLS[name]
        fds = list(focus_distances or preset['focus_distances'])
        if lens is None:
            f, n, p = preset['lens']
            lens = LensModel(f, n, fds[0], p)
        return cls(name, tuple(depth_range or preset['depth_range']), fds, lens,
                   sigma0, int(seed), output_dir or defaultOutputDir())
