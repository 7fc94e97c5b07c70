"""
File formats: the text scene format, PFM float maps, PNG images, stack
and views manifests, and CSV tables.

Scene files are line oriented. Blank lines and anything after # are
ignored; every other line is one record:

  camera W H fx fy cx cy f N p
  pose Fd r00 r01 r02 t0 r10 r11 r12 t1 r20 r21 r22 t2
  gaussian px py pz sx sy sz qw qx qy qz opacity r g b

The camera line gives the intrinsics and the lens shared by all views and
must precede the poses. Each pose is a row-major 3x4 world-to-camera
matrix plus the focus distance of that view.

Every writer refuses to replace an existing file unless force is true.
"""

from __future__ import annotations

import csv
import os
import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from PIL import Image

from FocalSplat import Defaults
from FocalSplat.Defocus import (DefocusMap, DepthMap, FocalStack, RasterImage,
                                StackEntry)
from FocalSplat.Errors import DomainError, FormatError, OverwriteError, ParseError
from FocalSplat.Lens import LensModel, parse_lens_spec
from FocalSplat.Splatting import CameraView, Gaussian3D, GaussianScene, Intrinsics
from FocalSplat.Utils import BLATHER, DEBUG, isStrictlyIncreasing

QUATERNION_TOLERANCE = 1e-6
RECORD_SIZES = {'camera': 9, 'pose': 13, 'gaussian': 14}


def checkWritable(path, force=False):
    """Refuse to overwrite path unless force; create its directory."""
    path = str(path)
    if os.path.exists(path) and not force:
        raise OverwriteError('%s exists; use --force to overwrite' % path)
    parent = os.path.dirname(path)
    if parent and not os.path.isdir(parent): os.makedirs(parent)
    return path


def number(x):
    """Format a float so that reading it back gives the same float."""
    return repr(float(x))


######################################################################
# text records

def tokenize(text):
    """
    Yield (line number, [(column, token)]) for each non-blank line,
    with comments stripped. Line and column numbers count from 1.
    """
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split('#', 1)[0]
        tokens = [(m.start() + 1, m.group()) for m in re.finditer(r'\S+', line)]
        if tokens: yield lineno, tokens


def numbers(tokens, path, lineno):
    out = []
    for column, token in tokens:
        try:
            out.append(float(token))
        except ValueError:
            raise ParseError('expected a number, got %r' % token, path, lineno, column)
        if not np.isfinite(out[-1]):
            raise ParseError('number must be finite, got %r' % token, path, lineno, column)
    return out


######################################################################
# scenes

def parse_scene(text, path=None):
    """Parse scene text; see the module docstring for the grammar."""
    camera, lens_params = None, None
    views, gaussians = [], []
    for lineno, tokens in tokenize(text):
        column, keyword = tokens[0]
        if keyword not in RECORD_SIZES:
            raise ParseError('unknown record %r' % keyword, path, lineno, column)
        args = tokens[1:]
        if len(args) != RECORD_SIZES[keyword]:
            where = args[RECORD_SIZES[keyword]][0] if len(args) > RECORD_SIZES[keyword] \
                    else column
            raise ParseError('%s needs %d numbers, got %d'
                             % (keyword, RECORD_SIZES[keyword], len(args)),
                             path, lineno, where)
        v = numbers(args, path, lineno)
        try:
            if keyword == 'camera':
                if camera is not None:
                    raise ParseError('only one camera record is allowed', path, lineno, column)
                for i in (0, 1):
                    if v[i] != int(v[i]):
                        raise ParseError('image size must be whole pixels',
                                         path, lineno, args[i][0])
                camera = Intrinsics(v[2], v[3], v[4], v[5], int(v[0]), int(v[1]))
                lens_params = v[6:9]
            elif keyword == 'pose':
                if camera is None:
                    raise ParseError('pose before camera', path, lineno, column)
                f, n, p = lens_params
                lens = LensModel(f, n, v[0], p)
                views.append(CameraView.fromPose(v[1:], camera, lens))
            else:
                q = np.array(v[6:10])
                norm = np.linalg.norm(q)
                if abs(norm - 1.0) > QUATERNION_TOLERANCE:
                    raise ParseError('rotation quaternion has norm %.6g, expected 1'
                                     % norm, path, lineno, args[6][0])
                if abs(norm - 1.0) > 1e-9: q = q / norm
                gaussians.append(Gaussian3D(v[0:3], v[3:6], q, v[10], v[11:14]))
        except DomainError as e:
            raise ParseError(str(e), path, lineno, column)
    if not gaussians:
        raise ParseError('scene has no gaussians', path)
    DEBUG('parsed %d gaussians and %d views' % (len(gaussians), len(views)))
    return GaussianScene(gaussians, views)


def load_scene(path):
    with open(path) as f:
        return parse_scene(f.read(), str(path))


def format_scene(scene):
    lines = ['# focalsplat scene: %d gaussians, %d views'
             % (len(scene.gaussians), len(scene.views))]
    if scene.views:
        first = scene.views[0]
        k, lens = first.intrinsics, first.lens
        for v in scene.views[1:]:
            other = (v.lens.focal_length_m, v.lens.f_number, v.lens.pixel_pitch_m)
            if v.intrinsics != k or other != (lens.focal_length_m, lens.f_number,
                                             lens.pixel_pitch_m):
                raise DomainError('scene files need one camera shared by all views')
        lines.append('camera %d %d %s' % (k.width, k.height, ' '.join(map(number, (
            k.fx, k.fy, k.cx, k.cy,
            lens.focal_length_m, lens.f_number, lens.pixel_pitch_m)))))
        for v in scene.views:
            lines.append('pose %s %s' % (number(v.lens.focus_distance_m),
                                         ' '.join(map(number, v.pose().ravel()))))
    for g in scene.gaussians:
        values = list(g.mean) + list(g.scale) + list(g.rotation) + [g.opacity] + list(g.color)
        lines.append('gaussian ' + ' '.join(map(number, values)))
    return '\n'.join(lines) + '\n'


def save_scene(scene, path, force=False):
    text = format_scene(scene)
    with open(checkWritable(path, force), 'w') as f:
        f.write(text)
    BLATHER('wrote scene', path)


######################################################################
# PFM float maps

def write_pfm(path, data, force=False):
    """
    Write a single-channel map as little-endian PFM, rows bottom-up.
    data may be a DepthMap, DefocusMap or 2-D array.
    """
    a = np.asarray(getattr(data, 'data', data))
    if a.ndim == 3 and a.shape[2] == 1: a = a[:, :, 0]
    if a.ndim != 2:
        raise DomainError('PFM maps are single-channel, got shape %s' % (a.shape,))
    height, width = a.shape
    payload = np.flipud(a).astype('<f4').tobytes()
    with open(checkWritable(path, force), 'wb') as f:
        f.write(('Pf\n%d %d\n%s\n' % (width, height, Defaults.PFM_SCALE)).encode('ascii'))
        f.write(payload)
    BLATHER('wrote', path)


def read_pfm_array(path):
    """The float32 samples of a single-channel little-endian PFM, top row first."""
    with open(path, 'rb') as f:
        tag = f.readline().rstrip(b'\r\n')
        if tag == b'PF':
            raise FormatError('%s: colour PFM where a single-channel map was expected'
                              % path)
        if tag != b'Pf':
            raise FormatError('%s: not a PFM file' % path)
        try:
            width, height = [int(x) for x in f.readline().split()]
            scale = float(f.readline())
        except ValueError:
            raise FormatError('%s: malformed PFM header' % path)
        if width <= 0 or height <= 0:
            raise FormatError('%s: bad PFM size %dx%d' % (path, width, height))
        if scale >= 0:
            raise FormatError('%s: big-endian PFM is not supported' % path)
        payload = f.read()
    if len(payload) != 4 * width * height:
        raise FormatError('%s: expected %d bytes of samples, found %d'
                          % (path, 4 * width * height, len(payload)))
    a = np.frombuffer(payload, dtype='<f4').reshape(height, width)
    return np.flipud(a).astype(np.float32)


def read_pfm(path, kind=DepthMap):
    """Read a map; kind picks DepthMap (default) or DefocusMap."""
    return kind(read_pfm_array(path))


######################################################################
# PNG images

def read_png(path):
    """Read an 8 or 16 bit PNG as a RasterImage; alpha is dropped."""
    try:
        img = Image.open(path)
        img.load()
    except (OSError, SyntaxError) as e:
        raise FormatError('%s: cannot read image: %s' % (path, e))
    if img.mode in ('I;16', 'I;16B', 'I;16L', 'I'):
        a = np.asarray(img, dtype=np.float64) / 65535.0
    elif img.mode in ('L', 'RGB'):
        a = np.asarray(img, dtype=np.float64) / 255.0
    elif img.mode == 'LA':
        a = np.asarray(img.convert('L'), dtype=np.float64) / 255.0
    else:
        a = np.asarray(img.convert('RGB'), dtype=np.float64) / 255.0
    return RasterImage(np.clip(a, 0.0, 1.0))


def write_png(path, image, bits=8, force=False):
    """
    Write a RasterImage as PNG. bits=16 is available for single-channel
    images; colour images are always 8 bit.
    """
    a = image.data
    if bits not in (8, 16):
        raise DomainError('PNG depth must be 8 or 16 bits, got %r' % bits)
    if bits == 16 and image.channels != 1:
        raise DomainError('16-bit PNG output is single-channel only')
    if image.channels == 1: a = a[:, :, 0]
    if bits == 16:
        out = Image.fromarray(np.round(a * 65535.0).astype(np.uint16))
    else:
        out = Image.fromarray(np.round(a * 255.0).astype(np.uint8))
    out.save(checkWritable(path, force), format='PNG')
    BLATHER('wrote', path)


######################################################################
# manifests

@dataclass
class ManifestEntry:
    image: str
    focus_distance_m: float
    defocus: Optional[str] = None
    overrides: Dict[str, float] = field(default_factory=dict)


@dataclass
class Manifest:
    """
    A focal stack on disk: the base lens (focal length, f-number, pixel
    pitch), optional ground truth depth and all-in-focus image, and one
    entry per view with its focus distance. Paths are relative to
    directory.
    """
    lens: Dict[str, float]
    entries: List[ManifestEntry]
    depth: Optional[str] = None
    aif: Optional[str] = None
    version: int = Defaults.MANIFEST_VERSION
    directory: str = '.'

    def path(self, name):
        return os.path.join(self.directory, name)

    def lensFor(self, entry):
        spec = dict(self.lens)
        spec.update(entry.overrides)
        text = ','.join('%s=%s' % (k, number(v)) for k, v in spec.items())
        return parse_lens_spec(text, entry.focus_distance_m)

    def validate(self, where=None):
        if self.version != Defaults.MANIFEST_VERSION:
            raise FormatError('%s: unsupported manifest version %r'
                              % (where, self.version))
        if not self.entries:
            raise FormatError('%s: manifest lists no entries' % where)
        fds = [e.focus_distance_m for e in self.entries]
        if not isStrictlyIncreasing(fds):
            raise FormatError('%s: focus distances must be strictly increasing: %s'
                              % (where, fds))
        names = [self.depth, self.aif] + [e.image for e in self.entries] + \
                [e.defocus for e in self.entries]
        for name in filter(None, names):
            if not os.path.exists(self.path(name)):
                raise FormatError('%s: referenced file %s does not exist'
                                  % (where, self.path(name)))


LENS_KEYS = ('f', 'N', 'p')


def parseAssignments(tokens, path, lineno, allowed):
    out = {}
    for column, token in tokens:
        for item in filter(None, token.split(',')):
            key, sep, value = item.partition('=')
            if not sep or key not in allowed:
                raise ParseError('expected one of %s=value, got %r'
                                 % ('/'.join(allowed), item), path, lineno, column)
            try:
                out[key] = float(value)
            except ValueError:
                raise ParseError('%s is not a number: %r' % (key, value),
                                 path, lineno, column)
    return out


def read_manifest(path):
    """
    Read a stack manifest:

      version 1
      lens f=0.015,N=2,p=1.4e-05
      depth depth.pfm
      aif aif.png
      entry view_00.png 1.0 [defocus_00.pfm|-] [N=2.8 ...]
    """
    path = str(path)
    with open(path) as f:
        text = f.read()
    version, lens, depth, aif, entries = None, None, None, None, []
    for lineno, tokens in tokenize(text):
        column, keyword = tokens[0]
        args = tokens[1:]
        if keyword == 'version' and len(args) == 1:
            try:
                version = int(args[0][1])
            except ValueError:
                raise ParseError('bad version %r' % args[0][1], path, lineno, args[0][0])
        elif keyword == 'lens' and args:
            lens = parseAssignments(args, path, lineno, LENS_KEYS)
        elif keyword in ('depth', 'aif') and len(args) == 1:
            if keyword == 'depth': depth = args[0][1]
            else: aif = args[0][1]
        elif keyword == 'entry' and len(args) >= 2:
            fd = numbers(args[1:2], path, lineno)[0]
            defocus = None
            rest = args[2:]
            if rest and '=' not in rest[0][1]:
                defocus = rest[0][1] != '-' and rest[0][1] or None
                rest = rest[1:]
            entries.append(ManifestEntry(args[0][1], fd, defocus,
                                         parseAssignments(rest, path, lineno, LENS_KEYS)))
        else:
            raise ParseError('unexpected record %r' % keyword, path, lineno, column)
    if version is None:
        raise ParseError('manifest has no version record', path)
    if lens is None or set(lens) != set(LENS_KEYS):
        raise ParseError('manifest lens must give f, N and p', path)
    manifest = Manifest(lens, entries, depth, aif, version,
                        os.path.dirname(os.path.abspath(path)))
    manifest.validate(path)
    return manifest


def write_manifest(manifest, path, force=False):
    lines = ['# focalsplat stack manifest',
             'version %d' % manifest.version,
             'lens ' + ','.join('%s=%s' % (k, number(manifest.lens[k])) for k in LENS_KEYS)]
    if manifest.depth: lines.append('depth %s' % manifest.depth)
    if manifest.aif: lines.append('aif %s' % manifest.aif)
    for e in manifest.entries:
        line = 'entry %s %s %s' % (e.image, number(e.focus_distance_m), e.defocus or '-')
        if e.overrides:
            line += ' ' + ','.join('%s=%s' % (k, number(v))
                                   for k, v in sorted(e.overrides.items()))
        lines.append(line)
    with open(checkWritable(path, force), 'w') as f:
        f.write('\n'.join(lines) + '\n')
    BLATHER('wrote manifest', path)


def load_stack(path):
    """Read a manifest and everything it references into a FocalStack."""
    manifest = read_manifest(path)
    entries = []
    for e in manifest.entries:
        defocus = (read_pfm(manifest.path(e.defocus), DefocusMap)
                   if e.defocus else None)
        entries.append(StackEntry(read_png(manifest.path(e.image)),
                                  manifest.lensFor(e), defocus))
    depth = read_pfm(manifest.path(manifest.depth)) if manifest.depth else None
    aif = read_png(manifest.path(manifest.aif)) if manifest.aif else None
    return FocalStack(entries, depth, aif)


def save_stack(stack, directory, force=False, manifest_name='manifest.txt'):
    """
    Write a stack as PNG views, PFM maps and a manifest in directory.
    Every target is checked before anything is written. Returns the
    manifest path.
    """
    base = stack[0].lens
    images = ['view_%02d.png' % i for i in range(len(stack))]
    defocus = [('defocus_%02d.pfm' % i if e.defocus is not None else None)
               for i, e in enumerate(stack)]
    depth = 'depth.pfm' if stack.depth is not None else None
    aif = 'aif.png' if stack.aif is not None else None
    target = os.path.join(directory, manifest_name)
    for name in images + defocus + [depth, aif]:
        if name: checkWritable(os.path.join(directory, name), force)
    checkWritable(target, force)

    entries = []
    for e, image, d in zip(stack, images, defocus):
        write_png(os.path.join(directory, image), e.image, force=True)
        if d: write_pfm(os.path.join(directory, d), e.defocus, force=True)
        overrides = {}
        if e.lens.focal_length_m != base.focal_length_m: overrides['f'] = e.lens.focal_length_m
        if e.lens.f_number != base.f_number: overrides['N'] = e.lens.f_number
        if e.lens.pixel_pitch_m != base.pixel_pitch_m: overrides['p'] = e.lens.pixel_pitch_m
        entries.append(ManifestEntry(image, e.focus_distance_m, d, overrides))
    if depth: write_pfm(os.path.join(directory, depth), stack.depth, force=True)
    if aif: write_png(os.path.join(directory, aif), stack.aif, force=True)
    manifest = Manifest({'f': base.focal_length_m, 'N': base.f_number,
                         'p': base.pixel_pitch_m}, entries, depth, aif,
                        directory=directory)
    write_manifest(manifest, target, True)
    return target


def read_views_manifest(path, scene):
    """
    Read fitting targets for a scene:

      version 1
      view <pose index> <image> [defocus.pfm]

    Returns a list of (CameraView, RasterImage[, DefocusMap]).
    """
    path = str(path)
    directory = os.path.dirname(os.path.abspath(path))
    with open(path) as f:
        text = f.read()
    version, views = None, []
    for lineno, tokens in tokenize(text):
        column, keyword = tokens[0]
        args = tokens[1:]
        if keyword == 'version' and len(args) == 1:
            version = args[0][1]
        elif keyword == 'view' and len(args) in (2, 3):
            try:
                index = int(args[0][1])
            except ValueError:
                raise ParseError('pose index must be an integer', path, lineno, args[0][0])
            if not 0 <= index < len(scene.views):
                raise ParseError('scene has no pose %d' % index, path, lineno, args[0][0])
            names = [a[1] for a in args[1:]]
            for (col, name) in args[1:]:
                if not os.path.exists(os.path.join(directory, name)):
                    raise ParseError('referenced file %s does not exist' % name,
                                     path, lineno, col)
            item = [scene.views[index], read_png(os.path.join(directory, names[0]))]
            if len(names) > 1:
                item.append(read_pfm(os.path.join(directory, names[1]), DefocusMap))
            views.append(tuple(item))
        else:
            raise ParseError('unexpected record %r' % keyword, path, lineno, column)
    if version != str(Defaults.MANIFEST_VERSION):
        raise ParseError('unsupported or missing views manifest version', path)
    if not views:
        raise ParseError('views manifest lists no views', path)
    return views


def write_views_manifest(path, items, force=False):
    """items are (pose index, image name[, defocus name]) tuples."""
    lines = ['version %d' % Defaults.MANIFEST_VERSION]
    lines += ['view ' + ' '.join(map(str, item)) for item in items]
    with open(checkWritable(path, force), 'w') as f:
        f.write('\n'.join(lines) + '\n')


######################################################################
# CSV

def formatCell(x):
    if isinstance(x, (float, np.floating)):
        return '%.*g' % (Defaults.CSV_DIGITS, x)
    return str(x)


def write_csv(path, header, rows, force=False):
    """Write a header and rows; floats get CSV_DIGITS significant digits."""
    with open(checkWritable(path, force), 'w', newline='') as f:
        w = csv.writer(f, lineterminator='\n')
        w.writerow(header)
        for row in rows:
            w.writerow([formatCell(x) for x in row])
    BLATHER('wrote', path)


def read_csv(path):
    """Return (header, rows) with all cells as strings."""
    with open(path, newline='') as f:
        rows = list(csv.reader(f))
    if not rows:
        raise FormatError('%s: empty CSV file' % path)
    return rows[0], rows[1:]
