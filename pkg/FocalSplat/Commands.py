"""
focalsplat - command line front end.

Subcommands:

  synth     make a procedural scene and its focal stack
  render    render a scene file's views, with or without depth of field
  estimate  recover depth and defocus maps from a focal stack
  fit       fit a scene and focus distances to target views
  invert    turn a defocus map into depth, using a prior to pick branches
  refine    refine a splat depth map against a defocus map
  eval      depth metrics of a prediction against ground truth
  plot      sample the circle of confusion curve of a lens as CSV

Exit status is 0 on success, 1 when the inputs are out of domain or
unreadable, 2 on usage errors.
"""

import argparse
import os
import sys

from FocalSplat import Defaults
from FocalSplat.Defaults import PROTOCOLS, RunConfig
from FocalSplat.Defocus import DefocusMap, synthesize_stack
from FocalSplat.Errors import DomainError, FocalSplatError
from FocalSplat.Estimation import (estimate_depth_from_stack, invert_defocus_to_depth,
                                   make_depth_grid, refine_depth)
from FocalSplat.Fitting import FitConfig, fit_scene
from FocalSplat.Lens import coc_curve, parse_lens_spec
from FocalSplat.Losses import LossWeights, depth_metrics
from FocalSplat.Procedural import STYLES, synth_procedural
from FocalSplat.SceneIO import (checkWritable, formatCell, load_scene, load_stack, read_png,
                                read_pfm, read_views_manifest, save_scene, save_stack,
                                write_csv, write_pfm, write_png)
from FocalSplat.Splatting import render
from FocalSplat.Utils import DEBUG, formattedTraceback, setupLogging

opts = None


def log(msg='', newline=True):
    """Print some text and/or a newline unless quiet option is true."""
    if not opts.quiet:
        sys.stderr.write('%s%s' % (msg, newline and '\n' or ' '))


def vlog(msg='', newline=True):
    """Print some text and/or a newline if verbose option is true."""
    if opts.verbose:
        sys.stderr.write('%s%s' % (msg, newline and '\n' or ' '))


def outputPath(name, given=None):
    """given, or name inside the default output directory."""
    return given or os.path.join(Defaults.defaultOutputDir(), name)


def floatList(text):
    try:
        return [float(x) for x in text.split(',') if x.strip()]
    except ValueError:
        raise DomainError('expected comma separated numbers, got %r' % text)


######################################################################
# subcommands

def synth(o):
    cfg = RunConfig.fromProtocol(
        o.protocol, seed=o.seed, output_dir=o.out,
        depth_range=(o.depth_min, o.depth_max) if o.depth_min and o.depth_max else None,
        focus_distances=o.focus and floatList(o.focus) or None,
        sigma0=o.sigma0)
    lens = cfg.lens
    if o.lens:
        lens = parse_lens_spec(o.lens, cfg.focus_distances[0])
    options = {}
    if o.planes: options['plane_depths'] = floatList(o.planes)
    aif, depth = synth_procedural(o.width, o.height, cfg.seed, o.style,
                                  cfg.depth_range, **options)
    stack = synthesize_stack(aif, depth, lens, cfg.focus_distances, cfg.sigma0,
                             workers=o.workers)
    manifest = save_stack(stack, cfg.output_dir, force=o.force)
    log('wrote %d-view %s stack to %s' % (len(stack), cfg.protocol, manifest))


def renderViews(o):
    scene = load_scene(o.scene)
    if not scene.views:
        raise DomainError('%s has no poses to render from' % o.scene)
    indices = range(len(scene.views)) if o.view is None else [o.view]
    outdir = outputPath('', o.out)
    for i in indices:
        if not 0 <= i < len(scene.views):
            raise DomainError('scene has %d views, no view %d' % (len(scene.views), i))
    targets = [(os.path.join(outdir, 'render_%02d.png' % i),
                os.path.join(outdir, 'depth_%02d.pfm' % i)) for i in indices]
    for image_path, depth_path in targets:
        checkWritable(image_path, o.force)
        checkWritable(depth_path, o.force)
    for i, (image_path, depth_path) in zip(indices, targets):
        image, depth = render(scene, scene.views[i], not o.no_dof, o.cutoff, o.workers)
        write_png(image_path, image, force=True)
        write_pfm(depth_path, depth, force=True)
        vlog('rendered view %d' % i)
    log('rendered %d view(s) to %s' % (len(indices), outdir))


def estimate(o):
    stack = load_stack(o.stack_manifest)
    lo, hi = PROTOCOLS[o.protocol]['depth_range']
    grid = make_depth_grid(stack.lenses(), o.grid_min or lo, o.grid_max or hi, o.grid_n)
    out = checkWritable(outputPath('depth.pfm', o.out_depth), o.force)
    defocus_paths = []
    if o.out_defocus_dir:
        defocus_paths = [checkWritable(os.path.join(o.out_defocus_dir, 'defocus_%02d.pfm' % i),
                                       o.force) for i in range(len(stack))]
    depth, defocus = estimate_depth_from_stack(stack, grid, o.patch, workers=o.workers)
    write_pfm(out, depth, force=True)
    for path, d in zip(defocus_paths, defocus):
        write_pfm(path, d, force=True)
    log('estimated depth %.3f..%.3f m, wrote %s' % (depth.data.min(), depth.data.max(), out))


def fit(o):
    scene = load_scene(o.scene)
    views = read_views_manifest(o.views_manifest, scene)
    weights = LossWeights.fromString(o.weights) if o.weights else LossWeights()
    cfg = FitConfig(iterations=o.iters, weights=weights,
                    optimize=FitConfig.parseGroups(o.optimize), workers=o.workers)
    # check both outputs before the long run
    out_scene = checkWritable(outputPath('fitted.scene', o.out_scene), o.force)
    if o.trace_csv: checkWritable(o.trace_csv, o.force)
    fitted, trace = fit_scene(scene, views, cfg)
    save_scene(fitted, out_scene, force=True)
    if o.trace_csv:
        write_csv(o.trace_csv, ['iteration', 'loss'], enumerate(trace), force=True)
    log('loss %.6g -> %.6g, wrote %s' % (trace[0], trace[-1], out_scene))


def invert(o):
    defocus = read_pfm(o.defocus, DefocusMap)
    prior = read_pfm(o.prior)
    lens = parse_lens_spec(o.lens)
    depth = invert_defocus_to_depth(defocus, lens, prior)
    out = outputPath('depth.pfm', o.out_depth)
    write_pfm(out, depth, force=o.force)
    log('wrote %s' % out)


def refine(o):
    depth = read_pfm(o.depth)
    defocus = read_pfm(o.defocus, DefocusMap)
    guide = read_png(o.guide)
    gt = read_pfm(o.gt) if o.gt else None
    refined = refine_depth(depth, defocus, parse_lens_spec(o.lens), guide, gt,
                           o.lambda_data, o.lambda_smooth, o.sweeps)
    out = outputPath('refined.pfm', o.out_depth)
    write_pfm(out, refined, force=o.force)
    log('wrote %s' % out)


def evaluate(o):
    pred, gt = read_pfm(o.pred), read_pfm(o.gt)
    m = depth_metrics(pred, gt, o.min_depth, o.max_depth)
    header = ['scene', 'rmse', 'absrel', 'delta1', 'delta2', 'delta3']
    row = [o.scene_name or os.path.splitext(os.path.basename(o.pred))[0]] + \
          [m[k] for k in header[1:]]
    writeTable(o.out, header, [row], o.force)


def plot(o):
    lens = parse_lens_spec(o.lens)
    curve = coc_curve(lens, o.depth_min, o.depth_max, o.samples)
    writeTable(o.out, ['depth_m', 'sigma_px'], curve, o.force)


def writeTable(path, header, rows, force):
    if path:
        write_csv(path, header, rows, force)
        vlog('wrote %s' % path)
    else:
        sys.stdout.write(','.join(header) + '\n')
        for row in rows:
            sys.stdout.write(','.join(formatCell(x) for x in row) + '\n')


######################################################################
# argument parsing

def makeParser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('-v', '--verbose', action='count', default=0,
                        help='be more verbose (repeat for debug output)')
    common.add_argument('-q', '--quiet', action='store_true', help='be less verbose')
    common.add_argument('--force', action='store_true',
                        help='overwrite existing output files')
    common.add_argument('--seed', type=int, default=0, help='random seed')
    common.add_argument('--workers', type=int, default=1,
                        help='threads for rendering and search')

    parser = argparse.ArgumentParser(
        prog='focalsplat', description='Defocus rendering and depth from defocus.')
    sub = parser.add_subparsers(dest='command', metavar='command')
    sub.required = True

    p = sub.add_parser('synth', parents=[common], help='make a procedural focal stack')
    p.add_argument('--protocol', choices=sorted(PROTOCOLS), default='nyuv2-style')
    p.add_argument('--style', choices=sorted(STYLES), default='fronto-planes')
    p.add_argument('--width', type=int, default=64)
    p.add_argument('--height', type=int, default=64)
    p.add_argument('--depth-min', type=float)
    p.add_argument('--depth-max', type=float)
    p.add_argument('--focus', help='focus distances, comma separated meters')
    p.add_argument('--lens', help='lens as f=..,N=..,p=.. (overrides the protocol)')
    p.add_argument('--planes', help='plane depths for fronto-planes, comma separated')
    p.add_argument('--sigma0', type=float, default=Defaults.SIGMA0,
                   help='baseline blur of every view, pixels')
    p.add_argument('--out', help='output directory (default $%s or .)'
                   % Defaults.OUTPUT_DIR_ENV)
    p.set_defaults(func=synth)

    p = sub.add_parser('render', parents=[common], help='render a scene file')
    p.add_argument('--scene', required=True)
    p.add_argument('--view', type=int, help='pose index (default all)')
    p.add_argument('--no-dof', action='store_true', help='disable depth of field')
    p.add_argument('--cutoff', type=float, default=Defaults.CUTOFF_T)
    p.add_argument('--out', help='output directory')
    p.set_defaults(func=renderViews)

    p = sub.add_parser('estimate', parents=[common], help='depth from a focal stack')
    p.add_argument('--stack-manifest', required=True)
    p.add_argument('--protocol', choices=sorted(PROTOCOLS), default='nyuv2-style',
                   help='supplies the default grid range')
    p.add_argument('--grid-min', type=float)
    p.add_argument('--grid-max', type=float)
    p.add_argument('--grid-n', type=int, default=Defaults.GRID_SIZE)
    p.add_argument('--patch', type=int, default=Defaults.MATCH_PATCH)
    p.add_argument('--out-depth')
    p.add_argument('--out-defocus-dir')
    p.set_defaults(func=estimate)

    p = sub.add_parser('fit', parents=[common], help='fit a scene to target views')
    p.add_argument('--scene', required=True)
    p.add_argument('--views-manifest', required=True)
    p.add_argument('--iters', type=int, default=Defaults.FIT_ITERATIONS)
    p.add_argument('--optimize', default=','.join(Defaults.PARAMETER_GROUPS),
                   help='parameter groups, comma separated: %s'
                   % ','.join(Defaults.PARAMETER_GROUPS))
    p.add_argument('--weights', help='mu1,mu2,mu3')
    p.add_argument('--out-scene')
    p.add_argument('--trace-csv')
    p.set_defaults(func=fit)

    p = sub.add_parser('invert', parents=[common], help='defocus map to depth')
    p.add_argument('--defocus', required=True)
    p.add_argument('--lens', required=True, help='f=..,N=..,Fd=..,p=..')
    p.add_argument('--prior', required=True, help='prior depth map choosing branches')
    p.add_argument('--out-depth')
    p.set_defaults(func=invert)

    p = sub.add_parser('refine', parents=[common], help='refine a splat depth map')
    p.add_argument('--depth', required=True)
    p.add_argument('--defocus', required=True)
    p.add_argument('--lens', required=True, help='f=..,N=..,Fd=..,p=..')
    p.add_argument('--guide', required=True, help='guide image (PNG)')
    p.add_argument('--gt', help='ground truth depth, used as the data target')
    p.add_argument('--lambda-data', type=float, default=Defaults.REFINE_LAMBDA_DATA)
    p.add_argument('--lambda-smooth', type=float, default=Defaults.REFINE_LAMBDA_SMOOTH)
    p.add_argument('--sweeps', type=int, default=Defaults.REFINE_SWEEPS)
    p.add_argument('--out-depth')
    p.set_defaults(func=refine)

    p = sub.add_parser('eval', parents=[common], help='depth metrics as CSV')
    p.add_argument('--pred', required=True)
    p.add_argument('--gt', required=True)
    p.add_argument('--scene-name')
    p.add_argument('--min-depth', type=float)
    p.add_argument('--max-depth', type=float)
    p.add_argument('--out', help='CSV file (default stdout)')
    p.set_defaults(func=evaluate)

    p = sub.add_parser('plot', parents=[common], help='circle of confusion curve as CSV')
    p.add_argument('--lens', required=True, help='f=..,N=..,Fd=..,p=..')
    p.add_argument('--depth-min', type=float, default=0.5)
    p.add_argument('--depth-max', type=float, default=10.0)
    p.add_argument('--samples', type=int, default=200)
    p.add_argument('--out', help='CSV file (default stdout)')
    p.set_defaults(func=plot)
    return parser


def main(argv=None):
    global opts
    parser = makeParser()
    try:
        opts = parser.parse_args(argv)
    except SystemExit as e:
        return e.code
    setupLogging(opts.quiet and -1 or opts.verbose)
    try:
        opts.func(opts)
    except (FocalSplatError, OSError) as e:
        sys.stderr.write('focalsplat %s: %s\n' % (opts.command, e))
        DEBUG(formattedTraceback())
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
