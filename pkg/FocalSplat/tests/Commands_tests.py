import contextlib, io

from FocalSplat.tests.testsupport import *

from FocalSplat import Commands
from FocalSplat.Lens import coc_radius, parse_lens_spec
from FocalSplat.SceneIO import (load_stack, read_csv, read_pfm, save_scene, write_pfm,
                                write_png, write_views_manifest)
from FocalSplat.Splatting import render

LENS = 'f=0.015,N=2,Fd=2.0,p=1.4e-05'


def test_suite():
    return suiteFor(Tests)


def run(*args):
    """Run the command line; return (status, stdout, stderr)."""
    out, err = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(out), contextlib.redirect_stderr(err):
        status = Commands.main([str(a) for a in args])
    return status, out.getvalue(), err.getvalue()


def fileBytes(directory):
    found = {}
    for name in sorted(os.listdir(directory)):
        with open(os.path.join(directory, name), 'rb') as f:
            found[name] = f.read()
    return found


class Tests(FocalSplatTestCase):

    def test_synthIsDeterministic(self):
        a, b = self.tmppath('a'), self.tmppath('b')
        for out in (a, b):
            status, _, err = run('synth', '--width', 32, '--height', 32, '--seed', 3,
                                 '--style', 'spheres', '--out', out)
            self.assertEqual(status, 0, err)
        self.assertEqual(fileBytes(a), fileBytes(b))
        stack = load_stack(os.path.join(a, 'manifest.txt'))
        self.assertEqual(stack.focusDistances(),
                         Defaults.PROTOCOLS['nyuv2-style']['focus_distances'])
        self.assertEqual(stack.shape, (32, 32))

    def test_synthOptions(self):
        out = self.tmppath('s')
        status, _, err = run('synth', '--protocol', 'fod500-style', '--width', 24,
                             '--height', 16, '--focus', '0.3,0.6', '--planes', '0.4,0.8,1.5',
                             '--out', out, '-q')
        self.assertEqual(status, 0, err)
        self.assertEqual(err, '')
        stack = load_stack(os.path.join(out, 'manifest.txt'))
        self.assertEqual(stack.focusDistances(), [0.3, 0.6])
        assert_allclose(np.unique(stack.depth.data), [0.4, 0.8, 1.5], rtol=1e-6)
        status, _, err = run('synth', '--width', 24, '--height', 16, '--out', out)
        self.assertEqual(status, 1)
        self.assertIn('--force', err)
        self.assertEqual(run('synth', '--width', 24, '--height', 16, '--out', out,
                             '--force')[0], 0)

    def test_estimateAndEval(self):
        out = self.tmppath('stack')
        run('synth', '--width', 32, '--height', 32, '--style', 'slanted-plane',
            '--depth-min', 1.5, '--depth-max', 3.0, '--out', out)
        depth = self.tmppath('est.pfm')
        status, _, err = run('estimate', '--stack-manifest', os.path.join(out, 'manifest.txt'),
                             '--grid-n', 32, '--out-depth', depth,
                             '--out-defocus-dir', self.tmppath('defocus'))
        self.assertEqual(status, 0, err)
        self.assertEqual(read_pfm(depth).shape, (32, 32))
        self.assertEqual(len(os.listdir(self.tmppath('defocus'))), 5)
        status, stdout, err = run('eval', '--pred', depth, '--gt', os.path.join(out, 'depth.pfm'),
                                  '--scene-name', 'slanted')
        self.assertEqual(status, 0, err)
        lines = stdout.splitlines()
        self.assertEqual(lines[0], 'scene,rmse,absrel,delta1,delta2,delta3')
        cells = lines[1].split(',')
        self.assertEqual(cells[0], 'slanted')
        self.assertTrue(0.0 <= float(cells[3]) <= float(cells[4]) <= float(cells[5]) <= 1.0)

    def test_evalSizeMismatch(self):
        write_pfm(self.tmppath('p.pfm'), np.ones((4, 4)))
        write_pfm(self.tmppath('g.pfm'), np.ones((4, 5)))
        status, stdout, err = run('eval', '--pred', self.tmppath('p.pfm'),
                                  '--gt', self.tmppath('g.pfm'))
        self.assertEqual(status, 1)
        self.assertEqual(stdout, '')
        self.assertIn('4x4', err)
        self.assertIn('5x4', err)

    def test_evalToFile(self):
        write_pfm(self.tmppath('p.pfm'), np.full((4, 4), 2.0))
        csv_path = self.tmppath('m.csv')
        status, _, err = run('eval', '--pred', self.tmppath('p.pfm'),
                             '--gt', self.tmppath('p.pfm'), '--out', csv_path)
        self.assertEqual(status, 0, err)
        header, rows = read_csv(csv_path)
        self.assertEqual(rows, [['p', '0', '0', '1', '1', '1']])

    def test_plot(self):
        path = self.tmppath('coc.csv')
        status, _, err = run('plot', '--lens', LENS, '--depth-min', 0.5, '--depth-max', 10,
                             '--samples', 50, '--out', path)
        self.assertEqual(status, 0, err)
        header, rows = read_csv(path)
        self.assertEqual(header, ['depth_m', 'sigma_px'])
        self.assertEqual(len(rows), 50)
        lens = parse_lens_spec(LENS)
        depths = np.array([float(r[0]) for r in rows])
        sigmas = np.array([float(r[1]) for r in rows])
        assert_allclose(sigmas, coc_radius(lens, depths), rtol=1e-6, atol=1e-9)
        self.assertEqual(depths[0], 0.5)
        self.assertEqual(depths[-1], 10.0)
        # without --out the table goes to stdout
        status, stdout, _ = run('plot', '--lens', LENS, '--samples', 3)
        self.assertEqual(stdout.splitlines()[0], 'depth_m,sigma_px')
        self.assertEqual(len(stdout.splitlines()), 4)

    def test_invert(self):
        lens = parse_lens_spec(LENS)
        gt = np.random.default_rng(0).uniform(2.5, 6.0, (8, 8))
        write_pfm(self.tmppath('defocus.pfm'), coc_radius(lens, gt))
        write_pfm(self.tmppath('prior.pfm'), gt * 1.05)
        args = ['invert', '--defocus', self.tmppath('defocus.pfm'), '--lens', LENS,
                '--prior', self.tmppath('prior.pfm'), '--out-depth', self.tmppath('d.pfm')]
        status, _, err = run(*args)
        self.assertEqual(status, 0, err)
        assert_allclose(read_pfm(self.tmppath('d.pfm')).data, gt, rtol=1e-5)
        status, _, err = run(*args)
        self.assertEqual(status, 1)
        self.assertIn('exists', err)
        self.assertEqual(run(*(args + ['--force']))[0], 0)

    def test_refine(self):
        lens = parse_lens_spec(LENS)
        gt = np.linspace(1.0, 3.0, 16)[np.newaxis].repeat(16, axis=0)
        write_pfm(self.tmppath('splat.pfm'), gt * 1.05)
        write_pfm(self.tmppath('defocus.pfm'), coc_radius(lens, gt))
        write_png(self.tmppath('guide.png'), smoothTexture(16, 16))
        status, _, err = run('refine', '--depth', self.tmppath('splat.pfm'),
                             '--defocus', self.tmppath('defocus.pfm'), '--lens', LENS,
                             '--guide', self.tmppath('guide.png'),
                             '--out-depth', self.tmppath('r.pfm'))
        self.assertEqual(status, 0, err)
        refined = read_pfm(self.tmppath('r.pfm')).data
        self.assertLess(np.abs(refined - gt).mean(), np.abs(gt * 0.05).mean())

    def test_renderAndFit(self):
        view = cameraView(32, 32, nyuLens(2.0))
        scene = randomScene(3, 2, view)
        scene_path = self.tmppath('s.scene')
        save_scene(scene, scene_path)
        status, _, err = run('render', '--scene', scene_path, '--out', self.tmppath('r'))
        self.assertEqual(status, 0, err)
        self.assertTrue(os.path.exists(self.tmppath('r', 'render_00.png')))
        depth = read_pfm(self.tmppath('r', 'depth_00.pfm'))
        assert_allclose(depth.data, render(scene, view)[1].data.astype(np.float32))
        status, _, err = run('render', '--scene', scene_path, '--view', 3,
                             '--out', self.tmppath('r2'))
        self.assertEqual(status, 1)
        self.assertIn('no view 3', err)

        write_views_manifest(self.tmppath('r', 'views.txt'), [(0, 'render_00.png')])
        status, _, err = run('fit', '--scene', scene_path,
                             '--views-manifest', self.tmppath('r', 'views.txt'),
                             '--iters', 2, '--optimize', 'opacity',
                             '--out-scene', self.tmppath('fitted.scene'),
                             '--trace-csv', self.tmppath('trace.csv'))
        self.assertEqual(status, 0, err)
        header, rows = read_csv(self.tmppath('trace.csv'))
        self.assertEqual(header, ['iteration', 'loss'])
        self.assertEqual([r[0] for r in rows], ['0', '1', '2'])
        losses = [float(r[1]) for r in rows]
        self.assertNonIncreasing(losses)
        self.assertTrue(os.path.exists(self.tmppath('fitted.scene')))
        status, _, err = run('fit', '--scene', scene_path,
                             '--views-manifest', self.tmppath('r', 'views.txt'),
                             '--optimize', 'teapot', '--out-scene', self.tmppath('x.scene'))
        self.assertEqual(status, 1)
        self.assertIn('teapot', err)

    def test_renderChecksEveryOutputFirst(self):
        view = cameraView(16, 16, nyuLens(2.0))
        scene_path = self.tmppath('s.scene')
        save_scene(randomScene(2, 4, view, margin=4), scene_path)
        write_pfm(self.tmppath('r', 'depth_00.pfm'), np.ones((16, 16)))
        status, _, err = run('render', '--scene', scene_path, '--out', self.tmppath('r'))
        self.assertEqual(status, 1)
        self.assertIn('depth_00.pfm', err)
        self.assertEqual(os.listdir(self.tmppath('r')), ['depth_00.pfm'])
        assert_array_equal(read_pfm(self.tmppath('r', 'depth_00.pfm')).data, 1.0)

    def test_estimateChecksEveryOutputFirst(self):
        out = self.tmppath('stack')
        run('synth', '--width', 16, '--height', 16, '--focus', '1.0,2.5', '--out', out)
        write_pfm(self.tmppath('defocus', 'defocus_01.pfm'), np.zeros((16, 16)))
        status, _, err = run('estimate', '--stack-manifest', os.path.join(out, 'manifest.txt'),
                             '--grid-n', 8, '--out-depth', self.tmppath('est.pfm'),
                             '--out-defocus-dir', self.tmppath('defocus'))
        self.assertEqual(status, 1)
        self.assertIn('defocus_01.pfm', err)
        self.assertFalse(os.path.exists(self.tmppath('est.pfm')))
        self.assertEqual(os.listdir(self.tmppath('defocus')), ['defocus_01.pfm'])

    def test_usageErrors(self):
        self.assertEqual(run('plot', '--lens', LENS, '--bogus')[0], 2)
        self.assertEqual(run()[0], 2)
        self.assertEqual(run('plot')[0], 2)
        status, _, err = run('plot', '--lens', 'f=0.015,N=2')
        self.assertEqual(status, 1)
        self.assertTrue(err.startswith('focalsplat plot: '))

    def test_missingInput(self):
        status, _, err = run('eval', '--pred', self.tmppath('none.pfm'),
                             '--gt', self.tmppath('none.pfm'))
        self.assertEqual(status, 1)
        self.assertIn('none.pfm', err)
