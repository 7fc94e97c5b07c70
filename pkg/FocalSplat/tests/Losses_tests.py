from FocalSplat.tests.testsupport import *

from FocalSplat.Errors import DomainError
from FocalSplat.Losses import (LossWeights, blur_loss, defocus_loss, depth_metrics,
                               recon_loss, residual_loss, smoothness_loss, ssim, total_loss)


def test_suite():
    return suiteFor(Tests)


def checkerboard(n=16, lo=0.0, hi=1.0):
    yy, xx = np.mgrid[0:n, 0:n]
    return RasterImage(np.where((xx + yy) % 2, hi, lo).astype(np.float64))


def constantSsim(x, y):
    """SSIM of two constant images: only the luminance term differs from 1."""
    c1 = Defaults.SSIM_K1**2
    return (2*x*y + c1) / (x*x + y*y + c1)


class Tests(FocalSplatTestCase):

    def test_weights(self):
        w = LossWeights()
        self.assertEqual((w.mu1, w.mu2, w.mu3), (1.0, 0.01, 1.0))
        self.assertEqual(w.alpha_ssim, 0.2)
        self.assertRaises(DomainError, LossWeights, mu1=-1.0)
        self.assertRaises(DomainError, LossWeights, alpha_ssim=1.5)
        w = LossWeights.fromString('1,0,0.5')
        self.assertEqual((w.mu1, w.mu2, w.mu3), (1.0, 0.0, 0.5))
        self.assertRaises(DomainError, LossWeights.fromString, '1,2')
        self.assertRaises(DomainError, LossWeights.fromString, '1,x,2')

    def test_defocusLoss(self):
        rng = np.random.default_rng(0)
        d = DefocusMap(rng.uniform(0.5, 3.0, (32, 32)))
        self.assertAlmostEqual(defocus_loss(d, d), -1.0, places=12)
        self.assertAlmostEqual(defocus_loss(d, DefocusMap(2 * d.data)), -1.0, places=12)
        a = np.zeros((16, 16))
        b = np.zeros((16, 16))
        a[::2] = 1.0
        b[1::2] = 1.0
        self.assertEqual(defocus_loss(a, b), 0.0)
        # an all-zero map scores 0, not nan
        self.assertEqual(defocus_loss(np.zeros((16, 16)), d.data[:16, :16]), 0.0)
        self.assertRaises(DomainError, defocus_loss, d, DefocusMap(np.ones((16, 32))))
        self.assertRaises(DomainError, defocus_loss, d, d, 12)

    @settings(max_examples=25, deadline=None)
    @given(st.lists(st.floats(min_value=0.1, max_value=10.0), min_size=4, max_size=4))
    def test_defocusLossPatchScaleInvariant(self, scales):
        rng = np.random.default_rng(1)
        d1 = rng.uniform(0, 3, (32, 32))
        d2 = rng.uniform(0, 3, (32, 32))
        scaled = d2.copy()
        for (i, j), s in zip([(0, 0), (0, 1), (1, 0), (1, 1)], scales):
            scaled[16*i:16*i + 16, 16*j:16*j + 16] *= s
        self.assertAlmostEqual(defocus_loss(d1, scaled), defocus_loss(d1, d2), places=10)
        value = defocus_loss(d1, d2)
        self.assertTrue(-1.0 <= value <= 1.0)

    def test_blurLoss(self):
        constant = RasterImage(np.full((16, 16), 0.5))
        self.assertAlmostEqual(blur_loss(constant), -0.01 * np.log(1e-8), places=12)
        self.assertLess(blur_loss(checkerboard()), blur_loss(constant))
        # more contrast, more Laplacian energy, lower loss
        self.assertLess(blur_loss(checkerboard(16, 0.0, 1.0)),
                        blur_loss(checkerboard(16, 0.25, 0.75)))
        self.assertRaises(DomainError, blur_loss, constant, denominator='median')
        self.assertRaises(DomainError, blur_loss, constant, denominator='variance')
        self.assertTrue(np.isfinite(blur_loss(checkerboard(), denominator='variance')))

    def test_blurLossLiteralDenominator(self):
        img = checkerboard(4)
        lum = img.data[:, :, 0]
        padded = np.pad(lum, 1, mode='edge')
        lap = (padded[:-2, 1:-1] + padded[2:, 1:-1] + padded[1:-1, :-2] + padded[1:-1, 2:]
               - 4 * lum)
        ratio = (lap**2).sum() / (16 - lum.mean()**2)
        self.assertAlmostEqual(blur_loss(img), -0.01 * np.log(ratio + 1e-8), places=12)

    def test_ssim(self):
        rng = np.random.default_rng(2)
        a = RasterImage(rng.random((24, 24, 3)))
        b = RasterImage(rng.random((24, 24, 3)))
        self.assertAlmostEqual(ssim(a, a), 1.0, places=12)
        self.assertAlmostEqual(ssim(a, b), ssim(b, a), places=12)
        self.assertLess(ssim(a, b), 0.5)
        zero, one = np.zeros((16, 16)), np.ones((16, 16))
        self.assertAlmostEqual(ssim(zero, one), constantSsim(0.0, 1.0), places=9)
        self.assertRaises(DomainError, ssim, a, RasterImage(rng.random((24, 20, 3))))
        self.assertRaises(DomainError, ssim, a, RasterImage(rng.random((24, 24))))
        # narrower than the 11x11 window
        self.assertRaises(DomainError, ssim, np.zeros((10, 24)), np.zeros((10, 24)))

    def test_reconLoss(self):
        rng = np.random.default_rng(3)
        a = RasterImage(rng.random((16, 16, 3)))
        b = RasterImage(rng.random((16, 16, 3)))
        self.assertEqual(recon_loss(a, a), 0.0)
        self.assertGreater(recon_loss(a, b), 0.0)
        self.assertAlmostEqual(recon_loss(a, b, 0.0), np.abs(a.data - b.data).mean(), places=12)
        self.assertEqual(recon_loss(a, a, 1.0), 0.0)
        zero, one = np.zeros((16, 16)), np.ones((16, 16))
        self.assertAlmostEqual(recon_loss(zero, one, 1.0),
                               (1 - constantSsim(0.0, 1.0)) / 2, places=9)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(min_value=0, max_value=10**6), st.floats(min_value=0.0, max_value=1.0))
    def test_reconLossNonNegative(self, seed, alpha):
        rng = np.random.default_rng(seed)
        a, b = rng.random((12, 12)), rng.random((12, 12))
        self.assertGreaterEqual(recon_loss(a, b, alpha), 0.0)

    def test_totalLoss(self):
        self.assertEqual(total_loss(0.3, 0.5, 0.7, LossWeights(1, 0, 0)), 0.3)
        self.assertEqual(total_loss(0.3, 0.5, 0.7, LossWeights(0, 0, 0)), 0.0)
        self.assertAlmostEqual(total_loss(1.0, 1.0, 1.0), 2.01)

    def test_residualLoss(self):
        d = DepthMap([[1.0, 2.0], [3.0, 4.0]])
        gt = DepthMap([[1.0, 2.0], [3.0, 5.0]])
        zero = DepthMap(np.zeros((2, 2)))
        self.assertEqual(residual_loss(d, zero, gt), 0.25)
        self.assertEqual(residual_loss(d, gt.data - d.data, gt), 0.0)
        # invalid ground truth pixels are ignored
        gt.data[1, 1] = 0.0
        self.assertEqual(residual_loss(d, zero, gt), 0.0)
        self.assertRaises(DomainError, residual_loss, d, zero, DepthMap(np.zeros((2, 2))))

    def test_smoothnessLoss(self):
        guide = RasterImage(np.zeros((8, 8)))
        self.assertEqual(smoothness_loss(DepthMap(np.full((8, 8), 2.0)), guide), 0.0)
        step = np.ones((8, 8))
        step[:, 4:] = 2.0
        edge = np.zeros((8, 8))
        edge[:, 4:] = 1.0
        self.assertLess(smoothness_loss(step, RasterImage(edge)),
                        smoothness_loss(step, RasterImage(np.zeros((8, 8)))))

    def test_smoothnessLossHandCase(self):
        depth = np.array([[1.0, 2.0], [4.0, 3.0]])
        guide = np.array([[0.0, 0.5], [0.0, 1.0]])
        # x terms: |1| e^-0.5, |-1| e^-1; y terms: |3| e^0, |1| e^-0.5
        expected = (np.exp(-0.5) + np.exp(-1.0)) / 2 + (3.0 + np.exp(-0.5)) / 2
        self.assertAlmostEqual(smoothness_loss(depth, RasterImage(guide)), expected, places=12)
        self.assertRaises(DomainError, smoothness_loss, depth, RasterImage(np.zeros((3, 2))))

    def test_depthMetricsIdentity(self):
        gt = DepthMap(np.random.default_rng(4).uniform(0.5, 10, (8, 8)))
        m = depth_metrics(gt, gt)
        self.assertEqual((m['rmse'], m['absrel'], m['delta1'], m['delta2'], m['delta3']),
                         (0.0, 0.0, 1.0, 1.0, 1.0))

    def test_depthMetricsScaled(self):
        gt = DepthMap(np.random.default_rng(5).uniform(0.5, 10, (8, 8)))
        m = depth_metrics(DepthMap(1.3 * gt.data), gt)
        self.assertEqual(m['delta1'], 0.0)
        self.assertEqual(m['delta2'], 1.0)
        self.assertEqual(m['delta3'], 1.0)
        self.assertAlmostEqual(m['absrel'], 0.3, places=12)

    def test_depthMetricsHandCase(self):
        pred = DepthMap([[1.0, 2.0], [3.0, 4.0]])
        gt = DepthMap([[1.0, 2.0], [3.0, 5.0]])
        m = depth_metrics(pred, gt)
        self.assertEqual(m['rmse'], 0.5)
        self.assertAlmostEqual(m['absrel'], 0.05, places=15)
        # 5/4 sits exactly on the 1.25 bound, which does not count
        self.assertEqual(m['delta1'], 0.75)
        self.assertEqual(m['delta2'], 1.0)
        self.assertEqual(m['delta3'], 1.0)

    def test_depthMetricsMasks(self):
        pred = DepthMap([[1.0, 0.0], [3.0, 8.0]])
        gt = DepthMap([[1.0, 2.0], [0.0, 4.0]])
        m = depth_metrics(pred, gt)
        # only (0,0) and (1,1) are valid in both
        self.assertAlmostEqual(m['rmse'], np.sqrt(16 / 2.0))
        self.assertEqual(m['delta1'], 0.5)
        m = depth_metrics(pred, gt, max_depth=3.0)
        self.assertEqual(m['rmse'], 0.0)
        self.assertRaises(DomainError, depth_metrics, pred, gt, min_depth=5.0)
        try:
            depth_metrics(pred, DepthMap(np.ones((3, 2))))
        except DomainError as e:
            self.assertIn('2x2', str(e))
            self.assertIn('2x3', str(e))
        else:
            self.fail('expected a DomainError')
