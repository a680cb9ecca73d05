import numpy as np
import pytest

from rfinsert.depth import (
    BBox2D,
    DegenerateFitError,
    DepthMap,
    SyntheticDepthProvider,
    align_depth,
    compute_center_weights,
    object_center_depth,
)


def ramp_depth(h=24, w=32):
    i, j = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float),
                       indexing="ij")
    return 2.0 + 0.05 * i + 0.02 * j


BBOX = BBox2D(8, 10, 6, 8)


class TestCenterWeights:
    def test_single_pixel(self):
        assert np.allclose(compute_center_weights((1, 1), (0, 0)), [[1.0]])

    def test_3x3_endpoints(self):
        w = compute_center_weights((3, 3), (1, 1))
        assert w[1, 1] == 1.0
        assert w[0, 0] == 0.0
        assert w[2, 2] == 0.0

    def test_elementwise_formula(self):
        h, w = 5, 7
        center = (2.0, 3.0)
        got = compute_center_weights((h, w), center)
        dist = np.array([[np.hypot(i - center[0], j - center[1]) for j in range(w)]
                         for i in range(h)])
        want = 1.0 - dist / dist.max()
        assert np.allclose(got, want, atol=1e-12)

    def test_center_outside_rejected(self):
        with pytest.raises(ValueError):
            compute_center_weights((4, 4), (5.0, 0.0))


class TestAlignDepth:
    def test_identity(self):
        d = ramp_depth()
        fit = align_depth(DepthMap(d), DepthMap(d), BBOX)
        assert fit.a == pytest.approx(1.0, abs=1e-9)
        assert fit.b == pytest.approx(0.0, abs=1e-9)
        assert fit.residual_rms <= 1e-9

    def test_exact_affine_inverse(self):
        d = ramp_depth()
        est = 2.0 * d - 1.0
        fit = align_depth(DepthMap(est), DepthMap(d), BBOX)
        assert fit.a == pytest.approx(0.5, abs=1e-9)
        assert fit.b == pytest.approx(0.5, abs=1e-9)
        assert fit.residual_rms <= 1e-9

    def test_exact_affine_any_coefficients(self):
        rng = np.random.default_rng(0)
        d = ramp_depth()
        for _ in range(10):
            a, b = rng.uniform(0.2, 3.0), rng.uniform(-2, 2)
            est = (d - b) / a
            fit = align_depth(DepthMap(est), DepthMap(d), BBOX)
            assert fit.a == pytest.approx(a, abs=1e-9)
            assert fit.b == pytest.approx(b, abs=1e-9)
            assert fit.residual_rms <= 1e-9

    def test_noisy_recovery_within_3_standard_errors(self):
        # Monte-Carlo oracle: over 100 seeded trials the recovered (a, b) must
        # land within 3 standard errors of the truth, where the standard error
        # is the empirical spread of the estimator itself.  (Noise enters the
        # regressor, so a small attenuation bias of order a*sigma^2/var is
        # expected and must stay inside that band.)
        d = ramp_depth()
        a_true, b_true = 1.25, -0.4
        sigma = 0.01 * (d.max() - d.min())
        recovered = []
        for seed in range(100):
            rng = np.random.default_rng(seed)
            est = (d - b_true) / a_true + rng.normal(0, sigma, d.shape)
            fit = align_depth(DepthMap(est), DepthMap(d), BBOX)
            recovered.append((fit.a, fit.b))
        recovered = np.array(recovered)
        mean = recovered.mean(axis=0)
        se = recovered.std(axis=0, ddof=1)
        assert abs(mean[0] - a_true) <= 3 * se[0]
        assert abs(mean[1] - b_true) <= 3 * se[1]

    def test_masked_pixels_have_zero_influence(self):
        d = ramp_depth()
        est = 1.3 * d + 0.2
        fit1 = align_depth(DepthMap(est), DepthMap(d), BBOX)
        corrupted = est.copy()
        corrupted[BBOX.top:BBOX.top + BBOX.height,
                  BBOX.left:BBOX.left + BBOX.width] = 999.0
        fit2 = align_depth(DepthMap(corrupted), DepthMap(d), BBOX)
        assert fit1.a == fit2.a and fit1.b == fit2.b  # bitwise

    def test_scaling_both_maps_scales_shift_only(self):
        d = ramp_depth()
        est = 0.7 * d + 0.3
        fit = align_depth(DepthMap(est), DepthMap(d), BBOX)
        lam = 3.5
        fit2 = align_depth(DepthMap(lam * est), DepthMap(lam * d), BBOX)
        assert fit2.a == pytest.approx(fit.a, abs=1e-9)
        assert fit2.b == pytest.approx(lam * fit.b, abs=1e-9)

    def test_uniform_weights_match_unweighted_closed_form(self):
        # Oracle: with W forced to 1 the weighted normal equations reduce to
        # the plain least-squares closed form.
        rng = np.random.default_rng(1)
        e = rng.uniform(1, 5, size=200)
        r = 1.4 * e - 0.8 + rng.normal(0, 0.05, size=200)
        sw, swe, swee = len(e), e.sum(), (e * e).sum()
        swr, swer = r.sum(), (e * r).sum()
        det = swee * sw - swe**2
        a_ref = (swer * sw - swe * swr) / det
        b_ref = (swee * swr - swe * swer) / det
        a_np, b_np = np.polyfit(e, r, 1)
        assert a_ref == pytest.approx(a_np, abs=1e-9)
        assert b_ref == pytest.approx(b_np, abs=1e-9)

    def test_constant_estimate_is_degenerate(self):
        d = ramp_depth()
        with pytest.raises(DegenerateFitError):
            align_depth(DepthMap(np.full_like(d, 3.0)), DepthMap(d), BBOX)

    def test_invalid_pixels_excluded(self):
        d = ramp_depth()
        est = 1.1 * d + 0.1
        poisoned = est.copy()
        valid = np.ones(d.shape, dtype=bool)
        valid[0, :] = False
        poisoned[0, :] = 1e6
        fit = align_depth(DepthMap(poisoned, valid), DepthMap(d), BBOX)
        # The fit is exact on valid pixels.
        assert fit.residual_rms <= 1e-9


class TestCenterDepth:
    def test_constant_depth(self):
        d = DepthMap(np.full((20, 20), 5.0))
        assert object_center_depth(d, BBox2D(4, 4, 5, 5)) == 5.0

    def test_row_ramp(self):
        h, w = 20, 20
        vals = np.repeat(np.arange(h, dtype=float)[:, None], w, axis=1)
        bbox = BBox2D(6, 3, 5, 7)
        ic, _ = bbox.center_pixel
        assert object_center_depth(DepthMap(vals), bbox) == float(ic)

    def test_invalid_center_rejected(self):
        vals = np.ones((10, 10))
        valid = np.ones((10, 10), dtype=bool)
        bbox = BBox2D(2, 2, 3, 3)
        valid[bbox.center_pixel] = False
        with pytest.raises(ValueError):
            object_center_depth(DepthMap(vals, valid), bbox)


class TestBBox:
    def test_center_of_odd_box(self):
        assert BBox2D(2, 4, 3, 5).center == (3.0, 6.0)

    def test_dilated_clamps_to_image(self):
        b = BBox2D(1, 1, 4, 4).dilated(1.0, (10, 10))
        assert b.top == 0 and b.left == 0
        assert b.top + b.height <= 10 and b.left + b.width <= 10

    def test_degenerate_box_rejected(self):
        with pytest.raises(ValueError):
            BBox2D(0, 0, 0, 5)


class TestSyntheticProvider:
    def test_alignment_recovers_distortion(self):
        d = ramp_depth()
        provider = SyntheticDepthProvider(scale=1.6, shift=0.5, noise_sigma=0.0)
        est = provider.estimate(d)
        fit = align_depth(est, DepthMap(d), BBOX)
        assert fit.a == pytest.approx(1.6, abs=1e-9)
        assert fit.b == pytest.approx(0.5, abs=1e-9)
