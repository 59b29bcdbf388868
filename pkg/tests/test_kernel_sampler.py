import dataclasses

import numpy as np
import pytest

from smooth_lsvi import harmonics as ha
from smooth_lsvi import kernel_sampler as ks
from smooth_lsvi.rng import stream

from conftest import random_trig_poly


@pytest.fixture(scope="module")
def table4():
    return ks.build_table(4)


class TestBuildTable:
    @pytest.mark.parametrize("N", [2, 4, 8])
    def test_unit_mass(self, N):
        t = ks.build_table(N)
        assert t.beta_plus - t.beta_minus == pytest.approx(1.0, abs=1e-6)
        assert t.beta_plus >= 0 and t.beta_minus >= 0

    def test_lambda_matches_quadrature(self):
        t = ks.build_table(8)
        assert t.lambda_hat == pytest.approx(ha.kernel_l1_norm(8), abs=1e-6)

    def test_abs_cdf_shape(self, table4):
        assert table4.abs_cdf[0] == 0.0
        assert table4.abs_cdf[-1] == 1.0
        assert np.all(np.diff(table4.abs_cdf) >= 0)

    def test_resolution_guard(self):
        with pytest.raises(ha.ResolutionError):
            ks.build_table(8, G=256)

    def test_rejects_odd_order(self):
        with pytest.raises(ValueError):
            ks.build_table(5)

    def test_json_round_trip(self, table4, tmp_path):
        path = tmp_path / "table.json"
        table4.save(path)
        loaded = ks.load_table(path)
        assert loaded.N == table4.N
        assert loaded.beta_plus == table4.beta_plus
        np.testing.assert_array_equal(loaded.density, table4.density)

    def test_load_rejects_corrupt(self, table4, tmp_path):
        payload = table4.to_json_dict()
        payload["beta_plus"] = payload["beta_plus"] + 0.5
        path = tmp_path / "bad.json"
        import json

        path.write_text(json.dumps(payload))
        with pytest.raises(ValueError):
            ks.load_table(path)


class TestSamplePart:
    def test_draws_in_range(self, table4):
        draws = ks.sample_part(table4, "plus", stream(0, "r"), size=10_000)
        assert draws.min() >= -1.0 and draws.max() <= 1.0

    def test_fixed_seed_reproducible(self, table4):
        a = ks.sample_part(table4, "plus", stream(123, "part"), size=50)
        b = ks.sample_part(table4, "plus", stream(123, "part"), size=50)
        np.testing.assert_array_equal(a, b)

    def test_plus_mean_matches_quadrature(self, table4, quad1):
        draws = ks.sample_part(table4, "plus", stream(1, "mean"), size=10**5)
        vals = np.cos(np.pi * draws)
        dens = ha.vp_kernel(4, quad1.nodes[:, 0]) / 2.0
        target = float(
            quad1.weights @ (np.cos(np.pi * quad1.nodes[:, 0]) * np.maximum(dens, 0.0))
        ) / table4.beta_plus
        se = vals.std() / np.sqrt(len(vals))
        assert abs(vals.mean() - target) <= 3 * se

    def test_empty_part_raises(self, table4):
        fake = dataclasses.replace(table4, beta_minus=0.0)
        with pytest.raises(ValueError, match="mass"):
            ks.sample_part(fake, "minus", stream(0, "r"))

    def test_ks_distance_small(self, table4):
        draws = ks.sample_part(table4, "plus", stream(2, "ks"), size=10**5)
        from smooth_lsvi.checks import _ks_distance

        assert _ks_distance(draws, table4.grid, table4._plus_cdf) <= 0.01


class TestWrap:
    def test_examples(self):
        assert ks.wrap(1.3) == pytest.approx(-0.7)
        np.testing.assert_allclose(ks.wrap(np.array([-1.5, 0.2])), [0.5, 0.2])

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        z = rng.uniform(-3, 3, (100, 2))
        np.testing.assert_allclose(ks.wrap(ks.wrap(z)), ks.wrap(z), atol=1e-15)

    def test_range(self):
        rng = np.random.default_rng(1)
        w = ks.wrap(rng.uniform(-10, 10, 1000))
        assert w.min() >= -1.0 and w.max() < 1.0


class TestPairSampling:
    def test_d1_reduces_to_part_draws(self, table4):
        ep, em = ks.sample_pair_d(table4, 1, stream(3, "pair"))
        assert ep.shape == (1,) and em.shape == (1,)
        bp, bm = ks.beta_pair(table4, 1)
        assert bp == pytest.approx(table4.beta_plus)
        assert bm == pytest.approx(table4.beta_minus)

    @pytest.mark.parametrize("d", [1, 2, 3])
    def test_weight_identities(self, table4, d):
        bp, bm = ks.beta_pair(table4, d)
        assert bp - bm == pytest.approx(1.0, abs=1e-12)
        assert bp + bm == pytest.approx(table4.lambda_hat**d, abs=1e-12)

    def test_pair_in_cube(self, table4):
        rng = stream(4, "pair")
        for _ in range(100):
            ep, em = ks.sample_pair_d(table4, 2, rng)
            assert np.all(np.abs(ep) <= 1.0) and np.all(np.abs(em) <= 1.0)

    def test_batch_matches_marginals(self, table4):
        plus, minus = ks.sample_pairs(table4, 2, 5000, stream(5, "batch"))
        assert plus.shape == (5000, 2) and minus.shape == (5000, 2)

    def test_signed_noise_draw(self, table4):
        noise = ks.draw_signed_noise(table4, 2, stream(6, "imp"))
        assert noise.sign in (-1, 1)
        assert noise.weight_plus_pair == (noise.sign > 0)
        assert noise.eta.shape == (2,)


class TestConvolutionEstimator:
    def test_noiseless_low_degree(self, table4):
        # degree <= N/2 polynomials are reproduced exactly in expectation
        f = lambda Z, rng: np.sin(np.pi * Z[:, 0])
        z = np.array([0.2])
        vals = ks.convolution_samples(f, z, table4, 1, 10**4, stream(7, "mc"))
        se = vals.std() / np.sqrt(len(vals))
        assert abs(vals.mean() - np.sin(np.pi * 0.2)) <= 3 * se

    def test_constant(self, table4):
        f = lambda Z, rng: np.full(Z.shape[0], 0.7)
        vals = ks.convolution_samples(f, np.array([0.1]), table4, 1, 10**4, stream(8, "mc"))
        se = max(vals.std() / np.sqrt(len(vals)), 1e-12)
        assert abs(vals.mean() - 0.7) <= 3 * se

    def test_against_quadrature(self, table4, quad1):
        f = lambda Z, rng: np.sin(3 * np.pi * Z[:, 0])
        conv = ha.circular_convolve(
            lambda Z: np.sin(3 * np.pi * Z[:, 0]),
            ha.separable_kernel(lambda x: ha.vp_kernel(4, x)),
            quad1,
        )
        truth = conv(np.array([[0.3]]))
        est = ks.convolution_samples(f, np.array([0.3]), table4, 1, 10**4, stream(9, "mc"))
        se = est.std() / np.sqrt(len(est))
        assert abs(est.mean() - truth) <= 3 * se

    def test_unbiasedness_sweep(self, table4, quad1, quad2):
        # random (f, z) instances in one and two dimensions, 3-sigma acceptance
        kernel1d = lambda x: ha.vp_kernel(4, x)
        failures = 0
        rng_master = stream(10, "sweep")
        for d, quad in ((1, quad1), (2, quad2)):
            conv_kernel = ha.separable_kernel(kernel1d)
            for i in range(10):
                f, _, _ = random_trig_poly(rng_master, d, 6)
                z = rng_master.uniform(-1, 1, d)
                conv = ha.circular_convolve(f, conv_kernel, quad)
                truth = conv(z)
                sampler = lambda Z, rng: f(Z)
                vals = ks.convolution_samples(
                    sampler, z, table4, d, 10**4, stream(11, "mc", d, i)
                )
                se = vals.std() / np.sqrt(len(vals))
                if abs(vals.mean() - truth) > 3 * se:
                    failures += 1
        assert failures <= 1  # 3-sigma outliers are rare but not impossible

    def test_variance_bound(self, table4):
        bound = 0.8
        f = lambda Z, rng: np.clip(np.sin(7 * np.pi * Z[:, 0]) * bound, -bound, bound)
        for d in (1, 2):
            vals = ks.convolution_samples(
                f, np.zeros(d), table4, d, 2000, stream(12, "var", d)
            )
            lim = table4.lambda_hat**d * bound
            assert np.all(np.abs(vals) <= lim + 1e-12)

    def test_importance_variant_agrees(self, table4):
        f = lambda Z, rng: np.sin(np.pi * Z[:, 0])
        z = np.array([0.2])
        est = ks.convolution_estimate_importance(f, z, table4, 1, 10**5, stream(13, "imp"))
        assert est == pytest.approx(np.sin(np.pi * 0.2), abs=0.05)
