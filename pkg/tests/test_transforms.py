import hashlib

import numpy as np
import pytest

from plcodec.errors import ShapeError, WeightsError
from plcodec.tensor import Tensor
from plcodec.transforms import (
    analysis,
    bounded_map,
    hyper_analysis,
    hyper_synthesis,
    lrp,
    positive_map,
    psi_base,
    psi_top,
    rem,
    synthesis,
)
from plcodec.weights import ArchConfig, ModelWeights, generate_seed_weights

ARCH = ArchConfig()
CS = ARCH.slice_channels

# Digests of seed-0 forward passes on the fixed image below.  Frozen at
# first build; any change to conv arithmetic, layer wiring, or the weight
# generator shows up here before it can corrupt a bitstream.
GOLDEN = {
    "analysis_base": "4af3eaeeb164b6ed",
    "analysis_top": "f55184fbeb6838a5",
    "synthesis_base": "70d8235b0dd694bd",
    "hyper": "b977d7a66b49cc29",
    "psi_base_0_mu": "3d2c7654b6918938",
}


def digest(t: Tensor) -> str:
    return hashlib.sha256(t.data.tobytes()).hexdigest()[:16]


def rand(shape, seed):
    return Tensor(np.random.default_rng(seed).normal(size=shape).astype(np.float32))


@pytest.fixture(scope="module")
def w():
    return generate_seed_weights(ARCH, 0)


@pytest.fixture(scope="module")
def image():
    rng = np.random.default_rng(7)
    return Tensor(rng.uniform(0.0, 1.0, size=(3, 64, 64)).astype(np.float32))


@pytest.fixture(scope="module")
def latents(w, image):
    return analysis(image, "base", w), analysis(image, "top", w)


def zero_biased(w):
    blobs = {
        k: (np.zeros_like(v) if k.endswith(".b") else v) for k, v in w.blobs.items()
    }
    return ModelWeights(w.arch, blobs)


def zeroed(w):
    blobs = {
        k: (v if k.startswith("zprior") else np.zeros_like(v))
        for k, v in w.blobs.items()
    }
    return ModelWeights(w.arch, blobs)


class TestScalarMaps:
    def test_positive_map_values(self):
        x = Tensor(np.array([[[-1e4, -2.0, 0.0, 2.0, 1e4]]], dtype=np.float32))
        out = positive_map(x).data[0, 0]
        assert (out > 0).all()
        assert out[2] == pytest.approx(1.0, abs=1e-5)
        assert out[4] == pytest.approx(1e4, rel=1e-3)
        assert (np.diff(out) > 0).all()

    def test_bounded_map_values(self):
        x = Tensor(np.array([[[-1e4, -1.0, 0.0, 1.0, 1e4]]], dtype=np.float32))
        out = bounded_map(x).data[0, 0]
        assert (np.abs(out) <= 1).all()
        # strict inside the representable range, saturated at the extremes
        assert abs(out[1]) < 1 and abs(out[3]) < 1
        assert out[0] == -1.0 and out[4] == 1.0
        assert out[2] == 0.0
        assert out[1] == pytest.approx(-1 / np.sqrt(2), abs=1e-6)
        np.testing.assert_allclose(out, -out[::-1], atol=0)


class TestAnalysisSynthesis:
    def test_latent_shape(self, latents):
        y_b, y_t = latents
        assert y_b.shape == (ARCH.latent_channels, 4, 4)
        assert y_t.shape == y_b.shape

    def test_base_and_top_differ(self, latents):
        y_b, y_t = latents
        assert not np.array_equal(y_b.data, y_t.data)

    def test_indivisible_dims_rejected(self, w):
        x = Tensor(np.zeros((3, 48, 32), dtype=np.float32))
        analysis(x, "base", w)
        with pytest.raises(ShapeError, match="divisible"):
            analysis(Tensor(np.zeros((3, 48, 41), dtype=np.float32)), "base", w)

    def test_wrong_channels_rejected(self, w):
        with pytest.raises(ShapeError):
            analysis(Tensor(np.zeros((4, 64, 64), dtype=np.float32)), "base", w)
        with pytest.raises(ShapeError):
            synthesis(Tensor(np.zeros((3, 4, 4), dtype=np.float32)), "base", w)

    def test_bad_which_rejected(self, w, image):
        with pytest.raises(ValueError):
            analysis(image, "middle", w)

    def test_zero_image_zero_bias_gives_zero_latent(self, w, image):
        x = Tensor(np.zeros((3, 64, 64), dtype=np.float32))
        y = analysis(x, "base", zero_biased(w))
        assert not y.data.any()

    def test_synthesis_range_and_shape(self, w, latents):
        out = synthesis(latents[0], "base", w)
        assert out.shape == (3, 64, 64)
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_deterministic(self, w, image):
        a = analysis(image, "base", w)
        b = analysis(image, "base", w)
        assert np.array_equal(a.data, b.data)


class TestHyper:
    def test_shapes(self, w, latents):
        y_b, y_t = latents
        z = hyper_analysis(y_b, y_t, w)
        assert z.shape == (ARCH.hyper_channels, 1, 1)
        four = hyper_synthesis(z, w)
        assert len(four) == 4
        for t in four:
            assert t.shape == y_b.shape

    def test_shape_mismatch_rejected(self, w, latents):
        y_b = latents[0]
        other = Tensor(np.zeros((ARCH.latent_channels, 8, 8), dtype=np.float32))
        with pytest.raises(ShapeError, match="differ"):
            hyper_analysis(y_b, other, w)

    def test_small_latent_rejected(self, w):
        y = Tensor(np.zeros((ARCH.latent_channels, 1, 1), dtype=np.float32))
        with pytest.raises(ShapeError, match="divisible by 4"):
            hyper_analysis(y, y, w)

    def test_hyper_synthesis_channel_check(self, w):
        z = Tensor(np.zeros((ARCH.hyper_channels + 1, 1, 1), dtype=np.float32))
        with pytest.raises(ShapeError):
            hyper_synthesis(z, w)


class TestPsi:
    def test_base_shapes_and_positive_sigma(self, w):
        d_mu = rand((ARCH.latent_channels, 4, 4), 1)
        d_sig = rand((ARCH.latent_channels, 4, 4), 2)
        mu, sigma = psi_base(0, d_mu, d_sig, None, w)
        assert mu.shape == (CS, 4, 4)
        assert sigma.shape == (CS, 4, 4)
        assert (sigma.data > 0).all()

    def test_base_prev_channel_validation(self, w):
        d_mu = rand((ARCH.latent_channels, 4, 4), 1)
        d_sig = rand((ARCH.latent_channels, 4, 4), 2)
        with pytest.raises(ShapeError, match="y_prev"):
            psi_base(0, d_mu, d_sig, rand((CS, 4, 4), 3), w)
        with pytest.raises(ShapeError, match="y_prev"):
            psi_base(2, d_mu, d_sig, rand((CS, 4, 4), 3), w)
        mu, _ = psi_base(2, d_mu, d_sig, rand((2 * CS, 4, 4), 3), w)
        assert mu.shape == (CS, 4, 4)

    def test_top_shapes_and_positive_sigma(self, w):
        d_mu = rand((ARCH.latent_channels, 4, 4), 1)
        d_sig = rand((ARCH.latent_channels, 4, 4), 2)
        y_b = rand((CS, 4, 4), 3)
        mu, sigma = psi_top(0, y_b, d_mu, d_sig, None, None, w)
        assert mu.shape == (CS, 4, 4)
        assert (sigma.data > 0).all()
        mu1, sigma1 = psi_top(1, y_b, d_mu, d_sig, mu, sigma, w)
        assert mu1.shape == (CS, 4, 4)

    def test_top_prev_params_required_together(self, w):
        d_mu = rand((ARCH.latent_channels, 4, 4), 1)
        d_sig = rand((ARCH.latent_channels, 4, 4), 2)
        y_b = rand((CS, 4, 4), 3)
        with pytest.raises(ShapeError, match="mu_prev"):
            psi_top(1, y_b, d_mu, d_sig, None, rand((CS, 4, 4), 4), w)

    def test_slice_index_range(self, w):
        d_mu = rand((ARCH.latent_channels, 4, 4), 1)
        with pytest.raises(ShapeError, match="slice index"):
            psi_base(ARCH.slices, d_mu, d_mu, None, w)


class TestLrp:
    def test_bounded(self, w):
        ctx = rand((ARCH.latent_channels, 4, 4), 5)
        qs = rand((CS, 4, 4), 6)
        for which in ("base", "top"):
            out = lrp(0, which, ctx, qs, w)
            assert out.shape == (CS, 4, 4)
            assert np.abs(out.data).max() < 0.5

    def test_zero_weights_give_zero(self, w):
        ctx = rand((ARCH.latent_channels, 4, 4), 5)
        qs = rand((CS, 4, 4), 6)
        out = lrp(0, "base", ctx, qs, zeroed(w))
        assert not out.data.any()

    def test_channel_validation(self, w):
        with pytest.raises(ShapeError, match="context"):
            lrp(0, "base", rand((CS, 4, 4), 5), rand((CS, 4, 4), 6), w)
        with pytest.raises(ShapeError, match="slice"):
            lrp(0, "base", rand((ARCH.latent_channels, 4, 4), 5), rand((CS + 1, 4, 4), 6), w)


class TestRem:
    def _inputs(self):
        return {
            "y_ckpt_slice": rand((CS, 4, 4), 10),
            "mu_b": rand((CS, 4, 4), 11),
            "sigma_b": Tensor(np.abs(rand((CS, 4, 4), 12).data) + 0.1),
            "mu_t": rand((CS, 4, 4), 13),
            "sigma_t": Tensor(np.abs(rand((CS, 4, 4), 14).data) + 0.1),
        }

    def test_zero_weights_are_identity(self, w):
        inp = self._inputs()
        mu2, sigma2 = rem(1, 7.5, w=zeroed(w), **inp)
        assert np.array_equal(mu2.data, inp["mu_t"].data)
        assert np.array_equal(sigma2.data, inp["sigma_t"].data)

    def test_refined_sigma_stays_positive(self, w):
        inp = self._inputs()
        for q in ARCH.checkpoint_qualities:
            _, sigma2 = rem(0, q, w=w, **inp)
            assert (sigma2.data > 0).all()
            # the multiplicative update can at most halve or 1.5x sigma
            ratio = sigma2.data / inp["sigma_t"].data
            assert ratio.min() > 0.5 and ratio.max() < 1.5

    def test_unknown_checkpoint_rejected(self, w):
        inp = self._inputs()
        with pytest.raises(WeightsError, match=r"slice 0.*50\.0"):
            rem(0, 50.0, w=w, **inp)

    def test_float32_checkpoint_lookup(self, w):
        # qualities arrive as python floats; lookup must match after the
        # same float32 canonicalization ArchConfig applied at build time
        arch = ArchConfig(checkpoint_qualities=(0.1, 7.5))
        ww = generate_seed_weights(arch, 0)
        inp = self._inputs()
        mu2, _ = rem(0, 0.1, w=ww, **inp)
        assert mu2.shape == (CS, 4, 4)

    def test_channel_validation(self, w):
        inp = self._inputs()
        inp["mu_b"] = rand((CS + 1, 4, 4), 11)
        with pytest.raises(ShapeError, match="mu_b"):
            rem(0, 7.5, w=w, **inp)


class TestGoldens:
    def test_analysis_base(self, w, image):
        assert digest(analysis(image, "base", w)) == GOLDEN["analysis_base"]

    def test_analysis_top(self, w, image):
        assert digest(analysis(image, "top", w)) == GOLDEN["analysis_top"]

    def test_synthesis_base(self, w, latents):
        assert digest(synthesis(latents[0], "base", w)) == GOLDEN["synthesis_base"]

    def test_hyper(self, w, latents):
        z = hyper_analysis(latents[0], latents[1], w)
        four = hyper_synthesis(z, w)
        joined = b"".join(t.data.tobytes() for t in (z,) + four)
        assert hashlib.sha256(joined).hexdigest()[:16] == GOLDEN["hyper"]

    def test_psi_base_slice0(self, w, latents):
        z = hyper_analysis(latents[0], latents[1], w)
        d_mu_b, d_sig_b, _, _ = hyper_synthesis(z, w)
        mu, _ = psi_base(0, d_mu_b, d_sig_b, None, w)
        assert digest(mu) == GOLDEN["psi_base_0_mu"]
