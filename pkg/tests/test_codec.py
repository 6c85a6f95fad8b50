import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from plcodec.codec import ProgressiveDecoder, RDPoint, decode_image, encode_image
from plcodec.container import BitstreamContainer, append_delta, extract_substream
from plcodec.errors import CodingError, ContainerError, QualityError, ShapeError
from plcodec.imageio import mse, pad_to_multiple, psnr
from plcodec.masking import quantize_residual, sigma_mask
from plcodec.pceem import default_rem_plan, run_base, run_top
from plcodec.tensor import Tensor
from plcodec.transforms import analysis, hyper_analysis, hyper_synthesis, synthesis
from plcodec.weights import ArchConfig, arch_fingerprint, generate_seed_weights

BOUNDARIES = [0.5, 7.5, 20.0, 100.0]


def make_image(seed, h=64, wd=64):
    rng = np.random.default_rng(seed)
    return Tensor(rng.uniform(0.0, 1.0, size=(3, h, wd)).astype(np.float32))


def eight_bit_image(seed, h=64, wd=64):
    rng = np.random.default_rng(seed)
    raw = rng.integers(0, 256, size=(3, h, wd)).astype(np.float32)
    return Tensor(raw / np.float32(255.0))


@pytest.fixture(scope="module")
def w():
    return generate_seed_weights(ArchConfig(), 0)


@pytest.fixture(scope="module")
def img():
    return make_image(11)


@pytest.fixture(scope="module")
def container(img, w):
    return encode_image(img, BOUNDARIES, w)


@pytest.fixture(scope="module")
def reference(img, w):
    """Fresh pipeline run, the independent recompute the decoder must match."""
    padded = pad_to_multiple(img, w.arch.pad_multiple)
    y_b = analysis(padded, "base", w)
    y_t = analysis(padded, "top", w)
    z = hyper_analysis(y_b, y_t, w)
    mu_z = np.broadcast_to(
        w.blobs["zprior.mu"][:, None, None], z.shape
    ).astype(np.float32)
    _, z_hat = quantize_residual(z, Tensor(mu_z.copy()), np.ones(z.shape, np.uint8))
    d = hyper_synthesis(z_hat, w)
    base = run_base(y_b, d[0], d[1], w)
    return {"y_t": y_t, "d": d, "base": base}


def fresh_latent(reference, w, q):
    base = reference["base"]
    plan = default_rem_plan(q, base.params, w.arch)
    trace = run_top(
        reference["y_t"], base.y_hat, reference["d"][2], reference["d"][3], q, w, plan
    )
    return trace.y_hat


class TestEncode:
    def test_single_target_codes_every_element(self, img, w):
        c = encode_image(img, [100.0], w)
        assert c.boundaries == (100.0,)
        # the quality-100 mask keeps everything, so the one delta segment
        # carries the complete residual
        dec = ProgressiveDecoder(c, w).advance_to(100.0)
        for i in range(w.arch.slices):
            assert sigma_mask(dec._top_params[i].sigma, 100.0).all()

    def test_paper_checkpoint_targets_make_contiguous_intervals(self, container):
        spans = [(s.q_from, s.q_to) for s in container.segments]
        assert spans == [(0.0, 0.5), (0.5, 7.5), (7.5, 20.0), (20.0, 100.0)]

    def test_payload_accounting_exact(self, container):
        blob = container.to_bytes()
        s = container.slices
        head = struct.calcsize("<4sHIIII8sQBBI") + 4 * s + 2
        table = len(container.segments) * (struct.calcsize("<ffQ") + 4 * s)
        payload = (
            len(container.z_stream)
            + sum(len(b) for b in container.base_streams)
            + sum(sum(len(b) for b in ss) for ss in container.segment_streams)
        )
        assert len(blob) == head + table + payload

    def test_dims_recorded(self, w):
        c = encode_image(make_image(4, 50, 50), [7.5], w)
        assert c.orig_size == (50, 50)
        assert c.padded_size == (64, 64)

    def test_deterministic(self, img, w, container):
        assert encode_image(img, BOUNDARIES, w).to_bytes() == container.to_bytes()

    @pytest.mark.parametrize(
        "targets,err,msg",
        [
            ([], QualityError, "at least one"),
            ([0.0, 50.0], QualityError, "base layer"),
            ([50.0, 20.0], QualityError, "ascending"),
            ([20.0, 20.0], QualityError, "ascending"),
            ([20.0, 101.0], QualityError, r"\[0, 100\]"),
        ],
    )
    def test_bad_targets(self, img, w, targets, err, msg):
        with pytest.raises(err, match=msg):
            encode_image(img, targets, w)

    def test_needs_rgb(self, w):
        gray = Tensor(np.zeros((1, 64, 64), np.float32))
        with pytest.raises(ShapeError, match="RGB"):
            encode_image(gray, [50.0], w)

    def test_needs_unit_range(self, img, w):
        hot = Tensor(img.data + np.float32(0.5))
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            encode_image(hot, [50.0], w)


class TestProgressiveEquivalence:
    def test_stepwise_latents_bit_equal_fresh(self, container, reference, w):
        dec = ProgressiveDecoder(container, w)
        assert np.array_equal(dec.latent().data, reference["base"].y_hat.data)
        for q in BOUNDARIES:
            dec.advance_to(q)
            assert np.array_equal(
                dec.latent().data, fresh_latent(reference, w, q).data
            ), f"stepwise latent diverged at q={q}"

    def test_direct_jump_equals_stepwise(self, container, reference, w):
        got = ProgressiveDecoder(container, w).advance_to(20.0).latent()
        assert np.array_equal(got.data, fresh_latent(reference, w, 20.0).data)

    def test_full_decode_bit_equals_trace(self, img, w):
        c = encode_image(img, [100.0], w)
        got = ProgressiveDecoder(c, w).advance_to(100.0).latent()
        padded = pad_to_multiple(img, w.arch.pad_multiple)
        y_b = analysis(padded, "base", w)
        y_t = analysis(padded, "top", w)
        z = hyper_analysis(y_b, y_t, w)
        mu_z = np.broadcast_to(w.blobs["zprior.mu"][:, None, None], z.shape)
        _, z_hat = quantize_residual(
            z, Tensor(mu_z.astype(np.float32).copy()), np.ones(z.shape, np.uint8)
        )
        d = hyper_synthesis(z_hat, w)
        base = run_base(y_b, d[0], d[1], w)
        trace = run_top(
            y_t, base.y_hat, d[2], d[3], 100.0,
            w, default_rem_plan(100.0, base.params, w.arch),
        )
        assert np.array_equal(got.data, trace.y_hat.data)

    def test_pixels_match_direct_synthesis(self, container, reference, w, img):
        dec = ProgressiveDecoder(container, w).advance_to(7.5)
        direct = synthesis(fresh_latent(reference, w, 7.5), "top", w)
        expect = direct.data[:, : img.height, : img.width]
        assert np.array_equal(dec.image().data, expect)

    @settings(max_examples=12, deadline=None)
    @given(
        targets=st.lists(
            st.sampled_from([0.3, 0.5, 2.0, 7.5, 12.5, 20.0, 33.0, 50.0, 75.0, 100.0]),
            unique=True, min_size=1, max_size=4,
        )
    )
    def test_any_boundary_set(self, img, w, reference, targets):
        targets = sorted(targets)
        c = encode_image(img, targets, w)
        dec = ProgressiveDecoder(c, w)
        for q in targets:
            dec.advance_to(q)
            assert np.array_equal(dec.latent().data, fresh_latent(reference, w, q).data)


class TestDecode:
    def test_base_layer_ignores_delta_bytes(self, container, reference, w):
        # replace every delta stream with junk of the same length: quality 0
        # must not touch them
        junk = tuple(
            (seg.q_from, seg.q_to, tuple(b"\xa5" * n for n in seg.slice_lengths))
            for seg in container.segments
        )
        mangled = BitstreamContainer.assemble(
            container.orig_size, container.padded_size, container.arch_fingerprint,
            container.weights_checksum, container.z_stream, container.base_streams,
            junk,
        )
        got = decode_image(mangled, 0.0, w)
        want = decode_image(container, 0.0, w)
        assert np.array_equal(got.data, want.data)

    def test_base_layer_uses_base_synthesis(self, container, reference, w, img):
        direct = synthesis(reference["base"].y_hat, "base", w)
        expect = direct.data[:, : img.height, : img.width]
        assert np.array_equal(decode_image(container, 0.0, w).data, expect)

    def test_output_shape_and_range(self, container, w, img):
        out = decode_image(container, 100.0, w)
        assert out.shape == img.shape
        assert out.data.min() >= 0.0 and out.data.max() <= 1.0

    def test_eight_bit_roundtrip_psnr_finite(self, w):
        img = eight_bit_image(21)
        c = encode_image(img, [100.0], w)
        pt = RDPoint.measure(img, decode_image(c, 100.0, w), len(c.to_bytes()))
        assert math.isfinite(pt.psnr)
        assert pt.bpp > 0

    def test_non_boundary_quality_listed(self, container, w):
        with pytest.raises(ContainerError, match=r"0\.0, 0\.5, 7\.5, 20\.0, 100\.0"):
            decode_image(container, 12.0, w)

    def test_rewind_rejected(self, container, w):
        dec = ProgressiveDecoder(container, w).advance_to(7.5)
        with pytest.raises(QualityError, match="rewind"):
            dec.advance_to(0.5)

    def test_advance_to_current_is_noop(self, container, w):
        dec = ProgressiveDecoder(container, w).advance_to(7.5)
        before = dec.latent()
        dec.advance_to(7.5)
        assert np.array_equal(dec.latent().data, before.data)
        assert dec.quality == 7.5

    def test_wrong_weights_rejected(self, container):
        other = generate_seed_weights(ArchConfig(), 1)
        with pytest.raises(ContainerError, match="different weights"):
            ProgressiveDecoder(container, other)

    def test_wrong_arch_rejected(self, container):
        other_arch = ArchConfig(checkpoint_qualities=(0.5, 7.5))
        other = generate_seed_weights(other_arch, 0)
        assert arch_fingerprint(other_arch) != container.arch_fingerprint
        with pytest.raises(ContainerError, match="architecture"):
            ProgressiveDecoder(container, other)

    def test_mangled_stream_rejected(self, container, w):
        streams = [list(s) for s in container.segment_streams]
        tampered = bytearray(streams[1][0])
        tampered[-1] ^= 0xFF
        streams[1][0] = bytes(tampered)
        specs = [
            (seg.q_from, seg.q_to, tuple(ss))
            for seg, ss in zip(container.segments, streams)
        ]
        mangled = BitstreamContainer.assemble(
            container.orig_size, container.padded_size, container.arch_fingerprint,
            container.weights_checksum, container.z_stream, container.base_streams,
            specs,
        )
        with pytest.raises(CodingError):
            ProgressiveDecoder(mangled, w).advance_to(7.5)

    def test_mangled_base_rejected(self, container, w):
        base = list(container.base_streams)
        tampered = bytearray(base[0])
        tampered[-1] ^= 0xFF
        base[0] = bytes(tampered)
        specs = [
            (seg.q_from, seg.q_to, ss)
            for seg, ss in zip(container.segments, container.segment_streams)
        ]
        mangled = BitstreamContainer.assemble(
            container.orig_size, container.padded_size, container.arch_fingerprint,
            container.weights_checksum, container.z_stream, tuple(base), specs,
        )
        with pytest.raises(CodingError):
            ProgressiveDecoder(mangled, w)


class TestSubstreamAlgebra:
    def test_extract_decode_equivalence(self, container, w):
        for q in [0.0] + BOUNDARIES:
            sub = extract_substream(container, q)
            assert np.array_equal(
                decode_image(sub, q, w).data, decode_image(container, q, w).data
            ), f"extract changed the q={q} reconstruction"

    def test_append_then_decode_matches_original(self, container, w):
        sub = extract_substream(container, 7.5)
        seg = container.segments[-2]
        grown = append_delta(
            sub, container.segment_streams[-2], seg.q_from, seg.q_to
        )
        assert np.array_equal(
            decode_image(grown, 20.0, w).data, decode_image(container, 20.0, w).data
        )

    def test_rate_monotone_over_boundaries(self, container):
        sizes = [
            len(extract_substream(container, q).to_bytes())
            for q in [0.0] + BOUNDARIES
        ]
        assert all(a < b for a, b in zip(sizes, sizes[1:]))


class TestRDPoint:
    def test_psnr_matches_mse(self, container, w, img):
        out = decode_image(container, 20.0, w)
        pt = RDPoint.measure(img, out, 1000)
        assert pt.mse == mse(img, out)
        assert pt.psnr == pytest.approx(10.0 * math.log10(1.0 / pt.mse), rel=1e-12)

    def test_bpp_uses_original_pixels(self, w):
        img = make_image(5, 50, 50)
        c = encode_image(img, [7.5], w)
        pt = RDPoint.measure(img, decode_image(c, 7.5, w), len(c.to_bytes()))
        assert pt.bpp == len(c.to_bytes()) * 8.0 / (50 * 50)

    def test_lossless_reference_point(self):
        a = make_image(6)
        pt = RDPoint.measure(a, a, 123)
        assert pt.mse == 0.0 and pt.psnr == math.inf
