"""End-to-end progressive encode and decode over the container format.

Encoding runs the pipeline once at the highest requested quality, then
splits the symbols into per-boundary segments; decoding replays them.
Within each (segment, slice) stream, symbols are ordered by refinement
region so the decoder can apply each checkpoint refinement exactly when
the elements that depend on it arrive (see pceem for the argument that
this order is consistent across any segmentation).

Region indices are computed against the full architecture checkpoint
list on both sides. Checkpoints at or above an element's entry quality
never exclude it, so a container encoded to a low target still agrees
with a decoder reasoning over all checkpoints.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .container import BitstreamContainer
from .errors import ContainerError, QualityError, ShapeError
from .imageio import crop_to, mse, pad_to_multiple, psnr
from .masking import canonical_quality, quantize_residual, sigma_mask
from .pceem import (
    SliceParams,
    default_rem_plan,
    element_regions,
    latent_state,
    refine_at_checkpoint,
    run_base,
    run_top,
)
from .rans import RansDecoder, decode_symbols, default_tables, encode_symbols, quantize_scales
from .tensor import Tensor, channel_concat
from .transforms import analysis, hyper_analysis, hyper_synthesis, lrp, psi_base, psi_top, synthesis
from .weights import ModelWeights, arch_fingerprint, weights_checksum


@dataclass(frozen=True)
class RDPoint:
    """One rate-distortion measurement against the original image."""

    bpp: float
    mse: float
    psnr: float

    @classmethod
    def measure(cls, original: Tensor, decoded: Tensor, container_bytes: int) -> "RDPoint":
        err = mse(original, decoded)
        pixels = original.height * original.width
        return cls(container_bytes * 8.0 / pixels, err, psnr(err))


def _levels(sigma_values: np.ndarray, tables) -> np.ndarray:
    return quantize_scales(sigma_values.astype(np.float64), tables.scale_table)


def _zprior_fields(w: ModelWeights, shape) -> tuple[Tensor, np.ndarray]:
    mu = np.broadcast_to(w.blobs["zprior.mu"][:, None, None], shape)
    sigma = np.broadcast_to(w.blobs["zprior.sigma"][:, None, None], shape)
    return Tensor(np.ascontiguousarray(mu, dtype=np.float32)), sigma.ravel()


def _segment_mask(sigma: Tensor, q_from: float, q_to: float) -> np.ndarray:
    # The first segment starts from nothing, so it takes the full mask;
    # a delta of masks would wrongly drop the elements sigma_mask keeps
    # even at quality zero.
    hi = sigma_mask(sigma, q_to)
    if q_from == 0.0:
        return hi
    return (hi - sigma_mask(sigma, q_from)).astype(np.uint8)


def _region_order(regions: np.ndarray, seg_mask: np.ndarray, n_regions: int) -> np.ndarray:
    r = regions.ravel()
    m = seg_mask.ravel() == 1
    return np.concatenate([np.flatnonzero((r == j) & m) for j in range(n_regions)])


def encode_image(x: Tensor, q_targets, w: ModelWeights) -> BitstreamContainer:
    """Encode an RGB image in [0, 1] with one segment per quality target."""
    targets = [canonical_quality(q) for q in q_targets]
    if not targets:
        raise QualityError("need at least one quality target")
    if targets[0] == 0.0:
        raise QualityError("targets must be positive; quality 0 is the base layer")
    if any(b <= a for a, b in zip(targets, targets[1:])):
        raise QualityError(f"targets must be strictly ascending: {targets}")
    if x.channels != 3:
        raise ShapeError(f"expected an RGB image, got {x.channels} channels")
    if x.data.min() < 0.0 or x.data.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")

    arch = w.arch
    tables = default_tables()
    padded = pad_to_multiple(x, arch.pad_multiple)
    y_b = analysis(padded, "base", w)
    y_t = analysis(padded, "top", w)

    z = hyper_analysis(y_b, y_t, w)
    mu_z, sigma_z = _zprior_fields(w, z.shape)
    z_sym, z_hat = quantize_residual(z, mu_z, np.ones(z.shape, dtype=np.uint8))
    z_stream = encode_symbols(z_sym.ravel(), _levels(sigma_z, tables), tables)

    d_mu_b, d_sig_b, d_mu_t, d_sig_t = hyper_synthesis(z_hat, w)
    base = run_base(y_b, d_mu_b, d_sig_b, w)
    base_streams = tuple(
        encode_symbols(
            base.symbols[i].ravel(),
            _levels(base.params[i].sigma.data.ravel(), tables),
            tables,
        )
        for i in range(arch.slices)
    )

    q_max = targets[-1]
    plan = default_rem_plan(q_max, base.params, arch)
    trace = run_top(y_t, base.y_hat, d_mu_t, d_sig_t, q_max, w, plan)

    n_regions = len(arch.checkpoint_qualities) + 1
    specs = []
    q_from = 0.0
    for q_to in targets:
        streams = []
        for i in range(arch.slices):
            seg_mask = _segment_mask(trace.params[i].sigma, q_from, q_to)
            idx = _region_order(trace.regions[i], seg_mask, n_regions)
            syms = trace.symbols[i].ravel()[idx]
            lv = _levels(trace.coding_sigma[i].ravel()[idx], tables)
            streams.append(encode_symbols(syms, lv, tables))
        specs.append((q_from, q_to, streams))
        q_from = q_to

    return BitstreamContainer.assemble(
        (x.height, x.width),
        (padded.height, padded.width),
        arch_fingerprint(arch),
        weights_checksum(w),
        z_stream,
        base_streams,
        specs,
    )


class ProgressiveDecoder:
    """Stateful decoder: construct once, then advance through boundaries.

    Construction decodes the hyper stream and the full base layer, which
    is every byte a quality-0 reconstruction needs. Each advance_to()
    call consumes the delta segments up to the requested boundary;
    rewinding is not possible, make a fresh decoder instead.
    """

    def __init__(self, c: BitstreamContainer, w: ModelWeights):
        if c.arch_fingerprint != arch_fingerprint(w.arch):
            raise ContainerError("container was encoded for a different architecture")
        if c.weights_checksum != weights_checksum(w):
            raise ContainerError("container was encoded with different weights")
        if c.padded_size[0] % w.arch.pad_multiple or c.padded_size[1] % w.arch.pad_multiple:
            raise ContainerError(
                f"padded dims {c.padded_size} not a multiple of {w.arch.pad_multiple}"
            )
        self._c = c
        self._w = w
        self._tables = default_tables()
        self._q = 0.0
        self._applied = 0
        arch = w.arch
        cs = arch.slice_channels
        f = arch.image_downsample
        lh, lw = c.padded_size[0] // f, c.padded_size[1] // f

        z_shape = (arch.hyper_channels, lh // 4, lw // 4)
        mu_z, sigma_z = _zprior_fields(w, z_shape)
        z_sym = decode_symbols(c.z_stream, _levels(sigma_z, self._tables), self._tables)
        z_hat = Tensor(z_sym.reshape(z_shape).astype(np.float32) + mu_z.data)
        d_mu_b, d_sig_b, self._d_mu_t, self._d_sig_t = hyper_synthesis(z_hat, w)

        self._base_params: list[SliceParams] = []
        recon: list[Tensor] = []
        for i in range(arch.slices):
            y_prev = channel_concat(recon) if recon else None
            mu, sigma = psi_base(i, d_mu_b, d_sig_b, y_prev, w)
            self._base_params.append(SliceParams(i, "base", mu, sigma))
            sym = decode_symbols(
                c.base_streams[i], _levels(sigma.data.ravel(), self._tables), self._tables
            ).reshape(mu.shape)
            quant = Tensor(sym.astype(np.float32) + mu.data)
            corr = lrp(i, "base", d_mu_b, quant, w)
            recon.append(Tensor(quant.data + corr.data))
        self._y_b = channel_concat(recon)

        self._top_params: list[SliceParams] = []
        for i in range(arch.slices):
            prev = self._top_params
            mu_prev = channel_concat([p.mu for p in prev]) if prev else None
            sigma_prev = channel_concat([p.sigma for p in prev]) if prev else None
            mu, sigma = psi_top(
                i, self._slice_b(i), self._d_mu_t, self._d_sig_t, mu_prev, sigma_prev, w
            )
            self._top_params.append(SliceParams(i, "top", mu, sigma))

        self._regions = [
            element_regions(p.sigma, arch.checkpoint_qualities) for p in self._top_params
        ]
        self._sym = [np.zeros((cs, lh, lw), dtype=np.int64) for _ in range(arch.slices)]
        self._mu_eff = [p.mu.data.copy() for p in self._top_params]
        self._sigma_eff = [p.sigma.data.copy() for p in self._top_params]
        self._rem_done = [0] * arch.slices

    def _slice_b(self, i: int) -> Tensor:
        cs = self._w.arch.slice_channels
        return Tensor(self._y_b.data[i * cs : (i + 1) * cs])

    @property
    def quality(self) -> float:
        return self._q

    def advance_to(self, q: float) -> "ProgressiveDecoder":
        q = canonical_quality(q)
        if q == self._q:
            return self
        if q < self._q:
            raise QualityError(
                f"decoder is already at {self._q}; cannot rewind to {q}"
            )
        if q not in self._c.boundaries:
            raise ContainerError(
                f"quality {q} is not a segment boundary; "
                f"available: {(0.0,) + self._c.boundaries}"
            )
        while self._applied < len(self._c.segments):
            seg = self._c.segments[self._applied]
            if seg.q_to > q:
                break
            self._apply_segment(self._applied)
            self._applied += 1
        self._q = q
        return self

    def _ensure_refined(self, i: int, region: int) -> None:
        arch = self._w.arch
        while self._rem_done[i] < region:
            j = self._rem_done[i]
            ck_q = arch.checkpoint_qualities[j]
            ck_mask = sigma_mask(self._top_params[i].sigma, ck_q)
            mu_r, sigma_r = refine_at_checkpoint(
                i, ck_q, ck_mask, self._sym[i], self._mu_eff[i],
                self._base_params[i], self._top_params[i].mu,
                self._top_params[i].sigma, self._slice_b(i), self._d_mu_t, self._w,
            )
            sel = self._regions[i] == j + 1
            self._mu_eff[i][sel] = mu_r.data[sel]
            self._sigma_eff[i][sel] = sigma_r.data[sel]
            self._rem_done[i] = j + 1

    def _apply_segment(self, k: int) -> None:
        seg = self._c.segments[k]
        n_regions = len(self._w.arch.checkpoint_qualities) + 1
        for i in range(self._w.arch.slices):
            seg_mask = _segment_mask(self._top_params[i].sigma, seg.q_from, seg.q_to)
            dec = RansDecoder(self._c.segment_streams[k][i], self._tables)
            r = self._regions[i].ravel()
            m = seg_mask.ravel() == 1
            flat = self._sym[i].ravel()
            for j in range(n_regions):
                idx = np.flatnonzero((r == j) & m)
                if idx.size == 0:
                    continue
                self._ensure_refined(i, j)
                lv = _levels(self._sigma_eff[i].ravel()[idx], self._tables)
                flat[idx] = dec.decode(lv)
            dec.finish()

    def latent(self) -> Tensor:
        """Current latent: the base reconstruction at 0, else base + residual."""
        if self._q == 0.0:
            return self._y_b
        slices = []
        for i in range(self._w.arch.slices):
            mask = sigma_mask(self._top_params[i].sigma, self._q)
            pre = latent_state(
                self._sym[i], self._mu_eff[i], self._top_params[i].mu, mask
            )
            corr = lrp(i, "top", self._d_mu_t, Tensor(pre), self._w)
            r_hat = pre + corr.data
            slices.append(Tensor(self._slice_b(i).data + r_hat))
        return channel_concat(slices)

    def image(self) -> Tensor:
        which = "base" if self._q == 0.0 else "top"
        full = synthesis(self.latent(), which, self._w)
        return crop_to(full, *self._c.orig_size)


def decode_image(c: BitstreamContainer, q: float, w: ModelWeights) -> Tensor:
    """Reconstruct at quality q, which must be 0 or a segment boundary."""
    return ProgressiveDecoder(c, w).advance_to(canonical_quality(q)).image()
