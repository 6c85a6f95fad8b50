"""Two-stream slice pipeline: entropy parameters, masking, refinement.

The base latent is coded fully, slice by slice, each slice conditioned on
the reconstruction of the previous ones. The top stream codes the residual
against the base reconstruction, keeps only the elements selected by the
sigma mask for the requested quality, and substitutes the prior mean for
everything else.

Refinement regions
------------------
Checkpoint refinement creates an ordering problem: the refined parameters
for an element depend on the reconstruction at an earlier checkpoint, which
depends on symbols decoded before it. We resolve it by assigning every
element a region index

    region(e) = number of checkpoint masks that exclude e

so region 0 is coded with unrefined parameters, and region j >= 1 is coded
with the parameters refined at checkpoint j-1. Region indices are computed
from the quality-invariant sigmas, so encoder and decoder agree on them
without signaling. Streams order symbols by (region, flat index); since a
lower region always has a sigma above any higher region's threshold, every
element of checkpoint j's mask is decoded before the first region-(j+1)
symbol regardless of how the bitstream is segmented. The decoder can
therefore form each checkpoint reconstruction exactly when it is needed.

Refined parameters apply only to coded symbols. Mean substitution for
uncoded elements always uses the unrefined mu, which is what makes stepwise
decoding bit-equal to a fresh decode at the same quality.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MaskError, QualityError, ShapeError
from .masking import canonical_quality, quantize_residual, round_half_away, sigma_mask
from .rans import code_length_bits, default_tables, quantize_scales
from .tensor import Tensor, channel_concat
from .transforms import lrp, psi_base, psi_top, rem
from .weights import ArchConfig, ModelWeights


@dataclass(frozen=True)
class SliceParams:
    """Entropy parameters (mu, sigma) for one slice of one stream."""

    index: int
    stream: str
    mu: Tensor
    sigma: Tensor

    def __post_init__(self):
        if self.stream not in ("base", "top"):
            raise ValueError(f"stream must be 'base' or 'top', got {self.stream!r}")
        if self.mu.shape != self.sigma.shape:
            raise ShapeError(
                f"mu shape {self.mu.shape} != sigma shape {self.sigma.shape}"
            )
        if not (self.sigma.data > 0).all():
            raise ValueError("sigma must be strictly positive")


@dataclass(frozen=True)
class BaseTrace:
    """Everything run_base produces: reconstruction, params, symbols."""

    y_hat: Tensor
    params: tuple[SliceParams, ...]
    symbols: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class TopTrace:
    """Everything run_top produces.

    `params` are the unrefined psi outputs (identical for every quality);
    `coding_mu`/`coding_sigma` are the per-element parameters the symbols
    were actually quantized against, refined region by region. `symbols`
    are full-slice arrays, zero outside the mask.
    """

    y_hat: Tensor
    params: tuple[SliceParams, ...]
    masks: tuple[np.ndarray, ...]
    symbols: tuple[np.ndarray, ...]
    r_hat: tuple[Tensor, ...]
    coding_mu: tuple[np.ndarray, ...]
    coding_sigma: tuple[np.ndarray, ...]
    regions: tuple[np.ndarray, ...]


@dataclass(frozen=True)
class RemPlan:
    """Checkpoints to refine at (ascending) and the base params they see."""

    checkpoints: tuple[float, ...]
    base_params: tuple[SliceParams, ...]

    def __post_init__(self):
        cks = tuple(canonical_quality(c) for c in self.checkpoints)
        if not cks:
            raise QualityError("empty refinement plan; pass None instead")
        if any(b <= a for a, b in zip(cks, cks[1:])):
            raise QualityError(f"checkpoints must be strictly ascending: {cks}")
        object.__setattr__(self, "checkpoints", cks)
        for i, p in enumerate(self.base_params):
            if p.stream != "base" or p.index != i:
                raise ValueError("base_params must be run_base params in slice order")


def default_rem_plan(
    q: float, base_params: tuple[SliceParams, ...], arch: ArchConfig
) -> RemPlan | None:
    """Plan covering every architecture checkpoint strictly below q."""
    q = canonical_quality(q)
    cks = tuple(c for c in arch.checkpoint_qualities if c < q)
    if not cks:
        return None
    return RemPlan(cks, tuple(base_params))


def latent_state(
    symbols: np.ndarray, coding_mu: np.ndarray, mu: Tensor, mask: np.ndarray
) -> np.ndarray:
    """Pre-correction slice: dequantized where coded, unrefined mean elsewhere."""
    return np.where(mask != 0, symbols.astype(np.float32) + coding_mu, mu.data)


def element_regions(sigma: Tensor, checkpoints: tuple[float, ...]) -> np.ndarray:
    """Region index per element: how many checkpoint masks exclude it."""
    regions = np.zeros(sigma.shape, dtype=np.int16)
    for c in checkpoints:
        regions += 1 - sigma_mask(sigma, c).astype(np.int16)
    return regions


def refine_at_checkpoint(
    i: int,
    checkpoint_q: float,
    checkpoint_mask: np.ndarray,
    symbols: np.ndarray,
    coding_mu: np.ndarray,
    base: SliceParams,
    mu: Tensor,
    sigma: Tensor,
    y_hat_b_slice: Tensor,
    d_mu_t: Tensor,
    w: ModelWeights,
) -> tuple[Tensor, Tensor]:
    """Parameters refined from the reconstruction available at a checkpoint.

    `symbols` and `coding_mu` must hold the decoded state for every element
    of the checkpoint mask; later elements are ignored. The caller applies
    the result only to the elements of the checkpoint's refinement region.
    """
    pre = latent_state(symbols, coding_mu, mu, checkpoint_mask)
    corr = lrp(i, "top", d_mu_t, Tensor(pre), w)
    # residual first, base second: float addition order must match the
    # reconstruction path exactly or checkpoint recons drift by ULPs
    r_hat = pre + corr.data
    y_ckpt = Tensor(y_hat_b_slice.data + r_hat)
    return rem(i, checkpoint_q, y_ckpt, base.mu, base.sigma, mu, sigma, w)


def _check_latent(t: Tensor, arch: ArchConfig, name: str) -> None:
    if t.channels != arch.latent_channels:
        raise ShapeError(f"{name} should have {arch.latent_channels} channels, got {t.channels}")


def _slice(t: Tensor, i: int, cs: int) -> Tensor:
    return Tensor(t.data[i * cs : (i + 1) * cs])


def run_base(
    y_b: Tensor, d_mu_b: Tensor, d_sigma_b: Tensor, w: ModelWeights
) -> BaseTrace:
    """Code the base latent: all elements, every slice, no masking."""
    arch = w.arch
    _check_latent(y_b, arch, "y_b")
    if d_mu_b.shape != y_b.shape or d_sigma_b.shape != y_b.shape:
        raise ShapeError("hyper outputs must have the latent shape")
    cs = arch.slice_channels
    ones = np.ones((cs, y_b.height, y_b.width), dtype=np.uint8)
    params: list[SliceParams] = []
    symbols: list[np.ndarray] = []
    recon: list[Tensor] = []
    for i in range(arch.slices):
        y_prev = channel_concat(recon) if recon else None
        mu, sigma = psi_base(i, d_mu_b, d_sigma_b, y_prev, w)
        params.append(SliceParams(i, "base", mu, sigma))
        sym, quant = quantize_residual(_slice(y_b, i, cs), mu, ones)
        corr = lrp(i, "base", d_mu_b, quant, w)
        recon.append(Tensor(quant.data + corr.data))
        symbols.append(sym)
    return BaseTrace(channel_concat(recon), tuple(params), tuple(symbols))


def run_top(
    y_t: Tensor,
    y_hat_b: Tensor,
    d_mu_t: Tensor,
    d_sigma_t: Tensor,
    q: float,
    w: ModelWeights,
    rem_plan: RemPlan | None = None,
) -> TopTrace:
    """Code the top residual at quality q, refining at plan checkpoints.

    Entropy parameters come from the previous slices' parameters, never
    their decoded values, so they are identical for every q. The mask and
    the refinement regions derive from those parameters alone.
    """
    arch = w.arch
    q = canonical_quality(q)
    if q == 0.0:
        raise QualityError("top stream is undefined at q=0; decode the base layer")
    _check_latent(y_t, arch, "y_t")
    if y_t.shape != y_hat_b.shape:
        raise ShapeError(f"latent shapes differ: {y_t.shape} vs {y_hat_b.shape}")
    if d_mu_t.shape != y_t.shape or d_sigma_t.shape != y_t.shape:
        raise ShapeError("hyper outputs must have the latent shape")
    if rem_plan is not None:
        if len(rem_plan.base_params) != arch.slices:
            raise ShapeError(
                f"plan has {len(rem_plan.base_params)} base slices, arch wants {arch.slices}"
            )
        for c in rem_plan.checkpoints:
            if not c < q:
                raise QualityError(f"checkpoint {c} not below target quality {q}")

    cs = arch.slice_channels
    params: list[SliceParams] = []
    masks, symbols, r_hats, mus, sigmas, regs, y_slices = [], [], [], [], [], [], []
    for i in range(arch.slices):
        mu_prev = channel_concat([p.mu for p in params]) if params else None
        sigma_prev = channel_concat([p.sigma for p in params]) if params else None
        y_b_i = _slice(y_hat_b, i, cs)
        mu, sigma = psi_top(i, y_b_i, d_mu_t, d_sigma_t, mu_prev, sigma_prev, w)
        params.append(SliceParams(i, "top", mu, sigma))
        mask = sigma_mask(sigma, q)
        r = Tensor(y_t.data[i * cs : (i + 1) * cs] - y_b_i.data)

        if rem_plan is None:
            sym, _ = quantize_residual(r, mu, mask)
            mu_eff = mu.data.copy()
            sigma_eff = sigma.data.copy()
            regions = np.zeros(r.shape, dtype=np.int16)
        else:
            sym, mu_eff, sigma_eff, regions = _code_slice(
                i, r, mu, sigma, mask, rem_plan, y_b_i, d_mu_t, w
            )

        pre = latent_state(sym, mu_eff, mu, mask)
        corr = lrp(i, "top", d_mu_t, Tensor(pre), w)
        r_hat = Tensor(pre + corr.data)
        y_slices.append(Tensor(y_b_i.data + r_hat.data))
        masks.append(mask)
        symbols.append(sym)
        r_hats.append(r_hat)
        mus.append(mu_eff)
        sigmas.append(sigma_eff)
        regs.append(regions)
    return TopTrace(
        channel_concat(y_slices),
        tuple(params),
        tuple(masks),
        tuple(symbols),
        tuple(r_hats),
        tuple(mus),
        tuple(sigmas),
        tuple(regs),
    )


def _code_slice(
    i: int,
    r: Tensor,
    mu: Tensor,
    sigma: Tensor,
    mask: np.ndarray,
    plan: RemPlan,
    y_b_i: Tensor,
    d_mu_t: Tensor,
    w: ModelWeights,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    # Region by region: refine with the checkpoint reconstruction built
    # from the symbols quantized so far, then quantize the region against
    # the refined parameters. Mirrors the decoder's order exactly.
    regions = element_regions(sigma, plan.checkpoints)
    coded = mask.astype(bool)
    mu_eff = mu.data.copy()
    sigma_eff = sigma.data.copy()
    sym = np.zeros(r.shape, dtype=np.int64)
    for j in range(len(plan.checkpoints) + 1):
        if j:
            ck_mask = sigma_mask(sigma, plan.checkpoints[j - 1])
            mu_ref, sigma_ref = refine_at_checkpoint(
                i, plan.checkpoints[j - 1], ck_mask, sym, mu_eff,
                plan.base_params[i], mu, sigma, y_b_i, d_mu_t, w,
            )
            sel = regions == j
            mu_eff[sel] = mu_ref.data[sel]
            sigma_eff[sel] = sigma_ref.data[sel]
        code = (regions == j) & coded
        if code.any():
            sym[code] = round_half_away(r.data - mu_eff)[code]
    return sym, mu_eff, sigma_eff, regions


def entropy_estimate(symbols, sigma: Tensor, mask) -> float:
    """Model bits for the masked symbols, using the coder's quantized tables."""
    sym = np.asarray(symbols)
    m = np.asarray(mask)
    if sym.shape != sigma.shape or m.shape != sym.shape:
        raise ShapeError(
            f"shape mismatch: symbols {sym.shape}, sigma {sigma.shape}, mask {m.shape}"
        )
    if not np.isin(m, (0, 1)).all():
        raise MaskError("mask must be binary")
    sel = m != 0
    if not sel.any():
        return 0.0
    tables = default_tables()
    levels = quantize_scales(sigma.data[sel].astype(np.float64), tables.scale_table)
    return code_length_bits(sym[sel], levels, tables)
