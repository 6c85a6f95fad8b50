"""Forward passes of all sub-networks, driven by named weight blobs.

Output mappings that must be strictly positive or bounded are built from
add/multiply/divide/sqrt only. Those IEEE ops are correctly rounded on every
platform, unlike libm transcendentals, and decode correctness depends on the
decoder reproducing the encoder's floats bit-for-bit.
"""

from __future__ import annotations

import functools

import numpy as np

from .errors import ShapeError, WeightsError
from .masking import canonical_quality
from .tensor import ConvSpec, Tensor, channel_concat, channel_split, conv2d, leaky_relu
from .weights import SIGMA_FLOOR, ModelWeights, conv_layers


@functools.lru_cache(maxsize=8)
def _layers(arch) -> dict[str, ConvSpec]:
    return conv_layers(arch)


def _apply(w: ModelWeights, name: str, x: Tensor) -> Tensor:
    spec = _layers(w.arch)[name]
    return conv2d(x, spec, w.blobs[f"{name}.w"], w.blobs[f"{name}.b"])


def _stack(w: ModelWeights, prefix: str, n: int, x: Tensor) -> Tensor:
    for layer in range(n):
        x = _apply(w, f"{prefix}.{layer}", x)
        if layer < n - 1:
            x = leaky_relu(x)
    return x


def _suffix(which: str) -> str:
    if which not in ("base", "top"):
        raise ValueError(f"which must be 'base' or 'top', got {which!r}")
    return which[0]


def positive_map(x: Tensor) -> Tensor:
    """Smooth strictly-positive mapping: 0.5*(x + sqrt(x^2 + 4)) + floor.

    Behaves like x for large positive inputs and decays to the floor for
    large negative ones; value 1 at x=0.
    """
    d = x.data
    out = np.float32(0.5) * (d + np.sqrt(d * d + np.float32(4.0)))
    return Tensor(out + np.float32(SIGMA_FLOOR))


def bounded_map(x: Tensor) -> Tensor:
    """Smooth odd mapping of the reals into [-1, 1]: x / sqrt(x^2 + 1).

    Mathematically the bound is open, but float32 saturates to exactly
    +-1 once x*x + 1 rounds to x*x. Callers tolerate the closed ends.
    """
    d = x.data
    return Tensor(d / np.sqrt(d * d + np.float32(1.0)))


def analysis(x: Tensor, which: str, w: ModelWeights) -> Tensor:
    """Image (3, H, W) -> latent (C, H/16, W/16)."""
    s = _suffix(which)
    if x.channels != 3:
        raise ShapeError(f"analysis expects 3 channels, got {x.channels}")
    f = w.arch.image_downsample
    if x.height % f or x.width % f:
        raise ShapeError(
            f"image dims ({x.height}, {x.width}) not divisible by {f}; pad first"
        )
    return _stack(w, f"ga_{s}", 4, x)


def synthesis(y: Tensor, which: str, w: ModelWeights) -> Tensor:
    """Latent (C, h, w) -> image (3, 16h, 16w), clamped to [0, 1]."""
    s = _suffix(which)
    if y.channels != w.arch.latent_channels:
        raise ShapeError(
            f"synthesis expects {w.arch.latent_channels} channels, got {y.channels}"
        )
    out = _stack(w, f"gs_{s}", 4, y)
    return Tensor(np.clip(out.data, 0.0, 1.0))


def hyper_analysis(y_b: Tensor, y_t: Tensor, w: ModelWeights) -> Tensor:
    """Latent pair -> hyper-latent (Z, h/4, w/4)."""
    if y_b.shape != y_t.shape:
        raise ShapeError(f"latent shapes differ: {y_b.shape} vs {y_t.shape}")
    if y_b.channels != w.arch.latent_channels:
        raise ShapeError(
            f"hyper_analysis expects {w.arch.latent_channels} channels, got {y_b.channels}"
        )
    if y_b.height % 4 or y_b.width % 4:
        raise ShapeError(
            f"latent dims ({y_b.height}, {y_b.width}) not divisible by 4; "
            f"pad images to multiples of {w.arch.pad_multiple}"
        )
    return _stack(w, "ha", 2, channel_concat([y_b, y_t]))


def hyper_synthesis(z_hat: Tensor, w: ModelWeights) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Hyper-latent -> (d_mu_base, d_sigma_base, d_mu_top, d_sigma_top).

    Each output has full latent shape; these are conditioning tensors, not
    final entropy parameters (the psi nets produce those).
    """
    if z_hat.channels != w.arch.hyper_channels:
        raise ShapeError(
            f"hyper_synthesis expects {w.arch.hyper_channels} channels, got {z_hat.channels}"
        )
    four = _stack(w, "hs", 2, z_hat)
    a, b, c, d = channel_split(four, 4)
    return a, b, c, d


def _check_slice_index(i: int, w: ModelWeights) -> None:
    if not 0 <= i < w.arch.slices:
        raise ShapeError(f"slice index {i} out of range [0, {w.arch.slices})")


def _check_prev(prev: Tensor | None, i: int, per: int, label: str) -> list[Tensor]:
    got = 0 if prev is None else prev.channels
    if got != i * per:
        raise ShapeError(f"{label} should have {i * per} channels at slice {i}, got {got}")
    return [] if prev is None or prev.channels == 0 else [prev]


def psi_base(
    i: int,
    d_mu_b: Tensor,
    d_sigma_b: Tensor,
    y_prev: Tensor | None,
    w: ModelWeights,
) -> tuple[Tensor, Tensor]:
    """Entropy parameters (mu, sigma) for base slice i.

    Conditions on the hyper outputs and the already-reconstructed previous
    base slices (concatenated; None at i=0).
    """
    _check_slice_index(i, w)
    parts = [d_mu_b, d_sigma_b] + _check_prev(y_prev, i, w.arch.slice_channels, "y_prev")
    out = _stack(w, f"psi_b.{i}", 2, channel_concat(parts))
    mu, sig_raw = channel_split(out, 2)
    return mu, positive_map(sig_raw)


def psi_top(
    i: int,
    y_b_slice: Tensor,
    d_mu_t: Tensor,
    d_sigma_t: Tensor,
    mu_prev: Tensor | None,
    sigma_prev: Tensor | None,
    w: ModelWeights,
) -> tuple[Tensor, Tensor]:
    """Entropy parameters for top slice i.

    Conditions on the reconstructed base slice and the PARAMETERS of
    previous top slices — never their decoded values, which is what makes
    every top parameter independent of the requested quality.
    """
    _check_slice_index(i, w)
    cs = w.arch.slice_channels
    if y_b_slice.channels != cs:
        raise ShapeError(f"y_b_slice should have {cs} channels, got {y_b_slice.channels}")
    parts = [y_b_slice, d_mu_t, d_sigma_t]
    parts += _check_prev(mu_prev, i, cs, "mu_prev")
    parts += _check_prev(sigma_prev, i, cs, "sigma_prev")
    out = _stack(w, f"psi_t.{i}", 2, channel_concat(parts))
    mu, sig_raw = channel_split(out, 2)
    return mu, positive_map(sig_raw)


def lrp(i: int, which: str, context: Tensor, quant_slice: Tensor, w: ModelWeights) -> Tensor:
    """Dequantization correction for slice i, bounded in [-0.5, 0.5]."""
    s = _suffix(which)
    _check_slice_index(i, w)
    if context.channels != w.arch.latent_channels:
        raise ShapeError(
            f"lrp context should have {w.arch.latent_channels} channels, "
            f"got {context.channels}"
        )
    if quant_slice.channels != w.arch.slice_channels:
        raise ShapeError(
            f"lrp slice should have {w.arch.slice_channels} channels, "
            f"got {quant_slice.channels}"
        )
    out = _stack(w, f"lrp_{s}.{i}", 2, channel_concat([context, quant_slice]))
    return Tensor(np.float32(0.5) * bounded_map(out).data)


def rem(
    i: int,
    q_checkpoint: float,
    y_ckpt_slice: Tensor,
    mu_b: Tensor,
    sigma_b: Tensor,
    mu_t: Tensor,
    sigma_t: Tensor,
    w: ModelWeights,
) -> tuple[Tensor, Tensor]:
    """Refined (mu, sigma) for slice i anchored at a checkpoint quality.

    Residual form: zero weights return the inputs unchanged. The caller is
    responsible for restricting the refinement to the elements between this
    checkpoint and the next one; outside that support the unrefined
    parameters must be kept.
    """
    _check_slice_index(i, w)
    q = canonical_quality(q_checkpoint)
    try:
        j = w.arch.checkpoint_qualities.index(q)
    except ValueError:
        raise WeightsError(
            f"no refinement weights for slice {i} at checkpoint {q} "
            f"(available: {list(w.arch.checkpoint_qualities)})"
        ) from None
    cs = w.arch.slice_channels
    for label, t in (
        ("y_ckpt_slice", y_ckpt_slice),
        ("mu_b", mu_b),
        ("sigma_b", sigma_b),
        ("mu_t", mu_t),
        ("sigma_t", sigma_t),
    ):
        if t.channels != cs:
            raise ShapeError(f"rem {label} should have {cs} channels, got {t.channels}")
    inp = channel_concat([y_ckpt_slice, mu_b, sigma_b, mu_t, sigma_t])
    out = _stack(w, f"rem.{i}.{j}", 2, inp)
    d_mu, d_sig = channel_split(out, 2)
    mu2 = Tensor(mu_t.data + d_mu.data)
    factor = np.float32(1.0) + np.float32(0.5) * bounded_map(d_sig).data
    sigma2 = Tensor(sigma_t.data * factor)
    return mu2, sigma2
