"""Variance-ordered progressive masks and masked residual quantization.

Quality q in [0, 100] selects residual elements by predicted standard
deviation: keep everything at or above the (100 - q)-th percentile of the
slice's sigma values. Masks derive from sigma alone, so the decoder rebuilds
them without any signaling beyond q itself. Quality values are canonicalized
through float32 before use; the container stores boundaries as float32, and
both sides must threshold with the identical number.
"""

from __future__ import annotations

import numpy as np

from .errors import MaskError, QualityError, ShapeError
from .tensor import Tensor


def canonical_quality(q: float) -> float:
    """Quality as the float64 value of its float32 representation.

    Raises QualityError outside [0, 100] or on non-finite input.
    """
    q32 = float(np.float32(q))
    if not np.isfinite(q32) or not 0.0 <= q32 <= 100.0:
        raise QualityError(f"quality must be in [0, 100], got {q!r}")
    return q32


def round_half_away(x: np.ndarray) -> np.ndarray:
    """Round to nearest integer, ties away from zero; returns int64.

    Computed in float64 so every float32 input rounds exactly.
    """
    a = np.asarray(x, dtype=np.float64)
    return np.copysign(np.floor(np.abs(a) + 0.5), a).astype(np.int64)


def percentile(values, p: float) -> float:
    """Linear-interpolation percentile with inclusive endpoints.

    p=0 gives the minimum, p=100 the maximum.
    """
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise MaskError("percentile of an empty sequence")
    if not np.isfinite(arr).all():
        raise MaskError("percentile input contains non-finite values")
    if not 0.0 <= p <= 100.0:
        raise MaskError(f"percentile p must be in [0, 100], got {p}")
    return float(np.percentile(arr, p, method="linear"))


def sigma_mask(sigma_slice: Tensor, q: float) -> np.ndarray:
    """Binary keep-mask for one slice at quality q.

    Threshold is the (100 - q)-th percentile of the flattened sigmas;
    elements with sigma >= threshold are kept, so ties at the threshold are
    included and q=0 still keeps the maximal-sigma element(s).
    """
    q = canonical_quality(q)
    sig = sigma_slice.data.astype(np.float64)
    if not (sig > 0).all():
        raise MaskError("sigma must be strictly positive")
    threshold = percentile(sig, 100.0 - q)
    return (sig >= threshold).astype(np.uint8)


def delta_mask(sigma_slice: Tensor, q_tilde: float, q_star: float) -> np.ndarray:
    """Elements added when moving from quality q_tilde up to q_star."""
    q_tilde = canonical_quality(q_tilde)
    q_star = canonical_quality(q_star)
    if not q_star > q_tilde:
        raise QualityError(f"delta mask needs q_star > q_tilde, got {q_tilde} -> {q_star}")
    lo = sigma_mask(sigma_slice, q_tilde)
    hi = sigma_mask(sigma_slice, q_star)
    out = hi.astype(np.int8) - lo.astype(np.int8)
    # Mask monotonicity makes the difference binary; a negative value would
    # mean the percentile family is broken, not a user error.
    if (out < 0).any():
        raise MaskError("mask family is not monotone")
    return out.astype(np.uint8)


def _check_binary(mask: np.ndarray) -> np.ndarray:
    m = np.asarray(mask)
    if not np.isin(m, (0, 1)).all():
        raise MaskError("mask must be binary")
    return m.astype(np.int64)


def quantize_residual(
    r: Tensor, mu: Tensor, mask: np.ndarray
) -> tuple[np.ndarray, Tensor]:
    """Masked quantization: symbols = round(r - mu) * mask, r_hat = symbols + mu.

    Masked-out positions carry exactly mu; kept positions carry the
    dequantized value. Returns (int64 symbols, float32 r_hat).
    """
    m = _check_binary(mask)
    if r.shape != mu.shape or m.shape != r.shape:
        raise ShapeError(
            f"shape mismatch: r {r.shape}, mu {mu.shape}, mask {m.shape}"
        )
    symbols = round_half_away(r.data - mu.data) * m
    r_hat = Tensor(symbols.astype(np.float32) + mu.data)
    return symbols, r_hat
