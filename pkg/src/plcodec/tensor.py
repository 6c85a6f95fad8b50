"""Minimal deterministic tensor ops for (channels, height, width) float32 data.

Convolutions accumulate in float64 with a fixed (in-channel, ky, kx) loop
order and round to float32 once at the end. Reconstruction must be bit-exact
between encoder and decoder, so nothing here may depend on platform BLAS
dispatch or reduction order; plain numpy elementwise ops are deterministic
per element, which is why the kernels are written as explicit loops over
kernel taps instead of im2col matmuls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ShapeError


class Tensor:
    """Immutable float32 tensor with shape (channels, height, width).

    The wrapped array is copied on construction and marked read-only, so a
    Tensor can be shared freely between pipeline stages. Non-finite values
    are rejected; every op in this package preserves finiteness.
    """

    __slots__ = ("_data",)

    def __init__(self, data) -> None:
        arr = np.array(data, dtype=np.float32, copy=True)
        if arr.ndim != 3:
            raise ShapeError(f"tensor must have shape (c, h, w), got {arr.shape}")
        if not np.isfinite(arr).all():
            raise ShapeError("tensor contains non-finite values")
        arr.setflags(write=False)
        self._data = arr

    @property
    def data(self) -> np.ndarray:
        """Read-only (c, h, w) float32 view of the contents."""
        return self._data

    @property
    def shape(self) -> tuple[int, int, int]:
        return self._data.shape

    @property
    def channels(self) -> int:
        return self._data.shape[0]

    @property
    def height(self) -> int:
        return self._data.shape[1]

    @property
    def width(self) -> int:
        return self._data.shape[2]

    def __repr__(self) -> str:
        c, h, w = self.shape
        return f"Tensor(c={c}, h={h}, w={w})"


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one convolution layer.

    Weights are always laid out (out_channels, in_channels, k, k), for the
    transposed direction too. ``output_padding`` only applies to transposed
    layers and must satisfy ``output_padding < stride`` and
    ``output_padding <= padding`` (the implementation crops the scatter
    buffer by ``padding`` on the top/left and ``padding - output_padding``
    on the bottom/right).
    """

    in_channels: int
    out_channels: int
    kernel: int
    stride: int = 1
    padding: int = 0
    transposed: bool = False
    output_padding: int = 0

    def __post_init__(self) -> None:
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError(f"conv channels must be >= 1, got {self}")
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ShapeError(f"conv kernel must be odd and >= 1, got {self.kernel}")
        if self.stride < 1:
            raise ShapeError(f"conv stride must be >= 1, got {self.stride}")
        if self.padding < 0:
            raise ShapeError(f"conv padding must be >= 0, got {self.padding}")
        if not self.transposed and self.output_padding != 0:
            raise ShapeError("output_padding requires transposed=True")
        if self.transposed:
            if not 0 <= self.output_padding < self.stride:
                raise ShapeError(
                    f"output_padding must be in [0, stride), got {self.output_padding}"
                )
            if self.output_padding > self.padding:
                raise ShapeError(
                    f"output_padding {self.output_padding} exceeds padding {self.padding}"
                )

    def out_size(self, size: int) -> int:
        """Output length along one spatial axis for input length ``size``."""
        if self.transposed:
            n = (size - 1) * self.stride - 2 * self.padding + self.kernel
            return n + self.output_padding
        n = size + 2 * self.padding - self.kernel
        if n < 0:
            raise ShapeError(
                f"input size {size} too small for kernel {self.kernel} "
                f"with padding {self.padding}"
            )
        return n // self.stride + 1


def _check_kernel(spec: ConvSpec, weight: np.ndarray, bias: np.ndarray) -> None:
    expect = (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel)
    if weight.shape != expect:
        raise ShapeError(f"kernel shape {weight.shape} does not match spec {expect}")
    if bias.shape != (spec.out_channels,):
        raise ShapeError(
            f"bias shape {bias.shape} does not match out_channels {spec.out_channels}"
        )


def conv2d(x: Tensor, spec: ConvSpec, weight: np.ndarray, bias: np.ndarray) -> Tensor:
    """Apply one convolution (or transposed convolution) layer.

    Accumulation runs in float64 with the tap loop ordered
    (in_channel, ky, kx); the result is rounded to float32 exactly once.
    """
    _check_kernel(spec, weight, bias)
    if x.channels != spec.in_channels:
        raise ShapeError(
            f"input has {x.channels} channels, spec expects {spec.in_channels}"
        )
    w64 = weight.astype(np.float64)
    x64 = x.data.astype(np.float64)
    k, s, p = spec.kernel, spec.stride, spec.padding
    if spec.transposed:
        out = _conv2d_transposed(x64, w64, spec)
    else:
        h_out = spec.out_size(x.height)
        w_out = spec.out_size(x.width)
        xp = np.pad(x64, ((0, 0), (p, p), (p, p)))
        out = np.zeros((spec.out_channels, h_out, w_out), dtype=np.float64)
        for ci in range(spec.in_channels):
            for ky in range(k):
                for kx in range(k):
                    patch = xp[
                        ci,
                        ky : ky + (h_out - 1) * s + 1 : s,
                        kx : kx + (w_out - 1) * s + 1 : s,
                    ]
                    out += w64[:, ci, ky, kx][:, None, None] * patch[None, :, :]
    out += bias.astype(np.float64)[:, None, None]
    return Tensor(out.astype(np.float32))


def _conv2d_transposed(x64: np.ndarray, w64: np.ndarray, spec: ConvSpec) -> np.ndarray:
    cin, h, w = x64.shape
    k, s, p = spec.kernel, spec.stride, spec.padding
    h_out = spec.out_size(h)
    w_out = spec.out_size(w)
    # Scatter into an uncropped buffer; within one (ky, kx) tap the strided
    # targets are disjoint, so += order is fixed entirely by the loop.
    full = np.zeros(
        (spec.out_channels, (h - 1) * s + k, (w - 1) * s + k), dtype=np.float64
    )
    for ci in range(cin):
        plane = x64[ci][None, :, :]
        for ky in range(k):
            for kx in range(k):
                full[
                    :,
                    ky : ky + (h - 1) * s + 1 : s,
                    kx : kx + (w - 1) * s + 1 : s,
                ] += w64[:, ci, ky, kx][:, None, None] * plane
    return full[:, p : p + h_out, p : p + w_out]


def leaky_relu(x: Tensor, negative_slope: float = 0.01) -> Tensor:
    d = x.data
    return Tensor(np.where(d >= 0, d, np.float32(negative_slope) * d))


def channel_concat(tensors: Sequence[Tensor]) -> Tensor:
    if not tensors:
        raise ShapeError("cannot concat an empty tensor list")
    h, w = tensors[0].height, tensors[0].width
    for t in tensors[1:]:
        if (t.height, t.width) != (h, w):
            raise ShapeError(
                f"concat spatial mismatch: ({t.height}, {t.width}) vs ({h}, {w})"
            )
    return Tensor(np.concatenate([t.data for t in tensors], axis=0))


def channel_split(x: Tensor, parts: int) -> list[Tensor]:
    if parts < 1:
        raise ShapeError(f"parts must be >= 1, got {parts}")
    if x.channels % parts != 0:
        raise ShapeError(f"cannot split {x.channels} channels into {parts} parts")
    step = x.channels // parts
    return [Tensor(x.data[i * step : (i + 1) * step]) for i in range(parts)]
