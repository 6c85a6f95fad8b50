"""Image file plumbing: P6 PPM always, PNG when Pillow is around.

Pixels live in [0, 1] as float32 tensors of shape (3, H, W); files are
8-bit RGB. Padding is edge replication on the bottom and right so the
padded content is plausible image statistics rather than black bars.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ImageError, ShapeError
from .masking import round_half_away
from .tensor import Tensor


def _tokens(data: bytes):
    """PPM header tokens: whitespace-separated, # comments to end of line."""
    i = 0
    while i < len(data):
        c = data[i : i + 1]
        if c.isspace():
            i += 1
        elif c == b"#":
            j = data.find(b"\n", i)
            i = len(data) if j < 0 else j + 1
        else:
            j = i
            while j < len(data) and not data[j : j + 1].isspace():
                j += 1
            yield i, data[i:j]
            i = j


def _read_ppm(data: bytes) -> Tensor:
    fields = []
    end = 0
    for pos, tok in _tokens(data):
        fields.append(tok)
        end = pos + len(tok)
        if len(fields) == 4:
            break
    if len(fields) < 4 or fields[0] != b"P6":
        raise ImageError("not a P6 PPM file")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError:
        raise ImageError("malformed PPM header") from None
    if width < 1 or height < 1:
        raise ImageError(f"bad PPM dimensions {width}x{height}")
    if maxval != 255:
        raise ImageError(f"only maxval 255 supported, got {maxval}")
    raster = end + 1  # exactly one whitespace byte after the header
    need = 3 * width * height
    if len(data) < raster + need:
        raise ImageError("truncated PPM raster")
    if data[raster + need :].strip(b" \t\r\n"):
        raise ImageError("trailing bytes after PPM raster")
    flat = np.frombuffer(data, dtype=np.uint8, count=need, offset=raster)
    pixels = flat.reshape(height, width, 3).transpose(2, 0, 1)
    return Tensor(pixels.astype(np.float32) / np.float32(255.0))


def _to_bytes_rgb(t: Tensor) -> np.ndarray:
    if t.channels != 3:
        raise ShapeError(f"image tensor needs 3 channels, got {t.channels}")
    scaled = round_half_away(t.data.astype(np.float64) * 255.0)
    return np.clip(scaled, 0, 255).astype(np.uint8).transpose(1, 2, 0)


def read_image(path: str) -> Tensor:
    """Load an 8-bit RGB image as a (3, H, W) tensor in [0, 1]."""
    if str(path).lower().endswith(".png"):
        return _read_png(path)
    with open(path, "rb") as f:
        return _read_ppm(f.read())


def write_image(t: Tensor, path: str) -> None:
    """Write a [0, 1] tensor as 8-bit RGB; format chosen by extension."""
    if str(path).lower().endswith(".png"):
        _write_png(t, path)
        return
    pixels = _to_bytes_rgb(t)
    header = f"P6\n{t.width} {t.height}\n255\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(pixels.tobytes())


def _read_png(path: str) -> Tensor:
    try:
        from PIL import Image
    except ImportError:
        raise ImageError(
            "PNG support requires Pillow; install the png extra or use PPM"
        ) from None
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"))
    return Tensor(arr.transpose(2, 0, 1).astype(np.float32) / np.float32(255.0))


def _write_png(t: Tensor, path: str) -> None:
    try:
        from PIL import Image
    except ImportError:
        raise ImageError(
            "PNG support requires Pillow; install the png extra or use PPM"
        ) from None
    Image.fromarray(_to_bytes_rgb(t)).save(path, format="PNG")


def pad_to_multiple(t: Tensor, multiple: int) -> Tensor:
    """Edge-replicate on the bottom and right up to the next multiple."""
    if multiple < 1:
        raise ValueError(f"multiple must be >= 1, got {multiple}")
    pad_h = -t.height % multiple
    pad_w = -t.width % multiple
    if pad_h == 0 and pad_w == 0:
        return t
    return Tensor(np.pad(t.data, ((0, 0), (0, pad_h), (0, pad_w)), mode="edge"))


def crop_to(t: Tensor, height: int, width: int) -> Tensor:
    if height > t.height or width > t.width:
        raise ShapeError(
            f"cannot crop ({t.height}, {t.width}) to larger ({height}, {width})"
        )
    return Tensor(t.data[:, :height, :width])


def mse(a: Tensor, b: Tensor) -> float:
    """Mean squared error in float64 over all channels and pixels."""
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = a.data.astype(np.float64) - b.data.astype(np.float64)
    return float((diff * diff).mean())


def psnr(mse_value: float) -> float:
    """PSNR in dB for signals in [0, 1]; infinite when the error is zero."""
    if mse_value < 0:
        raise ValueError(f"mse must be nonnegative, got {mse_value}")
    if mse_value == 0:
        return math.inf
    return -10.0 * math.log10(mse_value)
