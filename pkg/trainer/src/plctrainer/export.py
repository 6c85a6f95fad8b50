"""Weight-file writer: the blob names, order, and layout the codec reads.

File layout (little-endian): magic "PLCW", version u16, an architecture
block (latent/hyper/slice/downsample counts and the checkpoint count as
u16, then the checkpoints as float32), blob count u32, then per blob a
length-prefixed name, a u8 rank, u32 dims, and raw float32 data; the file
ends with a u64 holding the first 8 bytes of the SHA-256 of everything
before it.

Convolution kernels are stored as (out, in, k, k) for both directions, so
transposed layers are rearranged from the framework's (in, out, k, k) on
the way out. The hyper-prior scale is stored already mapped to its strictly
positive form; the codec consumes it directly.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

from .config import TrainConfig
from .model import CodecModel, layer_table, positive_map

MAGIC = b"PLCW"
FORMAT_VERSION = 1
IMAGE_DOWNSAMPLE = 16  # fixed by the four stride-2 stages


def weight_blobs(model: CodecModel) -> dict[str, np.ndarray]:
    """Canonical blob name -> float32 array, ready for serialization."""
    blobs: dict[str, np.ndarray] = {}
    for name, spec in layer_table(model.cfg).items():
        mod = model.conv_layer(name)
        w = mod.weight.detach().cpu().numpy()
        if spec.kind == "up":
            w = np.ascontiguousarray(w.transpose(1, 0, 2, 3))
        blobs[f"{name}.w"] = w.astype(np.float32)
        blobs[f"{name}.b"] = mod.bias.detach().cpu().numpy().astype(np.float32)
    blobs["zprior.mu"] = model.zprior_mu.detach().cpu().numpy().astype(np.float32)
    blobs["zprior.sigma"] = (
        positive_map(model.zprior_sigma_raw).detach().cpu().numpy().astype(np.float32)
    )
    return blobs


def _blob_order(cfg: TrainConfig) -> list[str]:
    names: list[str] = []
    for layer in layer_table(cfg):
        names.append(f"{layer}.w")
        names.append(f"{layer}.b")
    names.append("zprior.mu")
    names.append("zprior.sigma")
    return names


def serialize_weights(cfg: TrainConfig, blobs: dict[str, np.ndarray]) -> bytes:
    parts = [
        MAGIC,
        struct.pack("<H", FORMAT_VERSION),
        struct.pack(
            "<HHHHH",
            cfg.latent_channels,
            cfg.hyper_channels,
            cfg.slices,
            IMAGE_DOWNSAMPLE,
            len(cfg.checkpoints),
        ),
        struct.pack(f"<{len(cfg.checkpoints)}f", *cfg.checkpoints),
    ]
    order = _blob_order(cfg)
    parts.append(struct.pack("<I", len(order)))
    for name in order:
        arr = np.asarray(blobs[name], dtype=np.float32)
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    body = b"".join(parts)
    checksum = struct.unpack("<Q", hashlib.sha256(body).digest()[:8])[0]
    return body + struct.pack("<Q", checksum)


def export_weights(model: CodecModel, path: str) -> None:
    """Write the model's current parameters as a .plcw file."""
    data = serialize_weights(model.cfg, weight_blobs(model))
    with open(path, "wb") as f:
        f.write(data)
