"""Model architecture description, weight generation, and the .plcw format.

A weights file fixes everything the codec needs to run: the architecture
hyperparameters and one float32 blob per layer parameter. Blob names are the
single source of truth shared with the trainer:

    ga_{b,t}.{0..3}.{w,b}     analysis stacks (base/top)
    gs_{b,t}.{0..3}.{w,b}     synthesis stacks
    ha.{0,1}.{w,b}            hyper-analysis
    hs.{0,1}.{w,b}            hyper-synthesis
    psi_{b,t}.{i}.{0,1}.{w,b} per-slice entropy parameter nets
    lrp_{b,t}.{i}.{0,1}.{w,b} per-slice dequantization correction nets
    rem.{i}.{j}.{0,1}.{w,b}   per-slice, per-checkpoint refinement nets
    zprior.mu / zprior.sigma  per-channel hyper-latent prior

File layout (little-endian): magic "PLCW", version u16, arch block, blob
count u32, then per blob a length-prefixed name, dims, and raw float32 data;
the file ends with a u64 checksum (first 8 bytes of the SHA-256 of
everything before it).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import QualityError, ShapeError, WeightsError
from .masking import canonical_quality
from .tensor import ConvSpec

FORMAT_VERSION = 1
MAGIC = b"PLCW"

ENCODER_WIDTH = 32  # hidden channels of the four-stage analysis/synthesis stacks
PARAM_WIDTH = 16  # hidden channels of the psi/lrp/rem two-layer nets
SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class ArchConfig:
    """Architecture hyperparameters baked into weights and containers."""

    latent_channels: int = 32
    hyper_channels: int = 8
    slices: int = 4
    image_downsample: int = 16
    checkpoint_qualities: tuple[float, ...] = (0.5, 7.5, 20.0)

    def __post_init__(self) -> None:
        if self.latent_channels < 1 or self.hyper_channels < 1 or self.slices < 1:
            raise ShapeError(f"channel/slice counts must be >= 1: {self}")
        if self.latent_channels % self.slices != 0:
            raise ShapeError(
                f"latent channels {self.latent_channels} not divisible "
                f"by {self.slices} slices"
            )
        if self.image_downsample != 16:
            raise ShapeError("the four stride-2 stages fix image_downsample at 16")
        cks = tuple(canonical_quality(q) for q in self.checkpoint_qualities)
        for q in cks:
            if not 0.0 < q < 100.0:
                raise QualityError(f"checkpoint quality {q} outside (0, 100)")
        for a, b in zip(cks, cks[1:]):
            if not a < b:
                raise QualityError("checkpoint qualities must be strictly increasing")
        object.__setattr__(self, "checkpoint_qualities", cks)

    @property
    def slice_channels(self) -> int:
        return self.latent_channels // self.slices

    @property
    def pad_multiple(self) -> int:
        # The hyper stack halves the latent twice, so image dims must be
        # divisible by image_downsample * 4 for every stage to be exact.
        return self.image_downsample * 4


def conv_layers(arch: ArchConfig) -> dict[str, ConvSpec]:
    """Layer name -> geometry, in canonical (serialization) order."""
    C = arch.latent_channels
    Z = arch.hyper_channels
    cs = arch.slice_channels
    W = ENCODER_WIDTH
    P = PARAM_WIDTH
    down = dict(kernel=3, stride=2, padding=1)
    up = dict(kernel=3, stride=2, padding=1, transposed=True, output_padding=1)
    same = dict(kernel=3, stride=1, padding=1)

    d: dict[str, ConvSpec] = {}
    for which in ("b", "t"):
        enc = [3, W, W, W, C]
        dec = [C, W, W, W, 3]
        for layer in range(4):
            d[f"ga_{which}.{layer}"] = ConvSpec(enc[layer], enc[layer + 1], **down)
        for layer in range(4):
            d[f"gs_{which}.{layer}"] = ConvSpec(dec[layer], dec[layer + 1], **up)
    d["ha.0"] = ConvSpec(2 * C, W, **down)
    d["ha.1"] = ConvSpec(W, Z, **down)
    d["hs.0"] = ConvSpec(Z, W, **up)
    d["hs.1"] = ConvSpec(W, 4 * C, **up)
    for i in range(arch.slices):
        d[f"psi_b.{i}.0"] = ConvSpec(2 * C + i * cs, P, **same)
        d[f"psi_b.{i}.1"] = ConvSpec(P, 2 * cs, **same)
        d[f"psi_t.{i}.0"] = ConvSpec(cs + 2 * C + 2 * i * cs, P, **same)
        d[f"psi_t.{i}.1"] = ConvSpec(P, 2 * cs, **same)
        d[f"lrp_b.{i}.0"] = ConvSpec(C + cs, P, **same)
        d[f"lrp_b.{i}.1"] = ConvSpec(P, cs, **same)
        d[f"lrp_t.{i}.0"] = ConvSpec(C + cs, P, **same)
        d[f"lrp_t.{i}.1"] = ConvSpec(P, cs, **same)
        for j in range(len(arch.checkpoint_qualities)):
            d[f"rem.{i}.{j}.0"] = ConvSpec(5 * cs, P, **same)
            d[f"rem.{i}.{j}.1"] = ConvSpec(P, 2 * cs, **same)
    return d


def blob_specs(arch: ArchConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Every blob name with its required shape, in canonical order."""
    out: list[tuple[str, tuple[int, ...]]] = []
    for name, spec in conv_layers(arch).items():
        out.append(
            (f"{name}.w", (spec.out_channels, spec.in_channels, spec.kernel, spec.kernel))
        )
        out.append((f"{name}.b", (spec.out_channels,)))
    out.append(("zprior.mu", (arch.hyper_channels,)))
    out.append(("zprior.sigma", (arch.hyper_channels,)))
    return out


@dataclass
class ModelWeights:
    arch: ArchConfig
    blobs: dict[str, np.ndarray]
    version: int = FORMAT_VERSION

    def __post_init__(self) -> None:
        expected = blob_specs(self.arch)
        names = {name for name, _ in expected}
        missing = names - self.blobs.keys()
        extra = self.blobs.keys() - names
        if missing or extra:
            raise WeightsError(
                f"blob set mismatch: missing {sorted(missing)}, extra {sorted(extra)}"
            )
        owned: dict[str, np.ndarray] = {}
        for name, shape in expected:
            arr = np.array(self.blobs[name], dtype=np.float32, copy=True)
            if arr.shape != shape:
                raise WeightsError(f"blob {name} has shape {arr.shape}, expected {shape}")
            if not np.isfinite(arr).all():
                raise WeightsError(f"blob {name} contains non-finite values")
            arr.setflags(write=False)
            owned[name] = arr
        if not (owned["zprior.sigma"] > 0).all():
            raise WeightsError("zprior.sigma must be strictly positive")
        self.blobs = owned


def _arch_block(arch: ArchConfig) -> bytes:
    head = struct.pack(
        "<HHHHH",
        arch.latent_channels,
        arch.hyper_channels,
        arch.slices,
        arch.image_downsample,
        len(arch.checkpoint_qualities),
    )
    return head + struct.pack(
        f"<{len(arch.checkpoint_qualities)}f", *arch.checkpoint_qualities
    )


def _parse_arch_block(buf: bytes, off: int) -> tuple[ArchConfig, int]:
    if len(buf) < off + 10:
        raise WeightsError("weights file truncated in arch block")
    c, z, s, ds, n = struct.unpack_from("<HHHHH", buf, off)
    off += 10
    if len(buf) < off + 4 * n:
        raise WeightsError("weights file truncated in checkpoint list")
    cks = struct.unpack_from(f"<{n}f", buf, off)
    off += 4 * n
    try:
        arch = ArchConfig(c, z, s, ds, tuple(cks))
    except (ShapeError, QualityError) as e:
        raise WeightsError(f"invalid architecture in weights file: {e}") from e
    return arch, off


def arch_fingerprint(arch: ArchConfig) -> bytes:
    """8-byte digest of the architecture block, stored in containers."""
    return hashlib.sha256(_arch_block(arch)).digest()[:8]


def _serialize_body(w: ModelWeights) -> bytes:
    parts = [MAGIC, struct.pack("<H", w.version), _arch_block(w.arch)]
    order = blob_specs(w.arch)
    parts.append(struct.pack("<I", len(order)))
    for name, _ in order:
        arr = w.blobs[name]
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.astype("<f4").tobytes())
    return b"".join(parts)


def _checksum(body: bytes) -> int:
    return struct.unpack("<Q", hashlib.sha256(body).digest()[:8])[0]


def weights_checksum(w: ModelWeights) -> int:
    """The u64 the file format stores; containers embed it too."""
    return _checksum(_serialize_body(w))


def save_weights(w: ModelWeights, path: str) -> None:
    body = _serialize_body(w)
    with open(path, "wb") as f:
        f.write(body)
        f.write(struct.pack("<Q", _checksum(body)))


def load_weights(path: str) -> ModelWeights:
    with open(path, "rb") as f:
        buf = f.read()
    if len(buf) < len(MAGIC) + 2 + 8 or buf[: len(MAGIC)] != MAGIC:
        raise WeightsError(f"{path}: not a weights file (bad magic)")
    version = struct.unpack_from("<H", buf, len(MAGIC))[0]
    if version != FORMAT_VERSION:
        raise WeightsError(
            f"{path}: unsupported weights version {version} (expected {FORMAT_VERSION})"
        )
    body, tail = buf[:-8], buf[-8:]
    if struct.unpack("<Q", tail)[0] != _checksum(body):
        raise WeightsError(f"{path}: checksum mismatch (file corrupt or truncated)")
    arch, off = _parse_arch_block(body, len(MAGIC) + 2)
    (count,) = struct.unpack_from("<I", body, off)
    off += 4
    blobs: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", body, off)
        off += 2
        name = body[off : off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", body, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", body, off)
        off += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(body, dtype="<f4", count=size, offset=off).reshape(shape)
        off += 4 * size
        blobs[name] = arr
    if off != len(body):
        raise WeightsError(f"{path}: trailing bytes after blob table")
    return ModelWeights(arch=arch, blobs=blobs, version=version)


# Weight-scale multipliers per layer family, tuned once so that seeded
# (untrained) weights produce usable statistics: sigma maps spreading over
# about a decade, residual symbols spanning a few integers, synthesis not
# stuck against the [0,1] clamp. Frozen; golden tests pin the outputs.
_FAMILY_GAINS = {
    "ga": 2.2,
    "gs": 1.4,
    "ha": 2.0,
    "hs": 2.0,
    "psi": 2.0,
    "lrp": 2.0,
    "rem": 1.5,
}


def generate_seed_weights(arch: ArchConfig, seed: int) -> ModelWeights:
    """Deterministic pseudo-random weights so the codec runs untrained.

    Identical (arch, seed) always yields identical bytes; draws happen in
    canonical blob order from one counter-based generator.
    """
    rng = np.random.default_rng(seed)
    blobs: dict[str, np.ndarray] = {}
    for name, shape in blob_specs(arch):
        if name == "zprior.mu":
            blobs[name] = rng.normal(0.0, 0.5, size=shape).astype(np.float32)
        elif name == "zprior.sigma":
            blobs[name] = rng.uniform(1.0, 6.0, size=shape).astype(np.float32)
        elif name.endswith(".w"):
            fan_in = shape[1] * shape[2] * shape[3]
            gain = _FAMILY_GAINS[name.split("_")[0].split(".")[0]]
            std = gain / np.sqrt(fan_in)
            blobs[name] = rng.normal(0.0, std, size=shape).astype(np.float32)
        else:
            blobs[name] = rng.uniform(-0.1, 0.1, size=shape).astype(np.float32)
    return ModelWeights(arch=arch, blobs=blobs)
