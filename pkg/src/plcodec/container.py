"""Progressive bitstream container: one base layer plus ordered deltas.

Layout (all little-endian):

    magic "PLC1", version u16
    original dims u32 x2, padded dims u32 x2
    arch fingerprint (8 bytes), weights checksum u64
    slice count u8, base-only flag u8
    hyper stream length u32, per-slice base lengths u32 x s
    segment count u16
    per segment: q_from f32, q_to f32, payload offset u64, lengths u32 x s
    payload: hyper stream | base slice streams | segment slice streams

Quality intervals are contiguous from 0 and strictly increasing, and every
payload byte is accounted for by the table, so dropping trailing segments
(and rewriting the header) is the only operation truncation needs. The
payload of any extraction is a byte prefix of the original payload.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

from .errors import ContainerError
from .masking import canonical_quality

MAGIC = b"PLC1"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class Segment:
    """Table entry for one quality interval's worth of slice streams."""

    q_from: float
    q_to: float
    offset: int
    slice_lengths: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "q_from", canonical_quality(self.q_from))
        object.__setattr__(self, "q_to", canonical_quality(self.q_to))
        if not self.q_to > self.q_from:
            raise ContainerError(
                f"segment interval must ascend, got ({self.q_from}, {self.q_to}]"
            )
        if self.offset < 0 or any(n < 0 for n in self.slice_lengths):
            raise ContainerError("negative offset or stream length")

    @property
    def total_bytes(self) -> int:
        return sum(self.slice_lengths)


@dataclass(frozen=True)
class BitstreamContainer:
    orig_size: tuple[int, int]
    padded_size: tuple[int, int]
    arch_fingerprint: bytes
    weights_checksum: int
    z_stream: bytes
    base_streams: tuple[bytes, ...]
    segments: tuple[Segment, ...]
    segment_streams: tuple[tuple[bytes, ...], ...]
    version: int = FORMAT_VERSION

    def __post_init__(self):
        oh, ow = self.orig_size
        ph, pw = self.padded_size
        if min(oh, ow) < 1 or ph < oh or pw < ow:
            raise ContainerError(
                f"bad dimensions: original {self.orig_size}, padded {self.padded_size}"
            )
        if len(self.arch_fingerprint) != 8:
            raise ContainerError("arch fingerprint must be 8 bytes")
        if not self.base_streams:
            raise ContainerError("container needs at least one base slice stream")
        if len(self.segment_streams) != len(self.segments):
            raise ContainerError("segment table and stream payload disagree")
        expected = len(self.z_stream) + sum(len(b) for b in self.base_streams)
        prev_to = 0.0
        for seg, streams in zip(self.segments, self.segment_streams):
            if seg.q_from != prev_to:
                raise ContainerError(
                    f"segment intervals must chain: expected q_from {prev_to}, "
                    f"got {seg.q_from}"
                )
            if len(streams) != len(self.base_streams):
                raise ContainerError("segment must carry one stream per slice")
            if tuple(len(b) for b in streams) != seg.slice_lengths:
                raise ContainerError("segment lengths disagree with its streams")
            if seg.offset != expected:
                raise ContainerError(
                    f"segment offset {seg.offset} breaks payload accounting "
                    f"(expected {expected})"
                )
            expected += seg.total_bytes
            prev_to = seg.q_to

    @property
    def slices(self) -> int:
        return len(self.base_streams)

    @property
    def boundaries(self) -> tuple[float, ...]:
        return tuple(seg.q_to for seg in self.segments)

    @property
    def max_quality(self) -> float:
        return self.segments[-1].q_to if self.segments else 0.0

    @classmethod
    def assemble(
        cls,
        orig_size,
        padded_size,
        arch_fingerprint: bytes,
        weights_checksum: int,
        z_stream: bytes,
        base_streams,
        segment_specs,
    ) -> "BitstreamContainer":
        """Build a container from (q_from, q_to, streams) specs, computing offsets."""
        base_streams = tuple(base_streams)
        offset = len(z_stream) + sum(len(b) for b in base_streams)
        segments, payloads = [], []
        for q_from, q_to, streams in segment_specs:
            streams = tuple(streams)
            seg = Segment(q_from, q_to, offset, tuple(len(b) for b in streams))
            segments.append(seg)
            payloads.append(streams)
            offset += seg.total_bytes
        return cls(
            tuple(orig_size),
            tuple(padded_size),
            arch_fingerprint,
            weights_checksum,
            z_stream,
            base_streams,
            tuple(segments),
            tuple(payloads),
        )

    def to_bytes(self) -> bytes:
        s = self.slices
        parts = [
            struct.pack(
                "<4sHIIII8sQBBI",
                MAGIC,
                self.version,
                *self.orig_size,
                *self.padded_size,
                self.arch_fingerprint,
                self.weights_checksum,
                s,
                0 if self.segments else 1,
                len(self.z_stream),
            ),
            struct.pack(f"<{s}I", *(len(b) for b in self.base_streams)),
            struct.pack("<H", len(self.segments)),
        ]
        for seg in self.segments:
            parts.append(struct.pack("<ffQ", seg.q_from, seg.q_to, seg.offset))
            parts.append(struct.pack(f"<{s}I", *seg.slice_lengths))
        parts.append(self.z_stream)
        parts.extend(self.base_streams)
        for streams in self.segment_streams:
            parts.extend(streams)
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, data: bytes) -> "BitstreamContainer":
        head = struct.calcsize("<4sHIIII8sQBBI")
        if len(data) < head:
            raise ContainerError("container shorter than its fixed header")
        (magic, version, oh, ow, ph, pw, fp, ck, s, base_only, z_len) = struct.unpack_from(
            "<4sHIIII8sQBBI", data
        )
        if magic != MAGIC:
            raise ContainerError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise ContainerError(f"unsupported container version {version}")
        if s < 1:
            raise ContainerError("slice count must be positive")
        pos = head
        base_lens = _unpack(data, pos, f"<{s}I")
        pos += struct.calcsize(f"<{s}I")
        (n_seg,) = _unpack(data, pos, "<H")
        pos += 2
        table = []
        for _ in range(n_seg):
            q_from, q_to, offset = _unpack(data, pos, "<ffQ")
            pos += struct.calcsize("<ffQ")
            lens = _unpack(data, pos, f"<{s}I")
            pos += struct.calcsize(f"<{s}I")
            table.append((q_from, q_to, offset, lens))
        payload = data[pos:]

        def take(n):
            nonlocal cursor
            if cursor + n > len(payload):
                raise ContainerError("payload shorter than the segment table claims")
            out = payload[cursor : cursor + n]
            cursor = cursor + n
            return out

        cursor = 0
        z_stream = take(z_len)
        base_streams = tuple(take(n) for n in base_lens)
        segments, seg_streams = [], []
        for q_from, q_to, offset, lens in table:
            segments.append(Segment(q_from, q_to, offset, lens))
            seg_streams.append(tuple(take(n) for n in lens))
        if cursor != len(payload):
            raise ContainerError(f"{len(payload) - cursor} unaccounted payload bytes")
        if base_only != (0 if segments else 1):
            raise ContainerError("base-only flag disagrees with the segment table")
        return cls(
            (oh, ow), (ph, pw), fp, ck, z_stream, base_streams,
            tuple(segments), tuple(seg_streams), version,
        )


def _unpack(data: bytes, pos: int, fmt: str):
    if pos + struct.calcsize(fmt) > len(data):
        raise ContainerError("container truncated inside its header")
    return struct.unpack_from(fmt, data, pos)


def extract_substream(c: BitstreamContainer, q: float) -> BitstreamContainer:
    """Container truncated to quality q; its payload is a prefix of c's."""
    q = canonical_quality(q)
    if q == 0.0:
        return replace(c, segments=(), segment_streams=())
    for k, seg in enumerate(c.segments):
        if seg.q_to == q:
            return replace(
                c,
                segments=c.segments[: k + 1],
                segment_streams=c.segment_streams[: k + 1],
            )
    raise ContainerError(
        f"quality {q} is not a segment boundary; available: {(0.0,) + c.boundaries}"
    )


def append_delta(
    c: BitstreamContainer, delta_streams, q_from: float, q_to: float
) -> BitstreamContainer:
    """Extend the container by one segment; exact inverse of extraction."""
    q_from = canonical_quality(q_from)
    q_to = canonical_quality(q_to)
    if q_from != c.max_quality:
        raise ContainerError(
            f"delta starts at {q_from} but the container ends at {c.max_quality}"
        )
    streams = tuple(delta_streams)
    if len(streams) != c.slices:
        raise ContainerError(f"delta needs {c.slices} slice streams, got {len(streams)}")
    offset = (
        len(c.z_stream)
        + sum(len(b) for b in c.base_streams)
        + sum(seg.total_bytes for seg in c.segments)
    )
    seg = Segment(q_from, q_to, offset, tuple(len(b) for b in streams))
    return replace(
        c,
        segments=c.segments + (seg,),
        segment_streams=c.segment_streams + (streams,),
    )


def pack_delta(streams) -> bytes:
    """Standalone serialization of one segment's slice streams."""
    streams = tuple(streams)
    parts = [struct.pack("<H", len(streams))]
    parts.append(struct.pack(f"<{len(streams)}I", *(len(b) for b in streams)))
    parts.extend(streams)
    return b"".join(parts)


def unpack_delta(data: bytes, expected_slices: int) -> tuple[bytes, ...]:
    if len(data) < 2:
        raise ContainerError("delta blob shorter than its header")
    (n,) = struct.unpack_from("<H", data)
    if n != expected_slices:
        raise ContainerError(f"delta has {n} slice streams, expected {expected_slices}")
    pos = 2
    lens = _unpack(data, pos, f"<{n}I")
    pos += struct.calcsize(f"<{n}I")
    out = []
    for ln in lens:
        if pos + ln > len(data):
            raise ContainerError("delta blob truncated")
        out.append(data[pos : pos + ln])
        pos += ln
    if pos != len(data):
        raise ContainerError(f"{len(data) - pos} unaccounted delta bytes")
    return tuple(out)
