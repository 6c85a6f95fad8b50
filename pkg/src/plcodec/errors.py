"""Exception hierarchy for the codec.

Every error raised on a public code path derives from PlcError so callers
(and the CLI) can map failure classes to exit codes without string matching.
"""


class PlcError(Exception):
    """Base class for all codec errors."""


class ShapeError(PlcError):
    """A tensor or kernel dimension does not match what an op requires."""


class QualityError(PlcError):
    """Quality value out of range, or not decodable from a given container."""


class MaskError(PlcError):
    """Invalid mask contents or empty input where a percentile is needed."""


class CodingError(PlcError):
    """Entropy-coder failure: corrupt/truncated stream or invalid table setup."""


class WeightsError(PlcError):
    """Weight-file failure: bad magic/version, checksum mismatch, missing blob."""


class ContainerError(PlcError):
    """Bitstream-container failure: bad framing, checksum, or segment algebra."""


class ImageError(PlcError):
    """Image I/O failure: malformed file or unsupported format."""


class CurveError(PlcError):
    """Rate-distortion curve unsuitable for BD metrics."""
