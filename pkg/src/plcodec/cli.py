"""Command-line surface: plc <command>.

Commands wrap the library thinly; all real work lives in the importable
modules. Every failure class maps to a documented exit code so scripts can
branch on what went wrong without parsing stderr.
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys

from .bd import RDCurve, bd_metrics
from .codec import ProgressiveDecoder, RDPoint, decode_image, encode_image
from .container import BitstreamContainer, append_delta, extract_substream
from .errors import (
    CodingError,
    ContainerError,
    CurveError,
    ImageError,
    MaskError,
    QualityError,
    ShapeError,
    WeightsError,
)
from .imageio import mse, psnr, read_image, write_image
from .masking import canonical_quality
from .weights import ArchConfig, generate_seed_weights, load_weights, save_weights

CSV_HEADER = ["path", "q", "bpp", "mse", "psnr"]

# documented in the README; argparse itself exits 2 on usage errors
EXIT_CODES: tuple[tuple[type, int], ...] = (
    (ImageError, 3),
    (OSError, 3),
    (QualityError, 4),
    (ContainerError, 5),
    (CodingError, 6),
    (WeightsError, 7),
    (ShapeError, 8),
    (MaskError, 8),
    (CurveError, 9),
)


def exit_code_for(exc: BaseException) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1


def _parse_qualities(text: str) -> list[float]:
    try:
        raw = [float(tok) for tok in text.split(",") if tok.strip()]
    except ValueError:
        raise QualityError(f"cannot parse quality list {text!r}") from None
    if not raw:
        raise QualityError("empty quality list")
    return [canonical_quality(q) for q in raw]


def _load_container(path: str) -> BitstreamContainer:
    with open(path, "rb") as f:
        return BitstreamContainer.from_bytes(f.read())


def cmd_genweights(args) -> int:
    w = generate_seed_weights(ArchConfig(), args.seed)
    save_weights(w, args.out)
    return 0


def cmd_encode(args) -> int:
    w = load_weights(args.weights)
    img = read_image(args.image)
    c = encode_image(img, _parse_qualities(args.boundaries), w)
    with open(args.out, "wb") as f:
        f.write(c.to_bytes())
    return 0


def cmd_decode(args) -> int:
    w = load_weights(args.weights)
    c = _load_container(args.container)
    write_image(decode_image(c, args.q, w), args.out)
    return 0


def cmd_extract(args) -> int:
    c = _load_container(args.container)
    with open(args.out, "wb") as f:
        f.write(extract_substream(c, args.q).to_bytes())
    return 0


def cmd_append(args) -> int:
    sub = _load_container(args.container)
    full = _load_container(args.source)
    for field in ("orig_size", "padded_size", "arch_fingerprint", "weights_checksum"):
        if getattr(sub, field) != getattr(full, field):
            raise ContainerError(f"containers disagree on {field}")
    if (sub.z_stream, sub.base_streams) != (full.z_stream, full.base_streams):
        raise ContainerError("containers hold different base layers")
    limit = canonical_quality(args.q) if args.q is not None else None
    grown = sub
    for seg, streams in zip(full.segments, full.segment_streams):
        if seg.q_from < grown.max_quality:
            continue
        if limit is not None and seg.q_to > limit:
            break
        grown = append_delta(grown, streams, seg.q_from, seg.q_to)
    if grown is sub:
        raise ContainerError(
            f"source has no segments beyond quality {sub.max_quality}"
        )
    with open(args.out, "wb") as f:
        f.write(grown.to_bytes())
    return 0


def _sweep_rows(path: str, grid: list[float], w) -> list[list[str]]:
    img = read_image(path)
    targets = [q for q in grid if q > 0.0] or [100.0]
    c = encode_image(img, targets, w)
    dec = ProgressiveDecoder(c, w)
    rows = []
    for q in grid:
        dec.advance_to(q)
        sub_bytes = len(extract_substream(c, q).to_bytes())
        pt = RDPoint.measure(img, dec.image(), sub_bytes)
        rows.append(
            [path, f"{q:g}", f"{pt.bpp:.6f}", f"{pt.mse:.8e}", f"{pt.psnr:.4f}"]
        )
    return rows


def cmd_sweep(args) -> int:
    w = load_weights(args.weights)
    grid = sorted(set(_parse_qualities(args.q)))
    rows, first_error = [], None
    for path in args.images:
        try:
            rows.extend(_sweep_rows(path, grid, w))
        except Exception as e:
            print(f"plc: {path}: {e}", file=sys.stderr)
            first_error = first_error or e
    rows.sort(key=lambda r: (r[0], float(r[1])))
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(rows)
    if args.csv:
        with open(args.csv, "w", encoding="ascii") as f:
            f.write(out.getvalue())
    else:
        sys.stdout.write(out.getvalue())
    return exit_code_for(first_error) if first_error else 0


def _read_curve(path: str) -> RDCurve:
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != CSV_HEADER:
            raise CurveError(f"{path}: expected header {','.join(CSV_HEADER)}")
        rows = list(reader)
    paths = {r[0] for r in rows}
    if len(paths) != 1:
        raise CurveError(
            f"{path}: BD needs a single image's curve, found {len(paths)} paths"
        )
    points = [RDPoint(float(r[2]), float(r[3]), float(r[4])) for r in rows]
    return RDCurve(tuple(points))


def cmd_bd(args) -> int:
    rate, quality = bd_metrics(_read_curve(args.reference), _read_curve(args.test))
    print("bd_rate,bd_psnr")
    print(f"{rate:.4f},{quality:.4f}")
    return 0


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("genweights", help="write deterministic seeded weights")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_genweights)

    e = sub.add_parser("encode", help="encode an image at given quality boundaries")
    e.add_argument("image")
    e.add_argument("--weights", required=True)
    e.add_argument("--boundaries", required=True, help="comma list, e.g. 0.5,7.5,20,100")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_encode)

    d = sub.add_parser("decode", help="reconstruct at a stored boundary (0 = base)")
    d.add_argument("container")
    d.add_argument("--weights", required=True)
    d.add_argument("--q", type=float, required=True)
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decode)

    x = sub.add_parser("extract", help="truncate a container at a boundary")
    x.add_argument("container")
    x.add_argument("--q", type=float, required=True)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_extract)

    a = sub.add_parser("append", help="extend a container with segments from a fuller one")
    a.add_argument("container")
    a.add_argument("source", help="container of the same encode holding later segments")
    a.add_argument("--q", type=float, default=None, help="stop after this boundary")
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_append)

    s = sub.add_parser("sweep", help="rate/distortion table over a quality grid")
    s.add_argument("images", nargs="+")
    s.add_argument("--weights", required=True)
    s.add_argument("--q", required=True, help="comma list of qualities, 0 allowed")
    s.add_argument("--csv", default=None, help="output path (default: stdout)")
    s.set_defaults(func=cmd_sweep)

    b = sub.add_parser("bd", help="BD-Rate/BD-PSNR between two sweep CSVs")
    b.add_argument("reference")
    b.add_argument("test")
    b.set_defaults(func=cmd_bd)

    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as e:
        print(f"plc: {e}", file=sys.stderr)
        return exit_code_for(e)


if __name__ == "__main__":
    raise SystemExit(main())
