"""Command line driver: run the training phases from a config file.

    plc-train CONFIG --corpus DIR --out WEIGHTS.plcw

Exit codes: 0 success, 1 training or I/O failure, 2 bad usage or config.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .data import CorpusError, CropSampler, load_corpus
from .export import export_weights
from .train import (
    TrainingError,
    train_phase1,
    train_phase2_refine_decoder,
    train_phase3_rems,
)


def _progress(phase: int, steps: int):
    every = max(1, steps // 10)

    def report(step: int, loss: float) -> None:
        if step % every == 0 or step == steps - 1:
            print(f"phase {phase} step {step + 1}/{steps} loss {loss:.4f}")

    return report


def _summary(phase: int, losses: list[float]) -> None:
    if losses:
        print(f"phase {phase}: {len(losses)} steps, loss {losses[0]:.4f} -> {losses[-1]:.4f}")
    else:
        print(f"phase {phase}: skipped")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="plc-train", description="Train codec weights and export a .plcw file."
    )
    parser.add_argument("config", help="TOML or JSON training configuration")
    parser.add_argument("--corpus", required=True, help="directory of training images")
    parser.add_argument("--out", required=True, help="output .plcw path")
    parser.add_argument("--quiet", action="store_true", help="suppress per-step progress")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as e:
        print(f"plc-train: {e}", file=sys.stderr)
        return 2
    try:
        images = load_corpus(args.corpus, cfg.crop_size)
        sampler = CropSampler(images, cfg.crop_size, cfg.seed)
        report = (lambda phase, steps: None) if args.quiet else _progress
        model, losses = train_phase1(sampler, cfg, report(1, cfg.phase1_steps))
        _summary(1, losses)
        losses = train_phase2_refine_decoder(model, sampler, cfg, report(2, cfg.phase2_steps))
        _summary(2, losses)
        losses = train_phase3_rems(model, sampler, cfg, report(3, cfg.phase3_steps))
        _summary(3, losses)
        export_weights(model, args.out)
    except (CorpusError, TrainingError, OSError) as e:
        print(f"plc-train: {e}", file=sys.stderr)
        return 1
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
