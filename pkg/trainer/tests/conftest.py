"""Shared fixtures: a synthetic corpus on disk and fast training configs.

Images are smooth random wave fields quantized to 8 bits, written as PPM so
every test exercises the same loader path the CLI uses.  Session scope keeps
the expensive pieces (corpus generation, the one full-length training run)
to a single execution.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import pytest
import torch

from plctrainer import (
    CodecModel,
    CropSampler,
    TrainConfig,
    load_corpus,
    serialize_weights,
    train_phase1,
    train_phase2_refine_decoder,
    train_phase3_rems,
    weight_blobs,
)


def wave_images(n: int, size: int, seed: int) -> list[np.ndarray]:
    """Sums of low-frequency sinusoids plus light noise, 8-bit quantized."""
    rng = np.random.default_rng(seed)
    out = []
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) / size
    for _ in range(n):
        img = np.zeros((3, size, size))
        for c in range(3):
            plane = np.zeros((size, size))
            for _ in range(3):
                fx, fy = rng.uniform(0.5, 3.0, 2)
                phase = rng.uniform(0, 2 * np.pi)
                plane += rng.uniform(0.1, 0.5) * np.sin(2 * np.pi * (fx * xx + fy * yy) + phase)
            img[c] = plane
        img += 0.02 * rng.standard_normal(img.shape)
        lo, hi = img.min(), img.max()
        img = (img - lo) / (hi - lo)
        out.append(np.round(img * 255.0).astype(np.float32) / 255.0)
    return out


def write_ppm(path, img: np.ndarray) -> None:
    pixels = np.round(img * 255.0).astype(np.uint8).transpose(1, 2, 0)
    h, w = pixels.shape[:2]
    with open(path, "wb") as f:
        f.write(b"P6\n%d %d\n255\n" % (w, h))
        f.write(pixels.tobytes())


@pytest.fixture(scope="session")
def synth():
    """The synthetic-image helpers, for tests that build their own corpora."""
    return SimpleNamespace(images=wave_images, write_ppm=write_ppm)


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """64 images of 80x80, the toy corpus every training test draws from."""
    root = tmp_path_factory.mktemp("corpus")
    for k, img in enumerate(wave_images(64, 80, seed=7)):
        write_ppm(root / f"img{k:03d}.ppm", img)
    return root


@pytest.fixture(scope="session")
def corpus(corpus_dir):
    return load_corpus(corpus_dir, min_size=64)


@pytest.fixture(scope="session")
def held_out():
    """Six 64x64 images never seen in training."""
    return wave_images(6, 64, seed=99)


@pytest.fixture()
def tiny_cfg():
    """Short phases for contract tests where loss quality is irrelevant."""
    return TrainConfig(phase1_steps=10, phase2_steps=6, phase3_steps=6, batch_size=4)


@pytest.fixture()
def tiny_sampler(corpus, tiny_cfg):
    return CropSampler(corpus, tiny_cfg.crop_size, tiny_cfg.seed)


def _snapshot(model):
    return {k: v.tobytes() for k, v in weight_blobs(model).items()}


@pytest.fixture(scope="session")
def pipeline(corpus, held_out):
    """One full default-length training run, with the phase boundaries kept.

    Training tests and acceptance tests all read from this single run:
    per-phase losses, byte snapshots of every blob at each boundary, the
    held-out metrics each later phase is supposed to move, and the final
    exported bytes.
    """
    cfg = TrainConfig()
    sampler = CropSampler(corpus, cfg.crop_size, cfg.seed)
    xh = torch.from_numpy(np.stack(held_out))

    snap_init = _snapshot(CodecModel(cfg))
    model, p1_losses = train_phase1(sampler, cfg)
    snap_p1 = _snapshot(model)

    def heldout_masked_mse(q):
        with torch.no_grad():
            y = model.masked_top_latent(xh, q)
            return float(torch.mean((xh - model.synthesis(y, "top")) ** 2))

    mse10_before = heldout_masked_mse(10.0)
    p2_losses = train_phase2_refine_decoder(model, sampler, cfg)
    snap_p2 = _snapshot(model)
    mse10_after = heldout_masked_mse(10.0)

    with torch.no_grad():
        bits_before = {k: float(v) for k, v in model.refinement_bits(xh).items()}
    p3_losses = train_phase3_rems(model, sampler, cfg)
    snap_p3 = _snapshot(model)
    with torch.no_grad():
        bits_after = {k: float(v) for k, v in model.refinement_bits(xh).items()}

    return SimpleNamespace(
        cfg=cfg,
        model=model,
        p1_losses=p1_losses,
        p2_losses=p2_losses,
        p3_losses=p3_losses,
        snap_init=snap_init,
        snap_p1=snap_p1,
        snap_p2=snap_p2,
        snap_p3=snap_p3,
        mse10_before=mse10_before,
        mse10_after=mse10_after,
        bits_before=bits_before,
        bits_after=bits_after,
        exported=serialize_weights(cfg, weight_blobs(model)),
    )
