"""Corpus loading and random crop batches.

A corpus is any directory of images. Everything is loaded up front as
float32 planes in [0, 1]; the sampler then draws uniform crops with its own
seeded generator, so a fixed (corpus, seed) pair always produces the same
batch sequence.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

EXTENSIONS = (".ppm", ".png", ".jpg", ".jpeg", ".bmp")


class CorpusError(ValueError):
    """Corpus directory unusable for training."""


def load_corpus(root: str, min_size: int) -> list[np.ndarray]:
    """Load every image under root as a (3, h, w) float32 array in [0, 1].

    Files are taken in sorted name order so the corpus indexing is stable
    across runs and machines. An image smaller than min_size in either
    dimension is an error, not a skip: silently shrinking the corpus would
    change what a seed reproduces.
    """
    try:
        names = sorted(os.listdir(root))
    except OSError as e:
        raise CorpusError(f"cannot read corpus directory {root}: {e}") from e
    images: list[np.ndarray] = []
    for name in names:
        if not name.lower().endswith(EXTENSIONS):
            continue
        path = os.path.join(root, name)
        with Image.open(path) as img:
            rgb = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
        arr = rgb.transpose(2, 0, 1)
        if arr.shape[1] < min_size or arr.shape[2] < min_size:
            raise CorpusError(
                f"{path}: image {arr.shape[1]}x{arr.shape[2]} smaller than "
                f"the {min_size}x{min_size} crop"
            )
        images.append(arr)
    if not images:
        raise CorpusError(f"no images found under {root} (extensions: {EXTENSIONS})")
    return images


class CropSampler:
    """Uniform random crops from a fixed in-memory corpus."""

    def __init__(self, images: list[np.ndarray], crop_size: int, seed: int) -> None:
        if not images:
            raise CorpusError("empty corpus")
        for k, img in enumerate(images):
            if img.ndim != 3 or img.shape[0] != 3:
                raise CorpusError(f"image {k} is not (3, h, w): {img.shape}")
            if img.shape[1] < crop_size or img.shape[2] < crop_size:
                raise CorpusError(f"image {k} smaller than crop {crop_size}: {img.shape}")
        self._images = images
        self._crop = crop_size
        self._rng = np.random.default_rng(seed)

    def batch(self, n: int) -> np.ndarray:
        """Draw n crops, shape (n, 3, crop, crop) float32."""
        c = self._crop
        out = np.empty((n, 3, c, c), dtype=np.float32)
        for k in range(n):
            img = self._images[self._rng.integers(len(self._images))]
            y0 = self._rng.integers(img.shape[1] - c + 1)
            x0 = self._rng.integers(img.shape[2] - c + 1)
            out[k] = img[:, y0 : y0 + c, x0 : x0 + c]
        return out
