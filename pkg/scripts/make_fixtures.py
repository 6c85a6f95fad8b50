"""Regenerate the deterministic test fixture images in tests/fixtures.

Run from the repo root: python3 scripts/make_fixtures.py
"""

import os
import sys

import numpy as np

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from plcodec.imageio import write_image
from plcodec.tensor import Tensor

FIXTURES = os.path.join(os.path.dirname(__file__), "..", "tests", "fixtures")


def quantize(data):
    return Tensor((np.round(data * 255.0) / np.float32(255.0)).astype(np.float32))


def gradient(h, w):
    yy = np.linspace(0.0, 1.0, h, dtype=np.float32)[:, None]
    xx = np.linspace(0.0, 1.0, w, dtype=np.float32)[None, :]
    r = yy * np.ones_like(xx)
    g = np.ones_like(yy) * xx
    b = 0.5 * (yy + xx)
    return quantize(np.stack([r, g, b]))


def rings(h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    d = np.hypot(yy - h / 2, xx - w / 2)
    base = 0.5 + 0.5 * np.cos(d / 4.0)
    return quantize(np.stack([base, base * 0.8, 1.0 - base]).astype(np.float32))


def stripes(h, w):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    s = 0.5 + 0.5 * np.sin((xx + 2 * yy) / 6.0)
    t = 0.5 + 0.5 * np.sin((xx - yy) / 9.0)
    return quantize(np.stack([s, t, s * t]).astype(np.float32))


def main():
    os.makedirs(FIXTURES, exist_ok=True)
    for name, img in [
        ("gradient_64x64.ppm", gradient(64, 64)),
        ("rings_50x50.ppm", rings(50, 50)),
        ("stripes_96x64.ppm", stripes(96, 64)),
    ]:
        path = os.path.join(FIXTURES, name)
        write_image(img, path)
        print(f"wrote {path} ({img.shape[1]}x{img.shape[2]})")


if __name__ == "__main__":
    main()
