"""Deterministic synthetic two-class digit imagery in MNIST layout.

Class 0 renders a jittered ring, class 1 a jittered near-vertical
stroke, both antialiased on a 28x28 grid with mild pixel noise. The
generator writes genuine IDX files so the regular loaders and format
roundtrips exercise the same code paths as downloaded data.
"""

from __future__ import annotations

import os

import numpy as np

from .data import write_idx

SIZE = 28


def _render_ring(gen: np.random.Generator) -> np.ndarray:
    cy = 13.5 + gen.uniform(-2.0, 2.0)
    cx = 13.5 + gen.uniform(-2.0, 2.0)
    radius = gen.uniform(6.0, 9.0)
    width = gen.uniform(0.9, 1.6)
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    dist = np.hypot(yy - cy, xx - cx)
    return np.exp(-((dist - radius) ** 2) / (2.0 * width**2))


def _render_stroke(gen: np.random.Generator) -> np.ndarray:
    cx = 13.5 + gen.uniform(-4.0, 4.0)
    slope = gen.uniform(-0.2, 0.2)
    width = gen.uniform(0.9, 1.6)
    y0 = gen.uniform(2.0, 5.0)
    y1 = gen.uniform(22.0, 25.0)
    yy, xx = np.mgrid[0:SIZE, 0:SIZE]
    center = cx + slope * (yy - 13.5)
    line = np.exp(-((xx - center) ** 2) / (2.0 * width**2))
    fade = 1.0 / (1.0 + np.exp(-(yy - y0))) * (1.0 / (1.0 + np.exp(yy - y1)))
    return line * fade


def make_digits(n_per_class: int, seed: int = 0) -> tuple:
    """Interleaved class-0/class-1 images as uint8 [N, 28, 28] plus labels."""
    gen = np.random.default_rng(seed)
    images = np.empty((2 * n_per_class, SIZE, SIZE), dtype=np.uint8)
    labels = np.empty(2 * n_per_class, dtype=np.uint8)
    for i in range(n_per_class):
        for cls, render in ((0, _render_ring), (1, _render_stroke)):
            img = 0.85 * render(gen) + gen.normal(0.0, 0.03, (SIZE, SIZE))
            img = np.clip(img, 0.0, 1.0)
            images[2 * i + cls] = np.round(img * 255.0).astype(np.uint8)
            labels[2 * i + cls] = cls
    return images, labels


def write_mnist_like(
    out_dir,
    n_train_per_class: int = 1200,
    n_test_per_class: int = 300,
    seed: int = 7,
) -> dict:
    """Write train/test IDX files in the canonical MNIST directory layout."""
    os.makedirs(out_dir, exist_ok=True)
    train_images, train_labels = make_digits(n_train_per_class, seed)
    test_images, test_labels = make_digits(n_test_per_class, seed + 1)
    write_idx(os.path.join(out_dir, "train-images-idx3-ubyte"), train_images)
    write_idx(os.path.join(out_dir, "train-labels-idx1-ubyte"), train_labels)
    write_idx(os.path.join(out_dir, "t10k-images-idx3-ubyte"), test_images)
    write_idx(os.path.join(out_dir, "t10k-labels-idx1-ubyte"), test_labels)
    return {
        "dir": str(out_dir),
        "n_train": int(train_labels.size),
        "n_test": int(test_labels.size),
        "classes": 2,
    }
