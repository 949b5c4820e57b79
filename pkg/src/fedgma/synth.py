"""Deterministic MNIST-shaped fixture corpus.

Renders 5x7 dot-matrix digit glyphs into jittered 28x28 grayscale
images. The corpus is class-balanced and fully determined by its seed,
which makes it suitable both as the bundled test fixture and as a
self-contained data source for desk-scale experiment runs when the
real IDX files are not on disk.
"""

from __future__ import annotations

import numpy as np

from .data import RawDataset, write_idx_images, write_idx_labels

_GLYPHS = [
    """
    .###.
    #...#
    #..##
    #.#.#
    ##..#
    #...#
    .###.
    """,
    """
    ..#..
    .##..
    ..#..
    ..#..
    ..#..
    ..#..
    .###.
    """,
    """
    .###.
    #...#
    ....#
    ...#.
    ..#..
    .#...
    #####
    """,
    """
    .###.
    #...#
    ....#
    ..##.
    ....#
    #...#
    .###.
    """,
    """
    ...#.
    ..##.
    .#.#.
    #..#.
    #####
    ...#.
    ...#.
    """,
    """
    #####
    #....
    ####.
    ....#
    ....#
    #...#
    .###.
    """,
    """
    ..##.
    .#...
    #....
    ####.
    #...#
    #...#
    .###.
    """,
    """
    #####
    ....#
    ...#.
    ..#..
    .#...
    .#...
    .#...
    """,
    """
    .###.
    #...#
    #...#
    .###.
    #...#
    #...#
    .###.
    """,
    """
    .###.
    #...#
    #...#
    .####
    ....#
    ...#.
    .##..
    """,
]


def _bitmap(glyph: str) -> np.ndarray:
    rows = [r.strip() for r in glyph.strip().splitlines()]
    return np.array([[c == "#" for c in row] for row in rows], dtype=np.float64)


_BITMAPS = [np.kron(_bitmap(g), np.ones((3, 3))) for g in _GLYPHS]  # 21x15


def synthetic_digits(n: int, seed, noise: float = 0.08) -> RawDataset:
    """Class-balanced corpus of n images (n divisible by 10)."""
    if n < 10 or n % 10 != 0:
        raise ValueError("n must be a positive multiple of 10")
    rng = np.random.default_rng(seed)
    labels = np.tile(np.arange(10), n // 10)
    labels = labels[rng.permutation(n)]
    images = np.zeros((n, 28, 28))
    gh, gw = _BITMAPS[0].shape
    for i, d in enumerate(labels):
        top = (28 - gh) // 2 + rng.integers(-3, 4)
        left = (28 - gw) // 2 + rng.integers(-4, 5)
        stroke = _BITMAPS[d] * rng.uniform(0.65, 1.0) * rng.uniform(0.8, 1.0, (gh, gw))
        images[i, top:top + gh, left:left + gw] = stroke
        images[i] += rng.uniform(0.0, noise, (28, 28))
    np.clip(images, 0.0, 1.0, out=images)
    return RawDataset(images, labels.astype(np.int64))


def write_fixture(directory, train_n: int = 200, test_n: int = 100, seed: int = 0):
    """Materialize a 4-file IDX fixture; returns the file paths."""
    train = synthetic_digits(train_n, [seed, 0])
    test = synthetic_digits(test_n, [seed, 1])
    paths = {
        "train_images": str(directory / "train-images-idx3-ubyte"),
        "train_labels": str(directory / "train-labels-idx1-ubyte"),
        "test_images": str(directory / "t10k-images-idx3-ubyte"),
        "test_labels": str(directory / "t10k-labels-idx1-ubyte"),
    }
    write_idx_images(paths["train_images"], train.images)
    write_idx_labels(paths["train_labels"], train.labels)
    write_idx_images(paths["test_images"], test.images)
    write_idx_labels(paths["test_labels"], test.labels)
    return paths
