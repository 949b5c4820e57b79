"""MNIST ingestion, colored-image synthesis, and client partitioning.

IDX file layout (big endian):
    images: i32 magic 0x00000803 | i32 count | i32 rows | i32 cols | u8 pixels
    labels: i32 magic 0x00000801 | i32 count | u8 labels

Binary task coloring: digits < 5 get label 0 and are drawn in the red
channel, digits >= 5 get label 1 and green; a per-image flip swaps the
channel with the given probability. Multiclass coloring paints a flat
foreground color over the stroke (grayscale > 0.5) and a flat
background color elsewhere; each digit owns two foreground and two
background colors during training while the out-of-distribution test
set samples both roles from a shared 10-color palette.
"""

from __future__ import annotations

import colorsys
import struct
from dataclasses import dataclass

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801

# Out-of-distribution palette: 10 named colors, fixed RGB.
PALETTE = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "magenta": (1.0, 0.0, 1.0),
    "cyan": (0.0, 1.0, 1.0),
    "orange": (1.0, 0.5, 0.0),
    "purple": (0.5, 0.0, 0.5),
    "brown": (0.6, 0.3, 0.1),
    "pink": (1.0, 0.75, 0.8),
}
PALETTE_RGB = np.array(list(PALETTE.values()))

# Training color tables: 20 saturated foreground tones and 20 dimmer
# background tones (disjoint hues), sliced two-per-digit so every class
# owns colors no other class uses in the same role.
_FG_TONES = np.array([colorsys.hsv_to_rgb(i / 20, 1.0, 1.0) for i in range(20)])
_BG_TONES = np.array([colorsys.hsv_to_rgb((i + 0.5) / 20, 0.55, 0.45) for i in range(20)])
DEFAULT_CLASS_COLORS = {
    digit: {
        "fg": _FG_TONES[2 * digit: 2 * digit + 2].copy(),
        "bg": _BG_TONES[2 * digit: 2 * digit + 2].copy(),
    }
    for digit in range(10)
}

FOREGROUND_THRESHOLD = 0.5


class IdxFormatError(ValueError):
    """Malformed IDX file; the message names the failing byte offset."""


@dataclass(frozen=True)
class RawDataset:
    """Grayscale digits: images (n, 28, 28) in [0,1], labels (n,) 0-9."""

    images: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "RawDataset":
        return RawDataset(self.images[idx], self.labels[idx])


@dataclass(frozen=True)
class ColoredDataset:
    """RGB digits: images (n, 3, 28, 28) in [0,1] plus an environment tag.

    Labels are {0,1} for the binary task and the digit for multiclass.
    """

    images: np.ndarray
    labels: np.ndarray
    environment: str

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise ValueError(f"expected (n, 3, h, w) images, got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise ValueError("images and labels differ in length")

    def __len__(self) -> int:
        return len(self.labels)

    def subset(self, idx) -> "ColoredDataset":
        return ColoredDataset(self.images[idx], self.labels[idx], self.environment)

    def flat_inputs(self) -> np.ndarray:
        return self.images.reshape(len(self), -1)


@dataclass(frozen=True)
class ClientState:
    """One client's shard; sample_count drives aggregation weights."""

    client_id: int
    shard: object  # RawDataset or ColoredDataset
    sample_count: int
    flip_prob: float | None = None

    def __post_init__(self):
        if self.sample_count != len(self.shard):
            raise ValueError("sample_count must equal shard size")
        if self.sample_count < 1:
            raise ValueError("client shard must be non-empty")


def _read_be32(data: bytes, offset: int, path: str) -> int:
    if offset + 4 > len(data):
        raise IdxFormatError(f"{path}: truncated header at offset {offset}")
    return struct.unpack_from(">i", data, offset)[0]


def load_idx_images(path) -> np.ndarray:
    """Images from an IDX file, scaled by 1/255 to float64 in [0,1]."""
    data = open(path, "rb").read()
    path = str(path)
    magic = _read_be32(data, 0, path)
    if magic != IMAGE_MAGIC:
        raise IdxFormatError(f"{path}: bad image magic {magic:#010x} at offset 0")
    count = _read_be32(data, 4, path)
    rows = _read_be32(data, 8, path)
    cols = _read_be32(data, 12, path)
    need = 16 + count * rows * cols
    if len(data) < need:
        raise IdxFormatError(f"{path}: truncated pixel data at offset {len(data)} (need {need})")
    pixels = np.frombuffer(data, dtype=np.uint8, count=count * rows * cols, offset=16)
    return pixels.reshape(count, rows, cols).astype(np.float64) / 255.0


def load_idx_labels(path) -> np.ndarray:
    data = open(path, "rb").read()
    path = str(path)
    magic = _read_be32(data, 0, path)
    if magic != LABEL_MAGIC:
        raise IdxFormatError(f"{path}: bad label magic {magic:#010x} at offset 0")
    count = _read_be32(data, 4, path)
    if len(data) < 8 + count:
        raise IdxFormatError(f"{path}: truncated label data at offset {len(data)} (need {8 + count})")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=8).astype(np.int64)


def write_idx_images(path, images: np.ndarray) -> None:
    """Inverse of load_idx_images; expects float values in [0,1]."""
    arr = np.round(np.asarray(images) * 255.0).astype(np.uint8)
    n, rows, cols = arr.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", IMAGE_MAGIC, n, rows, cols))
        f.write(arr.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    arr = np.asarray(labels).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", LABEL_MAGIC, len(arr)))
        f.write(arr.tobytes())


def load_mnist(train_images, train_labels, test_images, test_labels):
    """(train, test) RawDatasets from the four standard IDX files."""
    train = RawDataset(load_idx_images(train_images), load_idx_labels(train_labels))
    test = RawDataset(load_idx_images(test_images), load_idx_labels(test_labels))
    return train, test


def colorize_binary(raw: RawDataset, flip_prob: float, reversed_scheme: bool, seed,
                    environment: str = "train") -> ColoredDataset:
    """Binary colored digits: label = digit >= 5, one active color channel.

    Base color is red for label 0 and green for label 1 (swapped under
    ``reversed_scheme``); each image flips its channel independently
    with probability ``flip_prob``. The grayscale intensity goes into
    the chosen channel, the other two stay zero.
    """
    if not 0.0 <= flip_prob <= 1.0:
        raise ValueError("flip_prob must be in [0, 1]")
    rng = np.random.default_rng(seed)
    n = len(raw)
    labels = (raw.labels >= 5).astype(np.int64)
    # channel 0 = red, 1 = green
    base = labels.copy() if not reversed_scheme else 1 - labels
    flips = rng.random(n) < flip_prob
    channel = np.where(flips, 1 - base, base)
    images = np.zeros((n, 3, raw.images.shape[1], raw.images.shape[2]))
    images[np.arange(n), channel] = raw.images
    return ColoredDataset(images, labels, environment)


def _validate_class_colors(class_colors) -> None:
    for role in ("fg", "bg"):
        seen = set()
        for digit in range(10):
            entry = class_colors[digit][role]
            if len(entry) != 2:
                raise ValueError(f"digit {digit} needs exactly 2 {role} colors")
            for color in np.asarray(entry):
                key = tuple(np.round(color, 12))
                if key in seen:
                    raise ValueError(f"{role} color {key} assigned to more than one class")
                seen.add(key)


def colorize_multiclass(raw: RawDataset, mode: str, palette: np.ndarray | None = None,
                        class_colors=None, seed=0) -> ColoredDataset:
    """Multiclass colored digits: flat fg over strokes, flat bg elsewhere.

    ``mode="train"`` picks each image's fg and bg uniformly from its
    digit's two options. ``mode="ood-test"`` ignores the class: fg is
    uniform over the 10-color palette and bg uniform over the other
    nine (keeping the stroke visible).
    """
    if mode not in ("train", "ood-test"):
        raise ValueError(f"unknown mode {mode!r}")
    palette = PALETTE_RGB if palette is None else np.asarray(palette, dtype=np.float64)
    class_colors = DEFAULT_CLASS_COLORS if class_colors is None else class_colors
    _validate_class_colors(class_colors)
    rng = np.random.default_rng(seed)
    n = len(raw)
    fg = np.empty((n, 3))
    bg = np.empty((n, 3))
    if mode == "train":
        pick = rng.integers(0, 2, size=(n, 2))
        for i in range(n):
            entry = class_colors[int(raw.labels[i])]
            fg[i] = entry["fg"][pick[i, 0]]
            bg[i] = entry["bg"][pick[i, 1]]
        environment = "train"
    else:
        fg_idx = rng.integers(0, len(palette), size=n)
        # bg: uniform over the palette minus the fg color
        shift = rng.integers(1, len(palette), size=n)
        bg_idx = (fg_idx + shift) % len(palette)
        fg = palette[fg_idx]
        bg = palette[bg_idx]
        environment = "ood-test"
    stroke = raw.images > FOREGROUND_THRESHOLD  # (n, h, w)
    images = np.where(stroke[:, None, :, :], fg[:, :, None, None], bg[:, :, None, None])
    return ColoredDataset(images, raw.labels.astype(np.int64), environment)


def _as_client(i: int, dataset, idx, flip_prob=None) -> ClientState:
    shard = dataset.subset(idx)
    return ClientState(client_id=i, shard=shard, sample_count=len(idx), flip_prob=flip_prob)


def partition_iid(data, k: int, seed) -> list[ClientState]:
    """Shuffle and deal equal shards; the remainder (< k) is dropped."""
    n = len(data)
    if k < 1:
        raise ValueError("need at least one client")
    if k > n:
        raise ValueError(f"cannot split {n} records among {k} clients")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    per = n // k
    return [_as_client(i, data, order[i * per:(i + 1) * per]) for i in range(k)]


def partition_noniid(data, k: int, seed, shards_per_client: int = 2) -> list[ClientState]:
    """Label-sorted shards, two dealt to each client at random.

    The 2k shard boundaries snap to digit boundaries whenever there are
    at least as many shards as distinct digits (shards apportioned to
    digits by largest remainder), so every client sees at most
    ``shards_per_client`` distinct digits. With fewer shards than
    digits that bound is unattainable and plain equal cuts of the
    sorted sequence are used instead.
    """
    n = len(data)
    if k < 1:
        raise ValueError("need at least one client")
    num_shards = shards_per_client * k
    if num_shards > n:
        raise ValueError(f"cannot cut {n} records into {num_shards} shards")
    rng = np.random.default_rng(seed)
    labels = np.asarray(data.labels)
    digits = np.unique(labels)

    shards: list[np.ndarray] = []
    if num_shards >= len(digits):
        counts = np.array([(labels == d).sum() for d in digits])
        quota = num_shards * counts / counts.sum()
        # largest-remainder apportionment, keeping 1 <= alloc <= count
        alloc = np.minimum(np.maximum(np.floor(quota).astype(int), 1), counts)
        while alloc.sum() > num_shards:
            cand = np.flatnonzero(alloc > 1)
            alloc[cand[np.argmax((alloc - quota)[cand])]] -= 1
        while alloc.sum() < num_shards:
            cand = np.flatnonzero(alloc < counts)
            alloc[cand[np.argmin((alloc - quota)[cand])]] += 1
        for d, m in zip(digits, alloc):
            pool = np.flatnonzero(labels == d)
            pool = pool[rng.permutation(len(pool))]
            shards.extend(np.array_split(pool, m))
    else:
        order = np.argsort(labels, kind="stable")
        per = n // num_shards
        shards = [order[j * per:(j + 1) * per] for j in range(num_shards)]

    deal = rng.permutation(num_shards)
    clients = []
    for i in range(k):
        mine = np.concatenate([shards[deal[shards_per_client * i + s]]
                               for s in range(shards_per_client)])
        clients.append(_as_client(i, data, mine))
    return clients


def client_flip_probs(k: int, low: float = 0.1, high: float = 0.2) -> list[float]:
    """Evenly spaced per-client flip probabilities across [low, high]."""
    if k == 1:
        return [low]
    return [low + (high - low) * i / (k - 1) for i in range(k)]


def digit_histogram(labels, num_classes: int = 10) -> np.ndarray:
    return np.bincount(np.asarray(labels, dtype=np.int64), minlength=num_classes)


def export_colored(dataset: ColoredDataset, path) -> None:
    """NPY-compatible dump: one .npz with float64 images, int64 labels,
    and the environment tag."""
    np.savez(
        path,
        images=dataset.images.astype(np.float64),
        labels=dataset.labels.astype(np.int64),
        environment=np.array(dataset.environment),
    )


def load_colored(path) -> ColoredDataset:
    with np.load(path) as z:
        return ColoredDataset(z["images"], z["labels"], str(z["environment"]))
