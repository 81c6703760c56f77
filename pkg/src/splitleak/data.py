"""Dataset ingestion and result/config persistence.

IDX is the MNIST-family binary layout (big endian):

    images: i32 magic 0x00000803 | i32 count | i32 rows | i32 cols | u8 pixels
    labels: i32 magic 0x00000801 | i32 count | u8 labels

Image features are flattened row-major and scaled by 1/255 into [0, 1].
Besides IDX files there are two generators: Gaussian blobs (optionally with
unequal per-class counts, for the biased-dataset attack mode) and a
procedurally deformed 28x28 digit renderer that stands in for MNIST when the
real files are not on disk.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, fields

import numpy as np
from scipy import ndimage

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801


@dataclass
class Dataset:
    features: np.ndarray  # (n, d) float64; image data lives in [0, 1]
    labels: np.ndarray    # (n,) int64
    n_classes: int
    provenance: str = ""

    def __post_init__(self):
        if self.features.ndim != 2 or len(self.features) == 0:
            raise ValueError(f"features must be a nonempty 2-D array, got {self.features.shape}")
        if self.labels.shape != (len(self.features),):
            raise ValueError(f"labels shape {self.labels.shape} does not match "
                             f"{len(self.features)} samples")
        if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")

    def __len__(self) -> int:
        return len(self.features)

    def take(self, offset: int, count: int | None = None) -> "Dataset":
        """Deterministic slice starting at ``offset``."""
        end = None if count is None else offset + count
        sl = slice(offset, end)
        return Dataset(self.features[sl], self.labels[sl], self.n_classes,
                       provenance=f"{self.provenance}[{offset}:{'' if end is None else end}]")


def _read_exact(f, n: int, path, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ValueError(f"{path}: truncated {what} (wanted {n} bytes, got {len(data)})")
    return data


def read_idx_images(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, count, rows, cols = struct.unpack(">iiii", _read_exact(f, 16, path, "header"))
        if magic != IDX_IMAGE_MAGIC:
            raise ValueError(f"{path}: bad image magic 0x{magic:08x} "
                             f"(expected 0x{IDX_IMAGE_MAGIC:08x})")
        payload = _read_exact(f, count * rows * cols, path, "pixel payload")
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes after pixel payload")
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def read_idx_labels(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic, count = struct.unpack(">ii", _read_exact(f, 8, path, "header"))
        if magic != IDX_LABEL_MAGIC:
            raise ValueError(f"{path}: bad label magic 0x{magic:08x} "
                             f"(expected 0x{IDX_LABEL_MAGIC:08x})")
        payload = _read_exact(f, count, path, "label payload")
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes after label payload")
    return np.frombuffer(payload, dtype=np.uint8)


def write_idx_images(path, images: np.ndarray) -> None:
    images = np.asarray(images, dtype=np.uint8)
    if images.ndim != 3:
        raise ValueError(f"images must be (count, rows, cols), got {images.shape}")
    with open(path, "wb") as f:
        f.write(struct.pack(">iiii", IDX_IMAGE_MAGIC, *images.shape))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray) -> None:
    labels = np.asarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">ii", IDX_LABEL_MAGIC, len(labels)))
        f.write(labels.tobytes())


def load_idx(images_path, labels_path, limit: int | None = None, offset: int = 0) -> Dataset:
    """Parse an IDX image/label pair into a [0, 1]-scaled flat Dataset.

    The class count comes from the full label file, so a truncated subset
    keeps the dataset's true number of classes. ``offset``/``limit`` slice
    deterministically from the front.
    """
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if len(images) != len(labels):
        raise ValueError(f"count mismatch: {images_path} has {len(images)} images but "
                         f"{labels_path} has {len(labels)} labels")
    n_classes = int(labels.max()) + 1
    images = images[offset:None if limit is None else offset + limit]
    labels = labels[offset:None if limit is None else offset + limit]
    if len(images) == 0:
        raise ValueError(f"{images_path}: no records left after offset={offset}, limit={limit}")
    features = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), n_classes,
                   provenance=f"idx:{images_path}")


def gen_blobs(n_classes: int, dim: int, per_class_counts, centroid_scale: float,
              within_std: float, seed: int = 0) -> Dataset:
    """Gaussian blobs around seeded uniform-cube centroids.

    ``per_class_counts`` may be unequal, which makes the class prior strictly
    ordered for the anchor-free attack mode. Samples are laid out class by
    class; the trainer shuffles anyway.
    """
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    counts = [int(c) for c in per_class_counts]
    if len(counts) != n_classes:
        raise ValueError(f"need {n_classes} per-class counts, got {len(counts)}")
    if any(c <= 0 for c in counts):
        raise ValueError(f"per-class counts must be positive, got {counts}")
    if not centroid_scale > 0:
        raise ValueError(f"centroid_scale must be > 0, got {centroid_scale}")
    if within_std < 0:
        raise ValueError(f"within_std must be >= 0, got {within_std}")
    rng = np.random.default_rng(seed)
    centroids = rng.uniform(-centroid_scale, centroid_scale, size=(n_classes, dim))
    feats = []
    labels = []
    for k, count in enumerate(counts):
        feats.append(centroids[k] + rng.normal(0.0, within_std, size=(count, dim)))
        labels.append(np.full(count, k, dtype=np.int64))
    return Dataset(np.vstack(feats), np.concatenate(labels), n_classes,
                   provenance=f"blobs:k={n_classes},dim={dim},seed={seed}")


# 5x7 glyphs for the stand-in digit renderer, one string row per scanline.
_DIGIT_GLYPHS = {
    0: ("01110", "10001", "10011", "10101", "11001", "10001", "01110"),
    1: ("00100", "01100", "00100", "00100", "00100", "00100", "01110"),
    2: ("01110", "10001", "00001", "00110", "01000", "10000", "11111"),
    3: ("11110", "00001", "00001", "01110", "00001", "00001", "11110"),
    4: ("00010", "00110", "01010", "10010", "11111", "00010", "00010"),
    5: ("11111", "10000", "11110", "00001", "00001", "10001", "01110"),
    6: ("00110", "01000", "10000", "11110", "10001", "10001", "01110"),
    7: ("11111", "00001", "00010", "00100", "01000", "01000", "01000"),
    8: ("01110", "10001", "10001", "01110", "10001", "10001", "01110"),
    9: ("01110", "10001", "10001", "01111", "00001", "00010", "01100"),
}


def _glyph_canvas(digit: int) -> np.ndarray:
    glyph = np.array([[int(c) for c in row] for row in _DIGIT_GLYPHS[digit]], dtype=np.float64)
    block = np.kron(glyph, np.ones((3, 3)))  # 21x15
    canvas = np.zeros((28, 28))
    canvas[3:24, 6:21] = block
    return canvas


def gen_digit_images(count: int, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Render ``count`` deformed 28x28 digit images as uint8, balanced over 0-9.

    Each sample applies a seeded random rotation, anisotropic scale, shear and
    shift to its class glyph, then blur, intensity jitter and pixel noise.
    MNIST stand-in for offline runs: same shape, same value range, same IDX
    serialization, easier to classify.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    rng = np.random.default_rng(seed)
    bases = {d: _glyph_canvas(d) for d in range(10)}
    labels = rng.permutation(np.arange(count) % 10).astype(np.uint8)
    images = np.empty((count, 28, 28), dtype=np.uint8)
    center = np.array([13.5, 13.5])
    for i, label in enumerate(labels):
        theta = rng.uniform(-0.25, 0.25)
        scale = rng.uniform(0.8, 1.2, size=2)
        shear = rng.uniform(-0.2, 0.2)
        shift = rng.uniform(-2.5, 2.5, size=2)
        rot = np.array([[np.cos(theta), -np.sin(theta)],
                        [np.sin(theta), np.cos(theta)]])
        lin = rot @ np.array([[scale[0], shear], [0.0, scale[1]]])
        inv = np.linalg.inv(lin)
        offset = center - inv @ (center + shift)
        img = ndimage.affine_transform(bases[int(label)], inv, offset=offset, order=1)
        img = ndimage.gaussian_filter(img, rng.uniform(0.4, 0.9))
        img = img * rng.uniform(0.7, 1.0) + rng.normal(0.0, 0.03, size=img.shape)
        images[i] = (np.clip(img, 0.0, 1.0) * 255).astype(np.uint8)
    return images, labels


def gen_digits(count: int, seed: int = 0) -> Dataset:
    """Flattened [0, 1] Dataset view of ``gen_digit_images``."""
    images, labels = gen_digit_images(count, seed)
    features = images.reshape(count, -1).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), 10,
                   provenance=f"digits:seed={seed}")


def write_results_csv(path, header, rows) -> None:
    """CSV with a header row and RFC-4180 quoting; floats via repr() round-trip."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(list(header))
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


@dataclass
class ExperimentConfig:
    """Flat key=value experiment description; every field is one config key."""

    dataset: str = "blobs"            # blobs | digits | idx
    images: str | None = None         # idx image file
    labels: str | None = None         # idx label file
    test_images: str | None = None
    test_labels: str | None = None
    limit: int | None = None
    offset: int = 0
    classes: int = 3                  # blobs
    dim: int = 20                     # blobs
    counts: tuple[int, ...] | None = None  # blobs per-class counts
    centroid_scale: float = 5.0       # blobs
    within_std: float = 0.5           # blobs
    data_seed: int = 0                # blobs/digits
    count: int = 300                  # digits sample count
    widths: tuple[int, ...] = (20, 16, 8, 3)
    cut: int = 1
    epochs: int = 1
    batch: int = 32
    lr: float = 0.05
    seed: int = 0
    source: str = "gradients"         # gradients | smashed
    pca_dim: int | None = None
    attack_epoch: int = 0
    pool_epochs: bool = False
    anchor_seed: int = 0
    attack_cut: int | None = None     # smashed collection cut; defaults to `cut`
    noise_clip: float | None = None
    noise_sigma: float | None = None
    noise_seed: int = 0
    compression_ratio: float | None = None


_CONFIG_FIELDS = {f.name: f for f in fields(ExperimentConfig)}


def _parse_value(key: str, text: str):
    kind = _CONFIG_FIELDS[key].type
    text = text.strip()
    try:
        if key in ("widths", "counts"):
            return tuple(int(x) for x in text.split(",") if x.strip())
        if kind.startswith("int"):
            return int(text)
        if kind.startswith("float"):
            return float(text)
        if kind.startswith("bool"):
            if text.lower() in ("true", "1", "yes"):
                return True
            if text.lower() in ("false", "0", "no"):
                return False
            raise ValueError(text)
        return text
    except ValueError:
        raise ValueError(f"config key {key!r}: cannot parse value {text!r}")


def read_config(path) -> ExperimentConfig:
    """Parse `key = value` lines; '#' starts a comment; unknown keys are errors."""
    values = {}
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            key = key.strip()
            if key not in _CONFIG_FIELDS:
                raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
            values[key] = _parse_value(key, value)
    return ExperimentConfig(**values)


def write_config(path, config: ExperimentConfig) -> None:
    with open(path, "w") as f:
        for fld in fields(ExperimentConfig):
            value = getattr(config, fld.name)
            if value is None:
                continue
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            f.write(f"{fld.name} = {value}\n")


def load_config_dataset(config: ExperimentConfig) -> Dataset:
    """Materialize the training dataset a config describes."""
    if config.dataset == "idx":
        if not config.images or not config.labels:
            raise ValueError("dataset=idx requires both 'images' and 'labels' paths")
        return load_idx(config.images, config.labels, limit=config.limit,
                        offset=config.offset)
    if config.dataset == "digits":
        ds = gen_digits(config.count, seed=config.data_seed)
        if config.limit is not None or config.offset:
            ds = ds.take(config.offset, config.limit)
        return ds
    if config.dataset == "blobs":
        counts = config.counts
        if counts is None:
            counts = tuple([100] * config.classes)
        return gen_blobs(config.classes, config.dim, counts, config.centroid_scale,
                         config.within_std, seed=config.data_seed)
    raise ValueError(f"unknown dataset kind {config.dataset!r} "
                     f"(expected blobs, digits or idx)")


def load_config_test_dataset(config: ExperimentConfig) -> Dataset | None:
    if config.test_images and config.test_labels:
        return load_idx(config.test_images, config.test_labels)
    return None
