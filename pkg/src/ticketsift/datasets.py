"""Image dataset loading, generation, relabeling, and spatial transforms.

Every dataset stores images as flat float32 rows in [0, 1] using the canonical
input layout

    index = c * H * W + y * W + x

so input index i of a flattened image corresponds to pixel (x, y) of channel c.
All exporters in this package document the same layout.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

IDX_IMAGE_MAGIC = 0x00000803
IDX_LABEL_MAGIC = 0x00000801
CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes


@dataclass(frozen=True)
class ImageGeometry:
    """Spatial shape of the input plane; channels is 1 (gray) or 3 (RGB)."""

    width: int
    height: int
    channels: int

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError(f"image sides must be >= 1, got {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")

    @property
    def input_size(self) -> int:
        return self.width * self.height * self.channels


def pixel_index(x: int, y: int, c: int, geom: ImageGeometry) -> int:
    """Flat input index of pixel (x, y) in channel c under the canonical layout."""
    if not (0 <= x < geom.width and 0 <= y < geom.height and 0 <= c < geom.channels):
        raise ValueError(f"pixel ({x}, {y}, {c}) outside geometry {geom}")
    return c * geom.height * geom.width + y * geom.width + x


def pixel_coords(i, geom: ImageGeometry):
    """Inverse of pixel_index: (x, y, c) of flat input index i. Accepts arrays."""
    i = np.asarray(i)
    if i.size and (i.min() < 0 or i.max() >= geom.input_size):
        raise ValueError("input index outside geometry")
    plane = geom.height * geom.width
    c, rem = np.divmod(i, plane)
    y, x = np.divmod(rem, geom.width)
    return x, y, c


def patch_input_indices(geom: ImageGeometry, patch) -> np.ndarray:
    """Flat input indices (all channels) of the rectangle patch = (x0, y0, w, h)."""
    x0, y0, pw, ph = patch
    if pw < 1 or ph < 1:
        raise ValueError(f"patch sides must be >= 1, got {pw}x{ph}")
    if x0 < 0 or y0 < 0 or x0 + pw > geom.width or y0 + ph > geom.height:
        raise ValueError(f"patch {patch} does not fit inside {geom.width}x{geom.height}")
    cs, ys, xs = np.meshgrid(
        np.arange(geom.channels), np.arange(y0, y0 + ph), np.arange(x0, x0 + pw),
        indexing="ij",
    )
    plane = geom.height * geom.width
    return (cs * plane + ys * geom.width + xs).ravel()


@dataclass
class ImageDataset:
    """Labeled images as flat rows plus an optional per-pixel validity plane.

    valid_mask marks pixels that carry real content (False where a transform
    such as rotation filled the pixel in); it is shared by all channels.
    """

    geometry: ImageGeometry
    images: np.ndarray  # (N, input_size) float32 in [0, 1]
    labels: np.ndarray  # (N,) int64, each < n_classes
    n_classes: int
    valid_mask: np.ndarray | None = None  # (H, W) bool

    def __post_init__(self) -> None:
        self.images = np.ascontiguousarray(self.images, dtype=np.float32)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64)
        if self.images.ndim != 2 or self.images.shape[1] != self.geometry.input_size:
            raise ValueError(
                f"images must be (N, {self.geometry.input_size}), got {self.images.shape}"
            )
        if self.labels.shape != (self.images.shape[0],):
            raise ValueError("labels must be one per image")
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if self.labels.size:
            if self.labels.min() < 0 or self.labels.max() >= self.n_classes:
                raise ValueError("labels must lie in [0, n_classes)")
        if self.images.size:
            lo, hi = float(self.images.min()), float(self.images.max())
            if lo < 0.0 or hi > 1.0:
                raise ValueError(f"pixel values must lie in [0, 1], got [{lo}, {hi}]")
        if self.valid_mask is not None:
            self.valid_mask = np.ascontiguousarray(self.valid_mask, dtype=bool)
            expect = (self.geometry.height, self.geometry.width)
            if self.valid_mask.shape != expect:
                raise ValueError(f"valid_mask must be {expect}, got {self.valid_mask.shape}")

    def __len__(self) -> int:
        return self.images.shape[0]

    def take(self, indices: np.ndarray) -> "ImageDataset":
        return ImageDataset(
            self.geometry,
            self.images[indices],
            self.labels[indices],
            self.n_classes,
            self.valid_mask,
        )


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    data = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(data) < header:
        raise ValueError(f"truncated IDX file {path}: header incomplete")
    got = struct.unpack(">I", data[:4])[0]
    if got != magic:
        raise ValueError(f"bad IDX magic {got:#010x} in {path}, expected {magic:#010x}")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    count = math.prod(dims)
    if len(data) != header + count:
        raise ValueError(
            f"IDX file {path} has {len(data) - header} payload bytes, expected {count}"
        )
    return np.frombuffer(data, dtype=np.uint8, offset=header).reshape(dims)


def load_idx(images_path, labels_path) -> ImageDataset:
    """Load a big-endian IDX image/label file pair (single channel)."""
    raw = _read_idx(images_path, IDX_IMAGE_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABEL_MAGIC, 1)
    if raw.shape[0] != labels.shape[0]:
        raise ValueError(
            f"image/label count mismatch: {raw.shape[0]} images, {labels.shape[0]} labels"
        )
    if raw.shape[0] == 0:
        raise ValueError(f"IDX file {images_path} contains no images")
    geom = ImageGeometry(width=raw.shape[2], height=raw.shape[1], channels=1)
    images = raw.reshape(raw.shape[0], -1).astype(np.float32) / 255.0
    labels = labels.astype(np.int64)
    return ImageDataset(geom, images, labels, n_classes=int(labels.max()) + 1)


def save_idx(ds: ImageDataset, images_path, labels_path) -> None:
    """Write a single-channel dataset as an IDX image/label pair."""
    if ds.geometry.channels != 1:
        raise ValueError("IDX export supports single-channel images only")
    if ds.n_classes > 256:
        raise ValueError("IDX labels are single bytes; need n_classes <= 256")
    n, h, w = len(ds), ds.geometry.height, ds.geometry.width
    pixels = np.floor(ds.images * 255.0 + 0.5).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGE_MAGIC, n, h, w))
        f.write(pixels.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABEL_MAGIC, n))
        f.write(ds.labels.astype(np.uint8).tobytes())


def load_cifar_binary(paths) -> ImageDataset:
    """Load CIFAR-style binary batches: 3073-byte records, channel-planar pixels.

    The record pixel order (channel plane, then rows) matches the canonical
    layout directly, so bytes map onto flat rows without reordering.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    if not paths:
        raise ValueError("no CIFAR batch files given")
    images, labels = [], []
    for path in paths:
        data = Path(path).read_bytes()
        if len(data) == 0 or len(data) % CIFAR_RECORD_BYTES != 0:
            raise ValueError(
                f"CIFAR file {path} has {len(data)} bytes, "
                f"not a positive multiple of {CIFAR_RECORD_BYTES}"
            )
        recs = np.frombuffer(data, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        labels.append(recs[:, 0])
        images.append(recs[:, 1:])
    geom = ImageGeometry(width=32, height=32, channels=3)
    flat = np.concatenate(images).astype(np.float32) / 255.0
    return ImageDataset(geom, flat, np.concatenate(labels).astype(np.int64), n_classes=10)


def save_cifar_binary(ds: ImageDataset, path) -> None:
    """Write a 32x32 RGB dataset as one CIFAR-style binary batch."""
    if (ds.geometry.width, ds.geometry.height, ds.geometry.channels) != (32, 32, 3):
        raise ValueError("CIFAR export requires 32x32 RGB geometry")
    if ds.n_classes > 10:
        raise ValueError("CIFAR labels must be < 10")
    pixels = np.floor(ds.images * 255.0 + 0.5).astype(np.uint8)
    recs = np.concatenate([ds.labels.astype(np.uint8)[:, None], pixels], axis=1)
    Path(path).write_bytes(recs.tobytes())


def generate_synthetic(
    geom: ImageGeometry,
    n_per_class: int,
    patch,
    n_classes: int,
    noise_sd: float,
    seed: int,
) -> ImageDataset:
    """Dataset whose label is decodable only from pixels inside ``patch``.

    Each class gets a fixed random pattern over the patch; outside the patch
    every pixel is mid-gray background. The same i.i.d. Gaussian noise is
    added everywhere, so pixels outside the patch carry no label information
    and with noise_sd=0 all images of a class are identical.
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if n_per_class < 1:
        raise ValueError("need at least 1 image per class")
    if noise_sd < 0:
        raise ValueError("noise_sd must be >= 0")
    patch_idx = patch_input_indices(geom, patch)
    rng = np.random.default_rng(seed)
    patterns = rng.uniform(0.0, 1.0, size=(n_classes, patch_idx.size)).astype(np.float32)
    for a in range(n_classes):  # distinct patterns; collisions have measure zero
        for b in range(a + 1, n_classes):
            if np.array_equal(patterns[a], patterns[b]):
                raise RuntimeError("drew identical class patterns; change the seed")
    n = n_classes * n_per_class
    labels = np.repeat(np.arange(n_classes, dtype=np.int64), n_per_class)
    images = np.full((n, geom.input_size), 0.5, dtype=np.float32)
    images[:, patch_idx] = patterns[labels]
    if noise_sd > 0:
        images += noise_sd * rng.standard_normal(images.shape, dtype=np.float32)
    np.clip(images, 0.0, 1.0, out=images)
    perm = rng.permutation(n)
    return ImageDataset(geom, images[perm], labels[perm], n_classes)


def subsample(ds: ImageDataset, fraction: float, seed: int) -> ImageDataset:
    """Keep floor(fraction * N) images drawn uniformly without replacement.

    Selected images keep their original relative order, so fraction=1.0 is the
    identity.
    """
    if not 0.0 < fraction <= 1.0:
        raise ValueError(f"fraction must be in (0, 1], got {fraction}")
    n = math.floor(fraction * len(ds))
    if n == 0:
        raise ValueError(f"subsampling {len(ds)} images at {fraction} leaves none")
    rng = np.random.default_rng(seed)
    keep = np.sort(rng.choice(len(ds), size=n, replace=False))
    return ds.take(keep)


@dataclass(frozen=True)
class ClassMapping:
    """Lookup table sending original label k to macro class table[k]."""

    n_macro: int
    table: tuple

    def __post_init__(self) -> None:
        if self.n_macro < 1:
            raise ValueError("n_macro must be >= 1")
        if any(not (0 <= t < self.n_macro) for t in self.table):
            raise ValueError("mapping entries must lie in [0, n_macro)")
        hit = set(self.table)
        missing = [m for m in range(self.n_macro) if m not in hit]
        if missing:
            raise ValueError(f"macro classes {missing} receive no original class")


def load_class_mapping(path) -> ClassMapping:
    data = json.loads(Path(path).read_text())
    if not isinstance(data, dict) or set(data) != {"n_macro", "table"}:
        raise ValueError(f"mapping file {path} must hold exactly n_macro and table")
    return ClassMapping(n_macro=int(data["n_macro"]), table=tuple(int(t) for t in data["table"]))


def cluster_classes(ds: ImageDataset, mode: str, mapping: ClassMapping | None = None) -> ImageDataset:
    """Coarsen labels: mode "random" takes label mod 10, "semantic" uses a table."""
    if mode == "random":
        new_labels = ds.labels % 10
        n_macro = 10
    elif mode == "semantic":
        if mapping is None:
            raise ValueError("semantic clustering requires a class mapping")
        if ds.labels.size and int(ds.labels.max()) >= len(mapping.table):
            raise ValueError(
                f"mapping covers labels < {len(mapping.table)} "
                f"but dataset contains label {int(ds.labels.max())}"
            )
        table = np.asarray(mapping.table, dtype=np.int64)
        new_labels = table[ds.labels]
        n_macro = mapping.n_macro
    else:
        raise ValueError(f"unknown clustering mode {mode!r}")
    return ImageDataset(ds.geometry, ds.images, new_labels, n_macro, ds.valid_mask)


def rotate_images(ds: ImageDataset, degrees: float) -> ImageDataset:
    """Rotate every image by ``degrees`` about the pixel center ((W-1)/2, (H-1)/2).

    Nearest-neighbor sampling; destination pixels whose source falls outside
    the image are zero-filled and marked False in the returned valid_mask.
    Requires square images. degrees=90 sends destination (x, y) to source
    (y, W-1-x).
    """
    geom = ds.geometry
    if geom.width != geom.height:
        raise ValueError("rotation requires square images")
    w = geom.width
    cx = (w - 1) / 2.0
    theta = math.radians(degrees)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    ys, xs = np.mgrid[0:w, 0:w]
    sx = cx + cos_t * (xs - cx) + sin_t * (ys - cx)
    sy = cx - sin_t * (xs - cx) + cos_t * (ys - cx)
    sxi = np.floor(sx + 0.5).astype(np.int64)
    syi = np.floor(sy + 0.5).astype(np.int64)
    inside = (sxi >= 0) & (sxi < w) & (syi >= 0) & (syi < w)
    sxc = np.clip(sxi, 0, w - 1)
    syc = np.clip(syi, 0, w - 1)
    planes = ds.images.reshape(len(ds), geom.channels, w, w)
    rotated = planes[:, :, syc, sxc]
    rotated[:, :, ~inside] = 0.0
    old_valid = ds.valid_mask if ds.valid_mask is not None else np.ones((w, w), dtype=bool)
    valid = inside & old_valid[syc, sxc]
    return ImageDataset(geom, rotated.reshape(len(ds), -1), ds.labels, ds.n_classes, valid)


def translate_wrap(batch: np.ndarray, geom: ImageGeometry, shift) -> np.ndarray:
    """Cyclically shift a block of flat images by (dx, dy), same for all channels.

    shift (1, 0) moves content one column to the right, so pixel column W-1
    wraps around to column 0.
    """
    dx, dy = shift
    arr = np.asarray(batch)
    flat = arr.reshape(-1, geom.channels, geom.height, geom.width)
    rolled = np.roll(flat, shift=(dy, dx), axis=(2, 3))
    return rolled.reshape(arr.shape)


def translate_wrap_each(batch: np.ndarray, geom: ImageGeometry, shifts: np.ndarray) -> np.ndarray:
    """translate_wrap with an individual (dx, dy) per image in the batch."""
    n0 = geom.input_size
    if batch.ndim != 2 or batch.shape[1] != n0:
        raise ValueError(f"batch must be (N, {n0})")
    shifts = np.asarray(shifts)
    if shifts.shape != (batch.shape[0], 2):
        raise ValueError("need one (dx, dy) per image")
    plane = geom.height * geom.width
    idx = np.arange(n0)
    c, rem = np.divmod(idx, plane)
    y, x = np.divmod(rem, geom.width)
    sx = (x[None, :] - shifts[:, 0:1]) % geom.width
    sy = (y[None, :] - shifts[:, 1:2]) % geom.height
    src = c[None, :] * plane + sy * geom.width + sx
    return np.take_along_axis(batch, src, axis=1)


def split_train_val(ds: ImageDataset, n_val: int, seed: int):
    """Random disjoint split into (train, val) with exactly n_val validation images.

    Both splits keep the original relative image order.
    """
    if not 0 <= n_val < len(ds):
        raise ValueError(f"n_val must lie in [0, {len(ds)}), got {n_val}")
    perm = np.random.default_rng(seed).permutation(len(ds))
    val_idx = np.sort(perm[:n_val])
    train_idx = np.sort(perm[n_val:])
    return ds.take(train_idx), ds.take(val_idx)
