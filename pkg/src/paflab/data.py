"""Dataset supply: seeded synthetic 2-d tasks and an IDX image loader.

All features live in [0, 1] so attack clipping matches image conventions.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .seeding import substream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Base class for IDX parsing failures."""


class IdxMagicError(IdxFormatError):
    pass


class IdxTruncatedError(IdxFormatError):
    pass


class IdxCountMismatchError(IdxFormatError):
    pass


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray
    feature_range: tuple[float, float] = (0.0, 1.0)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        lo, hi = self.feature_range
        if self.x.shape[0] != self.y.shape[0]:
            raise ValueError(f"{self.x.shape[0]} samples but {self.y.shape[0]} labels")
        if self.x.size and (self.x.min() < lo or self.x.max() > hi):
            raise ValueError(f"features outside range [{lo}, {hi}]")
        if self.y.size and self.y.min() < 0:
            raise ValueError("labels must be non-negative")

    def __len__(self):
        return self.x.shape[0]

    @property
    def classes(self) -> int:
        return int(self.y.max()) + 1 if self.y.size else 0

    def subset(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx], self.feature_range, dict(self.metadata))


# -- synthetic generators ----------------------------------------------------

# affine map taking the raw moons envelope (x in [-1,2], y in [-0.5,1]) into the
# unit square with a single isotropic scale, so distances shrink by exactly 1/3
_MOON_SHIFT = np.array([1.0, 0.5])
_MOON_SCALE = 1.0 / 3.0


def _moon_curves(n: int) -> tuple[np.ndarray, np.ndarray]:
    t = np.linspace(0.0, np.pi, n)
    outer = np.stack([np.cos(t), np.sin(t)], axis=1)
    inner = np.stack([1.0 - np.cos(t), 0.5 - np.sin(t)], axis=1)
    return outer, inner


def two_moons(n: int, noise: float = 0.0, seed: int = 0) -> Dataset:
    """Interleaved half-circles rescaled into the unit square.

    metadata['margin'] is the closest distance between the two noise-free
    curves after rescaling.
    """
    if n % 2 != 0:
        raise ValueError(f"n must be even, got {n}")
    if noise < 0:
        raise ValueError(f"noise must be non-negative, got {noise}")
    rng = substream(seed, "data")
    outer, inner = _moon_curves(n // 2)
    pts = np.concatenate([outer, inner], axis=0)
    if noise > 0:
        pts = pts + rng.normal(0.0, noise, size=pts.shape)
    pts = (pts + _MOON_SHIFT) * _MOON_SCALE
    pts = np.clip(pts, 0.0, 1.0)
    y = np.concatenate([np.zeros(n // 2, dtype=np.int64), np.ones(n // 2, dtype=np.int64)])
    dense_outer, dense_inner = _moon_curves(2001)
    dense_outer = (dense_outer + _MOON_SHIFT) * _MOON_SCALE
    dense_inner = (dense_inner + _MOON_SHIFT) * _MOON_SCALE
    gaps = np.linalg.norm(dense_outer[:, None, :] - dense_inner[None, :, :], axis=2)
    margin = float(gaps.min())
    return Dataset(pts, y, metadata={"name": "two_moons", "seed": seed,
                                     "noise": noise, "margin": margin})


def gaussian_blobs(n: int, centers, sigma: float, seed: int = 0) -> Dataset:
    """Isotropic gaussian clusters, one class per center, clipped to [0,1]^d.

    metadata['margin'] = min pairwise center distance - 6*sigma.
    """
    centers = np.asarray(centers, dtype=np.float64)
    k = centers.shape[0]
    if n % k != 0:
        raise ValueError(f"n={n} must divide evenly over {k} centers")
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    rng = substream(seed, "data")
    y = np.repeat(np.arange(k, dtype=np.int64), n // k)
    x = centers[y] + sigma * rng.standard_normal((n, centers.shape[1]))
    x = np.clip(x, 0.0, 1.0)
    if k > 1:
        dists = np.linalg.norm(centers[:, None, :] - centers[None, :, :], axis=2)
        min_dist = float(dists[~np.eye(k, dtype=bool)].min())
    else:
        min_dist = float("inf")
    return Dataset(x, y, metadata={"name": "gaussian_blobs", "seed": seed,
                                   "sigma": sigma, "margin": min_dist - 6.0 * sigma})


# -- IDX binary format ---------------------------------------------------------


def _read_header(buf: bytes, path, n_dims: int, expected_magic: int):
    header_len = 4 * (1 + n_dims)
    if len(buf) < header_len:
        raise IdxTruncatedError(f"{path}: file shorter than its {header_len}-byte header")
    fields = struct.unpack(f">{1 + n_dims}i", buf[:header_len])
    magic, dims = fields[0], fields[1:]
    if magic != expected_magic:
        raise IdxMagicError(f"{path}: expected magic 0x{expected_magic:08x}, found 0x{magic:08x}")
    expected_len = header_len + int(np.prod(dims))
    if len(buf) != expected_len:
        raise IdxTruncatedError(f"{path}: expected {expected_len} bytes for dims {dims}, "
                                f"found {len(buf)}")
    return dims, buf[header_len:]


def load_idx(images_path, labels_path) -> Dataset:
    """Parse big-endian IDX image/label files into a [0,1]-scaled dataset."""
    with open(images_path, "rb") as f:
        img_buf = f.read()
    with open(labels_path, "rb") as f:
        lab_buf = f.read()
    (n_img, rows, cols), pixels = _read_header(img_buf, images_path, 3, IDX_IMAGES_MAGIC)
    (n_lab,), labels = _read_header(lab_buf, labels_path, 1, IDX_LABELS_MAGIC)
    if n_img != n_lab:
        raise IdxCountMismatchError(f"{n_img} images but {n_lab} labels")
    x = np.frombuffer(pixels, dtype=np.uint8).astype(np.float64).reshape(n_img, 1, rows, cols) / 255.0
    y = np.frombuffer(labels, dtype=np.uint8).astype(np.int64)
    return Dataset(x, y, metadata={"name": "idx", "images_path": str(images_path),
                                   "labels_path": str(labels_path)})


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Inverse of load_idx for fixtures; images are uint8 [N, rows, cols]."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">4i", IDX_IMAGES_MAGIC, n, rows, cols))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">2i", IDX_LABELS_MAGIC, labels.shape[0]))
        f.write(labels.tobytes())


def dataset_to_csv(ds: Dataset, path) -> None:
    flat = ds.x.reshape(len(ds), -1)
    header = ",".join(f"x{i}" for i in range(flat.shape[1])) + ",label"
    with open(path, "w") as f:
        f.write(header + "\n")
        for row, label in zip(flat, ds.y):
            f.write(",".join(repr(v) for v in row) + f",{label}\n")
