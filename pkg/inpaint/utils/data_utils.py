import logging
import math
import os
from dataclasses import dataclass, field
from typing import List

import numpy as np
import torch
import xxhash
from PIL import Image, UnidentifiedImageError


logger = logging.getLogger(__name__)

SYNTH_CLASSES = ('checkerboard', 'grating', 'blobs', 'voronoi', 'gradient')


@dataclass
class ImageCollection:
    """Images as a (n, 3, R, R) float array in [0, 1], with one name and one
    class/source label per image."""

    images: np.ndarray
    names: List[str] = field(default_factory=list)
    labels: List[str] = field(default_factory=list)

    def __len__(self):
        return len(self.images)

    @property
    def resolution(self):
        return self.images.shape[-1]

    def subset(self, indices):
        indices = list(indices)
        return ImageCollection(self.images[indices], [self.names[i] for i in indices],
                               [self.labels[i] for i in indices])

    def to_tensor(self, indices=None, dtype=torch.float32):
        images = self.images if indices is None else self.images[list(indices)]
        return torch.from_numpy(np.ascontiguousarray(images, dtype=np.float64)).to(dtype)


def _grid(resolution):
    coords = np.arange(resolution, dtype=np.float64)
    return np.meshgrid(coords, coords, indexing='ij')


def _lerp(c0, c1, t):
    return c0[:, None, None] + (c1 - c0)[:, None, None] * t[None]


def _checkerboard(resolution, rng):
    period = int(rng.choice([2, 4, 8, 16]))
    ys, xs = _grid(resolution)
    cells = ((ys // period + xs // period) % 2).astype(np.float64)
    return _lerp(rng.uniform(size=3), rng.uniform(size=3), cells)


def _grating(resolution, rng):
    theta = rng.uniform(0, math.pi)
    cycles = int(rng.integers(1, max(2, resolution // 4) + 1))
    phase = rng.uniform(0, 2 * math.pi)
    ys, xs = _grid(resolution)
    wave = 0.5 + 0.5 * np.sin(2 * math.pi * cycles * (xs * math.cos(theta) + ys * math.sin(theta))
                              / resolution + phase)
    return _lerp(rng.uniform(size=3), rng.uniform(size=3), wave)


def _blobs(resolution, rng):
    ys, xs = _grid(resolution)
    image = np.repeat(rng.uniform(size=3)[:, None, None], resolution, axis=1)
    image = np.repeat(image, resolution, axis=2)
    for _ in range(int(rng.integers(1, 5))):
        cy, cx = rng.uniform(0, resolution, size=2)
        sigma = rng.uniform(0.05, 0.25) * resolution
        bump = np.exp(-((ys - cy) ** 2 + (xs - cx) ** 2) / (2 * sigma ** 2))
        image = _lerp(np.zeros(3), rng.uniform(size=3), bump) + image * (1 - bump)[None]
    return image


def _voronoi(resolution, rng):
    n_sites = int(rng.integers(4, 13))
    sites = rng.uniform(0, resolution, size=(n_sites, 2))
    colors = rng.uniform(size=(n_sites, 3))
    ys, xs = _grid(resolution)
    dist = (ys[None] - sites[:, 0, None, None]) ** 2 + (xs[None] - sites[:, 1, None, None]) ** 2
    nearest = np.argmin(dist, axis=0)
    return np.transpose(colors[nearest], (2, 0, 1))


def _gradient(resolution, rng):
    theta = rng.uniform(0, 2 * math.pi)
    ys, xs = _grid(resolution)
    ramp = xs * math.cos(theta) + ys * math.sin(theta)
    ramp = (ramp - ramp.min()) / max(ramp.max() - ramp.min(), 1e-12)
    return _lerp(rng.uniform(size=3), rng.uniform(size=3), ramp)


_SYNTH_DRAWERS = {
    'checkerboard': _checkerboard,
    'grating': _grating,
    'blobs': _blobs,
    'voronoi': _voronoi,
    'gradient': _gradient,
}


def synth_dataset(n, resolution, seed):
    """Procedural images with structured spectra.

    The class of each image is drawn uniformly from SYNTH_CLASSES.

    Args:
        n (int): number of images, at least 1.
        resolution (int): side length.
        seed (int): seed; the same seed gives the same collection.

    Returns:
        ImageCollection
    """
    if n < 1:
        raise ValueError(f'synth_dataset needs n >= 1, got {n}')
    rng = np.random.default_rng(np.random.SeedSequence(int(seed)))

    images = np.empty((n, 3, resolution, resolution), dtype=np.float64)
    labels = []
    for i in range(n):
        label = SYNTH_CLASSES[int(rng.integers(len(SYNTH_CLASSES)))]
        images[i] = np.clip(_SYNTH_DRAWERS[label](resolution, rng), 0.0, 1.0)
        labels.append(label)
    names = [f'synth-{i:06d}' for i in range(n)]
    return ImageCollection(images, names, labels)


def center_crop_square(image):
    """Largest centered square of a PIL image."""
    w, h = image.size
    side = min(w, h)
    left, top = (w - side) // 2, (h - side) // 2
    return image.crop((left, top, left + side, top + side))


def load_image(path, resolution):
    """Decodes an image file to a (3, R, R) float array in [0, 1]: RGB,
    center-cropped to a square, then bilinearly resized (kept at its own
    size when `resolution` is None)."""
    with Image.open(path) as image:
        image = center_crop_square(image.convert('RGB'))
        if resolution is not None:
            image = image.resize((resolution, resolution), Image.Resampling.BILINEAR)
        array = np.asarray(image, dtype=np.float64) / 255.0
    return np.transpose(array, (2, 0, 1))


def save_image(array, path):
    """Writes a (3, H, W) array in [0, 1] as an 8-bit image; the format
    follows the extension (.ppm gives a binary portable pixmap)."""
    pixels = np.clip(np.rint(np.transpose(array, (1, 2, 0)) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(path)


def split_by_hash(names, val_ratio):
    """Indices of (train, val): the round(n * val_ratio) names with the
    lowest xxh64 go to validation. Stable across runs and machines."""
    n_val = int(math.floor(len(names) * val_ratio + 0.5))
    ranked = sorted(range(len(names)), key=lambda i: (xxhash.xxh64(names[i].encode('utf-8')).intdigest(),
                                                      names[i]))
    val = sorted(ranked[:n_val])
    train = sorted(ranked[n_val:])
    return train, val


@dataclass
class IngestResult:
    train: ImageCollection
    val: ImageCollection
    skipped: List[str] = field(default_factory=list)


def ingest_images(directory, resolution, val_ratio=0.05):
    """Loads every decodable image in `directory` (sorted by file name).

    Undecodable files are skipped with a warning.

    Returns:
        IngestResult
    """
    if not os.path.isdir(directory):
        raise FileNotFoundError(f'image directory {directory} does not exist')
    if not 0 <= val_ratio < 1:
        raise ValueError(f'val_ratio must lie in [0, 1), got {val_ratio}')

    file_names = sorted(name for name in os.listdir(directory)
                        if os.path.isfile(os.path.join(directory, name)))
    if not file_names:
        raise ValueError(f'image directory {directory} is empty')

    images, names, skipped = [], [], []
    for name in file_names:
        path = os.path.join(directory, name)
        try:
            images.append(load_image(path, resolution))
        except (UnidentifiedImageError, OSError, ValueError) as e:
            logger.warning(f'Skipping {path}: {e}')
            skipped.append(name)
            continue
        names.append(name)

    if not images:
        raise ValueError(f'no decodable images in {directory} ({len(skipped)} skipped)')
    if skipped:
        logger.warning(f'Skipped {len(skipped)} undecodable file(s) in {directory}')

    collection = ImageCollection(np.stack(images), names, ['directory'] * len(names))
    train, val = split_by_hash(names, val_ratio)
    logger.info(f'Loaded {len(names)} images from {directory}: {len(train)} train, {len(val)} val')
    return IngestResult(collection.subset(train), collection.subset(val), skipped)
