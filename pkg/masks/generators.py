import logging
import math

import numpy as np
from PIL import Image, ImageDraw

from masks.mask import (Mask, MaskType, MaskDimensionError, MaskGenerationError,
                        coverage)


logger = logging.getLogger(__name__)

MIN_SIZE = 16
MAX_ATTEMPTS = 16

# brush radii are given at 256px and scaled by min(h, w) / 256
STROKE_RADII = {
    MaskType.THIN_STROKES: (1, 3),
    MaskType.MEDIUM_STROKES: (4, 8),
    MaskType.THICK_STROKES: (9, 18),
}

COVERAGE_RANGES = {
    MaskType.COMPLETION: (0.4, 0.6),
    MaskType.EXPAND: (0.5, 0.75),
    MaskType.EVERY_N_LINES: (1 / 8, 7 / 8),
    MaskType.NEAREST_NEIGHBOR: (0.75, 63 / 64),
    MaskType.THIN_STROKES: (0.01, 0.15),
    MaskType.MEDIUM_STROKES: (0.03, 0.35),
    MaskType.THICK_STROKES: (0.10, 0.60),
    MaskType.LAMA_POLYGONAL: (0.0, 1.0),
    MaskType.LAMA_RECTANGLE: (0.0, 1.0),
}

SIDES = ('top', 'bottom', 'left', 'right')
ORIENTATIONS = ('rows', 'cols')


def completion_mask(h, w, side, fraction):
    """Full-width (or full-height) band from one edge covering `fraction`."""
    bits = np.zeros((h, w), dtype=np.uint8)
    extent = h if side in ('top', 'bottom') else w
    band = int(round(fraction * extent))
    band = min(max(band, math.ceil(0.4 * extent)), math.floor(0.6 * extent))

    if side == 'top':
        bits[:band, :] = 1
    elif side == 'bottom':
        bits[h - band:, :] = 1
    elif side == 'left':
        bits[:, :band] = 1
    elif side == 'right':
        bits[:, w - band:] = 1
    else:
        raise ValueError(f'unknown side {side}')
    return bits


def expand_mask(h, w, area_fraction, aspect):
    """Masks everything outside a centered rectangle keeping `area_fraction`
    of the image with width/height ratio `aspect` (relative to the image)."""
    keep_h = int(round(math.sqrt(area_fraction / aspect) * h))
    keep_w = int(round(math.sqrt(area_fraction * aspect) * w))
    keep_h = min(max(keep_h, 1), h - 2)
    keep_w = min(max(keep_w, 1), w - 2)

    top = (h - keep_h) // 2
    left = (w - keep_w) // 2
    bits = np.ones((h, w), dtype=np.uint8)
    bits[top:top + keep_h, left:left + keep_w] = 0
    return bits


def every_n_lines_mask(h, w, period, thickness, offset, orientation='rows'):
    """Line l is masked iff ((l - offset) mod period) < thickness."""
    n_lines = h if orientation == 'rows' else w
    lines = ((np.arange(n_lines) - offset) % period) < thickness
    if orientation == 'rows':
        return np.repeat(lines[:, None], w, axis=1).astype(np.uint8)
    return np.repeat(lines[None, :], h, axis=0).astype(np.uint8)


def nearest_neighbor_mask(h, w, stride):
    """Keeps only the top-left pixel of every stride x stride block."""
    bits = np.ones((h, w), dtype=np.uint8)
    bits[::stride, ::stride] = 0
    return bits


def rectangles_mask(h, w, boxes):
    bits = np.zeros((h, w), dtype=np.uint8)
    for top, left, box_h, box_w in boxes:
        bits[top:top + box_h, left:left + box_w] = 1
    return bits


def stroke_mask(h, w, strokes):
    """Rasterizes polylines with a disc brush.

    Args:
        strokes (list of (list of (x, y), int)): vertices and brush radius.
    """
    canvas = Image.new('1', (w, h), 0)
    draw = ImageDraw.Draw(canvas)
    for vertices, radius in strokes:
        if len(vertices) > 1:
            draw.line(vertices, fill=1, width=2 * radius + 1)
        for x, y in vertices:
            draw.ellipse((x - radius, y - radius, x + radius, y + radius), fill=1)
    return np.array(canvas, dtype=np.uint8)


def _random_walk(h, w, rng, n_vertices, step_range):
    scale = min(h, w)
    x, y = rng.uniform(0, w - 1), rng.uniform(0, h - 1)
    vertices = [(x, y)]
    for _ in range(n_vertices - 1):
        angle = rng.uniform(0, 2 * math.pi)
        length = rng.uniform(*step_range) * scale
        x = float(np.clip(x + length * math.cos(angle), 0, w - 1))
        y = float(np.clip(y + length * math.sin(angle), 0, h - 1))
        vertices.append((x, y))
    return [(int(round(vx)), int(round(vy))) for vx, vy in vertices]


def _scaled_radius(radius, h, w):
    return max(1, int(round(radius * min(h, w) / 256)))


def _draw_completion(h, w, rng):
    side = SIDES[int(rng.integers(len(SIDES)))]
    return completion_mask(h, w, side, rng.uniform(0.4, 0.6))


def _draw_expand(h, w, rng):
    return expand_mask(h, w, rng.uniform(0.25, 0.5), rng.uniform(0.75, 1.33))


def _draw_every_n_lines(h, w, rng):
    period = int(rng.choice([2, 4, 8]))
    thickness = int(rng.integers(1, period))
    offset = int(rng.integers(period))
    orientation = ORIENTATIONS[int(rng.integers(2))]
    return every_n_lines_mask(h, w, period, thickness, offset, orientation)


def _draw_nearest_neighbor(h, w, rng):
    return nearest_neighbor_mask(h, w, int(rng.choice([2, 4, 8])))


def brush_segment(h, w, start, end, radius):
    """One brush move: a line from `start` (if any) to `end` plus the disc at `end`."""
    canvas = Image.new('1', (w, h), 0)
    draw = ImageDraw.Draw(canvas)
    if start is not None:
        draw.line([start, end], fill=1, width=2 * radius + 1)
    x, y = end
    draw.ellipse((x - radius, y - radius, x + radius, y + radius), fill=1)
    return np.array(canvas, dtype=np.uint8)


def _strokes_drawer(mask_type):
    low, high = STROKE_RADII[mask_type]
    max_coverage = COVERAGE_RANGES[mask_type][1]

    def draw(h, w, rng):
        # brush moves are added until the next one would pass the upper coverage bound
        limit = int(math.floor(max_coverage * h * w))
        bits = np.zeros((h, w), dtype=np.uint8)
        for _ in range(int(rng.integers(1, 7))):
            vertices = _random_walk(h, w, rng, int(rng.integers(4, 13)), (0.05, 0.15))
            radius = _scaled_radius(int(rng.integers(low, high + 1)), h, w)
            previous = None
            for vertex in vertices:
                merged = bits | brush_segment(h, w, previous, vertex, radius)
                if int(merged.sum()) > limit:
                    return bits
                bits, previous = merged, vertex
        return bits

    return draw


def _draw_lama_polygonal(h, w, rng):
    strokes = []
    for _ in range(int(rng.integers(1, 4))):
        vertices = _random_walk(h, w, rng, int(rng.integers(4, 9)), (0.1, 0.3))
        width = rng.uniform(10, 50) * min(h, w) / 256
        strokes.append((vertices, max(1, int(round(width / 2)))))
    return stroke_mask(h, w, strokes)


def _draw_lama_rectangle(h, w, rng):
    boxes = []
    for _ in range(int(rng.integers(1, 4))):
        box_h = max(1, int(round(rng.uniform(0.1, 0.5) * h)))
        box_w = max(1, int(round(rng.uniform(0.1, 0.5) * w)))
        top = int(rng.integers(0, h - box_h + 1))
        left = int(rng.integers(0, w - box_w + 1))
        boxes.append((top, left, box_h, box_w))
    return rectangles_mask(h, w, boxes)


_DRAWERS = {
    MaskType.COMPLETION: _draw_completion,
    MaskType.EXPAND: _draw_expand,
    MaskType.EVERY_N_LINES: _draw_every_n_lines,
    MaskType.NEAREST_NEIGHBOR: _draw_nearest_neighbor,
    MaskType.THIN_STROKES: _strokes_drawer(MaskType.THIN_STROKES),
    MaskType.MEDIUM_STROKES: _strokes_drawer(MaskType.MEDIUM_STROKES),
    MaskType.THICK_STROKES: _strokes_drawer(MaskType.THICK_STROKES),
    MaskType.LAMA_POLYGONAL: _draw_lama_polygonal,
    MaskType.LAMA_RECTANGLE: _draw_lama_rectangle,
}


def substream(seed, attempt):
    """Independent, reproducible stream `attempt` of `seed` (int or tuple of ints)."""
    entropy = list(seed) if isinstance(seed, (tuple, list)) else int(seed)
    return np.random.default_rng(np.random.SeedSequence(entropy=entropy, spawn_key=(attempt,)))


def generate(mask_type, h, w, seed):
    """Draws a mask of the given type.

    A draw that is degenerate or falls outside the type's coverage range is
    redrawn from the next substream of the same seed.

    Args:
        mask_type (MaskType): geometry family.
        h (int): height, at least 16.
        w (int): width, at least 16.
        seed (int or tuple of int): seed; identical seeds give identical masks.

    Returns:
        Mask
    """
    if h < MIN_SIZE or w < MIN_SIZE:
        raise MaskDimensionError(f'masks need h, w >= {MIN_SIZE}, got {h}x{w}')

    mask_type = MaskType(mask_type)
    low, high = COVERAGE_RANGES[mask_type]

    for attempt in range(MAX_ATTEMPTS):
        bits = _DRAWERS[mask_type](h, w, substream(seed, attempt))
        n_masked = int(bits.sum())
        if n_masked == 0 or n_masked == bits.size:
            continue
        value = n_masked / bits.size
        if low - 1e-12 <= value <= high + 1e-12:
            return Mask(bits)
        logger.debug(f'{mask_type.value} attempt {attempt}: coverage {value:.4f} '
                     f'outside [{low:.4f}, {high:.4f}], redrawing')

    raise MaskGenerationError(f'could not draw a valid {mask_type.value} mask at {h}x{w} '
                              f'with seed {seed} in {MAX_ATTEMPTS} attempts')


def coverage_stats(mask_type, h, w, seeds):
    """Summary of coverage over the given seeds."""
    values = np.array([coverage(generate(mask_type, h, w, seed)) for seed in seeds])
    return {'type': MaskType(mask_type).value, 'size': [h, w], 'n': len(values),
            'min': float(values.min()), 'mean': float(values.mean()),
            'max': float(values.max()), 'declared_range': list(COVERAGE_RANGES[MaskType(mask_type)])}
