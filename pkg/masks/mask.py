from dataclasses import dataclass
from enum import Enum

import numpy as np
import torch


class MaskError(ValueError):
    pass


class MaskDimensionError(MaskError):
    pass


class MaskInvariantError(MaskError):
    pass


class MaskGenerationError(MaskError):
    pass


class MaskParseError(MaskError):
    def __init__(self, message, offset):
        super().__init__(f'{message} (byte offset {offset})')
        self.reason = message
        self.offset = offset


class MaskType(str, Enum):
    COMPLETION = 'completion'
    EXPAND = 'expand'
    EVERY_N_LINES = 'every_n_lines'
    NEAREST_NEIGHBOR = 'nearest_neighbor'
    THIN_STROKES = 'thin_strokes'
    MEDIUM_STROKES = 'medium_strokes'
    THICK_STROKES = 'thick_strokes'
    LAMA_POLYGONAL = 'lama_polygonal'
    LAMA_RECTANGLE = 'lama_rectangle'


GENERAL_TYPES = (MaskType.COMPLETION, MaskType.EXPAND, MaskType.EVERY_N_LINES,
                 MaskType.NEAREST_NEIGHBOR, MaskType.THIN_STROKES,
                 MaskType.MEDIUM_STROKES, MaskType.THICK_STROKES)

LAMA_TYPES = (MaskType.LAMA_POLYGONAL, MaskType.LAMA_RECTANGLE)


class MaskPolicy(str, Enum):
    LAMA = 'lama'
    LAMA_PLUS = 'lama_plus'
    GENERAL = 'general'

    @property
    def types(self):
        if self is MaskPolicy.LAMA:
            return LAMA_TYPES
        if self is MaskPolicy.LAMA_PLUS:
            return LAMA_TYPES + (MaskType.NEAREST_NEIGHBOR, MaskType.EVERY_N_LINES)
        return GENERAL_TYPES


def sample_type(policy, rng):
    """Draws a mask type uniformly from the policy's type set.

    Args:
        policy (MaskPolicy): sampling policy.
        rng (np.random.Generator): seeded generator.

    Returns:
        MaskType
    """
    types = MaskPolicy(policy).types
    return types[int(rng.integers(len(types)))]


@dataclass
class Mask:
    """Binary hole map, 1 = masked (missing) pixel, 0 = known pixel."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2:
            raise MaskDimensionError(f'mask must be 2D, got shape {bits.shape}')
        if not np.isin(bits, (0, 1)).all():
            raise MaskInvariantError('mask values must be 0 or 1')
        bits = bits.astype(np.uint8)
        n_masked = int(bits.sum())
        if n_masked == 0 or n_masked == bits.size:
            raise MaskInvariantError(f'degenerate mask: {n_masked} of {bits.size} pixels masked')
        self.bits = bits

    @property
    def height(self):
        return self.bits.shape[0]

    @property
    def width(self):
        return self.bits.shape[1]

    def to_tensor(self, dtype=torch.float32):
        """(1, H, W) tensor view, ready to stack with an image."""
        return torch.from_numpy(self.bits.astype(np.float64)).to(dtype).unsqueeze(0)

    def __repr__(self):
        return f'Mask({self.height}x{self.width}, coverage={coverage(self):.4f})'

    def __eq__(self, other):
        return isinstance(other, Mask) and np.array_equal(self.bits, other.bits)


def coverage(mask):
    return float(mask.bits.sum()) / mask.bits.size
