import logging

import numpy as np
import torch

from inpaint.losses import LossShapeError, LossValue, as_batch
from inpaint.numeric import DimensionError, fft2


logger = logging.getLogger(__name__)

# a bin counts as a ripple peak above this multiple of the median non-DC magnitude
RIPPLE_PEAK_FACTOR = 8.0
# non-DC energy below this fraction of the DC energy is treated as zero
ENERGY_FLOOR = 1e-20


def _power(z):
    return z.real.pow(2) + z.imag.pow(2)


def focal_weight(fr, ff, alpha=1.0):
    """w(u, v) = |F_r(u, v) - F_f(u, v)|^alpha, detached from the graph.

    Bins where the spectra agree get exactly zero weight for every alpha.
    """
    if fr.shape != ff.shape:
        raise DimensionError(f'spectra differ in shape: {tuple(fr.shape)} vs {tuple(ff.shape)}')
    magnitude = _power(fr - ff).detach().sqrt()
    if alpha == 1:
        return magnitude
    return torch.where(magnitude > 0, magnitude.pow(alpha), torch.zeros_like(magnitude))


def ffl(x, xhat, alpha=1.0, weight=None):
    """Focal frequency loss.

    Each channel is transformed independently; per channel the loss is
    (1 / MN) sum_{u,v} w(u, v) |F_r(u, v) - F_f(u, v)|^2, then averaged over
    channels and batch. The focal weight is a constant of the objective.

    Args:
        x (torch.Tensor): target, (C, H, W) or (B, C, H, W).
        xhat (torch.Tensor): prediction, same shape.
        alpha (float): focal exponent.
        weight (torch.Tensor, optional): precomputed frozen weight grid; when
            given it replaces the weight computed at this evaluation point.

    Returns:
        LossValue
    """
    if x.shape != xhat.shape:
        raise LossShapeError(f'shape mismatch: {tuple(x.shape)} vs {tuple(xhat.shape)}')
    x, xhat = as_batch(x), as_batch(xhat)
    m, n = x.shape[-2:]

    fr = fft2(x)
    ff = fft2(xhat)
    w = focal_weight(fr, ff, alpha) if weight is None else weight.detach()
    per_channel = (w * _power(fr - ff)).sum(dim=(-2, -1)) / (m * n)
    value = per_channel.mean()
    return LossValue(value, {'ffl': float(value.detach())})


def _channels(x):
    if x.dim() == 2:
        return x.unsqueeze(0)
    if x.dim() != 3:
        raise DimensionError(f'expected (H, W) or (C, H, W), got {tuple(x.shape)}')
    return x


def log_magnitude(x):
    """Channel-averaged log(1 + |F|) with DC moved to the center, unnormalized."""
    spectrum = fft2(_channels(x).detach().to(torch.float64))
    magnitude = _power(spectrum).sqrt()
    return torch.fft.fftshift(torch.log1p(magnitude).mean(dim=0), dim=(-2, -1))


def spectrum_image(x):
    """Log-magnitude spectrum scaled to [0, 1], DC at (M // 2, N // 2)."""
    grid = log_magnitude(x)
    low, high = grid.min(), grid.max()
    if high <= low:
        return torch.zeros_like(grid)
    return (grid - low) / (high - low)


def _bin_energy(x):
    """Per-bin spectral energy summed over channels with DC zeroed, and the
    non-DC total (0 when it is only rounding noise)."""
    energy = _power(fft2(_channels(x).detach().to(torch.float64))).sum(dim=0)
    dc = float(energy[0, 0])
    energy[0, 0] = 0
    total = float(energy.sum())
    if total <= ENERGY_FLOOR * max(dc, 1.0):
        total = 0.0
    return energy, total


def checkerboard_score(x):
    """Share of non-DC spectral energy in the Nyquist row or column.

    Args:
        x (torch.Tensor): (H, W) or (C, H, W) with even H and W.

    Returns:
        float: in [0, 1]; 0 for an image with no non-DC energy.
    """
    m, n = x.shape[-2:]
    if m % 2 or n % 2:
        raise DimensionError(f'checkerboard score needs even dims, got {m}x{n}')

    energy, total = _bin_energy(x)
    if total <= 0:
        return 0.0
    nyquist = torch.zeros_like(energy, dtype=torch.bool)
    nyquist[m // 2, :] = True
    nyquist[:, n // 2] = True
    return float(energy[nyquist].sum()) / total


def ripple_score(x):
    """Share of non-DC energy held by isolated spectral peaks.

    A peak is a non-DC bin whose magnitude exceeds RIPPLE_PEAK_FACTOR times
    the median non-DC magnitude.
    """
    energy, total = _bin_energy(x)
    if total <= 0:
        return 0.0

    non_dc = np.ones(energy.shape, dtype=bool)
    non_dc[0, 0] = False
    magnitude = energy.sqrt().numpy()[non_dc]
    threshold = RIPPLE_PEAK_FACTOR * float(np.median(magnitude))
    peaks = energy.numpy()[non_dc][magnitude > threshold]
    return float(peaks.sum()) / total


def artifact_score(x):
    """checkerboard_score + ripple_score, averaged over a batch."""
    images = as_batch(x.detach())
    scores = [checkerboard_score(image) + ripple_score(image) for image in images]
    return float(np.mean(scores))
