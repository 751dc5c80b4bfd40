import logging
import math

import numpy as np
import torch
from scipy import linalg

from inpaint.numeric import conv2d


logger = logging.getLogger(__name__)

PSNR_CAP = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
EIGEN_FLOOR = 1e-12


class MetricError(ValueError):
    pass


class TooFewSamplesError(MetricError):
    pass


class ImageTooSmallError(MetricError):
    pass


class EigenSolveError(MetricError):
    pass


def composite(x, xhat, m):
    """x (1 - M) + x_hat M: known pixels kept, the prediction pasted into the hole."""
    if x.shape != xhat.shape:
        raise MetricError(f'shape mismatch: {tuple(x.shape)} vs {tuple(xhat.shape)}')
    if m.shape[-2:] != x.shape[-2:]:
        raise MetricError(f'mask {tuple(m.shape)} does not match image {tuple(x.shape)}')
    return x * (1 - m) + xhat * m


def _as_double(x):
    if not torch.is_tensor(x):
        x = torch.as_tensor(np.asarray(x))
    return x.detach().to(torch.float64)


def psnr(a, b):
    """10 log10(1 / MSE) for images in [0, 1]; identical images give PSNR_CAP."""
    a, b = _as_double(a), _as_double(b)
    if a.shape != b.shape:
        raise MetricError(f'shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}')
    mse = float(((a - b) ** 2).mean())
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10 * math.log10(1.0 / mse))


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    coords = torch.arange(size, dtype=torch.float64) - (size - 1) / 2
    g = torch.exp(-coords ** 2 / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g)


def ssim(a, b, data_range=1.0):
    """Mean structural similarity.

    11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03, valid windows only,
    channels averaged. Identical inputs give exactly 1.

    Args:
        a, b: (H, W), (C, H, W) or (B, C, H, W).
    """
    a, b = _as_double(a), _as_double(b)
    if a.shape != b.shape:
        raise MetricError(f'shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}')
    if min(a.shape[-2:]) < SSIM_WINDOW:
        raise ImageTooSmallError(f'ssim needs spatial dims >= {SSIM_WINDOW}, got {tuple(a.shape[-2:])}')

    h, w = a.shape[-2:]
    a = a.reshape(-1, 1, h, w)
    b = b.reshape(-1, 1, h, w)
    window = gaussian_window()[None, None]

    def filt(x):
        return conv2d(x, window)

    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = filt(a), filt(b)
    # products written symmetrically so ssim(a, a) is exactly 1
    var_a = filt(a * a) - mu_a * mu_a
    var_b = filt(b * b) - mu_b * mu_b
    cov = filt(a * b) - mu_a * mu_b

    numerator = (2 * (mu_a * mu_b) + c1) * (2 * cov + c2)
    denominator = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float((numerator / denominator).mean())


def _moments(features):
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise MetricError(f'features must be (n, d), got shape {features.shape}')
    n, d = features.shape
    if n < d + 1:
        raise TooFewSamplesError(f'proxy-FID needs at least {d + 1} samples of dim {d}, got {n}')
    return features.mean(axis=0), np.cov(features, rowvar=False, ddof=1)


def frechet_distance(mu_r, sigma_r, mu_f, sigma_f):
    """||mu_r - mu_f||^2 + Tr(S_r + S_f - 2 (S_r S_f)^(1/2)).

    The trace of the cross term is computed as sum sqrt(eig(S_r^(1/2) S_f
    S_r^(1/2))), which only needs symmetric eigendecompositions; eigenvalues
    below EIGEN_FLOOR are clamped to zero.
    """
    try:
        w, v = linalg.eigh(sigma_r)
        sqrt_r = (v * np.sqrt(np.where(w > EIGEN_FLOOR, w, 0.0))) @ v.T
        inner = sqrt_r @ sigma_f @ sqrt_r
        cross = linalg.eigh((inner + inner.T) / 2, eigvals_only=True)
    except (linalg.LinAlgError, ValueError) as e:
        raise EigenSolveError(f'eigendecomposition did not converge: {e}') from e

    trace_cross = float(np.sqrt(np.where(cross > EIGEN_FLOOR, cross, 0.0)).sum())
    diff = mu_r - mu_f
    value = float(diff @ diff + np.trace(sigma_r) + np.trace(sigma_f) - 2 * trace_cross)
    return max(value, 0.0)


def proxy_fid(real_features, fake_features):
    """Frechet distance between Gaussian fits of two (n, d) feature sets from
    the frozen extractor. Not comparable with Inception-based FID."""
    mu_r, sigma_r = _moments(real_features)
    mu_f, sigma_f = _moments(fake_features)
    if mu_r.shape != mu_f.shape:
        raise MetricError(f'feature dims differ: {mu_r.shape[0]} vs {mu_f.shape[0]}')
    return frechet_distance(mu_r, sigma_r, mu_f, sigma_f)


def extract_features(images, extractor, batch_size=32):
    """Pooled extractor features, (n, feature_dim) float64 array."""
    features = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            batch = images[start:start + batch_size].to(next(extractor.parameters()).dtype)
            features.append(extractor.pooled(batch).to(torch.float64).numpy())
    return np.concatenate(features, axis=0)
