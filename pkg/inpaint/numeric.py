import logging
import math
from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn.functional as F


logger = logging.getLogger(__name__)


class DimensionError(ValueError):
    pass


class SymmetryError(ValueError):
    pass


class EvaluationError(RuntimeError):
    pass


def _is_power_of_two(n):
    return n > 0 and (n & (n - 1)) == 0


def _complex_dtype(dtype):
    if dtype in (torch.complex64, torch.complex128):
        return dtype
    return torch.complex128 if dtype == torch.float64 else torch.complex64


def _twiddles(n, sign, dtype):
    # angles in f64 so the f32 path only loses precision once
    k = torch.arange(n, dtype=torch.float64)
    angle = sign * 2.0 * math.pi * k / n
    return torch.polar(torch.ones_like(angle), angle).to(dtype)


def _bit_reversed(n):
    bits = n.bit_length() - 1
    idx = torch.arange(n)
    rev = torch.zeros_like(idx)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def _dft_last_dim(x, sign):
    n = x.shape[-1]
    k = torch.arange(n, dtype=torch.float64)
    angle = sign * 2.0 * math.pi * torch.outer(k, k).remainder(n) / n
    basis = torch.polar(torch.ones_like(angle), angle).to(x.dtype)
    return x @ basis.transpose(0, 1)


def _fft_last_dim(x, sign=-1.0):
    """Iterative radix-2 Cooley-Tukey along the last dimension.

    Non power-of-two lengths fall back to the direct O(n^2) transform.
    """
    n = x.shape[-1]
    if n == 1:
        return x
    if not _is_power_of_two(n):
        return _dft_last_dim(x, sign)

    lead = x.shape[:-1]
    x = x[..., _bit_reversed(n)]
    size = 2
    while size <= n:
        half = size // 2
        tw = _twiddles(size, sign, x.dtype)[:half]
        blocks = x.reshape(*lead, n // size, size)
        even = blocks[..., :half]
        odd = blocks[..., half:] * tw
        x = torch.cat([even + odd, even - odd], dim=-1).reshape(*lead, n)
        size *= 2
    return x


def fft2(x):
    """Unnormalized forward 2D DFT over the last two dimensions.

    G(u, v) = sum_{a,b} x(a, b) exp(-2 pi i (ua/M + vb/N)).

    Args:
        x (torch.Tensor): real (or complex) tensor of shape (..., M, N).

    Returns:
        torch.Tensor: complex tensor of shape (..., M, N).
    """
    if x.dim() < 2 or x.shape[-1] < 1 or x.shape[-2] < 1:
        raise DimensionError(f'fft2 needs a non-empty (..., M, N) grid, got shape {tuple(x.shape)}')

    z = x.to(_complex_dtype(x.dtype))
    z = _fft_last_dim(z)
    z = _fft_last_dim(z.transpose(-1, -2)).transpose(-1, -2)
    return z


def ifft2(g, tol=1e-9):
    """Inverse of `fft2`, applying the 1/(MN) normalization.

    Raises:
        SymmetryError: if the result carries an imaginary residue above
            `tol` (relative to max(1, max |real|)), i.e. `g` did not come
            from a real signal.
    """
    if g.dim() < 2 or g.shape[-1] < 1 or g.shape[-2] < 1:
        raise DimensionError(f'ifft2 needs a non-empty (..., M, N) grid, got shape {tuple(g.shape)}')

    m, n = g.shape[-2], g.shape[-1]
    z = g.to(_complex_dtype(g.dtype))
    z = _fft_last_dim(z, sign=1.0)
    z = _fft_last_dim(z.transpose(-1, -2), sign=1.0).transpose(-1, -2)
    z = z / (m * n)

    scale = max(1.0, float(z.real.abs().max()))
    residue = float(z.imag.abs().max())
    if residue > tol * scale:
        raise SymmetryError(f'imaginary residue {residue:.3e} exceeds {tol:.1e}; '
                            'input is not conjugate-symmetric')
    return z.real


def conv2d(x, kernel, stride=1, dilation=1, padding=0):
    """Zero-padded cross-correlation.

    Args:
        x (torch.Tensor): (C, H, W) or (B, C, H, W).
        kernel (torch.Tensor): (O, C, Kh, Kw).

    Returns:
        torch.Tensor: (O, H', W') or (B, O, H', W').
    """
    unbatched = x.dim() == 3
    if unbatched:
        x = x.unsqueeze(0)
    if x.dim() != 4 or kernel.dim() != 4:
        raise DimensionError(f'conv2d expects (B,)C,H,W input and O,C,Kh,Kw kernel, '
                             f'got {tuple(x.shape)} and {tuple(kernel.shape)}')
    if x.shape[1] != kernel.shape[1]:
        raise DimensionError(f'input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}')

    h, w = x.shape[-2] + 2 * padding, x.shape[-1] + 2 * padding
    kh = (kernel.shape[-2] - 1) * dilation + 1
    kw = (kernel.shape[-1] - 1) * dilation + 1
    if kh > h or kw > w:
        raise DimensionError(f'effective kernel {kh}x{kw} larger than padded input {h}x{w}')

    out = F.conv2d(x, kernel, stride=stride, dilation=dilation, padding=padding)
    return out.squeeze(0) if unbatched else out


@dataclass(frozen=True)
class GradReport:
    max_abs_err: float
    max_rel_err: float
    worst_index: int
    passed: bool
    tolerance: float

    def to_dict(self):
        return {'max_abs_err': self.max_abs_err, 'max_rel_err': self.max_rel_err,
                'worst_index': self.worst_index, 'passed': self.passed,
                'tolerance': self.tolerance}


def _evaluate(scalar_fn, point):
    value = scalar_fn(point)
    if not torch.is_tensor(value):
        value = torch.as_tensor(value, dtype=point.dtype)
    if value.numel() != 1:
        raise EvaluationError(f'scalar_fn must return a scalar, got shape {tuple(value.shape)}')
    if not torch.isfinite(value).all():
        raise EvaluationError(f'scalar_fn returned a non-finite value ({value.item()})')
    return value.reshape(())


def grad_check(scalar_fn: Callable[[torch.Tensor], torch.Tensor], point, step=1e-5, tolerance=1e-5):
    """Compares the autograd gradient of `scalar_fn` at `point` with central
    differences (f(x+h) - f(x-h)) / 2h, one coordinate at a time.

    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    """
    if step <= 0:
        raise ValueError(f'step must be positive, got {step}')

    point = point.detach().to(torch.float64).clone().requires_grad_(True)
    value = _evaluate(scalar_fn, point)
    (analytic,) = torch.autograd.grad(value, point, allow_unused=True)
    if analytic is None:
        analytic = torch.zeros_like(point)
    analytic = analytic.detach().reshape(-1)

    # grad mode stays on: some objectives (gradient penalty) differentiate internally
    base = point.detach()
    numeric = torch.zeros_like(analytic)
    for i in range(base.numel()):
        shifted = base.clone().reshape(-1)
        shifted[i] += step
        f_plus = _evaluate(scalar_fn, shifted.reshape(base.shape)).detach()
        shifted[i] -= 2 * step
        f_minus = _evaluate(scalar_fn, shifted.reshape(base.shape)).detach()
        numeric[i] = (f_plus - f_minus) / (2 * step)

    abs_err = (analytic - numeric).abs()
    denom = torch.maximum(torch.maximum(analytic.abs(), numeric.abs()),
                          torch.full_like(abs_err, 1e-8))
    rel_err = abs_err / denom
    worst = int(torch.argmax(rel_err)) if rel_err.numel() else 0
    max_rel = float(rel_err.max()) if rel_err.numel() else 0.0
    max_abs = float(abs_err.max()) if abs_err.numel() else 0.0

    return GradReport(max_abs_err=max_abs, max_rel_err=max_rel, worst_index=worst,
                      passed=max_rel <= tolerance, tolerance=tolerance)
