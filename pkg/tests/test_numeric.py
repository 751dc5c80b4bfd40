import itertools
import math

import numpy as np
import pytest
import torch

from inpaint.numeric import (DimensionError, EvaluationError, SymmetryError, conv2d, fft2,
                             grad_check, ifft2)


def brute_force_dft(x):
    m, n = x.shape
    out = np.zeros((m, n), dtype=np.complex128)
    for u in range(m):
        for v in range(n):
            for a in range(m):
                for b in range(n):
                    out[u, v] += x[a, b] * np.exp(-2j * math.pi * (u * a / m + v * b / n))
    return out


def naive_conv(x, kernel, stride, dilation, padding):
    c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    padded = np.zeros((c, h + 2 * padding, w + 2 * padding))
    padded[:, padding:padding + h, padding:padding + w] = x
    out_h = (h + 2 * padding - dilation * (kh - 1) - 1) // stride + 1
    out_w = (w + 2 * padding - dilation * (kw - 1) - 1) // stride + 1
    out = np.zeros((o, out_h, out_w))
    for oc in range(o):
        for i in range(out_h):
            for j in range(out_w):
                for ic in range(c):
                    for p in range(kh):
                        for q in range(kw):
                            out[oc, i, j] += (kernel[oc, ic, p, q]
                                              * padded[ic, i * stride + p * dilation, j * stride + q * dilation])
    return out


def test_fft2_constant_is_dc_only():
    g = fft2(torch.full((4, 8), 2.5, dtype=torch.float64))
    assert g[0, 0].real.item() == pytest.approx(2.5 * 32)
    rest = g.clone()
    rest[0, 0] = 0
    assert rest.abs().max().item() < 1e-12


def test_fft2_single_element():
    g = fft2(torch.tensor([[3.0]], dtype=torch.float64))
    assert g.shape == (1, 1)
    assert g[0, 0].item() == 3.0


@pytest.mark.parametrize('shape', [(4, 4), (8, 4), (3, 5), (6, 8)])
def test_fft2_matches_brute_force(shape):
    x = np.random.default_rng(0).random(shape)
    g = fft2(torch.from_numpy(x)).numpy()
    np.testing.assert_allclose(g, brute_force_dft(x), atol=1e-10, rtol=0)


def test_fft2_conjugate_symmetry():
    x = torch.rand(8, 8, dtype=torch.float64, generator=torch.Generator().manual_seed(1))
    g = fft2(x)
    flipped = torch.roll(torch.flip(g, dims=(0, 1)), shifts=(1, 1), dims=(0, 1))
    torch.testing.assert_close(g, flipped.conj(), atol=1e-10, rtol=0)


@pytest.mark.parametrize('size', [1, 2, 4, 8, 16, 32])
def test_parseval(size):
    x = torch.randn(size, size, dtype=torch.float64, generator=torch.Generator().manual_seed(size))
    g = fft2(x)
    lhs = float((g.abs() ** 2).sum())
    rhs = size * size * float((x ** 2).sum())
    assert abs(lhs - rhs) <= 1e-9 * rhs


def test_linearity():
    gen = torch.Generator().manual_seed(2)
    x = torch.randn(8, 16, dtype=torch.float64, generator=gen)
    y = torch.randn(8, 16, dtype=torch.float64, generator=gen)
    torch.testing.assert_close(fft2(2.0 * x - 0.5 * y), 2.0 * fft2(x) - 0.5 * fft2(y), atol=1e-10, rtol=0)


@pytest.mark.parametrize('shape', [(8, 8), (32, 32), (5, 7), (2, 3, 16, 8)])
def test_roundtrip(shape):
    x = torch.rand(*shape, dtype=torch.float64, generator=torch.Generator().manual_seed(3))
    torch.testing.assert_close(ifft2(fft2(x)), x, atol=1e-10, rtol=0)


def test_ifft2_zero_and_dc():
    assert torch.equal(ifft2(torch.zeros(4, 4, dtype=torch.complex128)), torch.zeros(4, 4, dtype=torch.float64))
    g = torch.zeros(4, 8, dtype=torch.complex128)
    g[0, 0] = 32
    torch.testing.assert_close(ifft2(g), torch.ones(4, 8, dtype=torch.float64))


def test_ifft2_rejects_asymmetric_input():
    g = torch.zeros(4, 4, dtype=torch.complex128)
    g[0, 1] = 1.0
    with pytest.raises(SymmetryError):
        ifft2(g)


def test_fft2_rejects_empty():
    with pytest.raises(DimensionError):
        fft2(torch.zeros(0, 4))
    with pytest.raises(DimensionError):
        fft2(torch.zeros(4))


def test_conv2d_identity_kernel():
    x = torch.rand(2, 5, 5, dtype=torch.float64)
    kernel = torch.zeros(2, 2, 1, 1, dtype=torch.float64)
    kernel[0, 0] = kernel[1, 1] = 1.0
    torch.testing.assert_close(conv2d(x, kernel), x)


def test_conv2d_box_sum():
    out = conv2d(torch.ones(1, 5, 5, dtype=torch.float64), torch.ones(1, 1, 3, 3, dtype=torch.float64))
    assert out[0, 1, 1].item() == 9.0


@pytest.mark.parametrize('h,w,k,stride,dilation,padding', [
    (h, w, k, s, d, p)
    for h, w, k, s, d, p in itertools.product([4, 8], [3, 8], [1, 3], [1, 2], [1, 2], [0, 1])
    if (k - 1) * d + 1 <= min(h, w) + 2 * p
])
def test_conv2d_matches_naive(h, w, k, stride, dilation, padding):
    rng = np.random.default_rng(h * 1000 + w * 100 + k * 10 + stride)
    x = rng.random((2, h, w))
    kernel = rng.random((3, 2, k, k))
    out = conv2d(torch.from_numpy(x), torch.from_numpy(kernel), stride, dilation, padding).numpy()
    np.testing.assert_allclose(out, naive_conv(x, kernel, stride, dilation, padding), atol=1e-12, rtol=0)


def test_conv2d_kernel_too_large():
    with pytest.raises(DimensionError):
        conv2d(torch.ones(1, 2, 2), torch.ones(1, 1, 3, 3))


def test_grad_check_quadratic():
    point = torch.randn(3, 4, dtype=torch.float64, generator=torch.Generator().manual_seed(4))
    report = grad_check(lambda x: (x ** 2).sum(), point, step=1e-5)
    assert report.max_rel_err <= 1e-7
    assert report.passed


def test_grad_check_abs_away_from_kink():
    gen = torch.Generator().manual_seed(5)
    sign = torch.where(torch.rand(10, generator=gen) > 0.5, 1.0, -1.0).double()
    point = sign * (0.1 + torch.rand(10, generator=gen, dtype=torch.float64))
    report = grad_check(lambda x: x.abs().sum(), point, step=1e-5, tolerance=1e-6)
    assert report.passed


def test_grad_check_detects_wrong_gradient():
    class WrongSquare(torch.autograd.Function):
        @staticmethod
        def forward(ctx, x):
            ctx.save_for_backward(x)
            return (x ** 2).sum()

        @staticmethod
        def backward(ctx, grad):
            (x,) = ctx.saved_tensors
            return grad * 3 * x

    report = grad_check(WrongSquare.apply, torch.ones(4, dtype=torch.float64))
    assert not report.passed
    assert report.max_rel_err > 0.1


def test_grad_check_non_finite():
    with pytest.raises(EvaluationError):
        grad_check(lambda x: torch.log(x).sum(), torch.tensor([-1.0, 1.0], dtype=torch.float64))


def test_grad_check_rejects_bad_step():
    with pytest.raises(ValueError):
        grad_check(lambda x: x.sum(), torch.ones(2, dtype=torch.float64), step=0)
