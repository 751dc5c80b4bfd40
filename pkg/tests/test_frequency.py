import math

import numpy as np
import pytest
import torch

from inpaint.frequency import (artifact_score, checkerboard_score, ffl, focal_weight,
                               log_magnitude, ripple_score, spectrum_image)
from inpaint.losses import LossShapeError
from inpaint.numeric import DimensionError, fft2, grad_check


DTYPE = torch.float64


def rand(*shape, seed=0):
    return torch.rand(*shape, dtype=DTYPE, generator=torch.Generator().manual_seed(seed))


def brute_force_dft(x):
    m, n = x.shape
    a = np.arange(m)
    b = np.arange(n)
    rows = np.exp(-2j * math.pi * np.outer(a, a) / m)
    cols = np.exp(-2j * math.pi * np.outer(b, b) / n)
    out = np.zeros((m, n), dtype=np.complex128)
    for u in range(m):
        for v in range(n):
            out[u, v] = (x * rows[u][:, None] * cols[v][None, :]).sum()
    return out


def brute_force_ffl(x, xhat, alpha):
    per_channel = []
    for c in range(x.shape[0]):
        diff = brute_force_dft(x[c]) - brute_force_dft(xhat[c])
        w = np.abs(diff) ** alpha
        per_channel.append((w * np.abs(diff) ** 2).sum() / diff.size)
    return float(np.mean(per_channel))


def checkerboard(size):
    return ((torch.arange(size)[:, None] + torch.arange(size)[None, :]) % 2).to(DTYPE)


def sinusoid(size, k):
    b = torch.arange(size, dtype=DTYPE)
    row = 0.5 + 0.5 * torch.sin(2 * math.pi * k * b / size)
    return row[None, :].expand(size, size).clone()


def test_focal_weight_cases():
    fr = fft2(rand(8, 8, seed=1))
    assert torch.all(focal_weight(fr, fr.clone(), 1.0) == 0)

    ff = fr.clone()
    ff[2, 3] += 0.25
    w = focal_weight(fr, ff, 1.0)
    assert w[2, 3].item() == pytest.approx(0.25, abs=1e-12)

    ff = fft2(rand(8, 8, seed=2))
    torch.testing.assert_close(focal_weight(fr, ff, 2.0), (fr - ff).abs() ** 2, atol=1e-12, rtol=1e-12)


def test_focal_weight_shape_mismatch():
    with pytest.raises(DimensionError):
        focal_weight(fft2(rand(4, 4)), fft2(rand(4, 8)), 1.0)


def test_ffl_zero_and_single_pixel():
    x = rand(3, 8, 8)
    assert ffl(x, x.clone()).item() == 0
    value = ffl(torch.tensor([[[0.5]]], dtype=DTYPE), torch.tensor([[[0.25]]], dtype=DTYPE), 1.0)
    assert value.item() == pytest.approx(0.015625, abs=1e-15)


@pytest.mark.parametrize('seed', range(100))
def test_ffl_matches_brute_force(seed):
    x, xhat = rand(3, 8, 8, seed=2 * seed), rand(3, 8, 8, seed=2 * seed + 1)
    expected = brute_force_ffl(x.numpy(), xhat.numpy(), 1.0)
    assert ffl(x, xhat, 1.0).item() == pytest.approx(expected, abs=1e-9)


def test_ffl_alpha_two_matches_brute_force():
    x, xhat = rand(2, 8, 8, seed=3), rand(2, 8, 8, seed=4)
    assert ffl(x, xhat, 2.0).item() == pytest.approx(brute_force_ffl(x.numpy(), xhat.numpy(), 2.0), abs=1e-9)


def test_ffl_is_symmetric_and_non_negative():
    x, xhat = rand(3, 8, 8, seed=5), rand(3, 8, 8, seed=6)
    assert ffl(x, xhat).item() >= 0
    assert ffl(x, xhat).item() == pytest.approx(ffl(xhat, x).item(), abs=1e-12)


def test_ffl_gradient_with_frozen_weight():
    x, xhat = rand(3, 8, 8, seed=7), rand(3, 8, 8, seed=8)
    weight = focal_weight(fft2(x[None]), fft2(xhat[None]), 1.0)
    report = grad_check(lambda p: ffl(x, p, 1.0, weight=weight).value, xhat, step=1e-4, tolerance=1e-5)
    assert report.passed, report


def test_ffl_shape_mismatch():
    with pytest.raises(LossShapeError):
        ffl(rand(3, 8, 8), rand(3, 8, 4))


def test_spectrum_image_constant():
    image = spectrum_image(torch.full((3, 8, 8), 0.4, dtype=DTYPE))
    assert image[4, 4].item() == 1.0
    rest = image.clone()
    rest[4, 4] = 0
    assert rest.abs().max().item() < 1e-12


def test_spectrum_image_sinusoid_peaks():
    size, k = 16, 3
    image = spectrum_image(sinusoid(size, k))
    centre = size // 2
    left, right = image[centre, centre - k].item(), image[centre, centre + k].item()
    assert left == pytest.approx(right, abs=1e-12)
    assert left > 0.5
    others = image.clone()
    others[centre, centre] = others[centre, centre - k] = others[centre, centre + k] = 0
    assert others.max().item() < 1e-6


def test_log_magnitude_matches_brute_force():
    x = rand(3, 8, 8, seed=9)
    expected = np.mean([np.log1p(np.abs(brute_force_dft(c))) for c in x.numpy()], axis=0)
    expected = np.fft.fftshift(expected)
    np.testing.assert_allclose(log_magnitude(x).numpy(), expected, atol=1e-9, rtol=0)


def test_spectrum_image_point_symmetric():
    image = spectrum_image(rand(3, 16, 16, seed=10)).numpy()
    m, n = image.shape
    for i in range(m):
        for j in range(n):
            assert image[i, j] == pytest.approx(image[(m - i) % m, (n - j) % n], abs=1e-12)


def test_checkerboard_score_cases():
    assert checkerboard_score(torch.full((3, 16, 16), 0.5, dtype=DTYPE)) == 0.0
    assert checkerboard_score(checkerboard(16)[None]) == pytest.approx(1.0, abs=1e-12)

    coords = torch.arange(32, dtype=DTYPE) - 15.5
    blob = torch.exp(-(coords[:, None] ** 2 + coords[None, :] ** 2) / (2 * 6.0 ** 2))
    assert checkerboard_score(blob[None]) < 0.05


def test_checkerboard_score_odd_dims():
    with pytest.raises(DimensionError):
        checkerboard_score(rand(3, 15, 16))


def test_checkerboard_score_decreases_as_checkerboard_fades():
    board = checkerboard(16)
    idx = torch.arange(16, dtype=DTYPE)
    ramp = (idx[:, None] + idx[None, :]) / 30.0
    scores = [checkerboard_score(((1 - t) * board + t * ramp)[None]) for t in (0.0, 0.25, 0.5, 0.75)]
    assert all(a > b for a, b in zip(scores, scores[1:])), scores


def test_ripple_score_cases():
    assert ripple_score(torch.full((3, 16, 16), 0.2, dtype=DTYPE)) == 0.0
    assert ripple_score(sinusoid(32, 5)[None]) == pytest.approx(1.0, abs=1e-9)


def test_ripple_score_white_noise():
    scores = [ripple_score(rand(3, 32, 32, seed=seed)) for seed in range(100)]
    assert max(scores) < 0.1


def test_artifact_score_is_batch_mean():
    a, b = checkerboard(16).expand(3, 16, 16), rand(3, 16, 16, seed=11)
    expected = np.mean([checkerboard_score(t) + ripple_score(t) for t in (a, b)])
    assert artifact_score(torch.stack([a, b])) == pytest.approx(expected, abs=1e-12)


def test_diagnostics_accept_tensors_on_the_graph():
    x = rand(3, 16, 16, seed=12).requires_grad_(True)
    assert checkerboard_score(x) >= 0
    assert ripple_score(x) >= 0
    assert spectrum_image(x).shape == (16, 16)
