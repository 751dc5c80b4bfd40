"""Registry of gradient suites: every loss and the FFC model checked
against central finite differences in f64. The `gradcheck` subcommand and
the test-suite both run `SUITES`."""
import logging
from dataclasses import dataclass
from typing import Callable

import torch
import torch.nn as nn
from torch.func import functional_call

from inpaint.frequency import ffl, focal_weight
from inpaint.losses import (LossWeights, adversarial_d, adversarial_g, feature_match,
                            gradient_penalty, joint_total, l1_masked, lama_total,
                            perceptual, tv)
from inpaint.model import FeatureExtractor, FfcConfig, FfcLayer, Generator, SpectralTransform, init_params
from inpaint.numeric import fft2, grad_check


logger = logging.getLogger(__name__)

LOSS_STEP = 1e-4
LOSS_TOLERANCE = 1e-5
MODEL_TOLERANCE = 1e-4
DTYPE = torch.float64


@dataclass
class Suite:
    name: str
    run: Callable[[int], object]
    tolerance: float


def _rand(gen, *shape):
    return torch.rand(*shape, generator=gen, dtype=DTYPE)


def _away_from(base, gen, margin=0.1):
    """A point whose every coordinate differs from `base` by more than `margin`."""
    sign = torch.where(_rand(gen, *base.shape) > 0.5, 1.0, -1.0).to(DTYPE)
    return base + sign * (margin + 0.4 * _rand(gen, *base.shape))


def _mask(gen, h, w):
    m = (_rand(gen, 1, h, w) > 0.5).to(DTYPE)
    m[0, 0, 0], m[0, -1, -1] = 1.0, 0.0
    return m


class ToyDiscriminator(nn.Module):
    """Two smooth conv stages; stands in for the patch discriminator where
    finite differences must not cross activation kinks."""

    def __init__(self, seed=0):
        super().__init__()
        self.stages = nn.ModuleList([
            nn.Sequential(nn.Conv2d(3, 4, 3, stride=2, padding=1), nn.GELU()),
            nn.Sequential(nn.Conv2d(4, 4, 3, padding=1), nn.Tanh()),
        ])
        self.logits = nn.Conv2d(4, 1, 3, padding=1)
        self.to(DTYPE)
        init_params(self, seed)
        with torch.no_grad():
            for module in self.modules():
                if isinstance(module, nn.Conv2d):
                    module.bias.copy_(0.1 * torch.ones_like(module.bias))

    def forward(self, x):
        features = []
        for stage in self.stages:
            x = stage(x)
            features.append(x)
        return self.logits(x), features


def _check(fn, point, tolerance=LOSS_TOLERANCE, step=LOSS_STEP):
    return grad_check(fn, point, step=step, tolerance=tolerance)


def suite_l1_masked(seed):
    gen = torch.Generator().manual_seed(seed)
    x = _rand(gen, 3, 8, 8)
    m = _mask(gen, 8, 8)
    return _check(lambda xhat: l1_masked(x, xhat, m).value, _away_from(x, gen))


def suite_perceptual(seed):
    gen = torch.Generator().manual_seed(seed)
    extractor = FeatureExtractor(dtype=DTYPE)
    x = _rand(gen, 3, 8, 8)
    return _check(lambda xhat: perceptual(x, xhat, extractor).value, _rand(gen, 3, 8, 8))


def suite_adversarial_d(seed):
    gen = torch.Generator().manual_seed(seed)
    d_real = 4 * _rand(gen, 1, 1, 4, 4) - 2
    m = _mask(gen, 4, 4)[None]
    return _check(lambda d_fake: adversarial_d(d_real, d_fake, m).value, 4 * _rand(gen, 1, 1, 4, 4) - 2)


def suite_adversarial_g(seed):
    gen = torch.Generator().manual_seed(seed)
    return _check(lambda d_fake: adversarial_g(d_fake).value, 4 * _rand(gen, 1, 1, 4, 4) - 2)


def suite_gradient_penalty(seed):
    gen = torch.Generator().manual_seed(seed)
    d = ToyDiscriminator(seed)
    return _check(lambda x: gradient_penalty(d, x).value, _rand(gen, 1, 3, 8, 8))


def suite_feature_match(seed):
    gen = torch.Generator().manual_seed(seed)
    real = [_rand(gen, 1, 4, 4, 4), _rand(gen, 1, 8, 2, 2)]
    sizes = [t.numel() for t in real]
    flat_real = torch.cat([t.reshape(-1) for t in real])

    def fn(flat_fake):
        fake = [chunk.reshape(t.shape) for chunk, t in zip(flat_fake.split(sizes), real)]
        return feature_match(real, fake).value

    return _check(fn, _away_from(flat_real, gen))


def suite_tv(seed):
    gen = torch.Generator().manual_seed(seed)
    return _check(lambda xhat: tv(xhat, 2.0).value, _rand(gen, 3, 8, 8))


def suite_tv_beta3(seed):
    gen = torch.Generator().manual_seed(seed)
    return _check(lambda xhat: tv(xhat, 3.0).value, _rand(gen, 3, 8, 8))


def suite_ffl(seed):
    gen = torch.Generator().manual_seed(seed)
    x = _rand(gen, 3, 8, 8)
    xhat = _rand(gen, 3, 8, 8)
    # the differentiated objective keeps w fixed at the evaluation point
    weight = focal_weight(fft2(x[None]), fft2(xhat[None]), 1.0)
    return _check(lambda p: ffl(x, p, 1.0, weight=weight).value, xhat)


def _composite_losses(x, xhat, m, d, extractor, weights, ffl_weight):
    d_fake, feats_fake = d(xhat[None])
    with torch.no_grad():
        _, feats_real = d(x[None])
    components = {
        'l1': l1_masked(x, xhat, m),
        'adv': adversarial_g(d_fake),
        'pl': perceptual(x, xhat, extractor),
        'fm': feature_match(feats_real, feats_fake),
    }
    lama = lama_total(components, weights)
    return lama, tv(xhat, weights.beta_tv), ffl(x, xhat, weights.alpha_ffl, weight=ffl_weight)


def _composite_setup(seed):
    gen = torch.Generator().manual_seed(seed)
    x = _rand(gen, 3, 16, 16)
    xhat = _away_from(x, gen)
    m = _mask(gen, 16, 16)
    weight = focal_weight(fft2(x[None]), fft2(xhat[None]), 1.0)
    return x, xhat, m, ToyDiscriminator(seed), FeatureExtractor(dtype=DTYPE), weight


def suite_lama_total(seed):
    x, xhat, m, d, extractor, weight = _composite_setup(seed)
    weights = LossWeights()
    return _check(lambda p: _composite_losses(x, p, m, d, extractor, weights, weight)[0].value, xhat)


def suite_joint_total(seed):
    x, xhat, m, d, extractor, weight = _composite_setup(seed)
    weights = LossWeights()

    def fn(p):
        lama, tv_loss, ffl_loss = _composite_losses(x, p, m, d, extractor, weights, weight)
        return joint_total(lama, tv_loss, ffl_loss, weights).value

    return _check(fn, xhat)


def smooth_config(**overrides):
    """Small generator config with GELU so finite differences see a smooth map."""
    values = dict(base_width=4, global_ratio=0.5, n_down=3, n_residual=1, n_up=3,
                  norm='instance', activation='gelu')
    values.update(overrides)
    return FfcConfig(**values)


def suite_spectral_transform(seed):
    """Checked inside a residual `x + st(x)` weighted by [0.5, 1.5), so no
    input coordinate has a gradient down at the 1e-8 relative-error floor."""
    gen = torch.Generator().manual_seed(seed)
    st = init_params(SpectralTransform(2, 'instance', 'gelu').to(DTYPE), seed)
    r = 0.5 + _rand(gen, 1, 2, 8, 8)
    return _check(lambda x: ((x + st(x)) * r).sum(), _rand(gen, 1, 2, 8, 8), tolerance=MODEL_TOLERANCE)


def suite_ffc_block(seed):
    gen = torch.Generator().manual_seed(seed)
    first = init_params(FfcLayer(2, 2, 'instance', 'gelu').to(DTYPE), seed)
    second = init_params(FfcLayer(2, 2, 'instance', 'gelu').to(DTYPE), seed + 1)
    r = _rand(gen, 1, 4, 16, 16)

    def fn(x):
        y_local, y_global = second(*first(x[:, :2], x[:, 2:]))
        return (torch.cat([y_local, y_global], dim=1) * r).sum()

    return _check(fn, _rand(gen, 1, 4, 16, 16), tolerance=MODEL_TOLERANCE)


def _param_point(param, gen, n_coords):
    count = param.numel()
    return torch.randperm(count, generator=gen)[:min(n_coords, count)]


def generator_param_reports(seed, n_coords=2):
    """One grad_check per parameter tensor of a smooth generator, over
    `n_coords` randomly chosen coordinates of that tensor."""
    gen = torch.Generator().manual_seed(seed)
    model = init_params(Generator(smooth_config()).to(DTYPE), seed)
    x = _rand(gen, 1, 3, 16, 16)
    m = _mask(gen, 16, 16)[None]
    r = _rand(gen, 1, 3, 16, 16)
    base = {name: p.detach() for name, p in model.named_parameters()}

    reports = {}
    for name, param in base.items():
        idx = _param_point(param, gen, n_coords)

        def fn(values, name=name, idx=idx):
            params = dict(base)
            params[name] = base[name].reshape(-1).index_put((idx,), values).reshape(base[name].shape)
            return (functional_call(model, params, (x, m)) * r).sum()

        reports[name] = _check(fn, param.reshape(-1)[idx].clone(), tolerance=MODEL_TOLERANCE)
    return reports


def suite_generator(seed):
    """Worst parameter report of `generator_param_reports`."""
    reports = generator_param_reports(seed)
    return max(reports.values(), key=lambda report: report.max_rel_err)


def suite_generator_input(seed):
    gen = torch.Generator().manual_seed(seed)
    model = init_params(Generator(smooth_config()).to(DTYPE), seed)
    m = _mask(gen, 16, 16)[None]
    r = _rand(gen, 1, 3, 16, 16)
    return _check(lambda x: (model(x, m) * r).sum(), _rand(gen, 1, 3, 16, 16), tolerance=MODEL_TOLERANCE)


SUITES = {suite.name: suite for suite in [
    Suite('l1_masked', suite_l1_masked, LOSS_TOLERANCE),
    Suite('perceptual', suite_perceptual, LOSS_TOLERANCE),
    Suite('adversarial_d', suite_adversarial_d, LOSS_TOLERANCE),
    Suite('adversarial_g', suite_adversarial_g, LOSS_TOLERANCE),
    Suite('gradient_penalty', suite_gradient_penalty, LOSS_TOLERANCE),
    Suite('feature_match', suite_feature_match, LOSS_TOLERANCE),
    Suite('tv', suite_tv, LOSS_TOLERANCE),
    Suite('tv_beta3', suite_tv_beta3, LOSS_TOLERANCE),
    Suite('ffl', suite_ffl, LOSS_TOLERANCE),
    Suite('lama_total', suite_lama_total, LOSS_TOLERANCE),
    Suite('joint_total', suite_joint_total, LOSS_TOLERANCE),
    Suite('spectral_transform', suite_spectral_transform, MODEL_TOLERANCE),
    Suite('ffc_block', suite_ffc_block, MODEL_TOLERANCE),
    Suite('generator_input', suite_generator_input, MODEL_TOLERANCE),
    Suite('generator_params', suite_generator, MODEL_TOLERANCE),
]}


def run_suites(names=None, seed=0):
    """Runs the named suites (all by default).

    Returns:
        list of (str, GradReport)
    """
    names = list(SUITES) if names is None else names
    results = []
    for name in names:
        if name not in SUITES:
            raise KeyError(f'unknown gradient suite {name}, expected one of {sorted(SUITES)}')
        report = SUITES[name].run(seed)
        logger.info(f'{name}: max_rel_err={report.max_rel_err:.3e} passed={report.passed}')
        results.append((name, report))
    return results
