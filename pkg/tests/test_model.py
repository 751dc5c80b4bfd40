import pytest
import torch
import torch.nn.functional as F

from inpaint.losses import gradient_penalty
from inpaint.model import (FeatureExtractor, FfcConfig, FfcLayer, Generator, InputSizeError,
                           ModelConfigError, PatchDiscriminator, SpectralTransform, build_models,
                           count_params, init_params)


DTYPE = torch.float64


def rand(*shape, seed=0):
    return torch.rand(*shape, dtype=DTYPE, generator=torch.Generator().manual_seed(seed))


def hole(size, seed=0):
    mask = (rand(1, 1, size, size, seed=seed) > 0.6).to(DTYPE)
    mask[..., 0, 0], mask[..., -1, -1] = 1, 0
    return mask


@pytest.mark.parametrize('size', [64, 128])
def test_generator_shape_contract(size):
    generator = init_params(Generator(FfcConfig()).to(DTYPE), 0)
    out = generator(rand(2, 3, size, size), hole(size).expand(2, 1, size, size))
    assert out.shape == (2, 3, size, size)
    assert out.min().item() >= 0 and out.max().item() <= 1


def test_generator_is_deterministic():
    image, mask = rand(1, 3, 64, 64, seed=1), hole(64)
    a = init_params(Generator(FfcConfig()).to(DTYPE), 3)(image, mask)
    b = init_params(Generator(FfcConfig()).to(DTYPE), 3)(image, mask)
    assert torch.equal(a, b)


def test_generator_ignores_pixels_under_the_hole():
    generator = init_params(Generator(FfcConfig()).to(DTYPE), 0)
    image, mask = rand(1, 3, 64, 64, seed=2), hole(64, seed=3)
    altered = torch.where(mask.bool(), rand(1, 3, 64, 64, seed=4), image)
    assert torch.equal(generator(image, mask), generator(altered, mask))


def test_generator_rejects_bad_sizes():
    generator = Generator(FfcConfig())
    with pytest.raises(InputSizeError):
        generator(torch.rand(1, 3, 60, 60), torch.zeros(1, 1, 60, 60))
    with pytest.raises(InputSizeError):
        generator(torch.rand(1, 3, 64, 64), torch.zeros(1, 1, 32, 32))


def test_default_parameter_count():
    assert count_params(Generator(FfcConfig())) == 964659


def test_init_params_depends_on_seed():
    a = init_params(Generator(FfcConfig()), 0).state_dict()
    b = init_params(Generator(FfcConfig()), 0).state_dict()
    c = init_params(Generator(FfcConfig()), 1).state_dict()
    assert all(torch.equal(a[name], b[name]) for name in a)
    assert not torch.equal(a['stem.0.weight'], c['stem.0.weight'])


def test_init_params_bounds():
    layer = init_params(torch.nn.Conv2d(8, 4, kernel_size=3), 0)
    assert layer.weight.abs().max().item() <= (3.0 / 72) ** 0.5
    assert torch.all(layer.bias == 0)


def test_spectral_transform_identity():
    transform = SpectralTransform(2, norm='none', activation='none').to(DTYPE)
    with torch.no_grad():
        transform.conv.weight.copy_(torch.eye(4, dtype=DTYPE)[:, :, None, None])
    x = rand(1, 2, 16, 16, seed=5)
    torch.testing.assert_close(transform(x), x, atol=1e-5, rtol=0)
    torch.testing.assert_close(transform(x[0]), x[0], atol=1e-5, rtol=0)


def test_spectral_transform_zero_input():
    transform = init_params(SpectralTransform(3).to(DTYPE), 0)
    out = transform(torch.zeros(2, 3, 8, 8, dtype=DTYPE))
    assert torch.all(out == 0)


def test_spectral_transform_rejects_odd_dims():
    with pytest.raises(InputSizeError):
        SpectralTransform(2)(torch.rand(1, 2, 12, 16))


@pytest.mark.parametrize('position', [(0, 2, 3), (1, 9, 14), (0, 15, 0)])
def test_spectral_transform_reaches_every_pixel(position):
    transform = init_params(SpectralTransform(2, norm='instance', activation='gelu').to(DTYPE), 0)
    jacobian = torch.autograd.functional.jacobian(transform, rand(2, 16, 16, seed=11))
    response = jacobian[(..., *position)].abs().sum(dim=0)
    assert response.shape == (16, 16)
    assert (response > 0).all()


def test_local_only_layer_is_a_plain_conv():
    layer = init_params(FfcLayer(4, 0, norm='none', activation='none').to(DTYPE), 0)
    assert layer.g2g is None and layer.g2l is None and layer.l2g is None
    x = rand(2, 4, 8, 8, seed=6)
    y_local, y_global = layer(x)
    assert y_global is None
    torch.testing.assert_close(y_local, F.conv2d(x, layer.l2l.weight, padding=1))


def test_local_only_layer_has_local_receptive_field():
    layer = init_params(FfcLayer(4, 0, norm='none', activation='none').to(DTYPE), 0)
    x = rand(1, 4, 16, 16, seed=7)
    bumped = x.clone()
    bumped[0, :, 8, 8] += 1.0
    diff = (layer(bumped)[0] - layer(x)[0]).abs().sum(dim=1)[0]
    assert diff[7:10, 7:10].max().item() > 0
    diff[7:10, 7:10] = 0
    assert diff.max().item() < 1e-12


def test_zero_weights_give_zero_output():
    layer = FfcLayer(2, 2, norm='none', activation='none').to(DTYPE)
    with torch.no_grad():
        for p in layer.parameters():
            p.zero_()
    y_local, y_global = layer(rand(1, 2, 8, 8, seed=8), rand(1, 2, 8, 8, seed=9))
    assert torch.all(y_local == 0) and torch.all(y_global == 0)


def test_ffc_layer_checks_branch_channels():
    layer = FfcLayer(2, 2)
    with pytest.raises(ModelConfigError):
        layer(torch.rand(1, 3, 8, 8), torch.rand(1, 2, 8, 8))
    with pytest.raises(ModelConfigError):
        layer(torch.rand(1, 2, 8, 8), None)


def test_discriminator_logits_and_features():
    discriminator = init_params(PatchDiscriminator(FfcConfig()).to(DTYPE), 1)
    logits, features = discriminator(rand(2, 3, 64, 64, seed=10))
    assert logits.shape == (2, 1, 8, 8)
    assert len(features) == 4
    assert [f.shape[1] for f in features] == [16, 32, 64, 128]


def test_discriminator_gradient_penalty_matches_finite_differences():
    discriminator = init_params(PatchDiscriminator(FfcConfig(disc_width=4, disc_depth=3)).to(DTYPE), 2)
    x = rand(1, 3, 32, 32, seed=12)

    def total_logit(t):
        return discriminator(t)[0].sum()

    h = 1e-7
    flat = x.reshape(-1)
    fd = torch.zeros_like(flat)
    with torch.no_grad():
        for i in range(flat.numel()):
            plus, minus = flat.clone(), flat.clone()
            plus[i] += h
            minus[i] -= h
            fd[i] = (total_logit(plus.reshape(x.shape)) - total_logit(minus.reshape(x.shape))) / (2 * h)
    expected = float((fd ** 2).sum())
    assert gradient_penalty(discriminator, x).item() == pytest.approx(expected, rel=1e-4)


def test_discriminator_min_size():
    with pytest.raises(InputSizeError):
        PatchDiscriminator(FfcConfig())(torch.rand(1, 3, 16, 16))


def test_build_models_seeds():
    g1, d1 = build_models(FfcConfig(), seed=5)
    g2, d2 = build_models(FfcConfig(), seed=5)
    assert torch.equal(g1.head.weight, g2.head.weight)
    assert torch.equal(d1.logits.weight, d2.logits.weight)
    assert next(g1.parameters()).dtype == torch.float32


def test_feature_extractor_is_frozen():
    extractor = FeatureExtractor(dtype=DTYPE)
    assert not any(p.requires_grad for p in extractor.parameters())
    pooled = extractor.pooled(rand(3, 3, 32, 32, seed=11))
    assert pooled.shape == (3, extractor.feature_dim)
    again = FeatureExtractor(dtype=DTYPE).pooled(rand(3, 3, 32, 32, seed=11))
    assert torch.equal(pooled, again)


@pytest.mark.parametrize('overrides', [
    {'n_down': 3, 'n_up': 2},
    {'global_ratio': 1.0},
    {'global_ratio': 0.3},
    {'norm': 'batch'},
    {'activation': 'swish'},
    {'base_width': 0},
    {'disc_depth': 2},
])
def test_config_validation(overrides):
    with pytest.raises(ModelConfigError):
        FfcConfig(**overrides).validate()


def test_config_channel_split():
    config = FfcConfig(base_width=8, n_down=2, n_up=2, global_ratio=0.25)
    assert config.trunk_channels == 32
    assert config.global_channels == 8
    generator = Generator(config)
    assert generator.local_channels == 24 and generator.global_channels == 8
