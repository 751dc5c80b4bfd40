import logging
import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn


logger = logging.getLogger(__name__)

# seed of the frozen feature extractor used by the perceptual loss and proxy-FID
EXTRACTOR_SEED = 20231
EXTRACTOR_WIDTHS = (16, 32, 64, 64)


class ModelConfigError(ValueError):
    pass


class InputSizeError(ValueError):
    pass


@dataclass
class FfcConfig:
    """
    Generator and discriminator shape. Defaults are the desk-scale reduction;
    base_width=64 with n_residual in 6..18 expresses the full-size network.
    """

    base_width: int = field(
        default=16, metadata={"help": "Channels after the stem; doubled by every downsampling block."}
    )
    global_ratio: float = field(
        default=0.5, metadata={"help": "Share of trunk channels routed through the spectral (global) branch."}
    )
    n_down: int = field(
        default=3, metadata={"help": "Number of stride-2 downsampling blocks."}
    )
    n_residual: int = field(
        default=3, metadata={"help": "Number of FFC residual blocks in the trunk."}
    )
    n_up: int = field(
        default=3, metadata={"help": "Number of upsampling blocks, must equal n_down."}
    )
    norm: str = field(
        default="instance", metadata={"help": "Normalization: instance or none."}
    )
    activation: str = field(
        default="relu", metadata={"help": "Generator activation: relu, gelu, leaky_relu or none."}
    )
    disc_width: int = field(
        default=16, metadata={"help": "Channels of the first discriminator stage."}
    )
    disc_depth: int = field(
        default=4, metadata={"help": "Number of discriminator feature stages (the first three halve the resolution)."}
    )

    @property
    def trunk_channels(self):
        return self.base_width * 2 ** self.n_down

    @property
    def global_channels(self):
        return int(round(self.trunk_channels * self.global_ratio))

    def validate(self):
        if self.base_width < 1 or self.disc_width < 1:
            raise ModelConfigError(f'widths must be positive, got base_width={self.base_width}, '
                                   f'disc_width={self.disc_width}')
        if self.n_down != self.n_up:
            raise ModelConfigError(f'n_down ({self.n_down}) must equal n_up ({self.n_up})')
        if self.n_down < 0 or self.n_residual < 0:
            raise ModelConfigError('block counts must be non-negative')
        if not 0 <= self.global_ratio < 1:
            raise ModelConfigError(f'global_ratio must lie in [0, 1), got {self.global_ratio}')
        split = self.trunk_channels * self.global_ratio
        if abs(split - round(split)) > 1e-9:
            raise ModelConfigError(f'{self.trunk_channels} trunk channels x ratio {self.global_ratio} '
                                   'is not an integer channel count')
        if self.norm not in NORMS:
            raise ModelConfigError(f'unknown norm {self.norm}, expected one of {sorted(NORMS)}')
        if self.activation not in ACTIVATIONS:
            raise ModelConfigError(f'unknown activation {self.activation}, '
                                   f'expected one of {sorted(ACTIVATIONS)}')
        if self.disc_depth < 3:
            raise ModelConfigError(f'disc_depth must be at least 3, got {self.disc_depth}')
        return self


NORMS = {
    'instance': lambda c: nn.InstanceNorm2d(c, affine=True),
    'none': lambda c: nn.Identity(),
}

ACTIVATIONS = {
    'relu': lambda: nn.ReLU(),
    'gelu': lambda: nn.GELU(),
    'leaky_relu': lambda: nn.LeakyReLU(0.2),
    'none': lambda: nn.Identity(),
}


def _is_power_of_two(n):
    return n > 0 and (n & (n - 1)) == 0


class SpectralTransform(nn.Module):
    """Global path of an FFC layer.

    Real FFT over the spatial dims, real and imaginary parts stacked as 2C
    channels, pointwise conv + norm + activation, back to complex, inverse FFT.
    """

    def __init__(self, channels, norm='instance', activation='relu'):
        super().__init__()
        self.channels = channels
        self.conv = nn.Conv2d(2 * channels, 2 * channels, kernel_size=1, bias=False)
        self.norm = NORMS[norm](2 * channels)
        self.act = ACTIVATIONS[activation]()

    def forward(self, x):
        unbatched = x.dim() == 3
        if unbatched:
            x = x.unsqueeze(0)
        h, w = x.shape[-2:]
        if not (_is_power_of_two(h) and _is_power_of_two(w)):
            raise InputSizeError(f'spectral transform needs power-of-two dims, got {h}x{w}')

        spectrum = torch.fft.rfft2(x)
        stacked = torch.cat([spectrum.real, spectrum.imag], dim=1)
        stacked = self.act(self.norm(self.conv(stacked)))
        real, imag = stacked.chunk(2, dim=1)
        out = torch.fft.irfft2(torch.complex(real, imag), s=(h, w))
        return out.squeeze(0) if unbatched else out


class FfcLayer(nn.Module):
    """One FFC layer over a (local, global) channel split.

    local  <- l2l(local) + g2l(global)
    global <- l2g(local) + spectral(global)
    followed by norm + activation per branch. Paths with no channels on
    either end are not built.
    """

    def __init__(self, local_channels, global_channels, norm='instance', activation='relu'):
        super().__init__()
        self.local_channels = local_channels
        self.global_channels = global_channels
        cl, cg = local_channels, global_channels

        def conv(cin, cout):
            return nn.Conv2d(cin, cout, kernel_size=3, padding=1, bias=False)

        self.l2l = conv(cl, cl) if cl else None
        self.g2l = conv(cg, cl) if cl and cg else None
        self.l2g = conv(cl, cg) if cl and cg else None
        self.g2g = SpectralTransform(cg, norm, activation) if cg else None
        self.norm_local = NORMS[norm](cl) if cl else None
        self.norm_global = NORMS[norm](cg) if cg else None
        self.act_local = ACTIVATIONS[activation]()
        self.act_global = ACTIVATIONS[activation]()

    def forward(self, x_local, x_global=None):
        y_local = y_global = None
        if self.local_channels:
            if x_local is None or x_local.shape[-3] != self.local_channels:
                raise ModelConfigError(f'local branch expects {self.local_channels} channels')
            y_local = self.l2l(x_local)
        if self.global_channels:
            if x_global is None or x_global.shape[-3] != self.global_channels:
                raise ModelConfigError(f'global branch expects {self.global_channels} channels')
            y_global = self.g2g(x_global)

        if self.g2l is not None:
            y_local = y_local + self.g2l(x_global)
            y_global = y_global + self.l2g(x_local)

        if y_local is not None:
            y_local = self.act_local(self.norm_local(y_local))
        if y_global is not None:
            y_global = self.act_global(self.norm_global(y_global))
        return y_local, y_global


class FfcResidualBlock(nn.Module):

    def __init__(self, local_channels, global_channels, norm='instance', activation='relu'):
        super().__init__()
        self.first = FfcLayer(local_channels, global_channels, norm, activation)
        self.second = FfcLayer(local_channels, global_channels, norm, activation)

    def forward(self, x_local, x_global=None):
        y_local, y_global = self.second(*self.first(x_local, x_global))
        if y_local is not None:
            y_local = x_local + y_local
        if y_global is not None:
            y_global = x_global + y_global
        return y_local, y_global


def _conv_block(cin, cout, kernel_size, stride, padding, norm, activation):
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel_size=kernel_size, stride=stride, padding=padding, bias=False),
        NORMS[norm](cout),
        ACTIVATIONS[activation](),
    )


class Generator(nn.Module):
    """FFC autoencoder: 7x7 stem, stride-2 downsampling, FFC residual trunk,
    transposed-conv upsampling and a 7x7 sigmoid head.

    The network sees the 4-channel stack [x * (1 - M), M].
    """

    def __init__(self, config):
        super().__init__()
        self.config = config.validate()
        norm, act = config.norm, config.activation

        self.stem = _conv_block(4, config.base_width, 7, 1, 3, norm, act)
        width = config.base_width
        self.down = nn.ModuleList()
        for _ in range(config.n_down):
            self.down.append(_conv_block(width, 2 * width, 3, 2, 1, norm, act))
            width *= 2

        global_channels = config.global_channels
        self.local_channels = width - global_channels
        self.global_channels = global_channels
        self.trunk = nn.ModuleList([
            FfcResidualBlock(self.local_channels, global_channels, norm, act)
            for _ in range(config.n_residual)
        ])

        self.up = nn.ModuleList()
        for _ in range(config.n_up):
            self.up.append(nn.Sequential(
                nn.ConvTranspose2d(width, width // 2, kernel_size=3, stride=2, padding=1,
                                   output_padding=1, bias=False),
                NORMS[norm](width // 2),
                ACTIVATIONS[act](),
            ))
            width //= 2
        self.head = nn.Conv2d(width, 3, kernel_size=7, padding=3)

    def forward(self, image, mask):
        """
        Args:
            image (torch.Tensor): (B, 3, H, W) in [0, 1].
            mask (torch.Tensor): (B, 1, H, W), 1 = hole.

        Returns:
            torch.Tensor: (B, 3, H, W) in [0, 1].
        """
        factor = 2 ** self.config.n_down
        h, w = image.shape[-2:]
        if h % factor or w % factor:
            raise InputSizeError(f'input {h}x{w} is not divisible by {factor}')
        if mask.shape[-2:] != image.shape[-2:]:
            raise InputSizeError(f'mask {tuple(mask.shape)} does not match image {tuple(image.shape)}')

        x = torch.cat([image * (1 - mask), mask], dim=1)
        x = self.stem(x)
        for block in self.down:
            x = block(x)

        x_local, x_global = x[:, :self.local_channels], x[:, self.local_channels:]
        if not self.global_channels:
            x_global = None
        if not self.local_channels:
            x_local = None
        for block in self.trunk:
            x_local, x_global = block(x_local, x_global)
        x = torch.cat([t for t in (x_local, x_global) if t is not None], dim=1)

        for block in self.up:
            x = block(x)
        return torch.sigmoid(self.head(x))


class PatchDiscriminator(nn.Module):
    """Patch discriminator: three 4x4 stride-2 stages, then 3x3 stride-1
    stages up to `disc_depth`, LeakyReLU(0.2), and a 3x3 conv to one logit
    channel. Logits come out at 1/8 resolution."""

    min_size = 32

    def __init__(self, config):
        super().__init__()
        config.validate()
        self.stages = nn.ModuleList()
        cin, cout = 3, config.disc_width
        for i in range(config.disc_depth):
            if i < 3:
                conv = nn.Conv2d(cin, cout, kernel_size=4, stride=2, padding=1)
            else:
                conv = nn.Conv2d(cin, cout, kernel_size=3, stride=1, padding=1)
            self.stages.append(nn.Sequential(conv, nn.LeakyReLU(0.2)))
            cin, cout = cout, cout * 2
        self.logits = nn.Conv2d(cin, 1, kernel_size=3, padding=1)

    def forward(self, x):
        if x.shape[-1] < self.min_size or x.shape[-2] < self.min_size:
            raise InputSizeError(f'discriminator needs inputs of at least {self.min_size}x{self.min_size}, '
                                 f'got {tuple(x.shape[-2:])}')
        features = []
        for stage in self.stages:
            x = stage(x)
            features.append(x)
        return self.logits(x), features


class FeatureExtractor(nn.Module):
    """Frozen stand-in for a pretrained perceptual network: two stride-2
    stages then dilation 2 and 4, GELU in between. Weights come from
    EXTRACTOR_SEED."""

    in_channels = 3

    def __init__(self, seed=EXTRACTOR_SEED, dtype=torch.float32):
        super().__init__()
        w1, w2, w3, w4 = EXTRACTOR_WIDTHS
        self.stages = nn.ModuleList([
            nn.Sequential(nn.Conv2d(3, w1, 3, stride=2, padding=1), nn.GELU()),
            nn.Sequential(nn.Conv2d(w1, w2, 3, stride=2, padding=1), nn.GELU()),
            nn.Sequential(nn.Conv2d(w2, w3, 3, dilation=2, padding=2), nn.GELU()),
            nn.Sequential(nn.Conv2d(w3, w4, 3, dilation=4, padding=4), nn.GELU()),
        ])
        self.to(dtype)
        init_params(self, seed)
        self.requires_grad_(False)
        self.eval()

    @property
    def feature_dim(self):
        return EXTRACTOR_WIDTHS[-1]

    def forward(self, x):
        features = []
        for stage in self.stages:
            x = stage(x)
            features.append(x)
        return features

    def pooled(self, x):
        """(B, feature_dim) spatial mean of the last stage."""
        return self.forward(x)[-1].mean(dim=(-2, -1))


def init_params(module, seed):
    """Deterministic fan-in initialization.

    Conv weights are uniform in +-sqrt(3 / fan_in) (unit-variance scaled by
    fan-in), biases zero, norm affines at identity. Draws are made in f64
    from one torch.Generator in module order, so the same (architecture,
    seed) gives bit-identical tensors.
    """
    generator = torch.Generator().manual_seed(int(seed))
    with torch.no_grad():
        for _, sub in module.named_modules():
            if isinstance(sub, (nn.Conv2d, nn.ConvTranspose2d)):
                weight = sub.weight
                if isinstance(sub, nn.ConvTranspose2d):
                    fan_in = sub.in_channels * weight.shape[2] * weight.shape[3]
                else:
                    fan_in = weight[0].numel()
                bound = math.sqrt(3.0 / fan_in)
                draw = torch.rand(weight.shape, generator=generator, dtype=torch.float64)
                weight.copy_(((2 * draw - 1) * bound).to(weight.dtype))
                if sub.bias is not None:
                    sub.bias.zero_()
            elif isinstance(sub, nn.InstanceNorm2d) and sub.affine:
                sub.weight.fill_(1)
                sub.bias.zero_()
    return module


def count_params(module):
    return sum(p.numel() for p in module.parameters())


def build_models(config, seed, dtype=torch.float32):
    """Generator and discriminator initialized from one seed (the
    discriminator uses seed + 1)."""
    generator = init_params(Generator(config).to(dtype), seed)
    discriminator = init_params(PatchDiscriminator(config).to(dtype), seed + 1)
    return generator, discriminator
