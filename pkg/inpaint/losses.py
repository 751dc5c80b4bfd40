import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, Mapping

import torch
import torch.nn.functional as F

from inpaint.numeric import EvaluationError


logger = logging.getLogger(__name__)


class LossShapeError(ValueError):
    pass


class MissingComponentError(KeyError):
    pass


@dataclass
class LossWeights:
    """
    Weights of the spatial (LaMa) objective and of the joint
    spatial/frequency objective.
    """

    lambda1: float = field(
        default=10.0, metadata={"help": "Weight of the masked L1 term."}
    )
    lambda_adv: float = field(
        default=10.0, metadata={"help": "Weight of the generator adversarial term."}
    )
    lambda_pl: float = field(
        default=100.0, metadata={"help": "Weight of the perceptual term."}
    )
    lambda_fm: float = field(
        default=30.0, metadata={"help": "Weight of the discriminator feature-matching term."}
    )
    lambda_p: float = field(
        default=0.001, metadata={"help": "Weight of the R1 gradient penalty in the "
                                         "discriminator objective."}
    )
    alpha1: float = field(
        default=1.0, metadata={"help": "Weight of the total-variation term in the joint loss."}
    )
    alpha2: float = field(
        default=1.0, metadata={"help": "Weight of the focal frequency term in the joint loss."}
    )
    alpha3: float = field(
        default=1.0, metadata={"help": "Weight of the LaMa objective in the joint loss."}
    )
    alpha_ffl: float = field(
        default=1.0, metadata={"help": "Exponent of the focal frequency weight."}
    )
    beta_tv: float = field(
        default=2.0, metadata={"help": "Exponent of the total-variation penalty."}
    )

    def __post_init__(self):
        negative = {k: v for k, v in asdict(self).items() if v < 0}
        if negative:
            raise ValueError(f'loss weights must be non-negative, got {negative}')


@dataclass
class LossValue:
    """A scalar loss still attached to its autograd graph, plus a float
    breakdown of the terms it was built from."""

    value: torch.Tensor
    terms: Dict[str, float] = field(default_factory=dict)

    def item(self):
        return float(self.value.detach())

    def grads(self, inputs: Mapping[str, torch.Tensor], retain_graph=True):
        """Gradient of the loss w.r.t. each named input.

        Inputs that do not influence the loss get an all-zero gradient.
        """
        names = list(inputs)
        tensors = [inputs[name] for name in names]
        grads = torch.autograd.grad(self.value, tensors, retain_graph=retain_graph,
                                    allow_unused=True)
        return {name: (g if g is not None else torch.zeros_like(t))
                for name, g, t in zip(names, grads, tensors)}


def as_batch(x):
    if x.dim() == 3:
        return x.unsqueeze(0)
    if x.dim() != 4:
        raise LossShapeError(f'expected (C, H, W) or (B, C, H, W), got {tuple(x.shape)}')
    return x


def mask_like(m, like):
    """Brings a mask to (B, 1, H, W), broadcastable against `like`."""
    if m.dim() == 2:
        m = m[None, None]
    elif m.dim() == 3:
        m = m.unsqueeze(1) if m.shape[0] == like.shape[0] and like.shape[0] > 1 else m.unsqueeze(0)
    if m.dim() != 4 or m.shape[-2:] != like.shape[-2:]:
        raise LossShapeError(f'mask shape {tuple(m.shape)} does not match spatial dims '
                             f'{tuple(like.shape[-2:])}')
    return m.to(like.dtype)


def _check_pair(x, xhat):
    if x.shape != xhat.shape:
        raise LossShapeError(f'shape mismatch: {tuple(x.shape)} vs {tuple(xhat.shape)}')
    return as_batch(x), as_batch(xhat)


def downsample_mask(m, size):
    """Max-pools a (B, 1, H, W) hole map to logit resolution: a cell is a hole
    if it overlaps any masked pixel."""
    return F.adaptive_max_pool2d(m, size)


def l1_masked(x, xhat, m):
    """Mean absolute error over the channels and unmasked pixels."""
    x, xhat = _check_pair(x, xhat)
    keep = 1 - mask_like(m, x)
    keep = keep.expand(x.shape[0], 1, *x.shape[-2:])
    count = (keep.sum() * x.shape[1]).clamp_min(1)
    value = ((x - xhat).abs() * keep).sum() / count
    return LossValue(value, {'l1': float(value.detach())})


def perceptual(x, xhat, extractor, target_grad=False):
    """Mean over extractor stages of the mean squared feature difference."""
    x, xhat = _check_pair(x, xhat)
    if x.shape[1] != extractor.in_channels:
        raise LossShapeError(f'extractor expects {extractor.in_channels} channels, '
                             f'got {x.shape[1]}')
    if not target_grad:
        x = x.detach()

    feats_real = extractor(x)
    feats_fake = extractor(xhat)
    stages = [F.mse_loss(fake, real) for real, fake in zip(feats_real, feats_fake)]
    value = torch.stack(stages).mean()
    return LossValue(value, {'pl': float(value.detach())})


def adversarial_d(d_real, d_fake, m_logit):
    """Discriminator loss where only hole cells of the fake map count as fake.

    -E[log D(x)] - E[log D(x_hat) (1 - M)] - E[log(1 - D(x_hat)) M]
    """
    if d_real.shape != d_fake.shape:
        raise LossShapeError(f'logit maps differ: {tuple(d_real.shape)} vs {tuple(d_fake.shape)}')
    m = mask_like(m_logit, d_fake)

    real = -F.logsigmoid(d_real).mean()
    fake_unmasked = -(F.logsigmoid(d_fake) * (1 - m)).mean()
    # log(1 - sigmoid(z)) == logsigmoid(-z)
    fake_masked = -(F.logsigmoid(-d_fake) * m).mean()
    value = real + fake_unmasked + fake_masked
    return LossValue(value, {'real': float(real.detach()),
                             'fake_unmasked': float(fake_unmasked.detach()),
                             'fake_masked': float(fake_masked.detach())})


def adversarial_g(d_fake):
    """Non-saturating generator loss -E[log D(x_hat)]."""
    value = -F.logsigmoid(d_fake).mean()
    return LossValue(value, {'adv_g': float(value.detach())})


def gradient_penalty(d, x):
    """R1 penalty: batch mean of ||grad_x sum D(x)||^2 at real samples.

    Args:
        d (callable): discriminator; tuple outputs use their first element.
        x (torch.Tensor): real images.
    """
    # an input already on the graph keeps it so the penalty itself can be differentiated
    if not x.requires_grad:
        x = x.detach().requires_grad_(True)
    out = d(x)
    if isinstance(out, (tuple, list)):
        out = out[0]

    batch = x.shape[0] if x.dim() == 4 else 1
    if not out.requires_grad:
        value = torch.zeros((), dtype=x.dtype)
        return LossValue(value, {'r1': 0.0})

    (grad,) = torch.autograd.grad(out.sum(), x, create_graph=True, allow_unused=True)
    if grad is None:
        value = torch.zeros((), dtype=x.dtype)
        return LossValue(value, {'r1': 0.0})

    if not torch.isfinite(grad).all():
        raise EvaluationError('non-finite discriminator gradient in the gradient penalty')
    value = grad.pow(2).reshape(batch, -1).sum(dim=1).mean()
    return LossValue(value, {'r1': float(value.detach())})


def feature_match(feats_real, feats_fake):
    """Mean over layers of the mean absolute feature difference; the real
    branch is treated as constant."""
    if len(feats_real) != len(feats_fake) or not feats_real:
        raise LossShapeError(f'feature lists differ in length: {len(feats_real)} vs {len(feats_fake)}')
    layers = []
    for real, fake in zip(feats_real, feats_fake):
        if real.shape != fake.shape:
            raise LossShapeError(f'feature shapes differ: {tuple(real.shape)} vs {tuple(fake.shape)}')
        layers.append((fake - real.detach()).abs().mean())
    value = torch.stack(layers).mean()
    return LossValue(value, {'fm': float(value.detach())})


def tv(xhat, beta=2.0):
    """Total variation with forward differences.

    Sum over pixels and channels of ((dx)^2 + (dy)^2)^(beta / 2), averaged
    over the batch. The last column has no horizontal difference and the
    last row no vertical one.
    """
    xhat = as_batch(xhat)
    if xhat.shape[-1] < 2 or xhat.shape[-2] < 2:
        raise LossShapeError(f'total variation needs spatial dims >= 2, got {tuple(xhat.shape[-2:])}')

    dx = xhat[..., :, 1:] - xhat[..., :, :-1]
    dy = xhat[..., 1:, :] - xhat[..., :-1, :]
    if beta == 2:
        per_image = dx.pow(2).sum(dim=(1, 2, 3)) + dy.pow(2).sum(dim=(1, 2, 3))
    else:
        sq = F.pad(dx, (0, 1)).pow(2) + F.pad(dy, (0, 0, 0, 1)).pow(2)
        # clamp keeps the gradient finite where both differences vanish
        powered = sq.clamp_min(1e-24).pow(beta / 2)
        per_image = torch.where(sq > 0, powered, torch.zeros_like(powered)).sum(dim=(1, 2, 3))
    value = per_image.mean()
    return LossValue(value, {'tv': float(value.detach())})


LAMA_COMPONENTS = ('l1', 'adv', 'pl', 'fm')


def lama_total(components, weights=None):
    """lambda1 L1 + lambda_adv L_adv + lambda_PL L_PL + lambda_fm L_fm.

    Args:
        components (dict of str to LossValue): keys 'l1', 'adv', 'pl', 'fm'.
        weights (LossWeights, optional): defaults to the published weights.
    """
    weights = weights or LossWeights()
    missing = [name for name in LAMA_COMPONENTS if components.get(name) is None]
    if missing:
        raise MissingComponentError(f'missing LaMa loss components: {missing}')

    scale = {'l1': weights.lambda1, 'adv': weights.lambda_adv,
             'pl': weights.lambda_pl, 'fm': weights.lambda_fm}
    value = sum(scale[name] * components[name].value for name in LAMA_COMPONENTS)
    terms = {name: components[name].item() for name in LAMA_COMPONENTS}
    terms['lama'] = float(value.detach())
    return LossValue(value, terms)


def joint_total(lama, tv_loss, ffl_loss, weights=None):
    """alpha1 L_TV + alpha2 L_FFL + alpha3 L_LaMa."""
    weights = weights or LossWeights()
    for name, component in (('lama', lama), ('tv', tv_loss), ('ffl', ffl_loss)):
        if component is None:
            raise MissingComponentError(f'missing joint loss component: {name}')

    value = (weights.alpha1 * tv_loss.value + weights.alpha2 * ffl_loss.value
             + weights.alpha3 * lama.value)
    terms = dict(lama.terms)
    terms.update({'tv': tv_loss.item(), 'ffl': ffl_loss.item(), 'joint': float(value.detach())})
    return LossValue(value, terms)
