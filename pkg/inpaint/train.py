import logging
import os
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import jsonlines
import numpy as np
import torch
from tqdm import tqdm

from inpaint.frequency import artifact_score, ffl
from inpaint.losses import (LossValue, LossWeights, adversarial_d, adversarial_g,
                            downsample_mask, feature_match, gradient_penalty,
                            joint_total, l1_masked, lama_total, perceptual, tv)
from inpaint.model import FeatureExtractor, FfcConfig, build_models
from inpaint.utils.checkpoint import (checkpoint_name, load_checkpoint, load_into,
                                      save_checkpoint)
from inpaint.utils.data_utils import ingest_images, synth_dataset
from inpaint.utils.metrics import composite
from inpaint.utils.optim import Adam
from masks.generators import generate
from masks.mask import GENERAL_TYPES, MaskPolicy, sample_type


logger = logging.getLogger(__name__)

METRICS_FILE = 'metrics.jsonl'
# the synthetic validation set is drawn from seed + this offset
VAL_SEED_OFFSET = 1_000_003
LOSS_MODES = ('lama', 'glama')
DATA_SOURCES = ('synthetic', 'directory')
DTYPES = {'float32': torch.float32, 'float64': torch.float64}


class TrainingDivergedError(RuntimeError):
    def __init__(self, message, record):
        super().__init__(message)
        self.record = record


@dataclass
class TrainConfig:
    """
    Arguments pertaining to the data, masks and optimization schedule.
    """

    resolution: int = field(
        default=64, metadata={"help": "Training image side length (a power of two >= 32)."}
    )
    batch_size: int = field(
        default=8, metadata={"help": "Images per step."}
    )
    steps: int = field(
        default=2000, metadata={"help": "Number of D/G step pairs."}
    )
    lr_g: float = field(
        default=1e-3, metadata={"help": "Generator learning rate."}
    )
    lr_d: float = field(
        default=1e-4, metadata={"help": "Discriminator learning rate."}
    )
    mask_policy: str = field(
        default="general", metadata={"help": "Mask policy: lama, lama_plus or general."}
    )
    loss_mode: str = field(
        default="glama", metadata={"help": "Generator objective: lama (spatial only) or "
                                           "glama (spatial + TV + focal frequency)."}
    )
    seed: int = field(
        default=0, metadata={"help": "Seed for initialization, data and masks."}
    )
    data_source: str = field(
        default="synthetic", metadata={"help": "synthetic or directory."}
    )
    data_dir: Optional[str] = field(
        default=None, metadata={"help": "Image directory when data_source is directory."}
    )
    num_images: int = field(
        default=512, metadata={"help": "Synthetic training images."}
    )
    num_val: int = field(
        default=16, metadata={"help": "Synthetic validation images."}
    )
    val_ratio: float = field(
        default=0.05, metadata={"help": "Validation share of a directory dataset."}
    )
    val_seed: int = field(
        default=1234, metadata={"help": "Seed of the held-out validation masks."}
    )
    checkpoint_every: int = field(
        default=500, metadata={"help": "Checkpoint and validate every this many steps."}
    )
    output_dir: str = field(
        default="runs/train", metadata={"help": "Where checkpoints and the metrics log go."}
    )
    dtype: str = field(
        default="float32", metadata={"help": "float32 or float64 (bit-reproducible runs)."}
    )
    debug_checks: bool = field(
        default=False, metadata={"help": "Assert after every step that D steps leave G "
                                         "untouched and vice versa."}
    )
    resume_from: Optional[str] = field(
        default=None, metadata={"help": "Checkpoint to continue training from."}
    )

    def validate(self):
        res = self.resolution
        if res < 32 or res & (res - 1):
            raise ValueError(f'resolution must be a power of two >= 32, got {res}')
        if self.batch_size < 1:
            raise ValueError(f'batch_size must be >= 1, got {self.batch_size}')
        if self.steps < 0:
            raise ValueError(f'steps must be >= 0, got {self.steps}')
        if self.lr_g <= 0 or self.lr_d <= 0:
            raise ValueError(f'learning rates must be positive, got {self.lr_g}, {self.lr_d}')
        if self.checkpoint_every < 1:
            raise ValueError(f'checkpoint_every must be >= 1, got {self.checkpoint_every}')
        MaskPolicy(self.mask_policy)
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f'loss_mode must be one of {LOSS_MODES}, got {self.loss_mode}')
        if self.data_source not in DATA_SOURCES:
            raise ValueError(f'data_source must be one of {DATA_SOURCES}, got {self.data_source}')
        if self.data_source == 'directory' and not self.data_dir:
            raise ValueError('data_source=directory needs data_dir')
        if self.dtype not in DTYPES:
            raise ValueError(f'dtype must be one of {sorted(DTYPES)}, got {self.dtype}')
        return self


@dataclass
class Batch:
    images: torch.Tensor
    masks: torch.Tensor
    mask_types: List[str]


def load_data(config):
    """(train, val) image collections for the configured source."""
    if config.data_source == 'synthetic':
        train = synth_dataset(config.num_images, config.resolution, config.seed)
        val = synth_dataset(config.num_val, config.resolution, config.seed + VAL_SEED_OFFSET)
        return train, val
    result = ingest_images(config.data_dir, config.resolution, config.val_ratio)
    if not len(result.val):
        raise ValueError(f'{config.data_dir}: validation split is empty, raise val_ratio')
    return result.train, result.val


def masks_tensor(masks, dtype):
    return torch.stack([mask.to_tensor(dtype) for mask in masks])


def _snapshot(module):
    return {name: p.detach().clone() for name, p in module.named_parameters()}


def _assert_unchanged(module, snapshot, what):
    for name, p in module.named_parameters():
        assert torch.equal(p.detach(), snapshot[name]), f'{what} parameter {name} changed'


def _finite(value):
    return bool(torch.isfinite(value.detach()).all())


class GanTrainer:
    """Holds the models, optimizers, data and the single numpy stream that
    drives image and mask sampling."""

    def __init__(self, config, weights=None, model_config=None):
        self.config = config.validate()
        self.weights = weights or LossWeights()
        self.model_config = (model_config or FfcConfig()).validate()
        self.dtype = DTYPES[config.dtype]

        self.generator, self.discriminator = build_models(self.model_config, config.seed, self.dtype)
        self.extractor = FeatureExtractor(dtype=self.dtype)
        self.opt_g = Adam(self.generator, config.lr_g)
        self.opt_d = Adam(self.discriminator, config.lr_d)
        self.rng = np.random.default_rng(np.random.SeedSequence(config.seed))
        self.step = 0
        self.train_data, self.val_data = load_data(config)

    def config_echo(self):
        return {'train': asdict(self.config), 'weights': asdict(self.weights),
                'model': asdict(self.model_config)}

    def sample_batch(self):
        """Images drawn with replacement; one policy-sampled mask per image."""
        indices = self.rng.integers(len(self.train_data), size=self.config.batch_size)
        mask_types, masks = [], []
        for _ in indices:
            mask_type = sample_type(self.config.mask_policy, self.rng)
            mask_seed = int(self.rng.integers(2 ** 63 - 1))
            masks.append(generate(mask_type, self.config.resolution, self.config.resolution, mask_seed))
            mask_types.append(mask_type.value)
        return Batch(self.train_data.to_tensor(indices, self.dtype),
                     masks_tensor(masks, self.dtype), mask_types)

    def _diverged(self, phase, terms):
        record = {'step': self.step + 1, 'split': 'train', 'phase': phase,
                  'diverged': True, 'terms': terms}
        raise TrainingDivergedError(f'non-finite {phase} loss at step {self.step + 1}: {terms}', record)

    def train_step_d(self, batch):
        """One discriminator update on L_D + lambda_P L_P."""
        snapshot = _snapshot(self.generator) if self.config.debug_checks else None
        with torch.no_grad():
            fake = self.generator(batch.images, batch.masks)

        d_real, _ = self.discriminator(batch.images)
        d_fake, _ = self.discriminator(fake)
        m_logit = downsample_mask(batch.masks, d_fake.shape[-2:])
        adv = adversarial_d(d_real, d_fake, m_logit)
        if self.weights.lambda_p > 0:
            penalty = gradient_penalty(self.discriminator, batch.images)
        else:
            penalty = LossValue(torch.zeros((), dtype=self.dtype), {'r1': 0.0})
        total = adv.value + self.weights.lambda_p * penalty.value

        terms = dict(adv.terms, adv_d=adv.item(), r1=penalty.item())
        if not _finite(total):
            self._diverged('d', terms)

        params = dict(self.discriminator.named_parameters())
        grads = LossValue(total).grads(params, retain_graph=False)
        self.opt_d.step(grads)

        if snapshot is not None:
            _assert_unchanged(self.generator, snapshot, 'generator')
        return {'loss': float(total.detach()), 'terms': terms}

    def generator_loss(self, batch):
        """Generator objective for the configured loss mode, as a LossValue
        whose terms are the unweighted components."""
        fake = self.generator(batch.images, batch.masks)
        d_fake, feats_fake = self.discriminator(fake)
        with torch.no_grad():
            _, feats_real = self.discriminator(batch.images)

        components = {
            'l1': l1_masked(batch.images, fake, batch.masks),
            'adv': adversarial_g(d_fake),
            'pl': perceptual(batch.images, fake, self.extractor),
            'fm': feature_match(feats_real, feats_fake),
        }
        lama = lama_total(components, self.weights)
        terms = {'l1': components['l1'].item(), 'adv_g': components['adv'].item(),
                 'fm': components['fm'].item(), 'pl': components['pl'].item()}
        if self.config.loss_mode == 'lama':
            return LossValue(lama.value, terms)

        tv_loss = tv(fake, self.weights.beta_tv)
        ffl_loss = ffl(batch.images, fake, self.weights.alpha_ffl)
        joint = joint_total(lama, tv_loss, ffl_loss, self.weights)
        terms.update({'tv': tv_loss.item(), 'ffl': ffl_loss.item()})
        return LossValue(joint.value, terms)

    def term_weights(self):
        w = self.weights
        weights = {'l1': w.lambda1, 'adv_g': w.lambda_adv, 'fm': w.lambda_fm, 'pl': w.lambda_pl}
        if self.config.loss_mode == 'glama':
            weights = {k: w.alpha3 * v for k, v in weights.items()}
            weights.update({'tv': w.alpha1, 'ffl': w.alpha2})
        return weights

    def train_step_g(self, batch):
        """One generator update on lama_total or joint_total."""
        snapshot = _snapshot(self.discriminator) if self.config.debug_checks else None
        loss = self.generator_loss(batch)
        if not _finite(loss.value):
            self._diverged('g', loss.terms)

        params = dict(self.generator.named_parameters())
        self.opt_g.step(loss.grads(params, retain_graph=False))

        if snapshot is not None:
            _assert_unchanged(self.discriminator, snapshot, 'discriminator')
        return {'loss': loss.item(), 'terms': loss.terms, 'weights': self.term_weights()}

    def validate(self):
        """Composite L1 and raw-output artifact score per general mask type,
        one mask per (image, type) from the fixed validation seed."""
        images = self.val_data.to_tensor(dtype=self.dtype)
        size = self.config.resolution
        composite_l1, artifact_raw = {}, {}
        with torch.no_grad():
            for type_idx, mask_type in enumerate(GENERAL_TYPES):
                masks = masks_tensor([generate(mask_type, size, size, (self.config.val_seed, i, type_idx))
                                      for i in range(len(images))], self.dtype)
                fake = self.generator(images, masks)
                merged = composite(images, fake, masks)
                composite_l1[mask_type.value] = float((merged - images).abs().mean())
                artifact_raw[mask_type.value] = artifact_score(fake)
        return {'step': self.step, 'split': 'val', 'composite_l1': composite_l1,
                'artifact_raw': artifact_raw}

    def save(self, output_dir):
        path = os.path.join(output_dir, checkpoint_name(self.step))
        return save_checkpoint(path, self.generator, self.discriminator, self.opt_g, self.opt_d,
                               self.rng, self.step, self.config_echo())

    def resume(self, path):
        checkpoint = load_checkpoint(path)
        load_into(checkpoint, self.generator, self.discriminator, self.opt_g, self.opt_d)
        self.rng = checkpoint.restore_rng()
        self.step = checkpoint.step
        logger.info(f'Resumed from {path} at step {self.step}')


@dataclass
class TrainResult:
    final_checkpoint: str
    metrics_path: str


def run_training(config, weights=None, model_config=None):
    """Alternates one D step and one G step per batch for `config.steps`
    steps, logging every step and checkpointing (with validation) every
    `checkpoint_every` steps and at the end.

    Returns:
        TrainResult
    """
    trainer = GanTrainer(config, weights, model_config)
    os.makedirs(config.output_dir, exist_ok=True)
    if config.resume_from:
        trainer.resume(config.resume_from)

    metrics_path = os.path.join(config.output_dir, METRICS_FILE)
    mode = 'a' if config.resume_from else 'w'
    last_checkpoint = None
    with jsonlines.open(metrics_path, mode=mode, flush=True) as writer:
        if trainer.step == 0:
            writer.write(trainer.validate())
            last_checkpoint = trainer.save(config.output_dir)

        progress = tqdm(range(trainer.step, config.steps), desc='train', disable=None)
        for _ in progress:
            batch = trainer.sample_batch()
            try:
                d_metrics = trainer.train_step_d(batch)
                g_metrics = trainer.train_step_g(batch)
            except TrainingDivergedError as e:
                writer.write(e.record)
                logger.error(f'{e}; last good checkpoint: {last_checkpoint}')
                raise
            trainer.step += 1

            writer.write({'step': trainer.step, 'split': 'train', 'mask_types': batch.mask_types,
                          'd_loss': d_metrics['loss'], 'd_terms': d_metrics['terms'],
                          'g_loss': g_metrics['loss'], 'g_terms': g_metrics['terms'],
                          'g_weights': g_metrics['weights']})
            progress.set_postfix(d=f"{d_metrics['loss']:.4f}", g=f"{g_metrics['loss']:.4f}")

            if trainer.step % config.checkpoint_every == 0 or trainer.step == config.steps:
                writer.write(trainer.validate())
                last_checkpoint = trainer.save(config.output_dir)

    if last_checkpoint is None:
        last_checkpoint = config.resume_from
    return TrainResult(last_checkpoint, metrics_path)
