"""Checkpoint files: a safetensors blob whose JSON header carries the
manifest (format version, step, config echo, rng state, Adam step counts and
an xxh64 checksum over the tensor bytes)."""
import glob
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Dict

import jsonlines
import numpy as np
import torch
import xxhash
from safetensors import safe_open
from safetensors.torch import load_file, save_file


logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
CHECKPOINT_GLOB = 'checkpoint-*.safetensors'


class CheckpointError(RuntimeError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointTruncatedError(CheckpointError):
    pass


class CheckpointChecksumError(CheckpointError):
    pass


def checkpoint_name(step):
    return f'checkpoint-{step:06d}.safetensors'


def tensors_checksum(tensors):
    """xxh64 over the little-endian bytes of every tensor, in name order."""
    digest = xxhash.xxh64()
    for name in sorted(tensors):
        digest.update(name.encode('utf-8'))
        digest.update(np.ascontiguousarray(tensors[name].detach().cpu().numpy()).tobytes())
    return digest.hexdigest()


@dataclass
class Checkpoint:
    step: int
    tensors: Dict[str, torch.Tensor]
    config: dict = field(default_factory=dict)
    rng_state: dict = field(default_factory=dict)
    adam_steps: dict = field(default_factory=dict)

    def module_state(self, prefix):
        start = len(prefix) + 1
        return {name[start:]: t for name, t in self.tensors.items() if name.startswith(prefix + '.')}

    def restore_rng(self):
        rng = np.random.default_rng()
        rng.bit_generator.state = self.rng_state
        return rng


def save_checkpoint(path, generator, discriminator, opt_g, opt_d, rng, step, config):
    """Writes the full training state to `path` atomically.

    Args:
        generator, discriminator (torch.nn.Module): models.
        opt_g, opt_d (inpaint.utils.optim.Adam): optimizer states.
        rng (np.random.Generator): the trainer's data/mask stream.
        step (int): number of completed steps.
        config (dict): resolved configuration, echoed in the header.
    """
    tensors = {}
    for prefix, module in (('generator', generator), ('discriminator', discriminator)):
        for name, param in module.named_parameters():
            tensors[f'{prefix}.{name}'] = param.detach().clone().contiguous()
    tensors.update({k: v.detach().clone().contiguous() for k, v in opt_g.state_tensors('opt_g').items()})
    tensors.update({k: v.detach().clone().contiguous() for k, v in opt_d.state_tensors('opt_d').items()})

    metadata = {
        'format_version': str(FORMAT_VERSION),
        'step': str(step),
        'config': json.dumps(config, sort_keys=True),
        'rng_state': json.dumps(rng.bit_generator.state),
        'adam_steps': json.dumps({'opt_g': opt_g.state_steps(), 'opt_d': opt_d.state_steps()}),
        'checksum': tensors_checksum(tensors),
    }

    tmp_path = f'{path}.tmp'
    try:
        save_file(tensors, tmp_path, metadata=metadata)
        os.replace(tmp_path, path)
    except OSError as e:
        raise CheckpointError(f'could not write checkpoint {path}: {e}') from e
    logger.info(f'Saved checkpoint at step {step} to {path}')
    return path


def read_manifest(path):
    """The human-readable header: metadata plus the (dtype, shape) of every tensor."""
    try:
        with safe_open(path, framework='pt') as f:
            metadata = f.metadata() or {}
            index = {name: {'dtype': str(f.get_slice(name).get_dtype()),
                            'shape': list(f.get_slice(name).get_shape())}
                     for name in f.keys()}
    except OSError:
        raise
    except Exception as e:
        raise CheckpointTruncatedError(f'{path}: unreadable checkpoint header ({e})') from e
    return {'metadata': metadata, 'tensors': index}


def load_checkpoint(path):
    """Reads and verifies a checkpoint.

    Raises:
        CheckpointTruncatedError: the file cannot be parsed.
        CheckpointVersionError: written by an incompatible format version.
        CheckpointChecksumError: tensor bytes do not match the recorded checksum.
    """
    metadata = read_manifest(path)['metadata']
    version = metadata.get('format_version')
    if version != str(FORMAT_VERSION):
        raise CheckpointVersionError(f'{path}: format version {version}, expected {FORMAT_VERSION}')

    try:
        tensors = load_file(path)
    except OSError:
        raise
    except Exception as e:
        raise CheckpointTruncatedError(f'{path}: truncated or corrupt tensor blob ({e})') from e

    if tensors_checksum(tensors) != metadata.get('checksum'):
        raise CheckpointChecksumError(f'{path}: checksum mismatch, the tensor blob is corrupt')

    return Checkpoint(step=int(metadata['step']), tensors=tensors,
                      config=json.loads(metadata['config']),
                      rng_state=json.loads(metadata['rng_state']),
                      adam_steps=json.loads(metadata['adam_steps']))


def load_into(checkpoint, generator, discriminator=None, opt_g=None, opt_d=None):
    """Copies checkpoint tensors into live models and optimizers."""
    with torch.no_grad():
        for prefix, module in (('generator', generator), ('discriminator', discriminator)):
            if module is None:
                continue
            state = checkpoint.module_state(prefix)
            for name, param in module.named_parameters():
                if name not in state:
                    raise CheckpointError(f'checkpoint has no tensor {prefix}.{name}')
                param.copy_(state[name].to(param.dtype))
    if opt_g is not None:
        opt_g.load_state(checkpoint.tensors, checkpoint.adam_steps['opt_g'], 'opt_g')
    if opt_d is not None:
        opt_d.load_state(checkpoint.tensors, checkpoint.adam_steps['opt_d'], 'opt_d')


def list_checkpoints(run_dir):
    return sorted(glob.glob(os.path.join(run_dir, CHECKPOINT_GLOB)))


def get_best_checkpoint(run_dir, metrics_file='metrics.jsonl'):
    """Picks the checkpoint with the lowest mean validation composite L1.

    Args:
        run_dir (str): training output directory.
        metrics_file (str): metrics log name inside `run_dir`.

    Returns:
        dict: {'path', 'step', 'val_l1'}, or None when no checkpoint has a
        validation record.
    """
    checkpoints = {int(os.path.basename(p)[len('checkpoint-'):-len('.safetensors')]): p
                   for p in list_checkpoints(run_dir)}

    checkpoint_scores = []
    with jsonlines.open(os.path.join(run_dir, metrics_file)) as reader:
        for record in reader:
            if record.get('split') != 'val' or record['step'] not in checkpoints:
                continue
            per_type = record['composite_l1']
            checkpoint_scores.append((record['step'], float(np.mean(list(per_type.values())))))

    if not checkpoint_scores:
        return None

    step, score = min(checkpoint_scores, key=lambda x: (x[1], -x[0]))
    return {'path': checkpoints[step], 'step': step, 'val_l1': score}
