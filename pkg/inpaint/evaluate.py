import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np
import torch
from tabulate import tabulate
from tqdm import tqdm

from inpaint.frequency import artifact_score
from inpaint.model import EXTRACTOR_WIDTHS, FeatureExtractor, FfcConfig, Generator
from inpaint.utils.checkpoint import load_checkpoint, load_into
from inpaint.utils.metrics import (MetricError, composite, extract_features, proxy_fid,
                                   psnr, ssim)
from masks.generators import generate
from masks.mask import MaskError, MaskPolicy, MaskType


logger = logging.getLogger(__name__)

ITEM_METRICS = ('composite_l1', 'psnr', 'ssim', 'artifact_raw')
SET_METRICS = ('proxy_fid',)
ALL_METRICS = ITEM_METRICS + SET_METRICS
# proxy-FID needs a non-singular covariance of the pooled features
MIN_PROXY_FID_IMAGES = EXTRACTOR_WIDTHS[-1] + 1
DEFAULT_EVAL_IMAGES = 128
PROXY_LABEL = ('proxy_fid is a Frechet distance over the frozen fixed-seed extractor; '
               'it is not Inception FID and is not comparable with published FID values')


@dataclass
class EvalReport:
    """Per mask type means of every requested metric.

    `cells[type][metric]` is the mean over successful items (None for a set
    metric that could not be computed), `items[type]` keeps the per-image
    scores for paired significance tests.
    """

    cells: Dict[str, Dict[str, Optional[float]]]
    counts: Dict[str, int]
    failures: Dict[str, int]
    config: dict = field(default_factory=dict)
    items: Dict[str, List[dict]] = field(default_factory=dict)
    deltas: Dict[str, Dict[str, float]] = field(default_factory=dict)
    p_values: Dict[str, float] = field(default_factory=dict)
    proxy_label: str = PROXY_LABEL

    @property
    def mask_types(self):
        return list(self.cells)

    def metrics(self):
        names = []
        for row in self.cells.values():
            names.extend(m for m in row if m not in names)
        return names

    def to_dict(self):
        return asdict(self)

    def to_json(self, path):
        with open(path, 'w') as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write('\n')

    @classmethod
    def from_json(cls, path):
        with open(path) as f:
            return cls(**json.load(f))

    def with_baseline(self, baseline):
        """Adds `self - baseline` for every (type, metric) cell both reports hold."""
        deltas = {}
        for mask_type, row in self.cells.items():
            base_row = baseline.cells.get(mask_type, {})
            deltas[mask_type] = {metric: value - base_row[metric] for metric, value in row.items()
                                 if value is not None and base_row.get(metric) is not None}
        self.deltas = deltas
        return self

    def to_table(self, floatfmt='.4f'):
        metrics = self.metrics()
        headers = ['mask type', 'n', 'failed'] + metrics
        if self.deltas:
            headers += [f'd_{m}' for m in metrics]
        if self.p_values:
            headers.append('p_value')

        rows = []
        for mask_type, row in self.cells.items():
            line = [mask_type, self.counts.get(mask_type, 0), self.failures.get(mask_type, 0)]
            line += [row.get(m) if row.get(m) is not None else 'n/a' for m in metrics]
            if self.deltas:
                line += [self.deltas.get(mask_type, {}).get(m, 'n/a') for m in metrics]
            if self.p_values:
                line.append(self.p_values.get(mask_type, 'n/a'))
            rows.append(line)
        table = tabulate(rows, headers=headers, floatfmt=floatfmt)
        return f'# {self.proxy_label}\n{table}'


def load_generator(path):
    """Generator rebuilt from the config echoed in a checkpoint."""
    checkpoint = load_checkpoint(path)
    model_config = FfcConfig(**checkpoint.config['model'])
    dtype = torch.float64 if checkpoint.config['train'].get('dtype') == 'float64' else torch.float32
    generator = Generator(model_config).to(dtype)
    load_into(checkpoint, generator)
    generator.eval()
    return generator


def _score_item(x, fake, mask, metrics):
    merged = composite(x, fake, mask)
    item = {}
    if 'composite_l1' in metrics:
        item['composite_l1'] = float((merged - x).abs().mean())
    if 'psnr' in metrics:
        item['psnr'] = psnr(merged, x)
    if 'ssim' in metrics:
        item['ssim'] = ssim(merged, x)
    if 'artifact_raw' in metrics:
        item['artifact_raw'] = artifact_score(fake)
    for name, value in item.items():
        if not np.isfinite(value):
            raise MetricError(f'{name} is not finite ({value})')
    return item, merged


def evaluate(checkpoint, dataset, mask_suite=MaskPolicy.GENERAL, metrics=ALL_METRICS, seed=0,
             extractor=None):
    """Scores a generator on every (image, mask type) pair.

    Masks are drawn from (seed, image index, type index), so the suite is
    the same for every checkpoint evaluated with the same seed. Metrics use
    the composite; `artifact_raw` is measured on the raw prediction.

    Args:
        checkpoint (str or Generator): checkpoint path or a live generator.
        dataset (ImageCollection): validation images.
        mask_suite (MaskPolicy or list of MaskType): mask types to evaluate.
        metrics (tuple of str): subset of ALL_METRICS.
        seed (int): mask suite seed.

    Returns:
        EvalReport
    """
    unknown = [m for m in metrics if m not in ALL_METRICS]
    if unknown:
        raise ValueError(f'unknown metrics {unknown}, expected a subset of {ALL_METRICS}')
    generator = load_generator(checkpoint) if isinstance(checkpoint, str) else checkpoint
    dtype = next(generator.parameters()).dtype
    if isinstance(mask_suite, str):
        mask_suite = MaskPolicy(mask_suite).types
    mask_types = [MaskType(t) for t in mask_suite]
    if 'proxy_fid' in metrics and extractor is None:
        extractor = FeatureExtractor(dtype=dtype)

    images = dataset.to_tensor(dtype=dtype)
    size = images.shape[-1]
    if 'proxy_fid' in metrics and len(images) < MIN_PROXY_FID_IMAGES:
        logger.warning(f'proxy_fid needs {MIN_PROXY_FID_IMAGES} images, got {len(images)}; '
                       f'its cells will be empty')
    cells, counts, failures, items = {}, {}, {}, {}
    for type_idx, mask_type in enumerate(tqdm(mask_types, desc='eval', disable=None)):
        type_items, merged_images, real_images = [], [], []
        n_failed = 0
        for i in range(len(images)):
            x = images[i:i + 1]
            try:
                mask = generate(mask_type, size, size, (seed, i, type_idx)).to_tensor(dtype)[None]
                with torch.no_grad():
                    fake = generator(x, mask)
                item, merged = _score_item(x, fake, mask, metrics)
            except (MetricError, MaskError, ValueError, RuntimeError) as e:
                logger.warning(f'{mask_type.value} item {i} ({dataset.names[i]}) failed: {e}')
                type_items.append({'image': dataset.names[i], 'error': str(e)})
                n_failed += 1
                continue
            item['image'] = dataset.names[i]
            type_items.append(item)
            merged_images.append(merged)
            real_images.append(x)

        ok = [item for item in type_items if 'error' not in item]
        row = {m: (float(np.mean([item[m] for item in ok])) if ok else None)
               for m in metrics if m in ITEM_METRICS}
        if 'proxy_fid' in metrics:
            row['proxy_fid'] = _set_fid(real_images, merged_images, extractor, mask_type)

        name = mask_type.value
        cells[name], counts[name], failures[name], items[name] = row, len(ok), n_failed, type_items

    config = {'seed': seed, 'mask_types': [t.value for t in mask_types], 'metrics': list(metrics),
              'n_images': len(images)}
    return EvalReport(cells=cells, counts=counts, failures=failures, config=config, items=items)


def _set_fid(real_images, merged_images, extractor, mask_type):
    if not merged_images:
        return None
    try:
        real = extract_features(torch.cat(real_images), extractor)
        fake = extract_features(torch.cat(merged_images), extractor)
        return proxy_fid(real, fake)
    except MetricError as e:
        logger.warning(f'proxy_fid skipped for {mask_type.value}: {e}')
        return None
