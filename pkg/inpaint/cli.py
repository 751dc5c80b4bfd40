"""glama-lab command line: one entry point, one subcommand per stage.

Exit codes: 0 success, 1 usage error, 2 runtime failure. Every run writes
manifest.json (argv and resolved configuration) into its output directory.
"""
import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, fields

import jsonlines
import numpy as np
import torch
from PIL import Image
from tabulate import tabulate
from transformers import HfArgumentParser

from inpaint.evaluate import (ALL_METRICS, DEFAULT_EVAL_IMAGES, MIN_PROXY_FID_IMAGES, EvalReport,
                              evaluate, load_generator)
from inpaint.frequency import checkerboard_score, ffl, ripple_score, spectrum_image
from inpaint.gradcheck import SUITES, run_suites
from inpaint.losses import LossWeights
from inpaint.model import FfcConfig
from inpaint.stat_significance.significance import compare_reports
from inpaint.train import VAL_SEED_OFFSET, TrainConfig, run_training
from inpaint.utils.checkpoint import get_best_checkpoint, read_manifest
from inpaint.utils.data_utils import ingest_images, load_image, save_image, synth_dataset
from masks.generators import coverage_stats, generate
from masks.mask import MaskPolicy, MaskType, coverage, sample_type
from masks.pbm import save_mask


logger = logging.getLogger(__name__)

MANIFEST_FILE = 'manifest.json'
LOG_LEVELS = ('DEBUG', 'INFO', 'WARNING', 'ERROR')
TRAIN_DATACLASSES = (TrainConfig, LossWeights, FfcConfig)


class UsageError(ValueError):
    pass


def _common_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--seed', type=int, default=None, help='Run seed.')
    common.add_argument('--config', default=None,
                        help='JSON file of flat key/value defaults; explicit flags win.')
    common.add_argument('--out-dir', dest='out_dir', default=None, help='Output directory.')
    common.add_argument('--log-level', dest='log_level', default='INFO', choices=LOG_LEVELS)
    return common


def build_parser():
    common = _common_parser()
    parser = argparse.ArgumentParser(prog='glama-lab', allow_abbrev=False,
                                     description='Desk-scale inpainting lab: masks, losses, '
                                                 'FFC training and per-mask-type evaluation.')
    sub = parser.add_subparsers(dest='command', required=True)

    def add(name, help_text):
        return sub.add_parser(name, parents=[common], help=help_text, allow_abbrev=False)

    gen = add('gen-masks', 'Write masks as portable bitmaps.')
    kind = gen.add_mutually_exclusive_group()
    kind.add_argument('--type', dest='mask_type', choices=[t.value for t in MaskType], default=None)
    kind.add_argument('--policy', choices=[p.value for p in MaskPolicy], default='general')
    gen.add_argument('--count', type=int, default=7)
    gen.add_argument('--size', type=int, default=64)
    gen.add_argument('--stats', action='store_true',
                     help='Only report per-type coverage over --count seeds.')

    synth = add('synth-data', 'Write the procedural dataset as portable pixmaps.')
    synth.add_argument('--count', type=int, default=64)
    synth.add_argument('--size', type=int, default=64)

    add('train', 'Train a generator; remaining flags are TrainConfig, LossWeights and '
                 'FfcConfig fields (e.g. --steps 0 --loss_mode lama).')

    ev = add('eval', 'Score a checkpoint per mask type.')
    ev.add_argument('--checkpoint', default=None,
                    help='Checkpoint file, or a training directory (its best checkpoint is used).')
    ev.add_argument('--data', default='synthetic',
                    help='Image directory, or "synthetic" for the held-out procedural set.')
    ev.add_argument('--policy', choices=[p.value for p in MaskPolicy], default='general')
    ev.add_argument('--metrics', default=','.join(ALL_METRICS),
                    help=f'Comma separated subset of {",".join(ALL_METRICS)}.')
    ev.add_argument('--num-images', dest='num_images', type=int, default=DEFAULT_EVAL_IMAGES,
                    help=f'Synthetic images to score; proxy_fid needs at least {MIN_PROXY_FID_IMAGES}.')
    ev.add_argument('--baseline-report', dest='baseline_report', default=None,
                    help='report.json of a baseline run; adds delta and p-value columns.')

    spec = add('spectrum', 'Spectrum images and artifact scores for image files.')
    spec.add_argument('images', nargs='+')
    spec.add_argument('--reference', default=None, help='Image to compute ffl against.')
    spec.add_argument('--size', type=int, default=None, help='Resize to this side first.')

    grad = add('gradcheck', 'Finite-difference checks of every loss and the FFC model.')
    grad.add_argument('--all', action='store_true')
    grad.add_argument('--suite', action='append', default=[], choices=sorted(SUITES))
    return parser


def load_config_file(path, allowed):
    """Flat key/value JSON; keys outside `allowed` are a usage error."""
    try:
        with open(path) as f:
            values = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise UsageError(f'cannot read config {path}: {e}') from e
    if not isinstance(values, dict):
        raise UsageError(f'config {path} must hold a JSON object')
    unknown = sorted(set(values) - set(allowed))
    if unknown:
        raise UsageError(f'config {path} has unknown keys {unknown}')
    return values


def _subcommand_dests(parser, command):
    subparser = parser._subparsers._group_actions[0].choices[command]
    return {action.dest for action in subparser._actions if action.dest != 'help'}, subparser


def write_manifest(out_dir, argv, command, config):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, MANIFEST_FILE)
    with open(path, 'w') as f:
        json.dump({'command': command, 'argv': list(argv), 'config': config}, f, indent=2, sort_keys=True)
        f.write('\n')
    return path


def _seed(args, default=0):
    return default if args.seed is None else args.seed


def cmd_gen_masks(args):
    seed = _seed(args)
    if args.count < 1:
        raise UsageError(f'--count must be >= 1, got {args.count}')
    types = [MaskType(args.mask_type)] if args.mask_type else list(MaskPolicy(args.policy).types)

    if args.stats:
        rows = [coverage_stats(t, args.size, args.size, [(seed, i) for i in range(args.count)])
                for t in types]
        with jsonlines.open(os.path.join(args.out_dir, 'coverage_stats.jsonl'), mode='w') as writer:
            writer.write_all(rows)
        print(tabulate([[r['type'], r['n'], r['min'], r['mean'], r['max'], r['declared_range']]
                        for r in rows], headers=['type', 'n', 'min', 'mean', 'max', 'declared'],
                       floatfmt='.4f'))
        return 0

    rng = np.random.default_rng(np.random.SeedSequence(seed))
    records = []
    for i in range(args.count):
        mask_type = types[0] if args.mask_type else sample_type(args.policy, rng)
        mask = generate(mask_type, args.size, args.size, (seed, i))
        name = f'mask-{i:05d}-{mask_type.value}.pbm'
        save_mask(mask, os.path.join(args.out_dir, name))
        records.append({'file': name, 'type': mask_type.value, 'seed': [seed, i],
                        'coverage': coverage(mask)})
    with jsonlines.open(os.path.join(args.out_dir, 'masks.jsonl'), mode='w') as writer:
        writer.write_all(records)
    logger.info(f'Wrote {len(records)} masks to {args.out_dir}')
    return 0


def cmd_synth_data(args):
    if args.count < 1:
        raise UsageError(f'--count must be >= 1, got {args.count}')
    collection = synth_dataset(args.count, args.size, _seed(args))
    with jsonlines.open(os.path.join(args.out_dir, 'labels.jsonl'), mode='w') as writer:
        for image, name, label in zip(collection.images, collection.names, collection.labels):
            save_image(image, os.path.join(args.out_dir, f'{name}.ppm'))
            writer.write({'file': f'{name}.ppm', 'label': label})
    logger.info(f'Wrote {len(collection)} images to {args.out_dir}')
    return 0


def parse_train_args(rest, config_values, seed=None, out_dir=None):
    """TrainConfig, LossWeights and FfcConfig from flags over config-file defaults."""
    parser = HfArgumentParser(TRAIN_DATACLASSES)
    defaults = dict(config_values)
    if seed is not None:
        defaults['seed'] = seed
    if out_dir is not None:
        defaults['output_dir'] = out_dir
    parser.set_defaults(**defaults)
    try:
        return parser.parse_args_into_dataclasses(args=rest, look_for_args_file=False)
    except ValueError as e:
        raise UsageError(str(e)) from e


def train_field_names():
    return {f.name for cls in TRAIN_DATACLASSES for f in fields(cls)}


def cmd_eval(args):
    if not args.checkpoint:
        raise UsageError('eval needs --checkpoint')
    checkpoint = args.checkpoint
    if os.path.isdir(checkpoint):
        best = get_best_checkpoint(checkpoint)
        if best is None:
            raise FileNotFoundError(f'{checkpoint}: no checkpoint with a validation record')
        logger.info(f"Using best checkpoint {best['path']} (val composite L1 {best['val_l1']:.4f})")
        checkpoint = best['path']

    metrics = tuple(m.strip() for m in args.metrics.split(',') if m.strip())
    unknown = [m for m in metrics if m not in ALL_METRICS]
    if unknown:
        raise UsageError(f'unknown metrics {unknown}, expected a subset of {ALL_METRICS}')

    train_config = json.loads(read_manifest(checkpoint)['metadata']['config'])['train']
    resolution = train_config['resolution']
    if args.data == 'synthetic':
        # the held-out set the checkpoint was validated on
        dataset = synth_dataset(args.num_images, resolution, train_config['seed'] + VAL_SEED_OFFSET)
    else:
        dataset = ingest_images(args.data, resolution, val_ratio=0.0).train

    generator = load_generator(checkpoint)
    report = evaluate(generator, dataset, MaskPolicy(args.policy), metrics, seed=_seed(args))
    report.config['checkpoint'] = checkpoint
    report.config['data'] = args.data
    if args.baseline_report:
        baseline = EvalReport.from_json(args.baseline_report)
        report.with_baseline(baseline)
        report.p_values = compare_reports(report, baseline)

    report.to_json(os.path.join(args.out_dir, 'report.json'))
    table = report.to_table()
    with open(os.path.join(args.out_dir, 'report.txt'), 'w') as f:
        f.write(table + '\n')
    print(table)
    return 0


def write_spectrum_png(grid, path):
    pixels = np.clip(np.rint(grid.numpy() * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(pixels).save(path)


def cmd_spectrum(args):
    reference = None
    if args.reference:
        reference = torch.from_numpy(load_image(args.reference, args.size))

    records = []
    for path in args.images:
        x = torch.from_numpy(load_image(path, args.size))
        stem = os.path.splitext(os.path.basename(path))[0]
        out_path = os.path.join(args.out_dir, f'{stem}.spectrum.png')
        write_spectrum_png(spectrum_image(x), out_path)
        record = {'image': path, 'spectrum': out_path,
                  'checkerboard_score': checkerboard_score(x), 'ripple_score': ripple_score(x)}
        if reference is not None:
            if reference.shape != x.shape:
                raise ValueError(f'{path} is {tuple(x.shape)} but the reference is '
                                 f'{tuple(reference.shape)}; pass --size')
            record['ffl'] = ffl(reference, x).item()
        records.append(record)

    with jsonlines.open(os.path.join(args.out_dir, 'spectrum.jsonl'), mode='w') as writer:
        writer.write_all(records)
    print(tabulate([[r['image'], r['checkerboard_score'], r['ripple_score'], r.get('ffl', 'n/a')]
                    for r in records], headers=['image', 'checkerboard', 'ripple', 'ffl'],
                   floatfmt='.4f'))
    return 0


def cmd_gradcheck(args):
    if not args.all and not args.suite:
        raise UsageError('gradcheck needs --all or at least one --suite')
    names = None if args.all else args.suite
    results = run_suites(names, seed=_seed(args))

    with jsonlines.open(os.path.join(args.out_dir, 'gradcheck.jsonl'), mode='w') as writer:
        for name, report in results:
            writer.write({'suite': name, **report.to_dict()})
    print(tabulate([[name, report.max_abs_err, report.max_rel_err, report.tolerance,
                     'pass' if report.passed else 'FAIL'] for name, report in results],
                   headers=['suite', 'max abs err', 'max rel err', 'tolerance', 'result'],
                   floatfmt='.3e'))
    failed = [name for name, report in results if not report.passed]
    if failed:
        logger.error(f'gradient suites failed: {failed}')
        return 2
    return 0


COMMANDS = {
    'gen-masks': cmd_gen_masks,
    'synth-data': cmd_synth_data,
    'eval': cmd_eval,
    'spectrum': cmd_spectrum,
    'gradcheck': cmd_gradcheck,
}


def _configure_logging(level):
    logging.basicConfig(
        format="%(asctime)s - %(levelname)s - %(name)s -   %(message)s",
        datefmt="%m/%d/%Y %H:%M:%S",
        level=getattr(logging, level),
    )


def _run(parser, argv):
    args, rest = parser.parse_known_args(argv)
    _configure_logging(args.log_level)

    if args.command == 'train':
        config_values = load_config_file(args.config, train_field_names()) if args.config else {}
        train_config, weights, model_config = parse_train_args(rest, config_values, args.seed, args.out_dir)
        resolved = {'train': asdict(train_config), 'weights': asdict(weights), 'model': asdict(model_config)}
        try:
            train_config.validate()
            model_config.validate()
        except ValueError as e:
            raise UsageError(str(e)) from e
        write_manifest(train_config.output_dir, argv, args.command, resolved)
        result = run_training(train_config, weights, model_config)
        print(result.final_checkpoint)
        return 0

    if rest:
        parser.error(f'unrecognized arguments: {" ".join(rest)}')
    dests, subparser = _subcommand_dests(parser, args.command)
    if args.config:
        config_values = load_config_file(args.config, dests - {'config', 'command'})
        subparser.set_defaults(**config_values)
        args = parser.parse_args(argv)
    if args.out_dir is None:
        args.out_dir = os.path.join('runs', args.command)
    os.makedirs(args.out_dir, exist_ok=True)
    resolved = {k: v for k, v in vars(args).items() if k != 'command'}
    write_manifest(args.out_dir, argv, args.command, resolved)
    return COMMANDS[args.command](args)


def dispatch(argv):
    """Runs one subcommand.

    Returns:
        int: 0 on success, 1 on a usage error, 2 on a runtime failure.
    """
    parser = build_parser()
    try:
        return _run(parser, list(argv))
    except SystemExit as e:
        # argparse and HfArgumentParser exit on bad flags and on --help
        return 0 if e.code in (0, None) else 1
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f'glama-lab: error: {e}', file=sys.stderr)
        return 1
    except Exception as e:
        logger.error(f'{type(e).__name__}: {e}')
        return 2


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == '__main__':
    main()
