import argparse

import numpy as np

from inpaint.evaluate import EvalReport


def aggregate_score(scores):
    """Mean of per-item scores (e.g. composite L1 per image)."""
    return float(np.mean(scores))


def paired_ar_test(system1_scores, system2_scores, n_trials=10000, seed=12345):
    """
    A paired two-sided approximate randomization test on the difference of
    mean per-item scores of two systems evaluated on the same items.

    Swapping the two systems' scores on an item flips the sign of that
    item's difference, so every trial is one row of random signs.

    Args:
        system1_scores (list of float): per-item scores of system 1.
        system2_scores (list of float): per-item scores of system 2, same
            item order.
        n_trials (int, optional): number of shuffles. Defaults to 10000.
        seed (int, optional): Defaults to 12345.

    Returns:
        float: the p-value, (c + 1) / (n_trials + 1).
    """
    if len(system1_scores) != len(system2_scores):
        raise ValueError(f'paired test needs equal item counts, got {len(system1_scores)} '
                         f'and {len(system2_scores)}')
    rng = np.random.default_rng(seed)

    diffs = np.asarray(system1_scores, dtype=np.float64) - np.asarray(system2_scores, dtype=np.float64)
    observed = abs(aggregate_score(diffs))
    signs = rng.choice([-1.0, 1.0], size=(n_trials, len(diffs)))
    pseudo = np.abs((signs * diffs).mean(axis=1))
    c = int((pseudo >= observed).sum())

    return (c + 1) / (n_trials + 1)


def compare_reports(report, baseline, metric='composite_l1', n_trials=10000, seed=12345):
    """p-value per mask type shared by both reports, on the per-item scores
    of `metric`. Items are paired by (image name) within each type."""
    p_values = {}
    for mask_type, items in report.items.items():
        base_items = baseline.items.get(mask_type)
        if not base_items:
            continue
        base_by_name = {item['image']: item for item in base_items}
        pairs = [(item[metric], base_by_name[item['image']][metric]) for item in items
                 if item.get(metric) is not None and item['image'] in base_by_name
                 and base_by_name[item['image']].get(metric) is not None]
        if not pairs:
            continue
        scores1, scores2 = zip(*pairs)
        p_values[mask_type] = paired_ar_test(list(scores1), list(scores2), n_trials, seed)
    return p_values


if __name__ == '__main__':
    parser = argparse.ArgumentParser()
    parser.add_argument('--system1_report')
    parser.add_argument('--system2_report')
    parser.add_argument('--metric', default='composite_l1')

    args = parser.parse_args()

    p_values = compare_reports(EvalReport.from_json(args.system1_report),
                               EvalReport.from_json(args.system2_report),
                               metric=args.metric)
    for mask_type, p_value in p_values.items():
        print(f'{mask_type}\tp-value: {p_value:.5f}')
