#!/usr/bin/env python3
# coding=utf-8

import csv
import logging
from collections import defaultdict
from pathlib import Path

import numpy as np

from gawm.configuration import Configuration
from gawm.connector import RunConnector
from gawm.exceptions import InputError
from gawm.trainer import METRICS_HEADER

logger = logging.getLogger(__name__)

TIDY_HEADER = ('run_id', 'env_steps', 'metric', 'value')
SEED_MEAN_RUN_ID = 'seed_mean'
SEED_MIN_RUN_ID = 'seed_min'
SEED_MAX_RUN_ID = 'seed_max'


def read_metrics_file(path: Path) -> list[dict[str, float]]:
    path = Path(path)
    if not path.is_file():
        raise InputError(f'Metrics file {path} does not exist')
    with open(path, 'r', newline='', encoding='utf-8') as file:
        reader = csv.DictReader(file)
        if reader.fieldnames is None or tuple(reader.fieldnames) != METRICS_HEADER:
            raise InputError(f'Metrics file {path} does not carry the expected header')
        rows = []
        for line_number, row in enumerate(reader, start=2):
            try:
                rows.append({key: float(value) for key, value in row.items() if value not in ('', None)})
            except ValueError as e:
                raise InputError(f'Line {line_number} of {path} holds a non-numeric value: {e}')
            if 'outer_episode' not in rows[-1] or 'env_steps' not in rows[-1]:
                raise InputError(f'Line {line_number} of {path} lacks its episode or step counter')
    return rows


def _run_ids(paths: list[Path]) -> list[str]:
    names = [path.parent.name if path.stem == 'metrics' else path.stem for path in paths]
    if len(set(names)) < len(names):
        names = [f'{name}_{i}' for i, name in enumerate(names)]
    return names


def tidy_rows(runs: dict[str, list[dict[str, float]]]) -> list[tuple]:
    """Long-format rows for every run followed by the cross-seed mean, min and max series.

    Runs are aligned by outer episode. The summary series share the mean env
    steps and reduce each metric over the runs that reported it at that episode.
    """
    metrics = [name for name in METRICS_HEADER if name not in ('outer_episode', 'env_steps')]
    rows = []
    for run_id, records in runs.items():
        for record in records:
            rows.extend(
                (run_id, int(record['env_steps']), metric, record[metric]) for metric in metrics if metric in record)

    aligned = defaultdict(list)
    for records in runs.values():
        for record in records:
            aligned[int(record['outer_episode'])].append(record)
    for outer in sorted(aligned):
        records = aligned[outer]
        steps = int(round(np.mean([r['env_steps'] for r in records])))
        for metric in metrics:
            values = [r[metric] for r in records if metric in r]
            if values:
                rows.append((SEED_MEAN_RUN_ID, steps, metric, float(np.mean(values))))
                rows.append((SEED_MIN_RUN_ID, steps, metric, float(np.min(values))))
                rows.append((SEED_MAX_RUN_ID, steps, metric, float(np.max(values))))
    return rows


class PlotExporter(RunConnector):
    def __init__(self, args: Configuration):
        super(PlotExporter, self).__init__(args)

    def run(self) -> Path:
        if not self.args.metrics_file:
            raise InputError('At least one metrics file is required')
        paths = [Path(p) for p in self.args.metrics_file]
        runs = {run_id: read_metrics_file(path) for run_id, path in zip(_run_ids(paths), paths)}
        rows = tidy_rows(runs)
        output_path = Path(self.output_directory, 'plot_data.csv')
        with open(output_path, 'w', newline='', encoding='utf-8') as file:
            writer = csv.writer(file)
            writer.writerow(TIDY_HEADER)
            writer.writerows(rows)
        logger.info(f'Exported {len(rows)} rows from {len(runs)} runs to {output_path}')
        return output_path
