#!/usr/bin/env python3
# coding=utf-8

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from gawm.exceptions import InputError
from gawm.replay_buffer import EpisodeTrajectory, PseudoSegment

logger = logging.getLogger(__name__)

REQUIRED_KEYS = ('episode_id', 't', 'obs', 'action', 'reward_raw', 'reward_smoothed', 'continuation', 'source')


@dataclass
class TrajectoryLog:
    episodes: list[EpisodeTrajectory] = field(default_factory=list)
    segments: list[PseudoSegment] = field(default_factory=list)


class TrajectoryLogWriter:
    """Appends one JSON record per timestep.

    A trajectory of L transitions takes L+1 records; the last one carries the
    final observation and null action, rewards and continuation.
    """

    def __init__(self, path: Path, mode: str = 'a'):
        self.path = Path(path)
        self.mode = mode
        self._file = None

    def __enter__(self) -> 'TrajectoryLogWriter':
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._file = open(self.path, self.mode, encoding='utf-8')
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self._file.close()
        self._file = None

    def _write(self, record: dict):
        self._file.write(json.dumps(record) + '\n')

    def write_episode(self, episode: EpisodeTrajectory):
        for t in range(len(episode)):
            self._write({
                'episode_id': episode.episode_id,
                't': t,
                'obs': episode.observations[t].tolist(),
                'action': episode.actions[t].tolist(),
                'reward_raw': float(episode.rewards_raw[t]),
                'reward_smoothed': float(episode.rewards_smoothed[t]),
                'continuation': float(episode.continuations[t]),
                'source': 'real',
            })
        self._write({
            'episode_id': episode.episode_id,
            't': len(episode),
            'obs': episode.observations[-1].tolist(),
            'action': None,
            'reward_raw': None,
            'reward_smoothed': None,
            'continuation': None,
            'source': 'real',
            'meta': episode.meta,
        })
        logger.log(9, f'Logged real episode {episode.episode_id} with {len(episode)} transitions')

    def write_segment(self, segment: PseudoSegment, segment_id: int):
        for t in range(len(segment)):
            self._write({
                'episode_id': segment_id,
                't': t,
                'obs': segment.observations[t].tolist(),
                'action': segment.actions[t].tolist(),
                'reward_raw': float(segment.rewards[t]),
                'reward_smoothed': float(segment.rewards[t]),
                'continuation': float(segment.continuations[t]),
                'source': segment.source,
                'log_prob': segment.log_probs[t].tolist(),
                'origin': list(segment.origin),
            })
        self._write({
            'episode_id': segment_id,
            't': len(segment),
            'obs': segment.observations[-1].tolist(),
            'action': None,
            'reward_raw': None,
            'reward_smoothed': None,
            'continuation': None,
            'source': segment.source,
            'origin': list(segment.origin),
        })


def _iter_records(path: Path) -> Iterator[dict]:
    with open(path, 'r', encoding='utf-8') as file:
        for line_number, line in enumerate(file, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise InputError(f'Line {line_number} of {path} is not valid JSON: {e}')
            missing = [key for key in REQUIRED_KEYS if key not in record]
            if missing:
                raise InputError(f'Line {line_number} of {path} lacks {", ".join(missing)}')
            yield record


def _group_records(path: Path) -> Iterator[list[dict]]:
    current: list[dict] = []
    for record in _iter_records(path):
        if current and (record['source'], record['episode_id']) != (current[0]['source'], current[0]['episode_id']):
            raise InputError(f'Trajectory {current[0]["episode_id"]} in {path} ends without a final observation')
        if record['t'] != len(current):
            raise InputError(f'Trajectory {record["episode_id"]} in {path} has timestep {record["t"]} out of order')
        current.append(record)
        if record['action'] is None:
            yield current
            current = []
    if current:
        raise InputError(f'Trajectory {current[0]["episode_id"]} in {path} is truncated')


def _to_episode(records: list[dict]) -> EpisodeTrajectory:
    transitions = records[:-1]
    episode = EpisodeTrajectory(
        observations=np.array([r['obs'] for r in records], dtype=np.float32),
        actions=np.array([r['action'] for r in transitions], dtype=np.int64),
        rewards_raw=np.array([r['reward_raw'] for r in transitions], dtype=np.float64),
        rewards_smoothed=np.array([r['reward_smoothed'] for r in transitions], dtype=np.float64),
        continuations=np.array([r['continuation'] for r in transitions], dtype=np.float64),
        episode_id=records[0]['episode_id'],
        meta=records[-1].get('meta') or {},
    )
    episode.validate()
    return episode


def _to_segment(records: list[dict]) -> PseudoSegment:
    transitions = records[:-1]
    n_agents = len(records[0]['obs'])
    segment = PseudoSegment(
        observations=np.array([r['obs'] for r in records], dtype=np.float32),
        actions=np.array([r['action'] for r in transitions], dtype=np.int64),
        log_probs=np.array([r.get('log_prob', [0.0] * n_agents) for r in transitions], dtype=np.float32),
        rewards=np.array([r['reward_raw'] for r in transitions], dtype=np.float32),
        continuations=np.array([r['continuation'] for r in transitions], dtype=np.float32),
        origin=tuple(records[0].get('origin', (0, 0))),
        source=records[0]['source'],
    )
    segment.validate()
    return segment


def read_trajectory_log(path: Path, source: Optional[str] = None) -> TrajectoryLog:
    path = Path(path)
    if not path.is_file():
        raise InputError(f'Trajectory log {path} does not exist')
    log = TrajectoryLog()
    for records in _group_records(path):
        record_source = records[0]['source']
        if source is not None and record_source != source:
            continue
        if len(records) < 2:
            raise InputError(f'Trajectory {records[0]["episode_id"]} in {path} holds no transitions')
        if record_source == 'real':
            log.episodes.append(_to_episode(records))
        elif record_source == 'pseudo':
            log.segments.append(_to_segment(records))
        else:
            raise InputError(f'Unknown trajectory source "{record_source}" in {path}')
    logger.debug(f'Read {len(log.episodes)} real episodes and {len(log.segments)} pseudo segments from {path}')
    return log
