#!/usr/bin/env python3
# coding=utf-8

import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Union

import numpy as np

from gawm.exceptions import BufferStateError, InputError

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.Generator, None]


def _as_generator(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class EpisodeTrajectory:
    observations: np.ndarray
    actions: np.ndarray
    rewards_raw: np.ndarray
    rewards_smoothed: np.ndarray
    continuations: np.ndarray
    episode_id: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.observations = np.asarray(self.observations, dtype=np.float32)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards_raw = np.asarray(self.rewards_raw, dtype=np.float64)
        self.rewards_smoothed = np.asarray(self.rewards_smoothed, dtype=np.float64)
        self.continuations = np.asarray(self.continuations, dtype=np.float64)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def success(self) -> bool:
        return bool(self.meta.get('success', False))

    def validate(self):
        length = len(self.actions)
        if length < 1:
            raise InputError(f'Episode {self.episode_id} holds no transitions')
        if self.observations.ndim != 3 or self.observations.shape[0] != length + 1:
            raise InputError(
                f'Episode {self.episode_id} needs {length + 1} joint observations, got shape {self.observations.shape}')
        n_agents = self.observations.shape[1]
        if self.actions.shape != (length, n_agents):
            raise InputError(f'Episode {self.episode_id} actions have shape {self.actions.shape}')
        for name in ('rewards_raw', 'rewards_smoothed', 'continuations'):
            if getattr(self, name).shape != (length,):
                raise InputError(f'Episode {self.episode_id} {name} has shape {getattr(self, name).shape}')
        if not np.all(np.isin(self.continuations, (0.0, 1.0))):
            raise InputError(f'Episode {self.episode_id} continuations must be 0 or 1')
        if np.any(self.continuations[:-1] == 0):
            raise InputError(f'Episode {self.episode_id} continues past a terminal transition')


@dataclass
class PseudoSegment:
    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    continuations: np.ndarray
    origin: tuple[int, int] = (0, 0)
    source: str = 'pseudo'

    def __len__(self) -> int:
        return len(self.actions)

    def validate(self):
        length = len(self.actions)
        if length < 1 or self.observations.shape[0] != length + 1:
            raise InputError(f'Pseudo segment from {self.origin} has inconsistent lengths')
        for name in ('rewards', 'continuations'):
            if getattr(self, name).shape != (length,):
                raise InputError(f'Pseudo segment from {self.origin} {name} has shape {getattr(self, name).shape}')
        if self.log_probs.shape != self.actions.shape:
            raise InputError(f'Pseudo segment from {self.origin} log_probs do not match its actions')
        if np.any(self.continuations[:-1] == 0):
            raise InputError(f'Pseudo segment from {self.origin} continues past an imagined termination')


@dataclass
class WindowBatch:
    observations: np.ndarray
    actions: np.ndarray
    rewards_raw: np.ndarray
    rewards_smoothed: np.ndarray
    continuations: np.ndarray
    origins: list[tuple[int, int]]


@dataclass
class SegmentBatch:
    observations: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    continuations: np.ndarray
    mask: np.ndarray
    sources: list[str]


class RealReplayBuffer:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise InputError(f'Buffer capacity must be at least 1, got {capacity}')
        self.capacity = capacity
        self.episodes: deque[EpisodeTrajectory] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.episodes)

    def __iter__(self) -> Iterator[EpisodeTrajectory]:
        return iter(self.episodes)

    def push_real(self, trajectory: EpisodeTrajectory):
        trajectory.validate()
        if len(self.episodes) == self.capacity:
            logger.log(9, f'Real buffer full, evicting episode {self.episodes[0].episode_id}')
        self.episodes.append(trajectory)

    def longest_episode(self) -> int:
        return max((len(ep) for ep in self.episodes), default=0)

    def sample_real_windows(self, batch_size: int, window_len: int, seed: SeedLike = None) -> WindowBatch:
        if not self.episodes:
            raise BufferStateError('Cannot sample windows from an empty real buffer')
        if window_len < 1:
            raise InputError(f'Window length must be at least 1, got {window_len}')
        candidates = [
            (i, start)
            for i, ep in enumerate(self.episodes)
            for start in range(len(ep) - window_len + 1)
        ]
        if not candidates:
            raise BufferStateError(f'No stored episode is at least {window_len} transitions long')
        rng = _as_generator(seed)
        chosen = rng.integers(0, len(candidates), size=batch_size)
        windows = [candidates[c] for c in chosen]
        stop = window_len
        return WindowBatch(
            observations=np.stack([self.episodes[i].observations[s:s + stop + 1] for i, s in windows]),
            actions=np.stack([self.episodes[i].actions[s:s + stop] for i, s in windows]),
            rewards_raw=np.stack([self.episodes[i].rewards_raw[s:s + stop] for i, s in windows]),
            rewards_smoothed=np.stack([self.episodes[i].rewards_smoothed[s:s + stop] for i, s in windows]),
            continuations=np.stack([self.episodes[i].continuations[s:s + stop] for i, s in windows]),
            origins=[(self.episodes[i].episode_id, s) for i, s in windows],
        )

    def sample_seed_observations(self, count: int, seed: SeedLike = None) -> tuple[np.ndarray, list[tuple[int, int]]]:
        """Draw joint observations uniformly over all non-terminal timesteps"""
        if not self.episodes:
            raise BufferStateError('Cannot draw imagination seeds from an empty real buffer')
        candidates = [(i, t) for i, ep in enumerate(self.episodes) for t in range(len(ep))]
        rng = _as_generator(seed)
        chosen = rng.integers(0, len(candidates), size=count)
        picks = [candidates[c] for c in chosen]
        observations = np.stack([self.episodes[i].observations[t] for i, t in picks])
        return observations, [(self.episodes[i].episode_id, t) for i, t in picks]

    def dump(self, path: Path):
        from gawm.trajectory_log import TrajectoryLogWriter
        with TrajectoryLogWriter(path, mode='w') as writer:
            for episode in self.episodes:
                writer.write_episode(episode)

    @staticmethod
    def load(path: Path, capacity: int) -> 'RealReplayBuffer':
        from gawm.trajectory_log import read_trajectory_log
        buffer = RealReplayBuffer(capacity)
        for episode in read_trajectory_log(path).episodes:
            buffer.push_real(episode)
        return buffer


class PseudoReplayBuffer:
    def __init__(self, capacity: int):
        if capacity < 1:
            raise InputError(f'Buffer capacity must be at least 1, got {capacity}')
        self.capacity = capacity
        self.segments: deque[PseudoSegment] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.segments)

    def __iter__(self) -> Iterator[PseudoSegment]:
        return iter(self.segments)

    def clear(self):
        self.segments.clear()

    def push_pseudo(self, segment: PseudoSegment):
        segment.validate()
        self.segments.append(segment)

    def sample_pseudo(self, batch_size: int, seed: SeedLike = None) -> list[PseudoSegment]:
        if not self.segments:
            raise BufferStateError('Cannot sample from an empty pseudo buffer')
        rng = _as_generator(seed)
        chosen = rng.integers(0, len(self.segments), size=batch_size)
        return [self.segments[c] for c in chosen]

    @staticmethod
    def collate(segments: list[PseudoSegment]) -> SegmentBatch:
        """Pad segments to the longest one; padding only follows a zero continuation"""
        if not segments:
            raise InputError('Cannot collate an empty list of segments')
        longest = max(len(s) for s in segments)
        batch = len(segments)
        n_agents, obs_dim = segments[0].observations.shape[1:]
        observations = np.zeros((batch, longest + 1, n_agents, obs_dim), dtype=np.float32)
        actions = np.zeros((batch, longest, n_agents), dtype=np.int64)
        log_probs = np.zeros((batch, longest, n_agents), dtype=np.float32)
        rewards = np.zeros((batch, longest), dtype=np.float32)
        continuations = np.zeros((batch, longest), dtype=np.float32)
        mask = np.zeros((batch, longest), dtype=np.float32)
        for b, segment in enumerate(segments):
            length = len(segment)
            observations[b, :length + 1] = segment.observations
            actions[b, :length] = segment.actions
            log_probs[b, :length] = segment.log_probs
            rewards[b, :length] = segment.rewards
            continuations[b, :length] = segment.continuations
            mask[b, :length] = 1.0
        return SegmentBatch(observations, actions, log_probs, rewards, continuations, mask,
                            [s.source for s in segments])

    def dump(self, path: Path):
        from gawm.trajectory_log import TrajectoryLogWriter
        with TrajectoryLogWriter(path, mode='w') as writer:
            for segment_id, segment in enumerate(self.segments):
                writer.write_segment(segment, segment_id)

    @staticmethod
    def load(path: Path, capacity: int) -> 'PseudoReplayBuffer':
        from gawm.trajectory_log import read_trajectory_log
        buffer = PseudoReplayBuffer(capacity)
        for segment in read_trajectory_log(path).segments:
            buffer.push_pseudo(segment)
        return buffer
