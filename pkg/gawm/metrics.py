#!/usr/bin/env python3
# coding=utf-8

import csv
import itertools
import json
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import dict2xml
import numpy as np
import torch
import yaml

from gawm.configuration import Configuration, MetricConfig, SmoothingConfig
from gawm.connector import RunConnector
from gawm.environments.base_environment import BaseEnvironment
from gawm.exceptions import InputError
from gawm.policy import RandomPolicy
from gawm.replay_buffer import EpisodeTrajectory
from gawm.rollout import ActingPolicy, collect_episode
from gawm.trajectory_log import read_trajectory_log
from gawm.world_model import WorldModel

logger = logging.getLogger(__name__)


@dataclass
class PairedSegment:
    """A real stretch of T transitions and the per-agent predictions made for it.

    Real arrays: observations (T, N, D), rewards (T,), continuations (T,).
    Predicted arrays: states (T, N, S), observations (T, N, D), rewards (T, N),
    continuations (T, N).
    """
    real_observations: np.ndarray
    real_rewards: np.ndarray
    real_continuations: np.ndarray
    pred_states: np.ndarray
    pred_observations: np.ndarray
    pred_rewards: np.ndarray
    pred_continuations: np.ndarray
    origin: tuple[int, int] = (0, 0)

    @property
    def length(self) -> int:
        return self.real_rewards.shape[0]

    @property
    def n_agents(self) -> int:
        return self.pred_rewards.shape[1]

    def validate(self):
        t, n = self.pred_rewards.shape if self.pred_rewards.ndim == 2 else (-1, -1)
        if t < 1 or n < 1:
            raise InputError(f'Predicted rewards must have shape (T, N), got {self.pred_rewards.shape}')
        checks = {
            'real_rewards': (self.real_rewards.shape, (t,)),
            'real_continuations': (self.real_continuations.shape, (t,)),
            'pred_continuations': (self.pred_continuations.shape, (t, n)),
            'real_observations': (self.real_observations.shape[:2], (t, n)),
            'pred_observations': (self.pred_observations.shape, self.real_observations.shape),
            'pred_states': (self.pred_states.shape[:2], (t, n)),
        }
        for name, (actual, expected) in checks.items():
            if tuple(actual) != tuple(expected):
                raise InputError(f'Segment {name} has shape {tuple(actual)}, expected {tuple(expected)}')


def gci(segment: PairedSegment, config: MetricConfig) -> float:
    segment.validate()
    state_spread = np.linalg.norm(segment.pred_states - segment.pred_states.mean(axis=1, keepdims=True), axis=-1)
    reward_conflict = np.abs(segment.pred_rewards - segment.pred_rewards.mean(axis=1, keepdims=True)) > config.epsilon_r
    discount_conflict = np.abs(
        segment.pred_continuations - segment.pred_continuations.mean(axis=1, keepdims=True)) > config.epsilon_gamma
    return float(np.mean(state_spread + reward_conflict + discount_conflict))


def gpe(segment: PairedSegment) -> float:
    segment.validate()
    observation_error = np.linalg.norm(segment.pred_observations - segment.real_observations, axis=-1)
    reward_error = np.abs(segment.pred_rewards - segment.real_rewards[:, None])
    discount_error = np.abs(segment.pred_continuations - segment.real_continuations[:, None])
    return float(np.mean(observation_error + reward_error + discount_error))


def _summary(values: Sequence[float]) -> dict:
    values = np.asarray(values, dtype=np.float64)
    mean = float(values.mean())
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return {'mean': mean, 'std': std, 'formatted': f'{mean:.3f}±{std:.3f}'}


def metric_report(pairs: list[PairedSegment], config: MetricConfig) -> dict:
    if not pairs:
        raise InputError('Cannot report metrics over zero segment pairs')
    return {
        'gci': _summary([gci(pair, config) for pair in pairs]),
        'gpe': _summary([gpe(pair) for pair in pairs]),
        'pairs': len(pairs),
        'segment_len': pairs[0].length,
        'epsilon_r': config.epsilon_r,
        'epsilon_gamma': config.epsilon_gamma,
    }


@dataclass
class RealWindow:
    prefix_observations: np.ndarray
    prefix_actions: np.ndarray
    actions: np.ndarray
    observations: np.ndarray
    rewards: np.ndarray
    continuations: np.ndarray
    origin: tuple[int, int]

    @staticmethod
    def from_episode(episode: EpisodeTrajectory, offset: int, length: int) -> 'RealWindow':
        stop = offset + length
        return RealWindow(
            prefix_observations=episode.observations[:offset + 1],
            prefix_actions=episode.actions[:offset],
            actions=episode.actions[offset:stop],
            observations=episode.observations[offset + 1:stop + 1],
            rewards=episode.rewards_raw[offset:stop],
            continuations=episode.continuations[offset:stop],
            origin=(episode.episode_id, offset),
        )


class SegmentPredictor(ABC):
    def __init__(self, shared_slice: np.ndarray):
        self.shared_slice = np.asarray(shared_slice)

    @abstractmethod
    def predict(self, window: RealWindow, generator: Optional[torch.Generator] = None) -> PairedSegment:
        raise NotImplementedError


class OraclePredictor(SegmentPredictor):
    """Every agent predicts the real continuation exactly"""

    def predict(self, window: RealWindow, generator: Optional[torch.Generator] = None) -> PairedSegment:
        n_agents = window.observations.shape[1]
        return PairedSegment(
            real_observations=window.observations,
            real_rewards=window.rewards,
            real_continuations=window.continuations,
            pred_states=window.observations[..., self.shared_slice].astype(np.float64),
            pred_observations=window.observations.astype(np.float64),
            pred_rewards=np.repeat(window.rewards[:, None], n_agents, axis=1),
            pred_continuations=np.repeat(window.continuations[:, None], n_agents, axis=1),
            origin=window.origin,
        )


class WorldModelPredictor(SegmentPredictor):
    """Filters the real prefix, then imagines forward under the real actions"""

    def __init__(self, world_model: WorldModel, shared_slice: np.ndarray):
        super(WorldModelPredictor, self).__init__(shared_slice)
        self.world_model = world_model

    @torch.no_grad()
    def predict(self, window: RealWindow, generator: Optional[torch.Generator] = None) -> PairedSegment:
        model = self.world_model
        model.eval()
        observations = torch.as_tensor(window.prefix_observations).unsqueeze(0)
        actions = torch.as_tensor(window.prefix_actions).unsqueeze(0)
        latent = model.initial_posterior(observations[:, 0], generator)
        for t in range(actions.shape[1]):
            latent, _ = model.observe_step(latent, actions[:, t], observations[:, t + 1], generator)

        pred_observations, pred_rewards, pred_continuations = [], [], []
        for action in torch.as_tensor(window.actions):
            latent, _ = model.imagine_step(latent, action.unsqueeze(0), generator)
            per_agent = model.reconstruct_per_agent(latent.h, latent.z)
            pred_observations.append(per_agent.obs_mean[0].double().numpy())
            pred_rewards.append(per_agent.reward_mean[0].double().numpy())
            pred_continuations.append(per_agent.continuation_prob[0].double().numpy())
        pred_observations = np.stack(pred_observations)
        return PairedSegment(
            real_observations=window.observations,
            real_rewards=window.rewards,
            real_continuations=window.continuations,
            pred_states=pred_observations[..., self.shared_slice],
            pred_observations=pred_observations,
            pred_rewards=np.stack(pred_rewards),
            pred_continuations=np.stack(pred_continuations),
            origin=window.origin,
        )


def build_paired_segments(
        predictor: SegmentPredictor,
        policy: Optional[ActingPolicy],
        env: Optional[BaseEnvironment],
        count: int,
        segment_len: int,
        seed: int,
        episodes: Optional[list[EpisodeTrajectory]] = None,
) -> list[PairedSegment]:
    """Pair predictions with real windows drawn uniformly over episodes and offsets.

    Real episodes come from `episodes` when given, otherwise they are rolled in
    env with policy. Episodes shorter than segment_len are skipped.
    """
    if count < 1 or segment_len < 1:
        raise InputError('Segment count and length must be at least 1')
    rng = np.random.default_rng(seed)
    generator = torch.Generator().manual_seed(seed)

    if episodes is not None:
        fitting = [episode for episode in episodes if len(episode) >= segment_len]
        if not fitting:
            raise InputError(f'No supplied episode holds {segment_len} transitions')

        def draw() -> Optional[EpisodeTrajectory]:
            return fitting[int(rng.integers(len(fitting)))]
    else:
        if env is None:
            raise InputError('Either an environment or a list of episodes is required')
        policy = policy if policy is not None else RandomPolicy(env.spec.n_agents, env.spec.n_actions)
        env.reset(seed)
        disabled = SmoothingConfig(enabled=False)

        rolled = itertools.count()

        def draw() -> Optional[EpisodeTrajectory]:
            episode = collect_episode(env, policy, disabled, 'sample', generator, episode_id=next(rolled))
            return episode if len(episode) >= segment_len else None

    pairs = []
    attempts = 0
    while len(pairs) < count:
        attempts += 1
        if attempts > 100 * count:
            raise InputError(f'Only {len(pairs)} of {count} episodes held {segment_len} transitions')
        episode = draw()
        if episode is None:
            continue
        offset = int(rng.integers(0, len(episode) - segment_len + 1))
        pairs.append(predictor.predict(RealWindow.from_episode(episode, offset, segment_len), generator))
    logger.debug(f'Built {len(pairs)} paired segments of length {segment_len} in {attempts} draws')
    return pairs


def write_metric_report(reports: dict[str, dict], environment: str, output_directory: Path,
                        report_format: str = 'json') -> list[Path]:
    """Write the keyed report plus a per-variant summary and an environment-by-variant table"""
    output_directory = Path(output_directory)
    output_directory.mkdir(parents=True, exist_ok=True)
    document = {'environment': environment, 'variants': reports}
    if report_format == 'json':
        content = json.dumps(document, indent=2)
    elif report_format == 'yaml':
        content = yaml.dump(document)
    elif report_format == 'xml':
        content = dict2xml.dict2xml(document, wrap='root')
    else:
        raise InputError(f'Unknown report format {report_format}')
    report_path = Path(output_directory, f'metric_report.{report_format}')
    with open(report_path, 'w', encoding='utf-8') as file:
        file.write(content)

    summary_path = Path(output_directory, 'metric_summary.csv')
    with open(summary_path, 'w', newline='', encoding='utf-8') as file:
        writer = csv.writer(file)
        writer.writerow(('variant', 'environment', 'pairs', 'segment_len', 'gci_mean', 'gci_std', 'gpe_mean',
                         'gpe_std', 'epsilon_r', 'epsilon_gamma'))
        for variant, report in reports.items():
            writer.writerow((variant, environment, report['pairs'], report['segment_len'], report['gci']['mean'],
                             report['gci']['std'], report['gpe']['mean'], report['gpe']['std'],
                             report['epsilon_r'], report['epsilon_gamma']))

    table_path = Path(output_directory, 'metric_table.csv')
    with open(table_path, 'w', newline='', encoding='utf-8') as file:
        writer = csv.writer(file)
        writer.writerow(('environment', 'metric', *reports.keys()))
        for metric in ('gci', 'gpe'):
            writer.writerow((environment, metric, *(report[metric]['formatted'] for report in reports.values())))
    logger.info(f'Metric report written to {report_path}')
    return [report_path, summary_path, table_path]


class MetricAnalyser(RunConnector):
    def __init__(self, args: Configuration, headline: str = 'gci'):
        super(MetricAnalyser, self).__init__(args)
        self.headline = headline
        metrics = self.config.metrics
        self.metric_config = MetricConfig(
            epsilon_r=metrics.epsilon_r if args.epsilon_r is None else args.epsilon_r,
            epsilon_gamma=metrics.epsilon_gamma if args.epsilon_gamma is None else args.epsilon_gamma,
            count=metrics.count if args.count is None else args.count,
            segment_len=metrics.segment_len if args.segment_len is None else args.segment_len,
        )
        self.metric_config.validate()

    def _variant_names(self) -> list[str]:
        names = list(self.args.variant)
        for i in range(len(names), len(self.args.checkpoint)):
            names.append(Path(self.args.checkpoint[i]).stem if len(self.args.checkpoint) > 1 else 'gawm')
        return names

    def _episodes(self) -> Optional[list[EpisodeTrajectory]]:
        if not self.args.trajectory_log:
            return None
        return read_trajectory_log(Path(self.args.trajectory_log), source='real').episodes

    def run(self) -> dict[str, dict]:
        if not self.args.checkpoint and not self.args.oracle:
            raise InputError('At least one --checkpoint or --oracle is required')
        episodes = self._episodes()
        seed = self.config.environment.seed
        env = self.make_environment()
        shared_slice = env.shared_feature_slice
        count, segment_len = self.metric_config.count, self.metric_config.segment_len

        reports = {}
        for name, checkpoint_path in zip(self._variant_names(), self.args.checkpoint):
            world_model, policy = self.load_models(checkpoint_path, env)
            pairs = build_paired_segments(
                WorldModelPredictor(world_model, shared_slice), policy, env, count, segment_len, seed, episodes)
            reports[name] = metric_report(pairs, self.metric_config)
        if self.args.oracle:
            pairs = build_paired_segments(OraclePredictor(shared_slice), None, env, count, segment_len, seed, episodes)
            reports['oracle'] = metric_report(pairs, self.metric_config)

        write_metric_report(reports, env.spec.name, self.output_directory, self.args.format)
        for name, report in reports.items():
            print(f'{name}: {self.headline.upper()} {report[self.headline]["formatted"]} '
                  f'({report[self.headline]["mean"]:.6f}) over {report["pairs"]} pairs')
        return reports
