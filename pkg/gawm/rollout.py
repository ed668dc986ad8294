#!/usr/bin/env python3
# coding=utf-8

import logging
from multiprocessing import Pool
from typing import Optional, Union

import numpy as np
import torch

from gawm.configuration import EnvironmentConfig, SmoothingConfig
from gawm.environments.base_environment import BaseEnvironment
from gawm.environments.environment_factory import make_env
from gawm.policy import MAPPOPolicy, RandomPolicy
from gawm.replay_buffer import EpisodeTrajectory
from gawm.reward_shaping import smooth_rewards

logger = logging.getLogger(__name__)

ActingPolicy = Union[MAPPOPolicy, RandomPolicy]


@torch.no_grad()
def collect_episode(
        env: BaseEnvironment,
        policy: ActingPolicy,
        smoothing_config: SmoothingConfig,
        mode: str = 'sample',
        generator: Optional[torch.Generator] = None,
        episode_id: int = 0,
) -> EpisodeTrajectory:
    observation = env.reset()
    state = policy.initial_state()
    observations, actions, rewards, continuations = [observation], [], [], []
    info = {}
    while not env.done:
        action, _, state = policy.act(torch.as_tensor(observation), state, mode, generator)
        action = action.numpy().astype(np.int64)
        result = env.step(action)
        observation = result.observations
        observations.append(observation)
        actions.append(action)
        rewards.append(result.reward)
        continuations.append(result.continuation)
        info = result.info

    rewards = np.array(rewards, dtype=np.float64)
    episode = EpisodeTrajectory(
        observations=np.stack(observations),
        actions=np.stack(actions),
        rewards_raw=rewards,
        rewards_smoothed=smooth_rewards(rewards, smoothing_config),
        continuations=np.array(continuations),
        episode_id=episode_id,
        meta={'seed': env.seed, 'env': env.spec.name, 'success': bool(info.get('success', False))},
    )
    episode.validate()
    logger.log(9, f'Collected episode {episode_id} of length {len(episode)} (success {episode.success})')
    return episode


def evaluate_policy(env: BaseEnvironment, policy: ActingPolicy, episodes: int, mode: str = 'greedy',
                    generator: Optional[torch.Generator] = None) -> np.ndarray:
    """Per-episode success indicators over consecutive resets of env"""
    disabled = SmoothingConfig(enabled=False)
    results = [
        collect_episode(env, policy, disabled, mode, generator, episode_id=i).success
        for i in range(episodes)
    ]
    return np.array(results, dtype=np.float64)


def _collect_worker(job: tuple) -> EpisodeTrajectory:
    env_name, env_config, policy, smoothing_config, seed, episode_id = job
    torch.set_num_threads(1)
    env = make_env(env_name, seed, env_config)
    generator = torch.Generator().manual_seed(seed)
    return collect_episode(env, policy, smoothing_config, 'sample', generator, episode_id)


def collect_parallel(
        env_config: EnvironmentConfig,
        policy: ActingPolicy,
        smoothing_config: SmoothingConfig,
        seeds: list[int],
        workers: int,
        first_episode_id: int = 0,
) -> list[EpisodeTrajectory]:
    """One episode per seed, each in a freshly built environment inside a worker process"""
    jobs = [
        (env_config.name, env_config, policy, smoothing_config, seed, first_episode_id + i)
        for i, seed in enumerate(seeds)
    ]
    logger.debug(f'Collecting {len(jobs)} episodes over {workers} workers')
    with Pool(workers) as pool:
        return pool.map(_collect_worker, jobs)
