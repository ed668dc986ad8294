#!/usr/bin/env python3
# coding=utf-8

import dataclasses
from pathlib import Path

import numpy as np

from gawm.configuration import RunConfig
from gawm.replay_buffer import EpisodeTrajectory


def replace_section(config: RunConfig, section: str, **changes) -> RunConfig:
    return dataclasses.replace(config, **{section: dataclasses.replace(getattr(config, section), **changes)})


def make_episode(length: int, n_agents: int = 2, obs_dim: int = 3, episode_id: int = 0,
                 success: bool = False) -> EpisodeTrajectory:
    rng = np.random.default_rng(episode_id)
    continuations = np.ones(length)
    continuations[-1] = 0.0
    rewards = rng.normal(size=length)
    return EpisodeTrajectory(
        observations=rng.uniform(size=(length + 1, n_agents, obs_dim)),
        actions=rng.integers(0, 3, size=(length, n_agents)),
        rewards_raw=rewards,
        rewards_smoothed=rewards,
        continuations=continuations,
        episode_id=episode_id,
        meta={'success': success},
    )


TINY_CONFIG = '''
[environment]
name = switch_corridor
seed = 3
corridor_length = 3
max_episode_steps = 6

[world_model]
h_dim = 8
e_dim = 8
g_dim = 8
hidden_dim = 8
n_categoricals = 2
n_classes = 4
n_heads = 2

[policy]
actor_hidden = 8
critic_hidden = 8
gru_dim = 8

[trainer]
n_outer = 2
e_m = 2
e_pi = 1
k = 3
e_sample = 1
warmup_episodes = 2
wm_batch_size = 4
window_len = 4
imagination_count = 4
policy_batch_size = 4
eval_every = 1
eval_episodes = 2
checkpoint_every = 1

[metrics]
count = 5
segment_len = 2
'''


def create_basic_args_for_runner(command: str, test_args: list[str], run_path: Path) -> list[str]:
    run_path.mkdir(parents=True, exist_ok=True)
    config_path = Path(run_path, 'tiny.cfg')
    config_path.write_text(TINY_CONFIG)
    out = [
        command,
        '-v',
        '--config', str(config_path),
        '--output', str(Path(run_path, 'output')),
        '--log', str(Path(run_path, 'test_log.txt')),
    ] + test_args
    return out
