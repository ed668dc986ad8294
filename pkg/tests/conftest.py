#!/usr/bin/env python3
# coding=utf-8

import pytest
import torch

from gawm.configuration import (
    EnvironmentConfig,
    PolicyConfig,
    RunConfig,
    SmoothingConfig,
    TrainerConfig,
    WorldModelConfig,
)


@pytest.fixture()
def tiny_world_model_config() -> WorldModelConfig:
    return WorldModelConfig(
        h_dim=8,
        e_dim=8,
        g_dim=8,
        hidden_dim=8,
        n_categoricals=2,
        n_classes=4,
        n_heads=2,
        n_attention_layers=1,
    )


@pytest.fixture()
def tiny_policy_config() -> PolicyConfig:
    return PolicyConfig(actor_hidden=8, critic_hidden=8, gru_dim=8)


@pytest.fixture()
def tiny_config(tiny_world_model_config: WorldModelConfig, tiny_policy_config: PolicyConfig) -> RunConfig:
    return RunConfig(
        environment=EnvironmentConfig(name='switch_corridor', seed=3, corridor_length=3, max_episode_steps=6),
        world_model=tiny_world_model_config,
        policy=tiny_policy_config,
        reward_smoothing=SmoothingConfig(h=1, sigma=1.0),
        trainer=TrainerConfig(
            n_outer=2,
            e_m=2,
            e_pi=1,
            k=3,
            e_sample=1,
            warmup_episodes=2,
            wm_batch_size=4,
            window_len=4,
            imagination_count=4,
            policy_batch_size=4,
            eval_every=1,
            eval_episodes=2,
            checkpoint_every=1,
        ),
    )


@pytest.fixture()
def torch_generator() -> torch.Generator:
    return torch.Generator().manual_seed(0)
