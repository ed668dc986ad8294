#!/usr/bin/env python3
# coding=utf-8

import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import torch

from gawm.configuration import RunConfig
from gawm.exceptions import CheckpointError

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

# Fields that change parameter shapes or environment semantics
_SHAPING_FIELDS = {
    'environment': ('name', 'n_agents', 'grid_size', 'sight_radius', 'corridor_length'),
    'world_model': ('h_dim', 'e_dim', 'g_dim', 'hidden_dim', 'n_categoricals', 'n_classes', 'n_heads',
                    'n_attention_layers', 'agent_identity'),
    'policy': ('actor_hidden', 'critic_hidden', 'gru_dim'),
}


@dataclass
class Checkpoint:
    config: RunConfig
    world_model_state: Optional[dict]
    policy_state: dict
    outer_episode: int = 0
    env_steps: int = 0


def save_checkpoint(path: Path, config: RunConfig, world_model: Optional[torch.nn.Module],
                    policy: torch.nn.Module, outer_episode: int = 0, env_steps: int = 0):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        'format_version': FORMAT_VERSION,
        'config': config.echo(),
        'world_model': world_model.state_dict() if world_model is not None else None,
        'policy': policy.state_dict(),
        'outer_episode': outer_episode,
        'env_steps': env_steps,
    }, path)
    logger.debug(f'Checkpoint for outer episode {outer_episode} written to {path}')


def _config_from_echo(echo: dict) -> RunConfig:
    sections = {}
    for section_field in dataclasses.fields(RunConfig):
        section_type = section_field.default_factory
        sections[section_field.name] = section_type(**echo.get(section_field.name, {}))
    return RunConfig(**sections)


def load_checkpoint(path: Path, expected: Optional[RunConfig] = None) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f'Checkpoint {path} does not exist')
    try:
        container = torch.load(path, map_location='cpu')
    except Exception as e:
        raise CheckpointError(f'Checkpoint {path} could not be read: {e}')
    if not isinstance(container, dict) or container.get('format_version') != FORMAT_VERSION:
        raise CheckpointError(f'Checkpoint {path} is not a version {FORMAT_VERSION} container')
    try:
        config = _config_from_echo(container['config'])
    except (KeyError, TypeError) as e:
        raise CheckpointError(f'Checkpoint {path} holds an unreadable configuration: {e}')

    if expected is not None:
        mismatches = [
            f'{section}.{key}: checkpoint {getattr(getattr(config, section), key)!r}, '
            f'requested {getattr(getattr(expected, section), key)!r}'
            for section, keys in _SHAPING_FIELDS.items()
            for key in keys
            if getattr(getattr(config, section), key) != getattr(getattr(expected, section), key)
        ]
        if mismatches:
            raise CheckpointError(f'Checkpoint {path} is incompatible: {"; ".join(mismatches)}')

    logger.debug(f'Loaded checkpoint {path} from outer episode {container.get("outer_episode", 0)}')
    return Checkpoint(
        config=config,
        world_model_state=container['world_model'],
        policy_state=container['policy'],
        outer_episode=container.get('outer_episode', 0),
        env_steps=container.get('env_steps', 0),
    )


def restore_into(checkpoint: Checkpoint, world_model: Optional[torch.nn.Module], policy: torch.nn.Module):
    try:
        policy.load_state_dict(checkpoint.policy_state)
        if world_model is not None:
            if checkpoint.world_model_state is None:
                raise CheckpointError('Checkpoint holds no world model parameters')
            world_model.load_state_dict(checkpoint.world_model_state)
    except RuntimeError as e:
        raise CheckpointError(f'Checkpoint parameters do not fit the model: {e}')

