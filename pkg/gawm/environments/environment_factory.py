#!/usr/bin/env python3
# coding=utf-8

import logging
from typing import Optional, Type

from gawm.configuration import EnvironmentConfig
from gawm.environments.base_environment import BaseEnvironment
from gawm.environments.coop_capture import CoopCapture
from gawm.environments.switch_corridor import SwitchCorridor
from gawm.exceptions import ConfigurationError

logger = logging.getLogger(__name__)


class EnvironmentFactory:
    registry: dict[str, Type[BaseEnvironment]] = {
        'coop_capture': CoopCapture,
        'switch_corridor': SwitchCorridor,
    }

    @staticmethod
    def pull_lever(name: str) -> Type[BaseEnvironment]:
        try:
            return EnvironmentFactory.registry[name.strip().lower()]
        except (KeyError, AttributeError):
            raise ConfigurationError(
                f'Unknown environment "{name}", expected one of {", ".join(EnvironmentFactory.registry)}')


def make_env(name: str, seed: int, config: Optional[EnvironmentConfig] = None) -> BaseEnvironment:
    env_class = EnvironmentFactory.pull_lever(name)
    if config is None:
        env = env_class(seed)
    else:
        env = env_class.from_config(seed, config)
    logger.debug(f'Created environment {env.spec.name} with seed {seed}: {env.spec}')
    return env
