#!/usr/bin/env python3
# coding=utf-8

import logging
from dataclasses import dataclass

import numpy as np

from gawm.configuration import EnvironmentConfig
from gawm.environments.base_environment import BaseEnvironment, EnvSpec
from gawm.exceptions import ConfigurationError

logger = logging.getLogger(__name__)

LEFT, RIGHT, STAY = range(3)


@dataclass(frozen=True)
class CorridorState:
    agent_positions: tuple[int, int]
    switch: int


class SwitchCorridor(BaseEnvironment):
    """Two agents in a corridor must meet at the end chosen by a hidden switch.

    Only agent 0 sees the switch. Both agents see both positions and the step
    fraction, so the switch is the one fact that has to travel between agents.
    """

    success_reward = 1.0
    failure_reward = -1.0
    step_penalty = -0.01

    def __init__(self, seed: int, corridor_length: int = 5, max_episode_steps: int = 10):
        if corridor_length < 2:
            raise ConfigurationError('switch_corridor needs a corridor of at least 2 cells')
        self.corridor_length = corridor_length
        spec = EnvSpec('switch_corridor', 2, 2 * corridor_length + 3, 3, max_episode_steps)
        super(SwitchCorridor, self).__init__(spec, seed)

    @classmethod
    def from_config(cls, seed: int, config: EnvironmentConfig) -> 'SwitchCorridor':
        if config.n_agents != 2:
            raise ConfigurationError(f'switch_corridor is a 2-agent environment, got {config.n_agents} agents')
        return cls(seed, config.corridor_length, config.max_episode_steps)

    @property
    def shared_feature_slice(self) -> np.ndarray:
        positions = np.arange(2 * self.corridor_length)
        return np.concatenate([positions, [self.spec.obs_dim - 1]])

    def goal_cell(self, switch: int) -> int:
        return 0 if switch == 0 else self.corridor_length - 1

    def _initial_state(self) -> CorridorState:
        middle = self.corridor_length // 2
        return CorridorState((middle, middle), int(self.rng.integers(0, 2)))

    def _transition(self, joint_action: np.ndarray) -> tuple[CorridorState, float, bool, bool]:
        positions = []
        for pos, action in zip(self.state.agent_positions, joint_action):
            if action == LEFT:
                pos = max(pos - 1, 0)
            elif action == RIGHT:
                pos = min(pos + 1, self.corridor_length - 1)
            positions.append(pos)
        state = CorridorState((positions[0], positions[1]), self.state.switch)
        goal = self.goal_cell(state.switch)
        wrong_end = self.goal_cell(1 - state.switch)
        if positions[0] == positions[1] == goal:
            return state, self.success_reward, True, False
        if positions[0] == positions[1] == wrong_end:
            return state, self.failure_reward, False, True
        return state, self.step_penalty, False, False

    def observe_state(self, state: CorridorState) -> np.ndarray:
        length = self.corridor_length
        out = np.zeros((2, self.spec.obs_dim), dtype=np.float32)
        for i in range(2):
            out[i, state.agent_positions[0]] = 1.0
            out[i, length + state.agent_positions[1]] = 1.0
            out[i, -1] = self._step_fraction()
        out[0, 2 * length + state.switch] = 1.0
        return out
