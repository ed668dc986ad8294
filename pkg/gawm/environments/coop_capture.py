#!/usr/bin/env python3
# coding=utf-8

import logging
from dataclasses import dataclass

import numpy as np

from gawm.configuration import EnvironmentConfig
from gawm.environments.base_environment import BaseEnvironment, EnvSpec

logger = logging.getLogger(__name__)

UP, DOWN, LEFT, RIGHT, STAY, TAG = range(6)
_MOVES = {
    UP: (-1, 0),
    DOWN: (1, 0),
    LEFT: (0, -1),
    RIGHT: (0, 1),
    STAY: (0, 0),
    TAG: (0, 0),
}


@dataclass(frozen=True)
class CaptureState:
    agent_positions: tuple[tuple[int, int], ...]
    target: tuple[int, int]


class CoopCapture(BaseEnvironment):
    """Agents must stand on a stationary target together and tag it in the same step.

    Each agent sees its own cell and the (2r+1)x(2r+1) patch around it, so the
    target is only visible from nearby. Reward is +1.0 for the joint tag and
    -0.01 for every other step.
    """

    success_reward = 1.0
    step_penalty = -0.01

    def __init__(
            self,
            seed: int,
            n_agents: int = 2,
            grid_size: int = 5,
            sight_radius: int = 1,
            max_episode_steps: int = 25,
    ):
        self.grid_size = grid_size
        self.sight_radius = sight_radius
        self.patch_width = 2 * sight_radius + 1
        obs_dim = grid_size ** 2 + 2 * self.patch_width ** 2 + 1
        spec = EnvSpec('coop_capture', n_agents, obs_dim, len(_MOVES), max_episode_steps)
        super(CoopCapture, self).__init__(spec, seed)

    @classmethod
    def from_config(cls, seed: int, config: EnvironmentConfig) -> 'CoopCapture':
        return cls(seed, config.n_agents, config.grid_size, config.sight_radius, config.max_episode_steps)

    @property
    def shared_feature_slice(self) -> np.ndarray:
        start = self.grid_size ** 2
        target_patch = np.arange(start, start + self.patch_width ** 2)
        return np.concatenate([target_patch, [self.spec.obs_dim - 1]])

    def _initial_state(self) -> CaptureState:
        cells = self.rng.integers(0, self.grid_size, size=(self.spec.n_agents + 1, 2))
        positions = tuple((int(r), int(c)) for r, c in cells[:-1])
        target = (int(cells[-1, 0]), int(cells[-1, 1]))
        return CaptureState(positions, target)

    def _transition(self, joint_action: np.ndarray) -> tuple[CaptureState, float, bool, bool]:
        all_on_target = all(pos == self.state.target for pos in self.state.agent_positions)
        if all_on_target and np.all(joint_action == TAG):
            return self.state, self.success_reward, True, False
        positions = []
        for pos, action in zip(self.state.agent_positions, joint_action):
            d_row, d_col = _MOVES[int(action)]
            row = min(max(pos[0] + d_row, 0), self.grid_size - 1)
            col = min(max(pos[1] + d_col, 0), self.grid_size - 1)
            positions.append((row, col))
        return CaptureState(tuple(positions), self.state.target), self.step_penalty, False, False

    def observe_state(self, state: CaptureState) -> np.ndarray:
        n_cells = self.grid_size ** 2
        n_patch = self.patch_width ** 2
        out = np.zeros((self.spec.n_agents, self.spec.obs_dim), dtype=np.float32)
        for i, pos in enumerate(state.agent_positions):
            out[i, pos[0] * self.grid_size + pos[1]] = 1.0
            target_patch = out[i, n_cells:n_cells + n_patch]
            mate_patch = out[i, n_cells + n_patch:n_cells + 2 * n_patch]
            self._mark(target_patch, pos, state.target)
            for j, other in enumerate(state.agent_positions):
                if j != i:
                    self._mark(mate_patch, pos, other)
            out[i, -1] = self._step_fraction()
        return out

    def _mark(self, patch: np.ndarray, centre: tuple[int, int], cell: tuple[int, int]):
        d_row = cell[0] - centre[0]
        d_col = cell[1] - centre[1]
        if abs(d_row) <= self.sight_radius and abs(d_col) <= self.sight_radius:
            patch[(d_row + self.sight_radius) * self.patch_width + d_col + self.sight_radius] = 1.0
