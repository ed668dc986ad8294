#!/usr/bin/env python3
# coding=utf-8

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from gawm.exceptions import InputError, LifecycleError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnvSpec:
    name: str
    n_agents: int
    obs_dim: int
    n_actions: int
    max_episode_steps: int


@dataclass
class StepResult:
    observations: np.ndarray
    reward: float
    continuation: float
    info: dict[str, Any] = field(default_factory=dict)


class BaseEnvironment(ABC):
    def __init__(self, spec: EnvSpec, seed: int):
        self.spec = spec
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.step_count = 0
        self.done = False
        self.state = None

    @property
    @abstractmethod
    def shared_feature_slice(self) -> np.ndarray:
        """Indices of observation features describing global entities"""
        raise NotImplementedError

    @abstractmethod
    def _initial_state(self):
        raise NotImplementedError

    @abstractmethod
    def _transition(self, joint_action: np.ndarray) -> tuple[Any, float, bool, bool]:
        """Return the next state, the team reward and the success and failure flags"""
        raise NotImplementedError

    @abstractmethod
    def observe_state(self, state) -> np.ndarray:
        raise NotImplementedError

    def reset(self, seed: Optional[int] = None) -> np.ndarray:
        if seed is not None:
            self.seed = seed
            self.rng = np.random.default_rng(seed)
        self.state = self._initial_state()
        self.step_count = 0
        self.done = False
        return self.observe()

    def step(self, joint_action) -> StepResult:
        if self.state is None:
            raise LifecycleError(f'Environment {self.spec.name} must be reset before stepping')
        if self.done:
            raise LifecycleError(f'Environment {self.spec.name} stepped after a terminal transition')
        joint_action = self._check_action(joint_action)
        self.state, reward, success, failure = self._transition(joint_action)
        self.step_count += 1
        truncated = self.step_count >= self.spec.max_episode_steps
        self.done = success or failure or truncated
        info = {'success': success, 'failure': failure, 'truncated': truncated and not (success or failure)}
        logger.log(9, f'{self.spec.name} step {self.step_count}: actions {joint_action.tolist()} reward {reward}')
        return StepResult(self.observe(), float(reward), 0.0 if self.done else 1.0, info)

    def observe(self) -> np.ndarray:
        return self.observe_state(self.state)

    def get_state(self):
        return self.state

    def set_state(self, state, step_count: int = 0):
        self.state = state
        self.step_count = step_count
        self.done = False

    def _check_action(self, joint_action) -> np.ndarray:
        joint_action = np.asarray(joint_action)
        if joint_action.shape != (self.spec.n_agents,):
            raise InputError(f'Expected {self.spec.n_agents} actions, received shape {joint_action.shape}')
        if not np.issubdtype(joint_action.dtype, np.integer):
            if not np.all(np.equal(np.mod(joint_action, 1), 0)):
                raise InputError(f'Actions must be integers, received {joint_action.tolist()}')
            joint_action = joint_action.astype(np.int64)
        if np.any(joint_action < 0) or np.any(joint_action >= self.spec.n_actions):
            raise InputError(f'Actions {joint_action.tolist()} outside [0, {self.spec.n_actions})')
        return joint_action

    def _step_fraction(self, step_count: Optional[int] = None) -> float:
        if step_count is None:
            step_count = self.step_count
        return min(step_count / self.spec.max_episode_steps, 1.0)
