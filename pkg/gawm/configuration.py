#!/usr/bin/env python3
# coding=utf-8

import configparser
import dataclasses
import logging
import re
from argparse import Namespace
from dataclasses import dataclass, field
from typing import Optional

import click

from gawm.exceptions import ConfigurationError

logger = logging.getLogger(__name__)


class Configuration(Namespace):
    def __init__(self):
        super(Configuration, self).__init__()
        self.config: Optional[str] = None
        self.output: str = 'gawm_output'
        self.log: Optional[str] = None
        self.seed: Optional[int] = None
        self.set: list[str] = []
        self.verbose: int = 0

        # Artifact-consuming commands
        self.checkpoint: list[str] = []
        self.variant: list[str] = []
        self.episodes: int = 20
        self.policy: str = 'greedy'

        # Metric analysis options
        self.count: Optional[int] = None
        self.segment_len: Optional[int] = None
        self.epsilon_r: Optional[float] = None
        self.epsilon_gamma: Optional[float] = None
        self.oracle: bool = False
        self.trajectory_log: Optional[str] = None
        self.format: str = 'json'

        # Plot export and replay inputs
        self.metrics_file: list[str] = []
        self.input_log: Optional[str] = None

    def process_click_arguments(self, context: click.Context):
        for arg_key in context.params.keys():
            if arg_key in vars(self) and context.params[arg_key] is not None:
                vars(self)[arg_key] = context.params[arg_key]


@dataclass(frozen=True)
class EnvironmentConfig:
    name: str = 'coop_capture'
    seed: int = 0
    n_agents: int = 2
    grid_size: int = 5
    sight_radius: int = 1
    corridor_length: int = 5
    max_episode_steps: int = 25

    def validate(self):
        for name in ('n_agents', 'grid_size', 'corridor_length', 'max_episode_steps'):
            if getattr(self, name) < 1:
                raise ConfigurationError(f'environment.{name} must be at least 1')
        if self.sight_radius < 0:
            raise ConfigurationError('environment.sight_radius must be non-negative')


@dataclass(frozen=True)
class WorldModelConfig:
    h_dim: int = 128
    e_dim: int = 64
    g_dim: int = 64
    hidden_dim: int = 128
    n_categoricals: int = 16
    n_classes: int = 16
    n_heads: int = 4
    n_attention_layers: int = 1
    beta: float = 0.1
    kl_balance: float = 0.8
    free_nats: float = 0.1
    obs_fusion_enabled: bool = True
    agent_identity: bool = True

    @property
    def z_dim(self) -> int:
        return self.n_categoricals * self.n_classes

    def validate(self):
        for name in ('h_dim', 'e_dim', 'g_dim', 'hidden_dim', 'n_categoricals', 'n_classes', 'n_heads',
                     'n_attention_layers'):
            if getattr(self, name) < 1:
                raise ConfigurationError(f'world_model.{name} must be at least 1')
        for name in ('e_dim', 'g_dim', 'hidden_dim'):
            if getattr(self, name) % self.n_heads:
                raise ConfigurationError(f'world_model.{name} must be divisible by world_model.n_heads')
        if self.beta < 0:
            raise ConfigurationError('world_model.beta must be non-negative')
        if not 0 < self.kl_balance < 1:
            raise ConfigurationError('world_model.kl_balance must lie in (0, 1)')
        if self.free_nats < 0:
            raise ConfigurationError('world_model.free_nats must be non-negative')


@dataclass(frozen=True)
class PolicyConfig:
    clip_epsilon: float = 0.2
    gae_lambda: float = 0.95
    gamma: float = 0.99
    actor_hidden: int = 64
    critic_hidden: int = 128
    gru_dim: int = 64
    entropy_coef: float = 0.01
    value_coef: float = 0.5
    target_update_tau: float = 1.0

    def validate(self):
        if not 0 < self.clip_epsilon < 1:
            raise ConfigurationError('policy.clip_epsilon must lie in (0, 1)')
        if not 0 <= self.gae_lambda <= 1:
            raise ConfigurationError('policy.gae_lambda must lie in [0, 1]')
        if not 0 < self.gamma <= 1:
            raise ConfigurationError('policy.gamma must lie in (0, 1]')
        for name in ('actor_hidden', 'critic_hidden', 'gru_dim'):
            if getattr(self, name) < 1:
                raise ConfigurationError(f'policy.{name} must be at least 1')
        if self.entropy_coef < 0:
            raise ConfigurationError('policy.entropy_coef must be non-negative')
        if self.value_coef <= 0:
            raise ConfigurationError('policy.value_coef must be positive')
        if not 0 < self.target_update_tau <= 1:
            raise ConfigurationError('policy.target_update_tau must lie in (0, 1]')


@dataclass(frozen=True)
class SmoothingConfig:
    h: int = 2
    sigma: float = 1.0
    enabled: bool = True

    def validate(self):
        if self.h < 0:
            raise ConfigurationError('reward_smoothing.h must be non-negative')
        if self.sigma <= 0:
            raise ConfigurationError('reward_smoothing.sigma must be positive')


@dataclass(frozen=True)
class BufferConfig:
    real_capacity: int = 500
    pseudo_capacity: int = 10000

    def validate(self):
        for name in ('real_capacity', 'pseudo_capacity'):
            if getattr(self, name) < 1:
                raise ConfigurationError(f'buffers.{name} must be at least 1')


@dataclass(frozen=True)
class TrainerConfig:
    n_outer: int = 1000
    e_m: int = 40
    e_pi: int = 4
    k: int = 8
    e_sample: int = 4
    warmup_episodes: int = 5
    wm_batch_size: int = 16
    window_len: int = 16
    imagination_count: int = 64
    policy_batch_size: int = 64
    wm_learning_rate: float = 3e-4
    policy_learning_rate: float = 3e-4
    grad_clip_norm: float = 10.0
    eval_every: int = 50
    eval_episodes: int = 20
    checkpoint_every: int = 100
    parallel_workers: int = 1
    log_pseudo_trajectories: bool = False

    def validate(self):
        for name in ('n_outer', 'e_m', 'e_pi', 'k', 'e_sample', 'wm_batch_size', 'window_len', 'imagination_count',
                     'policy_batch_size', 'eval_every', 'eval_episodes', 'checkpoint_every', 'parallel_workers'):
            if getattr(self, name) < 1:
                raise ConfigurationError(f'trainer.{name} must be at least 1')
        if self.warmup_episodes < 0:
            raise ConfigurationError('trainer.warmup_episodes must be non-negative')
        for name in ('wm_learning_rate', 'policy_learning_rate'):
            if getattr(self, name) < 0:
                raise ConfigurationError(f'trainer.{name} must be non-negative')
        if self.grad_clip_norm <= 0:
            raise ConfigurationError('trainer.grad_clip_norm must be positive')


@dataclass(frozen=True)
class MetricConfig:
    epsilon_r: float = 0.05
    epsilon_gamma: float = 0.05
    count: int = 1000
    segment_len: int = 5

    def validate(self):
        if self.epsilon_r <= 0 or self.epsilon_gamma <= 0:
            raise ConfigurationError('metrics thresholds must be positive')
        if self.count < 1 or self.segment_len < 1:
            raise ConfigurationError('metrics.count and metrics.segment_len must be at least 1')


@dataclass(frozen=True)
class LoggingConfig:
    backup_log_count: int = 3

    def validate(self):
        if self.backup_log_count < 0:
            raise ConfigurationError('logging.backup_log_count must be non-negative')


@dataclass(frozen=True)
class RunConfig:
    environment: EnvironmentConfig = field(default_factory=EnvironmentConfig)
    world_model: WorldModelConfig = field(default_factory=WorldModelConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    reward_smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    buffers: BufferConfig = field(default_factory=BufferConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)
    logging: LoggingConfig = field(default_factory=LoggingConfig)

    @staticmethod
    def from_parser(cfg_parser: configparser.ConfigParser) -> 'RunConfig':
        sections = {}
        for section_field in dataclasses.fields(RunConfig):
            section_type = section_field.default_factory
            sections[section_field.name] = RunConfig._read_section(cfg_parser, section_field.name, section_type)
        unknown = set(cfg_parser.sections()) - set(sections.keys())
        if unknown:
            raise ConfigurationError(f'Unknown configuration sections: {", ".join(sorted(unknown))}')
        run_config = RunConfig(**sections)
        run_config.validate()
        return run_config

    @staticmethod
    def _read_section(cfg_parser: configparser.ConfigParser, section: str, section_type: type):
        if not cfg_parser.has_section(section):
            return section_type()
        known = {f.name: f for f in dataclasses.fields(section_type)}
        values = {}
        for key in cfg_parser.options(section):
            if key not in known:
                raise ConfigurationError(f'Unknown configuration key {section}.{key}')
            field_type = known[key].type
            try:
                if field_type in (bool, 'bool'):
                    values[key] = cfg_parser.getboolean(section, key)
                elif field_type in (int, 'int'):
                    values[key] = cfg_parser.getint(section, key)
                elif field_type in (float, 'float'):
                    values[key] = cfg_parser.getfloat(section, key)
                else:
                    values[key] = cfg_parser.get(section, key).strip()
            except ValueError as e:
                raise ConfigurationError(f'Invalid value for {section}.{key}: {e}')
        return section_type(**values)

    def validate(self):
        for section_field in dataclasses.fields(self):
            getattr(self, section_field.name).validate()

    def echo(self) -> dict:
        return dataclasses.asdict(self)


def apply_overrides(cfg_parser: configparser.ConfigParser, overrides: list[str]):
    pattern = re.compile(r'^\s*(\w+)\.(\w+)\s*=\s*(.*?)\s*$')
    for override in overrides:
        match = re.match(pattern, override)
        if not match:
            raise ConfigurationError(f'Override "{override}" is not of the form section.key=value')
        section, key, value = match.group(1).lower(), match.group(2).lower(), match.group(3)
        if not cfg_parser.has_section(section):
            cfg_parser.add_section(section)
        cfg_parser.set(section, key, value)
        logger.debug(f'Override applied: {section}.{key} = {value}')
