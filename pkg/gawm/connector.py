#!/usr/bin/env python3
# coding=utf-8

import configparser
import importlib.resources
import logging
import logging.handlers
from abc import ABCMeta, abstractmethod
from datetime import datetime
from pathlib import Path
from typing import Optional

import appdirs
import torch

from gawm.checkpoint import load_checkpoint, restore_into
from gawm.configuration import Configuration, RunConfig, apply_overrides
from gawm.environments.base_environment import BaseEnvironment
from gawm.environments.environment_factory import make_env
from gawm.exceptions import ConfigurationError
from gawm.policy import MAPPOPolicy
from gawm.world_model import WorldModel

logger = logging.getLogger(__name__)


class RunConnector(metaclass=ABCMeta):
    def __init__(self, args: Configuration):
        self.args = args
        self.config_directories = appdirs.AppDirs('gawm', 'GAWM')
        self.run_time = datetime.now().isoformat()
        self._setup_internal_objects()

    def _setup_internal_objects(self):
        self.determine_directories()
        self.load_config()
        self.apply_command_line_overrides()
        self.create_file_logger()

        self.read_config()
        self.write_resolved_config()
        self.seed_everything()
        logger.log(9, 'Run connector set up')

    def determine_directories(self):
        self.output_directory = Path(self.args.output).resolve().expanduser()
        self.config_directory = Path(self.config_directories.user_config_dir)

        self.output_directory.mkdir(exist_ok=True, parents=True)
        self.config_directory.mkdir(exist_ok=True, parents=True)

    def load_config(self):
        self.cfg_parser = configparser.ConfigParser()
        if self.args.config:
            cfg_path = Path(self.args.config).expanduser()
            if not cfg_path.is_file():
                raise ConfigurationError(f'Configuration file {cfg_path} does not exist')
            self._read_cfg(cfg_path)
            return
        possible_paths = [
            Path('./config.cfg'),
            Path('./default_config.cfg'),
            Path(self.config_directory, 'config.cfg'),
            Path(self.config_directory, 'default_config.cfg'),
        ]
        for path in possible_paths:
            if path.resolve().expanduser().exists():
                self._read_cfg(path)
                return
        self._read_cfg(Path(importlib.resources.files('gawm') / 'default_config.cfg'))

    def _read_cfg(self, path: Path):
        try:
            self.cfg_parser.read(path)
        except configparser.Error as e:
            raise ConfigurationError(f'Configuration file {path} could not be parsed: {e}')
        self.config_location = path
        logger.debug(f'Loading configuration from {path}')

    def apply_command_line_overrides(self):
        apply_overrides(self.cfg_parser, self.args.set)
        if self.args.seed is not None:
            if not self.cfg_parser.has_section('environment'):
                self.cfg_parser.add_section('environment')
            self.cfg_parser.set('environment', 'seed', str(self.args.seed))
            logger.debug(f'Seed set to {self.args.seed} from the command line')

    def create_file_logger(self):
        main_logger = logging.getLogger()
        if self.args.log is None:
            log_path = Path(self.output_directory, 'log_output.txt')
        else:
            log_path = Path(self.args.log).resolve().expanduser()
            if not log_path.parent.exists():
                raise ConfigurationError('Designated location for logfile does not exist')
        try:
            backup_count = self.cfg_parser.getint('logging', 'backup_log_count', fallback=3)
        except ValueError as e:
            raise ConfigurationError(f'Invalid value for logging.backup_log_count: {e}')
        file_handler = logging.handlers.RotatingFileHandler(
            log_path,
            mode='a',
            backupCount=backup_count,
        )
        if log_path.exists():
            try:
                file_handler.doRollover()
            except PermissionError:
                logger.critical(
                    'Cannot rollover logfile, make sure this is the only '
                    'GAWM process writing here or specify alternate logfile location')
                raise
        formatter = logging.Formatter('[%(asctime)s - %(name)s - %(levelname)s] - %(message)s')
        file_handler.setFormatter(formatter)
        file_handler.setLevel(0)

        main_logger.addHandler(file_handler)

    def read_config(self):
        self.config = RunConfig.from_parser(self.cfg_parser)
        logger.debug(f'Environment {self.config.environment.name} with seed {self.config.environment.seed}')

    def write_resolved_config(self):
        resolved_path = Path(self.output_directory, 'resolved_config.cfg')
        with open(resolved_path, 'w', encoding='utf-8') as file:
            self.cfg_parser.write(file)
        logger.debug(f'Resolved configuration written to {resolved_path}')

    def seed_everything(self):
        torch.manual_seed(self.config.environment.seed)
        if self.config.trainer.parallel_workers == 1:
            torch.set_num_threads(1)

    def make_environment(self, seed: Optional[int] = None) -> BaseEnvironment:
        seed = self.config.environment.seed if seed is None else seed
        return make_env(self.config.environment.name, seed, self.config.environment)

    def build_models(self, env: BaseEnvironment, config: Optional[RunConfig] = None) -> tuple[WorldModel, MAPPOPolicy]:
        config = self.config if config is None else config
        spec = env.spec
        world_model = WorldModel(config.world_model, spec.n_agents, spec.obs_dim, spec.n_actions)
        policy = MAPPOPolicy(config.policy, spec.n_agents, spec.obs_dim, spec.n_actions)
        return world_model, policy

    def load_models(self, checkpoint_path: str, env: BaseEnvironment) -> tuple[WorldModel, MAPPOPolicy]:
        checkpoint = load_checkpoint(Path(checkpoint_path), expected=self.config)
        # Models take the architecture they were trained with, ablations included
        if checkpoint.config.world_model != self.config.world_model:
            logger.debug(f'Checkpoint {checkpoint_path} was trained with world model {checkpoint.config.world_model}')
        world_model, policy = self.build_models(env, checkpoint.config)
        restore_into(checkpoint, world_model, policy)
        world_model.eval()
        policy.eval()
        return world_model, policy

    @abstractmethod
    def run(self):
        raise NotImplementedError
