#!/usr/bin/env python3
# coding=utf-8

import logging

import numpy as np
import torch

from gawm.configuration import Configuration
from gawm.connector import RunConnector
from gawm.exceptions import InputError
from gawm.policy import RandomPolicy
from gawm.rollout import evaluate_policy

logger = logging.getLogger(__name__)


class Evaluator(RunConnector):
    def __init__(self, args: Configuration):
        super(Evaluator, self).__init__(args)

    def run(self) -> tuple[float, float]:
        if self.args.episodes < 1:
            raise InputError(f'At least one evaluation episode is required, got {self.args.episodes}')
        env = self.make_environment()
        generator = torch.Generator().manual_seed(self.config.environment.seed)
        if self.args.policy == 'random':
            policy = RandomPolicy(env.spec.n_agents, env.spec.n_actions)
            mode = 'sample'
        else:
            if not self.args.checkpoint:
                raise InputError('A checkpoint is required to evaluate a trained policy')
            _, policy = self.load_models(self.args.checkpoint[0], env)
            mode = 'greedy'

        successes = evaluate_policy(env, policy, self.args.episodes, mode, generator)
        mean = float(successes.mean())
        std = float(successes.std(ddof=1)) if successes.size > 1 else 0.0
        logger.info(f'Evaluated {self.args.policy} policy on {env.spec.name} over {successes.size} episodes')
        print(f'success rate {mean:.4f} ± {std:.4f} over {successes.size} episodes')
        return mean, std
