#!/usr/bin/env python3
# coding=utf-8

import logging
from pathlib import Path

import numpy as np

from gawm.configuration import Configuration
from gawm.connector import RunConnector
from gawm.exceptions import InputError
from gawm.replay_buffer import PseudoReplayBuffer, RealReplayBuffer
from gawm.trajectory_log import read_trajectory_log

logger = logging.getLogger(__name__)


class Replayer(RunConnector):
    """Rebuilds both buffers from a trajectory log and summarises them"""

    def __init__(self, args: Configuration):
        super(Replayer, self).__init__(args)

    def run(self) -> dict[str, dict]:
        if not self.args.input_log:
            raise InputError('A trajectory log is required')
        log = read_trajectory_log(Path(self.args.input_log))
        real_buffer = RealReplayBuffer(self.config.buffers.real_capacity)
        pseudo_buffer = PseudoReplayBuffer(self.config.buffers.pseudo_capacity)
        for episode in log.episodes:
            real_buffer.push_real(episode)
        for segment in log.segments:
            pseudo_buffer.push_pseudo(segment)

        summary = {
            'real': {
                'trajectories': len(real_buffer),
                'steps': int(sum(len(e) for e in real_buffer)),
                'success_rate': float(np.mean([e.success for e in real_buffer])) if len(real_buffer) else 0.0,
            },
            'pseudo': {
                'trajectories': len(pseudo_buffer),
                'steps': int(sum(len(s) for s in pseudo_buffer)),
                'terminated_rate':
                    float(np.mean([s.continuations[-1] == 0 for s in pseudo_buffer])) if len(pseudo_buffer) else 0.0,
            },
        }
        real, pseudo = summary['real'], summary['pseudo']
        print(f'real: {real["trajectories"]} trajectories, {real["steps"]} steps, '
              f'success rate {real["success_rate"]:.4f}')
        print(f'pseudo: {pseudo["trajectories"]} trajectories, {pseudo["steps"]} steps, '
              f'terminated rate {pseudo["terminated_rate"]:.4f}')
        if len(log.episodes) > len(real_buffer) or len(log.segments) > len(pseudo_buffer):
            logger.warning('The log holds more trajectories than the configured buffer capacities; oldest evicted')
        return summary
