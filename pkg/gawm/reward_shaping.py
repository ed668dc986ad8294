#!/usr/bin/env python3
# coding=utf-8

import logging

import numpy as np

from gawm.configuration import SmoothingConfig
from gawm.exceptions import InputError

logger = logging.getLogger(__name__)


def smoothing_kernel(h: int, sigma: float) -> np.ndarray:
    """Normalised Gaussian weights for offsets -h..h"""
    if h < 0:
        raise InputError(f'Smoothing half-window must be non-negative, got {h}')
    if not sigma > 0:
        raise InputError(f'Smoothing width must be positive, got {sigma}')
    offsets = np.arange(-h, h + 1, dtype=np.float64)
    weights = np.exp(-offsets ** 2 / (2 * sigma ** 2))
    return weights / weights.sum()


def smooth_rewards(rewards, config: SmoothingConfig) -> np.ndarray:
    """Spread each reward over its neighbours, clipping indices at the episode edges.

    Total reward is preserved exactly only when the first and last h rewards are
    zero; edge rewards are re-weighted by the clipping otherwise.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    if rewards.ndim != 1 or rewards.size == 0:
        raise InputError(f'Rewards must be a non-empty vector, got shape {rewards.shape}')
    if not config.enabled or config.h == 0:
        return rewards.copy()
    weights = smoothing_kernel(config.h, config.sigma)
    last = rewards.size - 1
    indices = np.clip(np.arange(rewards.size)[:, None] + np.arange(-config.h, config.h + 1)[None, :], 0, last)
    return rewards[indices] @ weights
