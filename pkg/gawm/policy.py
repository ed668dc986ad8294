#!/usr/bin/env python3
# coding=utf-8

import copy
import logging
import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn.functional as F
from torch import nn

from gawm.configuration import PolicyConfig
from gawm.exceptions import InputError, ShapeError

logger = logging.getLogger(__name__)


def _as_float(values) -> torch.Tensor:
    if isinstance(values, torch.Tensor):
        return values
    return torch.as_tensor(values, dtype=torch.float64)


@dataclass
class ActorState:
    memory: torch.Tensor

    def detach(self) -> 'ActorState':
        return ActorState(self.memory.detach())


@dataclass
class AdvantageBatch:
    advantages: torch.Tensor
    returns: torch.Tensor
    old_log_probs: Optional[torch.Tensor] = None


class RecurrentActor(nn.Module):
    """Shared-weight actor; every agent row is processed independently"""

    def __init__(self, obs_dim: int, n_agents: int, n_actions: int, config: PolicyConfig):
        super(RecurrentActor, self).__init__()
        self.obs_dim = obs_dim
        self.n_agents = n_agents
        self.n_actions = n_actions
        self.gru_dim = config.gru_dim
        self.encoder = nn.Sequential(nn.Linear(obs_dim + n_agents, config.actor_hidden), nn.ELU())
        self.memory_cell = nn.GRUCell(config.actor_hidden, config.gru_dim)
        self.logits_head = nn.Linear(config.gru_dim, n_actions)

    def forward(self, observations: torch.Tensor, memory: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if observations.dim() != 3 or observations.shape[1:] != (self.n_agents, self.obs_dim):
            raise ShapeError(f'Actor expects observations of shape (batch, {self.n_agents}, {self.obs_dim}), '
                             f'got {tuple(observations.shape)}')
        if memory.shape != (observations.shape[0], self.n_agents, self.gru_dim):
            raise ShapeError(f'Actor memory has shape {tuple(memory.shape)}')
        batch = observations.shape[0]
        dtype = self.logits_head.weight.dtype
        agent_ids = torch.eye(self.n_agents, dtype=dtype).expand(batch, -1, -1)
        features = self.encoder(torch.cat((observations.to(dtype), agent_ids), dim=-1))
        next_memory = self.memory_cell(features.reshape(-1, features.shape[-1]), memory.reshape(-1, self.gru_dim))
        next_memory = next_memory.reshape(batch, self.n_agents, self.gru_dim)
        return self.logits_head(next_memory), next_memory


class CentralCritic(nn.Module):
    def __init__(self, obs_dim: int, n_agents: int, config: PolicyConfig):
        super(CentralCritic, self).__init__()
        self.obs_dim = obs_dim
        self.n_agents = n_agents
        self.network = nn.Sequential(
            nn.Linear(obs_dim * n_agents, config.critic_hidden),
            nn.ELU(),
            nn.Linear(config.critic_hidden, config.critic_hidden),
            nn.ELU(),
        )
        self.value_head = nn.Linear(config.critic_hidden, 1)

    def forward(self, joint_observations: torch.Tensor) -> torch.Tensor:
        if joint_observations.dim() < 2 or joint_observations.shape[-2:] != (self.n_agents, self.obs_dim):
            raise ShapeError(f'Critic expects (..., {self.n_agents}, {self.obs_dim}) observations, '
                             f'got {tuple(joint_observations.shape)}')
        flat = joint_observations.to(self.value_head.weight.dtype).flatten(-2)
        return self.value_head(self.network(flat)).squeeze(-1)


class MAPPOPolicy(nn.Module):
    """Decentralised recurrent actors with a centralised critic.

    The target copies act during collection and imagination and provide the
    values for advantage estimation; the online copies are the ones optimised.
    """

    def __init__(self, config: PolicyConfig, n_agents: int, obs_dim: int, n_actions: int):
        super(MAPPOPolicy, self).__init__()
        self.config = config
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.actor = RecurrentActor(obs_dim, n_agents, n_actions, config)
        self.critic = CentralCritic(obs_dim, n_agents, config)
        self.target_actor = copy.deepcopy(self.actor)
        self.target_critic = copy.deepcopy(self.critic)
        for parameter in list(self.target_actor.parameters()) + list(self.target_critic.parameters()):
            parameter.requires_grad_(False)

    def online_parameters(self):
        return list(self.actor.parameters()) + list(self.critic.parameters())

    def initial_state(self, batch_size: Optional[int] = None) -> ActorState:
        dtype = self.actor.logits_head.weight.dtype
        if batch_size is None:
            return ActorState(torch.zeros(self.n_agents, self.config.gru_dim, dtype=dtype))
        return ActorState(torch.zeros(batch_size, self.n_agents, self.config.gru_dim, dtype=dtype))

    def act(self, observations, state: ActorState, mode: str = 'sample',
            generator: Optional[torch.Generator] = None, online: bool = False):
        """Pick one action per agent from that agent's own observation and memory.

        Accepts a single joint observation (N, obs_dim) or a batch (B, N, obs_dim).
        """
        observations = torch.as_tensor(observations)
        single = observations.dim() == 2
        if single:
            observations = observations.unsqueeze(0)
            memory = state.memory.unsqueeze(0)
        else:
            memory = state.memory
        actor = self.actor if online else self.target_actor
        logits, next_memory = actor(observations, memory)
        log_probs_all = torch.log_softmax(logits, dim=-1)
        if mode == 'greedy':
            actions = torch.argmax(logits, dim=-1)
        elif mode == 'sample':
            flat = log_probs_all.detach().exp().reshape(-1, self.n_actions)
            actions = torch.multinomial(flat, 1, generator=generator).reshape(logits.shape[:-1])
        else:
            raise InputError(f'Unknown acting mode "{mode}"')
        log_probs = log_probs_all.gather(-1, actions.unsqueeze(-1)).squeeze(-1)
        if single:
            return actions[0], log_probs[0], ActorState(next_memory[0])
        return actions, log_probs, ActorState(next_memory)

    def evaluate_value(self, joint_observations, target: bool = False) -> torch.Tensor:
        critic = self.target_critic if target else self.critic
        return critic(torch.as_tensor(joint_observations))

    def evaluate_actions(self, observations: torch.Tensor, actions: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Unroll the online actor over (B, L, N, obs_dim) from zero memory.

        Returns log-probabilities of the given (B, L, N) actions and the policy
        entropies, both (B, L, N).
        """
        batch, length = actions.shape[:2]
        memory = self.initial_state(batch).memory
        log_probs, entropies = [], []
        for t in range(length):
            logits, memory = self.actor(observations[:, t], memory)
            log_probs_all = torch.log_softmax(logits, dim=-1)
            log_probs.append(log_probs_all.gather(-1, actions[:, t].long().unsqueeze(-1)).squeeze(-1))
            entropies.append(-(log_probs_all.exp() * log_probs_all).sum(dim=-1))
        return torch.stack(log_probs, dim=1), torch.stack(entropies, dim=1)

    @torch.no_grad()
    def soft_update(self, tau: Optional[float] = None):
        tau = self.config.target_update_tau if tau is None else tau
        pairs = list(zip(self.target_actor.parameters(), self.actor.parameters()))
        pairs += list(zip(self.target_critic.parameters(), self.critic.parameters()))
        for target, online in pairs:
            if tau == 1.0:
                target.copy_(online)
            else:
                target.mul_(1 - tau).add_(online, alpha=tau)
        logger.log(9, f'Target networks updated with tau {tau}')


class RandomPolicy:
    """Uniform actions through the same interface as MAPPOPolicy"""

    def __init__(self, n_agents: int, n_actions: int):
        self.n_agents = n_agents
        self.n_actions = n_actions

    def initial_state(self, batch_size: Optional[int] = None) -> ActorState:
        if batch_size is None:
            return ActorState(torch.zeros(self.n_agents, 1))
        return ActorState(torch.zeros(batch_size, self.n_agents, 1))

    def act(self, observations, state: ActorState, mode: str = 'sample',
            generator: Optional[torch.Generator] = None, online: bool = False):
        shape = tuple(torch.as_tensor(observations).shape[:-1])
        actions = torch.randint(0, self.n_actions, shape, generator=generator)
        log_probs = torch.full(shape, -math.log(self.n_actions))
        return actions, log_probs, state


def compute_gae(rewards, values, continuations, gamma: float, gae_lambda: float) -> AdvantageBatch:
    """Generalised advantage estimates along the last axis.

    values holds one more entry than rewards: the last one bootstraps the step
    after the final transition. A zero continuation stops bootstrapping.
    """
    rewards = _as_float(rewards)
    values = _as_float(values).to(rewards.dtype)
    continuations = _as_float(continuations).to(rewards.dtype)
    length = rewards.shape[-1]
    if length < 1:
        raise InputError('Cannot estimate advantages for an empty sequence')
    if continuations.shape != rewards.shape or values.shape[:-1] != rewards.shape[:-1] \
            or values.shape[-1] != length + 1:
        raise InputError(f'Misaligned inputs: rewards {tuple(rewards.shape)}, values {tuple(values.shape)}, '
                         f'continuations {tuple(continuations.shape)}')

    deltas = rewards + gamma * continuations * values[..., 1:] - values[..., :-1]
    advantages = torch.zeros_like(rewards)
    running = torch.zeros_like(rewards[..., 0])
    for t in reversed(range(length)):
        running = deltas[..., t] + gamma * gae_lambda * continuations[..., t] * running
        advantages[..., t] = running
    return AdvantageBatch(advantages, advantages + values[..., :-1])


def normalize_advantages(advantages: torch.Tensor, mask: Optional[torch.Tensor] = None,
                         eps: float = 1e-8) -> torch.Tensor:
    if mask is None:
        mask = torch.ones_like(advantages)
    count = mask.sum()
    if count < 1:
        raise InputError('Cannot normalise an empty advantage batch')
    mean = (advantages * mask).sum() / count
    std = torch.sqrt((((advantages - mean) * mask) ** 2).sum() / count)
    return (advantages - mean) / (std + eps) * mask


def clipped_surrogate(new_log_probs: torch.Tensor, old_log_probs: torch.Tensor, advantages: torch.Tensor,
                      clip_epsilon: float) -> torch.Tensor:
    if not new_log_probs.shape == old_log_probs.shape == advantages.shape:
        raise InputError(f'Misaligned PPO inputs: {tuple(new_log_probs.shape)}, {tuple(old_log_probs.shape)}, '
                         f'{tuple(advantages.shape)}')
    ratio = torch.exp(new_log_probs - old_log_probs)
    clipped = torch.clamp(ratio, 1 - clip_epsilon, 1 + clip_epsilon)
    return torch.min(ratio * advantages, clipped * advantages)


def _masked_mean(values: torch.Tensor, mask: Optional[torch.Tensor]) -> torch.Tensor:
    if mask is None:
        return values.mean()
    return (values * mask).sum() / mask.sum().clamp(min=1)


def ppo_actor_loss(
        new_log_probs: torch.Tensor,
        old_log_probs: torch.Tensor,
        advantages: torch.Tensor,
        clip_epsilon: float,
        entropy: Optional[torch.Tensor] = None,
        entropy_coef: float = 0.0,
        mask: Optional[torch.Tensor] = None,
) -> torch.Tensor:
    """Negated clipped surrogate, minus the weighted entropy bonus"""
    loss = -_masked_mean(clipped_surrogate(new_log_probs, old_log_probs, advantages, clip_epsilon), mask)
    if entropy is not None:
        loss = loss - entropy_coef * _masked_mean(entropy, mask)
    return loss


def value_loss(values: torch.Tensor, returns: torch.Tensor, mask: Optional[torch.Tensor] = None) -> torch.Tensor:
    values, returns = _as_float(values), _as_float(returns)
    if values.shape != returns.shape:
        raise InputError(f'Values {tuple(values.shape)} and returns {tuple(returns.shape)} are misaligned')
    return _masked_mean(F.mse_loss(values, returns.to(values.dtype), reduction='none'), mask)
