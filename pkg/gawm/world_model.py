#!/usr/bin/env python3
# coding=utf-8

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import torch
import torch.nn.functional as F
from torch import nn

from gawm.configuration import WorldModelConfig
from gawm.exceptions import InputError, NumericError, ShapeError

logger = logging.getLogger(__name__)

Sampler = Callable[[torch.Tensor, Optional[torch.Generator]], torch.Tensor]


def straight_through_sample(logits: torch.Tensor, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """One-hot samples from the last axis of logits with the softmax gradient passed straight through"""
    probs = torch.softmax(logits, dim=-1)
    flat = probs.detach().reshape(-1, probs.shape[-1])
    indices = torch.multinomial(flat, 1, generator=generator).squeeze(-1)
    one_hot = F.one_hot(indices, probs.shape[-1]).to(probs.dtype).reshape(probs.shape)
    return one_hot + (probs - probs.detach())


def categorical_kl(p_logits: torch.Tensor, q_logits: torch.Tensor) -> torch.Tensor:
    """KL(p || q) per categorical block, reducing the class axis"""
    p_log = torch.log_softmax(p_logits, dim=-1)
    q_log = torch.log_softmax(q_logits, dim=-1)
    return (p_log.exp() * (p_log - q_log)).sum(dim=-1)


def balanced_kl(
        posterior_logits: torch.Tensor,
        prior_logits: torch.Tensor,
        kl_balance: float,
        free_nats: float,
) -> torch.Tensor:
    """Per-block KL with the prior side weighted by kl_balance and a floor of free_nats"""
    prior_side = categorical_kl(posterior_logits.detach(), prior_logits)
    posterior_side = categorical_kl(posterior_logits, prior_logits.detach())
    mixed = kl_balance * prior_side + (1 - kl_balance) * posterior_side
    return torch.clamp(mixed, min=free_nats)


@dataclass
class LatentState:
    h: torch.Tensor
    z: torch.Tensor
    z_logits: torch.Tensor

    def detach(self) -> 'LatentState':
        return LatentState(self.h.detach(), self.z.detach(), self.z_logits.detach())


@dataclass
class FusionInputs:
    e: torch.Tensor
    g: torch.Tensor


@dataclass
class Reconstruction:
    obs_mean: torch.Tensor
    reward_mean: torch.Tensor
    continuation_logit: torch.Tensor

    @property
    def continuation_prob(self) -> torch.Tensor:
        return torch.sigmoid(self.continuation_logit)


@dataclass
class SequenceOutputs:
    """Posterior pass over L transitions; every tensor has the time axis at position 1"""
    h: torch.Tensor
    z: torch.Tensor
    prior_logits: torch.Tensor
    posterior_logits: torch.Tensor
    obs_mean: torch.Tensor
    reward_mean: torch.Tensor
    continuation_logit: torch.Tensor
    final: Optional[LatentState] = None

    def __len__(self) -> int:
        return self.obs_mean.shape[1]


def _local_mask(n_tokens: int, device: torch.device) -> torch.Tensor:
    # True entries are blocked, so each token only attends to itself
    return ~torch.eye(n_tokens, dtype=torch.bool, device=device)


class FusionTransformer(nn.Module):
    def __init__(self, in_dim: int, d_model: int, n_heads: int, n_layers: int, n_agents: int, agent_identity: bool):
        super(FusionTransformer, self).__init__()
        self.n_agents = n_agents
        self.input_projection = nn.Linear(in_dim, d_model)
        self.identity = nn.Embedding(n_agents, d_model) if agent_identity else None
        layer = nn.TransformerEncoderLayer(
            d_model,
            n_heads,
            dim_feedforward=2 * d_model,
            dropout=0.0,
            activation='gelu',
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, n_layers, enable_nested_tensor=False)

    def forward(self, tokens: torch.Tensor, local_only: bool = False) -> torch.Tensor:
        if tokens.shape[-2] != self.n_agents:
            raise ShapeError(f'Expected {self.n_agents} agent tokens, got {tokens.shape[-2]}')
        x = self.input_projection(tokens)
        if self.identity is not None:
            x = x + self.identity.weight
        mask = _local_mask(self.n_agents, tokens.device) if local_only else None
        return self.encoder(x, mask=mask)


class GlobalPredictor(nn.Module):
    """Reward and continuation heads over attention-pooled agent tokens"""

    def __init__(self, in_dim: int, hidden_dim: int, n_heads: int):
        super(GlobalPredictor, self).__init__()
        self.token_projection = nn.Linear(in_dim, hidden_dim)
        layer = nn.TransformerEncoderLayer(
            hidden_dim,
            n_heads,
            dim_feedforward=2 * hidden_dim,
            dropout=0.0,
            activation='gelu',
            batch_first=True,
        )
        self.encoder = nn.TransformerEncoder(layer, 1, enable_nested_tensor=False)
        self.reward_head = nn.Sequential(nn.Linear(hidden_dim, hidden_dim), nn.ELU(), nn.Linear(hidden_dim, 1))
        self.discount_head = nn.Sequential(nn.Linear(hidden_dim, hidden_dim), nn.ELU(), nn.Linear(hidden_dim, 1))

    def forward(self, tokens: torch.Tensor, per_agent: bool = False) -> tuple[torch.Tensor, torch.Tensor]:
        n_agents = tokens.shape[-2]
        mask = _local_mask(n_agents, tokens.device) if per_agent else None
        x = self.encoder(self.token_projection(tokens), mask=mask)
        if not per_agent:
            x = x.mean(dim=-2)
        return self.reward_head(x).squeeze(-1), self.discount_head(x).squeeze(-1)


class WorldModel(nn.Module):
    """Latent dynamics shared by all agents, fused across agents by attention.

    Tensors carry a leading batch axis and an agent axis: h is (B, N, h_dim),
    z is (B, N, n_categoricals * n_classes) and logits are
    (B, N, n_categoricals, n_classes).
    """

    def __init__(self, config: WorldModelConfig, n_agents: int, obs_dim: int, n_actions: int):
        super(WorldModel, self).__init__()
        self.config = config
        self.n_agents = n_agents
        self.obs_dim = obs_dim
        self.n_actions = n_actions
        self.sampler: Sampler = straight_through_sample

        z_dim = config.z_dim
        logits_dim = config.n_categoricals * config.n_classes
        self.act_fusion_net = FusionTransformer(
            z_dim + n_actions, config.e_dim, config.n_heads, config.n_attention_layers, n_agents,
            config.agent_identity)
        self.obs_fusion_net = FusionTransformer(
            config.h_dim + obs_dim, config.g_dim, config.n_heads, config.n_attention_layers, n_agents,
            config.agent_identity)
        self.recurrent_cell = nn.GRUCell(config.e_dim, config.h_dim)
        self.prior_net = nn.Sequential(
            nn.Linear(config.h_dim, config.hidden_dim), nn.ELU(), nn.Linear(config.hidden_dim, logits_dim))
        self.posterior_net = nn.Sequential(
            nn.Linear(config.g_dim, config.hidden_dim), nn.ELU(), nn.Linear(config.hidden_dim, logits_dim))
        self.observation_head = nn.Sequential(
            nn.Linear(config.h_dim + z_dim, config.hidden_dim),
            nn.ELU(),
            nn.Linear(config.hidden_dim, config.hidden_dim),
            nn.ELU(),
            nn.Linear(config.hidden_dim, obs_dim),
        )
        self.global_predictor = GlobalPredictor(config.h_dim + z_dim, config.hidden_dim, config.n_heads)

    @property
    def dtype(self) -> torch.dtype:
        return self.recurrent_cell.weight_hh.dtype

    def _check_agents(self, name: str, tensor: torch.Tensor, last_dim: Optional[int] = None):
        if tensor.dim() != 3 or tensor.shape[1] != self.n_agents:
            raise ShapeError(f'{name} must have shape (batch, {self.n_agents}, ...), got {tuple(tensor.shape)}')
        if last_dim is not None and tensor.shape[-1] != last_dim:
            raise ShapeError(f'{name} must have trailing size {last_dim}, got {tensor.shape[-1]}')

    def _one_hot_actions(self, actions: torch.Tensor) -> torch.Tensor:
        actions = torch.as_tensor(actions)
        if actions.dim() != 2 or actions.shape[1] != self.n_agents:
            raise ShapeError(f'Joint actions must have shape (batch, {self.n_agents}), got {tuple(actions.shape)}')
        if actions.is_floating_point():
            raise InputError('Joint actions must be integers')
        if torch.any(actions < 0) or torch.any(actions >= self.n_actions):
            raise InputError(f'Joint actions outside [0, {self.n_actions})')
        return F.one_hot(actions.long(), self.n_actions).to(self.dtype)

    def act_fusion(self, z: torch.Tensor, actions: torch.Tensor) -> torch.Tensor:
        self._check_agents('z', z, self.config.z_dim)
        actions = torch.as_tensor(actions)
        if actions.dim() < 1 or actions.shape[0] != z.shape[0]:
            raise ShapeError(f'Batch sizes of z ({z.shape[0]}) and actions ({actions.shape[0]}) differ')
        tokens = torch.cat((z, self._one_hot_actions(actions)), dim=-1)
        return self.act_fusion_net(tokens)

    def obs_fusion(self, h: torch.Tensor, observations: torch.Tensor) -> torch.Tensor:
        self._check_agents('h', h, self.config.h_dim)
        self._check_agents('observations', observations, self.obs_dim)
        if h.shape[0] != observations.shape[0]:
            raise ShapeError(f'Batch sizes of h ({h.shape[0]}) and observations ({observations.shape[0]}) differ')
        tokens = torch.cat((h, observations.to(self.dtype)), dim=-1)
        return self.obs_fusion_net(tokens, local_only=not self.config.obs_fusion_enabled)

    def fuse(self, latent: LatentState, actions: torch.Tensor, h: torch.Tensor,
             observations: torch.Tensor) -> FusionInputs:
        return FusionInputs(self.act_fusion(latent.z, actions), self.obs_fusion(h, observations))

    def recurrent_step(self, h_prev: torch.Tensor, e: torch.Tensor) -> torch.Tensor:
        self._check_agents('h_prev', h_prev, self.config.h_dim)
        self._check_agents('e', e, self.config.e_dim)
        batch = h_prev.shape[0]
        h = self.recurrent_cell(e.reshape(-1, self.config.e_dim), h_prev.reshape(-1, self.config.h_dim))
        return h.reshape(batch, self.n_agents, self.config.h_dim)

    def _logits(self, net: nn.Module, features: torch.Tensor) -> torch.Tensor:
        logits = net(features)
        return logits.reshape(*features.shape[:-1], self.config.n_categoricals, self.config.n_classes)

    def _sample(self, logits: torch.Tensor, generator: Optional[torch.Generator]) -> torch.Tensor:
        sample = self.sampler(logits, generator)
        return sample.reshape(*logits.shape[:-2], self.config.z_dim)

    def posterior(self, g: torch.Tensor, generator: Optional[torch.Generator] = None):
        if not torch.all(torch.isfinite(g)):
            raise NumericError('Observation fusion produced non-finite features')
        logits = self._logits(self.posterior_net, g)
        return logits, self._sample(logits, generator)

    def prior_logits(self, h: torch.Tensor) -> torch.Tensor:
        if not torch.all(torch.isfinite(h)):
            raise NumericError('Recurrent state holds non-finite entries')
        return self._logits(self.prior_net, h)

    def prior(self, h: torch.Tensor, generator: Optional[torch.Generator] = None):
        logits = self.prior_logits(h)
        return logits, self._sample(logits, generator)

    def reconstruct(self, h: torch.Tensor, z: torch.Tensor) -> Reconstruction:
        self._check_agents('h', h, self.config.h_dim)
        self._check_agents('z', z, self.config.z_dim)
        tokens = torch.cat((h, z), dim=-1)
        reward, continuation_logit = self.global_predictor(tokens)
        return Reconstruction(self.observation_head(tokens), reward, continuation_logit)

    def reconstruct_per_agent(self, h: torch.Tensor, z: torch.Tensor) -> Reconstruction:
        """Reward and continuation estimated from each agent's own token; both are (B, N)"""
        self._check_agents('h', h, self.config.h_dim)
        self._check_agents('z', z, self.config.z_dim)
        tokens = torch.cat((h, z), dim=-1)
        reward, continuation_logit = self.global_predictor(tokens, per_agent=True)
        return Reconstruction(self.observation_head(tokens), reward, continuation_logit)

    def initial_state(self, batch_size: int, generator: Optional[torch.Generator] = None) -> LatentState:
        h = torch.zeros(batch_size, self.n_agents, self.config.h_dim, dtype=self.dtype)
        logits, z = self.prior(h, generator)
        return LatentState(h, z, logits)

    def initial_posterior(self, observations: torch.Tensor,
                          generator: Optional[torch.Generator] = None) -> LatentState:
        observations = torch.as_tensor(observations, dtype=self.dtype)
        h = torch.zeros(observations.shape[0], self.n_agents, self.config.h_dim, dtype=self.dtype)
        logits, z = self.posterior(self.obs_fusion(h, observations), generator)
        return LatentState(h, z, logits)

    def observe_step(self, latent: LatentState, actions: torch.Tensor, observations: torch.Tensor,
                     generator: Optional[torch.Generator] = None) -> tuple[LatentState, torch.Tensor]:
        h = self.recurrent_step(latent.h, self.act_fusion(latent.z, actions))
        prior_logits = self.prior_logits(h)
        posterior_logits, z = self.posterior(self.obs_fusion(h, observations), generator)
        return LatentState(h, z, posterior_logits), prior_logits

    def observe_sequence(self, observations, actions, generator: Optional[torch.Generator] = None) -> SequenceOutputs:
        """Posterior pass over a window of transitions.

        observations is (B, L+1, N, obs_dim) and actions (B, L, N). The first
        observation only seeds the latent state; outputs at step t are
        reconstructions of observation t+1 and of the reward and continuation of
        transition t.
        """
        observations = torch.as_tensor(observations, dtype=self.dtype)
        actions = torch.as_tensor(actions)
        if actions.dim() != 3 or actions.shape[1] < 1:
            raise InputError(f'Cannot observe an empty or malformed action sequence of shape {tuple(actions.shape)}')
        if observations.dim() != 4 or observations.shape[1] != actions.shape[1] + 1:
            raise InputError(
                f'Expected {actions.shape[1] + 1} joint observations for {actions.shape[1]} transitions, '
                f'got shape {tuple(observations.shape)}')

        latent = self.initial_posterior(observations[:, 0], generator)
        hs, zs, priors, posteriors = [], [], [], []
        for t in range(actions.shape[1]):
            latent, prior_logits = self.observe_step(latent, actions[:, t], observations[:, t + 1], generator)
            hs.append(latent.h)
            zs.append(latent.z)
            priors.append(prior_logits)
            posteriors.append(latent.z_logits)

        h = torch.stack(hs, dim=1)
        z = torch.stack(zs, dim=1)
        batch, length = h.shape[:2]
        flat = self.reconstruct(h.flatten(0, 1), z.flatten(0, 1))
        return SequenceOutputs(
            h=h,
            z=z,
            prior_logits=torch.stack(priors, dim=1),
            posterior_logits=torch.stack(posteriors, dim=1),
            obs_mean=flat.obs_mean.reshape(batch, length, self.n_agents, self.obs_dim),
            reward_mean=flat.reward_mean.reshape(batch, length),
            continuation_logit=flat.continuation_logit.reshape(batch, length),
            final=latent,
        )

    def imagine_step(self, latent: LatentState, actions,
                     generator: Optional[torch.Generator] = None) -> tuple[LatentState, Reconstruction]:
        h = self.recurrent_step(latent.h, self.act_fusion(latent.z, torch.as_tensor(actions)))
        logits, z = self.prior(h, generator)
        next_latent = LatentState(h, z, logits)
        return next_latent, self.reconstruct(h, z)


def world_model_loss(outputs: SequenceOutputs, observations, rewards, continuations,
                     config: WorldModelConfig) -> tuple[torch.Tensor, dict[str, float]]:
    """Joint reconstruction and latent-prediction loss.

    Gaussian terms use unit variance with the additive constant dropped, so a
    perfect prediction scores 0. Every term is summed over agents, features and
    categoricals, then averaged over batch and time.
    """
    observations = torch.as_tensor(observations, dtype=outputs.obs_mean.dtype)
    rewards = torch.as_tensor(rewards, dtype=outputs.reward_mean.dtype)
    continuations = torch.as_tensor(continuations, dtype=outputs.continuation_logit.dtype)
    if observations.shape != outputs.obs_mean.shape:
        raise InputError(f'Observation targets {tuple(observations.shape)} do not match predictions '
                         f'{tuple(outputs.obs_mean.shape)}')
    if rewards.shape != outputs.reward_mean.shape or continuations.shape != outputs.continuation_logit.shape:
        raise InputError(f'Reward or continuation targets do not match predictions of shape '
                         f'{tuple(outputs.reward_mean.shape)}')

    obs_nll = 0.5 * (outputs.obs_mean - observations).pow(2).sum(dim=(-2, -1)).mean()
    reward_nll = 0.5 * (outputs.reward_mean - rewards).pow(2).mean()
    discount_nll = F.binary_cross_entropy_with_logits(outputs.continuation_logit, continuations)
    kl = categorical_kl(outputs.posterior_logits, outputs.prior_logits).sum(dim=(-2, -1)).mean()
    kl_loss = balanced_kl(
        outputs.posterior_logits, outputs.prior_logits, config.kl_balance, config.free_nats,
    ).sum(dim=(-2, -1)).mean()

    total = obs_nll + reward_nll + discount_nll + config.beta * kl_loss
    components = {
        'obs_nll': obs_nll.item(),
        'reward_nll': reward_nll.item(),
        'discount_nll': discount_nll.item(),
        'kl': kl.item(),
        'kl_loss': kl_loss.item(),
    }
    if not torch.isfinite(total):
        raise NumericError(f'World model loss is not finite: {components}')
    return total, components
