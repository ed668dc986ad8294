#!/usr/bin/env python3
# coding=utf-8

import dataclasses
import math
from typing import Optional

import numpy as np
import pytest
import torch

from gawm.configuration import SmoothingConfig, WorldModelConfig
from gawm.environments.switch_corridor import SwitchCorridor
from gawm.exceptions import InputError, NumericError, ShapeError
from gawm.policy import RandomPolicy
from gawm.replay_buffer import RealReplayBuffer
from gawm.rollout import collect_episode
from gawm.world_model import (
    FusionTransformer,
    SequenceOutputs,
    WorldModel,
    balanced_kl,
    categorical_kl,
    straight_through_sample,
    world_model_loss,
)

N_AGENTS, OBS_DIM, N_ACTIONS = 2, 5, 3


class ReplaySampler:
    """Replays recorded one-hot samples so the model becomes a smooth function of its parameters"""

    def __init__(self):
        self.recorded = []
        self.cursor: Optional[int] = None

    def replay(self):
        self.cursor = 0

    def __call__(self, logits: torch.Tensor, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        probs = torch.softmax(logits, dim=-1)
        if self.cursor is None:
            one_hot = straight_through_sample(logits, generator).detach()
            self.recorded.append((one_hot, probs.detach()))
            return one_hot + (probs - probs.detach())
        one_hot, recorded_probs = self.recorded[self.cursor]
        self.cursor += 1
        return one_hot + (probs - recorded_probs)


@pytest.fixture()
def model(tiny_world_model_config: WorldModelConfig) -> WorldModel:
    torch.manual_seed(0)
    return WorldModel(tiny_world_model_config, N_AGENTS, OBS_DIM, N_ACTIONS)


def _random_inputs(config: WorldModelConfig, batch: int = 3, n_agents: int = N_AGENTS):
    z = torch.rand(batch, n_agents, config.z_dim)
    actions = torch.randint(0, N_ACTIONS, (batch, n_agents))
    h = torch.randn(batch, n_agents, config.h_dim)
    observations = torch.rand(batch, n_agents, OBS_DIM)
    return z, actions, h, observations


def test_component_shapes(model: WorldModel, tiny_world_model_config: WorldModelConfig):
    config = tiny_world_model_config
    z, actions, h, observations = _random_inputs(config)
    e = model.act_fusion(z, actions)
    g = model.obs_fusion(h, observations)
    assert e.shape == (3, N_AGENTS, config.e_dim)
    assert g.shape == (3, N_AGENTS, config.g_dim)
    assert model.recurrent_step(h, e).shape == (3, N_AGENTS, config.h_dim)
    logits, sample = model.posterior(g)
    assert logits.shape == (3, N_AGENTS, config.n_categoricals, config.n_classes)
    assert sample.shape == (3, N_AGENTS, config.z_dim)
    reconstruction = model.reconstruct(h, sample)
    assert reconstruction.obs_mean.shape == (3, N_AGENTS, OBS_DIM)
    assert reconstruction.reward_mean.shape == (3,)
    assert reconstruction.continuation_logit.shape == (3,)
    per_agent = model.reconstruct_per_agent(h, sample)
    assert per_agent.reward_mean.shape == (3, N_AGENTS)
    assert torch.all((per_agent.continuation_prob > 0) & (per_agent.continuation_prob < 1))


def test_single_agent_attention(tiny_world_model_config: WorldModelConfig):
    model = WorldModel(tiny_world_model_config, 1, OBS_DIM, N_ACTIONS)
    z, actions, h, observations = _random_inputs(tiny_world_model_config, batch=1, n_agents=1)
    assert model.act_fusion(z, actions).shape == (1, 1, tiny_world_model_config.e_dim)
    assert model.obs_fusion(h, observations).shape == (1, 1, tiny_world_model_config.g_dim)


@pytest.mark.parametrize('n_agents', (1, 3))
def test_agent_count_mismatch(n_agents: int, model: WorldModel, tiny_world_model_config: WorldModelConfig):
    z, actions, h, observations = _random_inputs(tiny_world_model_config, n_agents=n_agents)
    with pytest.raises(ShapeError):
        model.act_fusion(z, actions)
    with pytest.raises(ShapeError):
        model.obs_fusion(h, observations)
    with pytest.raises(ShapeError):
        model.act_fusion_net(torch.rand(2, n_agents, tiny_world_model_config.z_dim + N_ACTIONS))


def test_fusion_deterministic(model: WorldModel, tiny_world_model_config: WorldModelConfig):
    z, actions, h, observations = _random_inputs(tiny_world_model_config)
    assert torch.equal(model.act_fusion(z, actions), model.act_fusion(z, actions))
    assert torch.equal(model.obs_fusion(h, observations), model.obs_fusion(h, observations))
    e = model.act_fusion(z, actions)
    assert torch.equal(model.recurrent_step(h, e), model.recurrent_step(h, e))


def _observation_jacobian(model: WorldModel, config: WorldModelConfig, source: int = 1) -> torch.Tensor:
    """d g[agent 0] / d o[source], shape (g_dim, obs_dim)"""
    _, _, h, observations = _random_inputs(config, batch=1)

    def agent_zero_token(source_observation: torch.Tensor) -> torch.Tensor:
        joint = observations.clone()
        joint[0, source] = source_observation
        return model.obs_fusion(h, joint)[0, 0]

    return torch.autograd.functional.jacobian(agent_zero_token, observations[0, source])


def test_ablated_obs_fusion_ignores_teammates(tiny_world_model_config: WorldModelConfig):
    config = dataclasses.replace(tiny_world_model_config, obs_fusion_enabled=False)
    torch.manual_seed(0)
    model = WorldModel(config, N_AGENTS, OBS_DIM, N_ACTIONS)
    assert torch.all(_observation_jacobian(model, config).abs() < 1e-12)
    assert _observation_jacobian(model, config, source=0).abs().max() > 1e-4


def test_obs_fusion_sees_teammates(model: WorldModel, tiny_world_model_config: WorldModelConfig):
    jacobian = _observation_jacobian(model, tiny_world_model_config)
    assert jacobian.shape == (tiny_world_model_config.g_dim, OBS_DIM)
    assert jacobian.abs().max() > 1e-4


def test_act_fusion_sees_teammate_actions(model: WorldModel, tiny_world_model_config: WorldModelConfig):
    z, actions, _, _ = _random_inputs(tiny_world_model_config, batch=1)
    changed = actions.clone()
    changed[0, 1] = (actions[0, 1] + 1) % N_ACTIONS
    assert not torch.allclose(model.act_fusion(z, actions)[0, 0], model.act_fusion(z, changed)[0, 0])


def _one_hot_latent(config: WorldModelConfig, classes: list[list[int]]) -> torch.Tensor:
    blocks = torch.nn.functional.one_hot(torch.tensor(classes), config.n_classes).float()
    return blocks.reshape(1, len(classes), config.z_dim)


def test_reconstruction_separates_agent_rows(model: WorldModel, tiny_world_model_config: WorldModelConfig):
    config = tiny_world_model_config
    h = torch.randn(1, N_AGENTS, config.h_dim)
    z = _one_hot_latent(config, [[0] * config.n_categoricals, [1] * config.n_categoricals])
    changed = _one_hot_latent(config, [[0] * config.n_categoricals, [config.n_classes - 1] * config.n_categoricals])
    before, after = model.reconstruct(h, z), model.reconstruct(h, changed)
    assert torch.allclose(before.obs_mean[0, 0], after.obs_mean[0, 0], atol=1e-7)
    assert not torch.allclose(before.obs_mean[0, 1], after.obs_mean[0, 1])
    assert not torch.allclose(before.reward_mean, after.reward_mean)
    assert not torch.allclose(before.continuation_logit, after.continuation_logit)

    own_before, own_after = model.reconstruct_per_agent(h, z), model.reconstruct_per_agent(h, changed)
    assert torch.allclose(own_before.reward_mean[0, 0], own_after.reward_mean[0, 0], atol=1e-6)
    assert not torch.allclose(own_before.reward_mean[0, 1], own_after.reward_mean[0, 1])


def test_permutation_equivariance_without_identity(tiny_world_model_config: WorldModelConfig):
    torch.manual_seed(1)
    net = FusionTransformer(6, 8, 2, 2, 3, agent_identity=False)
    tokens = torch.randn(4, 3, 6)
    order = [2, 0, 1]
    assert torch.allclose(net(tokens[:, order]), net(tokens)[:, order], atol=1e-5)


def test_posterior_rejects_non_finite(model: WorldModel, tiny_world_model_config: WorldModelConfig):
    g = torch.full((1, N_AGENTS, tiny_world_model_config.g_dim), float('nan'))
    with pytest.raises(NumericError):
        model.posterior(g)


def test_sample_is_one_hot(torch_generator: torch.Generator):
    logits = torch.randn(200, 4, 32, generator=torch_generator, requires_grad=True)
    sample = straight_through_sample(logits, torch_generator)
    assert torch.all((sample == 0) | (sample == 1))
    assert torch.all(sample.sum(dim=-1) == 1)


def test_uniform_logits_sample_uniformly(torch_generator: torch.Generator):
    draws, n_classes = 10_000, 4
    sample = straight_through_sample(torch.zeros(draws, n_classes), torch_generator)
    frequencies = sample.mean(dim=0)
    p = 1 / n_classes
    sigma = math.sqrt(p * (1 - p) / draws)
    assert torch.all((frequencies - p).abs() < 3 * sigma)


def test_dominant_logit_sampled(torch_generator: torch.Generator):
    logits = torch.tensor([12.0, 0.0, 0.0, 0.0]).expand(10_000, 4)
    sample = straight_through_sample(logits, torch_generator)
    assert sample[:, 0].mean() > 0.999


def test_straight_through_gradient_is_softmax_gradient(torch_generator: torch.Generator):
    logits = torch.randn(5, 2, 4, dtype=torch.float64, requires_grad=True)
    reference = logits.detach().clone().requires_grad_(True)
    weights = torch.randn(5, 2, 4, dtype=torch.float64)
    (straight_through_sample(logits, torch_generator) * weights).sum().backward()
    (torch.softmax(reference, dim=-1) * weights).sum().backward()
    assert torch.allclose(logits.grad, reference.grad)


def test_kl_of_identical_distributions():
    logits = torch.randn(3, 2, 4, 5, dtype=torch.float64)
    assert torch.all(categorical_kl(logits, logits).abs() < 1e-9)
    assert torch.all(balanced_kl(logits, logits, 0.8, 0.0).abs() < 1e-9)
    assert torch.allclose(balanced_kl(logits, logits, 0.8, 0.1), torch.full((3, 2, 4), 0.1, dtype=torch.float64))


@pytest.mark.parametrize('kl_balance', (0.8, 0.5, 0.1))
def test_balanced_kl_gradients(kl_balance: float):
    posterior = torch.randn(3, 2, 4, dtype=torch.float64, requires_grad=True)
    prior = torch.randn(3, 2, 4, dtype=torch.float64, requires_grad=True)
    plain_posterior = posterior.detach().clone().requires_grad_(True)
    plain_prior = prior.detach().clone().requires_grad_(True)

    balanced = balanced_kl(posterior, prior, kl_balance, 0.0)
    plain = categorical_kl(plain_posterior, plain_prior)
    assert torch.allclose(balanced, plain)
    balanced.sum().backward()
    plain.sum().backward()
    assert torch.allclose(prior.grad, kl_balance * plain_prior.grad)
    assert torch.allclose(posterior.grad, (1 - kl_balance) * plain_posterior.grad)


def _outputs(obs_mean: torch.Tensor, reward_mean: torch.Tensor, continuation_logit: torch.Tensor,
             config: WorldModelConfig) -> SequenceOutputs:
    batch, length, n_agents = obs_mean.shape[:3]
    logits = torch.zeros(batch, length, n_agents, config.n_categoricals, config.n_classes)
    return SequenceOutputs(
        h=torch.zeros(batch, length, n_agents, config.h_dim),
        z=torch.zeros(batch, length, n_agents, config.z_dim),
        prior_logits=logits,
        posterior_logits=logits.clone(),
        obs_mean=obs_mean,
        reward_mean=reward_mean,
        continuation_logit=continuation_logit,
    )


def test_loss_hand_evaluated(tiny_world_model_config: WorldModelConfig):
    config = tiny_world_model_config
    outputs = _outputs(torch.zeros(1, 1, 1, 2), torch.zeros(1, 1), torch.full((1, 1), 30.0), config)
    total, components = world_model_loss(outputs, torch.ones(1, 1, 1, 2), torch.zeros(1, 1), torch.ones(1, 1), config)
    assert components['obs_nll'] == pytest.approx(1.0)
    assert components['reward_nll'] == pytest.approx(0.0)
    assert components['discount_nll'] == pytest.approx(0.0, abs=1e-9)
    assert components['kl'] == pytest.approx(0.0, abs=1e-9)
    assert components['kl_loss'] == pytest.approx(config.free_nats * config.n_categoricals)
    assert total.item() == pytest.approx(1.0 + config.beta * config.free_nats * config.n_categoricals, rel=1e-6)


def test_loss_perfect_reconstruction(tiny_world_model_config: WorldModelConfig):
    observations = torch.rand(2, 3, N_AGENTS, OBS_DIM)
    rewards = torch.randn(2, 3)
    outputs = _outputs(observations.clone(), rewards.clone(), torch.full((2, 3), 30.0), tiny_world_model_config)
    _, components = world_model_loss(outputs, observations, rewards, torch.ones(2, 3), tiny_world_model_config)
    assert components['obs_nll'] == 0.0
    assert components['reward_nll'] == 0.0


@pytest.mark.parametrize(('obs_shape', 'reward_shape'), (
    ((2, 4, N_AGENTS, OBS_DIM), (2, 3)),
    ((2, 3, N_AGENTS, OBS_DIM), (2, 4)),
    ((2, 3, N_AGENTS + 1, OBS_DIM), (2, 3)),
))
def test_loss_misaligned_targets(obs_shape: tuple, reward_shape: tuple, tiny_world_model_config: WorldModelConfig):
    outputs = _outputs(torch.zeros(2, 3, N_AGENTS, OBS_DIM), torch.zeros(2, 3), torch.zeros(2, 3),
                       tiny_world_model_config)
    with pytest.raises(InputError):
        world_model_loss(outputs, torch.zeros(obs_shape), torch.zeros(reward_shape), torch.ones(reward_shape),
                         tiny_world_model_config)


def _window(batch: int, length: int, seed: int = 0) -> tuple[torch.Tensor, torch.Tensor]:
    rng = np.random.default_rng(seed)
    observations = torch.as_tensor(rng.uniform(size=(batch, length + 1, N_AGENTS, OBS_DIM)), dtype=torch.float32)
    actions = torch.as_tensor(rng.integers(0, N_ACTIONS, size=(batch, length, N_AGENTS)))
    return observations, actions


def test_observe_sequence_single_step(model: WorldModel, torch_generator: torch.Generator):
    observations, actions = _window(2, 1)
    outputs = model.observe_sequence(observations, actions, torch_generator)
    assert len(outputs) == 1
    assert outputs.obs_mean.shape == (2, 1, N_AGENTS, OBS_DIM)
    assert outputs.reward_mean.shape == (2, 1)
    assert outputs.final.h.shape == (2, N_AGENTS, model.config.h_dim)


@pytest.mark.parametrize(('obs_length', 'action_length'), (
    (1, 0),
    (3, 3),
    (5, 3),
))
def test_observe_sequence_bad_lengths(obs_length: int, action_length: int, model: WorldModel):
    observations = torch.rand(2, obs_length, N_AGENTS, OBS_DIM)
    actions = torch.zeros(2, action_length, N_AGENTS, dtype=torch.long)
    with pytest.raises(InputError):
        model.observe_sequence(observations, actions)


def test_observe_sequence_deterministic(model: WorldModel):
    observations, actions = _window(3, 4)
    first = model.observe_sequence(observations, actions, torch.Generator().manual_seed(5))
    second = model.observe_sequence(observations, actions, torch.Generator().manual_seed(5))
    assert torch.equal(first.obs_mean, second.obs_mean)
    assert torch.equal(first.z, second.z)


@pytest.mark.parametrize('actions', (
    [[0, 3], [1, 1]],
    [[-1, 0], [1, 1]],
    [[0.0, 1.0], [1.0, 1.0]],
))
def test_imagine_step_invalid_action(actions: list, model: WorldModel, torch_generator: torch.Generator):
    latent = model.initial_state(2, torch_generator)
    with pytest.raises(InputError):
        model.imagine_step(latent, torch.tensor(actions), torch_generator)


def test_imagination_reproducible(model: WorldModel):
    def rollout(seed: int) -> torch.Tensor:
        generator = torch.Generator().manual_seed(seed)
        latent = model.initial_posterior(torch.rand(2, N_AGENTS, OBS_DIM, generator=generator), generator)
        observations = []
        for _ in range(4):
            actions = torch.randint(0, N_ACTIONS, (2, N_AGENTS), generator=generator)
            latent, reconstruction = model.imagine_step(latent, actions, generator)
            observations.append(reconstruction.obs_mean)
        return torch.stack(observations)

    assert torch.equal(rollout(11), rollout(11))


def test_gradient_matches_finite_differences(tiny_world_model_config: WorldModelConfig):
    config = dataclasses.replace(tiny_world_model_config, beta=0.5, free_nats=0.0)
    torch.manual_seed(0)
    model = WorldModel(config, N_AGENTS, 3, N_ACTIONS).double()
    sampler = ReplaySampler()
    model.sampler = sampler
    rng = np.random.default_rng(0)
    observations = torch.as_tensor(rng.uniform(size=(2, 4, N_AGENTS, 3)))
    actions = torch.as_tensor(rng.integers(0, N_ACTIONS, size=(2, 3, N_AGENTS)))
    rewards = torch.as_tensor(rng.normal(size=(2, 3)))
    continuations = torch.ones(2, 3, dtype=torch.float64)

    def loss() -> torch.Tensor:
        outputs = model.observe_sequence(observations, actions, torch.Generator().manual_seed(1))
        total, _ = world_model_loss(outputs, observations[:, 1:], rewards, continuations, config)
        return total

    loss()
    sampler.replay()
    loss().backward()

    eps = 1e-6
    checked = 0
    for name, parameter in model.named_parameters():
        flat = parameter.data.view(-1)
        grad = parameter.grad.view(-1)
        for index in rng.choice(flat.numel(), size=min(4, flat.numel()), replace=False):
            original = flat[index].item()
            with torch.no_grad():
                flat[index] = original + eps
                sampler.replay()
                up = loss().item()
                flat[index] = original - eps
                sampler.replay()
                down = loss().item()
                flat[index] = original
            numeric = (up - down) / (2 * eps)
            assert grad[index].item() == pytest.approx(numeric, rel=1e-4, abs=1e-7), name
            checked += 1
    assert checked >= 200


def _fit_switch_corridor(config: WorldModelConfig, n_episodes: int, epochs: int) -> tuple[WorldModel, list, list]:
    env = SwitchCorridor(0)
    policy = RandomPolicy(2, env.spec.n_actions)
    generator = torch.Generator().manual_seed(0)
    buffer = RealReplayBuffer(n_episodes)
    for episode_id in range(n_episodes):
        buffer.push_real(collect_episode(env, policy, SmoothingConfig(), 'sample', generator, episode_id))

    torch.manual_seed(0)
    model = WorldModel(config, 2, env.spec.obs_dim, env.spec.n_actions)
    optimizer = torch.optim.Adam(model.parameters(), lr=1e-3)
    rng = np.random.default_rng(0)
    window_len = min(8, buffer.longest_episode())
    losses, kls = [], []
    for _ in range(epochs):
        batch = buffer.sample_real_windows(16, window_len, rng)
        outputs = model.observe_sequence(batch.observations, batch.actions, generator)
        total, components = world_model_loss(
            outputs, batch.observations[:, 1:], batch.rewards_smoothed, batch.continuations, config)
        optimizer.zero_grad()
        total.backward()
        torch.nn.utils.clip_grad_norm_(model.parameters(), 10.0)
        optimizer.step()
        losses.append(total.item())
        kls.append(components['kl'])
    return model, losses, kls


SWITCH_CORRIDOR_MODEL = WorldModelConfig(
    h_dim=32, e_dim=32, g_dim=32, hidden_dim=64, n_categoricals=4, n_classes=8, n_heads=2)


@pytest.mark.slow
def test_overfit_frozen_buffer():
    config = SWITCH_CORRIDOR_MODEL
    _, losses, kls = _fit_switch_corridor(config, 20, 500)
    assert np.mean(losses[-10:]) < 0.2 * losses[0]
    # Nats per categorical block, summed over both agents
    assert np.mean(kls[-10:]) / (2 * config.n_categoricals) < 1.0


@pytest.mark.slow
def test_one_step_predictions_on_held_out_episodes():
    config = SWITCH_CORRIDOR_MODEL
    model, _, _ = _fit_switch_corridor(config, 80, 1500)
    env = SwitchCorridor(1000)
    policy = RandomPolicy(2, env.spec.n_actions)
    generator = torch.Generator().manual_seed(1000)
    accurate, total = 0, 0
    with torch.no_grad():
        for episode_id in range(20):
            episode = collect_episode(env, policy, SmoothingConfig(), 'sample', generator, episode_id)
            observations = torch.as_tensor(episode.observations, dtype=model.dtype).unsqueeze(0)
            actions = torch.as_tensor(episode.actions, dtype=torch.long).unsqueeze(0)
            outputs = model.observe_sequence(observations, actions, generator)
            for t in range(len(outputs)):
                prior = outputs.prior_logits[:, t]
                mode = torch.nn.functional.one_hot(prior.argmax(dim=-1), config.n_classes).to(model.dtype)
                predicted = model.reconstruct(outputs.h[:, t], mode.reshape(1, 2, config.z_dim)).obs_mean
                error = (predicted - observations[:, t + 1]).abs().max().item()
                accurate += error <= 0.1
                total += 1
    assert total > 0
    assert accurate / total >= 0.9
