#!/usr/bin/env python3
# coding=utf-8

import csv
import dataclasses
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from gawm import rollout
from gawm.checkpoint import save_checkpoint
from gawm.configuration import Configuration, PolicyConfig, RunConfig
from gawm.connector import RunConnector
from gawm.environments.environment_factory import make_env
from gawm.exceptions import BufferStateError, InputError
from gawm.policy import (
    MAPPOPolicy,
    RandomPolicy,
    compute_gae,
    normalize_advantages,
    ppo_actor_loss,
    value_loss,
)
from gawm.replay_buffer import (
    EpisodeTrajectory,
    PseudoReplayBuffer,
    PseudoSegment,
    RealReplayBuffer,
    SegmentBatch,
)
from gawm.trajectory_log import TrajectoryLogWriter
from gawm.world_model import WorldModel, world_model_loss

logger = logging.getLogger(__name__)

EVAL_SEED_OFFSET = 1_000_003

METRICS_HEADER = (
    'outer_episode',
    'env_steps',
    'wm_obs_nll',
    'wm_reward_nll',
    'wm_discount_nll',
    'wm_kl',
    'actor_loss',
    'value_loss',
    'eval_success_rate',
)


@dataclass
class OuterRecord:
    outer_episode: int
    env_steps: int
    wm_obs_nll: float
    wm_reward_nll: float
    wm_discount_nll: float
    wm_kl: float
    actor_loss: float
    value_loss: float
    eval_success_rate: Optional[float] = None
    wall_clock: float = 0.0

    def csv_row(self) -> list[str]:
        values = [getattr(self, name) for name in METRICS_HEADER]
        return ['' if value is None else repr(value) for value in values]


@dataclass
class TrainReport:
    records: list[OuterRecord] = field(default_factory=list)
    checkpoints: list[Path] = field(default_factory=list)

    @property
    def env_steps(self) -> int:
        return self.records[-1].env_steps if self.records else 0

    @property
    def final_success_rate(self) -> Optional[float]:
        evaluated = [r.eval_success_rate for r in self.records if r.eval_success_rate is not None]
        return evaluated[-1] if evaluated else None


def _mean_records(records: list[dict]) -> dict[str, float]:
    if not records:
        return {}
    return {key: float(np.mean([r[key] for r in records])) for key in records[0]}


def policy_update(
        policy: MAPPOPolicy,
        optimizer: torch.optim.Optimizer,
        batch: SegmentBatch,
        config: PolicyConfig,
        grad_clip_norm: float,
) -> dict[str, float]:
    """One clipped policy-gradient step on a collated batch of imagined segments"""
    if any(source != 'pseudo' for source in batch.sources):
        raise InputError('Policy updates only accept imagined segments')
    observations = torch.as_tensor(batch.observations)
    actions = torch.as_tensor(batch.actions)
    mask = torch.as_tensor(batch.mask)

    with torch.no_grad():
        values = policy.evaluate_value(observations, target=True)
        estimates = compute_gae(
            torch.as_tensor(batch.rewards), values, torch.as_tensor(batch.continuations),
            config.gamma, config.gae_lambda,
        )
        advantages = normalize_advantages(estimates.advantages, mask)

    new_log_probs, entropy = policy.evaluate_actions(observations[:, :-1], actions)
    agent_mask = mask.unsqueeze(-1).expand_as(new_log_probs)
    actor_loss = ppo_actor_loss(
        new_log_probs,
        torch.as_tensor(batch.log_probs),
        advantages.unsqueeze(-1).expand_as(new_log_probs),
        config.clip_epsilon,
        entropy,
        config.entropy_coef,
        agent_mask,
    )
    critic_loss = value_loss(policy.evaluate_value(observations[:, :-1]), estimates.returns, mask)
    loss = actor_loss + config.value_coef * critic_loss

    optimizer.zero_grad()
    loss.backward()
    torch.nn.utils.clip_grad_norm_(policy.online_parameters(), grad_clip_norm)
    optimizer.step()
    return {'actor_loss': actor_loss.item(), 'value_loss': critic_loss.item()}


class TrainingSession:
    """Alternates real collection, world model fitting, imagination and policy updates"""

    def __init__(self, config: RunConfig, output_directory: Optional[Path] = None):
        self.config = config
        self.output_directory = Path(output_directory) if output_directory is not None else None
        seed = config.environment.seed
        torch.manual_seed(seed)
        self.env = make_env(config.environment.name, seed, config.environment)
        spec = self.env.spec
        self.world_model = WorldModel(config.world_model, spec.n_agents, spec.obs_dim, spec.n_actions)
        self.policy = MAPPOPolicy(config.policy, spec.n_agents, spec.obs_dim, spec.n_actions)
        self.random_policy = RandomPolicy(spec.n_agents, spec.n_actions)
        self.wm_optimizer = torch.optim.Adam(self.world_model.parameters(), lr=config.trainer.wm_learning_rate)
        self.policy_optimizer = torch.optim.Adam(
            self.policy.online_parameters(), lr=config.trainer.policy_learning_rate)
        self.real_buffer = RealReplayBuffer(config.buffers.real_capacity)
        self.pseudo_buffer = PseudoReplayBuffer(config.buffers.pseudo_capacity)
        self.generator = torch.Generator().manual_seed(seed)
        self.rng = np.random.default_rng(seed)
        self.env_steps = 0
        self.episodes_collected = 0
        self.segments_generated = 0
        self.report = TrainReport()

    @property
    def trajectory_log_path(self) -> Optional[Path]:
        if self.output_directory is None:
            return None
        return Path(self.output_directory, 'trajectories.jsonl')

    @property
    def metrics_path(self) -> Optional[Path]:
        if self.output_directory is None:
            return None
        return Path(self.output_directory, 'metrics.csv')

    def _store_episode(self, episode: EpisodeTrajectory):
        self.real_buffer.push_real(episode)
        self.env_steps += len(episode)
        self.episodes_collected += 1
        if self.trajectory_log_path is not None:
            with TrajectoryLogWriter(self.trajectory_log_path) as writer:
                writer.write_episode(episode)

    def collect_real(self, random_actions: bool = False) -> list[EpisodeTrajectory]:
        acting = self.random_policy if random_actions else self.policy
        workers = self.config.trainer.parallel_workers
        if workers > 1:
            seeds = [int(s) for s in self.rng.integers(0, 2 ** 31 - 1, size=workers)]
            episodes = rollout.collect_parallel(
                self.config.environment, acting, self.config.reward_smoothing, seeds, workers,
                first_episode_id=self.episodes_collected)
        else:
            episodes = [rollout.collect_episode(
                self.env, acting, self.config.reward_smoothing, 'sample', self.generator,
                episode_id=self.episodes_collected)]
        for episode in episodes:
            self._store_episode(episode)
        return episodes

    def train_world_model_phase(self, epochs: Optional[int] = None) -> list[dict]:
        if not self.real_buffer:
            raise BufferStateError('World model training needs at least one real episode')
        trainer_config = self.config.trainer
        epochs = trainer_config.e_m if epochs is None else epochs
        window_len = min(trainer_config.window_len, self.real_buffer.longest_episode())
        self.world_model.train()
        records = []
        for epoch in range(epochs):
            batch = self.real_buffer.sample_real_windows(trainer_config.wm_batch_size, window_len, self.rng)
            outputs = self.world_model.observe_sequence(batch.observations, batch.actions, self.generator)
            total, components = world_model_loss(
                outputs,
                batch.observations[:, 1:],
                batch.rewards_smoothed,
                batch.continuations,
                self.config.world_model,
            )
            self.wm_optimizer.zero_grad()
            total.backward()
            torch.nn.utils.clip_grad_norm_(self.world_model.parameters(), trainer_config.grad_clip_norm)
            self.wm_optimizer.step()
            components['total'] = total.item()
            records.append(components)
            logger.log(9, f'World model epoch {epoch + 1}/{epochs}: {components}')
        return records

    @torch.no_grad()
    def generate_imagination(self, count: Optional[int] = None, k: Optional[int] = None) -> list[PseudoSegment]:
        count = self.config.trainer.imagination_count if count is None else count
        k = self.config.trainer.k if k is None else k
        seeds, origins = self.real_buffer.sample_seed_observations(count, self.rng)
        self.world_model.eval()

        observation = torch.as_tensor(seeds)
        latent = self.world_model.initial_posterior(observation, self.generator)
        actor_state = self.policy.initial_state(count)
        observations, actions, log_probs, rewards, continuations = [observation], [], [], [], []
        for _ in range(k):
            action, log_prob, actor_state = self.policy.act(observation, actor_state, 'sample', self.generator)
            latent, reconstruction = self.world_model.imagine_step(latent, action, self.generator)
            observation = reconstruction.obs_mean.clamp(0.0, 1.0).float()
            observations.append(observation)
            actions.append(action)
            log_probs.append(log_prob)
            rewards.append(reconstruction.reward_mean.float())
            continuations.append(torch.bernoulli(reconstruction.continuation_prob.float(), generator=self.generator))

        observations = torch.stack(observations, dim=1).numpy()
        actions = torch.stack(actions, dim=1).numpy()
        log_probs = torch.stack(log_probs, dim=1).float().numpy()
        rewards = torch.stack(rewards, dim=1).numpy()
        continuations = torch.stack(continuations, dim=1).numpy()

        segments = []
        for b in range(count):
            terminal = np.flatnonzero(continuations[b] == 0)
            length = int(terminal[0]) + 1 if terminal.size else k
            segment = PseudoSegment(
                observations=observations[b, :length + 1],
                actions=actions[b, :length],
                log_probs=log_probs[b, :length],
                rewards=rewards[b, :length],
                continuations=continuations[b, :length],
                origin=origins[b],
            )
            self.pseudo_buffer.push_pseudo(segment)
            segments.append(segment)

        if self.config.trainer.log_pseudo_trajectories and self.trajectory_log_path is not None:
            with TrajectoryLogWriter(self.trajectory_log_path) as writer:
                for i, segment in enumerate(segments):
                    writer.write_segment(segment, self.segments_generated + i)
        self.segments_generated += len(segments)
        logger.log(9, f'Imagined {len(segments)} segments of mean length {np.mean([len(s) for s in segments]):.2f}')
        return segments

    def train_policy_phase(self, epochs: Optional[int] = None) -> list[dict]:
        trainer_config = self.config.trainer
        epochs = trainer_config.e_sample if epochs is None else epochs
        self.policy.train()
        records = []
        for epoch in range(epochs):
            segments = self.pseudo_buffer.sample_pseudo(trainer_config.policy_batch_size, self.rng)
            batch = PseudoReplayBuffer.collate(segments)
            losses = policy_update(
                self.policy, self.policy_optimizer, batch, self.config.policy, trainer_config.grad_clip_norm)
            records.append(losses)
            logger.log(9, f'Policy epoch {epoch + 1}/{epochs}: {losses}')
        self.policy.soft_update()
        return records

    def evaluate(self, episodes: Optional[int] = None) -> float:
        episodes = self.config.trainer.eval_episodes if episodes is None else episodes
        eval_env = make_env(
            self.config.environment.name, self.config.environment.seed + EVAL_SEED_OFFSET, self.config.environment)
        self.policy.eval()
        return float(rollout.evaluate_policy(eval_env, self.policy, episodes, 'greedy').mean())

    def save(self, name: str, outer_episode: int) -> Optional[Path]:
        if self.output_directory is None:
            return None
        path = Path(self.output_directory, f'checkpoint_{name}.pt')
        save_checkpoint(path, self.config, self.world_model, self.policy, outer_episode, self.env_steps)
        self.report.checkpoints.append(path)
        return path

    def _append_metrics(self, record: OuterRecord):
        if self.metrics_path is None:
            return
        new_file = not self.metrics_path.exists()
        with open(self.metrics_path, 'a', newline='', encoding='utf-8') as file:
            writer = csv.writer(file)
            if new_file:
                writer.writerow(METRICS_HEADER)
            writer.writerow(record.csv_row())

    def run(self) -> TrainReport:
        trainer_config = self.config.trainer
        if self.metrics_path is not None and self.metrics_path.exists():
            self.metrics_path.unlink()
        if self.trajectory_log_path is not None and self.trajectory_log_path.exists():
            self.trajectory_log_path.unlink()

        while self.episodes_collected < trainer_config.warmup_episodes:
            self.collect_real(random_actions=True)
        logger.info(f'Warm-up finished with {len(self.real_buffer)} episodes and {self.env_steps} steps')

        for outer in range(1, trainer_config.n_outer + 1):
            start = time.perf_counter()
            self.collect_real()
            wm_summary = _mean_records(self.train_world_model_phase())

            self.pseudo_buffer.clear()
            policy_records = []
            for _ in range(trainer_config.e_pi):
                self.generate_imagination()
                policy_records.extend(self.train_policy_phase())
            policy_summary = _mean_records(policy_records)

            success_rate = None
            if outer % trainer_config.eval_every == 0 or outer == trainer_config.n_outer:
                success_rate = self.evaluate()
            record = OuterRecord(
                outer_episode=outer,
                env_steps=self.env_steps,
                wm_obs_nll=wm_summary['obs_nll'],
                wm_reward_nll=wm_summary['reward_nll'],
                wm_discount_nll=wm_summary['discount_nll'],
                wm_kl=wm_summary['kl'],
                actor_loss=policy_summary['actor_loss'],
                value_loss=policy_summary['value_loss'],
                eval_success_rate=success_rate,
                wall_clock=time.perf_counter() - start,
            )
            self.report.records.append(record)
            self._append_metrics(record)
            if outer % trainer_config.checkpoint_every == 0:
                self.save(str(outer), outer)

            message = (f'Outer episode {outer}/{trainer_config.n_outer}: {self.env_steps} env steps, '
                       f'world model loss {wm_summary["total"]:.4f}, actor loss {policy_summary["actor_loss"]:.4f}')
            if success_rate is not None:
                message += f', evaluation success rate {success_rate:.3f}'
            logger.info(message)

        self.save('final', trainer_config.n_outer)
        return self.report


def run_training(config: RunConfig, output_directory: Optional[Path] = None) -> TrainReport:
    return TrainingSession(config, output_directory).run()


class GAWMTrainer(RunConnector):
    def __init__(self, args: Configuration):
        super(GAWMTrainer, self).__init__(args)

    def run(self) -> TrainReport:
        logger.debug(f'Training configuration: {dataclasses.asdict(self.config.trainer)}')
        report = run_training(self.config, self.output_directory)
        logger.info(
            f'Training finished after {report.env_steps} real environment steps; '
            f'final evaluation success rate {report.final_success_rate}')
        return report
