#!/usr/bin/env python3
# coding=utf-8

import configparser
import csv
import re
from pathlib import Path

import pytest
from click.testing import CliRunner

from gawm.__main__ import cli
from tests.builders import create_basic_args_for_runner


@pytest.mark.training
@pytest.mark.parametrize('test_args', (
    ['--set', 'trainer.k=4'],
    ['--set', 'trainer.k=4', '--seed', '5'],
))
def test_cli_train(test_args: list[str], tmp_path: Path):
    runner = CliRunner()
    test_args = create_basic_args_for_runner('train', test_args, tmp_path)
    result = runner.invoke(cli, test_args)
    assert result.exit_code == 0
    assert re.search(r'Training finished after \d+ real environment steps', result.output)

    output = Path(tmp_path, 'output')
    with open(Path(output, 'metrics.csv'), newline='', encoding='utf-8') as file:
        rows = list(csv.DictReader(file))
    assert len(rows) >= 2
    resolved = configparser.ConfigParser()
    resolved.read(Path(output, 'resolved_config.cfg'))
    assert resolved.getint('trainer', 'k') == 4
    if '--seed' in test_args:
        assert resolved.getint('environment', 'seed') == 5
    assert Path(output, 'checkpoint_final.pt').is_file()
    assert Path(output, 'trajectories.jsonl').is_file()


@pytest.mark.training
@pytest.mark.parametrize('test_args', (
    ['--set', 'world_model.obs_fusion_enabled=false'],
    ['--set', 'world_model.obs_fusion_enabled=false', '--set', 'reward_smoothing.enabled=false'],
))
def test_cli_train_without_obs_fusion(test_args: list[str], tmp_path: Path):
    runner = CliRunner()
    test_args = create_basic_args_for_runner('train', test_args, tmp_path)
    result = runner.invoke(cli, test_args)
    assert result.exit_code == 0
    resolved = configparser.ConfigParser()
    resolved.read(Path(tmp_path, 'output', 'resolved_config.cfg'))
    assert resolved.getboolean('world_model', 'obs_fusion_enabled') is False
    assert Path(tmp_path, 'output', 'checkpoint_final.pt').is_file()


@pytest.mark.parametrize('test_args', (
    ['--config', 'definitely_missing.cfg'],
    ['--set', 'trainer.k'],
    ['--set', 'trainer.n_outer=0'],
    ['--set', 'environment.name=no_such_env'],
))
def test_cli_train_bad_configuration(test_args: list[str], tmp_path: Path):
    runner = CliRunner()
    test_args = create_basic_args_for_runner('train', test_args, tmp_path)
    result = runner.invoke(cli, test_args)
    assert result.exit_code == 2


@pytest.mark.training
@pytest.mark.parametrize('test_args', (
    ['--episodes', '3'],
    ['--episodes', '2', '--policy', 'greedy'],
))
def test_cli_eval_checkpoint(test_args: list[str], trained_run: Path, tmp_path: Path):
    runner = CliRunner()
    test_args = create_basic_args_for_runner(
        'eval', ['-c', str(Path(trained_run, 'checkpoint_final.pt'))] + test_args, tmp_path)
    result = runner.invoke(cli, test_args)
    assert result.exit_code == 0
    assert re.search(r'success rate \d\.\d{4} ± \d\.\d{4} over \d episodes', result.output)


def test_cli_eval_random(tmp_path: Path):
    runner = CliRunner()
    test_args = create_basic_args_for_runner('eval', ['--policy', 'random', '--episodes', '4'], tmp_path)
    result = runner.invoke(cli, test_args)
    assert result.exit_code == 0
    assert re.search(r'success rate \d\.\d{4} ± \d\.\d{4} over 4 episodes', result.output)


@pytest.mark.parametrize('test_args', (
    ['--episodes', '0'],
    ['--policy', 'clever'],
))
def test_cli_eval_bad_arguments(test_args: list[str], tmp_path: Path):
    runner = CliRunner()
    test_args = create_basic_args_for_runner('eval', ['--policy', 'random'] + test_args, tmp_path)
    result = runner.invoke(cli, test_args)
    assert result.exit_code == 2


def test_cli_eval_without_checkpoint(tmp_path: Path):
    runner = CliRunner()
    result = runner.invoke(cli, create_basic_args_for_runner('eval', [], tmp_path))
    assert result.exit_code == 2


@pytest.mark.training
@pytest.mark.parametrize('test_args', (
    ['--set', 'world_model.h_dim=16'],
    ['--set', 'environment.name=coop_capture'],
))
def test_cli_eval_incompatible_checkpoint(test_args: list[str], trained_run: Path, tmp_path: Path):
    runner = CliRunner()
    test_args = create_basic_args_for_runner(
        'eval', ['-c', str(Path(trained_run, 'checkpoint_final.pt'))] + test_args, tmp_path)
    result = runner.invoke(cli, test_args)
    assert result.exit_code == 3
    assert re.search(r'incompatible', result.output)


def test_cli_eval_missing_checkpoint(tmp_path: Path):
    runner = CliRunner()
    test_args = create_basic_args_for_runner('eval', ['-c', str(Path(tmp_path, 'missing.pt'))], tmp_path)
    result = runner.invoke(cli, test_args)
    assert result.exit_code == 3


@pytest.mark.training
def test_cli_replay(trained_run: Path, tmp_path: Path):
    runner = CliRunner()
    test_args = create_basic_args_for_runner('replay', [str(Path(trained_run, 'trajectories.jsonl'))], tmp_path)
    result = runner.invoke(cli, test_args)
    assert result.exit_code == 0
    assert re.search(r'real: 4 trajectories, \d+ steps', result.output)
    assert re.search(r'pseudo: 0 trajectories', result.output)


def test_cli_replay_missing_log(tmp_path: Path):
    runner = CliRunner()
    test_args = create_basic_args_for_runner('replay', [str(Path(tmp_path, 'missing.jsonl'))], tmp_path)
    result = runner.invoke(cli, test_args)
    assert result.exit_code == 2
