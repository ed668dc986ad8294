#!/usr/bin/env python3
# coding=utf-8

import logging
from pathlib import Path

import pytest
from click.testing import CliRunner

from gawm.__main__ import cli
from tests.builders import create_basic_args_for_runner


def _detach_new_handlers(before: list[logging.Handler]):
    root = logging.getLogger()
    for handler in root.handlers[:]:
        if handler not in before:
            handler.close()
            root.removeHandler(handler)


@pytest.fixture(autouse=True)
def detach_log_handlers():
    before = list(logging.getLogger().handlers)
    yield
    _detach_new_handlers(before)


@pytest.fixture(scope='module')
def trained_run(tmp_path_factory: pytest.TempPathFactory) -> Path:
    run_path = tmp_path_factory.mktemp('trained')
    before = list(logging.getLogger().handlers)
    result = CliRunner().invoke(cli, create_basic_args_for_runner('train', [], run_path))
    _detach_new_handlers(before)
    assert result.exit_code == 0
    return Path(run_path, 'output')
