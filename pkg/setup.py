#!/usr/bin/env python3
# encoding=utf-8

from setuptools import setup

setup(data_files=[('config', ['gawm/default_config.cfg'])], python_requires='>=3.9.0')
