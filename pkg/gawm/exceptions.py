#!/usr/bin/env python3
# coding=utf-8

class GAWMException(Exception):
    pass


class ConfigurationError(GAWMException):
    pass


class InputError(GAWMException):
    pass


class ShapeError(InputError):
    pass


class NumericError(GAWMException):
    pass


class LifecycleError(GAWMException):
    pass


class BufferStateError(GAWMException):
    pass


class CheckpointError(GAWMException):
    pass
