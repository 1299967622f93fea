# debug.py
# Part of surrogate_kit
# Copyright 2024 surrogate_kit contributors.  Licensed under GNU Affero GPL v.3 or later.
"""Debugging output.

debug_print()     -- print to stderr if the level is enabled
debug_enabled()   -- check first when the message is expensive to build
set_debug_level()
get_debug_level()
debug_level()     -- context manager, for a temporary level
"""

import sys
from contextlib import contextmanager

# Global variable controlling debugging status
# 0 means silent.
# 1 is normal: one line per iteration, plus warnings.
# 2 and 3 show the internals of every step.
debug = 1


def set_debug_level(level: int):
    """Set debug level for surrogate_kit to a number (1 is default)"""
    global debug
    debug = level


def get_debug_level() -> int:
    return debug


def debug_enabled(level: int) -> bool:
    return debug >= level


@contextmanager
def debug_level(level: int):
    """Run a block at another debug level, restoring the old one after."""
    previous = debug
    set_debug_level(level)
    try:
        yield
    finally:
        set_debug_level(previous)


def debug_print(level: int, *args, **kwargs):
    """Print debugging output for surrogate_kit.

    Goes to stderr; stdout carries the command output only.
    """
    if debug >= level:
        kwargs.setdefault("file", sys.stderr)
        print(*args, **kwargs)
