"""Lightweight op-level tracing used by the analytic cost profiler.

Functional ops emit one event per call when a trace is active.  Modules
push their dotted name onto the scope stack so events can be grouped
into per-layer report rows.
"""

from __future__ import annotations

import contextlib

_active = None


class OpTrace:
    """Collects (scope, kind, info) events during a traced forward pass."""

    def __init__(self):
        self.events = []
        self._scopes = []

    def scope_name(self):
        return ".".join(self._scopes) if self._scopes else "(top)"

    def emit(self, op, **info):
        self.events.append((self.scope_name(), op, info))


def emit(op, **info):
    if _active is not None:
        _active.emit(op, **info)


def is_tracing():
    return _active is not None


@contextlib.contextmanager
def trace():
    global _active
    prev = _active
    _active = OpTrace()
    try:
        yield _active
    finally:
        _active = prev


@contextlib.contextmanager
def scope(name):
    if _active is None:
        yield
        return
    _active._scopes.append(name)
    try:
        yield
    finally:
        _active._scopes.pop()
