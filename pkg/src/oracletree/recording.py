"""Ambient hook for run recorders.

Tree materialization and space streaming happen deep inside policy runs with
no natural place to thread a recorder argument, so the active recorder is
held in a context variable.  The trace module installs one around a run; all
hooks are no-ops when none is installed.
"""

from __future__ import annotations

from contextlib import contextmanager
from contextvars import ContextVar
from typing import Any, Iterator


_RECORDER: ContextVar[Any] = ContextVar("oracletree_recorder", default=None)


def current_recorder() -> Any:
    return _RECORDER.get()


@contextmanager
def recording(recorder: Any) -> Iterator[Any]:
    token = _RECORDER.set(recorder)
    try:
        yield recorder
    finally:
        _RECORDER.reset(token)
