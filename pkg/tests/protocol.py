"""Reference consumer and pairing checker for the stream protocol.

This is the independent oracle used across the stream tests: it drives a
stream to completion recording every consumer-visible message, and verifies
the skipped-index pairing discipline from first principles (counting barrier
messages, not trusting any library ledger).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from oracletree.budget import Budget
from oracletree.streams import Barrier, Done, Spent, Stream, Yield


@dataclass
class LogEntry:
    kind: str                     # "yield" | "barrier" | "spent" | "done"
    value: object = None
    estimate: Budget | None = None
    granted: bool | None = None
    actual: Budget | None = None
    skipped: int | None = None


@dataclass
class RunLog:
    entries: list[LogEntry] = field(default_factory=list)

    @property
    def values(self) -> list:
        return [e.value for e in self.entries if e.kind == "yield"]

    @property
    def total_spent(self) -> Budget:
        total = Budget.zero()
        for e in self.entries:
            if e.kind == "spent":
                total = total + e.actual
        return total

    def barriers(self) -> list[LogEntry]:
        return [e for e in self.entries if e.kind == "barrier"]


def drive(
    stream: Stream,
    decide: Callable[[Budget, RunLog], bool] | None = None,
    max_steps: int = 100_000,
) -> RunLog:
    """Run a stream to completion, answering barriers via ``decide``."""
    log = RunLog()
    cur = stream
    for _ in range(max_steps):
        msg = cur.step()
        if isinstance(msg, Done):
            log.entries.append(LogEntry("done"))
            return log
        if isinstance(msg, Yield):
            log.entries.append(LogEntry("yield", value=msg.value))
            cur = msg.rest
        elif isinstance(msg, Barrier):
            allow = True if decide is None else decide(msg.estimate, log)
            log.entries.append(LogEntry("barrier", estimate=msg.estimate, granted=allow))
            cur = msg.resume(allow)
        elif isinstance(msg, Spent):
            log.entries.append(
                LogEntry("spent", actual=msg.actual, skipped=msg.skipped)
            )
            cur = msg.rest
        else:
            raise AssertionError(f"unknown message {msg!r}")
    raise AssertionError("stream did not terminate within the step bound")


def check_pairing(log: RunLog) -> dict[int, int]:
    """Assert the skipped-index matching is a total bijection.

    Every ``Spent`` must name, by counting back ``skipped`` barrier messages,
    a distinct earlier barrier; denied barriers may only be closed by a zero
    report; and at the end every barrier must have been closed.  Returns the
    mapping from spent entry index to barrier entry index.
    """
    barrier_positions: list[int] = []
    matched: dict[int, bool] = {}
    mapping: dict[int, int] = {}
    for pos, entry in enumerate(log.entries):
        if entry.kind == "barrier":
            barrier_positions.append(pos)
        elif entry.kind == "spent":
            idx = len(barrier_positions) - 1 - entry.skipped
            assert 0 <= idx < len(barrier_positions), (
                f"spent at {pos} skips {entry.skipped} of "
                f"{len(barrier_positions)} barriers"
            )
            bpos = barrier_positions[idx]
            assert bpos not in matched, f"barrier at {bpos} closed twice"
            matched[bpos] = True
            mapping[pos] = bpos
            barrier = log.entries[bpos]
            if not barrier.granted:
                assert entry.actual == Budget.zero(), (
                    f"denied barrier at {bpos} closed with nonzero spend"
                )
    unclosed = [p for p in barrier_positions if p not in matched]
    assert not unclosed, f"barriers never closed: {unclosed}"
    return mapping
