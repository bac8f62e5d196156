"""Resource-aware search streams and their combinator language.

A stream is a suspended computation producing one message at a time:

* ``Done`` — the stream has terminated;
* ``Yield`` — a value;
* ``Barrier`` — a request for permission to spend up to an estimated budget,
  which the consumer must answer (grant or deny) before pulling further;
* ``Spent`` — a report of actual consumption, closing an earlier barrier.

Every barrier is eventually closed by exactly one ``Spent``: a granted
barrier by the operation's actual cost, a denied one by a zero report.  When
producers run concurrently under ``parallel``, a ``Spent`` may not follow its
own barrier immediately; its ``skipped`` field counts how many barrier
messages were emitted in between, which is how consumers pair them up.

Streams are single-consumer and pull-driven.  All budget accounting in this
module is confined to the combinator that owns it.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Any, Callable, Iterable

from .budget import Budget


class ProtocolError(Exception):
    """A stream violated the message protocol (unmatched barrier, etc.)."""


class StreamRunError(Exception):
    """A producer effect failed while a stream was being collected."""

    def __init__(self, values: list, spent: Budget, cause: BaseException):
        super().__init__(f"stream failed after {len(values)} values: {cause}")
        self.values = values
        self.spent = spent
        self.cause = cause


@dataclass
class Done:
    pass


@dataclass
class Yield:
    value: Any
    rest: "Stream"


@dataclass
class Barrier:
    estimate: Budget
    resume: Callable[[bool], "Stream"]


@dataclass
class Spent:
    actual: Budget
    skipped: int
    rest: "Stream"


Msg = Done | Yield | Barrier | Spent


class Stream:
    """A suspended producer of stream messages."""

    __slots__ = ("_step",)

    def __init__(self, step: Callable[[], Msg]):
        self._step = step

    def step(self) -> Msg:
        return self._step()

    # Combinator methods, for fluent composition.
    def bind(self, f: Callable[[Any], "Stream"]) -> "Stream":
        return bind(self, f)

    def map(self, f: Callable[[Any], Any]) -> "Stream":
        return bind(self, lambda v: singleton(f(v)))

    def concat(self, other: "Stream") -> "Stream":
        return concat(self, other)


def empty() -> Stream:
    return Stream(lambda: Done())


def singleton(value: Any) -> Stream:
    return Stream(lambda: Yield(value, empty()))


def of_iterable(values: Iterable[Any]) -> Stream:
    items = list(values)

    def at(i: int) -> Stream:
        def step() -> Msg:
            if i >= len(items):
                return Done()
            return Yield(items[i], at(i + 1))

        return Stream(step)

    return at(0)


def deferred(make: Callable[[], Stream]) -> Stream:
    """Delay stream construction until the first pull."""
    return Stream(lambda: make().step())


def effect(op: Callable[[], Any]) -> Stream:
    """Run a cost-free effect at pull time and yield its result."""
    return Stream(lambda: Yield(op(), empty()))


class SpendFailure(Exception):
    """Raised by a spending operation that consumed resources before failing."""

    def __init__(self, message: str, consumed: Budget | None = None):
        super().__init__(message)
        self.consumed = consumed or Budget.zero()


def spend(
    estimate: Budget,
    op: Callable[[], tuple[Any, Budget]],
    on_failure: Callable[[BaseException, Budget], None] | None = None,
) -> Stream:
    """Ask permission for ``estimate``, then run ``op`` and report its cost.

    Granted: ``Barrier, Spent(actual), Yield(value), Done``.  Denied:
    ``Barrier, Spent(zero), Done``.  If ``op`` raises, whatever it reported
    as consumed (zero unless it raised :class:`SpendFailure`) is still
    accounted for and the stream ends without a value.
    """

    def step() -> Msg:
        def resume(allow: bool) -> Stream:
            if not allow:
                return Stream(lambda: Spent(Budget.zero(), 0, empty()))

            def run() -> Msg:
                try:
                    value, actual = op()
                except BaseException as exc:  # noqa: BLE001 - accounted and surfaced via hook
                    consumed = exc.consumed if isinstance(exc, SpendFailure) else Budget.zero()
                    if on_failure is not None:
                        on_failure(exc, consumed)
                    return Spent(consumed, 0, empty())
                return Spent(actual, 0, singleton(value))

            return Stream(run)

        return Barrier(estimate, resume)

    return Stream(step)


def concat(a: Stream, b: Stream) -> Stream:
    def step() -> Msg:
        msg = a.step()
        if isinstance(msg, Done):
            return b.step()
        if isinstance(msg, Yield):
            return Yield(msg.value, concat(msg.rest, b))
        if isinstance(msg, Barrier):
            resume = msg.resume
            return Barrier(msg.estimate, lambda allow: concat(resume(allow), b))
        if isinstance(msg, Spent):
            return Spent(msg.actual, msg.skipped, concat(msg.rest, b))
        raise ProtocolError(f"unknown message {msg!r}")

    return Stream(step)


def bind(s: Stream, f: Callable[[Any], Stream]) -> Stream:
    """Splice ``f(value)`` in place of each yielded value of ``s``."""

    def step() -> Msg:
        msg = s.step()
        if isinstance(msg, Done):
            return Done()
        if isinstance(msg, Yield):
            return concat(f(msg.value), bind(msg.rest, f)).step()
        if isinstance(msg, Barrier):
            resume = msg.resume
            return Barrier(msg.estimate, lambda allow: bind(resume(allow), f))
        if isinstance(msg, Spent):
            return Spent(msg.actual, msg.skipped, bind(msg.rest, f))
        raise ProtocolError(f"unknown message {msg!r}")

    return Stream(step)


def take(n: int, s: Stream) -> Stream:
    """Pass through until ``n`` values, then wind down.

    After the cutoff no new spending is granted and no values are forwarded,
    but the stream keeps being pulled until every already-opened barrier has
    been settled, so accounting messages are preserved.
    """
    if n < 0:
        raise ValueError("take requires a nonnegative count")

    state = {"yielded": 0, "open": 0, "cur": s}

    def facade() -> Stream:
        return Stream(step)

    def step() -> Msg:
        while True:
            cutoff = state["yielded"] >= n
            if cutoff and state["open"] == 0:
                return Done()
            msg = state["cur"].step()
            if isinstance(msg, Done):
                return Done()
            if isinstance(msg, Yield):
                state["cur"] = msg.rest
                if cutoff:
                    continue
                state["yielded"] += 1
                return Yield(msg.value, facade())
            if isinstance(msg, Barrier):
                resume = msg.resume

                def answer(allow: bool, resume=resume) -> Stream:
                    granted = allow and state["yielded"] < n
                    state["open"] += 1
                    state["cur"] = resume(granted)
                    return facade()

                return Barrier(msg.estimate, answer)
            if isinstance(msg, Spent):
                state["open"] -= 1
                state["cur"] = msg.rest
                return Spent(msg.actual, msg.skipped, facade())
            raise ProtocolError(f"unknown message {msg!r}")

    return facade()


def with_budget(limit: Budget, s: Stream) -> Stream:
    """Deny any spending request that could push total consumption past ``limit``.

    Keeps a running total of settled spending plus a pending ledger of
    reserved estimates, keyed by how many barriers have been seen since each
    entry was opened (the same indexing scheme ``skipped`` uses).
    """

    state = {"spent": Budget.zero(), "pending": [], "cur": s}  # pending: [age, reserved]

    def facade() -> Stream:
        return Stream(step)

    def step() -> Msg:
        msg = state["cur"].step()
        if isinstance(msg, Done):
            return Done()
        if isinstance(msg, Yield):
            state["cur"] = msg.rest
            return Yield(msg.value, facade())
        if isinstance(msg, Barrier):
            estimate, resume = msg.estimate, msg.resume

            def answer(allow: bool) -> Stream:
                reserved_total = state["spent"] + estimate
                for _, r in state["pending"]:
                    reserved_total = reserved_total + r
                granted = allow and reserved_total <= limit
                reserved = estimate if granted else Budget.zero()
                state["pending"] = [[0, reserved]] + [
                    [age + 1, r] for age, r in state["pending"]
                ]
                state["cur"] = resume(granted)
                return facade()

            return Barrier(estimate, answer)
        if isinstance(msg, Spent):
            state["spent"] = state["spent"] + msg.actual
            entry = next((e for e in state["pending"] if e[0] == msg.skipped), None)
            if entry is None:
                raise ProtocolError(
                    f"Spent skipping {msg.skipped} barriers matches no open barrier"
                )
            state["pending"].remove(entry)
            state["cur"] = msg.rest
            return Spent(msg.actual, msg.skipped, facade())
        raise ProtocolError(f"unknown message {msg!r}")

    return facade()


# ---------------------------------------------------------------------------
# Parallel merge
# ---------------------------------------------------------------------------

class _BranchState:
    __slots__ = ("stream", "pending", "n_barriers", "positions", "deferred", "done")

    def __init__(self, stream: Stream):
        self.stream: Stream | None = stream
        self.pending = 0           # answered barriers awaiting their Spent
        self.n_barriers = 0        # barriers seen from this branch, branch order
        self.positions: list[int] = []  # output position of each branch barrier
        self.deferred = None       # (estimate, resume, branch_barrier_index)
        self.done = False


class _ParallelMerge:
    """Interleaves two streams, keeping barrier/spent pairing coherent.

    A denied barrier is not answered immediately when the other branch has
    spending in flight: the merge closes it with a zero ``Spent``, waits for
    the other branch's reports, then asks the consumer again with a fresh
    barrier (the consumer may decide differently once pending expenses have
    settled).  Scheduling between runnable branches is round-robin, or driven
    by ``rng`` when provided.
    """

    def __init__(self, a: Stream, b: Stream, rng: random.Random | None):
        self.branches = [_BranchState(a), _BranchState(b)]
        self.rng = rng
        self.out_barriers = 0
        self.last_picked = 1
        self.reask: tuple[int, Budget, Callable[[bool], Stream], int] | None = None

    def facade(self) -> Stream:
        return Stream(self.step)

    def _other(self, i: int) -> _BranchState:
        return self.branches[1 - i]

    def step(self) -> Msg:
        while True:
            if self.reask is not None:
                return self._emit_reask()
            acted = self._resolve_deferrals()
            if acted:
                continue
            runnable = [
                i
                for i, br in enumerate(self.branches)
                if not br.done and br.deferred is None and br.stream is not None
            ]
            if not runnable:
                if all(br.done for br in self.branches):
                    if any(br.pending for br in self.branches):
                        raise ProtocolError("stream finished with unsettled barriers")
                    return Done()
                raise ProtocolError("parallel merge has no runnable branch")
            pick = self._pick(runnable)
            msg = self._advance(pick)
            if msg is not None:
                return msg

    def _pick(self, runnable: list[int]) -> int:
        if len(runnable) == 1:
            return runnable[0]
        if self.rng is not None:
            return self.rng.choice(runnable)
        preferred = 1 - self.last_picked
        return preferred if preferred in runnable else runnable[0]

    def _resolve_deferrals(self) -> bool:
        deferred = [i for i, br in enumerate(self.branches) if br.deferred is not None]
        for i in deferred:
            if self._other(i).pending == 0:
                est, resume, idx = self.branches[i].deferred
                self.branches[i].deferred = None
                self.reask = (i, est, resume, idx)
                return True
        if len(deferred) == 2:
            # Both branches are waiting on each other; both necessarily have
            # their own spending in flight, so passing one denial down is
            # safe (an inner merge will intercept it).
            i = deferred[0]
            est, resume, idx = self.branches[i].deferred
            self.branches[i].deferred = None
            self.branches[i].pending += 1
            self.branches[i].stream = resume(False)
            return True
        return False

    def _emit_reask(self) -> Msg:
        i, est, resume, idx = self.reask
        self.reask = None
        br = self.branches[i]
        old_pos = br.positions[idx]
        zero_spent_skipped = self.out_barriers - 1 - old_pos
        # Fresh consumer-side barrier for the same underlying request.
        new_pos = self.out_barriers
        self.out_barriers += 1
        br.positions[idx] = new_pos

        def answer(allow: bool) -> Stream:
            if allow:
                br.pending += 1
                br.stream = resume(True)
            elif self._other(i).pending > 0:
                br.deferred = (est, resume, idx)
            else:
                br.pending += 1
                br.stream = resume(False)
            return self.facade()

        barrier = Barrier(est, answer)
        # The zero Spent closing the old barrier goes out first; the fresh
        # barrier follows on the next pull, with nothing in between.
        return Spent(Budget.zero(), zero_spent_skipped, Stream(lambda: barrier))

    def _advance(self, i: int) -> Msg | None:
        self.last_picked = i
        br = self.branches[i]
        msg = br.stream.step()
        if isinstance(msg, Done):
            br.stream = None
            br.done = True
            if br.pending:
                raise ProtocolError("branch finished with unsettled barriers")
            return None
        if isinstance(msg, Yield):
            br.stream = msg.rest
            return Yield(msg.value, self.facade())
        if isinstance(msg, Spent):
            br.stream = msg.rest
            br.pending -= 1
            if br.pending < 0:
                raise ProtocolError("Spent without a matching barrier")
            idx = br.n_barriers - 1 - msg.skipped
            if idx < 0 or idx >= len(br.positions):
                raise ProtocolError("Spent skip index out of range")
            out_skipped = self.out_barriers - 1 - br.positions[idx]
            return Spent(msg.actual, out_skipped, self.facade())
        if isinstance(msg, Barrier):
            est, resume = msg.estimate, msg.resume
            idx = br.n_barriers
            br.n_barriers += 1
            br.positions.append(self.out_barriers)
            self.out_barriers += 1
            br.stream = None

            def answer(allow: bool) -> Stream:
                if allow:
                    br.pending += 1
                    br.stream = resume(True)
                elif self._other(i).pending > 0:
                    br.deferred = (est, resume, idx)
                else:
                    br.pending += 1
                    br.stream = resume(False)
                return self.facade()

            return Barrier(est, answer)
        raise ProtocolError(f"unknown message {msg!r}")


def parallel(a: Stream, b: Stream, *, rng: random.Random | None = None) -> Stream:
    """Run two streams concurrently, interleaving their messages.

    Message-level interleaving is deterministic round-robin unless ``rng``
    drives the schedule.  N-way merges are built by nesting.
    """
    return _ParallelMerge(a, b, rng).facade()


# ---------------------------------------------------------------------------
# Top-level consumption
# ---------------------------------------------------------------------------

def collect(s: Stream) -> tuple[list[Any], Budget]:
    """Grant every barrier and exhaust the stream.

    Only for top-level use: calling this inside another stream would hide
    the consumption from the surrounding accounting.
    """
    values: list[Any] = []
    total = Budget.zero()
    cur = s
    while True:
        try:
            msg = cur.step()
        except BaseException as exc:  # noqa: BLE001 - surface with accounting attached
            raise StreamRunError(values, total, exc) from exc
        if isinstance(msg, Done):
            return values, total
        if isinstance(msg, Yield):
            values.append(msg.value)
            cur = msg.rest
        elif isinstance(msg, Barrier):
            cur = msg.resume(True)
        elif isinstance(msg, Spent):
            total = total + msg.actual
            cur = msg.rest
        else:
            raise ProtocolError(f"unknown message {msg!r}")


def partial(s: Stream) -> Stream:
    """Run ``s`` until its ambient budget runs out, then yield a snapshot.

    Produces a single triple ``(values, spent, continuation)``.  Barriers and
    spending reports of ``s`` are forwarded (resources stay tracked); the
    first denial that arrives while nothing is in flight freezes the stream,
    and the continuation re-issues the frozen request when resumed, so it is
    unaffected by whatever budget limit caused the denial.
    """

    state = {"acc": [], "spent": Budget.zero(), "outstanding": 0, "cur": s}

    def facade() -> Stream:
        return Stream(step)

    def finish(continuation: Stream) -> Stream:
        triple = (list(state["acc"]), state["spent"], continuation)
        return singleton(triple)

    def step() -> Msg:
        while True:
            msg = state["cur"].step()
            if isinstance(msg, Done):
                return finish(empty()).step()
            if isinstance(msg, Yield):
                state["acc"].append(msg.value)
                state["cur"] = msg.rest
                continue
            if isinstance(msg, Spent):
                state["spent"] = state["spent"] + msg.actual
                state["outstanding"] -= 1
                state["cur"] = msg.rest
                return Spent(msg.actual, msg.skipped, facade())
            if isinstance(msg, Barrier):
                est, resume = msg.estimate, msg.resume

                def answer(allow: bool, est=est, resume=resume) -> Stream:
                    if allow:
                        state["outstanding"] += 1
                        state["cur"] = resume(True)
                        return facade()
                    if state["outstanding"] > 0:
                        # An inner merge has spending in flight and will
                        # re-ask rather than abort; keep pulling.
                        state["outstanding"] += 1
                        state["cur"] = resume(False)
                        return facade()
                    continuation = Stream(lambda: Barrier(est, resume))
                    return Stream(
                        lambda: Spent(Budget.zero(), 0, finish(continuation))
                    )

                return Barrier(est, answer)
            raise ProtocolError(f"unknown message {msg!r}")

    return facade()


def tap(s: Stream, hook: Callable[..., None]) -> Stream:
    """Forward ``s`` unchanged, reporting each message to ``hook``.

    Calls: ``hook("yield", value)``, ``hook("barrier", estimate, granted)``
    (once answered), ``hook("spent", actual, skipped)``, ``hook("done")``.
    """

    def wrap(cur: Stream) -> Stream:
        def step() -> Msg:
            msg = cur.step()
            if isinstance(msg, Done):
                hook("done")
                return Done()
            if isinstance(msg, Yield):
                hook("yield", msg.value)
                return Yield(msg.value, wrap(msg.rest))
            if isinstance(msg, Barrier):
                resume = msg.resume

                def answer(allow: bool) -> Stream:
                    hook("barrier", msg.estimate, allow)
                    return wrap(resume(allow))

                return Barrier(msg.estimate, answer)
            if isinstance(msg, Spent):
                hook("spent", msg.actual, msg.skipped)
                return Spent(msg.actual, msg.skipped, wrap(msg.rest))
            raise ProtocolError(f"unknown message {msg!r}")

        return Stream(step)

    return wrap(s)
