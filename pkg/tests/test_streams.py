import random

import pytest

from oracletree.budget import Budget
from oracletree import streams as S

from protocol import check_pairing, drive


REQ = Budget(num_requests=1)


def unit_spend(value, actual=None, estimate=None, counter=None):
    actual = REQ if actual is None else actual

    def op():
        if counter is not None:
            counter.append(value)
        return value, actual

    return S.spend(estimate or actual, op)


def kinds(log):
    return [e.kind for e in log.entries]


# --- spend ---

def test_spend_allow_sequence():
    log = drive(unit_spend("v"))
    assert kinds(log) == ["barrier", "spent", "yield", "done"]
    assert log.values == ["v"]
    assert log.total_spent == REQ
    check_pairing(log)


def test_spend_deny_sequence():
    log = drive(unit_spend("v"), decide=lambda est, log: False)
    assert kinds(log) == ["barrier", "spent", "done"]
    assert log.total_spent == Budget.zero()
    check_pairing(log)


def test_two_sequential_spends_do_not_overlap():
    s = S.concat(unit_spend(1), unit_spend(2))
    log = drive(s)
    assert kinds(log) == [
        "barrier", "spent", "yield", "barrier", "spent", "yield", "done",
    ]
    check_pairing(log)


def test_spend_op_failure_is_accounted():
    seen = []

    def op():
        raise S.SpendFailure("boom", consumed=Budget(num_requests=1))

    s = S.spend(REQ, op, on_failure=lambda exc, consumed: seen.append(consumed))
    log = drive(s)
    assert kinds(log) == ["barrier", "spent", "done"]
    assert log.total_spent == REQ
    assert seen == [REQ]
    check_pairing(log)


def test_spend_generic_failure_defaults_to_zero():
    def op():
        raise RuntimeError("boom")

    log = drive(S.spend(REQ, op))
    assert log.total_spent == Budget.zero()
    assert log.values == []


# --- bind ---

def test_bind_left_zero():
    assert drive(S.bind(S.empty(), S.singleton)).values == []


def test_bind_left_identity_message_equal():
    f = lambda x: S.of_iterable([x, x + 1])
    left = drive(S.bind(S.singleton(3), f))
    right = drive(f(3))
    assert kinds(left) == kinds(right)
    assert left.values == right.values == [3, 4]


def test_bind_yields_in_order():
    s = S.bind(S.of_iterable([1, 2, 3]), S.singleton)
    assert drive(s).values == [1, 2, 3]


def test_bind_passes_accounting_through():
    s = S.bind(unit_spend("a"), lambda v: unit_spend(v + "b"))
    log = drive(s)
    assert log.values == ["ab"]
    assert log.total_spent == Budget(num_requests=2)
    check_pairing(log)


# --- concat / parallel ---

def test_concat_identity():
    s = S.of_iterable([1, 2])
    assert drive(S.concat(S.empty(), s)).values == [1, 2]
    assert drive(S.concat(s, S.empty())).values == [1, 2]


def test_concat_associative_for_pure_streams():
    a, b, c = (S.of_iterable([x]) for x in ("a", "b", "c"))
    left = drive(S.concat(S.concat(a, b), c))
    a, b, c = (S.of_iterable([x]) for x in ("a", "b", "c"))
    right = drive(S.concat(a, S.concat(b, c)))
    assert kinds(left) == kinds(right)
    assert left.values == right.values == ["a", "b", "c"]


def test_parallel_value_multiset_matches_concat():
    for seed in range(20):
        rng = random.Random(seed)
        mk = lambda: (
            S.concat(unit_spend(1), S.of_iterable([10, 11])),
            S.concat(S.of_iterable([20]), unit_spend(2)),
        )
        a, b = mk()
        par = drive(S.parallel(a, b, rng=rng))
        a, b = mk()
        seq = drive(S.concat(a, b))
        assert sorted(map(str, par.values)) == sorted(map(str, seq.values))
        check_pairing(par)


def test_parallel_pairing_under_random_schedules_and_denials():
    for seed in range(40):
        rng = random.Random(seed)
        deny_rng = random.Random(seed + 1000)
        a = S.concat(unit_spend("a1"), unit_spend("a2"))
        b = S.concat(unit_spend("b1"), unit_spend("b2"))
        s = S.parallel(a, b, rng=rng)
        log = drive(s, decide=lambda est, log: deny_rng.random() < 0.7)
        check_pairing(log)


def test_parallel_denial_waits_for_pending_then_reasks():
    # Schedule so that branch 0 grants a spend but the op has not reported
    # yet when branch 1 asks; denying branch 1 must produce a zero Spent for
    # its barrier followed by a re-asked barrier, not an immediate abort.
    class Script:
        def __init__(self, picks):
            self.picks = list(picks)

        def choice(self, options):
            want = self.picks.pop(0) if self.picks else options[0]
            return want if want in options else options[0]

    sched = Script([0, 1, 0, 0, 1, 1, 1])
    a = unit_spend("a")
    b = unit_spend("b")
    s = S.parallel(a, b, rng=sched)

    answers = iter([True, False, True])  # grant a, deny b once, grant b re-ask
    log = drive(s, decide=lambda est, log: next(answers, True))
    check_pairing(log)
    barriers = log.barriers()
    assert len(barriers) == 3  # a, b denied, b re-asked
    assert sorted(log.values) == ["a", "b"]
    assert log.total_spent == Budget(num_requests=2)


# --- take ---

def test_take_zero_pulls_nothing():
    pulled = []

    def step():
        pulled.append(1)
        return S.Done()

    log = drive(S.take(0, S.Stream(step)))
    assert log.values == [] and not pulled


def test_take_two_of_five():
    log = drive(S.take(2, S.of_iterable(range(5))))
    assert log.values == [0, 1]


def test_take_grants_nothing_after_cutoff_but_preserves_pairing():
    s = S.concat(unit_spend(1), S.concat(unit_spend(2), unit_spend(3)))
    log = drive(S.take(2, s))
    assert log.values == [1, 2]
    assert log.total_spent == Budget(num_requests=2)
    check_pairing(log)


def test_take_infinite_stream():
    def naturals(i=0):
        return S.Stream(lambda: S.Yield(i, naturals(i + 1)))

    assert drive(S.take(3, naturals())).values == [0, 1, 2]


# --- with_budget ---

def test_with_budget_cuts_at_limit():
    s = S.empty()
    for i in reversed(range(5)):
        s = S.concat(unit_spend(i), s)
    log = drive(S.with_budget(Budget(num_requests=2), s))
    assert len(log.values) == 2
    assert log.total_spent == Budget(num_requests=2)
    check_pairing(log)


def test_with_budget_empty_limit_is_transparent():
    s = S.concat(unit_spend(1), unit_spend(2))
    log = drive(S.with_budget(Budget.zero(), s))
    assert log.values == [1, 2]


def test_with_budget_respects_pending_reservations():
    # Two concurrent unit spends under a one-request limit: the second
    # barrier must be denied while the first is still in flight.
    rng = random.Random(3)
    s = S.with_budget(
        Budget(num_requests=1), S.parallel(unit_spend("a"), unit_spend("b"), rng=rng)
    )
    values, total = S.collect(s)
    assert len(values) == 1
    assert total == Budget(num_requests=1)


# --- collect / partial ---

def test_collect_empty():
    assert S.collect(S.empty()) == ([], Budget.zero())


def test_collect_spend_then_yield():
    values, total = S.collect(unit_spend("v"))
    assert values == ["v"] and total == REQ


def test_collect_surfaces_failure_after_accounting():
    s = S.concat(unit_spend(1), S.Stream(lambda: (_ for _ in ()).throw(RuntimeError("bad"))))
    with pytest.raises(S.StreamRunError) as err:
        S.collect(s)
    assert err.value.values == [1]
    assert err.value.spent == REQ


def test_partial_empty():
    (triple,), total = S.collect(S.partial(S.empty()))
    values, spent, cont = triple
    assert values == [] and spent == Budget.zero()
    assert S.collect(cont) == ([], Budget.zero())


def test_partial_under_budget_returns_unaffected_continuation():
    s = S.empty()
    for i in reversed(range(4)):
        s = S.concat(unit_spend(i), s)
    outer = S.with_budget(Budget(num_requests=2), S.partial(s))
    (triple,), seen = S.collect(outer)
    values, spent, cont = triple
    assert values == [0, 1]
    assert spent == Budget(num_requests=2)
    # The continuation yields the remaining two values, beyond the old limit.
    rest, rest_spent = S.collect(cont)
    assert rest == [2, 3]
    assert rest_spent == Budget(num_requests=2)


def test_partial_forwards_accounting():
    log = drive(S.partial(unit_spend("v")))
    assert kinds(log) == ["barrier", "spent", "yield", "done"]
    triple = log.values[0]
    assert triple[0] == ["v"] and triple[1] == REQ
    check_pairing(log)


# --- tap ---

def test_tap_mirrors_messages():
    events = []
    s = S.tap(unit_spend("v"), lambda kind, *a: events.append(kind))
    S.collect(s)
    assert events == ["barrier", "spent", "yield", "done"]
