import math

import pytest
from hypothesis import given, strategies as st

from oracletree.budget import Budget, parse_budget


def test_addition_is_componentwise():
    a = Budget(num_requests=1, input_tokens=100)
    b = Budget(num_requests=2, price_usd=0.5)
    assert (a + b).to_dict() == {
        "num_requests": 3.0,
        "input_tokens": 100.0,
        "price_usd": 0.5,
    }


def test_absent_limit_key_is_unconstrained():
    assert Budget(num_requests=5) <= Budget(num_requests=5)
    assert Budget(num_requests=5, price_usd=1) <= Budget(num_requests=5)
    assert not Budget(num_requests=6) <= Budget(num_requests=5)


def test_empty_budget_is_identity_and_top():
    spend = Budget(num_requests=3)
    assert spend + Budget.zero() == spend
    assert spend <= Budget.zero()  # empty limit = no limit


def test_zero_entries_are_dropped():
    assert Budget(num_requests=0) == Budget.zero()
    assert Budget(a=1, b=0) == Budget(a=1)


def test_negative_rejected():
    with pytest.raises(ValueError):
        Budget(num_requests=-1)


def test_subtraction_clamps():
    assert (Budget(a=1) - Budget(a=3)) == Budget.zero()
    assert (Budget(a=3, b=1) - Budget(a=1)) == Budget(a=2, b=1)


def test_parse_budget():
    b = parse_budget("num_requests=50,price_usd=0.20")
    assert b == Budget(num_requests=50, price_usd=0.2)
    assert parse_budget("") == Budget.zero()
    with pytest.raises(ValueError):
        parse_budget("nonsense")
    with pytest.raises(ValueError):
        parse_budget("x=abc")


metrics = st.dictionaries(
    st.sampled_from(["a", "b", "c"]), st.floats(0, 100), max_size=3
)


@given(metrics, metrics)
def test_order_respects_addition(m1, m2):
    x, y = Budget(m1), Budget(m2)
    assert x <= x + y


@given(metrics, metrics, metrics)
def test_addition_associative_commutative(m1, m2, m3):
    x, y, z = Budget(m1), Budget(m2), Budget(m3)
    assert x + y == y + x
    lhs = ((x + y) + z).to_dict()
    rhs = (x + (y + z)).to_dict()
    assert set(lhs) == set(rhs)
    assert all(math.isclose(lhs[k], rhs[k]) for k in lhs)
