"""Multi-metric resource budgets with component-wise arithmetic and ordering.

A budget maps metric names to nonnegative amounts.  A metric absent from a
budget means "zero" when the budget describes spending and "no limit" when it
describes a cap, so the same type serves both roles: comparisons take the
union of keys, treating missing limit entries as infinite and missing spend
entries as zero.
"""

from __future__ import annotations

import math
from collections.abc import Mapping
from typing import Iterator


NUM_REQUESTS = "num_requests"
INPUT_TOKENS = "input_tokens"
OUTPUT_TOKENS = "output_tokens"
PRICE_USD = "price_usd"


class Budget(Mapping[str, float]):
    """Immutable vector of named nonnegative metrics."""

    __slots__ = ("_metrics",)

    def __init__(self, metrics: Mapping[str, float] | None = None, **kw: float):
        merged: dict[str, float] = dict(metrics or {})
        merged.update(kw)
        for name, amount in merged.items():
            if not isinstance(name, str):
                raise TypeError(f"metric name must be a string, got {name!r}")
            if amount < 0:
                raise ValueError(f"metric {name!r} is negative: {amount!r}")
        # Zero entries are dropped so that equal budgets compare equal
        # regardless of how they were assembled.
        self._metrics = {k: float(v) for k, v in sorted(merged.items()) if v != 0}

    @staticmethod
    def zero() -> "Budget":
        return Budget()

    def __getitem__(self, name: str) -> float:
        return self._metrics[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._metrics)

    def __len__(self) -> int:
        return len(self._metrics)

    def amount(self, name: str, *, missing: float = 0.0) -> float:
        """The amount for ``name``, with an explicit default for absent keys."""
        return self._metrics.get(name, missing)

    def __add__(self, other: "Budget") -> "Budget":
        if not isinstance(other, Budget):
            return NotImplemented
        keys = set(self._metrics) | set(other._metrics)
        return Budget({k: self.amount(k) + other.amount(k) for k in keys})

    def __sub__(self, other: "Budget") -> "Budget":
        """Component-wise difference, clamped at zero."""
        if not isinstance(other, Budget):
            return NotImplemented
        keys = set(self._metrics) | set(other._metrics)
        return Budget({k: max(0.0, self.amount(k) - other.amount(k)) for k in keys})

    def __le__(self, limit: "Budget") -> bool:
        """True when every metric fits under ``limit`` (absent = unlimited)."""
        if not isinstance(limit, Budget):
            return NotImplemented
        return all(
            self.amount(k) <= limit.amount(k, missing=math.inf)
            for k in set(self._metrics) | set(limit._metrics)
        )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Budget):
            return NotImplemented
        return self._metrics == other._metrics

    def __hash__(self) -> int:
        return hash(tuple(self._metrics.items()))

    def exceeds(self, limit: "Budget") -> bool:
        return not (self <= limit)

    def to_dict(self) -> dict[str, float]:
        return dict(self._metrics)

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={v:g}" for k, v in self._metrics.items())
        return f"Budget({inner})"


def parse_budget(text: str) -> Budget:
    """Parse the CLI budget syntax, e.g. ``num_requests=50,price_usd=0.20``.

    An empty string denotes the unconstrained budget.
    """
    text = text.strip()
    if not text:
        return Budget.zero()
    metrics: dict[str, float] = {}
    for part in text.split(","):
        name, sep, amount = part.partition("=")
        if not sep or not name.strip():
            raise ValueError(f"bad budget entry {part!r}; expected metric=amount")
        try:
            metrics[name.strip()] = float(amount)
        except ValueError:
            raise ValueError(f"bad budget amount in {part!r}") from None
    return Budget(metrics)
