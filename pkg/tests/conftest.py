"""Shared fixtures and independent oracles.

The oracles here deliberately avoid the library's own arithmetic:
binomials come from a Pascal-triangle recurrence and subset ranks from
brute-force enumeration, so codec tests check against independently
computed values.
"""

from __future__ import annotations

import itertools
from random import Random

import pytest

from castle.codec import ChannelConfig
from castle.mapgen import generate_map


def pascal_row(n: int) -> list[int]:
    """Row n of Pascal's triangle via the additive recurrence only."""
    row = [1]
    for _ in range(n):
        row = [1] + [a + b for a, b in zip(row, row[1:])] + [1]
    return row


def colex_subsets(n: int, r: int) -> list[tuple[int, ...]]:
    """All r-subsets of {0..n-1} in colexicographic order.

    Colex compares the largest elements first, which for ascending
    tuples means sorting by the reversed tuple.
    """
    return sorted(itertools.combinations(range(n), r),
                  key=lambda c: tuple(reversed(c)))


class FixedRandint(Random):
    """Random source whose randint always returns a preset value."""

    def __init__(self, value: int):
        super().__init__(0)
        self._value = value

    def randint(self, a: int, b: int) -> int:  # noqa: A003
        assert a <= self._value <= b
        return self._value


@pytest.fixture
def small_channel() -> ChannelConfig:
    return ChannelConfig(n=40, k=5, x_max=16, y_max=16)


@pytest.fixture
def small_map():
    return generate_map(40, (8, 5), region_bits=8)


@pytest.fixture
def rng() -> Random:
    return Random("castle-tests")
