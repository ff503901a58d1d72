"""Seeded sampling shared by extraction and verification."""

from __future__ import annotations

import random
from typing import Sequence, TypeVar

from .errors import ValidationError

T = TypeVar("T")


def seeded_sample(items: Sequence[T], d: int, seed: int) -> list[T]:
    """First `d` elements of a seeded Fisher-Yates shuffle.

    Deterministic for a given (items order, d, seed); drawing a prefix keeps
    the cost at O(d) swaps.
    """
    n = len(items)
    if not 1 <= d <= n:
        raise ValidationError(f"sample size {d} out of range 1..{n}")
    arr = list(items)
    rng = random.Random(seed)
    for i in range(d):
        j = rng.randrange(i, n)
        arr[i], arr[j] = arr[j], arr[i]
    return arr[:d]
