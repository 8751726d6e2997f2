"""Storage-level predicate conjuncts, resolved to column positions.

NULL fails every comparison; float comparisons follow IEEE-754, so NaN
satisfies only ``!=``.
"""

from __future__ import annotations

import operator
from dataclasses import dataclass

OPS = {
    "=": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


@dataclass(frozen=True)
class Conjunct:
    """One ``column op literal`` comparison against a schema column index."""

    col: int
    op: str
    value: object  # typed literal: int, float, or str


def row_passes(conjuncts, row) -> bool:
    for c in conjuncts:
        v = row[c.col]
        if v is None:
            return False
        if not OPS[c.op](v, c.value):
            return False
    return True
