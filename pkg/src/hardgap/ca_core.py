"""One-dimensional binary cellular automata.

Conventions used everywhere in the package:

* boundaries are periodic (cell indices are taken modulo the width);
* a neighbourhood is read left to right and the leftmost cell is the most
  significant bit of the pattern index.  For radius 1 the pattern ``LCR``
  has index ``4*L + 2*C + R``; for radius 2 the pattern ``L2 L1 C R1 R2``
  has index ``16*L2 + 8*L1 + 4*C + 2*R1 + R2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels


@dataclass(frozen=True, eq=False)
class Rule:
    radius: int
    table: np.ndarray
    name: str = ""

    def __post_init__(self):
        if self.radius not in (1, 2):
            raise ValueError(f"radius must be 1 or 2, got {self.radius}")
        table = np.asarray(self.table, dtype=np.uint8).reshape(-1).copy()
        if table.size != 2 ** (2 * self.radius + 1):
            raise ValueError(
                f"radius-{self.radius} rule needs {2 ** (2 * self.radius + 1)} entries, got {table.size}"
            )
        if np.any(table > 1):
            raise ValueError("rule table must be binary")
        table.flags.writeable = False
        object.__setattr__(self, "table", table)

    @property
    def span(self) -> int:
        return 2 * self.radius + 1

    @property
    def n_patterns(self) -> int:
        return self.table.size

    def __call__(self, *bits: int) -> int:
        if len(bits) != self.span:
            raise ValueError(f"expected {self.span} bits")
        return int(self.table[pattern_index(bits)])

    def __eq__(self, other):
        if not isinstance(other, Rule):
            return NotImplemented
        return self.radius == other.radius and np.array_equal(self.table, other.table)

    def __hash__(self):
        return hash((self.radius, self.table.tobytes()))

    def __repr__(self):
        bits = "".join(str(b) for b in self.table[::-1])
        return f"Rule(name={self.name!r}, radius={self.radius}, table[msb..lsb]={bits})"

    def is_linear(self) -> bool:
        """True when the rule is linear over GF(2): f(a xor b) = f(a) xor f(b)."""
        idx = np.arange(self.n_patterns)
        lhs = self.table[idx[:, None] ^ idx[None, :]]
        rhs = self.table[idx][:, None] ^ self.table[idx][None, :]
        return bool(np.array_equal(lhs, rhs))

    def linear_offsets(self) -> list[int]:
        """Cell offsets whose XOR the rule computes.  Only valid for linear rules."""
        if not self.is_linear():
            raise ValueError(f"{self.name or 'rule'} is not linear over GF(2)")
        return [
            j - self.radius
            for j in range(self.span)
            if self.table[1 << (self.span - 1 - j)]
        ]


def pattern_index(bits) -> int:
    idx = 0
    for b in bits:
        idx = (idx << 1) | int(b)
    return idx


def pattern_bits(index: int, radius: int) -> tuple[int, ...]:
    span = 2 * radius + 1
    return tuple((index >> (span - 1 - j)) & 1 for j in range(span))


def rule_from_wolfram(number: int, radius: int = 1) -> Rule:
    if radius != 1:
        raise ValueError("Wolfram numbering is defined here for radius 1 only")
    if not 0 <= number <= 255:
        raise ValueError(f"Wolfram rule number must be in [0, 255], got {number}")
    table = [(number >> p) & 1 for p in range(8)]
    return Rule(1, np.array(table, dtype=np.uint8), name=str(number))


def _rule_d(l2, l1, c, r1, r2):
    return l1 ^ ((c | r1) & (l2 | r2))


def _rule_g(l2, l1, c, r1, r2):
    return (l1 ^ (c | r1)) | (l2 & r2)


_RADIUS2_FORMULAS = {"D": _rule_d, "G": _rule_g}
_RADIUS1_NAMES = {"150": 150, "30": 30, "106": 106}


def rule_from_formula(name) -> Rule:
    """Named rules: radius-1 ``150``, ``30``, ``106`` and radius-2 ``D``, ``G``."""
    key = str(name).upper()
    if key in _RADIUS1_NAMES:
        return rule_from_wolfram(_RADIUS1_NAMES[key])
    if key in _RADIUS2_FORMULAS:
        fn = _RADIUS2_FORMULAS[key]
        table = [fn(*pattern_bits(p, 2)) for p in range(32)]
        return Rule(2, np.array(table, dtype=np.uint8), name=key)
    raise ValueError(f"unknown rule name {name!r}; known: 150, 30, 106, D, G")


def named_rule(name) -> Rule:
    """Resolve either a formula name or a plain Wolfram number."""
    key = str(name).upper()
    if key in _RADIUS1_NAMES or key in _RADIUS2_FORMULAS:
        return rule_from_formula(key)
    if key.isdigit():
        return rule_from_wolfram(int(key))
    raise ValueError(f"unknown rule {name!r}")


def neighbourhood_indices(rows: np.ndarray, radius: int) -> np.ndarray:
    """Pattern index of every cell's periodic neighbourhood (same shape as rows)."""
    rows = np.asarray(rows)
    if rows.shape[-1] < 2 * radius + 1:
        raise ValueError(f"row width {rows.shape[-1]} shorter than neighbourhood {2 * radius + 1}")
    return _kernels.neighbourhood_index(rows, radius)


def step(row: np.ndarray, rule: Rule) -> np.ndarray:
    """Apply the rule once.  Accepts a single row or any batch of rows (last axis = cells)."""
    row = np.asarray(row, dtype=np.uint8)
    return rule.table[neighbourhood_indices(row, rule.radius)]


def evolve(row: np.ndarray, rule: Rule, steps: int) -> np.ndarray:
    """Rollout of ``steps`` applications: shape ``(..., steps + 1, W)`` with row 0 the input."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    row = np.asarray(row, dtype=np.uint8)
    if row.shape[-1] < rule.span:
        raise ValueError(f"row width {row.shape[-1]} shorter than neighbourhood {rule.span}")
    return _kernels.evolve(row, rule.table, rule.radius, steps)


@dataclass(frozen=True)
class Rollout:
    rows: np.ndarray
    rule: Rule = field(compare=False)

    @classmethod
    def run(cls, row, rule: Rule, steps: int) -> "Rollout":
        return cls(evolve(row, rule, steps), rule)

    @property
    def steps(self) -> int:
        return self.rows.shape[0] - 1

    def to_text(self) -> str:
        return rows_to_text(self.rows)


def rows_to_text(rows: np.ndarray) -> str:
    rows = np.atleast_2d(np.asarray(rows, dtype=np.uint8))
    return "\n".join("".join("1" if c else "0" for c in r) for r in rows) + "\n"


def rows_from_text(text: str) -> np.ndarray:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines:
        return np.zeros((0, 0), dtype=np.uint8)
    widths = {len(ln) for ln in lines}
    if len(widths) != 1:
        raise ValueError("ragged rollout text")
    if any(set(ln) - {"0", "1"} for ln in lines):
        raise ValueError("rollout text may only contain '0' and '1'")
    return np.array([[c == "1" for c in ln] for ln in lines], dtype=np.uint8)


def save_rollout_text(path, rows: np.ndarray) -> None:
    Path(path).write_text(rows_to_text(rows))


def load_rollout_text(path) -> np.ndarray:
    return rows_from_text(Path(path).read_text())
