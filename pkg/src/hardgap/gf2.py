"""Identifiability of masked cells under a linear (XOR) rule, by GF(2) elimination.

The unknowns of a sample are its masked cells at t=1.  Every later cell is an
affine form over those unknowns, obtained by pushing the linear rule forward;
each visible cell at t >= 2 whose form involves an unknown contributes one
equation ``form = observed value``.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .ca_core import Rule, named_rule
from .data import HiddenSet, MaskPolicy, generate_dataset, hidden_mask


@dataclass(frozen=True)
class AffineBit:
    constant: int
    unknowns: frozenset

    def __xor__(self, other: "AffineBit") -> "AffineBit":
        return AffineBit(self.constant ^ other.constant, self.unknowns ^ other.unknowns)

    def evaluate(self, assignment) -> int:
        v = self.constant
        for u in self.unknowns:
            v ^= int(assignment[u])
        return v


@dataclass(frozen=True, eq=False)
class ConstraintSystem:
    n_unknowns: int
    rows: np.ndarray  # (m, n_words) uint64, bit c of the row = coefficient of unknown c
    rhs: np.ndarray  # (m,) uint8
    unknown_positions: np.ndarray  # cell index of each unknown at t=1

    @property
    def n_equations(self) -> int:
        return self.rows.shape[0]

    @property
    def equations(self) -> list[tuple[frozenset, int]]:
        return [(frozenset(_row_bits(r, self.n_unknowns)), int(b)) for r, b in zip(self.rows, self.rhs)]

    @classmethod
    def from_equations(cls, n_unknowns: int, equations) -> "ConstraintSystem":
        nw = _n_words(n_unknowns)
        rows = np.zeros((len(equations), nw), dtype=np.uint64)
        rhs = np.zeros(len(equations), dtype=np.uint8)
        for i, (idx, b) in enumerate(equations):
            for u in idx:
                if not 0 <= u < n_unknowns:
                    raise ValueError(f"unknown index {u} out of range")
                rows[i, u // 64] ^= np.uint64(1) << np.uint64(u % 64)
            rhs[i] = b & 1
        return cls(n_unknowns, rows, rhs, np.arange(n_unknowns))


@dataclass(frozen=True)
class SolveResult:
    rank: int
    consistent: bool
    identifiable: bool
    solution: np.ndarray | None


def _n_words(n: int) -> int:
    return max(1, (n + 63) // 64)


def _row_bits(row: np.ndarray, n: int) -> list[int]:
    return [c for c in range(n) if (int(row[c // 64]) >> (c % 64)) & 1]


def build_system(states: np.ndarray, rule: Rule, masked: np.ndarray) -> ConstraintSystem:
    """Constraint system of one sample.

    ``states`` is the (T+1, W) rollout, ``masked`` the (T, W) mask of
    unsupervised cells (True = masked) with row t covering the cell at t+1.
    """
    if not rule.is_linear():
        raise ValueError(f"rule {rule.name or ''} is not linear over GF(2)")
    states = np.asarray(states, dtype=np.uint8)
    masked = np.asarray(masked, dtype=bool)
    t_steps, w = masked.shape
    if states.shape != (t_steps + 1, w):
        raise ValueError("states and mask shapes disagree")
    offsets = rule.linear_offsets()
    pos = np.flatnonzero(masked[0])
    n = pos.size
    nw = _n_words(n)
    coef = np.zeros((w, nw), dtype=np.uint64)
    for u, j in enumerate(pos):
        coef[j, u // 64] |= np.uint64(1) << np.uint64(u % 64)
    const = np.where(masked[0], 0, states[1]).astype(np.uint8)
    rows, rhs = [], []
    for t in range(1, t_steps):
        # cell j at t+1 is the XOR of cells j+o at t
        new_coef = np.zeros_like(coef)
        new_const = np.zeros_like(const)
        for o in offsets:
            new_coef ^= np.roll(coef, -o, axis=0)
            new_const ^= np.roll(const, -o)
        coef, const = new_coef, new_const
        touches = coef.any(axis=1)
        eq = touches & ~masked[t]
        rows.append(coef[eq])
        rhs.append(states[t + 1][eq] ^ const[eq])
    if rows:
        rows_arr = np.concatenate(rows)
        rhs_arr = np.concatenate(rhs).astype(np.uint8)
    else:
        rows_arr = np.zeros((0, nw), dtype=np.uint64)
        rhs_arr = np.zeros(0, dtype=np.uint8)
    return ConstraintSystem(n, rows_arr, rhs_arr, pos)


def solve(system: ConstraintSystem) -> SolveResult:
    n = system.n_unknowns
    if n == 0:
        consistent = not bool(np.any(system.rhs))
        return SolveResult(0, consistent, consistent, np.zeros(0, dtype=np.uint8) if consistent else None)
    if system.n_equations == 0:
        return SolveResult(0, True, False, None)
    rank, consistent, sol, _ = _kernels.gf2_eliminate(system.rows, system.rhs, n)
    rank = int(rank)
    consistent = bool(consistent)
    ident = consistent and rank == n
    return SolveResult(rank, consistent, ident, sol.astype(np.uint8) if ident else None)


def brute_force(system: ConstraintSystem, max_unknowns: int = 20) -> list[np.ndarray]:
    """Every assignment satisfying the system (exhaustive, small systems only)."""
    n = system.n_unknowns
    if n > max_unknowns:
        raise ValueError(f"{n} unknowns is too many to enumerate")
    eqs = system.equations
    out = []
    for bits in itertools.product((0, 1), repeat=n):
        if all(sum(bits[u] for u in idx) % 2 == b for idx, b in eqs):
            out.append(np.array(bits, dtype=np.uint8))
    return out


def sample_system(states: np.ndarray, rule: Rule, hidden: HiddenSet) -> ConstraintSystem:
    """System for a rollout under the all-timesteps mask."""
    return build_system(states, rule, hidden_mask(states, hidden))


def identifiability_sweep(width: int = 101, hidden=(2,), timesteps_list=(1, 2, 3, 4), n_samples: int = 1000,
                          seed: int = 0, rule: Rule | str = "150") -> list[dict]:
    """Identifiability per horizon; every identified solution is checked against the true cells.

    All horizons reuse the same initial rows, truncated, so rank is comparable across T.
    """
    rule = named_rule(rule) if isinstance(rule, str) else rule
    hid = hidden if isinstance(hidden, HiddenSet) else HiddenSet(rule.radius, tuple(hidden))
    if min(timesteps_list) < 1:
        raise ValueError("timesteps must be >= 1")
    ds = generate_dataset(rule, hid, MaskPolicy.ALL_TIMESTEPS, width=width, timesteps=max(timesteps_list),
                          n_samples=n_samples, seed=seed, split="eval")
    full_mask = ds.hidden_mask()
    rows = []
    for t in timesteps_list:
        n_ident, unk, cons, rank, wrong = 0, [], [], [], 0
        for i in range(ds.n_samples):
            sys_ = build_system(ds.states[i, : t + 1], rule, full_mask[i, :t])
            res = solve(sys_)
            unk.append(sys_.n_unknowns)
            cons.append(sys_.n_equations)
            rank.append(res.rank)
            if res.identifiable:
                n_ident += 1
                truth = ds.states[i, 1, sys_.unknown_positions]
                wrong += int(not np.array_equal(res.solution, truth))
        rows.append({
            "timesteps": t,
            "pct_identifiable": 100.0 * n_ident / ds.n_samples,
            "mean_unknowns": float(np.mean(unk)),
            "mean_constraints": float(np.mean(cons)),
            "mean_rank": float(np.mean(rank)),
            "wrong_solutions": wrong,
        })
    return rows


def write_sweep_csv(path, rows) -> None:
    cols = ["timesteps", "pct_identifiable", "mean_unknowns", "mean_constraints", "mean_rank"]
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
        wr.writeheader()
        for r in rows:
            wr.writerow({c: (f"{r[c]:.2f}" if isinstance(r[c], float) else r[c]) for c in cols})
