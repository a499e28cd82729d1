"""Hard-gap datasets: rollouts whose hidden-pattern positions carry no supervision."""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .ca_core import Rule, evolve, neighbourhood_indices

MAGIC = b"HGDS"
FORMAT_VERSION = 1

_SPLIT_STREAM = {"train": 0, "test": 1, "eval": 2}


class MaskPolicy(str, Enum):
    ALL_TIMESTEPS = "all_timesteps"
    LEAKY_T1_ONLY = "leaky_t1_only"
    NONE = "none"


@dataclass(frozen=True)
class HiddenSet:
    radius: int
    patterns: tuple[int, ...]

    def __post_init__(self):
        pats = tuple(sorted(int(p) for p in self.patterns))
        if len(set(pats)) != len(pats):
            raise ValueError("duplicate hidden patterns")
        n = 2 ** (2 * self.radius + 1)
        if any(p < 0 or p >= n for p in pats):
            raise ValueError(f"hidden pattern out of range [0, {n})")
        object.__setattr__(self, "patterns", pats)

    @property
    def k(self) -> int:
        return len(self.patterns)

    def lookup(self) -> np.ndarray:
        """Boolean table over all pattern indices, True where hidden."""
        table = np.zeros(2 ** (2 * self.radius + 1), dtype=bool)
        table[list(self.patterns)] = True
        return table


def select_hidden(rule: Rule, k: int | None = None, seed: int = 0, patterns=None) -> HiddenSet:
    """Pick hidden patterns: pass ``patterns`` explicitly, or ``k`` for a seeded random draw."""
    n = rule.n_patterns
    if patterns is not None:
        patterns = [int(p) for p in patterns]
        if len(set(patterns)) != len(patterns):
            raise ValueError("duplicate patterns in explicit hidden list")
        if k is not None and k != len(patterns):
            raise ValueError("k disagrees with the explicit pattern list")
        if len(patterns) >= n:
            raise ValueError(f"cannot hide all {n} patterns")
        return HiddenSet(rule.radius, tuple(patterns))
    if k is None or not 0 <= k < n:
        raise ValueError(f"k must be in [0, {n}), got {k}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x41DE]))
    return HiddenSet(rule.radius, tuple(int(p) for p in rng.choice(n, size=k, replace=False)))


def pattern_occurrences(row: np.ndarray, hidden: HiddenSet) -> np.ndarray:
    """Sorted positions whose periodic neighbourhood is a hidden pattern."""
    idx = neighbourhood_indices(np.asarray(row, dtype=np.uint8), hidden.radius)
    return np.flatnonzero(hidden.lookup()[idx])


def hidden_mask(states: np.ndarray, hidden: HiddenSet) -> np.ndarray:
    """(..., T, W) mask, True where the input neighbourhood at step t is hidden."""
    idx = neighbourhood_indices(states[..., :-1, :], hidden.radius)
    return hidden.lookup()[idx]


def visibility_for(states: np.ndarray, hidden: HiddenSet, policy: MaskPolicy) -> np.ndarray:
    policy = MaskPolicy(policy)
    masked = hidden_mask(states, hidden)
    if policy is MaskPolicy.NONE:
        masked[:] = False
    elif policy is MaskPolicy.LEAKY_T1_ONLY:
        masked[..., 1:, :] = False
    return ~masked


@dataclass(frozen=True)
class Sample:
    rollout: np.ndarray  # (T+1, W)
    visibility: np.ndarray  # (T, W); row t covers the transition t -> t+1


@dataclass(frozen=True, eq=False)
class Dataset:
    states: np.ndarray  # (N, T+1, W) uint8
    visibility: np.ndarray  # (N, T, W) bool, True = supervised
    rule: Rule
    hidden: HiddenSet
    policy: MaskPolicy
    split: str = "train"
    seed: int = 0
    init_density: float = 0.5

    def __post_init__(self):
        if self.states.ndim != 3 or self.visibility.shape != (
            self.states.shape[0],
            self.states.shape[1] - 1,
            self.states.shape[2],
        ):
            raise ValueError("states/visibility shapes disagree")
        if self.hidden.radius != self.rule.radius:
            raise ValueError("hidden set radius differs from rule radius")

    @property
    def n_samples(self) -> int:
        return self.states.shape[0]

    @property
    def timesteps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def width(self) -> int:
        return self.states.shape[2]

    def __len__(self) -> int:
        return self.n_samples

    def __getitem__(self, i) -> Sample:
        return Sample(self.states[i], self.visibility[i])

    def hidden_mask(self) -> np.ndarray:
        """Hidden-pattern occurrences at every transition, independent of the mask policy."""
        return hidden_mask(self.states, self.hidden)

    def subset(self, idx) -> "Dataset":
        return Dataset(
            self.states[idx], self.visibility[idx], self.rule, self.hidden, self.policy,
            self.split, self.seed, self.init_density,
        )

    def truncate(self, timesteps: int) -> "Dataset":
        if not 1 <= timesteps <= self.timesteps:
            raise ValueError("cannot extend a dataset by truncation")
        return Dataset(
            self.states[:, : timesteps + 1], self.visibility[:, :timesteps], self.rule,
            self.hidden, self.policy, self.split, self.seed, self.init_density,
        )

    def header(self) -> dict:
        return {
            "width": self.width,
            "timesteps": self.timesteps,
            "radius": self.rule.radius,
            "rule_name": self.rule.name,
            "rule_table": [int(v) for v in self.rule.table],
            "hidden": list(self.hidden.patterns),
            "policy": self.policy.value,
            "n_samples": self.n_samples,
            "split": self.split,
            "seed": self.seed,
            "init_density": self.init_density,
        }

    def save(self, path) -> None:
        head = json.dumps(self.header(), sort_keys=True).encode()
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<HI", FORMAT_VERSION, len(head)))
            fh.write(head)
            fh.write(np.packbits(self.states.astype(bool), axis=None).tobytes())
            fh.write(np.packbits(self.visibility.astype(bool), axis=None).tobytes())

    @classmethod
    def load(cls, path) -> "Dataset":
        blob = Path(path).read_bytes()
        if blob[:4] != MAGIC:
            raise ValueError(f"{path}: not a hardgap dataset file")
        version, hlen = struct.unpack_from("<HI", blob, 4)
        if version != FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported dataset version {version}")
        off = 10
        head = json.loads(blob[off : off + hlen])
        off += hlen
        n, t, w = head["n_samples"], head["timesteps"], head["width"]
        s_bits = n * (t + 1) * w
        v_bits = n * t * w
        s_bytes = (s_bits + 7) // 8
        raw = np.frombuffer(blob, dtype=np.uint8, offset=off)
        states = np.unpackbits(raw[:s_bytes], count=s_bits).reshape(n, t + 1, w)
        vis = np.unpackbits(raw[s_bytes:], count=v_bits).reshape(n, t, w).astype(bool)
        rule = Rule(head["radius"], np.array(head["rule_table"], dtype=np.uint8), head["rule_name"])
        return cls(
            states.astype(np.uint8), vis, rule, HiddenSet(head["radius"], tuple(head["hidden"])),
            MaskPolicy(head["policy"]), head["split"], head["seed"], head["init_density"],
        )

    def to_json(self) -> str:
        """Debug export; rows as '0'/'1' strings."""
        doc = self.header()
        doc["samples"] = [
            {
                "rows": ["".join(map(str, r)) for r in s],
                "visibility": ["".join("1" if v else "0" for v in r) for r in vis],
            }
            for s, vis in zip(self.states, self.visibility)
        ]
        return json.dumps(doc, indent=1)


def initial_rows(n_samples: int, width: int, seed: int, split: str = "train", density: float = 0.5):
    if not 0.0 < density < 1.0:
        raise ValueError(f"init_density must be in (0, 1), got {density}")
    # train/test/eval draw from disjoint child streams of the same seed
    ss = np.random.SeedSequence([seed, _SPLIT_STREAM[split]])
    rng = np.random.default_rng(ss)
    return (rng.random((n_samples, width)) < density).astype(np.uint8)


def generate_dataset(
    rule: Rule,
    hidden: HiddenSet,
    policy: MaskPolicy | str = MaskPolicy.ALL_TIMESTEPS,
    width: int = 101,
    timesteps: int = 4,
    n_samples: int = 1000,
    seed: int = 0,
    init_density: float = 0.5,
    split: str = "train",
) -> Dataset:
    if width < rule.span:
        raise ValueError(f"width {width} shorter than neighbourhood {rule.span}")
    if timesteps < 1:
        raise ValueError("timesteps must be >= 1")
    policy = MaskPolicy(policy)
    rows0 = initial_rows(n_samples, width, seed, split, init_density)
    states = evolve(rows0, rule, timesteps)
    vis = visibility_for(states, hidden, policy)
    return Dataset(states, vis, rule, hidden, policy, split, seed, init_density)


def output_bias(rule: Rule, hidden: HiddenSet) -> float:
    """Majority-class rate of the hidden patterns' true outputs (uniform pattern weights)."""
    if hidden.k == 0:
        return float("nan")
    outs = rule.table[list(hidden.patterns)]
    ones = float(outs.mean())
    return max(ones, 1.0 - ones)
