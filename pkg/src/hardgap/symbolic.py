"""Two-operator chains over 6-bit integers: data generation and non-transformer baselines.

An example has inputs (a, b, c, d, u) with d = (a op1 b) op2 c and an
independent distractor u; its derivation is (e, op1, op2, f) with
e = a op1 b and f = e op2 c = d.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

OPS = ("XOR", "OR", "AND", "NOR", "NAND", "LSHIFT", "RSHIFT")
SYMBOLS = {"XOR": "^", "OR": "|", "AND": "&", "NOR": "r", "NAND": "d", "LSHIFT": "L", "RSHIFT": "R"}
FROM_SYMBOL = {v: k for k, v in SYMBOLS.items()}
OPAQUE = {"XOR": "Q", "OR": "K", "AND": "W", "NOR": "B", "NAND": "M", "LSHIFT": "Z", "RSHIFT": "H"}
FORMATS = ("full-familiar", "full-opaque", "label-only")
MASK = 63
UNARY = ("LSHIFT", "RSHIFT")


def apply_op(op: str, x, y):
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if op == "XOR":
        return x ^ y
    if op == "OR":
        return x | y
    if op == "AND":
        return x & y
    if op == "NOR":
        return MASK - (x | y)
    if op == "NAND":
        return MASK - (x & y)
    if op == "LSHIFT":
        return ((x << 1) & MASK) + 0 * y
    if op == "RSHIFT":
        return (x >> 1) + 0 * y
    raise ValueError(f"unknown operator {op!r}")


def _check_range(*vals):
    for v in vals:
        v = np.asarray(v)
        if np.any((v < 0) | (v > MASK)):
            raise ValueError("inputs must lie in [0, 63]")


def eval_chain(a, b, c, op1: str, op2: str):
    _check_range(a, b, c)
    e = apply_op(op1, a, b)
    f = apply_op(op2, e, c)
    if np.ndim(e) == 0:
        return int(e), int(f)
    return e, f


def parse_pair(pair) -> tuple[str, str]:
    """('XOR', 'OR'), 'XOR,OR' or the two-symbol form '^|'."""
    if isinstance(pair, str):
        if "," in pair:
            pair = tuple(p.strip().upper() for p in pair.split(","))
        elif len(pair) == 2 and all(ch in FROM_SYMBOL for ch in pair):
            pair = (FROM_SYMBOL[pair[0]], FROM_SYMBOL[pair[1]])
        else:
            raise ValueError(f"cannot parse operator pair {pair!r}")
    op1, op2 = (str(p).upper() for p in pair)
    if op1 not in OPS or op2 not in OPS:
        raise ValueError(f"unknown operator in pair {pair!r}")
    return op1, op2


def pair_symbol(pair) -> str:
    op1, op2 = parse_pair(pair)
    return SYMBOLS[op1] + SYMBOLS[op2]


ALL_PAIRS = tuple(itertools.product(OPS, OPS))


def consistent_pairs(a, b, c, d) -> list[tuple[str, str]]:
    return [(o1, o2) for o1, o2 in ALL_PAIRS if int(apply_op(o2, apply_op(o1, a, b), c)) == int(d)]


# -- splits ------------------------------------------------------------------------


@dataclass(frozen=True)
class SplitSpec:
    holdout: tuple = ("XOR", "OR")
    train_per_pair: int = 3000
    test_per_pair: int = 500
    eval_per_pair: int = 500
    fmt: str = "full-familiar"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "holdout", parse_pair(self.holdout))
        if self.fmt not in FORMATS:
            raise ValueError(f"format must be one of {FORMATS}")
        space = 64**4
        for n in (self.train_per_pair, self.test_per_pair, self.eval_per_pair):
            if n < 0 or n > space:
                raise ValueError("requested count exceeds the distinct-example space for a pair")


@dataclass
class ExampleSet:
    inputs: np.ndarray  # (N, 5) a, b, c, d, u
    op1: np.ndarray  # (N,) operator index
    op2: np.ndarray
    e: np.ndarray
    f: np.ndarray

    def __len__(self):
        return self.inputs.shape[0]

    def pairs(self) -> np.ndarray:
        return self.op1 * len(OPS) + self.op2

    def subset(self, idx) -> "ExampleSet":
        return ExampleSet(self.inputs[idx], self.op1[idx], self.op2[idx], self.e[idx], self.f[idx])

    def keys(self) -> np.ndarray:
        """One int64 per (pair, a, b, c, u) for de-duplication."""
        x = self.inputs
        return (((((self.pairs() * 64 + x[:, 0]) * 64 + x[:, 1]) * 64 + x[:, 2]) * 64) + x[:, 4]).astype(np.int64)

    @staticmethod
    def concat(sets) -> "ExampleSet":
        sets = list(sets)
        return ExampleSet(*(np.concatenate([getattr(s, k) for s in sets]) for k in ("inputs", "op1", "op2", "e", "f")))


def balanced_pair_weights(holdout) -> np.ndarray:
    """7x7 pair weights with the holdout at 0 and every row and column summing to 1/7 (Sinkhorn)."""
    op1, op2 = parse_pair(holdout)
    w = np.ones((7, 7))
    w[OPS.index(op1), OPS.index(op2)] = 0.0
    for _ in range(2000):
        w /= w.sum(1, keepdims=True) * 7
        w /= w.sum(0, keepdims=True) * 7
        if np.allclose(w.sum(1), 1 / 7, atol=1e-13) and np.allclose(w.sum(0), 1 / 7, atol=1e-13):
            break
    return w


def pair_examples(pair, n: int, rng: np.random.Generator) -> ExampleSet:
    op1, op2 = parse_pair(pair)
    abcu = rng.integers(0, 64, size=(n, 4))
    a, b, c, u = abcu.T
    e, f = eval_chain(a, b, c, op1, op2)
    inputs = np.column_stack([a, b, c, f, u]).astype(np.int64)
    return ExampleSet(inputs, np.full(n, OPS.index(op1)), np.full(n, OPS.index(op2)), e.astype(np.int64),
                      f.astype(np.int64))


def generate_split(spec: SplitSpec) -> dict:
    """Train (48 seen pairs, balanced per-slot marginals), eval and test (all 49 pairs, disjoint)."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 0x5B]))
    weights = balanced_pair_weights(spec.holdout)
    total = spec.train_per_pair * 48
    counts = np.rint(weights * total).astype(int)
    parts = []
    for (i, j), n in np.ndenumerate(counts):
        if n:
            parts.append(pair_examples((OPS[i], OPS[j]), n, rng))
    train = ExampleSet.concat(parts)
    train = train.subset(rng.permutation(len(train)))
    test = ExampleSet.concat(pair_examples(p, spec.test_per_pair, rng) for p in ALL_PAIRS)
    taken = set(test.keys().tolist())
    ev_parts = []
    for p in ALL_PAIRS:
        ex = pair_examples(p, 2 * spec.eval_per_pair + 16, rng)
        keep = np.array([k not in taken for k in ex.keys().tolist()])
        ev_parts.append(ex.subset(np.flatnonzero(keep)[: spec.eval_per_pair]))
    evals = ExampleSet.concat(ev_parts)
    return {"train": train, "eval": evals, "test": test, "spec": spec, "counts": counts}


def holdout_subset(ex: ExampleSet, holdout) -> ExampleSet:
    op1, op2 = parse_pair(holdout)
    return ex.subset(np.flatnonzero((ex.op1 == OPS.index(op1)) & (ex.op2 == OPS.index(op2))))


def slot_frequencies(ex: ExampleSet) -> tuple[np.ndarray, np.ndarray]:
    n = max(len(ex), 1)
    return np.bincount(ex.op1, minlength=7) / n, np.bincount(ex.op2, minlength=7) / n


# -- serialization -----------------------------------------------------------------


def target_tokens(e: int, op1: str, op2: str, f: int, fmt: str) -> list[str]:
    table = OPAQUE if fmt == "full-opaque" else SYMBOLS
    if fmt == "label-only":
        return [SYMBOLS[op1], SYMBOLS[op2]]
    if fmt in ("full-familiar", "full-opaque"):
        return [str(e), table[op1], table[op2], str(f)]
    raise ValueError(f"unknown format {fmt!r}")


def serialize(ex: ExampleSet, fmt: str) -> list[str]:
    lines = []
    for x, o1, o2, e, f in zip(ex.inputs, ex.op1, ex.op2, ex.e, ex.f):
        toks = target_tokens(int(e), OPS[o1], OPS[o2], int(f), fmt)
        lines.append(" ".join(map(str, x.tolist())) + "\t" + " ".join(toks) + "\t" + fmt)
    return lines


def vocabulary() -> list[str]:
    return ([str(i) for i in range(64)] + [SYMBOLS[o] for o in OPS] + [OPAQUE[o] for o in OPS]
            + ["<bos>", "<eos>", "<sep>", "<pad>"])


def write_split_files(split: dict, out_dir, fmt: str | None = None) -> None:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fmt = fmt or split["spec"].fmt
    for name in ("train", "eval", "test"):
        (out / f"{name}.txt").write_text("\n".join(serialize(split[name], fmt)) + "\n")
    (out / "vocab.txt").write_text("\n".join(vocabulary()) + "\n")


# -- substitution sets ----------------------------------------------------------------


def _second_slot_ops(e, c, d):
    return [o for o in OPS if int(apply_op(o, e, c)) == int(d)]


def _first_slot_ops(a, b, c, d, op2):
    return [o for o in OPS if int(apply_op(op2, apply_op(o, a, b), c)) == int(d)]


def unambiguous_bases(pair, n: int, seed: int = 0, max_draws: int = 200_000) -> ExampleSet:
    """Examples of ``pair`` whose (a, b, c, d) fit no other operator pair."""
    rng = np.random.default_rng(seed)
    kept = []
    draws = 0
    while len(kept) < n:
        ex = pair_examples(pair, 512, rng)
        draws += 512
        for k in range(len(ex)):
            a, b, c, d, _ = ex.inputs[k]
            if len(consistent_pairs(a, b, c, d)) == 1:
                kept.append(ex.subset([k]))
                if len(kept) == n:
                    break
        if draws > max_draws:
            raise RuntimeError("could not find enough unambiguous base examples")
    return ExampleSet.concat(kept)


def substitution_set(base: ExampleSet, target_op: str, slot: str, seed: int = 0, retries: int = 8) -> dict:
    """Swap the operator in one slot by resampling that slot's free inputs.

    ``second``: keep (a, b) and so e, choose c and set d = e target c.
    ``first``: keep (c, d), choose (a, b) so that (a target b) op2 c = d.
    A replacement is preferred when ``target_op`` is then the only operator
    consistent with the substituted slot; otherwise it is kept and flagged.
    """
    if target_op not in OPS:
        raise ValueError(f"unknown operator {target_op!r}")
    if slot not in ("first", "second"):
        raise ValueError("slot must be 'first' or 'second'")
    rng = np.random.default_rng(seed)
    grid = np.arange(64)
    ab = np.array(list(itertools.product(range(64), range(64))))
    rows, op1s, op2s, es, fs, ambiguous = [], [], [], [], [], []
    for k in range(len(base)):
        a, b, c, d, u = (int(v) for v in base.inputs[k])
        op1, op2 = OPS[base.op1[k]], OPS[base.op2[k]]
        if slot == "second":
            e = int(apply_op(op1, a, b))
            d_all = apply_op(target_op, e, grid)
            uniq = [int(cc) for cc in grid if _second_slot_ops(e, cc, d_all[cc]) == [target_op]]
            pool = uniq or [int(cc) for cc in grid]
            cc = pool[int(rng.integers(len(pool)))]
            new = (a, b, cc, int(d_all[cc]), u)
            new_ops = (op1, target_op)
            amb = len(_second_slot_ops(e, cc, d_all[cc])) > 1
        else:
            e_all = apply_op(target_op, ab[:, 0], ab[:, 1])
            ok = np.flatnonzero(apply_op(op2, e_all, c) == d)
            if ok.size == 0:
                raise RuntimeError(f"no (a, b) makes {target_op} consistent with (c, d) = ({c}, {d}) under {op2}")
            uniq = [i for i in ok[rng.permutation(ok.size)][: 64 * retries]
                    if _first_slot_ops(ab[i, 0], ab[i, 1], c, d, op2) == [target_op]]
            pick = uniq[0] if uniq else int(ok[rng.integers(ok.size)])
            na, nb = int(ab[pick, 0]), int(ab[pick, 1])
            new = (na, nb, c, d, u)
            new_ops = (target_op, op2)
            amb = len(_first_slot_ops(na, nb, c, d, op2)) > 1
        e_new, f_new = eval_chain(new[0], new[1], new[2], *new_ops)
        rows.append(new)
        op1s.append(OPS.index(new_ops[0]))
        op2s.append(OPS.index(new_ops[1]))
        es.append(e_new)
        fs.append(f_new)
        ambiguous.append(amb)
    ex = ExampleSet(np.array(rows, dtype=np.int64), np.array(op1s), np.array(op2s), np.array(es), np.array(fs))
    amb = np.array(ambiguous)
    return {"examples": ex, "ambiguous": amb, "ambiguity_rate": float(amb.mean()) if amb.size else 0.0}


# -- baselines ----------------------------------------------------------------------


def exact_match(pred: dict, ex: ExampleSet) -> np.ndarray:
    return (pred["e"] == ex.e) & (pred["op1"] == ex.op1) & (pred["op2"] == ex.op2) & (pred["f"] == ex.f)


def partial_credit(pred: dict, ex: ExampleSet) -> float:
    parts = [pred[k] == getattr(ex, k) for k in ("e", "op1", "op2", "f")]
    return float(np.mean(parts))


def _knn(train: ExampleSet, test: ExampleSet, **_):
    from sklearn.neighbors import KNeighborsClassifier

    idx = KNeighborsClassifier(n_neighbors=1).fit(train.inputs, np.arange(len(train))).kneighbors(
        test.inputs, return_distance=False)[:, 0]
    return {"e": train.e[idx], "op1": train.op1[idx], "op2": train.op2[idx], "f": train.f[idx]}


def _oracle(train: ExampleSet, test: ExampleSet, **_):
    return {"e": test.e.copy(), "op1": test.op1.copy(), "op2": test.op2.copy(), "f": test.f.copy()}


def _krr(train: ExampleSet, test: ExampleSet, seed: int = 0, n_sub: int = 3000, lam: float = 1e-3,
         gamma: float | None = None, **_):
    rng = np.random.default_rng(seed)
    sel = rng.choice(len(train), size=min(n_sub, len(train)), replace=False)
    x = train.inputs[sel] / 63.0
    xt = test.inputs / 63.0
    y = np.column_stack([train.e[sel], train.f[sel], np.eye(7)[train.op1[sel]], np.eye(7)[train.op2[sel]]])
    d2 = ((x[:, None] - x[None]) ** 2).sum(-1)
    g = gamma if gamma is not None else 1.0 / np.median(d2[d2 > 0])
    k = np.exp(-g * d2)
    alpha = np.linalg.solve(k + lam * len(x) * np.eye(len(x)), y)
    out = []
    for s in range(0, len(xt), 2000):
        dq = ((xt[s:s + 2000, None] - x[None]) ** 2).sum(-1)
        out.append(np.exp(-g * dq) @ alpha)
    yp = np.concatenate(out)
    return {
        "e": np.clip(np.rint(yp[:, 0]), 0, 63).astype(np.int64),
        "f": np.clip(np.rint(yp[:, 1]), 0, 63).astype(np.int64),
        "op1": yp[:, 2:9].argmax(1),
        "op2": yp[:, 9:16].argmax(1),
    }


def _learned_tables(train: ExampleSet, test: ExampleSet, holdout=None, **_):
    """Per-operator tables read off the seen derivations, composed for the holdout pair.

    A table entry never observed in training makes the example a miss.
    """
    tables = {o: np.full((64, 64), -1, dtype=np.int64) for o in OPS}
    x = train.inputs
    for k, o in enumerate(OPS):
        s1 = train.op1 == k
        tables[o][x[s1, 0], x[s1, 1]] = train.e[s1]
        s2 = train.op2 == k
        tables[o][train.e[s2], x[s2, 2]] = train.f[s2]
        if o in UNARY:
            # a unary op ignores its second operand: any observed row fills the whole row
            row = tables[o].max(axis=1)
            tables[o][:] = np.where(row[:, None] >= 0, row[:, None], -1)
    op1, op2 = parse_pair(holdout) if holdout is not None else (None, None)
    xt = test.inputs
    if op1 is None:
        raise ValueError("learned-tables needs the holdout pair")
    e = tables[op1][xt[:, 0], xt[:, 1]]
    f = np.where(e >= 0, tables[op2][np.maximum(e, 0), xt[:, 2]], -1)
    miss = (e < 0) | (f < 0)
    return {"e": np.where(miss, -1, e), "f": np.where(miss, -1, f),
            "op1": np.full(len(test), OPS.index(op1)), "op2": np.full(len(test), OPS.index(op2)),
            "coverage": {o: float((tables[o] >= 0).mean()) for o in OPS}}


class PairMLP:
    """Inputs -> shared ReLU trunk -> heads for e (64-way), op pair (seen pairs), f (64-way)."""

    def __init__(self, classes: np.ndarray, hidden: int = 128, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.classes = np.asarray(classes)
        self.p = {
            "w1": ad.parameter((5 * 64, hidden), rng, ad.fan_in_scale(5 * 64)),
            "b1": ad.parameter((hidden,), rng, 0.0),
            "w2": ad.parameter((hidden, hidden), rng, ad.fan_in_scale(hidden)),
            "b2": ad.parameter((hidden,), rng, 0.0),
            "we": ad.parameter((hidden, 64), rng, ad.fan_in_scale(hidden)),
            "be": ad.parameter((64,), rng, 0.0),
            "wp": ad.parameter((hidden, len(classes)), rng, ad.fan_in_scale(hidden)),
            "bp": ad.parameter((len(classes),), rng, 0.0),
            "wf": ad.parameter((hidden, 64), rng, ad.fan_in_scale(hidden)),
            "bf": ad.parameter((64,), rng, 0.0),
        }

    @staticmethod
    def encode(inputs: np.ndarray) -> np.ndarray:
        """One-hot per input integer, concatenated (5 x 64)."""
        oh = np.zeros((inputs.shape[0], 5 * 64))
        for j in range(5):
            oh[np.arange(inputs.shape[0]), j * 64 + inputs[:, j]] = 1.0
        return oh

    def _forward(self, x):
        p = self.p
        h = ad.relu(ad.matmul(x, p["w1"]) + p["b1"])
        h = ad.relu(ad.matmul(h, p["w2"]) + p["b2"])
        return (ad.matmul(h, p["we"]) + p["be"], ad.matmul(h, p["wp"]) + p["bp"],
                ad.matmul(h, p["wf"]) + p["bf"])

    def fit(self, train: ExampleSet, epochs: int = 3, batch: int = 256, lr: float = 1e-3, seed: int = 0):
        rng = np.random.default_rng(seed)
        opt = ad.Adam(self.p, lr=lr)
        cls_index = {int(c): i for i, c in enumerate(self.classes)}
        pair_lab = np.array([cls_index[int(c)] for c in train.pairs()])
        x_all = train.inputs
        for _ in range(epochs):
            perm = rng.permutation(len(train))
            for s in range(0, len(train), batch):
                idx = perm[s:s + batch]
                le, lp, lf = self._forward(ad.Tensor(self.encode(x_all[idx])))
                loss = (ad.cross_entropy(le, train.e[idx]) + ad.cross_entropy(lp, pair_lab[idx])
                        + ad.cross_entropy(lf, train.f[idx]))
                opt.zero_grad()
                loss.backward()
                opt.step()
        return self

    def predict(self, inputs: np.ndarray) -> dict:
        le, lp, lf = self._forward(ad.Tensor(self.encode(inputs)))
        pair = self.classes[lp.data.argmax(1)]
        return {"e": le.data.argmax(1), "op1": pair // 7, "op2": pair % 7, "f": lf.data.argmax(1)}


def _mlp(train: ExampleSet, test: ExampleSet, seed: int = 0, epochs: int = 3, **_):
    classes = np.unique(train.pairs())
    model = PairMLP(classes, seed=seed).fit(train, epochs=epochs, seed=seed)
    return model.predict(test.inputs)


BASELINES = {"knn": _knn, "mlp": _mlp, "krr": _krr, "oracle": _oracle, "learned-tables": _learned_tables}


def baseline_eval(split: dict, method: str, holdout_only: bool = True, seed: int = 0, **kw) -> dict:
    """Exact-match accuracy of a baseline on the test set's holdout-pair examples."""
    if method not in BASELINES:
        raise ValueError(f"unknown method {method!r}; known: {sorted(BASELINES)}")
    spec = split["spec"]
    test = holdout_subset(split["test"], spec.holdout) if holdout_only else split["test"]
    pred = BASELINES[method](split["train"], test, seed=seed, holdout=spec.holdout, **kw)
    hits = exact_match(pred, test)
    return {"method": method, "holdout": pair_symbol(spec.holdout), "accuracy": float(hits.mean()),
            "partial": partial_credit(pred, test), "n": len(test)}
