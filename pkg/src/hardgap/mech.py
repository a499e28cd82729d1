"""Interpretability tools that run on any parameter map (trained or constructed).

A "model" is anything with ``params`` and ``cfg`` attributes (``Circuit``,
``LoadedModel``) or a ``(params, cfg)`` tuple.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .ca_core import neighbourhood_indices, pattern_bits
from .checkpoint import load_checkpoint
from .data import Dataset
from .transformer import ModelConfig, batched_logits, forward, head_readout, site_names


@dataclass
class LoadedModel:
    params: dict
    cfg: ModelConfig
    meta: dict = field(default_factory=dict)


def load_model(path) -> LoadedModel:
    params, meta = load_checkpoint(path)
    return LoadedModel(params, ModelConfig.from_dict(meta["model"]), meta)


def _unpack(model):
    if isinstance(model, tuple):
        return model
    return model.params, model.cfg


# -- PolyFit -------------------------------------------------------------------------

BASIS = ("1", "L", "C", "R", "LC", "LR", "CR", "LCR")
_BASIS_SETS = ((), (0,), (1,), (2,), (0, 1), (0, 2), (1, 2), (0, 1, 2))


@dataclass
class PolyFit:
    coefficients: dict
    residual: float
    values: list

    def sign_pattern_ok(self) -> bool:
        """cLCR > 0 and every pairwise term < 0."""
        c = self.coefficients
        return c["LCR"] > 0 and c["LC"] < 0 and c["LR"] < 0 and c["CR"] < 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1)


def basis_matrix() -> np.ndarray:
    rows = []
    for p in range(8):
        bits = pattern_bits(p, 1)
        rows.append([float(all(bits[j] for j in s)) for s in _BASIS_SETS])
    return np.array(rows)


def mobius_coefficients(values) -> dict:
    """Multilinear coefficients by inclusion-exclusion over subsets (the oracle for PolyFit)."""
    v = np.asarray(values, dtype=float)
    out = {}
    for name, s in zip(BASIS, _BASIS_SETS):
        total = 0.0
        for p in range(8):
            bits = pattern_bits(p, 1)
            on = {j for j in range(3) if bits[j]}
            if on <= set(s):
                total += (-1) ** (len(s) - len(on)) * v[p]
        out[name] = total
    return out


def canonical_logits(model, position: int | None = None) -> np.ndarray:
    """Centre logit for each of the 8 patterns placed at ``position`` in an all-zero row."""
    params, cfg = _unpack(model)
    w = cfg.width
    c = w // 2 if position is None else position
    rows = np.zeros((8, w))
    for p in range(8):
        for j, b in enumerate(pattern_bits(p, 1)):
            rows[p, (c - 1 + j) % w] = b
    return forward(params, cfg, rows)[:, c]


def fit_polynomial_values(values) -> PolyFit:
    a = basis_matrix()
    v = np.asarray(values, dtype=float)
    coef = np.linalg.solve(a, v)
    resid = float(np.abs(a @ coef - v).max())
    return PolyFit(dict(zip(BASIS, coef.tolist())), resid, v.tolist())


def fit_degree3_polynomial(model, position: int | None = None) -> PolyFit:
    return fit_polynomial_values(canonical_logits(model, position))


# -- teacher-forced evaluation helpers ---------------------------------------------------


def _transitions(ds: Dataset, max_rows: int | None = None):
    n, t, w = ds.states.shape[0], ds.timesteps, ds.width
    inputs = ds.states[:, :-1].reshape(n * t, w)
    targets = ds.states[:, 1:].reshape(n * t, w)
    hmask = ds.hidden_mask().reshape(n * t, w)
    if max_rows is not None and inputs.shape[0] > max_rows:
        inputs, targets, hmask = inputs[:max_rows], targets[:max_rows], hmask[:max_rows]
    return inputs, targets, hmask


def holdout_accuracy(model, ds: Dataset, ablate=(), max_rows: int | None = None) -> float | None:
    params, cfg = _unpack(model)
    inputs, targets, hmask = _transitions(ds, max_rows)
    if not hmask.any():
        return None
    pred = batched_logits(params, cfg, inputs, ablate=tuple(ablate)) > 0
    return float((pred == targets.astype(bool))[hmask].mean())


def layer_ablation(model, ds: Dataset, layer: int, max_rows: int | None = None) -> float | None:
    """Holdout accuracy with one block's attention and FFN outputs zeroed."""
    _, cfg = _unpack(model)
    if not 0 <= layer < cfg.n_layers:
        raise ValueError(f"layer must be in [0, {cfg.n_layers})")
    return holdout_accuracy(model, ds, ablate=(layer,), max_rows=max_rows)


def _site_states(model, rows, batch: int = 256) -> dict:
    params, cfg = _unpack(model)
    out = {s: [] for s in site_names(cfg)}
    ffn = {i: [] for i in range(cfg.n_layers)}
    for s in range(0, rows.shape[0], batch):
        cache = {}
        forward(params, cfg, rows[s:s + batch], cache=cache)
        for k in out:
            out[k].append(cache[k])
        for i in ffn:
            ffn[i].append(cache[f"ffn{i}"])
    res = {k: np.concatenate(v) for k, v in out.items()}
    res.update({f"ffn{i}": np.concatenate(v) for i, v in ffn.items()})
    return res


def logit_lens(model, ds: Dataset, max_rows: int | None = 2000) -> dict:
    """Holdout (and supervised) accuracy of the output head applied at every site."""
    params, cfg = _unpack(model)
    inputs, targets, hmask = _transitions(ds, max_rows)
    states = _site_states(model, inputs.astype(np.float64))
    res = {}
    for site in site_names(cfg):
        pred = head_readout(params, states[site]) > 0
        ok = pred == targets.astype(bool)
        res[site] = {
            "holdout_acc": float(ok[hmask].mean()) if hmask.any() else None,
            "supervised_acc": float(ok[~hmask].mean()),
        }
    return res


# -- representation dumps ----------------------------------------------------------------

LEVELS = ("input", "nbhd_embedding", "single_embedding", "single_hidden", "nbhd_hidden")


@dataclass
class RepresentationDump:
    levels: dict  # level name -> (K, dim) array
    labels: np.ndarray  # (K,) true next-cell value
    holdout: np.ndarray  # (K,) bool
    bits: np.ndarray  # (K, 3) neighbourhood bits L, C, R
    keys: np.ndarray  # (K, 3) (row, t, position)


def _level_names(cfg: ModelConfig) -> list[str]:
    names = list(LEVELS)
    names += [f"single_hidden_l{i}" for i in range(cfg.n_layers)]
    names += [f"nbhd_hidden_l{i}" for i in range(cfg.n_layers)]
    return names


def extract_representations(model, ds: Dataset, levels=LEVELS, max_keys: int = 4000, seed: int = 0,
                            max_rows: int = 400, balance_holdout: bool = True) -> RepresentationDump:
    """Activations at the requested levels for a sample of (row, t, position) keys.

    ``single_hidden``/``nbhd_hidden`` use the final block; ``*_l{i}`` pick block i.
    Neighbourhood levels concatenate positions i-1, i, i+1.  With
    ``balance_holdout`` up to half the keys are holdout keys (for the sweep);
    otherwise keys are drawn uniformly, which keeps bit statistics natural (for probes).
    """
    params, cfg = _unpack(model)
    known = _level_names(cfg)
    for lv in levels:
        if lv not in known:
            raise ValueError(f"unknown level {lv!r}; known: {known}")
    inputs, targets, hmask = _transitions(ds, max_rows)
    n, w = inputs.shape
    rng = np.random.default_rng(seed)
    if balance_holdout:
        hold = np.argwhere(hmask)
        vis = np.argwhere(~hmask)
        hold = hold[rng.permutation(len(hold))[: max_keys // 2]]
        n_vis = min(len(vis), max_keys - len(hold))
        vis = vis[rng.choice(len(vis), size=n_vis, replace=False)]
        keys = np.concatenate([hold, vis]).astype(np.int64)
    else:
        allk = np.argwhere(np.ones_like(hmask))
        keys = allk[rng.choice(len(allk), size=min(max_keys, len(allk)), replace=False)].astype(np.int64)
    r, i = keys[:, 0], keys[:, 1]
    states = _site_states(model, inputs.astype(np.float64))
    last = f"layer{cfg.n_layers - 1}"
    bits = np.stack([inputs[r, (i - 1) % w], inputs[r, i], inputs[r, (i + 1) % w]], 1)

    def single(site):
        return states[site][r, i]

    def nbhd(site):
        s = states[site]
        return np.concatenate([s[r, (i - 1) % w], s[r, i], s[r, (i + 1) % w]], 1)

    out = {}
    for lv in levels:
        if lv == "input":
            out[lv] = bits.astype(np.float64)
        elif lv == "nbhd_embedding":
            out[lv] = nbhd("embedding")
        elif lv == "single_embedding":
            out[lv] = single("embedding")
        elif lv == "single_hidden":
            out[lv] = single(last)
        elif lv == "nbhd_hidden":
            out[lv] = nbhd(last)
        elif lv.startswith("single_hidden_l"):
            out[lv] = single(f"layer{int(lv[len('single_hidden_l'):])}")
        else:
            out[lv] = nbhd(f"layer{int(lv[len('nbhd_hidden_l'):])}")
    t_idx = keys[:, 0] % ds.timesteps
    full_keys = np.column_stack([keys[:, 0] // ds.timesteps, t_idx, i])
    return RepresentationDump(out, targets[r, i].astype(np.int64), hmask[r, i], bits.astype(np.uint8), full_keys)


def _gp_rbf(xtr, ytr, xte, noise: float = 1e-3, max_train: int = 1500, seed: int = 0):
    """GP regression mean with an RBF kernel, median-heuristic length scale, labels in {-1, +1}."""
    rng = np.random.default_rng(seed)
    if len(xtr) > max_train:
        sel = rng.choice(len(xtr), size=max_train, replace=False)
        xtr, ytr = xtr[sel], ytr[sel]
    sq = (xtr**2).sum(1)
    d2 = np.maximum(sq[:, None] + sq[None] - 2 * xtr @ xtr.T, 0)
    med = np.median(d2[d2 > 0]) if np.any(d2 > 0) else 1.0
    k = np.exp(-d2 / med)
    alpha = np.linalg.solve(k + noise * np.eye(len(k)), 2.0 * ytr - 1.0)
    dq = np.maximum((xte**2).sum(1)[:, None] + sq[None] - 2 * xte @ xtr.T, 0)
    return (np.exp(-dq / med) @ alpha > 0).astype(np.int64)


def representation_level_sweep(dump: RepresentationDump, methods=("knn", "gp", "rbf_svm", "rf"),
                               seed: int = 0, max_train: int = 3000) -> list[dict]:
    """Train on visible-pattern keys, test on holdout keys; accuracy per (level, method)."""
    from sklearn.ensemble import RandomForestClassifier
    from sklearn.neighbors import KNeighborsClassifier
    from sklearn.svm import SVC

    if not dump.holdout.any() or dump.holdout.all():
        raise ValueError("dump must contain both holdout and visible keys")
    rng = np.random.default_rng(seed)
    tr = np.flatnonzero(~dump.holdout)
    if len(tr) > max_train:
        tr = rng.choice(tr, size=max_train, replace=False)
    te = np.flatnonzero(dump.holdout)
    ytr, yte = dump.labels[tr], dump.labels[te]
    rows = []
    for level, x in dump.levels.items():
        degenerate = bool(np.ptp(x, axis=0).max() == 0) if x.size else True
        for m in methods:
            if degenerate or len(np.unique(ytr)) < 2:
                rows.append({"level": level, "method": m, "accuracy": None, "degenerate": True})
                continue
            xtr, xte = x[tr], x[te]
            if m == "knn":
                pred = KNeighborsClassifier(n_neighbors=1).fit(xtr, ytr).predict(xte)
            elif m == "gp":
                pred = _gp_rbf(xtr, ytr, xte, seed=seed)
            elif m == "rbf_svm":
                pred = SVC(kernel="rbf", gamma="scale").fit(xtr, ytr).predict(xte)
            elif m == "rf":
                pred = RandomForestClassifier(n_estimators=100, random_state=seed).fit(xtr, ytr).predict(xte)
            else:
                raise ValueError(f"unknown method {m!r}")
            rows.append({"level": level, "method": m, "accuracy": 100.0 * float((pred == yte).mean()),
                         "degenerate": False})
    return rows


# -- probes ------------------------------------------------------------------------------

_TARGETS = ("L", "C", "R", "XOR")


def probe_labels(dump: RepresentationDump, target: str) -> np.ndarray:
    if target not in _TARGETS:
        raise ValueError(f"target must be one of {_TARGETS}")
    if target == "XOR":
        return dump.bits.sum(1) % 2
    return dump.bits[:, "LCR".index(target)].astype(np.int64)


def linear_probe(dump: RepresentationDump, target: str, level: str, seed: int = 0, shuffle: bool = False) -> float:
    """Logistic-regression probe accuracy on a fixed 80/20 split."""
    from sklearn.linear_model import LogisticRegression
    from sklearn.model_selection import train_test_split
    from sklearn.pipeline import make_pipeline
    from sklearn.preprocessing import StandardScaler

    x = dump.levels[level]
    y = probe_labels(dump, target)
    if shuffle:
        y = np.random.default_rng(seed + 1).permutation(y)
    if len(np.unique(y)) < 2:
        raise ValueError(f"degenerate probe target {target!r}: one class only")
    xtr, xte, ytr, yte = train_test_split(x, y, test_size=0.2, random_state=seed, stratify=y)
    clf = make_pipeline(StandardScaler(), LogisticRegression(max_iter=2000))
    clf.fit(xtr, ytr)
    return float(clf.score(xte, yte))


# -- activation patching ----------------------------------------------------------------


def activation_patch(model, rows, hidden_positions, site: str | None, flip: str = "left",
                     targets=None, rule=None) -> dict:
    """Corrupt neighbour bits of each hidden occurrence, splice clean activations at ``site``.

    ``rows``: clean input rows (N, W); ``hidden_positions``: list of position
    arrays, one per row.  ``flip`` is ``left``, ``right`` or ``both``.  Clean
    activations replace the corrupted ones over the window i-1..i+1 at the
    site.  Returns accuracy against the clean next-step values at the hidden
    positions, with and without the patch.
    """
    params, cfg = _unpack(model)
    if site is not None and site not in site_names(cfg):
        raise ValueError(f"unknown site {site!r}; known: {site_names(cfg)}")
    offsets = {"left": (-1,), "right": (1,), "both": (-1, 1)}[flip]
    rows = np.asarray(rows, dtype=np.float64)
    w = cfg.width
    if targets is None:
        from .ca_core import step

        targets = step(rows.astype(np.uint8), rule)
    rid, pos = [], []
    for r, ps in enumerate(hidden_positions):
        for p in ps:
            rid.append(r)
            pos.append(int(p))
    if not rid:
        raise ValueError("no hidden positions to patch")
    rid, pos = np.array(rid), np.array(pos)
    corrupt = rows[rid].copy()
    for o in offsets:
        corrupt[np.arange(len(rid)), (pos + o) % w] = 1 - corrupt[np.arange(len(rid)), (pos + o) % w]
    truth = np.asarray(targets)[rid, pos].astype(bool)
    k = np.arange(len(rid))
    corrupt_logits = batched_logits(params, cfg, corrupt)[k, pos]
    res = {"n": int(len(rid)), "flip": flip, "site": site,
           "clean_acc": float(((batched_logits(params, cfg, rows[rid])[k, pos] > 0) == truth).mean()),
           "corrupt_acc": float(((corrupt_logits > 0) == truth).mean())}
    if site is None:
        res["patched_acc"] = res["corrupt_acc"]
        return res
    clean_states = _site_states(model, rows[rid])[site]
    mask = np.zeros((len(rid), w), dtype=bool)
    for o in (-1, 0, 1):
        mask[k, (pos + o) % w] = True
    patched = np.empty(len(rid))
    for s in range(0, len(rid), 256):
        sl = slice(s, s + 256)
        lg = forward(params, cfg, corrupt[sl], patch={site: (clean_states[sl], mask[sl])})
        patched[sl] = lg[np.arange(lg.shape[0]), pos[sl]]
    res["patched_acc"] = float(((patched > 0) == truth).mean())
    return res


def patching_suite(model, ds: Dataset, flip: str = "left", max_rows: int = 200) -> list[dict]:
    _, cfg = _unpack(model)
    rows = ds.states[:max_rows, 0]
    hm = ds.hidden_mask()[:max_rows, 0]
    positions = [np.flatnonzero(h) for h in hm]
    targets = ds.states[:max_rows, 1]
    out = [activation_patch(model, rows, positions, None, flip, targets)]
    for site in site_names(cfg):
        out.append(activation_patch(model, rows, positions, site, flip, targets))
    return out


# -- parity neurons ------------------------------------------------------------------


def parity_neurons(model, ds: Dataset, layer: int | None = None, max_rows: int = 400) -> list[dict]:
    """Rank FFN hidden units of ``layer`` (default: last) by mean activation gap XOR=1 minus XOR=0."""
    params, cfg = _unpack(model)
    layer = cfg.n_layers - 1 if layer is None else layer
    inputs, _, _ = _transitions(ds, max_rows)
    states = _site_states(model, inputs.astype(np.float64))
    act = states[f"ffn{layer}"].reshape(-1, cfg.ffn_dim)
    idx = neighbourhood_indices(inputs, 1).reshape(-1)
    xor = np.array([sum(pattern_bits(int(p), 1)) % 2 for p in range(8)])[idx]
    out = []
    for j in range(cfg.ffn_dim):
        a = act[:, j]
        peak = float(a.max())
        if xor.min() == xor.max():
            m1 = m0 = float(a.mean())
        else:
            m1, m0 = float(a[xor == 1].mean()), float(a[xor == 0].mean())
        gap = m1 - m0
        out.append({"neuron": j, "mean_xor1": m1, "mean_xor0": m0, "gap": gap,
                    "norm_gap": gap / peak if peak > 0 else 0.0})
    out.sort(key=lambda d: -abs(d["norm_gap"]))
    return out


def write_rows_csv(path, rows, model_id: str, analysis: str) -> None:
    keys = sorted({k for r in rows for k in r})
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=["model_id", "analysis"] + keys)
        wr.writeheader()
        for r in rows:
            wr.writerow({"model_id": model_id, "analysis": analysis, **r})


def run_suite(model, ds: Dataset, seed: int = 0, flip: str = "left", max_rows: int = 2000) -> dict:
    """PolyFit, final-block ablation, logit lens, XOR probes, level sweep and patching in one report."""
    _, cfg = _unpack(model)
    last = cfg.n_layers - 1
    fit = fit_degree3_polynomial(model)
    lens = logit_lens(model, ds, max_rows=max_rows)
    probe_dump = extract_representations(model, ds, levels=("nbhd_embedding", "single_embedding", "single_hidden"),
                                         seed=seed, balance_holdout=False)
    sweep_dump = extract_representations(model, ds, seed=seed)
    return {
        "polyfit": asdict(fit),
        "polyfit_sign_ok": fit.sign_pattern_ok(),
        "holdout_acc": holdout_accuracy(model, ds, max_rows=max_rows),
        "ablation_final_layer": layer_ablation(model, ds, last, max_rows=max_rows),
        "logit_lens": lens,
        "lens_final": lens[site_names(cfg)[-1]]["holdout_acc"],
        "probe_xor_embedding": linear_probe(probe_dump, "XOR", "single_embedding", seed),
        "probe_xor_hidden": linear_probe(probe_dump, "XOR", "single_hidden", seed),
        "sweep": representation_level_sweep(sweep_dump, seed=seed),
        "patching": patching_suite(model, ds, flip=flip),
        "parity_neurons": parity_neurons(model, ds)[:8],
    }
