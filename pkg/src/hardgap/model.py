"""Trainable hard-gap transformer: initialization, unrolled forward, training, evaluation."""

from __future__ import annotations

import copy
import csv
import math
import time
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .checkpoint import save_checkpoint
from .data import Dataset, output_bias
from .transformer import ModelConfig, batched_logits, check_params, param_shapes


class Unroll(str, Enum):
    SOFT = "soft"
    HARD = "hard"
    NONE = "none"


@dataclass(frozen=True)
class UnrollMode:
    kind: Unroll = Unroll.SOFT
    num_steps: int = 4

    def __post_init__(self):
        object.__setattr__(self, "kind", Unroll(self.kind))
        if self.kind is Unroll.NONE:
            object.__setattr__(self, "num_steps", 1)
        if self.num_steps < 1:
            raise ValueError("num_steps must be >= 1")


# Initializer (pinned): linear maps U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for
# weights and biases; the scalar input map and the position table are
# N(0, EMB_INIT_STD^2); normalization gains 1, biases 0.
EMB_INIT_STD = 0.02


def init_model(cfg: ModelConfig, seed: int = 0, emb_std: float = EMB_INIT_STD) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x1417]))
    params = {}
    for name, shape in param_shapes(cfg).items():
        leaf = name.split(".")[-1]
        if name == "pos" or name.startswith("embed."):
            params[name] = rng.normal(0.0, emb_std, size=shape)
        elif leaf == "g":
            params[name] = np.ones(shape)
        elif name.endswith("ln1.b") or name.endswith("ln2.b"):
            params[name] = np.zeros(shape)
        else:
            fan_in = _fan_in(name, cfg)
            bound = 1.0 / math.sqrt(fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
    return params


def _fan_in(name: str, cfg: ModelConfig) -> int:
    leaf = name.split(".")[-1]
    if leaf in ("wq", "wk", "wv", "bq", "bk", "bv", "w1", "b1") or name.startswith("head."):
        return cfg.d_model
    if leaf in ("wo", "bo"):
        return cfg.n_heads * cfg.d_head
    if leaf in ("w2", "b2"):
        return cfg.ffn_dim
    raise KeyError(name)


def count_parameters(cfg: ModelConfig) -> int:
    return int(sum(int(np.prod(s)) for s in param_shapes(cfg).values()))


# -- autodiff forward -----------------------------------------------------------


def _linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    lead = x.shape[:-1]
    y = ad.matmul(ad.reshape(x, (-1, x.shape[-1])), w) + b
    return ad.reshape(y, lead + (w.shape[-1],))


def forward_tensor(params: dict[str, Tensor], cfg: ModelConfig, x: Tensor) -> Tensor:
    """Differentiable twin of ``transformer.forward``; x is (B, W), returns (B, W) logits."""
    bsz, w = x.shape
    if w != cfg.width:
        raise ValueError(f"row width {w} != model width {cfg.width}")
    nh, dh = cfg.n_heads, cfg.d_head
    h = ad.reshape(x, (bsz, w, 1)) * params["embed.w"] + params["embed.b"] + params["pos"]
    scale = 1.0 / math.sqrt(dh)
    for i in range(cfg.n_layers):
        p = f"l{i}."

        def heads(t):
            return ad.transpose(ad.reshape(t, (bsz, w, nh, dh)), (0, 2, 1, 3))

        q = heads(_linear(h, params[p + "wq"], params[p + "bq"]))
        k = heads(_linear(h, params[p + "wk"], params[p + "bk"]))
        v = heads(_linear(h, params[p + "wv"], params[p + "bv"]))
        att = ad.softmax(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))) * scale)
        o = ad.reshape(ad.transpose(ad.matmul(att, v), (0, 2, 1, 3)), (bsz, w, nh * dh))
        o = _linear(o, params[p + "wo"], params[p + "bo"])
        z = ad.layernorm(h + o, params[p + "ln1.g"], params[p + "ln1.b"], cfg.ln_eps)
        hid = ad.relu(_linear(z, params[p + "w1"], params[p + "b1"]))
        y = _linear(hid, params[p + "w2"], params[p + "b2"])
        h = ad.layernorm(z + y, params[p + "ln2.g"], params[p + "ln2.b"], cfg.ln_eps)
    head_w = ad.reshape(params["head.w"], (cfg.d_model, 1))
    logits = _linear(h, head_w, ad.reshape(params["head.b"], (1,)))
    return ad.reshape(logits, (bsz, w))


def forward_rollout(params: dict[str, Tensor], cfg: ModelConfig, rows, mode: UnrollMode) -> list[Tensor]:
    """Per-step logits for an unrolled rollout starting from the true row(s).

    soft: sigmoid probabilities are fed back and gradients flow through them.
    hard: thresholded bits are fed back as constants (no gradient through feedback).
    none: a single transition.
    """
    dtype = params["pos"].dtype
    inp = Tensor(np.atleast_2d(np.asarray(rows, dtype=dtype)))
    outs = []
    for s in range(mode.num_steps):
        logits = forward_tensor(params, cfg, inp)
        outs.append(logits)
        if s + 1 == mode.num_steps:
            break
        if mode.kind is Unroll.SOFT:
            inp = ad.sigmoid(logits)
        else:
            inp = Tensor((logits.data > 0).astype(dtype))
    return outs


def rollout_loss(params, cfg, states, visibility, mode: UnrollMode) -> Tensor:
    """Masked BCE over every unrolled step, uniformly weighted per visible cell."""
    steps = min(mode.num_steps, states.shape[1] - 1)
    mode = UnrollMode(mode.kind, steps)
    outs = forward_rollout(params, cfg, states[:, 0], mode)
    total = float(visibility[:, :steps].sum())
    loss = None
    for s, logits in enumerate(outs):
        term = ad.bce_with_logits(logits, states[:, s + 1], visibility[:, s], normalizer=total)
        loss = term if loss is None else loss + term
    return loss


# -- evaluation -----------------------------------------------------------------


def one_step_predictions(params, cfg, ds: Dataset, batch: int = 256) -> np.ndarray:
    """Teacher-forced one-step predictions (N, T, W) as 0/1."""
    n, t, w = ds.states.shape[0], ds.timesteps, ds.width
    inputs = ds.states[:, :-1].reshape(n * t, w)
    logits = batched_logits(params, cfg, inputs, batch=batch)
    return (logits > 0).reshape(n, t, w).astype(np.uint8)


def evaluate(params, cfg, ds: Dataset, batch: int = 256) -> dict:
    if ds.width != cfg.width:
        raise ValueError(f"dataset width {ds.width} != model width {cfg.width}")
    pred = one_step_predictions(params, cfg, ds, batch)
    truth = ds.states[:, 1:]
    correct = pred == truth
    hmask = ds.hidden_mask()
    sup = ~hmask
    res = {
        "supervised_acc": float(correct[sup].mean()) if sup.any() else None,
        "holdout_acc": float(correct[hmask].mean()) if hmask.any() else None,
        "holdout_acc_t1": float(correct[:, 0][hmask[:, 0]].mean()) if hmask[:, 0].any() else None,
        "output_bias": output_bias(ds.rule, ds.hidden) if ds.hidden.k else None,
        "per_pattern": {},
    }
    if hmask.any():
        from .ca_core import neighbourhood_indices

        idx = neighbourhood_indices(ds.states[:, :-1], ds.rule.radius)
        for p in ds.hidden.patterns:
            sel = idx == p
            res["per_pattern"][int(p)] = float(correct[sel].mean()) if sel.any() else None
    return res


# -- training -------------------------------------------------------------------


@dataclass
class TrainConfig:
    mode: str = "soft"
    num_steps: int = 4
    epochs: int = 50
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    dtype: str = "float32"
    eval_samples: int = 500
    emb_init_std: float = EMB_INIT_STD

    def unroll(self) -> UnrollMode:
        return UnrollMode(Unroll(self.mode), self.num_steps)


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)
    status: str = "ok"
    final: dict = field(default_factory=dict)

    def append(self, row: dict):
        if self.rows and row["epoch"] <= self.rows[-1]["epoch"]:
            raise ValueError("epochs must increase")
        self.rows.append(row)

    def first_epoch(self, key: str, threshold: float):
        for r in self.rows:
            if r.get(key) is not None and r[key] >= threshold:
                return r["epoch"]
        return None

    def to_csv(self, path) -> None:
        cols = ["epoch", "loss", "supervised_acc", "holdout_acc", "holdout_acc_t1"]
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore")
            wr.writeheader()
            for r in self.rows:
                wr.writerow({c: _fmt(r.get(c)) for c in cols})


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


def train(params: dict[str, np.ndarray], cfg: ModelConfig, train_ds: Dataset, test_ds: Dataset | None,
          tcfg: TrainConfig, progress=None, checkpoint_path=None) -> tuple[dict[str, np.ndarray], TrainLog]:
    """Adam on masked rollout BCE.  Returns float64 parameters and the per-epoch log.

    On a non-finite loss or gradient the run stops and the last good (end of
    previous epoch) parameters are returned with ``log.status == "nan"``.
    """
    check_params(params, cfg)
    if train_ds.width != cfg.width:
        raise ValueError("dataset width does not match model width")
    dtype = np.dtype(tcfg.dtype)
    tensors = {k: Tensor(np.array(v, dtype=dtype), requires_grad=True, name=k) for k, v in params.items()}
    opt = ad.Adam(tensors, lr=tcfg.lr)
    mode = tcfg.unroll()
    rng = np.random.default_rng(np.random.SeedSequence([tcfg.seed, 0x7EA1]))
    log = TrainLog()
    eval_ds = None
    if test_ds is not None:
        eval_ds = test_ds.subset(slice(0, min(tcfg.eval_samples, test_ds.n_samples)))
    last_good = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    n = train_ds.n_samples
    for epoch in range(1, tcfg.epochs + 1):
        t0 = time.perf_counter()
        perm = rng.permutation(n)
        losses = []
        try:
            for s in range(0, n, tcfg.batch_size):
                idx = np.sort(perm[s : s + tcfg.batch_size])
                loss = rollout_loss(tensors, cfg, train_ds.states[idx], train_ds.visibility[idx], mode)
                val = float(loss.data)
                if not math.isfinite(val):
                    raise FloatingPointError(f"non-finite loss {val} at epoch {epoch}")
                opt.zero_grad()
                loss.backward()
                opt.step()
                losses.append(val)
        except FloatingPointError as exc:
            log.status = "nan"
            log.final = {"error": str(exc)}
            return last_good, log
        last_good = {k: t.data.astype(np.float64) for k, t in tensors.items()}
        row = {"epoch": epoch, "loss": float(np.mean(losses)), "seconds": time.perf_counter() - t0}
        if eval_ds is not None:
            ev = evaluate(last_good, cfg, eval_ds)
            row.update(supervised_acc=ev["supervised_acc"], holdout_acc=ev["holdout_acc"],
                       holdout_acc_t1=ev["holdout_acc_t1"])
        log.append(row)
        if progress is not None:
            progress(row)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, last_good, {"model": cfg.to_dict(), "train": asdict(tcfg), "epoch": epoch})
    if test_ds is not None:
        log.final = evaluate(last_good, cfg, test_ds)
    return last_good, log


def clone(params: dict) -> dict:
    return copy.deepcopy(params)
