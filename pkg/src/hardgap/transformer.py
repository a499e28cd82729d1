"""Post-LN transformer encoder over a row of scalar cells (numpy, inference only).

The same parameter map drives trained models and hand-constructed circuits,
so the analysis tools work on either.  Parameter names::

    embed.w, embed.b          affine scalar -> d_model input map
    pos                       (W, d_model) absolute position embeddings
    l{i}.wq/bq/wk/bk/wv/bv    attention projections, d_model -> n_heads * d_head
    l{i}.wo/bo                attention output projection
    l{i}.ln1.g/b              post-attention normalization
    l{i}.w1/b1/w2/b2          ReLU feed-forward
    l{i}.ln2.g/b              post-FFN normalization
    head.w (d_model,), head.b ()

A block maps ``h -> LN2(z + FFN(z))`` with ``z = LN1(h + Attn(h))``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np


@dataclass(frozen=True)
class ModelConfig:
    width: int = 101
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    ffn_dim: int = 128
    d_head: int | None = None
    ln_eps: float = 1e-5

    def __post_init__(self):
        if self.d_head is None:
            if self.d_model % self.n_heads:
                raise ValueError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
            object.__setattr__(self, "d_head", self.d_model // self.n_heads)
        if min(self.width, self.d_model, self.n_layers, self.n_heads, self.ffn_dim, self.d_head) < 1:
            raise ValueError("model dimensions must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    d, hd, f = cfg.d_model, cfg.n_heads * cfg.d_head, cfg.ffn_dim
    shapes = {"embed.w": (d,), "embed.b": (d,), "pos": (cfg.width, d)}
    for i in range(cfg.n_layers):
        p = f"l{i}."
        shapes.update({
            p + "wq": (d, hd), p + "bq": (hd,),
            p + "wk": (d, hd), p + "bk": (hd,),
            p + "wv": (d, hd), p + "bv": (hd,),
            p + "wo": (hd, d), p + "bo": (d,),
            p + "ln1.g": (d,), p + "ln1.b": (d,),
            p + "w1": (d, f), p + "b1": (f,),
            p + "w2": (f, d), p + "b2": (d,),
            p + "ln2.g": (d,), p + "ln2.b": (d,),
        })
    shapes["head.w"] = (d,)
    shapes["head.b"] = ()
    return shapes


def zero_params(cfg: ModelConfig) -> dict[str, np.ndarray]:
    params = {k: np.zeros(s) for k, s in param_shapes(cfg).items()}
    for i in range(cfg.n_layers):
        params[f"l{i}.ln1.g"][:] = 1.0
        params[f"l{i}.ln2.g"][:] = 1.0
    return params


def check_params(params: dict, cfg: ModelConfig) -> None:
    shapes = param_shapes(cfg)
    missing = sorted(set(shapes) - set(params))
    extra = sorted(set(params) - set(shapes))
    if missing or extra:
        raise ValueError(f"parameter map mismatch: missing={missing} extra={extra}")
    for k, s in shapes.items():
        if tuple(np.shape(params[k])) != s:
            raise ValueError(f"{k}: expected shape {s}, got {np.shape(params[k])}")


def layernorm(x, g, b, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    return xc / np.sqrt(var + eps) * g + b


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def site_names(cfg: ModelConfig) -> list[str]:
    return ["embedding"] + [f"layer{i}" for i in range(cfg.n_layers)]


def forward(params: dict, cfg: ModelConfig, x, *, ablate=(), patch=None, cache: dict | None = None):
    """Logits of shape (B, W) for inputs x of shape (B, W) (or (W,)).

    ``ablate``: block indices whose attention and FFN outputs are zeroed (the
    residual stream and normalizations still run).
    ``patch``: {site: (values, mask)} replaces the residual stream at ``site``
    with ``values`` where the (B, W) boolean ``mask`` is true.
    ``cache``: if given, filled with per-site residual states, attention
    weights (``attn{i}``) and FFN hidden activations (``ffn{i}``).
    """
    x = np.asarray(x, dtype=params["pos"].dtype)
    single = x.ndim == 1
    if single:
        x = x[None]
    if x.shape[-1] != cfg.width:
        raise ValueError(f"row width {x.shape[-1]} != model width {cfg.width}")
    patch = patch or {}
    h = embed(params, x)
    h = _apply_patch(h, "embedding", patch)
    if cache is not None:
        cache["embedding"] = h
    for i in range(cfg.n_layers):
        h = block(params, cfg, i, h, ablated=i in ablate, cache=cache)
        h = _apply_patch(h, f"layer{i}", patch)
        if cache is not None:
            cache[f"layer{i}"] = h
    logits = h @ params["head.w"] + params["head.b"]
    return logits[0] if single else logits


def attention_weights(params: dict, cfg: ModelConfig, i: int, h: np.ndarray) -> np.ndarray:
    """Softmax attention of block ``i``, shape (B, heads, W, W)."""
    p = f"l{i}."
    bsz, w, _ = h.shape
    nh, dh = cfg.n_heads, cfg.d_head
    q = (h @ params[p + "wq"] + params[p + "bq"]).reshape(bsz, w, nh, dh).transpose(0, 2, 1, 3)
    k = (h @ params[p + "wk"] + params[p + "bk"]).reshape(bsz, w, nh, dh).transpose(0, 2, 1, 3)
    return softmax(q @ k.transpose(0, 1, 3, 2) / np.sqrt(dh))


def block(params: dict, cfg: ModelConfig, i: int, h: np.ndarray, ablated: bool = False,
          cache: dict | None = None) -> np.ndarray:
    """Block ``i`` on residual states h of shape (B, W, d_model)."""
    p = f"l{i}."
    bsz, w, _ = h.shape
    nh, dh = cfg.n_heads, cfg.d_head
    if ablated:
        z = layernorm(h, params[p + "ln1.g"], params[p + "ln1.b"], cfg.ln_eps)
        hid = np.zeros((bsz, w, cfg.ffn_dim))
        out = layernorm(z, params[p + "ln2.g"], params[p + "ln2.b"], cfg.ln_eps)
    else:
        att = attention_weights(params, cfg, i, h)
        v = (h @ params[p + "wv"] + params[p + "bv"]).reshape(bsz, w, nh, dh).transpose(0, 2, 1, 3)
        o = (att @ v).transpose(0, 2, 1, 3).reshape(bsz, w, nh * dh)
        o = o @ params[p + "wo"] + params[p + "bo"]
        z = layernorm(h + o, params[p + "ln1.g"], params[p + "ln1.b"], cfg.ln_eps)
        hid = np.maximum(z @ params[p + "w1"] + params[p + "b1"], 0.0)
        y = hid @ params[p + "w2"] + params[p + "b2"]
        out = layernorm(z + y, params[p + "ln2.g"], params[p + "ln2.b"], cfg.ln_eps)
        if cache is not None:
            cache[f"attn{i}"] = att
    if cache is not None:
        cache[f"mid{i}"] = z
        cache[f"ffn{i}"] = hid
    return out


def embed(params: dict, x: np.ndarray) -> np.ndarray:
    return x[..., None] * params["embed.w"] + params["embed.b"] + params["pos"]


def _apply_patch(h, site, patch):
    if site not in patch:
        return h
    values, mask = patch[site]
    return np.where(np.asarray(mask, dtype=bool)[..., None], values, h)


def head_readout(params: dict, states: np.ndarray) -> np.ndarray:
    """Apply the output head to any residual-stream states (logit lens)."""
    return states @ params["head.w"] + params["head.b"]


def batched_logits(params: dict, cfg: ModelConfig, x, batch: int = 256, **kw) -> np.ndarray:
    x = np.asarray(x)
    out = np.empty(x.shape, dtype=np.float64)
    for s in range(0, x.shape[0], batch):
        out[s : s + batch] = forward(params, cfg, x[s : s + batch], **kw)
    return out
