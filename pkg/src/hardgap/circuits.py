"""Hand-built transformer weights that compute radius-1 rules exactly.

Two constructions, both expressed in the parameter map of ``transformer``:

* ``build_single_block``: one post-LN block, d_model 12, two heads, FFN of 8
  rule detectors, that evaluates any radius-1 rule;
* ``build_deep_circuit``: T blocks, d_model 2W+6, two heads and FFN width 14
  per block, that evaluates a composition f_T o ... o f_1.

Both use normalization stabilizer 0 and float64 arithmetic.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .ca_core import Rule, evolve, rule_from_wolfram, step
from .checkpoint import save_checkpoint
from .transformer import ModelConfig, attention_weights, block, embed, forward, layernorm, zero_params

SIGNS = list(itertools.product((-1, 1), repeat=3))  # detector order (sigma_L, sigma_C, sigma_R)


class CircuitError(RuntimeError):
    pass


@dataclass
class Circuit:
    cfg: ModelConfig
    params: dict
    rules: tuple
    kind: str
    blocks: list[dict] = field(default_factory=list)  # per-block constants (alpha, rho, theta, m, M, B)

    def logits(self, rows) -> np.ndarray:
        return forward(self.params, self.cfg, np.asarray(rows, dtype=np.float64))

    def predict(self, rows) -> np.ndarray:
        return (self.logits(rows) > 0).astype(np.uint8)

    def meta(self) -> dict:
        return {
            "model": self.cfg.to_dict(),
            "circuit": {
                "kind": self.kind,
                "rules": [[int(v) for v in r.table] for r in self.rules],
                "blocks": [{k: float(v) for k, v in b.items()} for b in self.blocks],
            },
        }

    def save(self, path) -> None:
        save_checkpoint(path, self.params, self.meta())


def _rule(f) -> Rule:
    r = f if isinstance(f, Rule) else rule_from_wolfram(int(f))
    if r.radius != 1:
        raise ValueError("constructive circuits handle radius-1 rules only")
    return r


def all_rows(width: int) -> np.ndarray:
    idx = np.arange(2**width)
    return ((idx[:, None] >> np.arange(width - 1, -1, -1)) & 1).astype(np.uint8)


def search_alpha(min_mass, rho: float, alpha0: float = 1.0, iters: int = 60, rtol: float = 1e-9) -> float:
    """Smallest-ish alpha with min_mass(alpha) >= rho: doubling, then bisection to relative width rtol."""
    if not 0.5 < rho < 1.0:
        raise ValueError("rho must lie in (0.5, 1)")
    lo, hi = 0.0, alpha0
    while min_mass(hi) < rho:
        lo, hi = hi, hi * 2.0
        if hi > 1e300:
            raise CircuitError("attention mass target unreachable")
    for _ in range(iters):
        if hi - lo <= rtol * hi:
            break
        mid = 0.5 * (lo + hi)
        if min_mass(mid) >= rho:
            hi = mid
        else:
            lo = mid
    return hi


def _threshold(m: float, big_m: float) -> float:
    if not big_m < 2 * m:
        raise CircuitError(f"sign margins violate M < 2m (m={m:.6g}, M={big_m:.6g})")
    return 0.5 * ((2 * big_m - m) + 3 * m)


# -- single block -------------------------------------------------------------------

# coordinates of the 12-dim code
_L, _C, _R, _POS, _OUT = 0, 2, 4, 6, 10


def _single_block_margins(a_min: float) -> tuple[float, float]:
    """Worst-case |z| interval after the first normalization.

    Tokens are (a,-a, s,-s, b,-b, cos,-cos, sin,-sin, 0,0) with |s|=1 and
    |a|, |b| in [a_min, 1], so LN scales by sqrt(6 / (a^2 + b^2 + 2)).
    """
    lo = a_min * np.sqrt(6.0 / (a_min**2 + 3.0))  # smallest routed bit, other routed bit at 1
    hi = np.sqrt(6.0 / (2 * a_min**2 + 2.0))  # centre bit when both routed bits are smallest
    return float(lo), float(max(hi, np.sqrt(6.0 / (a_min**2 + 3.0))))


def build_single_block(f, width: int, rho: float = 0.999, minimal: bool = False,
                       readout_gain: float = 1.0, max_escalations: int = 6) -> Circuit:
    """One post-LN block computing radius-1 rule ``f`` at every position of a width-W ring."""
    rule = _rule(f)
    if width < 3:
        raise ValueError("width must be >= 3")
    if not 0.5 < rho < 1.0:
        raise ValueError("rho must lie in (0.5, 1)")
    for _ in range(max_escalations + 1):
        try:
            return _single_block(rule, width, rho, minimal, readout_gain)
        except CircuitError:
            rho = 1.0 - (1.0 - rho) / 10.0
    raise CircuitError(f"could not satisfy M < 2m for width {width}")


def _single_block(rule: Rule, width: int, rho: float, minimal: bool, gain: float) -> Circuit:
    pos_units = [p for p, s in enumerate(SIGNS) if not minimal or rule.table[_sign_pattern(s)]]
    cfg = ModelConfig(width=width, d_model=12, n_layers=1, n_heads=2, ffn_dim=len(pos_units), d_head=6, ln_eps=0.0)
    P = zero_params(cfg)
    P["embed.w"][_C], P["embed.w"][_C + 1] = 2.0, -2.0
    P["embed.b"][_C], P["embed.b"][_C + 1] = -1.0, 1.0
    theta = 2 * np.pi * np.arange(width) / width
    P["pos"][:, _POS:_POS + 4] = np.stack([np.cos(theta), -np.cos(theta), np.sin(theta), -np.sin(theta)], 1)

    def set_heads(alpha):
        for head, tau in enumerate((-1, 1)):
            c, s = np.cos(2 * np.pi * tau / width), np.sin(2 * np.pi * tau / width)
            rot = np.array([[c, -s], [s, c]])
            base = 6 * head
            a = alpha * np.sqrt(cfg.d_head)
            # query = alpha * Rot(tau) p_i, key = p_j, both read (cos, sin) at coords 6 and 8
            for r_in, coord in enumerate((_POS, _POS + 2)):
                for r_out in range(2):
                    P["l0.wq"][coord, base + r_out] = a * rot[r_out, r_in]
                P["l0.wk"][coord, base + r_in] = 1.0
            P["l0.wv"][_C, base] = 1.0
            P["l0.wv"][_C + 1, base + 1] = 1.0
            dst = _L if tau == -1 else _R
            P["l0.wo"][base, dst] = 1.0
            P["l0.wo"][base + 1, dst + 1] = 1.0

    h0 = embed(P, np.zeros((1, width)))

    def min_mass(alpha):
        set_heads(alpha)
        return _target_mass(P, cfg, 0, h0).min()

    alpha = search_alpha(min_mass, rho)
    set_heads(alpha)
    mass = float(_target_mass(P, cfg, 0, h0).min())
    m, big_m = _single_block_margins(2 * mass - 1)
    th = _threshold(m, big_m)
    for unit, pidx in enumerate(pos_units):
        sig = SIGNS[pidx]
        P["l0.w1"][_L, unit], P["l0.w1"][_C, unit], P["l0.w1"][_R, unit] = sig
        P["l0.b1"][unit] = -th
        coef = (2.0 * rule.table[_sign_pattern(sig)] - 1.0) * gain
        P["l0.w2"][unit, _OUT] = coef
        P["l0.w2"][unit, _OUT + 1] = -coef
    if minimal:
        # without the negative detectors a miss reads exactly 0; shift it below 0
        off = 0.5 * (3 * m - th) * gain
        P["l0.b2"][_OUT], P["l0.b2"][_OUT + 1] = -off, off
    P["head.w"][_OUT], P["head.w"][_OUT + 1] = 1.0, -1.0
    info = {"alpha": alpha, "rho": rho, "target_mass": mass, "m": m, "M": big_m, "theta": th, "B": gain}
    return Circuit(cfg, P, (rule,), "single_minimal" if minimal else "single", [info])


def _sign_pattern(sig) -> int:
    return (int(sig[0] > 0) << 2) | (int(sig[1] > 0) << 1) | int(sig[2] > 0)


def _target_mass(P, cfg: ModelConfig, layer: int, h: np.ndarray) -> np.ndarray:
    """Attention weight of head 0 on i-1 and head 1 on i+1, shape (rows, 2, W)."""
    att = attention_weights(P, cfg, layer, h)
    w = cfg.width
    i = np.arange(w)
    left = att[:, 0, i, (i - 1) % w]
    right = att[:, 1, i, (i + 1) % w]
    return np.stack([left, right], axis=1)


# -- verification ---------------------------------------------------------------------


def detector_counts(circuit: Circuit, rows) -> np.ndarray:
    """Number of positive rule detectors per (row, block, position)."""
    cache = {}
    forward(circuit.params, circuit.cfg, np.asarray(rows, dtype=np.float64), cache=cache)
    n_det = 8 if circuit.kind != "single_minimal" else circuit.cfg.ffn_dim
    return np.stack([(cache[f"ffn{i}"][..., :n_det] > 0).sum(-1) for i in range(circuit.cfg.n_layers)], axis=1)


def verify_rule(circuit: Circuit, f=None, mode: str = "exhaustive", trials: int = 10_000, seed: int = 0) -> dict:
    """Compare logit signs with the truth-table rollout, exhaustively or on random rows."""
    w = circuit.cfg.width
    rules = circuit.rules if f is None else tuple(_rule(g) for g in (f if isinstance(f, (list, tuple)) else [f]))
    if mode == "exhaustive":
        if w > 16:
            raise ValueError("exhaustive verification needs W <= 16")
        rows = all_rows(w)
    elif mode == "random":
        rows = np.random.default_rng(seed).integers(0, 2, size=(trials, w), dtype=np.uint8)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    truth = rows
    for r in rules:
        truth = step(truth, r)
    mism, min_abs, one_hot = 0, np.inf, True
    for s in range(0, rows.shape[0], 1024):
        chunk = rows[s:s + 1024]
        lg = circuit.logits(chunk)
        mism += int(((lg > 0) != truth[s:s + 1024].astype(bool)).sum())
        min_abs = min(min_abs, float(np.abs(lg).min()))
        if circuit.kind != "single_minimal":
            one_hot &= bool(np.all(detector_counts(circuit, chunk) == 1))
    b = circuit.blocks[-1]
    return {
        "exact": mism == 0 and min_abs > 0,
        "mismatches": mism,
        "rows": int(rows.shape[0]),
        "min_abs_logit": min_abs,
        "one_hot": one_hot,
        "m": b.get("m"),
        "M": b.get("M"),
    }


# -- deep circuit --------------------------------------------------------------------


def build_deep_circuit(rules, width: int, rho: float = 0.999, gain: float = 1e3,
                       calib_rows: np.ndarray | None = None, max_escalations: int = 6,
                       scratch_tol: float = 1e-7, seed: int = 0) -> Circuit:
    """Stack one block per rule; block t maps the state code of u^(t-1) to u^(t).

    Constants are calibrated block by block on ``calib_rows`` (all rows when
    W <= 12, else 4096 random rows), and each block's invariants are checked
    on them; a failing block is rebuilt with larger rho and gain.
    """
    rules = tuple(_rule(f) for f in rules)
    if not rules:
        raise ValueError("need at least one rule")
    if width < 3:
        raise ValueError("width must be >= 3")
    if calib_rows is None:
        calib_rows = all_rows(width) if width <= 12 else np.random.default_rng(seed).integers(
            0, 2, size=(4096, width), dtype=np.uint8)
    d = 2 * width + 6
    cfg = ModelConfig(width=width, d_model=d, n_layers=len(rules), n_heads=2, ffn_dim=14, d_head=width + 3,
                      ln_eps=0.0)
    P = zero_params(cfg)
    lsc, st, rsc = 2 * width, 2 * width + 2, 2 * width + 4
    P["embed.w"][st], P["embed.w"][st + 1] = 2.0, -2.0
    P["embed.b"][st], P["embed.b"][st + 1] = -1.0, 1.0
    P["pos"][:, :width] = np.eye(width)
    P["pos"][:, width:2 * width] = -np.eye(width)
    P["head.w"][st], P["head.w"][st + 1] = 1.0, -1.0
    h = embed(P, calib_rows.astype(np.float64))
    u = calib_rows
    infos = []
    for t, rule in enumerate(rules):
        u_next = step(u, rule)
        r_t, b_t = rho, gain
        for attempt in range(max_escalations + 1):
            try:
                info, h_next = _deep_block(P, cfg, t, h, rule, u_next, r_t, b_t, scratch_tol)
                break
            except CircuitError:
                if attempt == max_escalations:
                    raise
                r_t, b_t = 1.0 - (1.0 - r_t) / 10.0, b_t * 10.0
        infos.append(info)
        h, u = h_next, u_next
    return Circuit(cfg, P, rules, "deep", infos)


def _deep_block(P, cfg, t, h, rule, u_next, rho, gain, scratch_tol):
    w = cfg.width
    dh = cfg.d_head
    lsc, st, rsc = 2 * w, 2 * w + 2, 2 * w + 4
    p = f"l{t}."
    for k in ("wq", "wk", "wv", "wo", "w1", "b1", "w2", "b2"):
        P[p + k][...] = 0.0

    def set_heads(alpha):
        for head, tau in enumerate((-1, 1)):
            base = head * dh
            for j in range(w):
                # query dim (j + tau) reads e_j, so position i queries e_{i+tau}
                P[p + "wq"][j, base + (j + tau) % w] = alpha * np.sqrt(dh)
                P[p + "wk"][j, base + j] = 1.0
            P[p + "wv"][st, base] = 1.0
            P[p + "wv"][st + 1, base + 1] = 1.0
            dst = lsc if tau == -1 else rsc
            P[p + "wo"][base, dst] = 1.0
            P[p + "wo"][base + 1, dst + 1] = 1.0

    def min_mass(alpha):
        set_heads(alpha)
        return _target_mass(P, cfg, t, h).min()

    alpha = search_alpha(min_mass, rho)
    set_heads(alpha)
    mass = float(_target_mass(P, cfg, t, h).min())
    cache = {}
    block(P, cfg, t, h, cache=cache)
    z = cache[f"mid{t}"]
    zs = np.abs(np.stack([z[..., lsc], z[..., st], z[..., rsc]], -1))
    m, big_m = float(zs.min()), float(zs.max())
    th = _threshold(m, big_m)
    for unit, sig in enumerate(SIGNS):
        P[p + "w1"][lsc, unit], P[p + "w1"][st, unit], P[p + "w1"][rsc, unit] = sig
        P[p + "b1"][unit] = -th
        coef = (2.0 * rule.table[_sign_pattern(sig)] - 1.0) * gain
        P[p + "w2"][unit, st] = coef
        P[p + "w2"][unit, st + 1] = -coef
    # sign-split units relu(+z), relu(-z) for z_L, z_C, z_R; outputs cancel the three pairs
    for k, coord in enumerate((lsc, st, rsc)):
        pos_u, neg_u = 8 + 2 * k, 9 + 2 * k
        P[p + "w1"][coord, pos_u] = 1.0
        P[p + "w1"][coord, neg_u] = -1.0
        P[p + "w2"][pos_u, coord], P[p + "w2"][pos_u, coord + 1] = -1.0, 1.0
        P[p + "w2"][neg_u, coord], P[p + "w2"][neg_u, coord + 1] = 1.0, -1.0
    cache = {}
    out = block(P, cfg, t, h, cache=cache)
    det = (cache[f"ffn{t}"][..., :8] > 0).sum(-1)
    scratch = max(float(np.abs(out[..., lsc:lsc + 2]).max()), float(np.abs(out[..., rsc:rsc + 2]).max()))
    state = out[..., st]
    gam = np.abs(state)
    ok_sign = np.array_equal(state > 0, u_next.astype(bool)) and gam.min() > 0
    ratio = float(gam.max() / gam.min()) if gam.min() > 0 else np.inf
    if not (np.all(det == 1) and ok_sign and scratch <= scratch_tol and ratio < 2.0):
        raise CircuitError(
            f"block {t}: one_hot={bool(np.all(det == 1))} sign={ok_sign} scratch={scratch:.3g} ratio={ratio:.3g}")
    info = {"alpha": alpha, "rho": rho, "target_mass": mass, "m": m, "M": big_m, "theta": th, "B": gain,
            "state_min": float(gam.min()), "state_max": float(gam.max()), "scratch_max": scratch}
    return info, out


def verify_deep(circuit: Circuit, mode: str = "exhaustive", trials: int = 2000, seed: int = 0,
                scratch_tol: float = 1e-7) -> dict:
    """Exactness plus per-block invariants (one-hot detectors, clean scratch, state sign and spread)."""
    w = circuit.cfg.width
    rows = all_rows(w) if mode == "exhaustive" else np.random.default_rng(seed).integers(
        0, 2, size=(trials, w), dtype=np.uint8)
    rep = verify_rule(circuit, mode=mode, trials=trials, seed=seed)
    cache = {}
    forward(circuit.params, circuit.cfg, rows.astype(np.float64), cache=cache)
    lsc, st, rsc = 2 * w, 2 * w + 2, 2 * w + 4
    u = rows
    per_block = []
    for t, rule in enumerate(circuit.rules):
        u = step(u, rule)
        h = cache[f"layer{t}"]
        gam = np.abs(h[..., st])
        per_block.append({
            "sign_ok": bool(np.array_equal(h[..., st] > 0, u.astype(bool))),
            "scratch_max": float(max(np.abs(h[..., lsc:lsc + 2]).max(), np.abs(h[..., rsc:rsc + 2]).max())),
            "state_ratio": float(gam.max() / gam.min()),
            "one_hot": bool(np.all((cache[f"ffn{t}"][..., :8] > 0).sum(-1) == 1)),
        })
    rep["blocks"] = per_block
    rep["invariants"] = all(b["sign_ok"] and b["one_hot"] and b["scratch_max"] <= scratch_tol and
                            b["state_ratio"] < 2 for b in per_block)
    return rep


def antisymmetric_ln_scale(z: np.ndarray, eps: float = 0.0) -> np.ndarray:
    """LN(z) / z for paired vectors (a,-a,b,-b,...); constant across coordinates."""
    out = layernorm(z, np.ones(z.shape[-1]), np.zeros(z.shape[-1]), eps)
    return out / z


def composed_truth(rows: np.ndarray, rules) -> np.ndarray:
    out = rows
    for r in rules:
        out = step(out, _rule(r))
    return out


__all__ = [
    "Circuit", "CircuitError", "build_single_block", "build_deep_circuit", "verify_rule", "verify_deep",
    "search_alpha", "detector_counts", "all_rows", "antisymmetric_ln_scale", "composed_truth", "evolve",
]
