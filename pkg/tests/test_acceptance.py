"""Acceptance criteria 1-12, one test each, with a verdict line per criterion in the summary.

Training criteria (7, 8, 12) read the campaign outputs under ``$HARDGAP_RESULTS``
(default ``results/`` at the repository root), produced by
``scripts/run_campaign.sh``.  They are stochastic reduced-scale targets: a
shortfall is reported as FAIL and marked xfail rather than hidden.  Criterion 9
uses the best trained Rule 150 model when one reaches 95% holdout, otherwise the
constructed circuit.  Criterion 10 is also an empirical baseline target and is
reported the same way.
"""

import csv
import json
import os
import time
from pathlib import Path

import numpy as np
import pytest
from conftest import record
from scipy.stats import chisquare

from hardgap import autodiff as ad
from hardgap import baselines as bl
from hardgap import circuits as cc
from hardgap import gf2, mech
from hardgap import symbolic as sb
from hardgap.autodiff import Tensor
from hardgap.ca_core import named_rule
from hardgap.data import HiddenSet, generate_dataset, select_hidden
from hardgap.model import UnrollMode, init_model, rollout_loss
from hardgap.transformer import ModelConfig

RESULTS = Path(os.environ.get("HARDGAP_RESULTS", Path(__file__).resolve().parents[1] / "results"))


def verdict(number, ok, detail, empirical=False):
    record(number, "PASS" if ok else "FAIL", detail)
    if ok:
        return
    if empirical:
        pytest.xfail(f"criterion {number} not reproduced: {detail}")
    pytest.fail(f"criterion {number}: {detail}")


def manifest(name):
    path = RESULTS / name / "manifest.json"
    if not path.exists():
        return None
    m = json.loads(path.read_text())
    return m if m["status"] == "ok" else None


def need(number, *names):
    ms = [manifest(n) for n in names]
    missing = [n for n, m in zip(names, ms) if m is None]
    if missing:
        record(number, "SKIP", f"no campaign results for {missing} under {RESULTS}")
        pytest.skip(f"campaign results missing: {missing}")
    return ms


def seed_summaries(m):
    return {int(s): v["summary"] for s, v in m["seeds"].items()}


# -- 1-3: interpolation baselines ------------------------------------------------------


def test_c01_theorem_suite():
    t0 = time.perf_counter()
    rows = bl.theorem_suite(n=3, seed=0, n_profiles=1000, n_mixtures=1000, tree_depth=3)
    dt = time.perf_counter() - t0
    fams = {r["family"] for r in rows}
    need_fams = {"knn_k1", "knn_k3", "knn_k5", "knn_k7", "monotone_weights", "completely_monotone", "gp_krr_loo",
                 "trees"}
    exc = sum(r["exceptions"] for r in rows)
    cases = sum(r["cases"] for r in rows)
    verdict(1, exc == 0 and need_fams <= fams and dt < 60,
            f"{cases} cases, {exc} exceptions, {dt:.1f}s")


def test_c02_gp_closed_form_vs_dense():
    worst = 0.0
    for n in range(1, 9):
        for r in bl.R_GRID:
            for s2 in bl.SIGMA2_GRID:
                e = bl.gp_loo_factor(n, r, s2)
                d = bl.gp_loo_dense(n, r, s2)
                worst = max(worst, abs(e - d) / abs(d))
    verdict(2, worst <= 1e-9, f"max relative difference {worst:.2e} over n<=8")


def test_c03_embedding_geometry():
    rng = np.random.default_rng(0)
    iso, viol = [], []
    for _ in range(100):
        rep = bl.embedding_geometry_check(rng.normal(size=64), rng.normal(size=64), rng.normal(size=(8, 64)),
                                          center=0, other_center=1)
        iso.append(rep.isometry_error)
        viol.append(rep.mixed_violation)
    verdict(3, max(iso) < 1e-9 and min(viol) > 0,
            f"max isometry error {max(iso):.1e}, min mixed-centre violation {min(viol):.3g}")


# -- 4-6: exact components -------------------------------------------------------------


def test_c04_gf2_identifiability():
    t0 = time.perf_counter()
    rows = gf2.identifiability_sweep(width=101, n_samples=1000, seed=0)
    dt = time.perf_counter() - t0
    by_t = {r["timesteps"]: r for r in rows}
    bands = {2: (31.4, 2), 3: (58.8, 3), 4: (101.2, 4)}
    ok = by_t[1]["pct_identifiable"] == 0.0 and dt < 120
    ok &= all(by_t[t]["pct_identifiable"] == 100.0 for t in (2, 3, 4))
    ok &= all(abs(r["mean_unknowns"] - 12.5) <= 0.5 for r in rows)
    ok &= all(abs(by_t[t]["mean_constraints"] - c) <= tol for t, (c, tol) in bands.items())
    ok &= all(r["wrong_solutions"] == 0 for r in rows)
    detail = ", ".join(f"T={t}: {by_t[t]['pct_identifiable']:.0f}% id, {by_t[t]['mean_unknowns']:.2f} unk, "
                       f"{by_t[t]['mean_constraints']:.1f} eq" for t in (1, 2, 3, 4))
    verdict(4, ok, f"{detail}; {dt:.1f}s")


def test_c05_constructive_circuits():
    t0 = time.perf_counter()
    bad_single = [(f, w) for w in range(3, 13) for f in range(256)
                  if not (lambda rep: rep["exact"] and rep["one_hot"])(cc.verify_rule(cc.build_single_block(f, w)))]
    rng = np.random.default_rng(0)
    bad_deep = []
    for _ in range(50):
        triple = [int(v) for v in rng.integers(0, 256, size=3)]
        for w in range(4, 11):
            rep = cc.verify_deep(cc.build_deep_circuit(triple, w))
            if not (rep["exact"] and rep["one_hot"] and rep["invariants"]):
                bad_deep.append((tuple(triple), w))
    dt = time.perf_counter() - t0
    verdict(5, not bad_single and not bad_deep and dt < 600,
            f"single-block {2560 - len(bad_single)}/2560 exact {bad_single[:5]}; "
            f"deep {350 - len(bad_deep)}/350 exact {bad_deep[:5]}; {dt:.0f}s")


def _fd_errors(build, params, rng, per_param=None, h=1e-5):
    loss = build()
    for p in params.values():
        p.grad = None
    loss.backward()
    errs = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = range(flat.size) if per_param is None else rng.choice(flat.size, min(per_param, flat.size), False)
        for i in idx:
            old = flat[i]
            flat[i] = old + h
            fp = build().item()
            flat[i] = old - h
            fm = build().item()
            flat[i] = old
            num, ana = (fp - fm) / (2 * h), p.grad.reshape(-1)[i]
            # coordinates with a true zero gradient (e.g. key biases) are only checked for being tiny
            if max(abs(num), abs(ana)) < 1e-8:
                continue
            errs.append(abs(num - ana) / (abs(num) + abs(ana)))
    return np.array(errs)


def test_c06_autodiff_gradients():
    rng = np.random.default_rng(0)
    results = {}

    def leaf(shape, s=1.0):
        return Tensor(rng.normal(size=shape) * s, requires_grad=True)

    x, tgt = rng.normal(size=(5, 4)), rng.integers(0, 2, size=(5, 1))
    mlp = {"w1": leaf((4, 8)), "b1": leaf(8, 0.1), "w2": leaf((8, 1)), "b2": leaf(1, 0.1)}
    results["mlp"] = _fd_errors(lambda: ad.bce_with_logits(
        ad.matmul(ad.relu(ad.matmul(Tensor(x), mlp["w1"]) + mlp["b1"]), mlp["w2"]) + mlp["b2"], tgt), mlp, rng)

    att = {"x": leaf((2, 5, 4)), "wq": leaf((4, 4)), "wk": leaf((4, 4)), "g": leaf(4), "b": leaf(4, 0.1)}
    y = rng.random((2, 5, 4))

    def attn():
        q, k = ad.matmul(att["x"], att["wq"]), ad.matmul(att["x"], att["wk"])
        a = ad.softmax(ad.matmul(q, ad.transpose(k, (0, 2, 1))) * 0.5)
        z = ad.layernorm(ad.matmul(a, att["x"]) + att["x"], att["g"], att["b"])
        return ad.mean((z - Tensor(y)) * (z - Tensor(y)))

    results["softmax+matmul+layernorm"] = _fd_errors(attn, att, rng)

    emb, etgt = {"w": leaf((3, 4))}, rng.integers(0, 2, (3, 8))
    results["embedding+concat+sigmoid+bce"] = _fd_errors(lambda: ad.bce(ad.sigmoid(ad.concat(
        [ad.embedding(emb["w"], np.array([0, 2, 1])), ad.embedding(emb["w"], np.array([1, 1, 0]))], -1)),
        etgt), emb, rng)

    cfg = ModelConfig(width=7, d_model=8, n_layers=2, n_heads=2, ffn_dim=8)
    ds = generate_dataset(named_rule("150"), HiddenSet(1, (2,)), width=7, timesteps=4, n_samples=3, seed=1)
    for kind in ("soft", "hard"):
        model = {k: Tensor(v, requires_grad=True) for k, v in init_model(cfg, 7, emb_std=0.5).items()}
        results[f"2-layer model, {kind} 4-step unroll"] = _fd_errors(
            lambda: rollout_loss(model, cfg, ds.states, ds.visibility, UnrollMode(kind, 4)), model, rng, per_param=6)

    worst = {k: (float(np.mean(e < 1e-4)), float(e.max())) for k, e in results.items()}
    ok = all(frac >= 0.95 for frac, _ in worst.values())
    verdict(6, ok, "; ".join(f"{k}: {100 * f:.1f}% < 1e-4 (max {m:.1e})" for k, (f, m) in worst.items()))


# -- 7, 8, 12: training campaigns --------------------------------------------------------


@pytest.mark.slow
def test_c07_training_rule_d():
    soft, ctrl, leaky = need(7, "ruleD-soft", "ruleD-no-unroll", "ruleD-leaky")
    soft_h = {s: v["holdout_acc"] for s, v in seed_summaries(soft).items()}
    extra = manifest("ruleD-soft-extra")
    if extra is not None:
        soft_h.update({s: v["holdout_acc"] for s, v in seed_summaries(extra).items()})
    first3 = [soft_h[s] for s in sorted(soft_h)[:3]]
    n_ok3 = sum(h >= 0.90 for h in first3)
    if n_ok3 >= 2:
        soft_ok, soft_txt = True, f"soft {n_ok3}/3 seeds >= 90%"
    else:
        six = [soft_h[s] for s in sorted(soft_h)[:6]]
        n6 = sum(h >= 0.90 for h in six)
        soft_ok = len(six) == 6 and n6 >= 3
        soft_txt = f"soft {n_ok3}/3, repeat {n6}/{len(six)} seeds >= 90%"
    ctrl_h = [v["holdout_acc"] for v in seed_summaries(ctrl).values()]
    leaky_h = [v["holdout_acc"] for v in seed_summaries(leaky).values()]
    ctrl_ok = all(abs(h - 0.631) <= 0.05 for h in ctrl_h)
    leaky_ok = all(h >= 0.97 for h in leaky_h)
    fmt = lambda xs: "/".join(f"{100 * x:.1f}" for x in xs)  # noqa: E731
    verdict(7, soft_ok and ctrl_ok and leaky_ok,
            f"{soft_txt} (holdout {fmt(soft_h[s] for s in sorted(soft_h))}); no-unroll {fmt(ctrl_h)}% "
            f"(target 63.1 +- 5); leaky {fmt(leaky_h)}% (target >= 97)", empirical=True)


def _trainlog(run_dir, artifact):
    with open(run_dir / artifact) as fh:
        return [{k: (float(v) if v else None) for k, v in r.items()} for r in csv.DictReader(fh)]


def _first(rows, key, thr):
    return next((int(r["epoch"]) for r in rows if r[key] is not None and r[key] >= thr), None)


@pytest.mark.slow
def test_c08_phase_transition():
    (m,) = need(8, "rule150-soft")
    run_dir = RESULTS / "rule150-soft"
    checked, violations = [], []
    for s, entry in m["seeds"].items():
        if entry["summary"]["holdout_acc"] < 0.70:
            continue
        log = _trainlog(run_dir, next(a for a in entry["artifacts"] if a.startswith("trainlog")))
        h, sup = _first(log, "holdout_acc", 0.5), _first(log, "supervised_acc", 0.8)
        checked.append(s)
        if h is not None and (sup is None or h < sup):
            violations.append((s, h, sup))
    n = len(m["seeds"])
    if not checked:
        # no successful seed: the property holds vacuously, which is reported rather than counted as evidence
        verdict(8, False, f"0/{n} Rule 150 seeds reached 70% holdout; property untested", empirical=True)
    verdict(8, not violations, f"{len(checked)}/{n} successful seeds checked, violations {violations}",
            empirical=True)


@pytest.mark.slow
def test_c12_k_sweep():
    (m,) = need(12, "ksweep-ruleD")
    by_k = {}
    for entry in m["seeds"].values():
        for r in entry["summary"]["rows"]:
            by_k.setdefault(r["k"], []).append(r["holdout_acc"])
    m14, m16 = np.mean(by_k[14]), np.mean(by_k[16])
    verdict(12, m14 - m16 >= 0.20,
            f"mean holdout k=14 {100 * m14:.1f}% vs k=16 {100 * m16:.1f}% (gap {100 * (m14 - m16):.1f}pp, need 20)",
            empirical=True)


# -- 9: mechanistic suite ----------------------------------------------------------------


def _best_rule150_model():
    m = manifest("rule150-soft")
    if m is None:
        return None, None
    best = max(m["seeds"].items(), key=lambda kv: kv[1]["summary"]["holdout_acc"])
    if best[1]["summary"]["holdout_acc"] < 0.95:
        return None, None
    ckpt = next(a for a in best[1]["artifacts"] if a.endswith(".hgck"))
    return mech.load_model(RESULTS / "rule150-soft" / ckpt), f"trained seed {best[0]}"


def test_c09_mechanistic_suite():
    model, source = _best_rule150_model()
    if model is None:
        model, source = cc.build_single_block(150, 101), "constructed circuit (no trained model >= 95%)"
    rule = named_rule("150")
    ds = generate_dataset(rule, select_hidden(rule, patterns=[2]), width=101, n_samples=300, seed=0, split="test")
    rep = mech.run_suite(model, ds, seed=0)
    fit = rep["polyfit"]
    sweep = {(r["level"], r["method"]): r["accuracy"] for r in rep["sweep"]}
    flat = all(sweep[(lvl, m)] == 0.0 for lvl in ("input", "nbhd_embedding") for m in ("knn", "gp", "rbf_svm", "rf"))
    checks = {
        "polyfit": fit["residual"] < 1e-8 and rep["polyfit_sign_ok"],
        "ablation": rep["ablation_final_layer"] <= 0.05,
        "lens": rep["lens_final"] >= 0.95,
        "probe": rep["probe_xor_hidden"] >= 0.90 and rep["probe_xor_embedding"] <= 0.60,
        "sweep": flat and sweep[("single_hidden", "rf")] >= 90.0,
    }
    verdict(9, all(checks.values()),
            f"{source}: failed {[k for k, v in checks.items() if not v]}; cLCR {fit['coefficients']['LCR']:.2f}, "
            f"ablation {rep['ablation_final_layer']:.3f}, lens {rep['lens_final']:.3f}, XOR probe "
            f"{rep['probe_xor_embedding']:.3f}->{rep['probe_xor_hidden']:.3f}, forest post-block "
            f"{sweep[('single_hidden', 'rf')]:.0f}%")


# -- 10, 11: data-only baselines -----------------------------------------------------------


def test_c10_temporal_baseline():
    rule = named_rule("150")
    out, ok = [], True
    for pats in ([2], [5]):
        ds = generate_dataset(rule, select_hidden(rule, patterns=pats), n_samples=300, seed=0)
        f = bl.temporal_baseline_eval(ds, "forest", n_estimators=500, seed=0)["accuracy"]
        k = bl.temporal_baseline_eval(ds, "knn", k=1, seed=0)["accuracy"]
        ok &= f <= 0.05 and 0.30 <= k <= 0.55
        out.append(f"[{pats[0]}] forest {100 * f:.1f}% knn {100 * k:.1f}%")
    verdict(10, ok, "; ".join(out), empirical=True)


def test_c11_symbolic_baselines():
    out, ok = [], True
    for pair in (("XOR", "OR"), ("AND", "LSHIFT")):
        split = sb.generate_split(sb.SplitSpec(pair, seed=0))
        tr = split["train"]
        hyg = not ((tr.op1 == sb.OPS.index(pair[0])) & (tr.op2 == sb.OPS.index(pair[1]))).any()
        bal = all(chisquare(np.bincount(s, minlength=7)).pvalue > 0.01 for s in (tr.op1, tr.op2))
        acc = {m: sb.baseline_eval(split, m, seed=0)["accuracy"] for m in sb.BASELINES}
        ok &= (hyg and bal and acc["knn"] == 0.0 and acc["mlp"] == 0.0 and acc["krr"] <= 0.20
               and acc["oracle"] == 1.0 and acc["learned-tables"] >= 0.99)
        out.append(f"{sb.pair_symbol(pair)} hygiene={hyg} balance={bal} "
                   + " ".join(f"{m}={100 * a:.1f}" for m, a in acc.items()))
    verdict(11, ok, "; ".join(out))
