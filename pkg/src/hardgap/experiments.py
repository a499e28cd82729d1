"""Experiment configs, dispatch and run manifests.

A config is strict JSON::

    {"schema_version": 1, "kind": "gf2", "name": "...", "seeds": [0], "params": {...}}

Unknown keys at either level are rejected by name.  Each run writes into
``<out_root>/<name>/``: the resolved config, per-seed artifacts and a
manifest that lists every artifact and is written even when the run fails.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
import traceback
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("hardgap")

SCHEMA_VERSION = 1
TOP_KEYS = {"schema_version", "kind", "name", "seeds", "params"}


class ConfigError(ValueError):
    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key


# -- parameter schemas: key -> default ---------------------------------------------------

_TRAIN = {
    "rule": "D", "k": 8, "hidden_seed": 1, "patterns": None, "policy": "all_timesteps", "mode": "soft",
    "num_steps": 4, "epochs": 50, "n_train": 2000, "n_test": 500, "lr": 1e-3, "batch_size": 8,
    "emb_init_std": 0.02, "width": 101, "timesteps": 4, "eval_samples": 200, "dtype": "float32",
}

SCHEMAS = {
    "generate": {"rule": "150", "k": None, "hidden_seed": 0, "patterns": [2], "policy": "all_timesteps",
                 "width": 101, "timesteps": 4, "n_samples": 1000, "init_density": 0.5, "split": "train"},
    "baselines": {"suites": ["theorems", "gp_grid", "geometry", "cube_table"], "temporal_rule": "150",
                  "temporal_patterns": [[2], [5]], "temporal_samples": 300, "temporal_methods": ["forest", "knn"],
                  "n_estimators": 500, "gp_max_n": 8, "geometry_draws": 100},
    "gf2": {"rule": "150", "width": 101, "hidden": [2], "timesteps_list": [1, 2, 3, 4], "n_samples": 1000},
    "construct": {"rules": "all", "widths": [3, 4, 5, 6, 7, 8, 9, 10, 11, 12], "rho": 0.999, "deep_triples": 0,
                  "deep_widths": [4, 5, 6, 7, 8, 9, 10], "minimal": False, "save_rules": [150]},
    "train": dict(_TRAIN),
    "analyze": {"checkpoint": None, "rule": "150", "patterns": [2], "width": 101, "n_samples": 300,
                "flip": "left"},
    "symbolic": {"holdouts": ["^|", "&L"], "methods": ["knn", "mlp", "krr", "oracle", "learned-tables"],
                 "train_per_pair": 3000, "test_per_pair": 500, "eval_per_pair": 500, "format": "full-familiar",
                 "write_files": False, "mlp_epochs": 3},
    "sweep": dict(_TRAIN, k_values=[14, 16]),
}


_CHOICES = {
    "suites": {"theorems", "gp_grid", "geometry", "cube_table", "temporal"},
    "temporal_methods": {"forest", "knn"},
    "methods": {"knn", "mlp", "krr", "oracle", "learned-tables"},
    "mode": {"none", "hard", "soft"},
    "policy": {"all_timesteps", "leaky_t1_only", "none"},
    "format": {"full-familiar", "full-opaque", "label-only"},
    "dtype": {"float32", "float64"},
    "flip": {"left", "right", "both"},
}


def _check_value(kind: str, key: str, value, default):
    if default is not None and value is not None and key != "rules":
        if isinstance(default, bool):
            ok = isinstance(value, bool)
        elif isinstance(default, (int, float)):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        else:
            ok = isinstance(value, type(default))
        if not ok:
            raise ConfigError(f"{kind}.params.{key}: expected {type(default).__name__}, got {type(value).__name__}",
                              key)
    if key in _CHOICES:
        vals = value if isinstance(value, list) else [value]
        bad = [v for v in vals if v not in _CHOICES[key]]
        if bad:
            raise ConfigError(f"{kind}.params.{key}: invalid value {bad[0]!r}", key)


def parse_config(doc) -> dict:
    """Validate and resolve a config document; returns a new dict with defaults filled in."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    for key in doc:
        if key not in TOP_KEYS:
            raise ConfigError(f"unknown top-level key {key!r}", key)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(f"schema_version must be {SCHEMA_VERSION}", "schema_version")
    kind = doc.get("kind")
    if kind not in SCHEMAS:
        raise ConfigError(f"unknown kind {kind!r}; known: {sorted(SCHEMAS)}", "kind")
    seeds = doc.get("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise ConfigError("seeds must be a non-empty list of nonnegative integers", "seeds")
    params = doc.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("params must be an object", "params")
    schema = SCHEMAS[kind]
    for key, value in params.items():
        if key not in schema:
            raise ConfigError(f"unknown key {key!r} for kind {kind!r}", key)
        _check_value(kind, key, value, schema[key])
    name = doc.get("name", kind)
    if not isinstance(name, str) or not name or "/" in name:
        raise ConfigError("name must be a non-empty string without '/'", "name")
    return {"schema_version": SCHEMA_VERSION, "kind": kind, "name": name, "seeds": list(seeds),
            "params": {**schema, **params}}


def load_config(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return parse_config(doc)


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def out_root() -> Path:
    return Path(os.environ.get("HARDGAP_OUT", "hardgap_out"))


# -- helpers ----------------------------------------------------------------------------


def _write_csv(path: Path, rows: list[dict]) -> Path:
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=keys)
        wr.writeheader()
        for r in rows:
            wr.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    return path


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serialisable: {type(o).__name__}")


def _hidden(rule, p: dict, seed_key: str = "hidden_seed"):
    from .data import select_hidden

    if p.get("patterns") is not None:
        return select_hidden(rule, patterns=p["patterns"])
    return select_hidden(rule, k=p["k"], seed=p[seed_key])


# -- handlers: (params, seed, outdir) -> (artifacts, summary) -------------------------


def _run_generate(p, seed, out):
    from .ca_core import named_rule
    from .data import generate_dataset

    rule = named_rule(p["rule"])
    ds = generate_dataset(rule, _hidden(rule, p), p["policy"], p["width"], p["timesteps"], p["n_samples"],
                          seed, p["init_density"], p["split"])
    path = out / f"dataset_s{seed}.hgds"
    ds.save(path)
    return [path], ds.header()


def _run_baselines(p, seed, out):
    from . import baselines as bl
    from .ca_core import named_rule
    from .data import generate_dataset, select_hidden

    arts, summary = [], {}
    if "theorems" in p["suites"]:
        rows = bl.theorem_suite(seed=seed)
        arts.append(_write_csv(out / f"theorems_s{seed}.csv", rows))
        summary["theorem_exceptions"] = sum(r["exceptions"] for r in rows)
    if "gp_grid" in p["suites"]:
        rows = []
        for n in range(1, p["gp_max_n"] + 1):
            for r in bl.R_GRID:
                for s2 in bl.SIGMA2_GRID:
                    e = bl.gp_loo_predict(n, r, s2, method="eigen")
                    d = bl.gp_loo_predict(n, r, s2, method="dense")
                    rows.append({"n": n, "r": r, "sigma2": s2, "eigen": e, "dense": d,
                                 "rel_err": abs(e - d) / max(abs(d), 1e-300)})
        arts.append(_write_csv(out / "gp_grid.csv", rows))
        summary["gp_max_rel_err"] = max(r["rel_err"] for r in rows)
    if "geometry" in p["suites"]:
        rng = np.random.default_rng(seed)
        errs, viol = [], []
        for _ in range(p["geometry_draws"]):
            phi0, phi1 = rng.normal(size=(2, 64))
            pos = rng.normal(size=(8, 64))
            rep = bl.embedding_geometry_check(phi0, phi1, pos, center=0, other_center=1)
            errs.append(rep.isometry_error)
            viol.append(rep.mixed_violation)
        summary["geometry_max_isometry_error"] = float(max(errs))
        summary["geometry_min_mixed_violation"] = float(min(viol))
    if "cube_table" in p["suites"]:
        rows = bl.cube_baseline_rows(seed=seed)
        path = out / f"cube_table_s{seed}.csv"
        bl.write_cube_baseline_csv(path, rows)
        arts.append(path)
    if "temporal" in p["suites"]:
        rule = named_rule(p["temporal_rule"])
        rows = []
        for pats in p["temporal_patterns"]:
            ds = generate_dataset(rule, select_hidden(rule, patterns=pats), n_samples=p["temporal_samples"],
                                  seed=seed)
            for m in p["temporal_methods"]:
                res = bl.temporal_baseline_eval(ds, m, n_estimators=p["n_estimators"], seed=seed)
                rows.append({"hidden": str(pats), "method": m, "accuracy": res["accuracy"], "n_test": res["n_test"]})
        arts.append(_write_csv(out / f"temporal_s{seed}.csv", rows))
        summary["temporal"] = rows
    return arts, summary


def _run_gf2(p, seed, out):
    from .gf2 import identifiability_sweep, write_sweep_csv

    rows = identifiability_sweep(p["width"], tuple(p["hidden"]), tuple(p["timesteps_list"]), p["n_samples"], seed,
                                 p["rule"])
    path = out / f"identifiability_s{seed}.csv"
    write_sweep_csv(path, rows)
    return [path], {"rows": rows}


def _run_construct(p, seed, out):
    from .circuits import build_deep_circuit, build_single_block, verify_deep, verify_rule

    rules = list(range(256)) if p["rules"] == "all" else [int(r) for r in p["rules"]]
    rows, saved = [], []
    for w in p["widths"]:
        for f in rules:
            circ = build_single_block(f, w, rho=p["rho"], minimal=p["minimal"])
            rep = verify_rule(circ, f)
            rows.append({"kind": "single", "rules": str(f), "width": w, "exact": rep["exact"],
                         "one_hot": rep["one_hot"], "min_abs_logit": rep["min_abs_logit"]})
            if f in p["save_rules"]:
                saved.append(out / f"circuit_r{f}_w{w}.hgck")
                circ.save(saved[-1])
    rng = np.random.default_rng(seed)
    for i in range(p["deep_triples"]):
        triple = [int(v) for v in rng.integers(0, 256, size=3)]
        for w in p["deep_widths"]:
            circ = build_deep_circuit(triple, w, rho=p["rho"])
            rep = verify_deep(circ)
            rows.append({"kind": "deep", "rules": "-".join(map(str, triple)), "width": w, "exact": rep["exact"],
                         "one_hot": rep["one_hot"] and rep["invariants"], "min_abs_logit": rep["min_abs_logit"]})
            if i == 0:
                saved.append(out / f"circuit_deep_{rows[-1]['rules']}_w{w}.hgck")
                circ.save(saved[-1])
    path = _write_csv(out / f"construct_s{seed}.csv", rows)
    n_bad = sum(not (r["exact"] and r["one_hot"]) for r in rows)
    if n_bad:
        raise RuntimeError(f"{n_bad} constructed circuits failed verification")
    return [path, *saved], {"verified": len(rows), "saved": len(saved)}


def train_one(p: dict, seed: int, out: Path | None = None, progress=None) -> tuple[list[Path], dict]:
    """One training run: data, init, train, final evaluation; checkpoint and log when ``out`` is given."""
    from .ca_core import named_rule
    from .data import generate_dataset, output_bias
    from .model import TrainConfig, init_model, train
    from .transformer import ModelConfig

    rule = named_rule(p["rule"])
    hid = _hidden(rule, p)
    tr = generate_dataset(rule, hid, p["policy"], p["width"], p["timesteps"], p["n_train"], seed)
    te = generate_dataset(rule, hid, p["policy"], p["width"], p["timesteps"], p["n_test"], seed, split="test")
    cfg = ModelConfig(width=p["width"])
    tcfg = TrainConfig(mode=p["mode"], num_steps=p["num_steps"], epochs=p["epochs"], lr=p["lr"],
                       batch_size=p["batch_size"], seed=seed, dtype=p["dtype"], eval_samples=p["eval_samples"],
                       emb_init_std=p["emb_init_std"])
    params = init_model(cfg, seed, emb_std=p["emb_init_std"])
    ckpt = out / f"model_s{seed}.hgck" if out is not None else None
    params, log = train(params, cfg, tr, te, tcfg, progress=progress, checkpoint_path=ckpt)
    final = {k: v for k, v in log.final.items() if k != "per_pattern"}
    summary = {"status": log.status, "hidden": list(hid.patterns), "output_bias": output_bias(rule, hid),
               **final, "log": log.rows}
    arts = []
    if out is not None:
        from .checkpoint import save_checkpoint

        save_checkpoint(ckpt, params, {"model": cfg.to_dict(), "train": asdict(tcfg), "rule": rule.name,
                                       "rule_table": [int(v) for v in rule.table], "hidden": list(hid.patterns),
                                       "policy": p["policy"], "width": p["width"], "timesteps": p["timesteps"]})
        log_path = out / f"trainlog_s{seed}.csv"
        log.to_csv(log_path)
        arts = [ckpt, log_path]
    return arts, summary


def _epoch_logger(tag: str):
    def report(row):
        log.info("%s epoch %d loss %.4f supervised %s holdout %s", tag, row["epoch"], row["loss"],
                 _pct(row.get("supervised_acc")), _pct(row.get("holdout_acc")))
    return report


def _pct(v):
    return "-" if v is None else f"{100 * v:.1f}%"


def _run_train(p, seed, out):
    return train_one(p, seed, out, progress=_epoch_logger(f"{out.name} s{seed}"))


def _run_sweep(p, seed, out):
    arts, rows = [], []
    for k in p["k_values"]:
        sub = out / f"k{k}"
        sub.mkdir(exist_ok=True)
        a, s = train_one({**{x: v for x, v in p.items() if x != "k_values"}, "k": k}, seed, sub,
                         progress=_epoch_logger(f"{out.name} k{k} s{seed}"))
        arts += a
        rows.append({"k": k, "holdout_acc": s.get("holdout_acc"), "supervised_acc": s.get("supervised_acc"),
                     "status": s["status"]})
    arts.append(_write_csv(out / f"sweep_s{seed}.csv", rows))
    return arts, {"rows": rows}


def _run_analyze(p, seed, out):
    from . import mech
    from .ca_core import named_rule
    from .circuits import build_single_block
    from .data import generate_dataset, select_hidden

    rule = named_rule(p["rule"])
    if p["checkpoint"]:
        model = mech.load_model(p["checkpoint"])
        source = str(p["checkpoint"])
    else:
        model = build_single_block(rule, p["width"])
        source = "constructed circuit"
    ds = generate_dataset(rule, select_hidden(rule, patterns=p["patterns"]), width=p["width"],
                          n_samples=p["n_samples"], seed=seed, split="test")
    rep = mech.run_suite(model, ds, seed=seed, flip=p["flip"])
    rep["source"] = source
    path = _write_json(out / f"mech_s{seed}.json", rep)
    sweep = _write_csv(out / f"sweep_levels_s{seed}.csv", rep["sweep"])
    return [path, sweep], {k: rep[k] for k in ("holdout_acc", "ablation_final_layer", "lens_final",
                                               "probe_xor_embedding", "probe_xor_hidden", "polyfit_sign_ok",
                                               "source")}


def _run_symbolic(p, seed, out):
    from . import symbolic as sy

    rows, arts = [], []
    for h in p["holdouts"]:
        split = sy.generate_split(sy.SplitSpec(holdout=h, train_per_pair=p["train_per_pair"],
                                               test_per_pair=p["test_per_pair"], eval_per_pair=p["eval_per_pair"],
                                               fmt=p["format"], seed=seed))
        if p["write_files"]:
            d = out / f"data_{sy.pair_symbol(h).replace('|', 'bar')}_s{seed}"
            sy.write_split_files(split, d)
            arts += sorted(d.iterdir())
        for m in p["methods"]:
            kw = {"epochs": p["mlp_epochs"]} if m == "mlp" else {}
            r = sy.baseline_eval(split, m, seed=seed, **kw)
            rows.append(r)
    arts.append(_write_csv(out / f"symbolic_s{seed}.csv", rows))
    return arts, {"rows": rows}


HANDLERS = {"generate": _run_generate, "baselines": _run_baselines, "gf2": _run_gf2, "construct": _run_construct,
            "train": _run_train, "analyze": _run_analyze, "symbolic": _run_symbolic, "sweep": _run_sweep}


def run_experiment(cfg: dict, root: Path | None = None) -> dict:
    """Run a parsed config; returns the manifest (status ``ok`` or ``failed``)."""
    root = out_root() if root is None else Path(root)
    out = root / cfg["name"]
    out.mkdir(parents=True, exist_ok=True)
    cfg_path = _write_json(out / "config.json", cfg)
    manifest = {"config_hash": config_hash(cfg), "version": __version__, "kind": cfg["kind"], "status": "ok",
                "config": cfg_path.name, "seeds": {}, "error": None}
    t0 = time.perf_counter()
    try:
        for seed in cfg["seeds"]:
            arts, summary = HANDLERS[cfg["kind"]](cfg["params"], seed, out)
            summary = {k: v for k, v in summary.items() if k != "log"}
            manifest["seeds"][str(seed)] = {"artifacts": [str(Path(a).relative_to(out)) for a in arts],
                                            "summary": summary}
    except Exception as exc:  # recorded in the manifest, reported as exit status 1
        manifest["status"] = "failed"
        manifest["error"] = {"type": type(exc).__name__, "message": str(exc),
                             "key": getattr(exc, "key", None), "traceback": traceback.format_exc()}
    manifest["wall_clock_seconds"] = time.perf_counter() - t0
    _write_json(out / "manifest.json", manifest)
    return manifest


# -- presets -------------------------------------------------------------------------


def preset_dir() -> Path:
    return Path(__file__).parent / "presets"


def preset_names() -> list[str]:
    return sorted(p.stem for p in preset_dir().glob("*.json"))


def load_preset(name: str) -> dict:
    path = preset_dir() / f"{name}.json"
    if not path.exists():
        raise ConfigError(f"unknown preset {name!r}; known: {preset_names()}", "preset")
    return load_config(path)
