"""Command-line entry point.

    hardgap run <config.json>
    hardgap preset <name>
    hardgap list
    hardgap verify <checkpoint>

Outputs go under ``$HARDGAP_OUT`` (default ``./hardgap_out``).  Exit codes:
0 ok, 1 experiment failed, 2 config invalid.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import experiments as ex

EXIT_OK, EXIT_FAILED, EXIT_CONFIG = 0, 1, 2


def _error_record(kind: str, message: str, key=None) -> None:
    print(json.dumps({"error": kind, "message": message, "key": key}), file=sys.stderr)


def _execute(cfg: dict) -> int:
    manifest = ex.run_experiment(cfg)
    out = ex.out_root() / cfg["name"]
    if manifest["status"] != "ok":
        err = manifest["error"]
        _error_record("experiment_failed", err["message"], err.get("key"))
        return EXIT_FAILED
    print(json.dumps({"status": "ok", "output": str(out), "config_hash": manifest["config_hash"]}))
    return EXIT_OK


def cmd_run(args) -> int:
    try:
        cfg = ex.load_config(args.config)
    except FileNotFoundError:
        _error_record("config_invalid", f"no such file: {args.config}")
        return EXIT_CONFIG
    except ex.ConfigError as exc:
        _error_record("config_invalid", str(exc), exc.key)
        return EXIT_CONFIG
    return _execute(cfg)


def cmd_preset(args) -> int:
    try:
        cfg = ex.load_preset(args.name)
    except ex.ConfigError as exc:
        _error_record("config_invalid", str(exc), exc.key)
        return EXIT_CONFIG
    return _execute(cfg)


def cmd_list(args) -> int:
    for name in ex.preset_names():
        cfg = ex.load_preset(name)
        print(f"{name}\t{cfg['kind']}")
    return EXIT_OK


def cmd_verify(args) -> int:
    """Re-check a checkpoint: circuits exactly, trained models on a fresh test split."""
    import numpy as np

    from .checkpoint import load_checkpoint

    try:
        params, meta = load_checkpoint(args.checkpoint)
    except (OSError, ValueError) as exc:
        _error_record("config_invalid", str(exc))
        return EXIT_CONFIG
    from .transformer import ModelConfig

    cfg = ModelConfig.from_dict(meta["model"])
    if "circuit" in meta:
        from .ca_core import Rule
        from .circuits import Circuit, verify_deep, verify_rule

        rules = tuple(Rule(1, np.array(t, dtype=np.uint8)) for t in meta["circuit"]["rules"])
        circ = Circuit(cfg, params, rules, meta["circuit"]["kind"], meta["circuit"]["blocks"])
        mode = "exhaustive" if cfg.width <= 12 else "random"
        rep = verify_deep(circ, mode=mode) if len(rules) > 1 else verify_rule(circ, rules[0], mode=mode)
        ok = bool(rep["exact"])
        print(json.dumps({"kind": "circuit", "exact": ok, "one_hot": bool(rep["one_hot"])}))
        return EXIT_OK if ok else EXIT_FAILED
    if "rule_table" not in meta:
        _error_record("config_invalid", "checkpoint carries neither circuit nor training metadata")
        return EXIT_CONFIG
    from .ca_core import Rule
    from .data import HiddenSet, generate_dataset
    from .model import evaluate

    rule = Rule(_rule_radius(meta), np.array(meta["rule_table"], dtype=np.uint8), meta.get("rule"))
    ds = generate_dataset(rule, HiddenSet(rule.radius, tuple(meta["hidden"])), meta["policy"], meta["width"],
                          meta["timesteps"], args.samples, seed=args.seed, split="eval")
    res = evaluate(params, cfg, ds)
    print(json.dumps({"kind": "trained", "supervised_acc": res["supervised_acc"],
                      "holdout_acc": res["holdout_acc"]}))
    return EXIT_OK


def _rule_radius(meta: dict) -> int:
    n = len(meta["rule_table"])
    return {8: 1, 32: 2}[n]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hardgap", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.set_defaults(fn=cmd_run)
    p = sub.add_parser("preset", help="run a shipped preset")
    p.add_argument("name")
    p.set_defaults(fn=cmd_preset)
    p = sub.add_parser("list", help="list presets")
    p.set_defaults(fn=cmd_list)
    p = sub.add_parser("verify", help="re-verify a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--samples", type=int, default=500)
    p.add_argument("--seed", type=int, default=12345)
    p.set_defaults(fn=cmd_verify)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s", datefmt="%H:%M:%S", stream=sys.stderr)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
