"""Command-line entry point: ``khangcl {pretrain,eval,ckfi-report,verify,synth}``.

Exit codes: 0 success, 1 verification failure, 2 usage or config error,
3 missing or malformed data.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .ckfi import ckfi_scores
from .encoder import load_checkpoint, save_checkpoint
from .errors import ConfigError, ConvergenceError, DataError, ShapeError
from .graphs import find_dataset_name, parse_tu_dataset, synth_two_class, write_tu_dataset
from .train import TrainConfig, featurize, linear_probe_eval, pretrain

EXIT_OK, EXIT_VERIFY, EXIT_USAGE, EXIT_DATA = 0, 1, 2, 3

# CLI flag -> TrainConfig field, applied on top of --config
OVERRIDES = {
    "epochs": "epochs",
    "seed": "seed",
    "batch_size": "batch_size",
    "lr": "lr",
    "tau": "tau",
    "eps_delta": "eps_delta",
    "eps_rho": "eps_rho",
    "sigma_delta": "sigma_delta",
    "sigma_rho": "sigma_rho",
    "ckfi_refresh_every": "ckfi_refresh_every",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits on its own; route through run() so the exit code is ours
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="khangcl", description="KAN-based graph contrastive learning toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    pt = sub.add_parser("pretrain", help="contrastive pretraining on a TU-format dataset")
    pt.add_argument("--data", required=True, help="dataset directory")
    pt.add_argument("--config", help="TrainConfig JSON file")
    pt.add_argument("--out", default="checkpoint", help="checkpoint directory (default: checkpoint)")
    pt.add_argument("--metrics", help="metrics JSON-lines path (default: OUT/metrics.jsonl)")
    pt.add_argument("--epochs", type=int)
    pt.add_argument("--seed", type=int)
    pt.add_argument("--batch-size", type=int)
    pt.add_argument("--lr", type=float)
    pt.add_argument("--tau", type=float)
    pt.add_argument("--eps-delta", type=float)
    pt.add_argument("--eps-rho", type=float)
    pt.add_argument("--sigma-delta", type=float)
    pt.add_argument("--sigma-rho", type=float)
    pt.add_argument("--ckfi-refresh-every", type=int)
    pt.add_argument("--no-hard-negatives", action="store_true",
                    help="ablation: set all perturbation scales to zero")
    pt.add_argument("--shared-sign", action="store_true",
                    help="one Rademacher sign for both perturbations")
    pt.add_argument("--no-timing", action="store_true", help="write wall_ms as 0")

    ev = sub.add_parser("eval", help="linear-probe accuracy of a checkpoint")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--seed", type=int, default=0, help="probe split seed")

    ck = sub.add_parser("ckfi-report", help="CKFI scores of a checkpoint's last encoder layer")
    ck.add_argument("--ckpt", required=True)
    ck.add_argument("--raw", action="store_true", help="skip max-normalisation")

    vf = sub.add_parser("verify", help="run the property suites")
    vf.add_argument("--filter", help="only run suites whose name contains this string")

    sy = sub.add_parser("synth", help="write a synthetic two-class TU dataset")
    sy.add_argument("--out", required=True)
    sy.add_argument("--n", type=int, default=200)
    sy.add_argument("--seed", type=int, default=0)
    sy.add_argument("--name", default="SYNTH")
    return p


def _load_dataset(directory):
    directory = Path(directory)
    return parse_tu_dataset(directory, find_dataset_name(directory))


def _train_config(args) -> TrainConfig:
    base = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise DataError("config file not found", path)
        try:
            base = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from None
        if not isinstance(base, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
    for flag, key in OVERRIDES.items():
        value = getattr(args, flag)
        if value is not None:
            base[key] = value
    if args.no_hard_negatives:
        base.update(eps_delta=0.0, eps_rho=0.0, sigma_delta=0.0, sigma_rho=0.0)
    if args.shared_sign:
        base["shared_sign"] = True
    if args.no_timing:
        base["record_timing"] = False
    try:
        return TrainConfig.from_dict(base)
    except TypeError as exc:
        raise ConfigError(f"invalid config value: {exc}") from None


def cmd_pretrain(args) -> int:
    cfg = _train_config(args)
    graphs = featurize(_load_dataset(args.data), cfg)
    out = Path(args.out)
    metrics_path = Path(args.metrics) if args.metrics else out / "metrics.jsonl"
    metrics_path.parent.mkdir(parents=True, exist_ok=True)
    with metrics_path.open("w") as fh:
        def write(rec):
            fh.write(json.dumps(rec) + "\n")
            fh.flush()

        trainer, _ = pretrain(graphs, cfg, on_epoch=write)
    extra = {
        "features": cfg.features,
        "degree_cap": cfg.degree_cap,
        "in_dim": int(graphs[0].X.shape[1]),
        "config": cfg.to_dict(),
    }
    save_checkpoint(out, trainer.enc, trainer.head, extra)
    return EXIT_OK


def cmd_eval(args) -> int:
    enc, _, manifest = load_checkpoint(args.ckpt)
    graphs = _load_dataset(args.data)
    feats = [
        g for g in
        featurize(graphs, TrainConfig(features=manifest.get("features", "degree_onehot"),
                                      degree_cap=manifest.get("degree_cap", 10)))
    ]
    width = feats[0].X.shape[1]
    if width != enc.in_dim:
        raise DataError(f"dataset features have width {width}, checkpoint expects {enc.in_dim}",
                        args.data)
    acc = linear_probe_eval(enc, feats, args.seed)
    print(json.dumps({"accuracy": acc, "n_graphs": len(feats), "seed": args.seed}, sort_keys=True))
    return EXIT_OK


def cmd_ckfi_report(args) -> int:
    enc, _, _ = load_checkpoint(args.ckpt)
    C = enc.layers[-1].C
    scores = ckfi_scores(C, "full", normalize=not args.raw)
    print(json.dumps(scores.to_json(C.shape), sort_keys=True))
    return EXIT_OK


def cmd_verify(args) -> int:
    from .verify import run_suites

    results = run_suites(args.filter)
    if not results:
        raise UsageError(f"no suite matches filter {args.filter!r}")
    for r in results:
        print(json.dumps({"suite": r.name, "passed": r.passed, "detail": r.detail}))
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} of {len(results)} suites failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_VERIFY
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.n < 2:
        raise ConfigError(f"--n must be at least 2, got {args.n}")
    write_tu_dataset(synth_two_class(args.n, args.seed), args.out, args.name)
    return EXIT_OK


COMMANDS = {
    "pretrain": cmd_pretrain,
    "eval": cmd_eval,
    "ckfi-report": cmd_ckfi_report,
    "verify": cmd_verify,
    "synth": cmd_synth,
}


def run(argv: Optional[List[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s", stream=sys.stderr)
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ShapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc.filename or ''}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_DATA
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERIFY


def main() -> None:
    sys.exit(run())
