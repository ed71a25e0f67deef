"""Command line: synth | train | eval | ablate.

Every command resolves its configuration (preset, then JSON file, then flags)
and validates it before touching the filesystem. Exit codes: 0 success,
1 invalid configuration or arguments, 2 failure while running.
"""
import argparse
import csv
import json
import logging
import shutil
import sys
from pathlib import Path
from typing import Callable, List, Optional

import numpy as np

from .config import PRESETS, ConfigError, RunConfig, load_config, save_config
from .events import load_dataset, read_manifest, save_dataset, synth_dataset

log = logging.getLogger("cmtc")

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    """Invalid arguments or inputs, detected before any work starts."""


# -- configuration ----------------------------------------------------------------

def _parse_set(items: Optional[List[str]]) -> dict:
    """``--set train.lr=0.001`` style overrides; values are parsed as JSON when possible."""
    out = {}
    for item in items or []:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def resolve_config(args, **flags) -> RunConfig:
    cfg = load_config(args.config, args.preset)
    cfg = cfg.override(**_parse_set(args.set))
    return cfg.override(**flags)


def _with_dataset(cfg: RunConfig, data_dir: Path) -> RunConfig:
    """Replace the dataset section with the one recorded in the dataset manifest."""
    try:
        manifest = read_manifest(data_dir)
    except FileNotFoundError as exc:
        raise UsageError(f"{exc}; run 'cmtc synth' first") from None
    return cfg.from_dict({"data": manifest["config"]}, base=cfg)


def _check_out_dir(out: Path, force: bool, resume: bool = False) -> None:
    if out.exists() and not out.is_dir():
        raise UsageError(f"output path {out} exists and is not a directory")
    if out.exists() and any(out.iterdir()) and not (force or resume):
        raise UsageError(f"output directory {out} is not empty; pass --force to overwrite")


def _fresh_dir(out: Path, force: bool) -> None:
    if force and out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True, exist_ok=True)


def _load_split(cfg: RunConfig, data_dir: Path):
    from .data import prepare_split
    return prepare_split(load_dataset(data_dir), cfg.seed, cfg.data.clip_len, cfg.data.t_window, cfg.train.c_max,
                         dtype=np.dtype(cfg.train.dtype))


# -- commands ---------------------------------------------------------------------
# Each command returns a zero-argument callable holding the side effects, so
# that every check has happened by the time anything is written.

def cmd_synth(args) -> Callable[[], None]:
    cfg = resolve_config(args, **{"data.seed": args.seed}).validate()
    out = Path(args.out)
    _check_out_dir(out, args.force)

    def run():
        clips = synth_dataset(cfg.data)
        _fresh_dir(out, args.force)
        save_dataset(clips, out, cfg.data)
        log.info("wrote %d clips to %s", len(clips), out)
        print(f"synth: {len(clips)} clips -> {out}")

    return run


def _train_flags(args) -> dict:
    return {"seed": args.seed, "ablation": args.ablation, "train.epochs": args.epochs}


def cmd_train(args) -> Callable[[], None]:
    data_dir, out = Path(args.data), Path(args.out)
    cfg = _with_dataset(resolve_config(args, **_train_flags(args)), data_dir).validate()
    _check_out_dir(out, args.force, args.resume)
    if args.resume and (out / "config.json").exists():
        saved = RunConfig.from_dict(json.loads((out / "config.json").read_text()))
        if saved.override(**{"train.epochs": cfg.train.epochs}) != cfg:
            raise UsageError(f"--resume: configuration differs from the one saved in {out / 'config.json'}")

    def run():
        from .reid import train
        from .reid.evaluate import evaluate, write_report
        train_set, query, gallery = _load_split(cfg, data_dir)
        if not args.resume:
            _fresh_dir(out, args.force)
        out.mkdir(parents=True, exist_ok=True)
        save_config(cfg, out / "config.json")
        result = train(cfg, train_set, query, gallery, out_dir=out, resume=args.resume,
                       cache_dir=Path(args.cache_dir) if args.cache_dir else None)
        report, dist, q_emb, g_emb = evaluate(result.model, query, gallery)
        write_report(out / "eval", report, dist, query, gallery, q_emb, g_emb)
        print(f"train: {cfg.ablation} seed {cfg.seed} rank1 {report.rank1:.4f} mAP {report.mAP:.4f} -> {out}")

    return run


def cmd_eval(args) -> Callable[[], None]:
    from .reid.train import latest_checkpoint
    run_dir = Path(args.run)
    if not (run_dir / "config.json").exists():
        raise UsageError(f"no config.json in run directory {run_dir}")
    try:
        cfg = RunConfig.from_dict(json.loads((run_dir / "config.json").read_text()))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{run_dir / 'config.json'} is not valid JSON: {exc}") from None
    data_dir = Path(args.data)
    cfg = _with_dataset(cfg, data_dir).validate()
    ckpt = Path(args.checkpoint) if args.checkpoint else latest_checkpoint(run_dir)
    if ckpt is None or not ckpt.exists():
        raise UsageError(f"checkpoint not found: {ckpt or run_dir / 'checkpoints'}")
    out = Path(args.out) if args.out else run_dir / "eval"
    if args.out:
        _check_out_dir(out, args.force)

    def run():
        from .reid.evaluate import evaluate, write_report
        from .reid.train import build_model, load_model_state
        from .tensor import get_default_dtype, load_checkpoint, set_default_dtype
        train_set, query, gallery = _load_split(cfg, data_dir)
        previous = get_default_dtype()
        set_default_dtype(np.dtype(cfg.train.dtype))
        try:
            model = build_model(cfg, len(np.unique(train_set.person_ids)))
            load_model_state(model, load_checkpoint(ckpt))
            report, dist, q_emb, g_emb = evaluate(model, query, gallery)
        finally:
            set_default_dtype(previous)
        if args.out:
            _fresh_dir(out, args.force)
        write_report(out, report, dist, query, gallery, q_emb, g_emb)
        print(f"eval: {ckpt.name} rank1 {report.rank1:.4f} rank5 {report.rank5:.4f} "
              f"rank10 {report.rank10:.4f} mAP {report.mAP:.4f} -> {out}")

    return run


def write_ablation_table(rows: List[dict], seeds: List[int], path: Path) -> None:
    """One row per ablation in table order; one rank-1 and one mAP column per seed, plus medians."""
    fields = (["config", "eventnet", "mc", "tc"] + [f"rank1_seed{s}" for s in seeds] + ["rank1_median"]
              + [f"map_seed{s}" for s in seeds] + ["map_median"])
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, float) else v) for k, v in row.items()})


def read_ablation_table(path: Path) -> List[dict]:
    with open(path, newline="") as fh:
        return [{k: (v if k == "config" else float(v)) for k, v in row.items()} for row in csv.DictReader(fh)]


def cmd_ablate(args) -> Callable[[], None]:
    from .reid.model import ABLATIONS
    data_dir, out = Path(args.data), Path(args.out)
    base = _with_dataset(resolve_config(args, **{"train.epochs": args.epochs, "seeds": args.seeds,
                                                 "seed": args.seed}), data_dir).validate()
    seeds = list(range(base.seed, base.seed + base.seeds))
    configs = {(name, s): base.override(ablation=name, seed=s).validate() for name in ABLATIONS for s in seeds}
    _check_out_dir(out, args.force, args.resume)

    def run():
        from .reid import train
        if not args.resume:
            _fresh_dir(out, args.force)
        out.mkdir(parents=True, exist_ok=True)
        save_config(base, out / "config.json")
        cache = Path(args.cache_dir) if args.cache_dir else out / "eventnet_cache"
        results = {}
        for s in seeds:
            split = _load_split(base.override(seed=s), data_dir)
            for name in ABLATIONS:
                cfg = configs[name, s]
                run_dir = out / "runs" / f"{name}_seed{s}"
                run_dir.mkdir(parents=True, exist_ok=True)
                save_config(cfg, run_dir / "config.json")
                res = train(cfg, *split, out_dir=run_dir, resume=args.resume, cache_dir=cache)
                results[name, s] = res.report
                print(f"ablate: {name} seed {s} rank1 {res.report.rank1:.4f} mAP {res.report.mAP:.4f}")
        rows = []
        for name, abl in ABLATIONS.items():
            r1 = [results[name, s].rank1 for s in seeds]
            mp = [results[name, s].mAP for s in seeds]
            row = {"config": name, "eventnet": int(abl.use_eventnet), "mc": int(abl.use_mc), "tc": int(abl.use_tc)}
            row.update({f"rank1_seed{s}": v for s, v in zip(seeds, r1)}, rank1_median=float(np.median(r1)))
            row.update({f"map_seed{s}": v for s, v in zip(seeds, mp)}, map_median=float(np.median(mp)))
            rows.append(row)
        write_ablation_table(rows, seeds, out / "ablation.csv")
        print(f"ablate: table -> {out / 'ablation.csv'}")

    return run


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON config file applied on top of the preset")
    common.add_argument("--preset", choices=list(PRESETS), default="desk")
    common.add_argument("--seed", type=int, help="random seed (dataset seed for synth, run seed otherwise)")
    common.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override any config field, e.g. train.lr=0.001 (repeatable)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = argparse.ArgumentParser(prog="cmtc", description="Event-based video person re-identification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic event dataset")
    p.add_argument("--out", required=True, help="dataset directory")

    p = sub.add_parser("train", parents=[common], help="train one configuration")
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--data", required=True, help="dataset directory written by synth")
    p.add_argument("--ablation", help="baseline | eventnet | eventnet_mc | eventnet_tc | full")
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --out")
    p.add_argument("--cache-dir", help="share pretrained EventNet weights between runs")

    p = sub.add_parser("eval", parents=[common], help="evaluate a trained run")
    p.add_argument("--run", required=True, help="run directory written by train")
    p.add_argument("--data", required=True, help="dataset directory written by synth")
    p.add_argument("--checkpoint", help="checkpoint file (default: latest in the run)")
    p.add_argument("--out", help="output directory (default: <run>/eval)")

    p = sub.add_parser("ablate", parents=[common], help="train the five ablation rows over several seeds")
    p.add_argument("--out", required=True, help="output directory for the table and every run")
    p.add_argument("--data", required=True, help="dataset directory written by synth")
    p.add_argument("--seeds", type=int, help="number of consecutive seeds, starting at --seed")
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", action="store_true", help="continue unfinished runs in --out")
    p.add_argument("--cache-dir", help="EventNet cache (default: <out>/eventnet_cache)")
    return parser


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "eval": cmd_eval, "ablate": cmd_ablate}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        run = COMMANDS[args.command](args)
    except (ConfigError, UsageError, ValueError) as exc:
        print(f"cmtc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    try:
        run()
    except KeyboardInterrupt:
        raise
    except Exception as exc:  # report, do not dump a traceback at the user
        log.debug("failure", exc_info=True)
        print(f"cmtc {args.command}: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
