"""Command-line entry point: ``mtaffect {gen-data,train,eval,ablate,grad-check}``."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import checks, plotting
from .config import ConfigError, dump_config, load_config
from .data import DataFormatError, build_dataset, read_jsonl, write_jsonl
from .model import load_checkpoint, save_checkpoint
from .trainer import (ABLATION_FIELDS, HISTORY_FIELDS, MODES, TrainConfig, evaluate,
                      normalize_mode, run_ablation, train)

logger = logging.getLogger("mtaffect")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def _config(path: Optional[str]) -> TrainConfig:
    return load_config(path) if path else TrainConfig().validate()


def write_csv(path, rows, fieldnames):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n", extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in fieldnames})


def cmd_gen_data(args) -> int:
    cfg = _config(args.config)
    samples = build_dataset(cfg.data)
    write_jsonl(samples, args.out)
    logger.info("wrote %d samples to %s", len(samples), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args.config)
    if args.mode:
        cfg.mode = normalize_mode(args.mode)
    if args.data:
        cfg.dataset_path = args.data
    if args.eval_teacher:
        cfg.eval_teacher = True
    cfg.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    res = train(cfg)
    write_csv(out / "metrics.csv", res.history, HISTORY_FIELDS)
    save_checkpoint(out / "checkpoint.npz", res.trainer.student,
                    {"mode": cfg.mode, "role": "student"})
    if cfg.uses_teacher:
        t = res.trainer.teacher
        save_checkpoint(out / "teacher.npz", t.params,
                        {"mode": cfg.mode, "role": "teacher", "eta": t.eta, "step": t.step})
    dump_config(cfg, out / "config.yaml")
    plotting.plot_history(res.history, out / "curves.png", title=f"mode={cfg.mode}")
    (out / "final.csv").write_text(res.final.to_csv())
    print(res.final.pretty())
    return EXIT_OK


def cmd_eval(args) -> int:
    params, header = load_checkpoint(args.checkpoint)
    samples = read_jsonl(args.data)
    report = evaluate(params, samples, use_selfcure=header.get("mode") == "mt-sc")
    text = report.to_csv()
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _config(args.config)
    if args.data:
        cfg.dataset_path = args.data
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"--seeds must be comma-separated integers: {args.seeds!r}") from exc
    if args.expr_label_noise is not None:
        cfg.expr_label_noise = args.expr_label_noise
    cfg.validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = run_ablation(cfg, seeds, args.modes.split(",") if args.modes else MODES)
    write_csv(out / "ablation.csv", rows, ABLATION_FIELDS)
    summary = plotting.summarize_ablation(rows)
    summary_rows = [{"mode": m, **{s: round(v[0], 4) for s, v in sc.items()},
                     **{f"{s}_std": round(v[1], 4) for s, v in sc.items()}}
                    for m, sc in summary.items()]
    write_csv(out / "summary.csv", summary_rows,
              ["mode", *plotting.SCORES, *(f"{s}_std" for s in plotting.SCORES)])
    plotting.plot_ablation(rows, out / "ablation.png",
                           title=f"seeds {args.seeds}, expr noise {cfg.expr_label_noise:g}")
    for r in summary_rows:
        print(f"{r['mode']:<9} M_Expr={r['m_expr']:.4f}  M_VA={r['m_va']:.4f}  M_AU={r['m_au']:.4f}")
    return EXIT_OK


def cmd_grad_check(args) -> int:
    ok = True
    for name, report in checks.run_all(args.tolerance):
        print(f"[{'PASS' if report.passed else 'FAIL'}] {name}")
        for line in str(report).splitlines():
            print("    " + line)
        ok &= report.passed
    return EXIT_OK if ok else EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mtaffect", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic JSONL dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train one mode; writes checkpoint, metrics.csv, curves.png")
    t.add_argument("--config")
    t.add_argument("--mode", choices=MODES)
    t.add_argument("--data", help="JSONL dataset (overrides the config's generator)")
    t.add_argument("--eval-teacher", action="store_true")
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a checkpoint on a JSONL dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="baseline / mt / mt-sc over several seeds")
    a.add_argument("--config")
    a.add_argument("--seeds", default="1,2,3")
    a.add_argument("--modes", help="comma-separated subset of modes")
    a.add_argument("--data")
    a.add_argument("--expr-label-noise", type=float)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("grad-check", help="finite-difference check of model and losses")
    c.add_argument("--tolerance", type=float, default=checks.TOLERANCE)
    c.set_defaults(func=cmd_grad_check)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataFormatError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        logger.exception("runtime failure")
        print(f"runtime failure: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
