"""Command-line entry points: training, model comparison, estimation, sweeps."""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace

import numpy as np

from .experiments import (
    ExperimentConfig,
    read_config,
    run_experiment,
    sweep_tradeoff,
    write_sweep_csv,
    write_trace_csv,
)
from .trainer_naive import read_model, train_naive, write_model
from .trainer_structured import train_structured

log = logging.getLogger("lgshmm")


def _config(path) -> ExperimentConfig:
    return read_config(path) if path else ExperimentConfig()


def _train_naive(args) -> int:
    cfg = _config(args.config)
    hmm = train_naive(cfg.ssm(), cfg.grid(), cfg.naive_loops, cfg.naive_chunk, seed=args.seed)
    write_model(hmm, args.out)
    log.info("wrote %s (A nnz %d, C nnz %d)", args.out, hmm.transition.nnz, hmm.measurement.nnz)
    return 0


def _train_structured(args) -> int:
    cfg = _config(args.config)
    hmm = train_structured(cfg.ssm(), cfg.grid(), cfg.structured_loops, seed=args.seed, shift_rule=cfg.shift_rule)
    write_model(hmm, args.out)
    log.info("wrote %s (kept %d of %d runs)", args.out, hmm.training.sample_count, cfg.structured_loops)
    return 0


def _compare(args) -> int:
    a = read_model(args.a).transition.tocsc()
    b = read_model(args.b).transition.tocsc()
    if a.shape != b.shape:
        raise SystemExit(f"models differ in shape: {a.shape} vs {b.shape}")
    tv = 0.5 * np.asarray(abs(a - b).sum(axis=0)).ravel()
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["col_index", "tv"])
        for j, d in enumerate(tv, 1):
            w.writerow([j, repr(float(d))])
        w.writerow([])
        w.writerow(["col_index", "row_index", "value_a", "value_b"])
        cols = np.argsort(-tv)[: args.overlay] if args.overlay else range(a.shape[1])
        for j in sorted(int(c) for c in cols):
            rows = np.union1d(a[:, j].indices, b[:, j].indices)
            for i in rows:
                w.writerow([j + 1, int(i) + 1, repr(float(a[i, j])), repr(float(b[i, j]))])
    log.info("max column TV %.4f, mean %.4f", tv.max(), tv.mean())
    return 0


def _estimate(args) -> int:
    cfg = replace(_config(args.ssm), delta=args.delta, lam=args.lam, horizon=args.steps)
    grid = cfg.grid()
    hmm = read_model(args.model, grid)
    res = run_experiment(cfg, {"naive": hmm}, sim_seed=args.seed, channel_seed=args.seed + 1, keep_traces=True)
    write_trace_csv(res, args.out, model_key="naive")
    print(f"eta={res.eta:.6f} E_K={res.E_K:.6f} E_H={res.E_Hplus:.6f}")
    return 0


def _sweep(args) -> int:
    cfg = _config(args.config)
    grid = cfg.grid()
    models = {"naive": read_model(args.model_naive, grid), "structured": read_model(args.model_structured, grid)}
    deltas = np.array([float(v) for v in args.deltas.split(",")]) if args.deltas else None
    results = sweep_tradeoff(cfg, models, deltas, args.repetitions)
    write_sweep_csv(results, args.out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lgshmm", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    for name, fn in (("train-naive", _train_naive), ("train-structured", _train_structured)):
        s = sub.add_parser(name, help=f"{name.split('-')[1]} HMM training")
        s.add_argument("--config")
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--out", required=True)
        s.set_defaults(func=fn)

    s = sub.add_parser("compare-models", help="per-column TV distances and overlay data")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--overlay", type=int, default=20, help="columns with overlay rows (0 = all)")
    s.set_defaults(func=_compare)

    s = sub.add_parser("estimate", help="one filtered trajectory as a trace CSV")
    s.add_argument("--model", required=True)
    s.add_argument("--ssm")
    s.add_argument("--delta", type=float, required=True)
    s.add_argument("--lambda", dest="lam", type=float, required=True)
    s.add_argument("--steps", type=int, default=10_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=_estimate)

    s = sub.add_parser("sweep", help="rate/error tradeoff CSV")
    s.add_argument("--config")
    s.add_argument("--model-naive", required=True)
    s.add_argument("--model-structured", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--deltas", help="comma-separated thresholds (default: 40 log-spaced)")
    s.add_argument("--repetitions", type=int)
    s.set_defaults(func=_sweep)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
