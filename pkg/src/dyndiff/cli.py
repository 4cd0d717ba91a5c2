"""Command-line entry point: ``dyndiff {synth,train,forecast,evaluate,hist}``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import replace

import numpy as np

from dyndiff import plotting
from dyndiff.checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from dyndiff.config import ConfigError, RunConfig, load_config
from dyndiff.data import DataError, SYNTH_KINDS, load_csv, standardize, synth_generate, write_csv
from dyndiff.evaluation import (
    comparison_rows,
    histogram_table,
    oracle_ensembles,
    score,
    summarize_trials,
)
from dyndiff.forecasting import Forecaster, ModelConfig, TrainConfig, iterative_forecast
from dyndiff.pipeline import evaluate_frame, fit, make_test_windows, prepare

log = logging.getLogger("dyndiff")


class UsageError(Exception):
    pass


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(x):
    return repr(float(x))


def _overrides(args):
    out = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _run_config(args, extra=None):
    overrides = _overrides(args)
    overrides.update(extra or {})
    return load_config(getattr(args, "config", None), overrides)


def _config_from_checkpoint(ckpt, base: RunConfig = None) -> RunConfig:
    cfg = base or RunConfig()
    cfg = replace(cfg, model=ModelConfig(**ckpt.config["model"]), train=TrainConfig(**ckpt.config["train"]))
    data = ckpt.config.get("data", {})
    cfg.data = replace(cfg.data, split=tuple(data.get("split", cfg.data.split)),
                       targets=data.get("targets", cfg.data.targets))
    return cfg


# ------------------------------------------------------------------ commands


def cmd_synth(args):
    frame = synth_generate(args.kind, args.length, args.seed)
    write_csv(frame, args.out)
    return 0


def cmd_train(args):
    extra = {}
    if args.seed is not None:
        extra["train.seed"] = args.seed
    if args.steps is not None:
        extra["train.steps"] = args.steps
    if args.unconditional:
        extra["train.unconditional"] = True
    if args.targets:
        extra["data.targets"] = args.targets
    cfg = _run_config(args, extra)
    frame = load_csv(args.data, cfg.data.targets)
    ckpt = fit(frame, cfg)
    os.makedirs(args.out, exist_ok=True)
    save_checkpoint(ckpt, os.path.join(args.out, "checkpoint.ckpt"))
    _write_rows(os.path.join(args.out, "train_log.csv"), ["step", "loss", "grad_norm"],
                [(s, _num(l), _num(g)) for s, l, g in ckpt.history])
    if ckpt.val_history:
        _write_rows(os.path.join(args.out, "val_log.csv"), ["step", "val_loss"],
                    [(s, _num(l)) for s, l in ckpt.val_history])
    plotting.loss_curve(ckpt.history, os.path.join(args.out, "train_loss.png"), ckpt.val_history)
    print(f"trained {len(ckpt.history)} steps; final loss {ckpt.history[-1][1]:.4f}")
    return 0


def _load_model_data(args):
    ckpt = load_checkpoint(args.checkpoint)
    fc = Forecaster.from_checkpoint(ckpt)
    frame = load_csv(args.data, fc.targets)
    if list(frame.names) != fc.names:
        raise DataError(f"data columns {frame.names} do not match the checkpoint's {fc.names}")
    return ckpt, fc, frame


def cmd_forecast(args):
    cfg = _run_config(args)
    K = args.samples if args.samples is not None else cfg.forecast.samples
    P = args.horizon if args.horizon is not None else cfg.forecast.horizon
    seed = args.seed if args.seed is not None else cfg.forecast.seed
    ckpt, fc, frame = _load_model_data(args)
    origin = frame.t - 1 if args.origin is None else args.origin
    c = fc.context
    if not c - 1 <= origin < frame.t:
        raise DataError(f"origin {origin} needs {c} context steps inside a {frame.t}-step series")
    std = standardize(frame, fc.stats)
    X = std.values[:, origin - c + 1: origin + 1]
    ens = iterative_forecast(X, fc, P, K, seed, origin)

    os.makedirs(args.out, exist_ok=True)
    rows = [(k, var, h + 1, _num(ens.samples[k, v, h]))
            for k in range(ens.K) for v, var in enumerate(ens.variable_names) for h in range(P)]
    _write_rows(os.path.join(args.out, "ensemble.csv"), ["path_id", "variable", "step", "value"], rows)
    if args.point:
        point = ens.samples.mean(axis=0)
        _write_rows(os.path.join(args.out, "point.csv"), ["variable", "step", "value"],
                    [(var, h + 1, _num(point[v, h])) for v, var in enumerate(ens.variable_names) for h in range(P)])
    truth = None
    if origin + P < frame.t:
        truth = frame.values[fc.target_index, origin + 1: origin + 1 + P]
        _write_rows(os.path.join(args.out, "truth.csv"), ["variable", "step", "value"],
                    [(var, h + 1, _num(truth[v, h])) for v, var in enumerate(ens.variable_names) for h in range(P)])
    plotting.fan_chart(ens.samples[:, 0, :], os.path.join(args.out, "forecast.png"),
                       None if truth is None else truth[0], ens.variable_names[0])
    print(f"wrote {ens.K} paths x {P} steps ({ens.rounds} generation round(s))")
    return 0


def _trial_reports(ckpt, frame, cfg, trials, label, K, seed):
    reports = []
    base_seed = ckpt.config["train"]["seed"]
    for i in range(trials):
        if i == 0:
            trial_ckpt = ckpt
        else:
            run = _config_from_checkpoint(ckpt, cfg)
            run.train = replace(run.train, seed=base_seed + i)
            log.info("trial %d/%d: retraining %s with seed %d", i + 1, trials, label, base_seed + i)
            trial_ckpt = fit(frame, run)
        reports.append(evaluate_frame(trial_ckpt, frame, cfg, K, seed + i, label))
    return reports


def cmd_evaluate(args):
    extra = {}
    if args.horizons:
        extra["eval.horizons"] = args.horizons
    if args.trials is not None:
        extra["eval.trials"] = args.trials
    if args.stride is not None:
        extra["eval.stride"] = args.stride
    if args.max_windows is not None:
        extra["eval.max_windows"] = args.max_windows
    cfg = _run_config(args, extra)
    K = args.samples if args.samples is not None else cfg.forecast.samples
    seed = args.seed if args.seed is not None else cfg.forecast.seed
    ckpt, fc, frame = _load_model_data(args)
    for h in cfg.eval.horizons:
        if not 1 <= h <= fc.horizon:
            raise DataError(f"horizon {h} is beyond the model's {fc.horizon}-step window")

    if args.oracle_identity:
        run = _config_from_checkpoint(ckpt, cfg)
        prep = prepare(frame, run, fc.stats)
        w = make_test_windows(prep, fc.context, fc.horizon, cfg.eval.stride, cfg.eval.max_windows)
        truths = np.stack([frame.values[fc.target_index, o + 1: o + 1 + fc.horizon] for o in w.origins])
        # a single path equal to the truth; scores are exactly zero
        report = score(oracle_ensembles(truths, 1), truths, cfg.eval.horizons, label="oracle")
        summaries = [summarize_trials([report])]
    else:
        summaries = [summarize_trials(_trial_reports(ckpt, frame, cfg, cfg.eval.trials,
                                                     "conditional" if not fc.unconditional else "unconditional",
                                                     K, seed))]
        if args.baseline:
            bckpt = load_checkpoint(args.baseline)
            bfc = Forecaster.from_checkpoint(bckpt)
            label = "unconditional" if bfc.unconditional else "baseline"
            if label == summaries[0].label:
                label = f"{label}-baseline"
            summaries.append(summarize_trials(_trial_reports(bckpt, frame, cfg, cfg.eval.trials, label, K, seed)))

    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(s.to_text() for s in summaries))
    rows = []
    for s in summaries:
        for key in sorted(s.mean):
            rows.append((s.label, key, _num(s.mean[key]), _num(s.std[key]), s.trials))
    _write_rows(os.path.join(args.out, "metrics.csv"), ["method", "metric", "mean", "std", "trials"], rows)
    _write_rows(os.path.join(args.out, "comparison.csv"), ["method", "crps", "mae", "mse"],
                [(r[0], _num(r[1]), _num(r[2]), _num(r[3])) for r in comparison_rows(summaries)])
    plotting.metrics_by_horizon(summaries, os.path.join(args.out, "metrics.png"))
    for label, crps, mae, mse in comparison_rows(summaries):
        print(f"{label:>16s}  crps {crps:.4f}  mae {mae:.4f}  mse {mse:.4f}")
    return 0


def _read_long(path, value_cols):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in value_cols if c not in (reader.fieldnames or [])]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        return list(reader)


def cmd_hist(args):
    ens = _read_long(args.ensemble, ["path_id", "variable", "step", "value"])
    truth = _read_long(args.truth, ["variable", "step", "value"])
    variable = args.variable or ens[0]["variable"]

    def pos(r):
        return (r.get("origin", ""), int(r["step"]))

    ens = [r for r in ens if r["variable"] == variable]
    truth = [r for r in truth if r["variable"] == variable]
    if not ens:
        raise DataError(f"no ensemble rows for variable {variable!r}")
    positions = sorted({pos(r) for r in ens})
    if args.aggregate:
        model_vals = [float(r["value"]) for r in ens]
        truth_vals = [float(r["value"]) for r in truth if pos(r) in set(positions)]
        title = f"{variable}: all positions"
    else:
        steps = sorted({p[1] for p in positions})
        if args.position not in steps:
            raise DataError(f"position {args.position} out of range {steps[0]}..{steps[-1]}")
        model_vals = [float(r["value"]) for r in ens if int(r["step"]) == args.position]
        truth_vals = [float(r["value"]) for r in truth if int(r["step"]) == args.position]
        title = f"{variable}: step {args.position}"
    rows = histogram_table(model_vals, truth_vals, args.bins)
    os.makedirs(args.out, exist_ok=True)
    _write_rows(os.path.join(args.out, "hist.csv"), ["bin_left", "bin_right", "count", "series_tag"],
                [(_num(a), _num(b), c, t) for a, b, c, t in rows])
    plotting.histogram(rows, os.path.join(args.out, "hist.png"), title)
    return 0


# ------------------------------------------------------------------- parser


def build_parser():
    ap = argparse.ArgumentParser(prog="dyndiff", description="Conditional diffusion forecasting on latent TCN dynamics.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override (repeatable)")

    p = sub.add_parser("synth", help="write a synthetic series")
    p.add_argument("--kind", required=True, choices=sorted(SYNTH_KINDS))
    p.add_argument("--length", required=True, type=int)
    p.add_argument("--seed", required=True, type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="output directory")
    common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--targets", help="comma-separated target columns")
    p.add_argument("--unconditional", action="store_true", help="train the context-free diffusion baseline")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("forecast", help="sample an ensemble forecast")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.add_argument("--samples", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--origin", type=int, help="row index of the last context step (default: last row)")
    p.add_argument("--point", action="store_true", help="also write the ensemble-mean forecast")
    p.set_defaults(func=cmd_forecast)

    p = sub.add_parser("evaluate", help="score a model on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.add_argument("--baseline", help="second checkpoint to compare against")
    p.add_argument("--horizons", help="comma-separated, default 1,4,7,10")
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--trials", type=int)
    p.add_argument("--stride", type=int)
    p.add_argument("--max-windows", type=int)
    p.add_argument("--oracle-identity", action="store_true", help="score ensembles equal to the truth")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("hist", help="histogram data of ensemble samples vs truth")
    p.add_argument("--ensemble", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--variable")
    where = p.add_mutually_exclusive_group(required=True)
    where.add_argument("--position", type=int, help="forecast step (1-based)")
    where.add_argument("--aggregate", action="store_true", help="pool all positions")
    p.set_defaults(func=cmd_hist)
    return ap


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        parser.print_usage(sys.stderr)
        print(f"dyndiff: error: {exc}", file=sys.stderr)
        return 2
    except (DataError, CheckpointError, FloatingPointError, ValueError, KeyError, OSError) as exc:
        print(f"dyndiff: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
