"""End-to-end glue: split, standardise, window, train and evaluate a frame."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from dyndiff.checkpoint import Checkpoint
from dyndiff.config import RunConfig
from dyndiff.data import (
    Standardization,
    TimeSeriesFrame,
    Windows,
    fit_standardization,
    make_windows,
    split,
    standardize,
)
from dyndiff.evaluation import evaluate
from dyndiff.forecasting import Forecaster, train


@dataclass
class Prepared:
    train: TimeSeriesFrame
    val: TimeSeriesFrame
    test: TimeSeriesFrame
    stats: Standardization


def prepare(frame: TimeSeriesFrame, cfg: RunConfig, stats: Standardization = None) -> Prepared:
    """Chronological split; statistics come from the training segment unless given."""
    if cfg.data.targets:
        frame = replace(frame, targets=list(cfg.data.targets))
        frame.__post_init__()
    need = cfg.train.context + cfg.train.horizon
    tr, va, te = split(frame, cfg.data.split, min_length=need)
    stats = fit_standardization(tr) if stats is None else stats
    return Prepared(standardize(tr, stats), standardize(va, stats), standardize(te, stats), stats)


def fit(frame: TimeSeriesFrame, cfg: RunConfig) -> Checkpoint:
    prep = prepare(frame, cfg)
    c, p = cfg.train.context, cfg.train.horizon
    extra = {"data": {"split": list(cfg.data.split), "targets": list(prep.train.targets)}}
    return train(make_windows(prep.train, c, p), cfg.train, cfg.model, prep.stats,
                 make_windows(prep.val, c, p), extra_config=extra)


def make_test_windows(prep: Prepared, context, horizon, stride=None, max_windows=None) -> Windows:
    """Test-split windows, stride defaulting to the horizon; ``max_windows`` keeps an even subset."""
    w = make_windows(prep.test, context, horizon, stride or horizon)
    if max_windows is not None and len(w) > max_windows:
        idx = np.unique(np.linspace(0, len(w) - 1, max_windows).round().astype(int))
        w = w.take(idx)
    return w


def evaluate_frame(ckpt: Checkpoint, frame: TimeSeriesFrame, cfg: RunConfig, K=None, seed=None, label="model"):
    """Score a checkpoint on the test split of ``frame`` using the checkpoint's own statistics."""
    fc = Forecaster.from_checkpoint(ckpt)
    data_cfg = ckpt.config.get("data", {})
    run = replace(cfg, train=fc.train_cfg)
    run.data = replace(cfg.data, split=tuple(data_cfg.get("split", cfg.data.split)),
                       targets=data_cfg.get("targets", cfg.data.targets))
    prep = prepare(frame, run, fc.stats)
    w = make_test_windows(prep, fc.context, fc.horizon, cfg.eval.stride, cfg.eval.max_windows)
    return evaluate(fc, w, cfg.eval.horizons, K or cfg.forecast.samples,
                    cfg.forecast.seed if seed is None else seed, label)
