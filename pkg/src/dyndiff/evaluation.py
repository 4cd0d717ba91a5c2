"""Scoring sampled ensembles: MAE/MSE of the ensemble mean and the empirical CRPS."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from dyndiff.data import Windows, destandardize
from dyndiff.forecasting import SAMPLE_CHUNK, _as_forecaster, _draw, _padded, path_rng, run_chunks
from dyndiff.numerics import no_grad

DEFAULT_HORIZONS = (1, 4, 7, 10)
METRICS = ("mae", "mse", "crps")


def point_forecast(ens):
    """Element-wise mean over the sample axis (axis 0)."""
    samples = getattr(ens, "samples", ens)
    return np.asarray(samples, dtype=np.float64).mean(axis=0)


def _check_pair(point, truth, op):
    point, truth = np.asarray(point, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if point.shape != truth.shape:
        raise ValueError(f"{op}: forecast shape {point.shape} does not match truth {truth.shape}")
    return point, truth


def mae(point, truth) -> float:
    point, truth = _check_pair(point, truth, "mae")
    return float(np.abs(point - truth).mean())


def mse(point, truth) -> float:
    point, truth = _check_pair(point, truth, "mse")
    return float(((point - truth) ** 2).mean())


def crps_ensemble(samples, truth):
    """Empirical CRPS per element; ``samples`` has the ensemble on axis 0.

    Uses ``mean|X - x| - mean_{i,j}|X_i - X_j| / 2``, with the pair term from
    the sorted samples: ``sum_{i<j}(x_(j) - x_(i)) = sum_i (2i - K + 1) x_(i)``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if samples.ndim == 0 or samples.shape[0] == 0:
        raise ValueError("crps: empty sample set")
    if samples.shape[1:] != truth.shape:
        raise ValueError(f"crps: samples {samples.shape} do not match truth {truth.shape}")
    K = samples.shape[0]
    abs_err = np.abs(samples - truth).mean(axis=0)
    if K == 1:
        return abs_err
    # offsetting by the minimum leaves the weighted sum unchanged (weights sum to 0)
    # but makes it exactly 0 for identical samples and tames large offsets
    srt = np.sort(samples, axis=0)
    srt = srt - srt[:1]
    w = (2.0 * np.arange(K) - K + 1).reshape((K,) + (1,) * truth.ndim)
    spread = (w * srt).sum(axis=0) / (K * K)
    return abs_err - spread


def crps(samples, x) -> float:
    return float(crps_ensemble(np.asarray(samples, dtype=np.float64).reshape(-1), np.float64(x)))


# ------------------------------------------------------------------ reports


@dataclass
class EvalReport:
    per_horizon: dict
    overall: dict
    n_windows: int
    config_hash: str = ""
    seeds: list = field(default_factory=list)
    label: str = "model"

    def to_text(self) -> str:
        lines = [f"label = {self.label}", f"n_windows = {self.n_windows}",
                 f"config_hash = {self.config_hash}",
                 f"seeds = {','.join(str(s) for s in self.seeds)}"]
        for h in sorted(self.per_horizon):
            for k in METRICS:
                lines.append(f"horizon.{h}.{k} = {_fmt(self.per_horizon[h][k])}")
        for k in METRICS:
            lines.append(f"overall.{k} = {_fmt(self.overall[k])}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        kv = dict(line.split(" = ", 1) for line in text.splitlines() if " = " in line)
        per = {}
        overall = {}
        for key, val in kv.items():
            parts = key.split(".")
            if parts[0] == "horizon":
                per.setdefault(int(parts[1]), {})[parts[2]] = float(val)
            elif parts[0] == "overall":
                overall[parts[1]] = float(val)
        seeds = [int(s) for s in kv.get("seeds", "").split(",") if s]
        return cls(per, overall, int(kv["n_windows"]), kv.get("config_hash", ""), seeds, kv.get("label", "model"))


def _fmt(x):
    return repr(float(x))


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


def score(ensembles, truths, horizons=DEFAULT_HORIZONS, **meta) -> EvalReport:
    """Score ``(W, K, n, p)`` ensembles against ``(W, n, p)`` truths.

    Each horizon ``h`` is scored on step ``h`` of every window; ``overall``
    averages over all ``p`` steps. All aggregates are unweighted means over
    windows and variables.
    """
    ensembles = np.asarray(ensembles, dtype=np.float64)
    truths = np.asarray(truths, dtype=np.float64)
    if ensembles.ndim != 4 or ensembles.shape[0] != truths.shape[0] or ensembles.shape[2:] != truths.shape[1:]:
        raise ValueError(f"ensembles {ensembles.shape} do not match truths {truths.shape}")
    p = truths.shape[-1]
    for h in horizons:
        if not 1 <= h <= p:
            raise ValueError(f"horizon {h} is beyond the model's {p}-step window")
    points = ensembles.mean(axis=1)
    c = crps_ensemble(np.moveaxis(ensembles, 1, 0), truths)
    per = {}
    for h in horizons:
        sl = (..., h - 1)
        per[int(h)] = {"mae": mae(points[sl], truths[sl]), "mse": mse(points[sl], truths[sl]),
                       "crps": float(c[sl].mean())}
    overall = {"mae": mae(points, truths), "mse": mse(points, truths), "crps": float(c.mean())}
    return EvalReport(per, overall, int(truths.shape[0]), **meta)


def sample_windows(model, windows: Windows, K=100, seed=0):
    """Original-unit ensembles ``(W, K, n, p)`` for standardised windows.

    Path ``k`` of window ``w`` draws from ``path_rng(seed, w, k)``.
    """
    fc = _as_forecaster(model)
    W = len(windows)
    latent = None
    if not fc.unconditional:
        with no_grad():
            latent = np.concatenate([
                fc.latent(_padded(windows.X[i:i + SAMPLE_CHUNK].astype(np.float32), SAMPLE_CHUNK)).data
                for i in range(0, W, SAMPLE_CHUNK)])[:W]
        latent = np.repeat(latent, K, axis=0)
    noise = np.stack([_draw(path_rng(seed, w, k), fc) for w in range(W) for k in range(K)])
    z = run_chunks(fc, noise, latent).reshape(W, K, len(fc.targets), fc.horizon)
    return destandardize(z, fc.stats, fc.targets)


def evaluate(model, test_windows: Windows, horizons=DEFAULT_HORIZONS, K=100, seed=0, label="model") -> EvalReport:
    """Sample ``K`` paths per test window and score them per horizon."""
    fc = _as_forecaster(model)
    for h in horizons:
        if not 1 <= h <= fc.horizon:
            raise ValueError(f"horizon {h} is beyond the model's {fc.horizon}-step window")
    ens = sample_windows(fc, test_windows, K, seed)
    truths = destandardize(test_windows.Y, fc.stats, fc.targets)
    return score(ens, truths, horizons, config_hash=config_hash(fc.config),
                 seeds=[fc.train_cfg.seed, seed], label=label)


def oracle_ensembles(truths, K=1):
    """Ensembles whose every path equals the truth (self-test of the scoring path)."""
    truths = np.asarray(truths, dtype=np.float64)
    return np.repeat(truths[:, None], K, axis=1)


def climatology_ensembles(train_values, n_windows, K=100, horizon=10, seed=0):
    """Ensembles of i.i.d. draws from each target's training-split marginal.

    ``train_values`` is ``(n, t_train)`` in original units.
    """
    train_values = np.asarray(train_values, dtype=np.float64)
    rng = np.random.default_rng(seed)
    n, t = train_values.shape
    idx = rng.integers(0, t, size=(n_windows, K, n, horizon))
    return train_values[np.arange(n)[None, None, :, None], idx]


# --------------------------------------------------------------- summaries


@dataclass
class TrialSummary:
    label: str
    mean: dict
    std: dict
    trials: int

    def to_text(self) -> str:
        lines = [f"label = {self.label}", f"trials = {self.trials}"]
        for key in sorted(self.mean, key=_metric_key):
            lines.append(f"{key} = {self.mean[key]:.6g} +- {self.std[key]:.6g}")
        return "\n".join(lines) + "\n"


def _metric_key(key):
    parts = key.split(".")
    return (parts[0] != "horizon", int(parts[1]) if parts[0] == "horizon" else 0, parts[-1])


def _flatten(report: EvalReport):
    flat = {f"horizon.{h}.{k}": v for h, d in report.per_horizon.items() for k, v in d.items()}
    flat.update({f"overall.{k}": v for k, v in report.overall.items()})
    return flat


def summarize_trials(reports, label=None) -> TrialSummary:
    """Mean and (population) standard deviation of every metric across trials."""
    flats = [_flatten(r) for r in reports]
    keys = flats[0].keys()
    mean = {k: float(np.mean([f[k] for f in flats])) for k in keys}
    std = {k: float(np.std([f[k] for f in flats])) for k in keys}
    return TrialSummary(label or reports[0].label, mean, std, len(reports))


def comparison_rows(summaries):
    """Rows ``(label, crps, mae, mse)`` sorted by overall CRPS, best first."""
    rows = [(s.label, s.mean["overall.crps"], s.mean["overall.mae"], s.mean["overall.mse"]) for s in summaries]
    return sorted(rows, key=lambda r: (r[1], r[0]))


# --------------------------------------------------------------- histograms


def histogram_table(model_values, truth_values, bins=20):
    """Shared-edge histograms of model samples and truth; edges span the pooled range."""
    model_values = np.asarray(model_values, dtype=np.float64).ravel()
    truth_values = np.asarray(truth_values, dtype=np.float64).ravel()
    pooled = np.concatenate([model_values, truth_values])
    if pooled.size == 0:
        raise ValueError("histogram: no values")
    lo, hi = float(pooled.min()), float(pooled.max())
    if lo == hi:
        lo, hi = lo - 0.5, hi + 0.5
    edges = np.linspace(lo, hi, bins + 1)
    rows = []
    for tag, vals in (("model", model_values), ("truth", truth_values)):
        counts, _ = np.histogram(vals, bins=edges)
        rows.extend((float(a), float(b), int(c), tag) for a, b, c in zip(edges[:-1], edges[1:], counts))
    return rows


def two_modes(counts, trough_ratio=0.6):
    """Find two local maxima whose separating trough is below ``trough_ratio`` of the smaller peak.

    Returns ``(left_peak, right_peak, trough)`` bin indices for the pair with the
    deepest relative trough, or ``None``.
    """
    c = np.asarray(counts, dtype=np.float64)
    padded = np.concatenate([[-np.inf], c, [-np.inf]])
    peaks = [i for i in range(len(c)) if c[i] > 0 and padded[i + 1] >= padded[i] and padded[i + 1] > padded[i + 2]]
    best = None
    for a in range(len(peaks)):
        for b in range(a + 1, len(peaks)):
            i, j = peaks[a], peaks[b]
            t = i + int(np.argmin(c[i:j + 1]))
            ratio = c[t] / min(c[i], c[j])
            if ratio < trough_ratio and (best is None or ratio < best[0]):
                best = (ratio, i, j, t)
    return None if best is None else best[1:]
