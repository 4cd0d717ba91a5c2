"""CSV ingestion, standardisation, chronological splits, windowing and synthetic series."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

STD_FLOOR = 1e-8
MISSING = {"", "na", "nan", "null", "none"}


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Standardization:
    names: tuple
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self):
        return {"names": list(self.names), "mean": [float(v) for v in self.mean],
                "std": [float(v) for v in self.std]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["names"]), np.asarray(d["mean"], dtype=np.float64),
                   np.asarray(d["std"], dtype=np.float64))

    def select(self, names):
        idx = [self.names.index(n) for n in names]
        return Standardization(tuple(names), self.mean[idx], self.std[idx])


@dataclass
class TimeSeriesFrame:
    """``values`` is ``(m, t)``: one row per variable, columns in time order."""

    names: list
    values: np.ndarray
    targets: list = None
    timestamps: list = None
    stats: Standardization = None
    offset: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[0] != len(self.names):
            raise DataError(f"values shape {self.values.shape} does not match {len(self.names)} names")
        if len(set(self.names)) != len(self.names):
            raise DataError(f"duplicate column names in {self.names}")
        if self.targets is None:
            self.targets = list(self.names)
        missing = [c for c in self.targets if c not in self.names]
        if missing:
            raise DataError(f"target column(s) not found: {', '.join(missing)}")
        if not np.isfinite(self.values).all():
            raise DataError("frame contains non-finite values")

    @property
    def m(self):
        return self.values.shape[0]

    @property
    def t(self):
        return self.values.shape[1]

    @property
    def target_index(self):
        return [self.names.index(c) for c in self.targets]

    def segment(self, start, stop):
        ts = None if self.timestamps is None else self.timestamps[start:stop]
        return replace(self, values=self.values[:, start:stop], timestamps=ts, offset=self.offset + start)


# ---------------------------------------------------------------------------- CSV


def load_csv(path, target_columns=None, missing="ffill") -> TimeSeriesFrame:
    """Read a header-first numeric CSV; a leading ``timestamp`` column is kept aside.

    Missing cells are forward-filled; a gap in the first row is an error.
    """
    if missing != "ffill":
        raise ValueError(f"unknown missing-value policy {missing!r}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    rows = [r for r in rows if r]
    if not rows:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    body = rows[1:]
    if not body:
        raise DataError(f"{path}: no data rows")
    ts_col = 0 if header[0].lower() == "timestamp" else None
    names = [h for i, h in enumerate(header) if i != ts_col]
    values = np.empty((len(names), len(body)), dtype=np.float64)
    timestamps = [] if ts_col is not None else None
    for r, row in enumerate(body):
        line = r + 2
        if len(row) != len(header):
            raise DataError(f"{path}: line {line} has {len(row)} cells, expected {len(header)}")
        if ts_col is not None:
            timestamps.append(row[ts_col].strip())
        j = 0
        for i, cell in enumerate(row):
            if i == ts_col:
                continue
            cell = cell.strip()
            if cell.lower() in MISSING:
                if r == 0:
                    raise DataError(f"{path}: leading missing value in column {header[i]!r} (line {line})")
                values[j, r] = values[j, r - 1]
            else:
                try:
                    values[j, r] = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: cannot parse {cell!r} at line {line}, column {header[i]!r}"
                    ) from None
                if not math.isfinite(values[j, r]):
                    raise DataError(f"{path}: non-finite value at line {line}, column {header[i]!r}")
            j += 1
    if target_columns is not None:
        absent = [c for c in target_columns if c not in names]
        if absent:
            raise DataError(f"{path}: target column(s) not in header: {', '.join(absent)}")
    return TimeSeriesFrame(names, values, list(target_columns) if target_columns else None, timestamps)


def write_csv(frame: TimeSeriesFrame, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp"] + list(frame.names))
        stamps = frame.timestamps if frame.timestamps is not None else range(frame.offset, frame.offset + frame.t)
        for i, stamp in enumerate(stamps):
            w.writerow([stamp] + [repr(float(v)) for v in frame.values[:, i]])


# ------------------------------------------------------------------ scaling


def fit_standardization(frame: TimeSeriesFrame) -> Standardization:
    mean = frame.values.mean(axis=1)
    std = frame.values.std(axis=1)
    flat = [n for n, s in zip(frame.names, std) if s < STD_FLOOR]
    if flat:
        warnings.warn(f"zero variance in {', '.join(flat)}; std floored at {STD_FLOOR}", stacklevel=2)
    return Standardization(tuple(frame.names), mean, np.maximum(std, STD_FLOOR))


def standardize(frame: TimeSeriesFrame, stats: Standardization = None) -> TimeSeriesFrame:
    """Per-variable z-score; pass the training split's ``stats`` for any other split."""
    stats = fit_standardization(frame) if stats is None else stats
    if tuple(stats.names) != tuple(frame.names):
        raise DataError(f"stats are for {stats.names}, frame has {frame.names}")
    values = (frame.values - stats.mean[:, None]) / stats.std[:, None]
    return replace(frame, values=values, stats=stats)


def destandardize(values, stats: Standardization, names=None):
    """Invert :func:`standardize`; the variable axis of ``values`` is ``-2``."""
    st = stats if names is None else stats.select(names)
    values = np.asarray(values, dtype=np.float64)
    return values * st.std[:, None] + st.mean[:, None]


# ---------------------------------------------------------------- splitting


def split(frame: TimeSeriesFrame, ratios=(0.8, 0.1, 0.1), min_length=1):
    """Chronological train/validation/test segments (train earliest)."""
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must be three positive numbers summing to 1, got {ratios}")
    n_train = int(math.floor(frame.t * ratios[0] + 1e-9))
    n_val = int(math.floor(frame.t * ratios[1] + 1e-9))
    bounds = [0, n_train, n_train + n_val, frame.t]
    parts = [frame.segment(a, b) for a, b in zip(bounds, bounds[1:])]
    for label, part in zip(("train", "validation", "test"), parts):
        if part.t < min_length:
            raise DataError(f"{label} split has {part.t} steps, needs at least {min_length}")
    return tuple(parts)


# ---------------------------------------------------------------- windowing


@dataclass
class Windows:
    """``X`` is ``(N, m, c)``, ``Y`` is ``(N, n, p)``; ``origins`` index the last context step."""

    X: np.ndarray
    Y: np.ndarray
    origins: np.ndarray
    names: list = field(default_factory=list)
    targets: list = field(default_factory=list)

    def __len__(self):
        return len(self.origins)

    @property
    def context(self):
        return self.X.shape[2]

    @property
    def horizon(self):
        return self.Y.shape[2]

    def take(self, idx):
        return Windows(self.X[idx], self.Y[idx], self.origins[idx], self.names, self.targets)


def window_count(t, context, horizon, stride=1):
    return (t - context - horizon) // stride + 1


def make_windows(frame: TimeSeriesFrame, context=120, horizon=10, stride=1) -> Windows:
    if context < 1 or horizon < 1 or stride < 1:
        raise DataError("context, horizon and stride must all be >= 1")
    if frame.t < context + horizon:
        raise DataError(f"series of length {frame.t} is shorter than context+horizon={context + horizon}")
    view = np.lib.stride_tricks.sliding_window_view(frame.values, context + horizon, axis=1)
    view = view[:, ::stride].transpose(1, 0, 2)
    X = view[:, :, :context]
    Y = view[:, frame.target_index, context:]
    origins = frame.offset + context - 1 + stride * np.arange(view.shape[0])
    return Windows(X, Y, origins, list(frame.names), list(frame.targets))


# ---------------------------------------------------------------- synthetic


def _ar2_seasonal(t, rng, amplitude=2.0, period=24, phi1=0.6, phi2=-0.3, sigma=0.5, burn=200):
    # value_i = amplitude*sin(2*pi*i/period) + u_i,  u_i = phi1*u_{i-1} + phi2*u_{i-2} + sigma*N(0,1)
    noise = rng.standard_normal(t + burn) * sigma
    u = np.zeros(t + burn)
    for i in range(2, t + burn):
        u[i] = phi1 * u[i - 1] + phi2 * u[i - 2] + noise[i]
    i = np.arange(t)
    return ["value"], np.vstack([amplitude * np.sin(2 * np.pi * i / period) + u[burn:]])


def _regime_switch_bimodal(t, rng, stay=0.98, means=(20.0, 35.0), phi=0.7, sigma=1.5, cov_noise=0.2):
    # latent state r_i: Markov chain, P(r_i = r_{i-1}) = stay
    # two AR(1) processes x^k_i = mu_k + phi*(x^k_{i-1} - mu_k) + sigma*N(0,1); latency_i = x^{r_i}_i
    # covariate regime_i = r_i + cov_noise*N(0,1)
    flips = rng.random(t) > stay
    r = np.zeros(t, dtype=int)
    r[0] = int(rng.random() < 0.5)
    for i in range(1, t):
        r[i] = 1 - r[i - 1] if flips[i] else r[i - 1]
    mu = np.asarray(means)
    sd0 = sigma / np.sqrt(1 - phi ** 2)
    x = mu + sd0 * rng.standard_normal(2)
    eps = rng.standard_normal((t, 2)) * sigma
    lat = np.empty(t)
    for i in range(t):
        x = mu + phi * (x - mu) + eps[i]
        lat[i] = x[r[i]]
    regime = r + cov_noise * rng.standard_normal(t)
    return ["latency", "regime"], np.vstack([lat, regime])


def _random_walk(t, rng, sigma=1.0):
    # value_i = value_{i-1} + sigma*N(0,1), value_0 = 0
    steps = rng.standard_normal(t) * sigma
    steps[0] = 0.0
    return ["value"], np.cumsum(steps)[None]


def _constant(t, rng, value=5.0):
    return ["value"], np.full((1, t), float(value))


SYNTH_KINDS = {
    "ar2_seasonal": _ar2_seasonal,
    "regime_switch_bimodal": _regime_switch_bimodal,
    "random_walk": _random_walk,
    "constant": _constant,
}


def synth_generate(kind, t, seed=0, **params) -> TimeSeriesFrame:
    """Deterministic synthetic series; the first column is the default target."""
    if kind not in SYNTH_KINDS:
        raise DataError(f"unknown synthetic kind {kind!r}; choose one of {', '.join(SYNTH_KINDS)}")
    if t < 1:
        raise DataError("length must be >= 1")
    rng = np.random.default_rng(seed)
    names, values = SYNTH_KINDS[kind](int(t), rng, **params)
    return TimeSeriesFrame(names, values, [names[0]], [str(i) for i in range(int(t))])
