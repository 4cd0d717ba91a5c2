"""Joint training of encoder and denoiser, ensemble sampling and rolling forecasts."""
from __future__ import annotations

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from dyndiff.checkpoint import Checkpoint
from dyndiff.data import Standardization, Windows, destandardize
from dyndiff.denoiser import Denoiser, DenoiserConfig
from dyndiff.diffusion import NoisedBatch, build_schedule, q_sample, reverse_step, training_loss
from dyndiff.encoder import ContextEncoder, EncoderConfig
from dyndiff.numerics import Adam, NonFiniteError, Tensor, clip_grad_norm, no_grad

log = logging.getLogger(__name__)

# Sampling runs in fixed-size, zero-padded chunks. BLAS results for a row can
# depend on the matrix height, so a fixed height keeps every path bit-identical
# whatever the ensemble size.
SAMPLE_CHUNK = 50


class TrainingDiverged(FloatingPointError):
    pass


class SamplingError(FloatingPointError):
    pass


@dataclass
class ModelConfig:
    """Architecture and schedule sizes; variable counts come from the data."""

    d_model: int = 128
    channels: int = 64
    layers: int = 4
    kernel: int = 3
    dilation_base: int = 2
    heads: int = 4
    res_blocks: int = 2
    ff_dim: int = 256
    diffusion_steps: int = 50
    beta_min: float = 1e-4
    beta_max: float = 0.5


@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch: int = 64
    steps: int = 2000
    seed: int = 0
    context: int = 120
    horizon: int = 10
    unconditional: bool = False
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    clip: float = 1.0
    val_every: int = 100
    patience: int = 10
    val_windows: int = 256

    def __post_init__(self):
        for name in ("batch", "context", "horizon", "steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"train.{name} must be >= 1")
        self.betas = tuple(self.betas)


# ------------------------------------------------------------------- model


class Forecaster:
    """Encoder, denoiser and schedule rebuilt from a checkpoint (or freshly initialised)."""

    def __init__(self, config: dict, stats: Standardization, targets, params=None, init_seed=0):
        self.config = config
        mc = ModelConfig(**config["model"])
        tc = TrainConfig(**config["train"])
        self.model_cfg, self.train_cfg = mc, tc
        self.stats = stats
        self.names = list(stats.names)
        self.targets = list(targets)
        self.target_index = [self.names.index(t) for t in self.targets]
        self.schedule = build_schedule(mc.diffusion_steps, mc.beta_min, mc.beta_max)
        rng = np.random.default_rng(np.random.SeedSequence([init_seed, 0]))
        self.encoder = ContextEncoder(EncoderConfig(
            in_vars=len(self.names), channels=mc.channels, layers=mc.layers, kernel=mc.kernel,
            dilation_base=mc.dilation_base, latent_dim=mc.d_model), rng)
        self.denoiser = Denoiser(DenoiserConfig(
            n_vars=len(self.targets), horizon=tc.horizon, d_model=mc.d_model, heads=mc.heads,
            res_blocks=mc.res_blocks, ff_dim=mc.ff_dim, unconditional=tc.unconditional), rng)
        if params is not None:
            self.load_params(params)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint):
        stats = Standardization.from_dict(ckpt.stats)
        return cls(ckpt.config, stats, ckpt.stats["targets"], ckpt.params)

    @property
    def context(self):
        return self.train_cfg.context

    @property
    def horizon(self):
        return self.train_cfg.horizon

    @property
    def unconditional(self):
        return self.train_cfg.unconditional

    def named_parameters(self):
        return {**self.encoder.params, **self.denoiser.params}

    def state_dict(self):
        return {**self.encoder.state_dict(), **self.denoiser.state_dict()}

    def load_params(self, params):
        self.encoder.load_state_dict(params)
        self.denoiser.load_state_dict(params)

    def latent(self, X):
        """Latent context for standardised ``X`` ``(B, m, c)``; ``None`` in baseline mode."""
        if self.unconditional:
            return None
        return self.encoder.encode(X).e

    def loss(self, X, batch: NoisedBatch):
        return training_loss(batch, self.latent(X), self.denoiser)

    def checkpoint(self, rng_state, history=()):
        stats = self.stats.to_dict()
        stats["targets"] = list(self.targets)
        return Checkpoint(self.state_dict(), self.config, stats, rng_state, history=list(history))


def build_config(model_cfg: ModelConfig, train_cfg: TrainConfig, extra=None) -> dict:
    cfg = {"model": asdict(model_cfg), "train": asdict(train_cfg)}
    cfg["train"]["betas"] = list(train_cfg.betas)
    if extra:
        cfg.update(extra)
    return cfg


# ---------------------------------------------------------------- training


def _noised(Y, s, eps, sched):
    return NoisedBatch(Y, s, eps, q_sample(Y, s, eps, sched).astype(np.float32))


def train(train_windows: Windows, cfg: TrainConfig, model_cfg: ModelConfig, stats: Standardization,
          val_windows: Windows = None, extra_config=None) -> Checkpoint:
    """Minimise the conditional noise-prediction loss over random windows.

    Windows must already be standardised with ``stats``. Returns a checkpoint
    whose ``history`` holds ``(step, loss, grad_norm)`` rows and, when a
    validation set is given, the parameters with the best validation loss.
    """
    if len(train_windows) < 1:
        raise ValueError(
            f"training series is shorter than context+horizon={cfg.context + cfg.horizon}")
    if train_windows.context != cfg.context or train_windows.horizon != cfg.horizon:
        raise ValueError(
            f"windows are {train_windows.context}x{train_windows.horizon}, config wants {cfg.context}x{cfg.horizon}")
    config = build_config(model_cfg, cfg, extra_config)
    init_ss, train_ss, val_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    fc = Forecaster(config, stats, train_windows.targets, init_seed=int(init_ss.generate_state(1)[0]))
    rng = np.random.default_rng(train_ss)
    sched = fc.schedule

    used = fc.denoiser.parameters() + ([] if fc.unconditional else fc.encoder.parameters())
    everything = fc.encoder.parameters() + fc.denoiser.parameters()
    opt = Adam(used, lr=cfg.lr, betas=cfg.betas, eps=cfg.adam_eps)

    val = None
    if val_windows is not None and len(val_windows):
        vrng = np.random.default_rng(val_ss)
        idx = vrng.choice(len(val_windows), size=min(cfg.val_windows, len(val_windows)), replace=False)
        idx.sort()
        vX = val_windows.X[idx].astype(np.float32)
        vY = val_windows.Y[idx].astype(np.float32)
        vs = vrng.integers(1, sched.S + 1, size=len(idx))
        veps = vrng.standard_normal(vY.shape).astype(np.float32)
        val = (vX, _noised(vY, vs, veps, sched))

    history, val_history = [], []
    best, best_state, bad = math.inf, None, 0
    for step in range(1, cfg.steps + 1):
        idx = rng.integers(0, len(train_windows), size=cfg.batch)
        X = train_windows.X[idx].astype(np.float32)
        Y = train_windows.Y[idx].astype(np.float32)
        s = rng.integers(1, sched.S + 1, size=cfg.batch)
        eps = rng.standard_normal(Y.shape).astype(np.float32)
        for p in everything:
            p.zero_grad()
        value, norm = math.nan, math.nan
        try:
            loss = fc.loss(X, _noised(Y, s, eps, sched))
            value = float(loss.data)
            loss.backward()
        except NonFiniteError as exc:
            raise TrainingDiverged(f"non-finite training state at step {step}: loss={value}, "
                                   f"grad_norm={norm} ({exc})") from None
        norm = clip_grad_norm(used, cfg.clip)
        if not (math.isfinite(value) and math.isfinite(norm)):
            raise TrainingDiverged(f"non-finite training state at step {step}: loss={value}, grad_norm={norm}")
        opt.step()
        history.append((step, value, norm))

        if val is not None and step % cfg.val_every == 0:
            with no_grad():
                vloss = float(fc.loss(val[0], val[1]).data)
            val_history.append((step, vloss))
            log.debug("step %d loss %.4f val %.4f", step, value, vloss)
            if vloss < best:
                best, best_state, bad = vloss, fc.state_dict(), 0
            else:
                bad += 1
                if bad >= cfg.patience:
                    log.info("early stop at step %d (best validation loss %.4f)", step, best)
                    break
    if best_state is not None:
        fc.load_params(best_state)
    ckpt = fc.checkpoint(rng.bit_generator.state, history)
    ckpt.val_history = val_history
    return ckpt


# ---------------------------------------------------------------- sampling


def path_rng(seed, *index):
    """Independent generator for one ensemble path, addressed by ``(seed, *index)``."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, index)]))


def _threads():
    try:
        return max(1, int(os.environ.get("DYNDIFF_THREADS", "1")))
    except ValueError:
        return 1


def _denoise(fc: Forecaster, latent, noise):
    """Run the reverse chain for a batch. ``noise`` is ``(B, S, n, p)``: ``x_S`` then ``z`` for ``s = S..2``."""
    sched = fc.schedule
    S = sched.S
    x = noise[:, 0].astype(np.float64)
    with no_grad():
        for s in range(S, 0, -1):
            try:
                eps_hat = fc.denoiser.predict_noise(x, s, latent).data
            except NonFiniteError as exc:
                raise SamplingError(f"non-finite value at diffusion step {s}: {exc}") from None
            z = noise[:, S - s + 1] if s > 1 else None
            x = reverse_step(x, s, eps_hat, sched, z)
            if not np.isfinite(x).all():
                raise SamplingError(f"non-finite sample at diffusion step {s}")
    return x


def _draw(gen, fc: Forecaster):
    return gen.standard_normal((fc.schedule.S, len(fc.targets), fc.horizon))


def _as_forecaster(model):
    return model if isinstance(model, Forecaster) else Forecaster.from_checkpoint(model)


def _context(fc: Forecaster, X):
    X = np.asarray(X, dtype=np.float32)
    if X.ndim == 2:
        X = X[None]
    if X.shape[1] != len(fc.names):
        raise ValueError(f"context has {X.shape[1]} variables, model expects {len(fc.names)}")
    return X


def _padded(a, rows):
    if a is None or len(a) == rows:
        return a
    return np.concatenate([a, np.zeros((rows - len(a),) + a.shape[1:], dtype=a.dtype)])


def run_chunks(fc: Forecaster, noise, latent=None, contexts=None):
    """Reverse chains for ``noise`` ``(B, S, n, p)`` in padded chunks of ``SAMPLE_CHUNK``.

    Conditioning is either one latent row per path (``latent`` ``(B, d)``) or
    one standardised context per path (``contexts`` ``(B, m, c)``).
    """
    B, C = len(noise), SAMPLE_CHUNK

    def run(lo):
        hi = min(lo + C, B)
        lat = None
        if contexts is not None:
            with no_grad():
                lat = fc.latent(_padded(contexts[lo:hi].astype(np.float32), C))
        elif latent is not None:
            lat = Tensor(_padded(latent[lo:hi], C))
        return _denoise(fc, lat, _padded(noise[lo:hi], C))[:hi - lo]

    return np.concatenate(_map(run, list(range(0, B, C))), axis=0)


def sample_once(X, model, rng):
    """One standardised ``(n, p)`` sample for standardised context ``X`` ``(m, c)``."""
    return sample_paths(_as_forecaster(model), X, [rng])[0]


def sample_paths(fc: Forecaster, X, gens):
    """Standardised samples ``(len(gens), n, p)`` for one context, one generator per path."""
    with no_grad():
        lat = fc.latent(_context(fc, X))
    noise = np.stack([_draw(g, fc) for g in gens])
    latent = None if lat is None else np.repeat(lat.data, len(gens), axis=0)
    return run_chunks(fc, noise, latent)


def _map(fn, items):
    threads = _threads()
    if threads == 1 or len(items) < 2:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


@dataclass
class ForecastEnsemble:
    samples: np.ndarray
    origin: object
    variable_names: list
    seed: int = 0
    rounds: int = 1
    standardized: np.ndarray = field(default=None, repr=False)

    @property
    def K(self):
        return self.samples.shape[0]


def forecast_ensemble(X, model, K=100, seed=0, origin=None) -> ForecastEnsemble:
    """``K`` sampled futures for standardised context ``X``, returned in original units.

    Path ``k`` uses the generator ``path_rng(seed, k)``, so paths do not depend on ``K``.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    fc = _as_forecaster(model)
    z = sample_paths(fc, X, [path_rng(seed, k) for k in range(K)])
    samples = destandardize(z, fc.stats, fc.targets)
    return ForecastEnsemble(samples, origin, list(fc.targets), seed, 1, z)


def iterative_forecast(X, model, P, K=100, seed=0, origin=None) -> ForecastEnsemble:
    """Roll each path forward ``ceil(P / p)`` rounds, feeding its own samples back as context."""
    fc = _as_forecaster(model)
    p = fc.horizon
    if P < 1:
        raise ValueError("total horizon must be >= 1")
    if P <= p:
        ens = forecast_ensemble(X, fc, K, seed, origin)
        ens.samples = ens.samples[..., :P]
        ens.standardized = ens.standardized[..., :P]
        return ens
    if len(fc.targets) != len(fc.names):
        raise ValueError("cannot roll forward unobserved covariates: horizon beyond the model's "
                         f"{p} steps needs every variable to be a target")
    rounds = math.ceil(P / p)
    gens = [path_rng(seed, k) for k in range(K)]
    ctx = np.repeat(_context(fc, X), K, axis=0).astype(np.float64)
    outputs = []
    for _ in range(rounds):
        noise = np.stack([_draw(g, fc) for g in gens])
        z = run_chunks(fc, noise, contexts=None if fc.unconditional else ctx)
        outputs.append(z)
        step = np.empty((K, len(fc.names), p))
        step[:, fc.target_index, :] = z
        ctx = np.concatenate([ctx[:, :, p:], step], axis=2)
    z = np.concatenate(outputs, axis=2)[..., :P]
    samples = destandardize(z, fc.stats, fc.targets)
    return ForecastEnsemble(samples, origin, list(fc.targets), seed, rounds, z)
