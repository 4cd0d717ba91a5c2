import numpy as np
import pytest

from dyndiff.config import RunConfig


def tiny_config(steps=40, seed=0, context=24, horizon=4, unconditional=False):
    """Small enough to train in about a second."""
    cfg = RunConfig()
    m = cfg.model
    m.d_model, m.channels, m.layers, m.heads, m.ff_dim, m.res_blocks = 16, 8, 2, 2, 32, 2
    m.diffusion_steps = 10
    t = cfg.train
    t.steps, t.seed, t.batch, t.context, t.horizon = steps, seed, 16, context, horizon
    t.unconditional = unconditional
    t.val_every, t.val_windows = 10, 32
    cfg.forecast.horizon = horizon
    cfg.eval.horizons = (1, horizon)
    return cfg


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
