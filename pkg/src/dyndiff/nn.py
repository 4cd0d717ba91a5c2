"""Parameter containers shared by the encoder and the denoiser."""
from __future__ import annotations

import numpy as np

from dyndiff.numerics import Parameter, default_dtype


class Module:
    """Holds named :class:`Parameter` objects in creation order."""

    def __init__(self, prefix: str):
        self.prefix = prefix
        self.params: dict[str, Parameter] = {}

    def _add(self, name, array):
        full = f"{self.prefix}.{name}"
        if full in self.params:
            raise KeyError(f"duplicate parameter name {full}")
        p = Parameter(full, array, dtype=default_dtype())
        self.params[full] = p
        return p

    def _weight(self, rng, name, shape, fan_in, gain=1.0):
        """Fan-in scaled normal init (He-style when ``gain`` is sqrt(2))."""
        return self._add(name, rng.standard_normal(shape) * (gain / np.sqrt(fan_in)))

    def _zeros(self, name, shape):
        return self._add(name, np.zeros(shape))

    def _ones(self, name, shape):
        return self._add(name, np.ones(shape))

    def parameters(self):
        return list(self.params.values())

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.params.items()}

    def load_state_dict(self, state):
        missing = set(self.params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in self.params.items():
            arr = np.asarray(state[k])
            if arr.shape != p.shape:
                raise ValueError(f"{k}: shape {arr.shape} does not match {p.shape}")
            p.data = arr.astype(p.dtype, copy=True)
