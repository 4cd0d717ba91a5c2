"""Central finite-difference verification of backward gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from dyndiff.numerics.tensor import no_grad


class NondeterminismError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_param: str | None
    worst_index: tuple | None
    tol: float
    entries: int

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def grad_check(f, params, eps=1e-4, tol=1e-4, floor=1e-3):
    """Compare backward gradients of ``f()`` with central differences.

    ``f`` rebuilds the graph and returns a scalar tensor each call. ``params``
    is a mapping ``name -> Tensor`` or a sequence of tensors. The relative error
    of an entry is ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps entries
    whose true gradient is ~0 from dividing truncation noise by nothing.
    """
    if isinstance(params, dict):
        named = list(params.items())
    else:
        named = [(getattr(p, "name", f"param{i}"), p) for i, p in enumerate(params)]

    first, second = f(), f()
    if not np.array_equal(first.data, second.data):
        raise NondeterminismError("grad_check: two forward passes disagree")

    for _, p in named:
        p.zero_grad()
    f().backward()
    analytic = [p.grad.copy() for _, p in named]

    # the perturbed passes are never differentiated, so skip recording the tape
    with no_grad():
        worst, worst_name, worst_idx, count = _scan(f, named, analytic, eps, floor)
    return GradCheckReport(worst, worst_name, worst_idx, tol, count)


def _scan(f, named, analytic, eps, floor):
    worst, worst_name, worst_idx, count = 0.0, None, None, 0
    for (name, p), grad in zip(named, analytic):
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            fp = float(f().data)
            flat[i] = orig - eps
            fm = float(f().data)
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * eps)
            a = float(grad.reshape(-1)[i])
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            count += 1
            if err > worst or worst_name is None:
                worst, worst_name = err, name
                worst_idx = np.unravel_index(i, p.shape)
    return worst, worst_name, worst_idx, count
