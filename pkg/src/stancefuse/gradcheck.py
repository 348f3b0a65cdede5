"""Central finite-difference checks of autodiff gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import rng
from .errors import ContractError
from .params import ParamStore
from .tensor import Tensor, backward, no_grad


@dataclass(frozen=True)
class CoordinateCheck:
    name: str
    index: int
    analytic: float
    numeric: float

    @property
    def rel_error(self) -> float:
        a, n = self.analytic, self.numeric
        return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check_details(
    f: Callable[[ParamStore], Tensor],
    params: ParamStore,
    h: float = 1e-5,
    per_param: int = 2,
    n_samples: int = 200,
    seed: int = 0,
) -> list[CoordinateCheck]:
    """Compare autodiff against central differences on sampled coordinates.

    Every parameter contributes ``min(size, per_param)`` coordinates; extra
    coordinates are drawn across all parameters until ``n_samples`` is
    reached. ``f`` must be deterministic; dropout has to be in eval mode.
    """
    if not 1e-6 <= h <= 1e-4:
        raise ContractError(f"finite-difference step must lie in [1e-6, 1e-4], got {h}")
    with no_grad():
        first, second = f(params).item(), f(params).item()
    if first != second:
        raise ContractError("f is not deterministic: two evaluations differ")

    params.zero_grad()
    backward(f(params))
    analytic = {
        name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data)) for name, t in params.items()
    }
    params.zero_grad()

    gen = rng.stream(seed, "grad_check")
    coords: list[tuple[str, int]] = []
    for name, t in params.items():
        k = min(t.size, per_param)
        coords.extend((name, int(i)) for i in gen.choice(t.size, size=k, replace=False))
    names = list(params)
    sizes = np.array([params[n].size for n in names], dtype=np.float64)
    while len(coords) < n_samples:
        name = names[int(gen.choice(len(names), p=sizes / sizes.sum()))]
        coords.append((name, int(gen.integers(params[name].size))))

    checks = []
    with no_grad():
        for name, idx in coords:
            data = params[name].data
            pos = np.unravel_index(idx, data.shape)
            orig = data[pos]
            data[pos] = orig + h
            up = f(params).item()
            data[pos] = orig - h
            down = f(params).item()
            data[pos] = orig
            numeric = (up - down) / (2.0 * h)
            checks.append(CoordinateCheck(name, idx, float(analytic[name].reshape(-1)[idx]), numeric))
    return checks


def grad_check(f: Callable[[ParamStore], Tensor], params: ParamStore, h: float = 1e-5, **kwargs) -> float:
    """Maximum relative error |a - n| / max(|a|, |n|, 1e-8) over sampled coordinates."""
    return max(c.rel_error for c in grad_check_details(f, params, h, **kwargs))
