from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .params import ParamStore
from .tensor import Tensor, no_grad, record_branches


@dataclass
class GradCheckReport:
    """Per-parameter max relative error between analytic and central-difference gradients.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    coordinates whose true gradient is ~0 from dominating on round-off alone.
    Coordinates whose ``+h``/``-h`` evaluations take a different branch than
    the base point (a relu, abs or selection flips) are skipped.
    """

    max_rel_err: dict[str, float] = field(default_factory=dict)
    checked: int = 0
    skipped: int = 0
    tol: float = 1e-4

    @property
    def worst(self) -> float:
        return max(self.max_rel_err.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst < self.tol


def _evaluate(fn) -> tuple[float, list]:
    with no_grad(), record_branches() as log:
        value = fn().item()
    return value, log


def grad_check(fn: Callable[[], Tensor], params: ParamStore, h: float = 1e-5,
               tol: float = 1e-4, coords_per_param: int | None = None,
               rng: np.random.Generator | None = None, floor: float = 1e-6) -> GradCheckReport:
    """Compare backprop gradients of ``fn()`` against central finite differences.

    With ``coords_per_param`` set, only that many randomly chosen entries of
    each parameter tensor are perturbed.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    params.zero_grad()
    with record_branches() as base_log:
        loss = fn()
    loss.backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in params.items()}

    report = GradCheckReport(tol=tol)
    for name, t in params.items():
        flat = t.data.reshape(-1)
        if coords_per_param is None or coords_per_param >= flat.size:
            coords = np.arange(flat.size)
        else:
            coords = rng.choice(flat.size, size=coords_per_param, replace=False)
        worst = 0.0
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            fp, log_p = _evaluate(fn)
            flat[c] = orig - h
            fm, log_m = _evaluate(fn)
            flat[c] = orig
            if log_p != base_log or log_m != base_log:
                report.skipped += 1
                continue
            num = (fp - fm) / (2.0 * h)
            ana = analytic[name].reshape(-1)[c]
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
            report.checked += 1
        report.max_rel_err[name] = worst
    params.zero_grad()
    return report
