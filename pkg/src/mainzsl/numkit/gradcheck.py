"""Central finite-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tape import Tape, backward


@dataclass
class GradCheckReport:
    max_rel_err: float
    mean_rel_err: float
    worst_param: str
    worst_index: tuple
    per_param: dict = field(default_factory=dict)

    def passed(self, tol: float) -> bool:
        return self.max_rel_err < tol


def grad_check(
    f: Callable[[dict], object],
    params: dict,
    h: float = 1e-5,
    analytic: dict | None = None,
    floor: float = 1e-4,
) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` maps a ``{name: value}`` dict to a scalar. It is called once with
    taped variables (to obtain analytic gradients, unless ``analytic`` is
    given) and twice per coordinate with perturbed plain arrays.

    Relative error per coordinate is ``|a - n| / max(|n|, floor)``; the floor
    keeps coordinates whose true gradient is zero (e.g. biases feeding batch
    norm) from dividing round-off by round-off.
    """
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    if analytic is None:
        tape = Tape()
        analytic = backward(tape, f(tape.watch(params)))

    errs_all = []
    per_param = {}
    worst = (-1.0, "", ())
    for name, p in params.items():
        errs = np.empty(p.shape)
        for idx in np.ndindex(*p.shape):
            orig = p[idx]
            p[idx] = orig + h
            fp = float(f(params))
            p[idx] = orig - h
            fm = float(f(params))
            p[idx] = orig
            num = (fp - fm) / (2.0 * h)
            a = float(np.asarray(analytic[name])[idx])
            errs[idx] = abs(a - num) / max(abs(num), floor)
        per_param[name] = float(errs.max()) if errs.size else 0.0
        if errs.size:
            i = np.unravel_index(int(np.argmax(errs)), errs.shape)
            if errs[i] > worst[0]:
                worst = (float(errs[i]), name, tuple(int(j) for j in i))
        errs_all.append(errs.reshape(-1))
    flat = np.concatenate(errs_all) if errs_all else np.zeros(1)
    return GradCheckReport(float(flat.max()), float(flat.mean()), worst[1], worst[2], per_param)
