"""Finite-difference verification of reverse-mode gradients.

The checker treats the loss function as a black box: for every parameter
scalar it compares the recorded analytic gradient against a central
difference ``(f(t+h) - f(t-h)) / 2h``. Run it in double precision; float32
finite differences are too noisy for tight tolerances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import Node, backward

LossFn = Callable[[Mapping[str, Node]], Node]


@dataclass
class GradCheckReport:
    """Outcome of one finite-difference sweep.

    ``deterministic`` is False when two evaluations at the same point
    disagree (an unpinned stochastic op such as live dropout), which makes
    the comparison invalid; no differences are computed in that case.
    """

    max_rel_err: float
    worst_param: str
    per_param: dict[str, float] = field(default_factory=dict)
    deterministic: bool = True
    tol: float = 1e-6

    @property
    def passed(self) -> bool:
        return self.deterministic and self.max_rel_err < self.tol

    def summary(self) -> str:
        if not self.deterministic:
            return "gradcheck INVALID: loss is not deterministic (unpinned dropout?)"
        status = "PASS" if self.passed else "FAIL"
        return (
            f"gradcheck {status}: max rel err {self.max_rel_err:.3e}"
            f" (tol {self.tol:.1e}, worst: {self.worst_param})"
        )


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / (abs(analytic) + abs(numeric) + 1e-12)


def gradcheck(
    f: LossFn,
    params: Mapping[str, Node],
    h: float = 1e-4,
    tol: float = 1e-6,
) -> GradCheckReport:
    """Compare analytic gradients of ``f`` against central differences.

    ``f`` must rebuild its computation graph from ``params`` on every call
    and be deterministic (pin any dropout mask, e.g. by reseeding the same
    generator inside ``f``). Parameter values are perturbed in place and
    restored exactly.
    """
    base = float(f(params).value)
    repeat = float(f(params).value)
    if base != repeat:
        return GradCheckReport(
            max_rel_err=float("inf"),
            worst_param="<nondeterministic>",
            deterministic=False,
            tol=tol,
        )

    for node in params.values():
        node.zero_grad()
    backward(f(params))
    analytic = {
        name: (node.grad.copy() if node.grad is not None else np.zeros_like(node.value))
        for name, node in params.items()
    }

    per_param: dict[str, float] = {}
    worst_param = "<none>"
    max_err = 0.0
    for name, node in params.items():
        value = node.value
        grads = analytic[name]
        worst = 0.0
        for idx in np.ndindex(value.shape):
            orig = value[idx]
            value[idx] = orig + h
            f_plus = float(f(params).value)
            value[idx] = orig - h
            f_minus = float(f(params).value)
            value[idx] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            err = relative_error(float(grads[idx]), numeric)
            if err > worst:
                worst = err
        per_param[name] = worst
        if worst > max_err:
            max_err = worst
            worst_param = name
    return GradCheckReport(
        max_rel_err=max_err,
        worst_param=worst_param,
        per_param=per_param,
        tol=tol,
    )
