"""Finite-difference verification of analytic gradients.

Compares reverse-mode gradients against central differences
(loss(x+h) - loss(x-h)) / 2h, coordinate by coordinate. Meant to run on
float64 parameters; float32 does not leave enough headroom for h ~ 1e-5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Parameter, Tensor, TensorError, no_grad


@dataclass
class ParamCheck:
    name: str
    n_checked: int
    max_rel_error: float
    mean_rel_error: float
    fraction_within: float


@dataclass
class GradCheckReport:
    h: float
    tolerance: float
    per_param: list[ParamCheck] = field(default_factory=list)

    @property
    def max_rel_error(self) -> float:
        return max((p.max_rel_error for p in self.per_param), default=0.0)

    @property
    def mean_rel_error(self) -> float:
        total = sum(p.mean_rel_error * p.n_checked for p in self.per_param)
        n = sum(p.n_checked for p in self.per_param)
        return total / n if n else 0.0

    @property
    def fraction_within(self) -> float:
        ok = sum(p.fraction_within * p.n_checked for p in self.per_param)
        n = sum(p.n_checked for p in self.per_param)
        return ok / n if n else 1.0

    def ok(self, min_fraction: float = 1.0) -> bool:
        return self.fraction_within >= min_fraction

    def summary_lines(self) -> list[str]:
        lines = [f"{'parameter':<28} {'coords':>7} {'max_rel':>12} {'mean_rel':>12} {'within':>8}"]
        for p in self.per_param:
            lines.append(
                f"{p.name:<28} {p.n_checked:>7} {p.max_rel_error:>12.3e}"
                f" {p.mean_rel_error:>12.3e} {p.fraction_within:>8.4f}"
            )
        lines.append(
            f"{'TOTAL':<28} {sum(p.n_checked for p in self.per_param):>7}"
            f" {self.max_rel_error:>12.3e} {self.mean_rel_error:>12.3e}"
            f" {self.fraction_within:>8.4f}"
        )
        return lines


def _rel_error(a: float, n: float) -> float:
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(
    params: Sequence[Parameter],
    loss_fn: Callable[[], Tensor],
    h: float = 1e-5,
    tolerance: float = 1e-3,
    max_coords_per_param: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Check every parameter coordinate (or a random subset per parameter).

    ``loss_fn`` must be a deterministic scalar function of the current
    parameter values (no dropout, fixed sample).
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    base = loss.item()
    if not math.isfinite(base):
        raise TensorError(f"grad_check: non-finite loss {base}")
    loss.backward()
    analytic = {p.name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for p in params}

    report = GradCheckReport(h=h, tolerance=tolerance)
    for p in params:
        flat = p.data.reshape(-1)
        n = flat.size
        if max_coords_per_param is not None and n > max_coords_per_param:
            gen = rng if rng is not None else np.random.default_rng(0)
            coords = np.sort(gen.choice(n, size=max_coords_per_param, replace=False))
        else:
            coords = np.arange(n)
        a_flat = analytic[p.name].reshape(-1)
        errors = np.empty(len(coords))
        with no_grad():  # perturbed evaluations need values only
            for out_i, i in enumerate(coords):
                orig = flat[i]
                flat[i] = orig + h
                f_plus = loss_fn().item()
                flat[i] = orig - h
                f_minus = loss_fn().item()
                flat[i] = orig
                if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
                    raise TensorError("grad_check: non-finite loss during perturbation")
                numeric = (f_plus - f_minus) / (2.0 * h)
                errors[out_i] = _rel_error(float(a_flat[i]), numeric)
        report.per_param.append(
            ParamCheck(
                name=p.name,
                n_checked=len(coords),
                max_rel_error=float(errors.max()) if len(coords) else 0.0,
                mean_rel_error=float(errors.mean()) if len(coords) else 0.0,
                fraction_within=float((errors < tolerance).mean()) if len(coords) else 1.0,
            )
        )
    return report
