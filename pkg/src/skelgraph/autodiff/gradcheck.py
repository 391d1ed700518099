"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from ..errors import NumericError
from .core import DiffArray, backward, no_grad


@dataclass
class ParamCheck:
    name: str
    max_rel_error: float
    passed: bool


@dataclass
class GradCheckReport:
    tolerance: float
    checks: list[ParamCheck] = field(default_factory=list)
    failure: str | None = None

    @property
    def passed(self) -> bool:
        return self.failure is None and all(c.passed for c in self.checks)

    @property
    def max_rel_error(self) -> float:
        return max((c.max_rel_error for c in self.checks), default=0.0)

    def __str__(self) -> str:
        lines = [f"gradient check ({'pass' if self.passed else 'FAIL'}, tol={self.tolerance:g})"]
        if self.failure:
            lines.append(f"  failure: {self.failure}")
        for c in self.checks:
            lines.append(f"  {c.name}: max rel err {c.max_rel_error:.3e} {'ok' if c.passed else 'FAIL'}")
        return "\n".join(lines)


def gradient_check(fn: Callable[[], DiffArray], params, tolerance: float = 1e-4,
                   step: float = 1e-6, max_elements: int | None = None,
                   rng: np.random.Generator | None = None) -> GradCheckReport:
    """Compare backward() against central differences for each parameter.

    The relative error of an element is |a - n| / max(|a|, |n|, floor) where
    floor = max(1e-3 * max|n| over that parameter, 1e-5 * max(1, |f|)), so
    gradients that are analytically zero are judged against the scale of
    the function instead of against finite-difference noise. The step is
    ``step * max(1, |x|)``. ``max_elements`` samples that many entries per
    parameter.
    """
    items = list(params.items()) if isinstance(params, Mapping) else [
        (p.name or f"param{i}", p) for i, p in enumerate(params)]
    report = GradCheckReport(tolerance=tolerance)
    for _, p in items:
        p.grad = None
    try:
        loss = fn()
        f0 = abs(float(loss.data))
        backward(loss)
    except NumericError as exc:
        report.failure = str(exc)
        return report

    floor_f = 1e-5 * max(1.0, f0)
    for name, p in items:
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad.copy()
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_elements is not None and flat.size > max_elements:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, size=max_elements, replace=False)
        numeric = np.zeros(idx.size)
        try:
            with no_grad():
                for k, i in enumerate(idx):
                    orig = flat[i]
                    h = step * max(1.0, abs(orig))
                    flat[i] = orig + h
                    fp = float(fn().data)
                    flat[i] = orig - h
                    fm = float(fn().data)
                    flat[i] = orig
                    numeric[k] = (fp - fm) / (2 * h)
        except NumericError as exc:
            report.failure = f"{name}: {exc}"
            return report
        a = analytic.reshape(-1)[idx]
        floor = max(1e-3 * float(np.abs(numeric).max(initial=0.0)), floor_f)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
        rel = float((np.abs(a - numeric) / denom).max(initial=0.0))
        report.checks.append(ParamCheck(name, rel, rel < tolerance))
    return report
