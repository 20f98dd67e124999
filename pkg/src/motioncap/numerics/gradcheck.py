"""Central finite-difference check of tape gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor


class EvaluationError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    tol: float
    errors: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(err < self.tol for err in self.errors.values())

    @property
    def failures(self) -> list[str]:
        return [name for name, err in self.errors.items() if not err < self.tol]

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    def lines(self) -> list[str]:
        return [
            f"{'PASS' if err < self.tol else 'FAIL'} {name} max_rel_err={err:.3e}"
            for name, err in self.errors.items()
        ]


def _scalar(fn: Callable[[], Tensor]) -> float:
    value = float(np.asarray(fn().data).reshape(()))
    if not np.isfinite(value):
        raise EvaluationError(f"loss evaluated to {value}")
    return value


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Max over entries of ``|a - n| / max(|a|, |n|, floor)``."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def grad_check(
    scalar_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    step: float = 1e-5,
    tol: float = 1e-6,
    floor: float = 1e-6,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare tape gradients of ``scalar_fn()`` with central differences.

    ``scalar_fn`` rebuilds the loss from the current ``param.data`` on every
    call. With ``max_entries`` set, each parameter is probed on a random
    subset of that many entries.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = scalar_fn()
        if not np.all(np.isfinite(loss.data)):
            raise EvaluationError("non-finite loss at the probe point")
        tape.backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    report = GradCheckReport(tol=tol)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_entries, replace=False)
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + step
            up = _scalar(scalar_fn)
            flat[i] = orig - step
            down = _scalar(scalar_fn)
            flat[i] = orig
            numeric[j] = (up - down) / (2.0 * step)
        report.errors[name] = relative_error(analytic[name].reshape(-1)[idx], numeric, floor)
    return report
