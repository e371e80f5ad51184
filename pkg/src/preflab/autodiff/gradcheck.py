"""Finite-difference verification of autodiff gradients.

Central differences are only trustworthy in 64-bit mode, so the check
refuses float32 parameters outright.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import ContractError, Graph, Tensor


@dataclass
class GradCheckEntry:
    name: str
    max_rel_err: float
    passed: bool


@dataclass
class GradCheckReport:
    entries: list
    tol: float

    @property
    def passed(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def worst(self) -> float:
        return max((e.max_rel_err for e in self.entries), default=0.0)

    def summary(self) -> str:
        lines = [
            f"{'PASS' if e.passed else 'FAIL'}  {e.name}: max rel err {e.max_rel_err:.3e}"
            for e in self.entries
        ]
        lines.append(f"overall: {'PASS' if self.passed else 'FAIL'} (tol {self.tol:g})")
        return "\n".join(lines)


def _rel_err(a: np.ndarray, b: np.ndarray, floor: float) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def grad_check(
    f, params: dict, step: float = 1e-5, tol: float = 1e-4, floor: float = 1e-6
) -> GradCheckReport:
    """Compare autodiff gradients of `f()` against central differences.

    `f` is a zero-argument callable that runs the forward pass over
    `params` (a name -> Tensor map) and returns the scalar loss tensor.
    All parameters must be float64.

    `floor` bounds the relative-error denominator from below: gradients
    smaller than it sit inside the cancellation noise of the central
    difference (~eps64 * |loss| / step) and are compared against the
    floor instead of against themselves.
    """
    for name, p in params.items():
        if p.data.dtype != np.float64:
            raise ContractError(f"grad_check requires float64 parameters ({name} is {p.data.dtype})")

    for p in params.values():
        p.zero_grad()
    graph = Graph()
    with graph:
        loss = f()
    graph.backward(loss)
    autodiff = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }
    for p in params.values():
        p.zero_grad()

    entries = []
    for name, p in params.items():
        flat = p.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            plus = f().item()
            flat[i] = orig - step
            minus = f().item()
            flat[i] = orig
            fd[i] = (plus - minus) / (2.0 * step)
        err = float(_rel_err(autodiff[name].reshape(-1), fd, floor).max()) if flat.size else 0.0
        entries.append(GradCheckEntry(name=name, max_rel_err=err, passed=err <= tol))
    return GradCheckReport(entries=entries, tol=tol)
