"""Finite-difference verification harness for differentiable operations.

Every registered operation exposes the scalar reduction sum(output) as its
forward pass, an analytic gradient of that scalar with respect to each
input/parameter array, and a seeded case factory that produces inputs kept
away from activation kinks.  ``grad_check`` compares the analytic gradients
against central differences (f(x+h) - f(x-h)) / 2h and reports the maximum
relative error.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import NonFinite


@dataclass
class GradCase:
    """Concrete inputs for one check: differentiated arrays + fixed constants."""

    arrays: dict[str, np.ndarray]
    consts: dict = field(default_factory=dict)

    def copy(self) -> "GradCase":
        return GradCase(
            arrays={k: np.array(v, dtype=np.float64) for k, v in self.arrays.items()},
            consts=dict(self.consts),
        )


@dataclass
class GradOp:
    fn_id: str
    make_case: Callable[[int], GradCase]
    forward: Callable[[dict, dict], float]
    gradient: Callable[[dict, dict], dict[str, np.ndarray]]


REGISTRY: dict[str, GradOp] = {}


def register(op: GradOp) -> None:
    REGISTRY[op.fn_id] = op


def available_ops() -> list[str]:
    return sorted(REGISTRY)


def grad(fn_id: str, arrays: dict, consts: dict | None = None) -> dict[str, np.ndarray]:
    """Analytic gradients of sum(output) for a registered operation."""
    if fn_id not in REGISTRY:
        raise KeyError(f"unknown differentiable op {fn_id!r}; known: {available_ops()}")
    grads = REGISTRY[fn_id].gradient(arrays, consts or {})
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFinite(f"gradient for {name!r} of {fn_id} is non-finite")
    return grads


def fd_gradients(
    forward: Callable[[dict, dict], float],
    arrays: dict[str, np.ndarray],
    consts: dict,
    h: float = 1e-5,
) -> dict[str, np.ndarray]:
    """Central-difference gradients, perturbing one scalar entry at a time."""
    grads = {}
    for name, arr in arrays.items():
        arr = np.asarray(arr, dtype=np.float64)
        arrays[name] = arr
        flat = arr.reshape(-1)
        out = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = forward(arrays, consts)
            flat[i] = orig - h
            fm = forward(arrays, consts)
            flat[i] = orig
            out[i] = (fp - fm) / (2.0 * h)
        grads[name] = out.reshape(arr.shape)
    return grads


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    """Norm-level relative disagreement: ||a-b|| / max(||a||, ||b||, floor).

    The floor keeps arrays whose true gradient is structurally zero (for
    example a key bias, which every softmax row ignores) from comparing
    finite-difference roundoff noise against an exact zero.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), floor, 1e-12)
    return float(np.linalg.norm(a - b) / denom)


@dataclass
class GradCheckReport:
    fn_id: str
    seed: int
    step: float
    tolerance: float
    errors: dict[str, float]

    @property
    def max_relative_error(self) -> float:
        return max(self.errors.values()) if self.errors else 0.0

    @property
    def passed(self) -> bool:
        return self.max_relative_error < self.tolerance

    def to_dict(self) -> dict:
        return {
            "fn": self.fn_id,
            "seed": self.seed,
            "step": self.step,
            "tolerance": self.tolerance,
            "max_relative_error": self.max_relative_error,
            "passed": self.passed,
            "per_array": self.errors,
        }


def grad_check(
    fn_id: str,
    seed: int = 0,
    step: float = 1e-5,
    tolerance: float = 1e-5,
    case: GradCase | None = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences for one case."""
    if fn_id not in REGISTRY:
        raise KeyError(f"unknown differentiable op {fn_id!r}; known: {available_ops()}")
    op = REGISTRY[fn_id]
    case = (case or op.make_case(seed)).copy()
    analytic = grad(fn_id, case.arrays, case.consts)
    numeric = fd_gradients(op.forward, case.arrays, case.consts, h=step)
    # per-array scale floor: 1e-4 of the whole gradient's norm
    ga = np.concatenate([np.ravel(analytic[k]) for k in case.arrays])
    gf = np.concatenate([np.ravel(numeric[k]) for k in case.arrays])
    floor = 1e-4 * max(np.linalg.norm(ga), np.linalg.norm(gf))
    errors = {
        name: relative_error(analytic[name], numeric[name], floor=floor)
        for name in case.arrays
    }
    return GradCheckReport(
        fn_id=fn_id, seed=seed, step=step, tolerance=tolerance, errors=errors
    )


def run_suite(
    fn_ids: list[str] | None = None,
    seeds: int = 50,
    step: float = 1e-5,
    tolerance: float = 1e-5,
) -> list[GradCheckReport]:
    """grad_check over a seed range for each requested operation."""
    reports = []
    for fn_id in fn_ids or available_ops():
        for seed in range(seeds):
            reports.append(grad_check(fn_id, seed=seed, step=step, tolerance=tolerance))
    return reports
