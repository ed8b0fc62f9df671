"""
Finite-difference gradient oracle.

Central differences (f(x + h e) - f(x - h e)) / 2h are compared against the
reverse pass; the relative error of a coordinate uses max(|a|, |b|, 1e-8) as
denominator. Coordinates whose absolute difference is within `atol` count as
exact. Checks are meant to run in f64.
"""
from __future__ import annotations

import numpy as np

from dataclasses import dataclass
from typing import Callable, Dict, Optional, Sequence, Tuple

from kanformer.errors import ContractError, GradcheckError
from kanformer.tensor.tensor import Tape, Tensor, backward


@dataclass
class GradcheckReport:
    max_rel_err: float
    passed: bool
    worst: Optional[Tuple[str, Tuple[int, ...]]] = None
    checked: int = 0


def relative_error(a: float, b: float, atol: float = 0.0) -> float:
    if abs(a - b) <= atol:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b), 1e-8)


def _scalar(value: Tensor, where: str) -> float:
    if value.size != 1:
        raise ContractError(f"gradcheck needs a scalar-valued function, got shape {value.shape}")
    v = value.item()
    if not np.isfinite(v):
        raise GradcheckError(f"function value is not finite at {where}")
    return v


def _central_difference(evaluate: Callable[[], Tensor], arr: np.ndarray, idx, h: float, where: str) -> float:
    orig = arr[idx]
    arr[idx] = orig + h
    plus = _scalar(evaluate(), where)
    arr[idx] = orig - h
    minus = _scalar(evaluate(), where)
    arr[idx] = orig
    return (plus - minus) / (2.0 * h)


def finite_diff_gradcheck(
    f: Callable[[Tensor], Tensor],
    point: Tensor,
    h: float = 1e-5,
    tol: float = 1e-4,
    atol: float = 1e-9,
) -> GradcheckReport:
    """Check the reverse-mode gradient of a scalar function at `point`."""
    if h <= 0:
        raise ContractError(f"gradcheck needs h > 0, got {h}")
    if point.precision != "f64":
        raise ContractError("gradcheck must run in f64")

    x = Tensor(point.data.copy(), requires_grad=True, precision="f64")
    with Tape() as tape:
        out = f(x)
    _scalar(out, "the base point")
    analytic = backward(out, tape).get(x)
    analytic = np.zeros_like(x.data) if analytic is None else analytic.data

    probe = Tensor(x.data.copy(), precision="f64")
    worst, worst_idx = 0.0, None
    for idx in np.ndindex(*x.shape):
        numeric = _central_difference(lambda: f(probe), probe.data, idx, h, f"coordinate {idx}")
        err = relative_error(float(analytic[idx]), numeric, atol)
        if err > worst or worst_idx is None:
            worst, worst_idx = err, idx
    return GradcheckReport(worst, worst < tol, ("point", worst_idx), int(x.size))


def gradcheck_parameters(
    loss_fn: Callable[[], Tensor],
    params: Sequence[Tuple[str, Tensor]],
    h: float = 1e-5,
    tol: float = 1e-4,
    atol: float = 1e-9,
    max_coords: Optional[int] = 16,
    rng: Optional[np.random.Generator] = None,
) -> GradcheckReport:
    """Check gradients of a closure with respect to named parameter tensors.

    Parameters are perturbed in place; at most `max_coords` randomly chosen
    coordinates are probed per tensor.
    """
    if h <= 0:
        raise ContractError(f"gradcheck needs h > 0, got {h}")
    rng = rng if rng is not None else np.random.default_rng(0)
    with Tape() as tape:
        out = loss_fn()
    _scalar(out, "the base point")
    grads: Dict[Tensor, Tensor] = backward(out, tape)

    worst, worst_at, checked = 0.0, None, 0
    for name, p in params:
        if p.precision != "f64":
            raise ContractError(f"gradcheck must run in f64, parameter '{name}' is {p.precision}")
        analytic = grads[p].data if p in grads else np.zeros_like(p.data)
        coords = list(np.ndindex(*p.shape))
        if max_coords is not None and len(coords) > max_coords:
            pick = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[i] for i in sorted(pick)]
        for idx in coords:
            numeric = _central_difference(loss_fn, p.data, idx, h, f"{name}{list(idx)}")
            err = relative_error(float(analytic[idx]), numeric, atol)
            checked += 1
            if err > worst or worst_at is None:
                worst, worst_at = err, (name, idx)
    return GradcheckReport(worst, worst < tol, worst_at, checked)
