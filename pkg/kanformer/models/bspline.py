import numpy as np

from dataclasses import dataclass
from typing import Union

from kanformer.errors import ContractError, DomainError
from kanformer.tensor import Tensor


@dataclass
class BSplineBasis:
    """Spline of degree `order` over `knots` with one coefficient per basis function."""

    order: int
    knots: np.ndarray
    coefficients: np.ndarray

    def __post_init__(self):
        self.knots = np.asarray(self.knots, dtype=np.float64)
        self.coefficients = np.asarray(self.coefficients, dtype=np.float64)
        if self.order < 1:
            raise ContractError(f"spline order must be >= 1, got {self.order}")
        if self.knots.ndim != 1 or np.any(np.diff(self.knots) < 0):
            raise ContractError("knots must be a nondecreasing 1-d sequence")
        if self.num_basis < 1:
            raise ContractError(
                f"{len(self.knots)} knots leave no basis function for order {self.order}"
            )
        if self.coefficients.shape != (self.num_basis,):
            raise ContractError(
                f"expected {self.num_basis} coefficients, got shape {self.coefficients.shape}"
            )

    @property
    def num_basis(self) -> int:
        return len(self.knots) - self.order - 1

    @property
    def domain(self):
        return self.knots[self.order], self.knots[len(self.knots) - self.order - 1]

    @classmethod
    def uniform(cls, order: int, num_basis: int, low: float = 0.0, high: float = 1.0, coefficients=None):
        """Uniform knots whose interior span is [low, high]."""
        step = (high - low) / (num_basis - order)
        knots = low + step * np.arange(-order, num_basis + 1)
        if coefficients is None:
            coefficients = np.ones(num_basis)
        return cls(order, knots, coefficients)

    def basis_functions(self, x: np.ndarray) -> np.ndarray:
        """Evaluate every B_i at x with the Cox-de Boor recursion, shape (len(x), num_basis)."""
        t = self.knots
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        low, high = self.domain
        outside = (x < low) | (x > high) | ~np.isfinite(x)
        if np.any(outside):
            bad = x[outside][0]
            raise DomainError(f"x = {bad} lies outside the spline domain [{low}, {high}]")

        xc = x[:, None]
        b = ((t[:-1] <= xc) & (xc < t[1:])).astype(np.float64)
        # the right end of the domain belongs to the last non-empty interval
        at_end = x == high
        if np.any(at_end):
            last = np.searchsorted(t, high, side="left") - 1
            b[at_end] = 0.0
            b[at_end, last] = 1.0

        for p in range(1, self.order + 1):
            left_den = t[p:-1] - t[: -p - 1]
            right_den = t[p + 1 :] - t[1:-p]
            left = _safe_ratio(xc - t[: -p - 1], left_den) * b[:, :-1]
            right = _safe_ratio(t[p + 1 :] - xc, right_den) * b[:, 1:]
            b = left + right
        return b


def _safe_ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    # 0/0 terms of the recursion are defined as 0
    nonzero = den != 0
    return np.where(nonzero, num / np.where(nonzero, den, 1.0), 0.0)


def bspline_eval(basis: BSplineBasis, x: Union[Tensor, np.ndarray, float]) -> Tensor:
    """sum_i c_i B_i(x), evaluated elementwise; no extrapolation outside the domain."""
    arr = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
    values = basis.basis_functions(arr) @ basis.coefficients
    return Tensor(values.reshape(arr.shape), precision="f64")
