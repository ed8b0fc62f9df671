"""
Feynman equation registry and sampler.

The 30 registered equations are the function-learning benchmark set, kept in
benchmark row order. Sampling ranges come from `config/feynman_ranges.csv`
(one row per equation variable: id, variable, low, high); variables are drawn
independently and uniformly, in the order they are listed.
"""
import numpy as np
import pandas as pd

from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

from kanformer.errors import ConfigError, ContractError, FormatError, GenerationError

RANGES_PATH = Path(__file__).resolve().parent.parent / "config" / "feynman_ranges.csv"

sqrt, sin, cos, exp, pi = np.sqrt, np.sin, np.cos, np.exp, np.pi


@dataclass
class FeynmanSpec:
    id: str
    formula: str
    variables: Tuple[str, ...]
    fn: Callable[..., np.ndarray]
    ranges: Dict[str, Tuple[float, float]] = field(default_factory=dict)

    @property
    def arity(self) -> int:
        return len(self.variables)

    def evaluate(self, inputs: np.ndarray) -> np.ndarray:
        inputs = np.asarray(inputs, dtype=np.float64)
        if inputs.ndim != 2 or inputs.shape[1] != self.arity:
            raise ContractError(f"{self.id} takes {self.arity} variables, got inputs {inputs.shape}")
        with np.errstate(all="ignore"):
            return np.asarray(self.fn(*inputs.T), dtype=np.float64)


_EQUATIONS: List[Tuple[str, str, Sequence[str], Callable]] = [
    ("I.6.20a", "exp(-theta**2/2)/sqrt(2*pi)", ("theta",),
     lambda theta: exp(-theta**2 / 2) / sqrt(2 * pi)),
    ("I.6.20", "exp(-theta**2/(2*sigma**2))/sqrt(2*pi*sigma**2)", ("theta", "sigma"),
     lambda theta, sigma: exp(-theta**2 / (2 * sigma**2)) / sqrt(2 * pi * sigma**2)),
    ("I.6.20b", "exp(-(theta-theta1)**2/(2*sigma**2))/sqrt(2*pi*sigma**2)", ("theta", "theta1", "sigma"),
     lambda theta, theta1, sigma: exp(-((theta - theta1) ** 2) / (2 * sigma**2)) / sqrt(2 * pi * sigma**2)),
    ("I.8.4", "sqrt((x2-x1)**2+(y2-y1)**2)", ("x1", "x2", "y1", "y2"),
     lambda x1, x2, y1, y2: sqrt((x2 - x1) ** 2 + (y2 - y1) ** 2)),
    ("I.9.18", "G*m1*m2/((x2-x1)**2+(y2-y1)**2+(z2-z1)**2)",
     ("G", "m1", "m2", "x1", "x2", "y1", "y2", "z1", "z2"),
     lambda G, m1, m2, x1, x2, y1, y2, z1, z2: G * m1 * m2 / ((x2 - x1) ** 2 + (y2 - y1) ** 2 + (z2 - z1) ** 2)),
    ("I.10.7", "m0/sqrt(1-v**2/c**2)", ("m0", "v", "c"),
     lambda m0, v, c: m0 / sqrt(1 - v**2 / c**2)),
    ("I.11.19", "x1*y1+x2*y2+x3*y3", ("x1", "y1", "x2", "y2", "x3", "y3"),
     lambda x1, y1, x2, y2, x3, y3: x1 * y1 + x2 * y2 + x3 * y3),
    ("I.12.1", "mu*Nn", ("mu", "Nn"),
     lambda mu, Nn: mu * Nn),
    ("I.12.2", "q1*q2/(4*pi*epsilon*r**2)", ("q1", "q2", "epsilon", "r"),
     lambda q1, q2, epsilon, r: q1 * q2 / (4 * pi * epsilon * r**2)),
    ("I.12.4", "q1/(4*pi*epsilon*r**2)", ("q1", "epsilon", "r"),
     lambda q1, epsilon, r: q1 / (4 * pi * epsilon * r**2)),
    ("I.12.5", "q2*Ef", ("q2", "Ef"),
     lambda q2, Ef: q2 * Ef),
    ("I.12.11", "q*(Ef+B*v*sin(theta))", ("q", "Ef", "B", "v", "theta"),
     lambda q, Ef, B, v, theta: q * (Ef + B * v * sin(theta))),
    ("I.13.4", "1/2*m*(v**2+u**2+w**2)", ("m", "v", "u", "w"),
     lambda m, v, u, w: 0.5 * m * (v**2 + u**2 + w**2)),
    ("I.13.12", "G*m1*m2*(1/r2-1/r1)", ("G", "m1", "m2", "r1", "r2"),
     lambda G, m1, m2, r1, r2: G * m1 * m2 * (1 / r2 - 1 / r1)),
    ("I.14.3", "m*g*z", ("m", "g", "z"),
     lambda m, g, z: m * g * z),
    ("I.14.4", "1/2*ks*x**2", ("ks", "x"),
     lambda ks, x: 0.5 * ks * x**2),
    ("I.15.3x", "(x-u*t)/sqrt(1-u**2/c**2)", ("x", "u", "t", "c"),
     lambda x, u, t, c: (x - u * t) / sqrt(1 - u**2 / c**2)),
    ("I.15.3t", "(t-u*x/c**2)/sqrt(1-u**2/c**2)", ("t", "u", "x", "c"),
     lambda t, u, x, c: (t - u * x / c**2) / sqrt(1 - u**2 / c**2)),
    ("I.15.10", "m0*v/sqrt(1-v**2/c**2)", ("m0", "v", "c"),
     lambda m0, v, c: m0 * v / sqrt(1 - v**2 / c**2)),
    ("I.16.6", "(u+v)/(1+u*v/c**2)", ("u", "v", "c"),
     lambda u, v, c: (u + v) / (1 + u * v / c**2)),
    ("I.18.4", "(m1*r1+m2*r2)/(m1+m2)", ("m1", "r1", "m2", "r2"),
     lambda m1, r1, m2, r2: (m1 * r1 + m2 * r2) / (m1 + m2)),
    ("I.18.5", "r*F*sin(theta)", ("r", "F", "theta"),
     lambda r, F, theta: r * F * sin(theta)),
    ("I.18.16", "m*r*v*sin(theta)", ("m", "r", "v", "theta"),
     lambda m, r, v, theta: m * r * v * sin(theta)),
    ("I.24.6", "1/4*m*(omega**2+omega0**2)*x**2", ("m", "omega", "omega0", "x"),
     lambda m, omega, omega0, x: 0.25 * m * (omega**2 + omega0**2) * x**2),
    ("I.25.13", "q/C", ("q", "C"),
     lambda q, C: q / C),
    ("I.26.2", "arcsin(n*sin(theta2))", ("n", "theta2"),
     lambda n, theta2: np.arcsin(n * sin(theta2))),
    ("I.27.6", "1/(1/d1+n/d2)", ("d1", "d2", "n"),
     lambda d1, d2, n: 1 / (1 / d1 + n / d2)),
    ("I.29.4", "omega/c", ("omega", "c"),
     lambda omega, c: omega / c),
    # rounding can push the radicand a few ulps below zero when x1 == x2
    ("I.29.16", "sqrt(x1**2+x2**2-2*x1*x2*cos(theta1-theta2))", ("x1", "x2", "theta1", "theta2"),
     lambda x1, x2, theta1, theta2: sqrt(np.maximum(x1**2 + x2**2 - 2 * x1 * x2 * cos(theta1 - theta2), 0.0))),
    ("I.30.3", "I0*sin(n*theta/2)**2/sin(theta/2)**2", ("I0", "n", "theta"),
     lambda I0, n, theta: I0 * sin(n * theta / 2) ** 2 / sin(theta / 2) ** 2),
]


def load_range_table(path: Union[str, Path] = RANGES_PATH) -> pd.DataFrame:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Feynman range table not found: {path}")
    df = pd.read_csv(path, dtype={"id": str, "variable": str, "low": float, "high": float})
    expected = ["id", "variable", "low", "high"]
    if list(df.columns) != expected:
        raise FormatError(f"{path}: expected columns {expected}, got {list(df.columns)}")
    bad = df[~(df.low < df.high)]
    if len(bad):
        row = bad.iloc[0]
        raise FormatError(f"{path}: empty range for {row.id} variable {row.variable}")
    return df


def build_registry(ranges: Optional[pd.DataFrame] = None) -> Dict[str, FeynmanSpec]:
    ranges = load_range_table() if ranges is None else ranges
    registry = {}
    for eq_id, formula, variables, fn in _EQUATIONS:
        rows = ranges[ranges.id == eq_id]
        listed = tuple(rows.variable)
        if listed != tuple(variables):
            raise FormatError(
                f"range table lists variables {listed} for {eq_id}, expected {tuple(variables)}"
            )
        spec_ranges = {r.variable: (float(r.low), float(r.high)) for r in rows.itertuples()}
        registry[eq_id] = FeynmanSpec(eq_id, formula, tuple(variables), fn, spec_ranges)
    return registry


@lru_cache(maxsize=1)
def _default_registry() -> Dict[str, FeynmanSpec]:
    return build_registry()


def registered_equations() -> List[str]:
    return list(_default_registry())


def get_equation(eq_id: str) -> FeynmanSpec:
    registry = _default_registry()
    if eq_id not in registry:
        raise ConfigError(f"unknown Feynman equation '{eq_id}'; registered: {', '.join(registry)}")
    return registry[eq_id]


def feynman_generate(
    spec: Union[FeynmanSpec, str], n: int, seed: Union[int, np.random.Generator]
) -> Tuple[np.ndarray, np.ndarray]:
    """Sample `n` noiseless (inputs, targets) pairs; (spec, n, seed) fixes the arrays exactly."""
    if isinstance(spec, str):
        spec = get_equation(spec)
    if n < 1:
        raise ContractError(f"feynman_generate needs n >= 1, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)

    columns = []
    for var in spec.variables:
        low, high = spec.ranges[var]
        columns.append(rng.uniform(low, high, size=n))
    inputs = np.stack(columns, axis=1)
    targets = spec.evaluate(inputs)

    bad = np.flatnonzero(~np.isfinite(targets))
    if bad.size:
        i = int(bad[0])
        values = ", ".join(f"{v}={x:.6g}" for v, x in zip(spec.variables, inputs[i]))
        raise GenerationError(
            f"{spec.id}: non-finite target at sample {i} ({values}); check the range table"
        )
    return inputs, targets


def export_csv(
    spec: FeynmanSpec, inputs: np.ndarray, targets: np.ndarray, path: Union[str, Path]
) -> Path:
    """One row per sample: variables then target."""
    df = pd.DataFrame(inputs, columns=list(spec.variables))
    df["target"] = targets
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, float_format="%.17g")
    return path
