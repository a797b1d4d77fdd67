"""Simulation and CSV I/O for AR(p) series with an optional coefficient break.

The observed stretch is stored as ``y_{1-p}, ..., y_n`` so that the first
``p`` entries of :attr:`Series.values` are the initial values and the last
``n`` entries are the observations entering the moment conditions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np


class SimulationError(RuntimeError):
    """Raised when a simulated path overflows to a non-finite value."""

    def __init__(self, index: int, phase: str):
        self.index = index
        self.phase = phase
        super().__init__(
            f"non-finite value generated at {phase} index {index}; "
            "the path is explosive for the requested coefficients"
        )


class SeriesFormatError(ValueError):
    """Raised for malformed or too-short series files."""


@dataclass(frozen=True)
class InnovationKind:
    """Innovation law with median zero.

    ``param`` is the standard deviation for ``gaussian``, the degrees of
    freedom for ``student_t`` and the scale for ``cauchy``.
    """

    kind: Literal["gaussian", "student_t", "cauchy"]
    param: float = 1.0

    def __post_init__(self):
        if self.kind not in ("gaussian", "student_t", "cauchy"):
            raise ValueError(f"unknown innovation kind {self.kind!r}")
        if not (self.param > 0 and math.isfinite(self.param)):
            raise ValueError(f"innovation parameter must be positive, got {self.param}")

    @classmethod
    def gaussian(cls, sigma: float = 1.0) -> "InnovationKind":
        return cls("gaussian", sigma)

    @classmethod
    def student_t(cls, df: float = 2.0) -> "InnovationKind":
        return cls("student_t", df)

    @classmethod
    def cauchy(cls, scale: float = 1.0) -> "InnovationKind":
        return cls("cauchy", scale)

    @classmethod
    def parse(cls, text: str) -> "InnovationKind":
        """Parse ``"cauchy"``, ``"t2"``, ``"student_t:3.5"``, ``"normal"`` ..."""
        text = text.strip().lower()
        name, _, arg = text.partition(":")
        aliases = {"normal": "gaussian", "gauss": "gaussian", "t": "student_t",
                   "student": "student_t"}
        if name.startswith("t") and name[1:].replace(".", "", 1).isdigit():
            return cls("student_t", float(name[1:]))
        name = aliases.get(name, name)
        default = 2.0 if name == "student_t" else 1.0
        return cls(name, float(arg) if arg else default)

    def label(self) -> str:
        if self.kind == "student_t":
            return f"t{self.param:g}"
        if self.param == 1.0:
            return "normal" if self.kind == "gaussian" else self.kind
        return f"{self.kind}{self.param:g}"

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "gaussian":
            return self.param * rng.standard_normal(size)
        if self.kind == "student_t":
            return rng.standard_t(self.param, size)
        return self.param * rng.standard_cauchy(size)


@dataclass(frozen=True)
class ARChangeSpec:
    """Two-regime AR(p) design.

    ``theta1`` governs ``t = 1..k*`` (and the burn-in), ``theta2`` governs
    ``t = k*+1..n`` where ``k* = round(r * n)``. With ``r=None`` (or
    ``theta2=None``) there is no break.
    """

    theta1: tuple[float, ...]
    n: int
    theta2: tuple[float, ...] | None = None
    r: float | None = None
    burn_in: int = 500
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "theta1", tuple(float(v) for v in np.atleast_1d(self.theta1)))
        if self.theta2 is not None:
            theta2 = tuple(float(v) for v in np.atleast_1d(self.theta2))
            if len(theta2) != len(self.theta1):
                raise ValueError("theta1 and theta2 must have the same length")
            object.__setattr__(self, "theta2", theta2)
        if self.n < 2:
            raise ValueError("n must be at least 2")
        if self.burn_in < 0:
            raise ValueError("burn_in must be nonnegative")
        if self.r is not None:
            if not 0.0 < self.r < 1.0:
                raise ValueError("break fraction r must lie in (0, 1)")
            k = self.break_index
            if not 1 <= k <= self.n - 1:
                raise ValueError(f"break index round(r*n)={k} outside [1, n-1]")

    @property
    def p(self) -> int:
        return len(self.theta1)

    @property
    def break_index(self) -> int | None:
        """k*, rounded half-up; None without a break."""
        if self.r is None or self.theta2 is None:
            return None
        return round_half_up(self.r * self.n)


@dataclass(frozen=True)
class Series:
    """Observed stretch ``y_{1-p}, ..., y_n`` of an AR(p) process."""

    p: int
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        if self.p < 1:
            raise ValueError("lag order p must be positive")
        if values.ndim != 1 or values.size < self.p + 2:
            raise SeriesFormatError(
                f"series needs at least p+2={self.p + 2} values, got {values.size}"
            )
        if not np.all(np.isfinite(values)):
            bad = int(np.flatnonzero(~np.isfinite(values))[0])
            raise SeriesFormatError(f"non-finite value at position {bad}")

    @property
    def n(self) -> int:
        return self.values.size - self.p

    @property
    def y(self) -> np.ndarray:
        """Responses ``y_1..y_n``."""
        return self.values[self.p:]

    @property
    def lags(self) -> np.ndarray:
        """Regressor matrix with rows ``X_{t-1} = (y_{t-1}, ..., y_{t-p})``."""
        v, p, n = self.values, self.p, self.n
        return np.column_stack([v[p - j: p - j + n] for j in range(1, p + 1)])

    def scaled(self, alpha: float) -> "Series":
        return Series(self.p, alpha * self.values)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def replicate_rng(seed: int, replicate: int = 0) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, replicate)``.

    Each replicate owns an independent Philox stream, so serial and parallel
    runs draw identical numbers.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(replicate)])
    return np.random.Generator(np.random.Philox(ss))


def innovation_stream(spec: ARChangeSpec, innov: InnovationKind, replicate: int = 0) -> np.ndarray:
    """All innovation draws used by :func:`simulate`: burn-in first, then e_1..e_n."""
    return innov.draw(replicate_rng(spec.seed, replicate), spec.burn_in + spec.n)


def simulate(spec: ARChangeSpec, innov: InnovationKind, replicate: int = 0) -> Series:
    """Generate one path of the two-regime AR(p) model.

    The recursion starts from ``p`` zeros, runs ``burn_in`` steps under
    ``theta1`` and keeps the last ``p`` burn-in values as ``y_{1-p..0}``.
    Stationarity is not enforced.
    """
    p, n, burn = spec.p, spec.n, spec.burn_in
    e = innovation_stream(spec, innov, replicate)
    theta1 = np.asarray(spec.theta1)
    theta2 = np.asarray(spec.theta2) if spec.theta2 is not None else theta1
    kstar = spec.break_index if spec.break_index is not None else n

    buf = np.zeros(p + burn + n)
    for s in range(burn + n):
        t = s - burn + 1  # observed time index, <= 0 during burn-in
        theta = theta1 if t <= kstar else theta2
        pos = p + s
        lagged = buf[pos - p: pos][::-1]
        val = float(np.dot(theta, lagged)) + e[s]
        if not math.isfinite(val):
            if t >= 1:
                raise SimulationError(t, "observation")
            raise SimulationError(s, "burn-in")
        buf[pos] = val
    return Series(p, buf[burn:])


def save_series(series: Series, path: str | Path, header: str | None = "y") -> None:
    lines = [header] if header else []
    lines.extend(format(float(v), ".17g") for v in series.values)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_series(path: str | Path, p: int) -> Series:
    """Read a one-column CSV; a single non-numeric first line is a header."""
    values = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        cell = line.split(",")[0].strip()
        try:
            values.append(float(cell))
        except ValueError:
            if lineno == 1:
                continue
            raise SeriesFormatError(f"{path}: line {lineno}: not a number: {cell!r}") from None
    if len(values) < p + 2:
        raise SeriesFormatError(
            f"{path}: need at least p+2={p + 2} rows for p={p}, found {len(values)}"
        )
    return Series(p, np.array(values))
