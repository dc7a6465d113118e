"""Cell-averaged density grids shared by the simulator and the solver."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch


@dataclass(frozen=True)
class GridSpec:
    xmin: float
    xmax: float
    n: int

    def __post_init__(self):
        if not self.xmax > self.xmin:
            raise ValueError("need xmax > xmin")
        if self.n <= 0:
            raise ValueError("need n > 0")

    @property
    def dx(self) -> float:
        return (self.xmax - self.xmin) / self.n

    def centers(self) -> np.ndarray:
        return self.xmin + (np.arange(self.n) + 0.5) * self.dx

    def edges(self) -> np.ndarray:
        return np.linspace(self.xmin, self.xmax, self.n + 1)


@dataclass
class DensityGrid:
    """Piecewise-constant density: values are cell averages on a uniform grid."""

    spec: GridSpec
    values: np.ndarray
    time: float = 0.0
    leak: float = 0.0  # mass lost to truncation/tails, tracked not hidden

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.spec.n,):
            raise ValueError("values length does not match grid")
        if np.min(self.values) < -1e-10:
            raise ValueError("density has negative values beyond tolerance")

    @property
    def dx(self) -> float:
        return self.spec.dx

    def centers(self) -> np.ndarray:
        return self.spec.centers()

    def mass(self) -> float:
        return float(self.values.sum() * self.dx)

    def normalized(self) -> "DensityGrid":
        m = self.mass()
        if m <= 0.0:
            raise ValueError("cannot normalize a zero-mass grid")
        return DensityGrid(self.spec, self.values / m, self.time, self.leak)

    def clipped(self) -> "DensityGrid":
        return DensityGrid(self.spec, np.maximum(self.values, 0.0),
                           self.time, self.leak)

    def check_same_grid(self, other: "DensityGrid") -> None:
        if self.spec != other.spec:
            raise GridMismatch("density grids differ in extent or resolution")

    def to_csv(self, path) -> None:
        x = self.centers()
        with open(path, "w") as fh:
            fh.write("x,value\n")
            for xi, vi in zip(x, self.values):
                fh.write(f"{xi:.17g},{vi:.17g}\n")


def gaussian_on_grid(spec: GridSpec, mean: float, sd: float,
                     time: float = 0.0) -> DensityGrid:
    """Exact cell averages of a normal density (difference of cdfs)."""
    from scipy.stats import norm
    edges = spec.edges()
    cdf = norm.cdf(edges, loc=mean, scale=sd)
    vals = np.diff(cdf) / spec.dx
    return DensityGrid(spec, vals, time=time)
