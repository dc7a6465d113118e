"""Density comparisons: MC vs solver vs analytic references."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict
from typing import Callable, Optional

import numpy as np
from scipy.stats import norm

from .density import DensityGrid, GridSpec
from .errors import GridMismatch, UnsupportedReference
from .fpe import FpeOperatorData, apply_nonlocal, _ddx_centered
from .sde import SdeModel

L1_TOL_FLOOR = 0.03


@dataclass
class ComparisonReport:
    l1_distance: float
    ks_statistic: float
    mc_stderr_band: float
    mc_flagged: float
    fpe_leak: float
    tolerance: float
    verdict: bool

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def mc_stderr_band(grid: DensityGrid, n_paths: int) -> float:
    """Expected L1-scale binomial noise of a histogram density estimate."""
    q = np.clip(grid.values * grid.dx, 0.0, 1.0)
    return float(np.sum(np.sqrt(q * (1.0 - q) / n_paths)))


def compare(p_a: DensityGrid, p_b: DensityGrid,
            mc_paths: Optional[int] = None) -> ComparisonReport:
    """L1 and KS distance; p_a is treated as the MC side for the error band.

    Pass tolerance follows max(0.03, 3 band + leak terms): a comparison is
    never failed for error the mass accounting already explains.
    """
    p_a.check_same_grid(p_b)
    a = np.maximum(p_a.values, 0.0)
    b = np.maximum(p_b.values, 0.0)
    dx = p_a.dx
    l1 = float(np.sum(np.abs(a - b)) * dx)
    ks = float(np.max(np.abs(np.cumsum(a - b) * dx)))
    band = mc_stderr_band(p_a, mc_paths) if mc_paths else 0.0
    mc_flagged = max(p_a.leak, 0.0)
    fpe_leak = max(p_b.leak, 0.0)
    tol = max(L1_TOL_FLOOR, 3.0 * band + fpe_leak + mc_flagged)
    return ComparisonReport(l1, ks, band, mc_flagged, fpe_leak, tol,
                            verdict=bool(l1 <= tol))


def _stable_density(xs: np.ndarray, alpha: float, c: float, t: float,
                    x0: float) -> np.ndarray:
    """Density of x0 + L(t), char. function exp(-c t |k|^alpha), by inversion."""
    scale = (c * t) ** (1.0 / alpha)
    u = (xs - x0) / scale
    # p(x) = (1/pi) int_0^inf exp(-k^alpha) cos(k u) dk, rescaled
    kmax = 45.0 ** (1.0 / alpha)
    nk = 20000
    k = np.linspace(0.0, kmax, nk + 1)
    amp = np.exp(-k ** alpha)
    integ = amp[None, :] * np.cos(k[None, :] * u[:, None])
    vals = np.trapezoid(integ, k, axis=1) / math.pi
    return np.maximum(vals, 0.0) / scale


def analytic_reference(name: str, params: dict, spec: GridSpec) -> DensityGrid:
    """Reference density on the grid, normalized to unit grid mass."""
    edges = spec.edges()
    if name == "gaussian":
        cdf = norm.cdf(edges, loc=params["mean"], scale=params["sd"])
        vals = np.diff(cdf) / spec.dx
    elif name == "lognormal":
        mu, s = params.get("mu", 0.0), params["s"]
        pos = edges > 0.0
        cdf = np.zeros_like(edges)
        cdf[pos] = norm.cdf((np.log(edges[pos]) - mu) / s)
        vals = np.diff(cdf) / spec.dx
    elif name == "alpha_stable_additive":
        vals = _stable_density(spec.centers(), params["alpha"], params["c"],
                               params["t"], params.get("x0", 0.0))
    elif name == "transport":
        mean = params["mean"] + params["velocity"] * params["t"]
        cdf = norm.cdf(edges, loc=mean, scale=params["sd"])
        vals = np.diff(cdf) / spec.dx
    else:
        raise UnsupportedReference(f"no analytic reference named {name!r}")
    g = DensityGrid(spec, vals)
    return g.normalized()


def generator_apply(op: FpeOperatorData, model: SdeModel,
                    phi: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    """Generator-side jump operator on a test function.

    For each quadrature column y: phi(htilde(x, y)) - phi(x)
    - dphi(x) sigma(x) y 1_{|y|<1}, with dphi the same centered difference
    the density-side compensator term uses, so the pairing
    <phi, J p> = <J* phi, p> is exercised column by column.
    """
    x = op.x
    px = np.asarray(phi(x), dtype=float)
    dpx = _ddx_centered(px, op.spec.dx)
    out = np.zeros_like(x)
    for k in range(len(op.ys)):
        y, w = float(op.ys[k]), float(op.ws[k])
        if model.jump_vec is not None:
            z = model.jump_vec(x, np.full_like(x, y))
        else:
            z = np.array([model.atlas.h_tilde(float(xi), y) for xi in x])
        term = np.asarray(phi(z), dtype=float) - px
        if op.ind[k]:
            term = term - dpx * op.sig * y
        out += w * term
    return out


def adjoint_mismatch(op: FpeOperatorData, model: SdeModel,
                     phi: Callable[[np.ndarray], np.ndarray],
                     p_vals: np.ndarray) -> float:
    """Relative gap between <phi, J p> and <J* phi, p> on the grid."""
    dx = op.spec.dx
    jp = apply_nonlocal(op, p_vals, interp="spline")
    lhs = float(np.sum(np.asarray(phi(op.x), dtype=float) * jp) * dx)
    rhs = float(np.sum(generator_apply(op, model, phi) * p_vals) * dx)
    denom = max(abs(lhs), abs(rhs), 1e-300)
    return abs(lhs - rhs) / denom
