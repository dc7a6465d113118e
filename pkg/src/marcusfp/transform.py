"""Coordinate transform machinery for multiplicative noise.

For a coefficient sigma with isolated zeros x_1 < ... < x_n the map

    h(x) = integral from a to x of dt / sigma(t)

is built separately on every interval between consecutive zeros.  Its
glued inverse translation

    h_tilde(x, y) = h_i^{-1}(h_i(x) + y)

propagates a state x by a jump of size y: it is the time-y flow of
dx/ds = sigma(x), keeps every zero fixed, and composes additively in y.
The x-derivative of h_tilde is sigma(h_tilde(x,y))/sigma(x) away from
the zeros and extends analytically across them via a power series whose
coefficients phi_k collapse to sigma'(x_i)^k.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate
from scipy.optimize import brentq
from scipy.integrate import solve_ivp

from .errors import IllConditioned, NonConvergence, SeriesDivergence, ZeroOfSigma

_QUAD_TOL = 1e-12


@dataclass(frozen=True)
class SigmaFunction:
    """Noise coefficient with its derivative and sorted zero locations."""

    func: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]
    zeros: tuple[float, ...] = ()
    name: str = "sigma"

    def __post_init__(self):
        z = tuple(self.zeros)
        if list(z) != sorted(z):
            raise ValueError("zeros must be sorted ascending")
        if len(set(z)) != len(z):
            raise ValueError("zeros must be distinct")
        object.__setattr__(self, "zeros", z)

    def __call__(self, x):
        return self.func(x)

    def interval_index(self, x: float) -> int:
        """Index of the open interval between zeros containing x."""
        if x in self.zeros:
            raise ZeroOfSigma(f"x={x!r} is a zero of {self.name}")
        return int(np.searchsorted(self.zeros, x))

    def interval_bounds(self, i: int) -> tuple[float, float]:
        lo = -math.inf if i == 0 else self.zeros[i - 1]
        hi = math.inf if i == len(self.zeros) else self.zeros[i]
        return lo, hi


@dataclass(frozen=True)
class ClosedFormH:
    """Analytic h / h^{-1} pair on one interval, used when available."""

    forward: Callable[[float], float]
    inverse: Callable[[float], float]


class TransformAtlas:
    """Piecewise transform for one SigmaFunction.

    Carries a numerically integrated h per interval (anchored at a
    reference point inside it) plus optional closed forms that override
    the numeric path.
    """

    def __init__(self, sigma: SigmaFunction,
                 closed_forms: Optional[Sequence[Optional[ClosedFormH]]] = None):
        self.sigma = sigma
        n_int = len(sigma.zeros) + 1
        if closed_forms is not None and len(closed_forms) != n_int:
            raise ValueError("need one closed form slot per interval")
        self.closed_forms = list(closed_forms) if closed_forms else [None] * n_int
        self._anchors = [self._pick_anchor(i) for i in range(n_int)]
        self._h_cache: dict[float, float] = {}

    def _pick_anchor(self, i: int) -> float:
        lo, hi = self.sigma.interval_bounds(i)
        if math.isinf(lo) and math.isinf(hi):
            return 0.0 if 0.0 not in self.sigma.zeros else 1.0
        if math.isinf(lo):
            return hi - 1.0
        if math.isinf(hi):
            return lo + 1.0
        return 0.5 * (lo + hi)

    # ---- h and its inverse -------------------------------------------

    def _quad_h(self, x: float, i: int) -> float:
        """integral of 1/sigma from the interval anchor to x.

        Near a finite zero endpoint 1/sigma blows up like 1/(t - x_i);
        the substitution t = edge +/- e^s turns that into a bounded
        integrand on a log scale, which quad handles to full accuracy.
        """
        a = self._anchors[i]
        if x == a:
            return 0.0
        key = (i, x)
        if key in self._h_cache:
            return self._h_cache[key]
        lo, hi = self.sigma.interval_bounds(i)
        sgn = 1.0 if x > a else -1.0
        p, q = (a, x) if x > a else (x, a)
        val = 0.0
        # split off log-substituted pieces hugging finite singular edges
        if not math.isinf(lo) and (p - lo) < 0.5 * min(q - lo, 1.0):
            cut = lo + 0.5 * min(q - lo, 1.0)
            s0, s1 = math.log(p - lo), math.log(cut - lo)
            part, _ = integrate.quad(
                lambda s: math.exp(s) / float(self.sigma.func(lo + math.exp(s))),
                s0, s1, epsabs=_QUAD_TOL, epsrel=_QUAD_TOL, limit=500)
            val += part
            p = cut
        if not math.isinf(hi) and (hi - q) < 0.5 * min(hi - p, 1.0):
            cut = hi - 0.5 * min(hi - p, 1.0)
            s0, s1 = math.log(hi - q), math.log(hi - cut)
            part, _ = integrate.quad(
                lambda s: math.exp(s) / float(self.sigma.func(hi - math.exp(s))),
                s0, s1, epsabs=_QUAD_TOL, epsrel=_QUAD_TOL, limit=500)
            val += part
            q = cut
        if q > p:
            part, _ = integrate.quad(
                lambda t: 1.0 / float(self.sigma.func(t)),
                p, q, epsabs=_QUAD_TOL, epsrel=_QUAD_TOL, limit=500)
            val += part
        out = sgn * val
        self._h_cache[key] = out
        return out

    def h_forward(self, x: float) -> float:
        """h_i(x) on the interval containing x (raises at a zero)."""
        i = self.sigma.interval_index(x)
        cf = self.closed_forms[i]
        if cf is not None:
            return cf.forward(x)
        return self._quad_h(x, i)

    def h_inverse(self, v: float, i: int) -> float:
        """Inverse of h on interval i, by bracketed root finding."""
        cf = self.closed_forms[i]
        if cf is not None:
            return cf.inverse(v)
        lo, hi = self.sigma.interval_bounds(i)
        a = self._anchors[i]
        sgn = 1.0 if float(self.sigma.func(a)) > 0.0 else -1.0
        # h is monotone with slope sign(sigma); walk a geometric bracket
        step = 1.0
        x0 = x1 = a
        f0 = -v
        for _ in range(400):
            cand = a + (step if sgn * v > 0 else -step)
            if cand >= hi:
                cand = hi - (hi - x0) * 0.5 if not math.isinf(hi) else cand
            if cand <= lo:
                cand = lo + (x0 - lo) * 0.5 if not math.isinf(lo) else cand
            fc = self._quad_h(cand, i) - v
            if f0 * fc <= 0.0:
                x1, f1 = cand, fc
                break
            x0, f0 = cand, fc
            step *= 2.0
        else:
            raise NonConvergence("could not bracket the transform inverse")
        if x0 == x1:
            return x0
        p, q = (x0, x1) if x0 < x1 else (x1, x0)
        return float(brentq(lambda t: self._quad_h(t, i) - v, p, q,
                            xtol=1e-14, rtol=8.9e-16, maxiter=200))

    # ---- the glued jump map ------------------------------------------

    def h_tilde(self, x: float, y: float) -> float:
        """Time-y flow of dx/ds = sigma(x); zeros are fixed points."""
        if x in self.sigma.zeros:
            return x
        i = self.sigma.interval_index(x)
        return self.h_inverse(self.h_forward(x) + y, i)

    def h_tilde_vec(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = np.broadcast_to(np.asarray(y, dtype=float), x.shape)
        out = np.empty_like(x)
        for j in range(x.size):
            out.flat[j] = self.h_tilde(float(x.flat[j]), float(y.flat[j]))
        return out

    def h_tilde_dx(self, x: float, y: float) -> float:
        """d/dx h_tilde(x, y)."""
        if x in self.sigma.zeros:
            dz = float(self.sigma.deriv(np.asarray(x)))
            return math.exp(dz * y)
        sx = float(self.sigma.func(np.asarray(x)))
        sz = float(self.sigma.func(np.asarray(self.h_tilde(x, y))))
        return sz / sx

    def phi_coefficients(self, zero_index: int, k_max: int) -> np.ndarray:
        """Series coefficients of d/dx h_tilde at a zero: phi_k = sigma'(x_i)^k.

        The nested derivative recursion g_k = (sigma * g_{k-1})' collapses
        at a zero of sigma to multiplication by sigma'(x_i), so the series
        sums to exp(sigma'(x_i) y).
        """
        if not 0 <= zero_index < len(self.sigma.zeros):
            raise IndexError("zero index out of range")
        if k_max < 0:
            raise ValueError("k_max must be nonnegative")
        dz = float(self.sigma.deriv(np.asarray(self.sigma.zeros[zero_index])))
        return dz ** np.arange(k_max + 1, dtype=float)

    def phi_coefficients_fd(self, zero_index: int, k_max: int,
                            window: float = 0.25,
                            rel_tol: float = 1e-6) -> np.ndarray:
        """Series coefficients by numerical nested differentiation.

        Independent of the closed collapse formula: fits sigma by a
        Chebyshev polynomial on a small window around the zero, runs the
        recursion g_k = (sigma g_{k-1})' on the fitted coefficients, and
        evaluates at the zero.  Two window sizes must agree to rel_tol,
        otherwise the differentiation is declared ill conditioned.
        """
        if not 0 <= zero_index < len(self.sigma.zeros):
            raise IndexError("zero index out of range")
        x0 = self.sigma.zeros[zero_index]

        def run(h):
            deg = k_max + 8
            t = np.cos(np.pi * (np.arange(deg + 1) + 0.5) / (deg + 1))
            xs = x0 + h * t
            sig_ch = np.polynomial.chebyshev.chebfit(
                t, np.asarray(self.sigma.func(xs), dtype=float), deg)
            out = np.empty(k_max + 1)
            g = np.array([1.0])
            out[0] = 1.0
            for k in range(1, k_max + 1):
                # derivative in x picks up 1/h from the t = (x-x0)/h scaling
                g = np.polynomial.chebyshev.chebder(
                    np.polynomial.chebyshev.chebmul(sig_ch, g)) / h
                out[k] = np.polynomial.chebyshev.chebval(0.0, g)
            return out

        a, b = run(window), run(0.5 * window)
        scale = np.maximum(np.abs(a), np.abs(b))
        err = np.abs(a - b) / np.maximum(scale, 1.0)
        if np.any(err > rel_tol):
            raise IllConditioned(
                f"nested differentiation disagrees by {err.max():.3e} "
                f"between window sizes at the zero x={x0!r}")
        return b

    def series_dx_at_zero(self, zero_index: int, y: float, k_max: int = 20,
                          tail_tol: float = 1e-10) -> float:
        """Evaluate the phi series at a zero, guarding the truncation tail."""
        phi = self.phi_coefficients(zero_index, k_max)
        terms = phi * y ** np.arange(k_max + 1) / [math.factorial(k)
                                                   for k in range(k_max + 1)]
        tail = abs(terms[-1])
        if tail > tail_tol:
            raise SeriesDivergence(
                f"series tail {tail:.3e} above {tail_tol:.1e} at k={k_max}")
        return float(terms.sum())


def marcus_map_ode(sigma: SigmaFunction, x0: float, r: float,
                   rtol: float = 1e-12, atol: float = 1e-12) -> float:
    """Jump endpoint by direct ODE integration: dy/dz = r sigma(y) on [0,1].

    Reference oracle for h_tilde(x0, r).  Raises NonConvergence when the
    flow escapes to infinity in finite time (possible for superlinear
    sigma, e.g. 1 + x^2).
    """
    sol = solve_ivp(lambda z, y: r * np.asarray(sigma.func(y), dtype=float),
                    (0.0, 1.0), [x0], method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise NonConvergence(f"jump flow integration failed: {sol.message}")
    return float(sol.y[0, -1])


def marcus_map_ode_vec(sigma: SigmaFunction, x0: np.ndarray, r: np.ndarray,
                       rtol: float = 1e-12, atol: float = 1e-12) -> np.ndarray:
    """Vectorized oracle: integrates all (x0, r) pairs as one diagonal system."""
    x0 = np.asarray(x0, dtype=float).ravel()
    r = np.asarray(r, dtype=float).ravel()
    if x0.shape != r.shape:
        raise ValueError("x0 and r must have matching shapes")
    sol = solve_ivp(lambda z, y: r * np.asarray(sigma.func(y), dtype=float),
                    (0.0, 1.0), x0, method="DOP853", rtol=rtol, atol=atol)
    if not sol.success:
        raise NonConvergence(f"jump flow integration failed: {sol.message}")
    return sol.y[:, -1]


# ---- built-in coefficients with closed-form transforms ----------------

def linear_sigma(c: float = 1.0) -> tuple[SigmaFunction, TransformAtlas]:
    """sigma(x) = c x; h_tilde(x, y) = x e^{c y}."""
    if c == 0.0:
        raise ValueError("c must be nonzero")
    sig = SigmaFunction(lambda x: c * np.asarray(x, dtype=float),
                        lambda x: np.full_like(np.asarray(x, dtype=float), c),
                        zeros=(0.0,), name=f"{c}*x")
    neg = ClosedFormH(lambda x: math.log(-x) / c, lambda v: -math.exp(c * v))
    pos = ClosedFormH(lambda x: math.log(x) / c, lambda v: math.exp(c * v))
    return sig, TransformAtlas(sig, [neg, pos])


def constant_sigma(c: float = 1.0) -> tuple[SigmaFunction, TransformAtlas]:
    """sigma(x) = c; h_tilde(x, y) = x + c y."""
    if c == 0.0:
        raise ValueError("c must be nonzero")
    sig = SigmaFunction(lambda x: np.full_like(np.asarray(x, dtype=float), c),
                        lambda x: np.zeros_like(np.asarray(x, dtype=float)),
                        zeros=(), name=f"{c}")
    cf = ClosedFormH(lambda x: x / c, lambda v: c * v)
    return sig, TransformAtlas(sig, [cf])


def sine_sigma(n_periods: int = 1) -> tuple[SigmaFunction, TransformAtlas]:
    """sigma(x) = sin(x) with zeros at k*pi for |k| <= n_periods.

    Only the compact window [-n pi, n pi] is described; the two unbounded
    outer intervals fall back to numeric quadrature of 1/sin.  On interval
    (k pi, (k+1) pi) the transform is s * log|tan(x/2)| with s = (-1)^k.
    """
    ks = range(-n_periods, n_periods + 1)
    zeros = tuple(float(k) * math.pi for k in ks)
    sig = SigmaFunction(np.sin, np.cos, zeros=zeros, name="sin(x)")
    forms: list[Optional[ClosedFormH]] = [None] * (len(zeros) + 1)
    for i in range(1, len(zeros)):
        k = -n_periods + (i - 1)  # interval (k pi, (k+1) pi)
        s = 1.0 if k % 2 == 0 else -1.0
        base = k * math.pi

        def fwd(x, s=s, base=base):
            return s * math.log(abs(math.tan(0.5 * (x - base))))

        def inv(v, s=s, base=base):
            return base + 2.0 * math.atan(math.exp(s * v))

        forms[i] = ClosedFormH(fwd, inv)
    return sig, TransformAtlas(sig, forms)


def one_plus_x2_sigma() -> tuple[SigmaFunction, TransformAtlas]:
    """sigma(x) = 1 + x^2; h = atan(x), finite escape when |h(x)+y| >= pi/2."""
    sig = SigmaFunction(lambda x: 1.0 + np.asarray(x, dtype=float) ** 2,
                        lambda x: 2.0 * np.asarray(x, dtype=float),
                        zeros=(), name="1+x^2")

    def inv(v):
        if abs(v) >= 0.5 * math.pi:
            raise NonConvergence("flow of 1+x^2 escapes to infinity")
        return math.tan(v)

    return sig, TransformAtlas(sig, [ClosedFormH(math.atan, inv)])
