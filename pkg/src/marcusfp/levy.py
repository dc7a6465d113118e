"""Levy jump measures: sampling, compensation integrals, and quadrature.

A measure is described by its kind (symmetric power-law tails, compound
Poisson with a given jump density, a finite sum of such, or the null
measure).  Every kind exposes the handful of integrals the simulator and
the density solver need: tail mass above a cutoff, the signed
compensation integral over moderate jumps, the half second moment below
a cutoff, and a quadrature rule for the truncated jump integral.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy import integrate

RngState = np.random.Generator

# Gauss-Legendre points per quadrature panel.
_GL_POINTS = 4
_GL_X, _GL_W = leggauss(_GL_POINTS)

# Cap on the number of magnitudes materialized at once by the bulk
# jump-sum path (keeps peak memory of huge ensembles bounded).
_SUM_CHUNK_DRAWS = 1 << 25


def rng_from_seed(seed: int) -> RngState:
    return np.random.default_rng(seed)


class JumpEvent(NamedTuple):
    time: float
    size: float


@dataclass(frozen=True)
class Density1D:
    """Probability density with a sampler and a (finite) support interval."""

    pdf: Callable[[np.ndarray], np.ndarray]
    sampler: Callable[[RngState, int], np.ndarray]
    support: tuple[float, float]
    symmetric: bool = False

    def evaluate(self, y):
        y = np.asarray(y, dtype=float)
        lo, hi = self.support
        inside = (y >= lo) & (y <= hi)
        out = np.zeros_like(y)
        if np.any(inside):
            out[inside] = self.pdf(y[inside])
        return out

    def mass(self) -> float:
        lo, hi = self.support
        val, _ = integrate.quad(self.pdf, lo, hi, limit=200)
        return val


def uniform_density(a: float, b: float) -> Density1D:
    if not b > a:
        raise ValueError("uniform density needs a < b")
    h = 1.0 / (b - a)
    return Density1D(
        pdf=lambda y: np.full_like(np.asarray(y, dtype=float), h),
        sampler=lambda rng, n: rng.uniform(a, b, n),
        support=(a, b),
        symmetric=(abs(a + b) < 1e-15),
    )


def normal_density(mean: float, sd: float) -> Density1D:
    if sd <= 0:
        raise ValueError("normal density needs sd > 0")
    c = 1.0 / (sd * math.sqrt(2.0 * math.pi))
    return Density1D(
        pdf=lambda y: c * np.exp(-0.5 * ((np.asarray(y, float) - mean) / sd) ** 2),
        sampler=lambda rng, n: rng.normal(mean, sd, n),
        support=(mean - 12.0 * sd, mean + 12.0 * sd),
        symmetric=(mean == 0.0),
    )


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes/weights approximating integrals against the jump measure."""

    nodes: np.ndarray
    weights: np.ndarray
    delta: float
    ymax: float

    def apply(self, g) -> float:
        return float(np.sum(self.weights * g(self.nodes)))


def _panel_rule(edges: np.ndarray, density, sign: float):
    """GL rule on |y| panels, nodes carried with the requested sign."""
    nodes, weights = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        y = sign * (mid + half * _GL_X)
        nodes.append(y)
        weights.append(_GL_W * half * density(y))
    if not nodes:
        return np.empty(0), np.empty(0)
    return np.concatenate(nodes), np.concatenate(weights)


class LevyMeasure:
    """Base interface; concrete kinds override everything they support."""

    is_symmetric = False

    def density(self, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def tail_mass(self, eps: float) -> float:
        """Total measure of {|y| > eps}."""
        raise NotImplementedError

    def compensation(self, eps: float) -> float:
        """Signed integral of y over {eps < |y| < 1}."""
        raise NotImplementedError

    def half_second_moment_below(self, delta: float) -> float:
        """Integral of y^2/2 over {|y| < delta}."""
        raise NotImplementedError

    def sample_sizes(self, rng: RngState, n: int, eps: float) -> np.ndarray:
        """n i.i.d. sizes from the measure restricted to |y| > eps."""
        raise NotImplementedError

    def quadrature(self, delta: float, ymax: float, n: int) -> QuadratureRule:
        raise NotImplementedError

    def auto_ymax(self, delta: float, tail_fraction: float = 1e-6) -> float:
        """Cutoff so the discarded tail is a tiny fraction of the rate."""
        target = tail_fraction * self.tail_mass(delta)
        lo, hi = delta, delta
        while self.tail_mass(hi) > target and hi < 1e12:
            lo, hi = hi, hi * 2.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self.tail_mass(mid) > target:
                lo = mid
            else:
                hi = mid
        return hi

    def jump_sums(self, rng: RngState, counts: np.ndarray, eps: float) -> np.ndarray:
        """Per-group sums of `counts[i]` i.i.d. sizes (generic path)."""
        total = int(counts.sum())
        if total == 0:
            return np.zeros(len(counts))
        sizes = self.sample_sizes(rng, total, eps)
        csum = np.concatenate(([0.0], np.cumsum(sizes)))
        ends = np.cumsum(counts)
        return csum[ends] - csum[ends - counts]

    def increment_sums(self, rng: RngState, n: int, dt: float, eps: float) -> np.ndarray:
        """Summed jump sizes over a window of length dt, for n paths."""
        lam = self.tail_mass(eps) * dt
        if lam == 0.0:
            return np.zeros(n)
        counts = rng.poisson(lam, n)
        return self.jump_sums(rng, counts, eps)


@dataclass(frozen=True)
class AlphaStable(LevyMeasure):
    """Symmetric measure with density scale/|y|^(1+alpha)."""

    alpha: float
    scale: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 2.0:
            raise ValueError("alpha must lie in (0, 2)")
        if self.scale <= 0.0:
            raise ValueError("scale must be positive")

    is_symmetric = True

    def density(self, y):
        y = np.asarray(y, dtype=float)
        return self.scale * np.abs(y) ** (-1.0 - self.alpha)

    def tail_mass(self, eps):
        return 2.0 * self.scale * eps ** (-self.alpha) / self.alpha

    def compensation(self, eps):
        return 0.0

    def half_second_moment_below(self, delta):
        return self.scale * delta ** (2.0 - self.alpha) / (2.0 - self.alpha)

    def sample_sizes(self, rng, n, eps):
        # Inverse CDF of the truncated power-law tail: P(|Y|>t) = (eps/t)^alpha.
        v = 2.0 * rng.random(n) - 1.0
        mag = np.abs(v)
        np.maximum(mag, 2.0 ** -53, out=mag)
        return np.copysign(eps * mag ** (-1.0 / self.alpha), v)

    def jump_sums(self, rng, counts, eps):
        # Bulk path for huge ensembles: single-precision magnitudes (MC
        # noise dominates the 1e-7 relative rounding), signs folded into a
        # binomial split so each group needs one reduction pass.
        n = len(counts)
        out = np.zeros(n)
        ends = np.cumsum(counts)
        starts = ends - counts
        chunks = np.searchsorted(ends, np.arange(0, ends[-1] + _SUM_CHUNK_DRAWS,
                                                 _SUM_CHUNK_DRAWS))
        chunks = np.unique(np.concatenate((chunks, [n])))
        expo = np.float32(-1.0 / self.alpha)
        lo = 0
        for hi in chunks:
            if hi <= lo:
                continue
            k = counts[lo:hi]
            total = int(k.sum())
            if total:
                kp = rng.binomial(k, 0.5)
                u = rng.random(total, dtype=np.float32)
                np.maximum(u, np.float32(2.0 ** -26), out=u)
                u **= expo
                mags = np.append(u.astype(np.float64), 0.0)
                s = np.cumsum(k[:-1]) if hi - lo > 1 else np.empty(0, dtype=np.int64)
                gstart = np.concatenate(([0], s)).astype(np.int64)
                idx = np.empty(2 * (hi - lo), dtype=np.int64)
                idx[0::2] = gstart
                idx[1::2] = gstart + kp
                red = np.add.reduceat(mags, idx)
                pos, neg = red[0::2], red[1::2]
                pos = np.where(kp > 0, pos, 0.0)
                neg = np.where(k - kp > 0, neg, 0.0)
                out[lo:hi] = eps * (pos - neg)
            lo = hi
        return out

    def quadrature(self, delta, ymax, n):
        # Geometric grading resolves the |y|^(-1-alpha) blow-up at the cutoff.
        edges = np.geomspace(delta, ymax, n + 1)
        ypos, wpos = _panel_rule(edges, self.density, +1.0)
        return QuadratureRule(np.concatenate((ypos, -ypos)),
                              np.concatenate((wpos, wpos)), delta, ymax)


@dataclass(frozen=True)
class CompoundPoisson(LevyMeasure):
    """Finite-activity measure rate * jump_density(y) dy."""

    rate: float
    jump_density: Density1D

    def __post_init__(self):
        if self.rate <= 0.0:
            raise ValueError("rate must be positive")
        mass = self.jump_density.mass()
        if abs(mass - 1.0) > 1e-8:
            raise ValueError(f"jump density integrates to {mass!r}, not 1")

    @property
    def is_symmetric(self):
        return self.jump_density.symmetric

    def density(self, y):
        return self.rate * self.jump_density.evaluate(y)

    def _interval_integral(self, f, lo, hi):
        slo, shi = self.jump_density.support
        lo, hi = max(lo, slo), min(hi, shi)
        if hi <= lo:
            return 0.0
        val, _ = integrate.quad(lambda y: f(y) * float(self.jump_density.pdf(np.array([y]))[0]),
                                lo, hi, limit=200)
        return val

    def tail_mass(self, eps):
        inner = self._interval_integral(lambda y: 1.0, -eps, eps)
        return self.rate * max(0.0, 1.0 - inner)

    def compensation(self, eps):
        val = self._interval_integral(lambda y: y, eps, 1.0)
        val += self._interval_integral(lambda y: y, -1.0, -eps)
        return self.rate * val

    def half_second_moment_below(self, delta):
        return self.rate * self._interval_integral(lambda y: 0.5 * y * y, -delta, delta)

    def sample_sizes(self, rng, n, eps):
        slo, shi = self.jump_density.support
        if max(abs(slo), abs(shi)) <= eps:
            raise ValueError("jump density has no mass above the truncation level")
        out = self.jump_density.sampler(rng, n)
        for _ in range(200):
            bad = np.abs(out) <= eps
            nbad = int(bad.sum())
            if nbad == 0:
                return out
            out[bad] = self.jump_density.sampler(rng, nbad)
        raise RuntimeError("rejection sampling above the truncation level stalled")

    def quadrature(self, delta, ymax, n):
        slo, shi = self.jump_density.support
        nodes, weights = [], []
        # positive side: |y| in [delta, ymax] clipped to the support
        plo, phi = max(delta, slo), min(ymax, shi)
        if phi > plo:
            yp, wp = _panel_rule(np.linspace(plo, phi, n + 1), self.density, +1.0)
            nodes.append(yp)
            weights.append(wp)
        # negative side, parametrized by |y| so symmetric supports mirror exactly
        mlo, mhi = max(delta, -shi), min(ymax, -slo)
        if mhi > mlo:
            ym, wm = _panel_rule(np.linspace(mlo, mhi, n + 1), self.density, -1.0)
            nodes.append(ym)
            weights.append(wm)
        if not nodes:
            return QuadratureRule(np.empty(0), np.empty(0), delta, ymax)
        return QuadratureRule(np.concatenate(nodes), np.concatenate(weights),
                              delta, ymax)


@dataclass(frozen=True)
class SumMeasure(LevyMeasure):
    terms: tuple[LevyMeasure, ...]

    def __post_init__(self):
        if not self.terms:
            raise ValueError("sum measure needs at least one term")

    @property
    def is_symmetric(self):
        return all(t.is_symmetric for t in self.terms)

    def density(self, y):
        return sum(t.density(y) for t in self.terms)

    def tail_mass(self, eps):
        return sum(t.tail_mass(eps) for t in self.terms)

    def compensation(self, eps):
        return sum(t.compensation(eps) for t in self.terms)

    def half_second_moment_below(self, delta):
        return sum(t.half_second_moment_below(delta) for t in self.terms)

    def sample_sizes(self, rng, n, eps):
        rates = np.array([t.tail_mass(eps) for t in self.terms])
        counts = rng.multinomial(n, rates / rates.sum())
        parts = [t.sample_sizes(rng, int(c), eps)
                 for t, c in zip(self.terms, counts) if c > 0]
        out = np.concatenate(parts)
        return out[rng.permutation(n)]

    def increment_sums(self, rng, n, dt, eps):
        out = np.zeros(n)
        for t in self.terms:
            out += t.increment_sums(rng, n, dt, eps)
        return out

    def quadrature(self, delta, ymax, n):
        rules = [t.quadrature(delta, ymax, n) for t in self.terms]
        return QuadratureRule(np.concatenate([r.nodes for r in rules]),
                              np.concatenate([r.weights for r in rules]),
                              delta, ymax)


@dataclass(frozen=True)
class NullMeasure(LevyMeasure):
    is_symmetric = True

    def density(self, y):
        return np.zeros_like(np.asarray(y, dtype=float))

    def tail_mass(self, eps):
        return 0.0

    def compensation(self, eps):
        return 0.0

    def half_second_moment_below(self, delta):
        return 0.0

    def sample_sizes(self, rng, n, eps):
        if n:
            raise ValueError("null measure has no jumps to sample")
        return np.empty(0)

    def increment_sums(self, rng, n, dt, eps):
        return np.zeros(n)

    def quadrature(self, delta, ymax, n):
        return QuadratureRule(np.empty(0), np.empty(0), delta, ymax)


@dataclass(frozen=True)
class LevyTriplet:
    """Generating triplet: drift b, Brownian variance A, jump measure nu."""

    b: float
    A: float
    nu: LevyMeasure

    def __post_init__(self):
        if self.A < 0.0:
            raise ValueError("Brownian variance A must be nonnegative")


def sample_brownian_increment(A: float, dt: float, rng: RngState) -> float:
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    if A < 0.0:
        raise ValueError("A must be nonnegative")
    if A == 0.0:
        return 0.0
    return float(rng.normal(0.0, math.sqrt(A * dt)))


def sample_jumps(nu: LevyMeasure, horizon: float, epsilon: float,
                 rng: RngState) -> list[JumpEvent]:
    """All jumps with |size| > epsilon on [0, horizon], time-ordered."""
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    if horizon <= 0.0:
        raise ValueError("horizon must be positive")
    if isinstance(nu, NullMeasure):
        return []
    if isinstance(nu, SumMeasure):
        events: list[JumpEvent] = []
        for t in nu.terms:
            events.extend(sample_jumps(t, horizon, epsilon, rng))
        events.sort(key=lambda e: e.time)
        return events
    lam = nu.tail_mass(epsilon) * horizon
    count = int(rng.poisson(lam))
    if count == 0:
        return []
    times = np.sort(rng.random(count)) * horizon
    sizes = nu.sample_sizes(rng, count, epsilon)
    return [JumpEvent(float(t), float(s)) for t, s in zip(times, sizes)]


def small_jump_compensation(nu: LevyMeasure, epsilon: float) -> float:
    """Signed drift owed for jumps truncated below epsilon (per unit time)."""
    if not 0.0 < epsilon < 1.0:
        raise ValueError("epsilon must lie in (0, 1)")
    if nu.is_symmetric:
        return 0.0
    return nu.compensation(epsilon)


def measure_quadrature(nu: LevyMeasure, delta: float, ymax: float,
                       n: int) -> QuadratureRule:
    """Quadrature for integrals over {delta <= |y| <= ymax} against nu."""
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    if delta >= ymax:
        raise ValueError("delta must be smaller than ymax")
    if n <= 0:
        raise ValueError("n must be positive")
    return nu.quadrature(delta, ymax, n)
