"""Jump-adapted Monte Carlo for the Marcus SDE.

The continuous part advances by Euler-Maruyama with the Marcus drift
corrections (b sigma, (A/2) sigma sigma', and the truncated small-jump
compensation); jumps are applied exactly through the transform atlas,
x -> h_tilde(x, r).

Two engines are provided.  The "adapted" one inserts each sampled jump
time into the Euler mesh and loops paths, which is the reference
semantics.  The "composed" one vectorizes over paths and merges all
jumps inside one Euler step into a single application with the summed
size; the flow group property h_tilde(h_tilde(x, r1), r2) =
h_tilde(x, r1 + r2) makes the merge exact up to the O(dt) drift
interleaving already inherent in Euler.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import levy
from .density import DensityGrid, GridSpec
from .errors import EmptyEnsemble
from .levy import Density1D, LevyTriplet, RngState
from .transform import SigmaFunction, TransformAtlas

BLOWUP_GUARD = 1e12

_BIN_MAGIC = b"MFPE"
_BIN_VERSION = 1


@dataclass(frozen=True)
class SdeModel:
    """dX = f(X) dt + sigma(X) diamond dL, with L given by the triplet."""

    f: Callable[[np.ndarray], np.ndarray]
    sigma: SigmaFunction
    triplet: LevyTriplet
    atlas: TransformAtlas
    # optional vectorized jump map x -> h_tilde(x, y); when absent the
    # simulator falls back to the atlas point by point
    jump_vec: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        if self.atlas.sigma is not self.sigma:
            raise ValueError("atlas was built for a different sigma")

    def drift_total(self, x: np.ndarray, epsilon: float) -> np.ndarray:
        """f + b sigma + (A/2) sigma sigma' - compensation(eps) sigma."""
        x = np.asarray(x, dtype=float)
        sig = np.asarray(self.sigma.func(x), dtype=float)
        out = np.asarray(self.f(x), dtype=float) + self.triplet.b * sig
        if self.triplet.A != 0.0:
            out = out + 0.5 * self.triplet.A * sig * np.asarray(
                self.sigma.deriv(x), dtype=float)
        comp = levy.small_jump_compensation(self.triplet.nu, epsilon)
        if comp != 0.0:
            out = out - comp * sig
        return out


@dataclass(frozen=True)
class SimulationPlan:
    x0: float | Density1D
    horizon: float
    dt: float
    epsilon: float
    n_paths: int
    save_times: tuple[float, ...]
    seed: int

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.dt <= 0.0:
            raise ValueError("dt must be positive")
        if self.epsilon <= 0.0:
            raise ValueError("epsilon must be positive")
        if self.n_paths <= 0:
            raise ValueError("n_paths must be positive")
        st = tuple(sorted(set(float(t) for t in self.save_times)))
        if st and (st[0] < 0.0 or st[-1] > self.horizon):
            raise ValueError("save times must lie in [0, horizon]")
        object.__setattr__(self, "save_times", st)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """Uniform-within-segment mesh hitting every save time exactly.

        Returns (times, save_index) where save_index[k] locates
        save_times[k] in times.
        """
        anchors = sorted(set((0.0,) + self.save_times + (self.horizon,)))
        times = [0.0]
        for a, b in zip(anchors[:-1], anchors[1:]):
            m = max(1, int(math.ceil((b - a) / self.dt - 1e-12)))
            seg = a + (b - a) * np.arange(1, m + 1) / m
            seg[-1] = b  # anchors (save times) must appear exactly
            times.extend(seg.tolist())
        times = np.array(times)
        save_index = np.searchsorted(times, np.array(self.save_times))
        return times, save_index


@dataclass
class PathEnsemble:
    times: np.ndarray
    states: np.ndarray  # n_paths x n_times
    seed: int
    epsilon: float
    flagged: np.ndarray  # boolean, paths that hit the blowup guard

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_flagged(self) -> int:
        return int(self.flagged.sum())

    def good_states(self, time_index: int) -> np.ndarray:
        return self.states[~self.flagged, time_index]

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("pathId,time,state\n")
            for i in range(self.states.shape[0]):
                for j, t in enumerate(self.times):
                    fh.write(f"{i},{t:.17g},{self.states[i, j]:.17g}\n")

    def to_binary(self, path) -> None:
        """magic 'MFPE', version u32, then dims and a little-endian f64 block."""
        with open(path, "wb") as fh:
            fh.write(_BIN_MAGIC)
            fh.write(struct.pack("<III", _BIN_VERSION, self.states.shape[0],
                                 self.states.shape[1]))
            fh.write(np.ascontiguousarray(self.times, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.states, dtype="<f8").tobytes())
            fh.write(np.packbits(self.flagged).tobytes())


def read_binary_ensemble(path) -> PathEnsemble:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != _BIN_MAGIC:
            raise ValueError("not an ensemble file (bad magic)")
        version, n_paths, n_times = struct.unpack("<III", fh.read(12))
        if version != _BIN_VERSION:
            raise ValueError(f"unsupported ensemble file version {version}")
        times = np.frombuffer(fh.read(8 * n_times), dtype="<f8").copy()
        states = np.frombuffer(fh.read(8 * n_paths * n_times),
                               dtype="<f8").reshape(n_paths, n_times).copy()
        packed = np.frombuffer(fh.read(), dtype=np.uint8)
        flagged = np.unpackbits(packed)[:n_paths].astype(bool)
    return PathEnsemble(times, states, seed=0, epsilon=0.0, flagged=flagged)


def _initial_states(plan: SimulationPlan, rng: RngState) -> np.ndarray:
    if isinstance(plan.x0, Density1D):
        return np.asarray(plan.x0.sampler(rng, plan.n_paths), dtype=float)
    return np.full(plan.n_paths, float(plan.x0))


def _flag_bad(x: np.ndarray, flagged: np.ndarray) -> None:
    bad = ~np.isfinite(x) | (np.abs(x) > BLOWUP_GUARD)
    if np.any(bad):
        flagged |= bad
        np.copyto(x, 0.0, where=bad)  # frozen; excluded from all statistics


def marcus_jump_apply(model: SdeModel, x_left: float, jump: float) -> float:
    """Exact jump endpoint h_tilde(x_left, jump); sigma zeros stay fixed."""
    if jump == 0.0:
        return x_left
    return model.atlas.h_tilde(x_left, jump)


def _jump_vec(model: SdeModel, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    if model.jump_vec is not None:
        with np.errstate(over="ignore", invalid="ignore"):
            return model.jump_vec(x, y)
    out = np.empty_like(x)
    for i in range(x.size):
        out[i] = model.atlas.h_tilde(float(x[i]), float(y[i])) \
            if y[i] != 0.0 else x[i]
    return out


def simulate(model: SdeModel, plan: SimulationPlan,
             mode: str = "composed") -> PathEnsemble:
    """Generate an ensemble of paths recorded at the plan's save times."""
    if mode == "composed":
        return _simulate_composed(model, plan)
    if mode == "adapted":
        return _simulate_adapted(model, plan)
    raise ValueError(f"unknown simulation mode {mode!r}")


def _simulate_composed(model: SdeModel, plan: SimulationPlan) -> PathEnsemble:
    rng = np.random.default_rng(np.random.SeedSequence(plan.seed))
    x = _initial_states(plan, rng)
    flagged = np.zeros(plan.n_paths, dtype=bool)
    times, save_index = plan.mesh()
    saved = np.empty((plan.n_paths, len(plan.save_times)))
    save_at = {int(j): k for k, j in enumerate(save_index)}
    if 0 in save_at:
        saved[:, save_at[0]] = x
    A = model.triplet.A
    nu = model.triplet.nu
    sqrtA = math.sqrt(A) if A > 0.0 else 0.0
    for j in range(1, len(times)):
        dt = times[j] - times[j - 1]
        dx = model.drift_total(x, plan.epsilon) * dt
        if sqrtA > 0.0:
            dB = rng.normal(0.0, sqrtA * math.sqrt(dt), plan.n_paths)
            dx += np.asarray(model.sigma.func(x), dtype=float) * dB
        x = x + dx
        s = nu.increment_sums(rng, plan.n_paths, dt, plan.epsilon)
        if np.any(s):
            x = np.where(s != 0.0, _jump_vec(model, x, s), x)
        _flag_bad(x, flagged)
        if j in save_at:
            saved[:, save_at[j]] = x
    return PathEnsemble(np.array(plan.save_times), saved, plan.seed,
                        plan.epsilon, flagged)


def _simulate_adapted(model: SdeModel, plan: SimulationPlan) -> PathEnsemble:
    """Reference engine: per-path mesh with exact jump-time insertion."""
    streams = np.random.SeedSequence(plan.seed).spawn(plan.n_paths + 1)
    init_rng = np.random.default_rng(streams[-1])
    x0s = _initial_states(plan, init_rng)
    times, save_index = plan.mesh()
    save_set = {float(times[j]): k for k, j in enumerate(save_index)}
    saved = np.empty((plan.n_paths, len(plan.save_times)))
    flagged = np.zeros(plan.n_paths, dtype=bool)
    A = model.triplet.A
    for i in range(plan.n_paths):
        rng = np.random.default_rng(streams[i])
        events = levy.sample_jumps(model.triplet.nu, plan.horizon,
                                   plan.epsilon, rng)
        mesh = np.unique(np.concatenate((times, [e.time for e in events])))
        by_time: dict[float, float] = {}
        for e in events:
            by_time[e.time] = by_time.get(e.time, 0.0) + e.size
        x = float(x0s[i])
        if 0.0 in save_set:
            saved[i, save_set[0.0]] = x
        for a, b in zip(mesh[:-1], mesh[1:]):
            dt = b - a
            x += float(model.drift_total(np.array([x]), plan.epsilon)[0]) * dt
            if A > 0.0:
                x += float(model.sigma.func(np.array([x]))[0]) * \
                    levy.sample_brownian_increment(A, dt, rng)
            r = by_time.get(float(b))
            if r is not None:
                x = marcus_jump_apply(model, x, r)
            if not math.isfinite(x) or abs(x) > BLOWUP_GUARD:
                flagged[i] = True
                x = 0.0
            if float(b) in save_set:
                saved[i, save_set[float(b)]] = x
    return PathEnsemble(np.array(plan.save_times), saved, plan.seed,
                        plan.epsilon, flagged)


def empirical_density(ensemble: PathEnsemble, time_index: int,
                      spec: GridSpec, smooth: bool = False) -> DensityGrid:
    """Histogram density at one save time; flagged paths count as lost mass.

    With smooth=True a Gaussian kernel with Silverman bandwidth is applied
    (discrete convolution on the grid).
    """
    if ensemble.n_paths == 0 or ensemble.n_paths == ensemble.n_flagged:
        raise EmptyEnsemble("no unflagged paths to bin")
    xs = ensemble.good_states(time_index)
    counts, _ = np.histogram(xs, bins=spec.n, range=(spec.xmin, spec.xmax))
    inside = int(counts.sum())
    vals = counts / (ensemble.n_paths * spec.dx)
    leak = 1.0 - inside / ensemble.n_paths  # flagged + out-of-window mass
    if smooth and inside > 1:
        sd = np.std(xs[(xs >= spec.xmin) & (xs <= spec.xmax)])
        bw = 1.06 * sd * inside ** (-0.2)
        if bw > 0.0:
            halfw = int(math.ceil(4.0 * bw / spec.dx))
            t = np.arange(-halfw, halfw + 1) * spec.dx
            ker = np.exp(-0.5 * (t / bw) ** 2)
            ker /= ker.sum()
            vals = np.convolve(vals, ker, mode="same")
    return DensityGrid(spec, vals, time=float(ensemble.times[time_index]),
                       leak=leak)
