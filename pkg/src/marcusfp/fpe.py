"""Nonlocal Fokker-Planck solver.

The density evolves by

    dp/dt = -d/dx[ drift(x) p ] + d2/dx2[ diff(x) p ]
            + integral over y of
              [ jac(x,-y) p(htilde(x,-y)) - p(x)
                + y 1_{(-1,1)}(y) d/dx(sigma p) ] nu(dy)

with drift = f + b sigma + (A/2) sigma sigma' and diff = (A/2) sigma^2.
The jump integral is discretized by a fixed quadrature in y over
delta <= |y| <= ymax; the |y| < delta remainder, whose integrand is
O(y^2), is represented by two extra columns at y = +-delta/4 carrying
weight m2/(delta/4)^2 with m2 the half second moment of nu below delta
(a central second difference in y of the integrand at y=0, where it
vanishes with vanishing derivative).

Time stepping is IMEX Euler: upwind finite-volume drift and the
explicit nonlocal gather, diffusion by an implicit tridiagonal solve.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse import csr_matrix

from . import levy
from .density import DensityGrid, GridSpec
from .errors import GridTooCoarse, Instability
from .sde import SdeModel

_EDGE_TOL = 1e-12


@dataclass
class FpeOperatorData:
    spec: GridSpec
    x: np.ndarray
    segments: list  # (lo, hi) center-index ranges, one per sigma-interval
    drift: np.ndarray
    diff: np.ndarray
    sig: np.ndarray
    # y-quadrature columns (small-|y| replacement columns included)
    ys: np.ndarray
    ws: np.ndarray
    ind: np.ndarray  # indicator |y| < 1 per column
    delta: float
    ymax: float
    m2: float
    s0: float  # total column weight = explicit removal rate in the continuum
    s0_in: np.ndarray  # per-cell rate whose forward image stays on the grid
    tail_rate: float  # nu mass beyond ymax, charged to the leak budget
    # gather in Hermite form: value part, slope part, and exact removal
    gather_p: csr_matrix
    gather_m: csr_matrix
    removal: np.ndarray
    beta: np.ndarray  # slope-part column masses, rebalanced at apply time
    sy: float  # sum of w*y over indicator columns (drives the d/dx(sigma p) term)
    # raw entries for the spline-interpolation path
    ent_row: np.ndarray
    ent_z: np.ndarray
    ent_wjac: np.ndarray
    ent_seg: np.ndarray


@dataclass
class StepControl:
    delta: float
    ymax: Optional[float] = None
    n_quad: int = 30
    dt: Optional[float] = None
    save_times: Sequence[float] = ()
    safety: float = 0.8
    interp: str = "pchip"


@dataclass
class SolveResult:
    snapshots: list
    leak: float
    max_negativity: float
    dt_used: float

    def __iter__(self):
        return iter(self.snapshots)

    def __getitem__(self, i):
        return self.snapshots[i]


def _segments_for(sigma, spec: GridSpec) -> list:
    """Center-index ranges of the sigma-intervals; zeros must sit on edges."""
    splits = [0]
    for z in sigma.zeros:
        if z <= spec.xmin or z >= spec.xmax:
            continue
        k = (z - spec.xmin) / spec.dx
        kr = round(k)
        if abs(k - kr) * spec.dx > _EDGE_TOL:
            raise ValueError(
                f"sigma zero at {z!r} is not aligned with a cell edge")
        splits.append(int(kr))
    splits.append(spec.n)
    splits = sorted(set(splits))
    return [(a, b) for a, b in zip(splits[:-1], splits[1:]) if b > a]


def _jump_image(model: SdeModel, x: np.ndarray, y: float) -> np.ndarray:
    if model.jump_vec is not None:
        with np.errstate(over="ignore", invalid="ignore"):
            return model.jump_vec(x, np.full_like(x, y))
    out = np.empty_like(x)
    for i in range(x.size):
        out[i] = model.atlas.h_tilde(float(x[i]), y)
    return out


def assemble_operator(model: SdeModel, spec: GridSpec, delta: float,
                      ymax: Optional[float] = None,
                      n_quad: int = 30) -> FpeOperatorData:
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    sigma = model.sigma
    x = spec.centers()
    n, dx = spec.n, spec.dx
    segments = _segments_for(sigma, spec)
    seg_of = np.empty(n, dtype=np.int64)
    for si, (lo, hi) in enumerate(segments):
        seg_of[lo:hi] = si
    zeros = np.array(sigma.zeros)
    iv_x = np.searchsorted(zeros, x) if zeros.size else np.zeros(n, np.int64)

    sig = np.asarray(sigma.func(x), dtype=float)
    dsig = np.asarray(sigma.deriv(x), dtype=float)
    fx = np.asarray(model.f(x), dtype=float)
    A, b = model.triplet.A, model.triplet.b
    drift = fx + b * sig + 0.5 * A * sig * dsig
    diff = 0.5 * A * sig ** 2

    nu = model.triplet.nu
    base_rate = nu.tail_mass(delta)
    if base_rate > 0.0:
        if ymax is None:
            ymax = nu.auto_ymax(delta)
        quad = levy.measure_quadrature(nu, delta, ymax, n_quad)
        ys, ws = quad.nodes, quad.weights
        tail_rate = nu.tail_mass(ymax)
    else:
        ymax = 2.0 * delta
        ys, ws = np.empty(0), np.empty(0)
        tail_rate = 0.0
    # smallest quadrature |y| before the small-y columns join; the guard
    # below only concerns the singular-quadrature resolution
    min_abs_y = float(np.min(np.abs(ys))) if ys.size else 0.0
    m2 = nu.half_second_moment_below(delta)
    if m2 > 0.0:
        # small-|y| remainder as a second difference in y at step delta/4
        h = 0.25 * delta
        ys = np.concatenate((ys, [h, -h]))
        ws = np.concatenate((ws, [m2 / h ** 2, m2 / h ** 2]))
    ind = np.abs(ys) < 1.0
    s0 = float(ws.sum())
    sy = float((ws * ys * ind).sum())

    rows, cols0, c_p0, c_p1, c_m0, c_m1 = [], [], [], [], [], []
    ent_row, ent_z, ent_wjac, ent_seg = [], [], [], []
    s0_in = np.zeros(n)
    for k in range(len(ys)):
        y, w = float(ys[k]), float(ws[k])
        z = _jump_image(model, x, -y)
        fwd = _jump_image(model, x, +y)
        with np.errstate(invalid="ignore"):
            valid = np.isfinite(z) & (z >= spec.xmin) & (z <= spec.xmax)
            fwd_in = np.isfinite(fwd) & (fwd >= spec.xmin) & (fwd <= spec.xmax)
            if zeros.size:
                zc = np.where(np.isfinite(z), z, spec.xmin)
                fc = np.where(np.isfinite(fwd), fwd, spec.xmin)
                valid &= np.searchsorted(zeros, zc) == iv_x
                fwd_in &= np.searchsorted(zeros, fc) == iv_x
        s0_in += w * fwd_in
        if not np.any(valid):
            continue
        if abs(y) == min_abs_y and min_abs_y > 0.0:
            disp = np.max(np.abs(z[valid] - x[valid]))
            if disp > 10.0 * dx:
                raise GridTooCoarse(
                    f"pullback at the smallest |y| moves {disp:.3g}, "
                    f"over 10 cells of {dx:.3g}")
        j = np.nonzero(valid)[0]
        zv = z[j]
        jac = np.asarray(sigma.func(zv), dtype=float) / sig[j]
        seg_lo = np.array([s[0] for s in segments])[seg_of[j]]
        seg_hi = np.array([s[1] for s in segments])[seg_of[j]]
        i_loc = np.floor((zv - spec.xmin) / dx - 0.5).astype(np.int64)
        i_loc = np.clip(i_loc, seg_lo, seg_hi - 2)
        s = np.clip((zv - x[i_loc]) / dx, 0.0, 1.0)
        wj = w * jac
        s2, s3 = s * s, s * s * s
        rows.append(j)
        cols0.append(i_loc)
        c_p0.append(wj * (2.0 * s3 - 3.0 * s2 + 1.0))
        c_p1.append(wj * (-2.0 * s3 + 3.0 * s2))
        c_m0.append(wj * (s3 - 2.0 * s2 + s) * dx)
        c_m1.append(wj * (s3 - s2) * dx)
        ent_row.append(j)
        ent_z.append(zv)
        ent_wjac.append(wj)
        ent_seg.append(seg_of[j])

    if rows:
        rows = np.concatenate(rows)
        cols0 = np.concatenate(cols0)
        c_p0, c_p1 = np.concatenate(c_p0), np.concatenate(c_p1)
        c_m0, c_m1 = np.concatenate(c_m0), np.concatenate(c_m1)
        rr = np.concatenate((rows, rows))
        cc = np.concatenate((cols0, cols0 + 1))
        gather_p = csr_matrix((np.concatenate((c_p0, c_p1)), (rr, cc)),
                              shape=(n, n))
        gather_m = csr_matrix((np.concatenate((c_m0, c_m1)), (rr, cc)),
                              shape=(n, n))
        gcol = np.asarray(gather_p.sum(axis=0)).ravel()
        beta = np.asarray(gather_m.sum(axis=0)).ravel() * dx
        ent_row = np.concatenate(ent_row)
        ent_z = np.concatenate(ent_z)
        ent_wjac = np.concatenate(ent_wjac)
        ent_seg = np.concatenate(ent_seg)
    else:
        gather_p = csr_matrix((n, n))
        gather_m = csr_matrix((n, n))
        gcol = np.zeros(n)
        beta = np.zeros(n)
        ent_row = np.empty(0, dtype=np.int64)
        ent_z = np.empty(0)
        ent_wjac = np.empty(0)
        ent_seg = np.empty(0, dtype=np.int64)

    # Removal per cell: the physical rate s0 plus the (signed, small)
    # difference between what the discrete gather actually draws from the
    # cell and what stays on the grid.  This makes the value part of the
    # jump operator lose exactly the legitimately escaping mass.
    removal = gcol + (s0 - s0_in)

    return FpeOperatorData(
        spec=spec, x=x, segments=segments, drift=drift, diff=diff, sig=sig,
        ys=ys, ws=ws, ind=ind, delta=delta, ymax=float(ymax), m2=m2,
        s0=s0, s0_in=s0_in, tail_rate=tail_rate,
        gather_p=gather_p, gather_m=gather_m, removal=removal, beta=beta,
        sy=sy, ent_row=ent_row, ent_z=ent_z, ent_wjac=ent_wjac,
        ent_seg=ent_seg)


def _pchip_edge(d0: float, d1: float) -> float:
    m = 0.5 * (3.0 * d0 - d1)
    if m * d0 <= 0.0:
        return 0.0
    if d0 * d1 < 0.0 and abs(m) > 3.0 * abs(d0):
        return 3.0 * d0
    return m


def _pchip_slopes(v: np.ndarray, dx: float) -> np.ndarray:
    """Shape-preserving slopes on a uniform grid (Fritsch-Carlson)."""
    n = len(v)
    m = np.zeros(n)
    if n < 2:
        return m
    d = np.diff(v) / dx
    if n == 2:
        m[:] = d[0]
        return m
    prod = d[:-1] * d[1:]
    ssum = d[:-1] + d[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        hm = np.where(prod > 0.0, 2.0 * prod / np.where(ssum != 0.0, ssum, 1.0),
                      0.0)
    m[1:-1] = hm
    m[0] = _pchip_edge(d[0], d[1])
    m[-1] = _pchip_edge(d[-1], d[-2])
    return m


def _slopes(op: FpeOperatorData, v: np.ndarray) -> np.ndarray:
    m = np.zeros_like(v)
    for lo, hi in op.segments:
        m[lo:hi] = _pchip_slopes(v[lo:hi], op.spec.dx)
    return m


def _ddx_centered(g: np.ndarray, dx: float) -> np.ndarray:
    """Centered difference with zero ghost cells (exactly skew-adjoint)."""
    out = np.empty_like(g)
    out[1:-1] = (g[2:] - g[:-2]) / (2.0 * dx)
    out[0] = g[1] / (2.0 * dx) if len(g) > 1 else 0.0
    out[-1] = -g[-2] / (2.0 * dx) if len(g) > 1 else 0.0
    return out


def apply_nonlocal(op: FpeOperatorData, v: np.ndarray,
                   interp: str = "pchip") -> np.ndarray:
    """Jump part of dp/dt on grid values v."""
    if op.ws.size == 0:
        return np.zeros_like(v)
    if interp == "pchip":
        m = _slopes(op, v)
        out = op.gather_p @ v + op.gather_m @ m - op.removal * v
        # the slope basis carries a tiny signed mass; rebalance it so the
        # jump operator stays exactly mass-neutral up to real boundary leak
        sm = float(op.beta @ m)
        tot = float(v.sum()) * op.spec.dx
        if tot > 0.0:
            out -= (sm / tot) * v
    elif interp == "spline":
        from scipy.interpolate import InterpolatedUnivariateSpline
        pz = np.zeros_like(op.ent_z)
        for si, (lo, hi) in enumerate(op.segments):
            sel = op.ent_seg == si
            if not np.any(sel):
                continue
            k = min(5, hi - lo - 1)
            if k < 1:
                continue
            spl = InterpolatedUnivariateSpline(op.x[lo:hi], v[lo:hi], k=k)
            pz[sel] = spl(op.ent_z[sel])
        out = np.bincount(op.ent_row, weights=op.ent_wjac * pz,
                          minlength=len(v)) - op.s0 * v
    else:
        raise ValueError(f"unknown interpolation mode {interp!r}")
    if op.sy != 0.0:
        out += op.sy * _ddx_centered(op.sig * v, op.spec.dx)
    return out


def _advect(op: FpeOperatorData, v: np.ndarray) -> np.ndarray:
    """-d/dx(drift p) by upwind finite volume; boundaries outflow-only."""
    d = op.drift
    a = np.empty(len(v) + 1)
    a[1:-1] = 0.5 * (d[:-1] + d[1:])
    a[0], a[-1] = d[0], d[-1]
    flux = np.where(a[1:-1] > 0.0, a[1:-1] * v[:-1], a[1:-1] * v[1:])
    f_lo = a[0] * v[0] if a[0] < 0.0 else 0.0
    f_hi = a[-1] * v[-1] if a[-1] > 0.0 else 0.0
    full = np.concatenate(([f_lo], flux, [f_hi]))
    return -(full[1:] - full[:-1]) / op.spec.dx


def _diffuse_implicit(op: FpeOperatorData, v: np.ndarray,
                      dt: float) -> np.ndarray:
    """(I - dt d2/dx2 D.) v_new = v with Dirichlet-zero ghosts."""
    n = len(v)
    r = dt / op.spec.dx ** 2
    ab = np.zeros((3, n))
    ab[0, :] = -r * op.diff  # matrix[j-1, j], coefficient of v[j]
    ab[1, :] = 1.0 + 2.0 * r * op.diff
    ab[2, :] = -r * op.diff  # matrix[j+1, j]
    return solve_banded((1, 1), ab, v)


def stability_limit(op: FpeOperatorData) -> float:
    """dt bound: safety 0.8 against advection CFL and the explicit removal rate."""
    out = math.inf
    amax = float(np.max(np.abs(op.drift)))
    if amax > 0.0:
        out = min(out, op.spec.dx / amax)
    if op.ws.size:
        rmax = float(np.max(op.removal))
        if rmax > 0.0:
            out = min(out, 1.0 / rmax)
    return 0.8 * out


def step(op: FpeOperatorData, p: DensityGrid, dt: float,
         interp: str = "pchip", stats: Optional[dict] = None) -> DensityGrid:
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    v = p.values
    rate = _advect(op, v)
    if op.ws.size:
        rate = rate + apply_nonlocal(op, v, interp)
    vs = v + dt * rate
    if np.any(op.diff > 0.0):
        vs = _diffuse_implicit(op, vs, dt)
    vmax_old = float(np.max(np.abs(v)))
    vmax_new = float(np.max(np.abs(vs)))
    if vmax_old > 0.0 and vmax_new > 2.0 * vmax_old:
        raise Instability(
            f"max density grew {vmax_new / vmax_old:.2f}x in one step")
    neg = float(min(vs.min(), 0.0))
    if stats is not None:
        stats["min_value"] = min(stats.get("min_value", 0.0), neg)
    vc = np.maximum(vs, 0.0)
    # leak: mass that left the grid this step (clipping counted with sign),
    # plus the nu tail beyond ymax that the quadrature cannot represent
    leak = p.leak + (v.sum() - vc.sum()) * op.spec.dx + op.tail_rate * dt
    return DensityGrid(p.spec, vc, time=p.time + dt, leak=leak)


def solve(model: SdeModel, p0: DensityGrid, horizon: float,
          ctl: StepControl) -> SolveResult:
    """Advance p0 to the horizon, snapshotting at ctl.save_times (+ horizon)."""
    if horizon < 0.0:
        raise ValueError("horizon must be nonnegative")
    if horizon == 0.0:
        return SolveResult([p0], p0.leak, 0.0, 0.0)
    op = assemble_operator(model, p0.spec, ctl.delta, ctl.ymax, ctl.n_quad)
    dt_max = ctl.safety / 0.8 * stability_limit(op)
    if ctl.dt is not None:
        dt_max = min(dt_max, ctl.dt)
    if not math.isfinite(dt_max):
        dt_max = horizon
    marks = sorted(set([t for t in ctl.save_times if 0.0 < t <= horizon]
                       + [horizon]))
    stats: dict = {}
    snaps = []
    p = p0
    t_prev = 0.0
    for tm in marks:
        span = tm - t_prev
        nst = max(1, int(math.ceil(span / dt_max - 1e-12)))
        dt = span / nst
        for _ in range(nst):
            p = step(op, p, dt, interp=ctl.interp, stats=stats)
        p = DensityGrid(p.spec, p.values, time=tm, leak=p.leak)
        snaps.append(p)
        t_prev = tm
    return SolveResult(snaps, p.leak, stats.get("min_value", 0.0), dt_max)
