"""Run configuration: JSON in, validated builders out.

A run is described by one JSON document so it can be rerun bit-for-bit.
Parsing normalizes the document; serialize(parse(text)) is canonical and
semantically identical to the input.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Any, Callable, Optional

import numpy as np

from . import transform
from .density import GridSpec
from .errors import ConfigError
from .levy import (AlphaStable, CompoundPoisson, Density1D, LevyMeasure,
                   LevyTriplet, NullMeasure, SumMeasure, normal_density,
                   uniform_density)
from .sde import SdeModel, SimulationPlan


def _get(d: dict, key: str, path: str, types, default=..., choices=None):
    where = f"{path}.{key}" if path else key
    if key not in d:
        if default is not ...:
            return default
        raise ConfigError(where, "required field is missing")
    v = d[key]
    if types is float and isinstance(v, int) and not isinstance(v, bool):
        v = float(v)
    if not isinstance(v, types) or isinstance(v, bool) and types is not bool:
        raise ConfigError(where, f"expected {getattr(types, '__name__', types)},"
                                 f" got {type(v).__name__}")
    if choices is not None and v not in choices:
        raise ConfigError(where, f"must be one of {sorted(choices)}")
    return v


def _build_density(d: dict, path: str) -> Density1D:
    kind = _get(d, "kind", path, str, choices={"normal", "uniform"})
    if kind == "normal":
        mean = _get(d, "mean", path, float)
        sd = _get(d, "sd", path, float)
        if sd <= 0:
            raise ConfigError(f"{path}.sd", "must be positive")
        return normal_density(mean, sd)
    a = _get(d, "a", path, float)
    b = _get(d, "b", path, float)
    if b <= a:
        raise ConfigError(f"{path}.b", "must exceed a")
    return uniform_density(a, b)


def _build_measure(d: dict, path: str) -> LevyMeasure:
    kind = _get(d, "kind", path, str,
                choices={"alpha_stable", "compound_poisson", "sum", "null"})
    if kind == "null":
        return NullMeasure()
    if kind == "alpha_stable":
        alpha = _get(d, "alpha", path, float)
        scale = _get(d, "scale", path, float, default=1.0)
        if not 0.0 < alpha < 2.0:
            raise ConfigError(f"{path}.alpha", "must lie in (0, 2)")
        if scale <= 0:
            raise ConfigError(f"{path}.scale", "must be positive")
        return AlphaStable(alpha, scale)
    if kind == "compound_poisson":
        rate = _get(d, "rate", path, float)
        if rate <= 0:
            raise ConfigError(f"{path}.rate", "must be positive")
        dens = _build_density(_get(d, "density", path, dict),
                              f"{path}.density")
        return CompoundPoisson(rate, dens)
    terms = _get(d, "terms", path, list)
    if not terms:
        raise ConfigError(f"{path}.terms", "must be non-empty")
    return SumMeasure(tuple(_build_measure(t, f"{path}.terms[{i}]")
                            for i, t in enumerate(terms)))


def _build_f(d: dict, path: str) -> Callable[[np.ndarray], np.ndarray]:
    name = _get(d, "name", path, str, choices={"zero", "scale", "constant"})
    if name == "zero":
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))
    if name == "scale":
        c = _get(d, "coef", path, float)
        return lambda x: c * np.asarray(x, dtype=float)
    v = _get(d, "value", path, float)
    return lambda x: np.full_like(np.asarray(x, dtype=float), v)


def build_sigma(d: dict, path: str = "model.sigma"):
    """Returns (SigmaFunction, TransformAtlas, vectorized jump map or None)."""
    name = _get(d, "name", path, str,
                choices={"linear", "constant", "sine", "one_plus_x2"})
    if name == "linear":
        c = _get(d, "coef", path, float, default=1.0)
        if c == 0:
            raise ConfigError(f"{path}.coef", "must be nonzero")
        sig, atlas = transform.linear_sigma(c)
        return sig, atlas, lambda x, y: x * np.exp(c * y)
    if name == "constant":
        c = _get(d, "coef", path, float, default=1.0)
        if c == 0:
            raise ConfigError(f"{path}.coef", "must be nonzero")
        sig, atlas = transform.constant_sigma(c)
        return sig, atlas, lambda x, y: x + c * y
    if name == "sine":
        periods = _get(d, "periods", path, int, default=1)
        if periods < 1:
            raise ConfigError(f"{path}.periods", "must be at least 1")
        sig, atlas = transform.sine_sigma(periods)
        return sig, atlas, None
    sig, atlas = transform.one_plus_x2_sigma()
    return sig, atlas, None


@dataclass(frozen=True)
class RunConfig:
    """Validated, canonicalized run description."""

    doc: dict

    def serialize(self) -> str:
        return json.dumps(self.doc, sort_keys=True, separators=(",", ":"))

    def digest(self) -> str:
        return hashlib.sha256(self.serialize().encode()).hexdigest()[:12]

    # ---- builders ----

    def model_spec(self) -> dict:
        return _get(self.doc, "model", "", dict)

    def build_model(self) -> SdeModel:
        m = self.model_spec()
        f = _build_f(_get(m, "f", "model", dict, default={"name": "zero"}),
                     "model.f")
        sig, atlas, jv = build_sigma(_get(m, "sigma", "model", dict))
        t = _get(m, "triplet", "model", dict)
        b = _get(t, "b", "model.triplet", float, default=0.0)
        A = _get(t, "A", "model.triplet", float, default=0.0)
        if A < 0:
            raise ConfigError("model.triplet.A", "must be nonnegative")
        nu = _build_measure(_get(t, "nu", "model.triplet", dict,
                                 default={"kind": "null"}),
                            "model.triplet.nu")
        return SdeModel(f, sig, LevyTriplet(b, A, nu), atlas, jump_vec=jv)

    def build_plan(self) -> SimulationPlan:
        p = _get(self.doc, "plan", "", dict)
        n_paths = _get(p, "nPaths", "plan", int)
        if n_paths <= 0:
            raise ConfigError("plan.nPaths", "must be positive")
        horizon = _get(p, "horizon", "plan", float)
        if horizon <= 0:
            raise ConfigError("plan.horizon", "must be positive")
        dt = _get(p, "dt", "plan", float)
        if dt <= 0:
            raise ConfigError("plan.dt", "must be positive")
        eps = _get(p, "epsilon", "plan", float, default=1e-3)
        if eps <= 0:
            raise ConfigError("plan.epsilon", "must be positive")
        x0 = p.get("x0", 0.0)
        if isinstance(x0, dict):
            x0 = _build_density(x0, "plan.x0")
        elif isinstance(x0, bool) or not isinstance(x0, (int, float)):
            raise ConfigError("plan.x0", "expected number or density spec")
        else:
            x0 = float(x0)
        save = _get(p, "saveTimes", "plan", list, default=[horizon])
        for i, t in enumerate(save):
            if isinstance(t, bool) or not isinstance(t, (int, float)):
                raise ConfigError(f"plan.saveTimes[{i}]", "expected number")
            if not 0.0 <= t <= horizon:
                raise ConfigError(f"plan.saveTimes[{i}]",
                                  "must lie in [0, horizon]")
        seed = _get(p, "seed", "plan", int, default=0)
        return SimulationPlan(x0, horizon, dt, eps, n_paths,
                              tuple(float(t) for t in save), seed)

    def sim_mode(self) -> str:
        p = _get(self.doc, "plan", "", dict)
        return _get(p, "mode", "plan", str, default="composed",
                    choices={"composed", "adapted"})

    def build_grid(self) -> GridSpec:
        g = _get(self.doc, "grid", "", dict)
        xmin = _get(g, "xmin", "grid", float)
        xmax = _get(g, "xmax", "grid", float)
        n = _get(g, "n", "grid", int)
        if xmax <= xmin:
            raise ConfigError("grid.xmax", "must exceed xmin")
        if n <= 0:
            raise ConfigError("grid.n", "must be positive")
        return GridSpec(xmin, xmax, n)

    def quad_params(self) -> dict:
        q = _get(self.doc, "quad", "", dict, default={})
        delta = _get(q, "delta", "quad", float, default=1e-3)
        if delta <= 0:
            raise ConfigError("quad.delta", "must be positive")
        ymax = q.get("ymax")
        if ymax is not None:
            if isinstance(ymax, bool) or not isinstance(ymax, (int, float)):
                raise ConfigError("quad.ymax", "expected number or null")
            ymax = float(ymax)
            if ymax <= delta:
                raise ConfigError("quad.ymax", "must exceed delta")
        n_quad = _get(q, "nQuad", "quad", int, default=30)
        if n_quad <= 0:
            raise ConfigError("quad.nQuad", "must be positive")
        return {"delta": delta, "ymax": ymax, "n_quad": n_quad}

    def solve_opts(self) -> dict:
        s = _get(self.doc, "solve", "", dict, default={})
        dt = s.get("dt")
        if dt is not None:
            if isinstance(dt, bool) or not isinstance(dt, (int, float)):
                raise ConfigError("solve.dt", "expected number or null")
            if dt <= 0:
                raise ConfigError("solve.dt", "must be positive")
            dt = float(dt)
        interp = _get(s, "interp", "solve", str, default="pchip",
                      choices={"pchip", "spline"})
        init = _get(s, "initial", "solve", dict, default=None)
        if init is not None:
            mean = _get(init, "mean", "solve.initial", float)
            sd = _get(init, "sd", "solve.initial", float)
            if sd <= 0:
                raise ConfigError("solve.initial.sd", "must be positive")
            init = {"mean": mean, "sd": sd}
        return {"dt": dt, "interp": interp, "initial": init}

    def out_dir(self) -> str:
        return _get(self.doc, "out", "", str, default="runs")

    def section(self, name: str) -> dict:
        return _get(self.doc, name, "", dict, default={})


def parse_config(text: str) -> RunConfig:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError("<document>", f"invalid JSON at line {e.lineno}: "
                                        f"{e.msg}")
    if not isinstance(doc, dict):
        raise ConfigError("<document>", "top level must be an object")
    return RunConfig(doc)


def load_config(path: str) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
