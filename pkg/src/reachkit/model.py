"""Problem instances: plant, controller, sets and sampled-data parameters."""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np

from . import expr as ex


class SpecError(ValueError):
    """Invalid system configuration (schema, dimension or range problem)."""


# ---------------------------------------------------------------------------
# Control sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ball:
    """Euclidean ball ``||u|| <= ubar``."""

    ubar: float

    def contains(self, u) -> bool:
        return float(np.linalg.norm(u)) <= self.ubar

    def clamp(self, u) -> tuple:
        norm = math.sqrt(sum(c * c for c in u))
        if norm <= self.ubar:
            return tuple(u)
        s = self.ubar / norm
        return tuple(c * s for c in u)

    def diameter(self) -> float:
        return 2.0 * self.ubar

    def extreme_points(self, m: int) -> list:
        pts = []
        for j in range(m):
            for sign in (1.0, -1.0):
                u = [0.0] * m
                u[j] = sign * self.ubar
                pts.append(tuple(u))
        return pts

    def to_json(self) -> dict:
        return {"type": "ball", "ubar": self.ubar}


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``lower <= u <= upper`` (componentwise)."""

    lower: tuple
    upper: tuple

    def contains(self, u) -> bool:
        return all(lo <= c <= hi for c, lo, hi in zip(u, self.lower, self.upper))

    def clamp(self, u) -> tuple:
        return tuple(min(max(c, lo), hi) for c, lo, hi in zip(u, self.lower, self.upper))

    def diameter(self) -> float:
        return math.sqrt(sum((hi - lo) ** 2 for lo, hi in zip(self.lower, self.upper)))

    def extreme_points(self, m: int) -> list:
        return list(itertools.product(*zip(self.lower, self.upper)))

    def to_json(self) -> dict:
        return {"type": "box", "lower": list(self.lower), "upper": list(self.upper)}


ControlSet = Ball | Box


@dataclass(frozen=True)
class Membership:
    in_D: bool
    in_C: bool
    in_G: bool
    h_D: float
    h_C: float
    h_G: float


# ---------------------------------------------------------------------------
# SystemSpec
# ---------------------------------------------------------------------------

_OVERRIDE_KEYS = ("alpha", "beta", "gamma", "xi")


@dataclass(frozen=True)
class SystemSpec:
    name: str
    state_names: tuple
    control_dim: int
    f: tuple
    g: tuple  # n rows of m expressions
    k: tuple
    h_D: Any
    h_C: Any
    h_G: Any
    control_set: ControlSet
    lam: float
    delta: float
    epsilon: float
    domain_lower: tuple
    domain_upper: tuple
    bounds_override: Mapping[str, float] | None = None
    source: Mapping[str, Any] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        n, m = len(self.state_names), self.control_dim
        if m < 1:
            raise SpecError("control_dim must be >= 1")
        if len(self.f) != n:
            raise SpecError(f"dimension mismatch: f has {len(self.f)} entries, state has {n}")
        if len(self.g) != n or any(len(row) != m for row in self.g):
            raise SpecError(f"dimension mismatch: g must be {n}x{m}")
        if len(self.k) != m:
            raise SpecError(f"dimension mismatch: k has {len(self.k)} entries, control_dim is {m}")
        if not self.lam > 0:
            raise SpecError(f"lambda must be positive, got {self.lam}")
        if self.delta < 0 or self.epsilon < 0:
            raise SpecError("delta and epsilon must be non-negative")
        if len(self.domain_lower) != n or len(self.domain_upper) != n:
            raise SpecError("domain_box must have one interval per state")
        if any(lo >= hi for lo, hi in zip(self.domain_lower, self.domain_upper)):
            raise SpecError("domain_box lower must be strictly below upper")
        if isinstance(self.control_set, Box) and len(self.control_set.lower) != m:
            raise SpecError("control box dimension differs from control_dim")
        declared = set(self.state_names)
        for e in (*self.f, *itertools.chain(*self.g), *self.k, self.h_D, self.h_C, self.h_G):
            extra = ex.variables(e) - declared
            if extra:
                raise SpecError(f"undeclared variables {sorted(extra)}")

    @property
    def n(self) -> int:
        return len(self.state_names)

    @property
    def m(self) -> int:
        return self.control_dim

    def replace(self, **changes) -> "SystemSpec":
        """Copy with fields changed (compiled caches are not carried over)."""
        data = {f_: getattr(self, f_) for f_ in self.__dataclass_fields__}
        data.update(changes)
        return SystemSpec(**data)

    # compiled evaluators; not part of equality or pickling
    @cached_property
    def _f_fn(self):
        return ex.compile_vector(self.f, self.state_names)

    @cached_property
    def _g_fn(self):
        return ex.compile_vector([e for row in self.g for e in row], self.state_names)

    @cached_property
    def _k_fn(self):
        return ex.compile_vector(self.k, self.state_names)

    @cached_property
    def _sets_fn(self):
        return ex.compile_vector([self.h_D, self.h_C, self.h_G], self.state_names)

    @cached_property
    def _hc_fn(self):
        return ex.compile_vector([self.h_C], self.state_names)

    @cached_property
    def _hg_fn(self):
        return ex.compile_vector([self.h_G], self.state_names)

    @cached_property
    def lie_terms(self):
        """``(grad h_C . f, grad h_C . g)`` as expressions (scalar, m-tuple)."""
        grad = ex.gradient(self.h_C, self.state_names)
        lf = ex.ZERO
        for dh, fi in zip(grad, self.f):
            lf = ex.add(lf, ex.mul(dh, fi))
        lg = []
        for j in range(self.m):
            acc = ex.ZERO
            for i, dh in enumerate(grad):
                acc = ex.add(acc, ex.mul(dh, self.g[i][j]))
            lg.append(acc)
        return lf, tuple(lg)

    def __getstate__(self):
        state = dict(self.__dict__)
        for key in list(state):
            if key.startswith("_") and key.endswith("_fn"):
                del state[key]
        state.pop("lie_terms", None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)

    def __hash__(self):
        return hash((self.name, self.state_names, self.f, self.g, self.k, self.h_C, self.lam, self.delta, self.epsilon))


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

_REQUIRED = ("state", "f", "g", "k", "control", "h_D", "h_C", "h_G", "lambda", "delta", "epsilon", "domain_box")


def _number(cfg: Mapping, key: str) -> float:
    v = cfg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise SpecError(f"{key!r} must be a finite number, got {v!r}")
    return float(v)


def _exprs(items, vars, what: str):
    if not isinstance(items, list):
        raise SpecError(f"{what!r} must be a list")
    out = []
    for i, text in enumerate(items):
        if not isinstance(text, str):
            raise SpecError(f"{what}[{i}] must be an expression string")
        out.append(ex.fold(ex.parse(text, vars)))
    return tuple(out)


def spec_from_dict(cfg: Mapping[str, Any]) -> SystemSpec:
    """Build a SystemSpec from the JSON config schema.

    Raises SpecError on schema/range problems and ParseError on bad expressions.
    """
    if not isinstance(cfg, Mapping):
        raise SpecError("config must be a JSON object")
    missing = [k for k in _REQUIRED if k not in cfg]
    if missing:
        raise SpecError(f"missing config keys: {missing}")
    state = cfg["state"]
    if not isinstance(state, list) or not state or not all(isinstance(s, str) and s.isidentifier() for s in state):
        raise SpecError("'state' must be a non-empty list of identifiers")
    if len(set(state)) != len(state):
        raise SpecError("duplicate state names")
    f = _exprs(cfg["f"], state, "f")
    if not isinstance(cfg["g"], list) or not all(isinstance(r, list) for r in cfg["g"]):
        raise SpecError("'g' must be a list of rows")
    g = tuple(_exprs(row, state, f"g[{i}]") for i, row in enumerate(cfg["g"]))
    k = _exprs(cfg["k"], state, "k")
    m = len(k)

    ctrl = cfg["control"]
    if not isinstance(ctrl, Mapping) or ctrl.get("type") not in ("ball", "box"):
        raise SpecError("'control' must be {type: 'ball', ubar} or {type: 'box', lower, upper}")
    if ctrl["type"] == "ball":
        ubar = _number(ctrl, "ubar")
        if ubar <= 0:
            raise SpecError("control ubar must be positive")
        cset: ControlSet = Ball(ubar)
    else:
        lo, hi = ctrl.get("lower"), ctrl.get("upper")
        if not isinstance(lo, list) or not isinstance(hi, list) or len(lo) != len(hi):
            raise SpecError("control box needs equal-length 'lower' and 'upper' lists")
        if any(a > b for a, b in zip(lo, hi)):
            raise SpecError("control box lower exceeds upper")
        cset = Box(tuple(float(v) for v in lo), tuple(float(v) for v in hi))

    box = cfg["domain_box"]
    if not isinstance(box, Mapping) or "lower" not in box or "upper" not in box:
        raise SpecError("'domain_box' must be {lower: [...], upper: [...]}")

    override = cfg.get("bounds_override")
    if override is not None:
        if not isinstance(override, Mapping):
            raise SpecError("'bounds_override' must be an object")
        unknown = set(override) - set(_OVERRIDE_KEYS)
        if unknown:
            raise SpecError(f"unknown bounds_override keys: {sorted(unknown)}")
        override = {key: _number(override, key) for key in _OVERRIDE_KEYS if key in override}
        if any(v < 0 for v in override.values()):
            raise SpecError("bounds_override values must be non-negative")

    return SystemSpec(
        name=str(cfg.get("name", "unnamed")),
        state_names=tuple(state),
        control_dim=m,
        f=f,
        g=g,
        k=k,
        h_D=ex.fold(ex.parse(_str(cfg, "h_D"), state)),
        h_C=ex.fold(ex.parse(_str(cfg, "h_C"), state)),
        h_G=ex.fold(ex.parse(_str(cfg, "h_G"), state)),
        control_set=cset,
        lam=_number(cfg, "lambda"),
        delta=_number(cfg, "delta"),
        epsilon=_number(cfg, "epsilon"),
        domain_lower=tuple(float(v) for v in box["lower"]),
        domain_upper=tuple(float(v) for v in box["upper"]),
        bounds_override=override or None,
        source=dict(cfg),
    )


def _str(cfg, key):
    v = cfg[key]
    if not isinstance(v, str):
        raise SpecError(f"{key!r} must be an expression string")
    return v


BUNDLED = ("pendulum", "cruise", "pendulum_estimate", "cruise_estimate")


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("reachkit") / "configs" / f"{name}.json"))


def load_spec(config: str | Path | Mapping) -> SystemSpec:
    """Load a spec from a JSON file path, a bundled config name, or a parsed dict."""
    if isinstance(config, Mapping):
        return spec_from_dict(config)
    path = Path(config)
    if not path.exists() and str(config) in BUNDLED:
        path = bundled_path(str(config))
    with open(path) as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as err:
            raise SpecError(f"{path}: invalid JSON ({err})") from None
    return spec_from_dict(cfg)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def dynamics(spec: SystemSpec, x, u) -> tuple:
    """``f(x) + g(x) u``."""
    fx = spec._f_fn(x)
    gx = spec._g_fn(x)
    m = spec.m
    return tuple(fx[i] + sum(gx[i * m + j] * u[j] for j in range(m)) for i in range(spec.n))


def controller(spec: SystemSpec, x) -> tuple:
    return spec._k_fn(x)


def clamp_to_control_set(spec: SystemSpec, u) -> tuple:
    return spec.control_set.clamp(u)


def membership(spec: SystemSpec, x) -> Membership:
    hd, hc, hg = spec._sets_fn(x)
    in_d = hd > 0
    in_c = in_d and hc > 0
    return Membership(in_d, in_c, in_c and hg > 0, hd, hc, hg)


def columns(spec: SystemSpec, points: np.ndarray) -> dict:
    """Map state names to the columns of a (K, n) point array."""
    return {name: points[:, i] for i, name in enumerate(spec.state_names)}


def grid_points(spec: SystemSpec, resolution: int | Sequence[int]) -> tuple[np.ndarray, tuple]:
    """All points of a uniform grid over the domain box, C-ordered (last axis fastest)."""
    res = (resolution,) * spec.n if isinstance(resolution, int) else tuple(resolution)
    axes = [np.linspace(lo, hi, r) for lo, hi, r in zip(spec.domain_lower, spec.domain_upper, res)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([a.ravel() for a in mesh], axis=1), res


def _sphere_offsets(n: int, eps: float) -> np.ndarray:
    dirs = []
    for i in range(n):
        for s in (1.0, -1.0):
            d = np.zeros(n)
            d[i] = s
            dirs.append(d)
    for signs in itertools.product((1.0, -1.0), repeat=n):
        dirs.append(np.array(signs) / math.sqrt(n))
    return eps * np.array(dirs)


def validate_sets(spec: SystemSpec, resolution: int = 50) -> list[str]:
    """Check C ⊆ D, G ⊆ C and C ⊕ B_eps ⊆ D on a grid; returns problem descriptions."""
    pts, _ = grid_points(spec, resolution)
    cols = columns(spec, pts)
    hd = ex.evaluate_array(spec.h_D, cols)
    hc = ex.evaluate_array(spec.h_C, cols)
    hg = ex.evaluate_array(spec.h_G, cols)
    problems = []
    bad = (hc > 0) & ~(hd > 0)
    if bad.any():
        problems.append(f"C not inside D at {pts[bad][0].tolist()}")
    # G = {x in C | h_G > 0} is nested in C by definition; check the flags agree
    in_g = (hg > 0) & (hc > 0) & (hd > 0)
    if (in_g & ~(hc > 0)).any():
        problems.append("G not inside C")
    if spec.epsilon > 0:
        inside = pts[(hc > 0) & (hd > 0)]
        for off in _sphere_offsets(spec.n, spec.epsilon):
            shifted = inside + off
            h = ex.evaluate_array(spec.h_D, columns(spec, shifted))
            fail = ~(h > 0)
            if fail.any():
                problems.append(
                    f"C ⊕ B_eps not inside D: {inside[fail][0].tolist()} shifted by {off.tolist()}"
                )
                break
    return problems
