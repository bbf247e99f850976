"""Grid estimates of the constants alpha, beta, gamma, xi.

alpha  sup ||f(x) + g(x) u|| over D x U
beta   Lipschitz constant of k on D
gamma  sup ||dh_C/dx g(x)|| over D
xi     Lipschitz constant of h_G on D

All norms are Euclidean.  Grid maxima under-approximate the suprema; each
grid maximum is then polished by a local constrained optimization started
from the best grid points, and the final point is pulled back strictly
inside the region, so estimates still approach the suprema from below.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy import optimize
from scipy.stats import qmc

from . import expr as ex
from ._parallel import map_chunks
from .model import Ball, SystemSpec, columns, grid_points

log = logging.getLogger(__name__)

CONSTANTS = ("alpha", "beta", "gamma", "xi")
DEFAULT_GUARD = 1.02
GUARD_BAND = 1e-3
PAIRS = 100_000
POWER_ITERATIONS = 50
DEFAULT_RESOLUTION = {1: 4001, 2: 400, 3: 60}


class EmptyGridError(ValueError):
    pass


def default_resolution(n: int) -> int:
    return DEFAULT_RESOLUTION.get(n, max(5, int(round(2e5 ** (1.0 / n)))))


@dataclass(frozen=True)
class Grid:
    """Uniform grid over the domain box, filtered to D (or C)."""

    points: np.ndarray
    resolution: tuple
    spacing: tuple
    region: str = "D"

    def __len__(self):
        return len(self.points)


def make_grid(spec: SystemSpec, resolution: int | tuple | None = None, region: str = "D") -> Grid:
    if resolution is None:
        resolution = default_resolution(spec.n)
    pts, res = grid_points(spec, resolution)
    keep = _region_mask(spec, pts, region)
    spacing = tuple((hi - lo) / (r - 1) for lo, hi, r in zip(spec.domain_lower, spec.domain_upper, res))
    grid = Grid(pts[keep], res, spacing, region)
    if len(grid) == 0:
        raise EmptyGridError(f"no grid points of resolution {res} lie in {region}")
    return grid


def _region_mask(spec: SystemSpec, pts: np.ndarray, region: str) -> np.ndarray:
    cols = columns(spec, pts)
    mask = ex.evaluate_array(spec.h_D, cols, len(pts)) > 0
    if region == "C":
        mask &= ex.evaluate_array(spec.h_C, cols, len(pts)) > 0
    elif region != "D":
        raise ValueError(f"unknown region {region!r}")
    return mask


def _region_h(spec: SystemSpec, region: str):
    """Scalar functions whose positivity defines the region."""
    return [spec.h_D] if region == "D" else [spec.h_D, spec.h_C]


# ---------------------------------------------------------------------------
# shared machinery
# ---------------------------------------------------------------------------


def _values(points: np.ndarray, phi: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    parts = map_chunks(lambda a, b: phi(points[a:b]), len(points))
    return np.concatenate(parts) if parts else np.empty(0)


def _away_from_guards(spec: SystemSpec, exprs, pts: np.ndarray) -> np.ndarray:
    mask = np.ones(len(pts), dtype=bool)
    cols = columns(spec, pts)
    for e in exprs:
        for gd in ex.guards(e):
            gv = ex.evaluate_array(ex.Binary("-", gd.left, gd.right), cols, len(pts))
            mask &= np.abs(gv) > GUARD_BAND
    return mask


def _pull_back(z0: np.ndarray, z1: np.ndarray, valid: Callable[[np.ndarray], bool], iters: int = 60) -> np.ndarray:
    """Furthest point on [z0, z1] found by bisection that is still valid (z0 must be valid)."""
    if valid(z1):
        return z1
    lo, hi = 0.0, 1.0
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if valid(z0 + mid * (z1 - z0)):
            lo = mid
        else:
            hi = mid
    return z0 + lo * (z1 - z0)


def _maximize(
    spec: SystemSpec,
    grid: Grid,
    phi: Callable[[np.ndarray], np.ndarray],
    eligible: np.ndarray | None = None,
    avoid_guards_of=(),
    polish: bool = True,
    starts: int = 4,
) -> tuple[float, np.ndarray | None]:
    """Max of ``phi`` over eligible grid points, optionally polished locally."""
    pts = grid.points if eligible is None else grid.points[eligible]
    if len(pts) == 0:
        raise EmptyGridError("no eligible grid points")
    vals = _values(pts, phi)
    order = np.argsort(-vals, kind="stable")
    best = float(vals[order[0]])
    arg = pts[order[0]]
    if not polish or best <= 0:
        return best, arg

    region_exprs = _region_h(spec, grid.region)
    lower = np.array(spec.domain_lower)
    upper = np.array(spec.domain_upper)

    def valid(z):
        if np.any(z < lower) or np.any(z > upper):
            return False
        p = z[None, :]
        cols = columns(spec, p)
        try:
            if any(ex.evaluate_array(h, cols, 1)[0] <= 0 for h in region_exprs):
                return False
            if avoid_guards_of and not _away_from_guards(spec, avoid_guards_of, p)[0]:
                return False
        except ex.DomainError:
            return False
        return True

    def phi1(z):
        try:
            v = float(phi(z[None, :])[0])
        except ex.DomainError:
            return 0.0
        return v if np.isfinite(v) else 0.0

    cons = [
        {"type": "ineq", "fun": (lambda z, h=h: ex.evaluate_array(h, columns(spec, z[None, :]), 1)[0])}
        for h in region_exprs
    ]
    for idx in order[:starts]:
        z0 = pts[idx].astype(float)
        scale = float(vals[idx])
        if scale <= 0:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = optimize.minimize(
                lambda z: -phi1(z) / scale,
                z0,
                method="SLSQP",
                bounds=list(zip(lower, upper)),
                constraints=cons,
                options={"maxiter": 200, "ftol": 1e-15},
            )
        z = _pull_back(z0, np.asarray(res.x, dtype=float), valid)
        v = phi1(z)
        if v > best:
            best, arg = v, z
    return best, arg


def _jacobian_exprs(exprs, names) -> list:
    return [[ex.differentiate(e, v) for v in names] for e in exprs]


def _eval_matrix(rows, cols, size) -> np.ndarray:
    """(K, len(rows), len(rows[0])) array of evaluated expression entries."""
    return np.stack([np.stack([ex.evaluate_array(e, cols, size) for e in row], axis=-1) for row in rows], axis=1)


def spectral_norms(J: np.ndarray, iterations: int = POWER_ITERATIONS) -> np.ndarray:
    """Largest singular value of each (m, n) matrix in a (K, m, n) stack, by power iteration."""
    K, m, n = J.shape
    v = J.sum(axis=1)
    norms = np.linalg.norm(v, axis=1)
    v = np.where(norms[:, None] > 0, v / np.where(norms > 0, norms, 1.0)[:, None], 1.0 / np.sqrt(n))
    for _ in range(iterations):
        w = np.einsum("kij,kj->ki", J, v)
        w = np.einsum("kij,ki->kj", J, w)
        wn = np.linalg.norm(w, axis=1)
        ok = wn > 0
        v[ok] = w[ok] / wn[ok][:, None]
    return np.linalg.norm(np.einsum("kij,kj->ki", J, v), axis=1)


def pairwise_lipschitz(
    spec: SystemSpec, exprs, pairs: int = PAIRS, region: str = "D", seed: int = 0
) -> float:
    """Max of ``||F(x) - F(y)|| / ||x - y||`` over quasi-random pairs in the region."""
    n = spec.n
    lower = np.array(spec.domain_lower * 2)
    upper = np.array(spec.domain_upper * 2)
    sampler = qmc.Sobol(d=2 * n, scramble=True, seed=seed)
    best = 0.0
    found = 0
    draws = 0
    while found < pairs:
        raw = qmc.scale(sampler.random(1 << 15), lower, upper)
        draws += 1
        x, y = raw[:, :n], raw[:, n:]
        ok = _region_mask(spec, x, region) & _region_mask(spec, y, region)
        ok &= np.any(x != y, axis=1)
        x, y = x[ok][: pairs - found], y[ok][: pairs - found]
        found += len(x)
        if len(x):
            fx = np.stack([ex.evaluate_array(e, columns(spec, x), len(x)) for e in exprs], axis=1)
            fy = np.stack([ex.evaluate_array(e, columns(spec, y), len(y)) for e in exprs], axis=1)
            ratio = np.linalg.norm(fx - fy, axis=1) / np.linalg.norm(x - y, axis=1)
            best = max(best, float(ratio.max()))
        if draws > 4096:
            raise EmptyGridError("could not sample point pairs inside the region")
    return best


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------


def _control_candidates(spec: SystemSpec) -> list:
    return spec.control_set.extreme_points(spec.m)


def _alpha_phi(spec: SystemSpec):
    cands = [np.array(u, dtype=float) for u in _control_candidates(spec)]
    ball = isinstance(spec.control_set, Ball)

    def phi(p):
        cols = columns(spec, p)
        K = len(p)
        fx = np.stack([ex.evaluate_array(e, cols, K) for e in spec.f], axis=1)
        gx = _eval_matrix(spec.g, cols, K)
        best = np.zeros(K)
        for u in cands:
            best = np.maximum(best, np.linalg.norm(fx + gx @ u, axis=1))
        if ball:
            # direction of g^T f is the first-order maximizer on the sphere
            d = np.einsum("kij,ki->kj", gx, fx)
            dn = np.linalg.norm(d, axis=1)
            ok = dn > 0
            if ok.any():
                u = np.zeros_like(d)
                u[ok] = spec.control_set.ubar * d[ok] / dn[ok][:, None]
                best = np.maximum(best, np.linalg.norm(fx + np.einsum("kij,kj->ki", gx, u), axis=1))
        return best

    return phi


def estimate_alpha(spec: SystemSpec, grid: Grid, guard_factor: float = 1.0, polish: bool = True) -> float:
    """guard_factor x max over grid x in D and extreme controls of ||f(x) + g(x) u||."""
    value, _ = _maximize(spec, grid, _alpha_phi(spec), polish=polish)
    return guard_factor * value


def _beta_gradient(spec: SystemSpec, grid: Grid, polish: bool) -> float:
    jac = _jacobian_exprs(spec.k, spec.state_names)

    def phi(p):
        return spectral_norms(_eval_matrix(jac, columns(spec, p), len(p)))

    eligible = _away_from_guards(spec, spec.k, grid.points)
    if not eligible.any():
        return 0.0
    value, _ = _maximize(spec, grid, phi, eligible, avoid_guards_of=spec.k, polish=polish)
    return value


def estimate_beta(
    spec: SystemSpec,
    grid: Grid,
    guard_factor: float = 1.0,
    polish: bool = True,
    pairs: int = PAIRS,
    details: dict | None = None,
) -> float:
    """guard_factor x max(gradient-based, pairwise) Lipschitz estimate of k."""
    grad = _beta_gradient(spec, grid, polish)
    pair = pairwise_lipschitz(spec, spec.k, pairs, grid.region) if pairs else 0.0
    if details is not None:
        details["beta_gradient"] = grad
        details["beta_pairwise"] = pair
    return guard_factor * max(grad, pair)


def estimate_gamma(spec: SystemSpec, grid: Grid, guard_factor: float = 1.0, polish: bool = True) -> float:
    """guard_factor x max over grid of ||(grad h_C)^T g||."""
    grad = ex.gradient(spec.h_C, spec.state_names)
    rows = [[ex.fold(_dot_column(grad, spec.g, j)) for j in range(spec.m)]]

    def phi(p):
        return np.linalg.norm(_eval_matrix(rows, columns(spec, p), len(p))[:, 0, :], axis=1)

    eligible = _away_from_guards(spec, rows[0], grid.points)
    value, _ = _maximize(spec, grid, phi, eligible, avoid_guards_of=rows[0], polish=polish)
    return guard_factor * value


def _dot_column(grad, g, j):
    acc = ex.ZERO
    for i, dh in enumerate(grad):
        acc = ex.add(acc, ex.mul(dh, g[i][j]))
    return acc


def estimate_xi(
    spec: SystemSpec,
    grid: Grid,
    guard_factor: float = 1.0,
    polish: bool = True,
    pairs: int = PAIRS,
    details: dict | None = None,
) -> float:
    """guard_factor x max over grid of ||grad h_G|| (plus pairwise slopes if h_G branches)."""
    grad = [list(ex.gradient(spec.h_G, spec.state_names))]

    def phi(p):
        return np.linalg.norm(_eval_matrix(grad, columns(spec, p), len(p))[:, 0, :], axis=1)

    eligible = _away_from_guards(spec, [spec.h_G], grid.points)
    value = 0.0
    if eligible.any():
        value, _ = _maximize(spec, grid, phi, eligible, avoid_guards_of=[spec.h_G], polish=polish)
    if not ex.is_smooth(spec.h_G) and pairs:
        pair = pairwise_lipschitz(spec, [spec.h_G], pairs, grid.region)
        if details is not None:
            details["xi_pairwise"] = pair
        value = max(value, pair)
    return guard_factor * value


_ESTIMATORS = {
    "alpha": estimate_alpha,
    "beta": estimate_beta,
    "gamma": estimate_gamma,
    "xi": estimate_xi,
}


@dataclass(frozen=True)
class BoundsSet:
    alpha: float
    beta: float
    gamma: float
    xi: float
    provenance: Mapping[str, str] = field(default_factory=lambda: {c: "override" for c in CONSTANTS})
    raw: Mapping[str, float | None] = field(default_factory=dict)
    grid_resolution: tuple | None = None
    guard_factor: float = 1.0
    details: Mapping[str, float] = field(default_factory=dict)

    @classmethod
    def given(cls, alpha: float, beta: float, gamma: float, xi: float) -> "BoundsSet":
        """User-supplied constants (all marked as overrides)."""
        return cls(alpha, beta, gamma, xi)

    def to_json(self) -> dict:
        return {
            **{c: getattr(self, c) for c in CONSTANTS},
            "provenance": dict(self.provenance),
            "raw": dict(self.raw),
            "grid_resolution": list(self.grid_resolution) if self.grid_resolution else None,
            "guard_factor": self.guard_factor,
            "details": dict(self.details),
        }


def estimate_all(
    spec: SystemSpec,
    grid: Grid | None = None,
    which=CONSTANTS,
    polish: bool = True,
) -> tuple[dict, dict, Grid]:
    """Raw (guard 1.0) estimates of the requested constants."""
    if grid is None:
        grid = make_grid(spec)
    raw, details = {}, {}
    for name in which:
        fn = _ESTIMATORS[name]
        if name in ("beta", "xi"):
            raw[name] = fn(spec, grid, 1.0, polish=polish, details=details)
        else:
            raw[name] = fn(spec, grid, 1.0, polish=polish)
        log.info("estimated %s = %.6g", name, raw[name])
    return raw, details, grid


def resolve_bounds(
    spec: SystemSpec,
    grid: Grid | None = None,
    guard_factor: float = DEFAULT_GUARD,
    polish: bool = True,
) -> BoundsSet:
    """Override values where present, guarded grid estimates otherwise."""
    override = dict(spec.bounds_override or {})
    missing = [c for c in CONSTANTS if c not in override]
    raw: dict = {c: None for c in CONSTANTS}
    details: dict = {}
    resolution = None
    if missing:
        est, details, grid = estimate_all(spec, grid, missing, polish=polish)
        raw.update(est)
        resolution = grid.resolution
    values = {c: override[c] if c in override else guard_factor * raw[c] for c in CONSTANTS}
    provenance = {c: "override" if c in override else "estimated" for c in CONSTANTS}
    return BoundsSet(
        **values,
        provenance=provenance,
        raw=raw,
        grid_resolution=resolution,
        guard_factor=guard_factor,
        details=details,
    )
