"""Robustness margin, shrunk goal sets and the grid falsifier for the sampled-data condition.

The condition checked at every scanned state x in C \\ G_hat is

    grad h_C(x) . (f(x) + g(x) k(x)) - lam h_C(x) >= m,
    m = gamma * min(beta (alpha Delta + eps), diam U).

A PASS only means no violation was found on the stated grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import expr as ex
from ._parallel import map_chunks
from .bounds import BoundsSet
from .model import Ball, SystemSpec, columns, grid_points

PASS, FAIL, INCONCLUSIVE = "PASS", "FAIL", "INCONCLUSIVE"
DEFAULT_SCAN_RESOLUTION = {1: 4001, 2: 400, 3: 60}


@dataclass(frozen=True)
class GoalThresholds:
    """Superlevel thresholds on h_G for the shrunk goal sets G1 ⊇ G2 ⊇ G_hat."""

    t1: float
    t2: float
    t_hat: float

    def confirms(self, h_g_measured: float) -> bool:
        """Measured-state goal confirmation (strict)."""
        return h_g_measured > self.t1

    def in_ghat(self, h_g: float) -> bool:
        return h_g - self.t_hat > 0

    def to_json(self) -> dict:
        return {"t1": self.t1, "t2": self.t2, "t_hat": self.t_hat}


@dataclass(frozen=True)
class CertReport:
    dbar: float
    margin: float
    thresholds: GoalThresholds
    c_hat_threshold: float
    min_residual: float | None
    witness: tuple | None
    ghat_nonempty: bool
    admissible: bool
    grid_resolution: tuple
    grid_spacing: tuple
    scanned_points: int
    verdict: str
    inadmissible_witness: tuple | None = None
    max_control_excess: float = 0.0
    bounds: BoundsSet | None = None

    def to_json(self) -> dict:
        return {
            "dbar": self.dbar,
            "margin": self.margin,
            "thresholds": self.thresholds.to_json(),
            "c_hat_threshold": self.c_hat_threshold,
            "min_residual": self.min_residual,
            "witness": list(self.witness) if self.witness is not None else None,
            "ghat_nonempty": self.ghat_nonempty,
            "admissible": self.admissible,
            "inadmissible_witness": (
                list(self.inadmissible_witness) if self.inadmissible_witness is not None else None
            ),
            "max_control_excess": self.max_control_excess,
            "grid": list(self.grid_resolution),
            "grid_spacing": list(self.grid_spacing),
            "scanned_points": self.scanned_points,
            "verdict": self.verdict,
            "bounds": self.bounds.to_json() if self.bounds is not None else None,
        }


def perturbation_bound(bounds: BoundsSet, spec: SystemSpec) -> float:
    """dbar = min(beta (alpha Delta + eps), diam U)."""
    return min(bounds.beta * (bounds.alpha * spec.delta + spec.epsilon), spec.control_set.diameter())


def margin(bounds: BoundsSet, spec: SystemSpec) -> tuple[float, float]:
    """(dbar, m) with m = gamma * dbar."""
    dbar = perturbation_bound(bounds, spec)
    return dbar, bounds.gamma * dbar


def goal_thresholds(bounds: BoundsSet, spec: SystemSpec) -> GoalThresholds:
    t1 = bounds.xi * spec.epsilon
    return GoalThresholds(t1=t1, t2=2.0 * t1, t_hat=bounds.xi * bounds.alpha * spec.delta + 2.0 * t1)


def c_hat_threshold(bounds: BoundsSet, spec: SystemSpec) -> float:
    """Level above which h_C defines the expanded safe set."""
    return -margin(bounds, spec)[1] / spec.lam


@lru_cache(maxsize=64)
def _lie_expr(spec: SystemSpec):
    """Closed-loop Lie derivative of h_C as one expression."""
    lf, lg = spec.lie_terms
    acc = lf
    for lgj, kj in zip(lg, spec.k):
        acc = ex.add(acc, ex.mul(lgj, kj))
    return acc


def residual_expr(spec: SystemSpec, m: float):
    """L_f h_C + L_g h_C k - lam h_C - m."""
    body = ex.sub(_lie_expr(spec), ex.mul(ex.Constant(spec.lam), spec.h_C))
    return ex.sub(body, ex.Constant(float(m)))


def residual(spec: SystemSpec, m: float, x) -> float:
    return ex.evaluate(residual_expr(spec, m), dict(zip(spec.state_names, x)))


def _admissibility(spec: SystemSpec, pts: np.ndarray, in_d: np.ndarray):
    """(admissible, worst point, max excess) of k over the D grid points."""
    p = pts[in_d]
    if len(p) == 0:
        return True, None, 0.0
    cols = columns(spec, p)
    u = np.stack([ex.evaluate_array(e, cols, len(p)) for e in spec.k], axis=1)
    cs = spec.control_set
    if isinstance(cs, Ball):
        excess = np.linalg.norm(u, axis=1) - cs.ubar
    else:
        lo, hi = np.array(cs.lower), np.array(cs.upper)
        excess = np.maximum(lo - u, u - hi).max(axis=1)
    worst = int(np.argmax(excess))
    ok = bool(excess[worst] <= 0)
    return ok, (None if ok else tuple(float(v) for v in p[worst])), float(max(excess[worst], 0.0))


def scan_condition(
    spec: SystemSpec,
    bounds: BoundsSet,
    grid: int | tuple | None = None,
) -> CertReport:
    """Evaluate the residual on every grid point of C \\ G_hat and decide a verdict."""
    if grid is None:
        grid = DEFAULT_SCAN_RESOLUTION.get(spec.n, max(5, int(round(2e5 ** (1.0 / spec.n)))))
    pts, res = grid_points(spec, grid)
    if len(pts) == 0:
        raise ValueError("empty grid")
    spacing = tuple((hi - lo) / (r - 1) for lo, hi, r in zip(spec.domain_lower, spec.domain_upper, res))
    dbar, m = margin(bounds, spec)
    th = goal_thresholds(bounds, spec)
    rexpr = residual_expr(spec, m)

    def chunk(a, b):
        p = pts[a:b]
        cols = columns(spec, p)
        hd = ex.evaluate_array(spec.h_D, cols, len(p))
        hc = ex.evaluate_array(spec.h_C, cols, len(p))
        hg = ex.evaluate_array(spec.h_G, cols, len(p))
        in_d = hd > 0
        in_c = in_d & (hc > 0)
        region = in_c & (hg <= th.t_hat)
        vals = np.full(len(p), np.inf)
        if region.any():
            vals[region] = ex.evaluate_array(rexpr, columns(spec, p[region]), int(region.sum()))
        return in_d, region, vals, bool((in_c & (hg > th.t_hat)).any())

    parts = map_chunks(chunk, len(pts))
    in_d = np.concatenate([p[0] for p in parts])
    region = np.concatenate([p[1] for p in parts])
    vals = np.concatenate([p[2] for p in parts])
    ghat_nonempty = any(p[3] for p in parts)
    admissible, bad_u, excess = _admissibility(spec, pts, in_d)

    scanned = int(region.sum())
    if scanned:
        idx = int(np.argmin(vals))  # first occurrence = lexicographically smallest grid index
        min_res = float(vals[idx])
        witness = tuple(float(v) for v in pts[idx])
    else:
        min_res, witness = None, None

    if not admissible or not ghat_nonempty:
        verdict = FAIL
    elif not scanned:
        verdict = INCONCLUSIVE
    else:
        verdict = PASS if min_res >= 0 else FAIL

    return CertReport(
        dbar=dbar,
        margin=m,
        thresholds=th,
        c_hat_threshold=-m / spec.lam,
        min_residual=min_res,
        witness=witness,
        ghat_nonempty=ghat_nonempty,
        admissible=admissible,
        grid_resolution=res,
        grid_spacing=spacing,
        scanned_points=scanned,
        verdict=verdict,
        inadmissible_witness=bad_u,
        max_control_excess=excess,
        bounds=bounds,
    )
