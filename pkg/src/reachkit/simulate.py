"""Closed-loop, sampled-data (ZOH) and perturbed simulation with a reach-avoid monitor.

In the sampled-data loop the plant state is only observed at t_i = i * Delta,
through a measurement x_hat_i with ||x_hat_i - x_i|| <= eps.  The control
clamp(k(x_hat_i)) is held over [t_i, t_{i+1}) and integrated with RK4 at
dt = Delta / substeps.  Goal attainment is confirmed only from measured
states (h_G(x_hat_i) > xi * eps); safety is checked on exact states at every
substep.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable, Sequence

import numpy as np

from . import expr as ex
from ._parallel import thread_cap
from .bounds import BoundsSet, resolve_bounds
from .certify import GoalThresholds, goal_thresholds
from .model import SystemSpec

GOAL_CONFIRMED = "GoalConfirmed"
SAFETY_VIOLATED = "SafetyViolated"
INCONCLUSIVE = "Inconclusive"

NOISE_MODELS = ("ball", "surface", "none")
DEFAULT_SUBSTEPS = 10
SAMPLER_ATTEMPTS = 10**6


class SimulationError(RuntimeError):
    pass


class IntegrationError(SimulationError):
    def __init__(self, t: float, x):
        self.t = t
        super().__init__(f"non-finite state {tuple(x)} at t = {t:.9g}")


class PreconditionError(SimulationError):
    pass


# ---------------------------------------------------------------------------
# data types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    index: int
    t: float
    x: tuple
    xhat: tuple
    u: tuple


@dataclass(frozen=True)
class ReachAvoidOutcome:
    kind: str
    confirm_index: int | None = None
    confirm_time: float | None = None
    confirm_state: tuple | None = None
    confirm_measured: tuple | None = None
    h_G_exact_at_confirm: float | None = None
    violation_time: float | None = None
    violation_state: tuple | None = None
    measured_safety_violations: tuple = ()

    def to_json(self) -> dict:
        d = {
            "kind": self.kind,
            "confirm_index": self.confirm_index,
            "confirm_time": self.confirm_time,
            "confirm_state": _lst(self.confirm_state),
            "confirm_measured": _lst(self.confirm_measured),
            "h_G_exact_at_confirm": self.h_G_exact_at_confirm,
            "violation_time": self.violation_time,
            "violation_state": _lst(self.violation_state),
            "measured_safety_violations": list(self.measured_safety_violations),
        }
        return d


def _lst(v):
    return None if v is None else list(v)


@dataclass
class SampledTrajectory:
    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray
    samples: list
    outcome: ReachAvoidOutcome
    clamp_fired: bool
    seed: int | None
    dt: float
    delta: float | None = None
    epsilon: float = 0.0
    noise_model: str = "none"

    def sample_rows(self) -> dict:
        """Map substep row index -> Sample for rows that are sampling instants."""
        if self.delta is None or not self.samples:
            return {}
        per = int(round(self.delta / self.dt))
        return {s.index * per: s for s in self.samples if s.index * per < len(self.times)}

    def max_measurement_error(self) -> float:
        if not self.samples:
            return 0.0
        return max(math.dist(s.x, s.xhat) for s in self.samples)

    def summary(self) -> dict:
        return {
            "outcome": self.outcome.to_json(),
            "clamp_fired": self.clamp_fired,
            "seed": self.seed,
            "dt": self.dt,
            "delta": self.delta,
            "epsilon": self.epsilon,
            "noise_model": self.noise_model,
            "substeps": len(self.times),
            "samples": len(self.samples),
            "final_time": float(self.times[-1]) if len(self.times) else 0.0,
        }


# ---------------------------------------------------------------------------
# integration
# ---------------------------------------------------------------------------


def _rk4(rhs: Callable, x: tuple, dt: float) -> tuple:
    k1 = rhs(x)
    h = 0.5 * dt
    k2 = rhs(tuple(a + h * b for a, b in zip(x, k1)))
    k3 = rhs(tuple(a + h * b for a, b in zip(x, k2)))
    k4 = rhs(tuple(a + dt * b for a, b in zip(x, k3)))
    s = dt / 6.0
    return tuple(a + s * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(x, k1, k2, k3, k4))


def _check_finite(x, t):
    if not all(math.isfinite(v) for v in x):
        raise IntegrationError(t, x)


@lru_cache(maxsize=64)
def _affine_fn(spec: SystemSpec):
    """Compiled ``(x..., u...) -> f(x) + g(x) u``."""
    unames = [f"__u{j}" for j in range(spec.m)]
    exprs = []
    for i in range(spec.n):
        e = spec.f[i]
        for j in range(spec.m):
            e = ex.add(e, ex.mul(spec.g[i][j], ex.Variable(unames[j])))
        exprs.append(e)
    return ex.compile_vector(exprs, list(spec.state_names) + unames)


def rk4_step(spec: SystemSpec, x, u, dt: float, t: float = 0.0) -> tuple:
    """One classical RK4 step of x' = f(x) + g(x) u with u frozen."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    F = _affine_fn(spec)
    u = tuple(u)
    x1 = _rk4(lambda z: F(z + u), tuple(x), dt)
    _check_finite(x1, t + dt)
    return x1


def _closed_loop_rhs(spec: SystemSpec, d: tuple | None = None):
    F = _affine_fn(spec)
    kfn = spec._k_fn
    clamp = spec.control_set.clamp

    if d is None:
        return lambda z: F(z + clamp(kfn(z)))
    return lambda z: F(z + tuple(a + b for a, b in zip(clamp(kfn(z)), d)))


# ---------------------------------------------------------------------------
# measurement
# ---------------------------------------------------------------------------


def measure(x, epsilon: float, noise_model: str, rng: np.random.Generator) -> tuple:
    """Perturb ``x`` by at most ``epsilon`` (Euclidean) according to the noise model."""
    if noise_model not in NOISE_MODELS:
        raise ValueError(f"unknown noise model {noise_model!r}")
    x = tuple(float(v) for v in x)
    if epsilon == 0 or noise_model == "none":
        return x
    d = rng.standard_normal(len(x))
    nrm = float(np.linalg.norm(d))
    while nrm == 0.0:
        d = rng.standard_normal(len(x))
        nrm = float(np.linalg.norm(d))
    d = (d / nrm).tolist()
    r = epsilon if noise_model == "surface" else epsilon * float(rng.uniform())
    slack = 1e-16
    while True:
        xhat = tuple(a + r * b for a, b in zip(x, d))
        dist = math.dist(xhat, x)
        if dist <= epsilon:
            return xhat
        # float rounding pushed the point just outside the ball
        slack *= 2.0
        r *= (epsilon / dist) * (1.0 - slack)


# ---------------------------------------------------------------------------
# monitor
# ---------------------------------------------------------------------------


@dataclass
class Event:
    """A state observation; sampling instants also carry the measured state."""

    t: float
    x: tuple
    sample_index: int | None = None
    xhat: tuple | None = None


class Monitor:
    """Online reach-avoid monitor.

    Safety is judged on exact states; goal confirmation on measured states
    only, at the first sample with h_G(x_hat) > t1.  Measured-state safety
    is recorded but never changes the verdict.
    """

    def __init__(self, spec: SystemSpec, thresholds: GoalThresholds):
        self.spec = spec
        self.thresholds = thresholds
        self.outcome: ReachAvoidOutcome | None = None
        self.measured_violations: list[int] = []
        self._hc = spec._hc_fn
        self._hg = spec._hg_fn

    @property
    def done(self) -> bool:
        return self.outcome is not None

    def observe_state(self, t: float, x) -> ReachAvoidOutcome | None:
        if self.outcome is None and not self._hc(x)[0] > 0:
            self.outcome = ReachAvoidOutcome(
                SAFETY_VIOLATED,
                violation_time=t,
                violation_state=tuple(x),
                measured_safety_violations=tuple(self.measured_violations),
            )
        return self.outcome

    def observe_sample(self, i: int, t: float, x, xhat) -> ReachAvoidOutcome | None:
        if self.observe_state(t, x) is not None:
            return self.outcome
        if not self._hc(xhat)[0] > 0:
            self.measured_violations.append(i)
        if self._hg(xhat)[0] > self.thresholds.t1:
            self.outcome = ReachAvoidOutcome(
                GOAL_CONFIRMED,
                confirm_index=i,
                confirm_time=t,
                confirm_state=tuple(x),
                confirm_measured=tuple(xhat),
                h_G_exact_at_confirm=self._hg(x)[0],
                measured_safety_violations=tuple(self.measured_violations),
            )
        return self.outcome

    def observe(self, event: Event) -> ReachAvoidOutcome | None:
        if event.sample_index is None:
            return self.observe_state(event.t, event.x)
        return self.observe_sample(event.sample_index, event.t, event.x, event.xhat)

    def finish(self) -> ReachAvoidOutcome:
        if self.outcome is None:
            self.outcome = ReachAvoidOutcome(
                INCONCLUSIVE, measured_safety_violations=tuple(self.measured_violations)
            )
        return self.outcome


def monitor(stream: Iterable[Event], spec: SystemSpec, thresholds: GoalThresholds) -> ReachAvoidOutcome:
    """Run the monitor over an event stream; stops at the first decision."""
    mon = Monitor(spec, thresholds)
    for event in stream:
        if mon.observe(event) is not None:
            break
    return mon.finish()


# ---------------------------------------------------------------------------
# defaults
# ---------------------------------------------------------------------------


@lru_cache(maxsize=16)
def _cached_bounds(spec: SystemSpec) -> BoundsSet:
    return resolve_bounds(spec)


def default_thresholds(spec: SystemSpec, bounds: BoundsSet | None = None) -> GoalThresholds:
    return goal_thresholds(bounds or _cached_bounds(spec), spec)


def default_horizon(spec: SystemSpec, bounds: BoundsSet | None = None) -> float:
    """50 * diam(domain box) / alpha."""
    alpha = (bounds or _cached_bounds(spec)).alpha
    diam = math.dist(spec.domain_lower, spec.domain_upper)
    return 50.0 * diam / alpha if alpha > 0 else 50.0 * diam


def _require_in_c(spec: SystemSpec, x0):
    if len(x0) != spec.n:
        raise PreconditionError(f"initial state has {len(x0)} entries, expected {spec.n}")
    hd, hc, _ = spec._sets_fn(tuple(x0))
    if not (hd > 0 and hc > 0):
        raise PreconditionError(f"initial state {tuple(x0)} is not in C (h_C = {hc:.6g})")


def _check_box(spec: SystemSpec, x, t):
    for v, lo, hi in zip(x, spec.domain_lower, spec.domain_upper):
        if v < lo or v > hi:
            raise SimulationError(f"state {tuple(x)} left the domain box at t = {t:.9g}")


def _finish(times, states, controls, samples, mon, clamp_fired, seed, dt, **kw) -> SampledTrajectory:
    return SampledTrajectory(
        times=np.asarray(times, dtype=float),
        states=np.asarray(states, dtype=float),
        controls=np.asarray(controls, dtype=float),
        samples=samples,
        outcome=mon.finish(),
        clamp_fired=clamp_fired,
        seed=seed,
        dt=dt,
        **kw,
    )


# ---------------------------------------------------------------------------
# simulators
# ---------------------------------------------------------------------------


def simulate_closed_loop(
    spec: SystemSpec,
    x0: Sequence[float],
    T: float | None = None,
    dt: float = 1e-3,
    thresholds: GoalThresholds | None = None,
    stop_on_confirm: bool = True,
) -> SampledTrajectory:
    """Continuous feedback x' = f + g clamp(k(x)), k evaluated at every RK4 stage.

    Every integration step is treated as an exact observation, so the monitor
    confirms as soon as h_G(x(t)) > t1.
    """
    return _simulate_continuous(spec, x0, None, T, dt, thresholds, stop_on_confirm)


def _simulate_continuous(spec, x0, signal, T, dt, thresholds, stop_on_confirm, seed=None):
    _require_in_c(spec, x0)
    if not dt > 0:
        raise ValueError("dt must be positive")
    th = thresholds or default_thresholds(spec)
    T = default_horizon(spec) if T is None else T
    steps = int(math.ceil(T / dt - 1e-9))
    kfn, clamp = spec._k_fn, spec.control_set.clamp
    mon = Monitor(spec, th)
    x = tuple(float(v) for v in x0)
    times, states, controls = [], [], []
    clamp_fired = False
    for n in range(steps + 1):
        t = n * dt
        kx = kfn(x)
        u = clamp(kx)
        clamp_fired |= u != kx
        d = signal(t) if signal is not None else None
        times.append(t)
        states.append(x)
        controls.append(u if d is None else tuple(a + b for a, b in zip(u, d)))
        if mon.outcome is None:
            mon.observe_sample(n, t, x, x)
            if mon.outcome is not None and (stop_on_confirm or mon.outcome.kind == SAFETY_VIOLATED):
                break
        if n == steps:
            break
        x = _rk4(_closed_loop_rhs(spec, d), x, dt)
        _check_finite(x, t + dt)
        _check_box(spec, x, t + dt)
    return _finish(times, states, controls, [], mon, clamp_fired, seed, dt)


def simulate_sampled(
    spec: SystemSpec,
    x0: Sequence[float],
    T: float | None = None,
    substeps: int = DEFAULT_SUBSTEPS,
    noise_model: str = "ball",
    seed: int = 0,
    thresholds: GoalThresholds | None = None,
    record: bool = True,
) -> SampledTrajectory:
    """Zero-order-hold loop driven by measured states at t_i = i * Delta."""
    _require_in_c(spec, x0)
    if not spec.delta > 0:
        raise PreconditionError("sampled simulation needs delta > 0")
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if noise_model not in NOISE_MODELS:
        raise ValueError(f"unknown noise model {noise_model!r}")
    th = thresholds or default_thresholds(spec)
    T = default_horizon(spec) if T is None else T
    delta, eps = spec.delta, spec.epsilon
    dt = delta / substeps
    rng = np.random.default_rng(seed)
    F = _affine_fn(spec)
    kfn, clamp = spec._k_fn, spec.control_set.clamp
    mon = Monitor(spec, th)

    x = tuple(float(v) for v in x0)
    times, states, controls, samples = [], [], [], []
    clamp_fired = False
    n_samples = int(math.floor(T / delta + 1e-9))
    for i in range(n_samples + 1):
        t_i = i * delta
        xhat = measure(x, eps, noise_model, rng)
        kx = kfn(xhat)
        u = clamp(kx)
        clamp_fired |= u != kx
        samples.append(Sample(i, t_i, x, xhat, u))
        if record:
            times.append(t_i)
            states.append(x)
            controls.append(u)
        if mon.observe_sample(i, t_i, x, xhat) is not None or i == n_samples:
            break
        rhs = lambda z, u=u: F(z + u)  # noqa: E731
        base = i * substeps
        for j in range(1, substeps + 1):
            x = _rk4(rhs, x, dt)
            t = (base + j) * dt
            _check_finite(x, t)
            if j < substeps:
                if record:
                    times.append(t)
                    states.append(x)
                    controls.append(u)
                if mon.observe_state(t, x) is not None:
                    break
        if mon.done:
            break
    if not record:
        times, states, controls = [samples[-1].t], [samples[-1].x], [samples[-1].u]
    return _finish(
        times, states, controls, samples, mon, clamp_fired, seed, dt,
        delta=delta, epsilon=eps, noise_model=noise_model,
    )


def max_deviation(traj: SampledTrajectory, reference: SampledTrajectory, until: float | None = None) -> float:
    """Largest Euclidean gap between ``traj`` and ``reference`` (linearly interpolated) up to ``until``.

    ``until`` defaults to the confirmation time of ``traj`` when it confirmed,
    otherwise to its last recorded time.
    """
    if until is None:
        o = traj.outcome
        until = o.confirm_time if o.kind == GOAL_CONFIRMED else float(traj.times[-1])
    if until > reference.times[-1] + 1e-12:
        raise ValueError("reference trajectory is shorter than the comparison window")
    mask = traj.times <= until + 1e-12
    ref = np.stack(
        [np.interp(traj.times[mask], reference.times, reference.states[:, j]) for j in range(traj.states.shape[1])],
        axis=1,
    )
    return float(np.max(np.linalg.norm(ref - traj.states[mask], axis=1)))


# ---------------------------------------------------------------------------
# perturbations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PerturbationSpec:
    """Bounded input perturbation d(t) with ||d(t)|| <= dbar.

    kind: "constant" (vector), "sinusoid" (amplitude, frequency per channel)
    or "random" (piecewise constant, new value every ``dwell`` time units).
    """

    dbar: float
    kind: str = "random"
    vector: tuple = ()
    amplitude: tuple = ()
    frequency: tuple = ()
    dwell: float = 0.05
    seed: int = 0

    def signal(self, m: int) -> Callable[[float], tuple]:
        if self.dbar < 0:
            raise ValueError("dbar must be non-negative")
        if self.kind == "constant":
            vec = tuple(self.vector) if self.vector else (0.0,) * m
            return lambda t: clip_norm(vec, self.dbar)
        if self.kind == "sinusoid":
            amp = _per_channel(self.amplitude, m, 1.0)
            freq = _per_channel(self.frequency, m, 1.0)
            return lambda t: clip_norm(
                tuple(a * math.sin(2.0 * math.pi * f * t) for a, f in zip(amp, freq)), self.dbar
            )
        if self.kind == "random":
            if not self.dwell > 0:
                raise ValueError("dwell must be positive")
            rng = np.random.default_rng(self.seed)
            values: list = []

            def sig(t: float) -> tuple:
                idx = int(math.floor(t / self.dwell + 1e-12))
                while len(values) <= idx:
                    values.append(clip_norm(tuple(rng.uniform(-self.dbar, self.dbar, m)), self.dbar))
                return values[idx]

            return sig
        raise ValueError(f"unknown perturbation kind {self.kind!r}")


def _per_channel(v, m, default):
    if not v:
        return (default,) * m
    v = tuple(v)
    return v * m if len(v) == 1 else v


def clip_norm(d, bound: float) -> tuple:
    d = tuple(float(c) for c in d)
    nrm = math.hypot(*d)
    if nrm <= bound:
        return d
    if bound == 0:
        return (0.0,) * len(d)
    s = bound / nrm
    while math.hypot(*(c * s for c in d)) > bound:
        s *= 1.0 - 1e-15
    return tuple(c * s for c in d)


def simulate_perturbed(
    spec: SystemSpec,
    x0: Sequence[float],
    pert: PerturbationSpec,
    T: float | None = None,
    dt: float = 1e-3,
    stop_on_confirm: bool = True,
) -> SampledTrajectory:
    """x' = f + g (clamp(k(x)) + d(t)); d held over each step, goal judged on exact states."""
    bnd = _cached_bounds(spec) if T is None else None
    th = GoalThresholds(0.0, 0.0, 0.0)
    traj = _simulate_continuous(
        spec, x0, pert.signal(spec.m), T if T is not None else default_horizon(spec, bnd),
        dt, th, stop_on_confirm, seed=pert.seed,
    )
    return traj


# ---------------------------------------------------------------------------
# batch
# ---------------------------------------------------------------------------


def run_seed(base_seed: int, i: int) -> int:
    """Seed of run ``i``, derived from the base seed and the run counter."""
    return int(np.random.SeedSequence([base_seed, i]).generate_state(1, dtype=np.uint32)[0])


def sample_initial_states(spec: SystemSpec, count: int, seed: int) -> list[tuple]:
    """Uniform samples from C by rejection from the domain box."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5A4D]))
    lo, hi = np.array(spec.domain_lower), np.array(spec.domain_upper)
    out: list[tuple] = []
    attempts = 0
    while len(out) < count:
        x = tuple(float(v) for v in rng.uniform(lo, hi))
        attempts += 1
        hd, hc, _ = spec._sets_fn(x)
        if hd > 0 and hc > 0:
            out.append(x)
            attempts = 0
        elif attempts >= SAMPLER_ATTEMPTS:
            raise SimulationError(f"no point of C found in {SAMPLER_ATTEMPTS} attempts")
    return out


def _batch_run(args):
    spec, x0, seed, T, substeps, noise_model, th = args
    traj = simulate_sampled(spec, x0, T, substeps, noise_model, seed, th, record=False)
    return traj.outcome, traj.clamp_fired


def batch(
    spec: SystemSpec,
    runs: int,
    base_seed: int = 0,
    T: float | None = None,
    substeps: int = DEFAULT_SUBSTEPS,
    noise_model: str = "ball",
    bounds: BoundsSet | None = None,
    initial_states: Sequence[Sequence[float]] | None = None,
    workers: int | None = None,
) -> dict:
    """Run ``runs`` seeded sampled-data simulations from states drawn uniformly in C."""
    if runs < 1:
        raise ValueError("runs must be >= 1")
    bnd = bounds or _cached_bounds(spec)
    th = goal_thresholds(bnd, spec)
    T = default_horizon(spec, bnd) if T is None else T
    x0s = list(initial_states) if initial_states is not None else sample_initial_states(spec, runs, base_seed)
    if len(x0s) != runs:
        raise ValueError("initial_states must have one entry per run")
    jobs = [(spec, tuple(x0), run_seed(base_seed, i), T, substeps, noise_model, th) for i, x0 in enumerate(x0s)]
    workers = min(workers or thread_cap(), runs)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_batch_run, jobs, chunksize=max(1, runs // (4 * workers))))
    else:
        results = [_batch_run(j) for j in jobs]

    kinds = [o.kind for o, _ in results]
    hits = np.array([o.confirm_time for o, _ in results if o.kind == GOAL_CONFIRMED], dtype=float)
    quantiles = None
    if len(hits):
        qs = (0.0, 0.25, 0.5, 0.75, 1.0)
        quantiles = {str(q): float(v) for q, v in zip(qs, np.quantile(hits, qs))}
    unsound = sum(
        1 for o, _ in results if o.kind == GOAL_CONFIRMED and not o.h_G_exact_at_confirm > 0
    )
    return {
        "spec": spec.name,
        "runs": runs,
        "base_seed": base_seed,
        "horizon": T,
        "substeps": substeps,
        "noise_model": noise_model,
        "thresholds": th.to_json(),
        "confirmed": kinds.count(GOAL_CONFIRMED),
        "violated": kinds.count(SAFETY_VIOLATED),
        "inconclusive": kinds.count(INCONCLUSIVE),
        "hitting_time_quantiles": quantiles,
        "clamp_fired_runs": sum(1 for _, c in results if c),
        "measured_safety_violation_runs": sum(1 for o, _ in results if o.measured_safety_violations),
        "unsound_confirmations": unsound,
        "per_run": [
            {
                "run": i,
                "seed": j[2],
                "x0": list(j[1]),
                "kind": o.kind,
                "confirm_time": o.confirm_time,
                "violation_time": o.violation_time,
            }
            for i, (j, (o, _)) in enumerate(zip(jobs, results))
        ],
    }


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def trajectory_csv(traj: SampledTrajectory, spec: SystemSpec, out=None) -> str | None:
    """Write one row per substep: t, x_*, u_*, h_C, h_G, is_sample, xhat_*, confirmed."""
    buf = out if out is not None else io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n, m = spec.n, spec.m
    w.writerow(
        ["t", *[f"x_{i + 1}" for i in range(n)], *[f"u_{j + 1}" for j in range(m)], "h_C", "h_G", "is_sample",
         *[f"xhat_{i + 1}" for i in range(n)], "confirmed"]
    )
    rows = traj.sample_rows()
    confirm_t = traj.outcome.confirm_time if traj.outcome.kind == GOAL_CONFIRMED else None
    for r, (t, x, u) in enumerate(zip(traj.times, traj.states, traj.controls)):
        xt = tuple(float(v) for v in x)
        _, hc, hg = spec._sets_fn(xt)
        s = rows.get(r)
        w.writerow(
            [repr(float(t)), *[repr(v) for v in xt], *[repr(float(v)) for v in u], repr(hc), repr(hg),
             1 if s is not None else 0,
             *([repr(v) for v in s.xhat] if s is not None else [""] * n),
             1 if confirm_t is not None and t >= confirm_t else 0]
        )
    if out is None:
        return buf.getvalue()
    return None
