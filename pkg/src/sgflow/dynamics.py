"""Advection of the dual measure by ``U = J (H(X) - grad P*)`` with a midpoint scheme."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateCell, NonConvergence, SupportViolation
from .measure import DiscreteMeasure, PhysicalDomain, support_bound
from .transport import SolveInfo, cell_centroid_map, solve_weights

log = logging.getLogger(__name__)

__all__ = [
    "J",
    "CutoffProfile",
    "cutoff_H",
    "RunOptions",
    "Snapshot",
    "FlowState",
    "initial_state",
    "dual_velocity",
    "mollified_velocity",
    "bump",
    "step",
    "run",
    "inverse_flow",
    "default_dt",
]


def J(v) -> np.ndarray:
    """Quarter turn ``(a, b) -> (-b, a)``."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


@dataclass(frozen=True)
class CutoffProfile:
    """``rho = 1`` on ``[0, R]``, ``0`` beyond ``R + width``, a C1 smoothstep in between."""

    R: float
    width: float = 1.0

    def rho(self, s) -> np.ndarray:
        u = np.clip((np.abs(np.asarray(s, dtype=float)) - self.R) / self.width, 0.0, 1.0)
        return 1.0 - u * u * (3.0 - 2.0 * u)


def cutoff_H(X, prof: CutoffProfile) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    return prof.rho(X) * X


def bump(r, radius) -> np.ndarray:
    """Unnormalized C2 bump ``(1 - (r/radius)^2)^3`` supported on ``r < radius``."""
    q = np.clip(1.0 - (np.asarray(r, dtype=float) / radius) ** 2, 0.0, None)
    return q**3


def default_dt(S, R_T) -> float:
    return 1e-2 * min(1.0, 1.0 / (S + R_T + 1.0))


@dataclass(frozen=True)
class RunOptions:
    tol: float = 1e-3
    max_iter: int = 200
    save_stride: int = 1
    velocity: str = "standard"  # standard | mollified | zero
    mollify_m: float | None = None
    reverse: bool = False
    cutoff: bool = True
    workers: int = 1
    density: np.ndarray | None = field(default=None, repr=False)  # weighted quadrature (shallow water)

    def __post_init__(self):
        if self.velocity not in ("standard", "mollified", "zero"):
            raise ValueError(f"unknown velocity model {self.velocity!r}")
        if self.velocity == "mollified" and not (self.mollify_m and self.mollify_m >= 1):
            raise ValueError("mollified velocity needs mollify_m >= 1")
        if self.tol <= 0 or self.max_iter < 1 or self.save_stride < 1:
            raise ValueError("tol, max_iter and save_stride must be positive")


@dataclass(frozen=True)
class Snapshot:
    t: float
    points: np.ndarray
    psi: np.ndarray
    centroids: np.ndarray


@dataclass
class FlowState:
    """Particles, weights and centroids at time ``t`` plus the saved trajectory."""

    domain: PhysicalDomain
    t: float
    points: np.ndarray
    masses: np.ndarray
    psi: np.ndarray
    centroids: np.ndarray
    R_T: float
    profile: CutoffProfile
    options: RunOptions = field(default_factory=RunOptions)
    history: list = field(default_factory=list)
    stats: dict = field(default_factory=lambda: {"solves": 0, "newton_iterations": 0, "max_mass_error": 0.0, "max_speed": 0.0})

    @property
    def measure(self) -> DiscreteMeasure:
        return DiscreteMeasure(self.points, self.masses)

    def snapshot(self) -> Snapshot:
        return Snapshot(self.t, self.points.copy(), self.psi.copy(), self.centroids.copy())

    def saved_times(self):
        return np.array([s.t for s in self.history])

    def at(self, t) -> Snapshot:
        times = self.saved_times()
        k = int(np.argmin(np.abs(times - t))) if len(times) else -1
        if k < 0 or abs(times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t} not saved")
        return self.history[k]

    def speed_bound(self) -> float:
        return self.domain.S + self.R_T + 1.0

    def support_slack(self, dt) -> float:
        return 10.0 * dt * self.speed_bound()

    def to_csv(self, path):
        """Trajectory rows ``t, i, X1, X2, c1, c2, psi``."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "i", "X1", "X2", "c1", "c2", "psi"])
            for s in self.history:
                for i in range(len(s.psi)):
                    w.writerow([repr(float(s.t)), i, repr(float(s.points[i, 0])), repr(float(s.points[i, 1])),
                                repr(float(s.centroids[i, 0])), repr(float(s.centroids[i, 1])), repr(float(s.psi[i]))])


def _solve(domain, points, masses, psi0, options, context):
    mu = DiscreteMeasure(points, masses)
    try:
        psi, tess, info = solve_weights(domain, mu, tol=options.tol, max_iter=options.max_iter, psi0=psi0,
                                        density=options.density, workers=options.workers, return_info=True)
    except NonConvergence as exc:
        raise NonConvergence(f"{context}: {exc}", exc.iterations, exc.residual, exc.partial) from exc
    except DegenerateCell as exc:
        raise type(exc)(f"{context}: {exc}", exc.index) from exc
    return psi, cell_centroid_map(tess), info


def _record(stats, info: SolveInfo):
    stats["solves"] += 1
    stats["newton_iterations"] += info.iterations
    stats["max_mass_error"] = max(stats["max_mass_error"], info.max_error)


def initial_state(alpha0: DiscreteMeasure, domain: PhysicalDomain, T: float, options: RunOptions | None = None) -> FlowState:
    options = options or RunOptions()
    R_T = support_bound(alpha0.R0, domain.S, T)
    psi, cent, info = _solve(domain, alpha0.points, alpha0.masses, None, options, "t=0")
    state = FlowState(domain, 0.0, np.array(alpha0.points), np.array(alpha0.masses), psi, cent, R_T,
                      CutoffProfile(R_T), options)
    _record(state.stats, info)
    state.history.append(state.snapshot())
    return state


def _velocity(points, masses, centroids, profile, options) -> np.ndarray:
    if options.velocity == "zero":
        return np.zeros_like(points)
    H = cutoff_H(points, profile) if options.cutoff else points
    if options.velocity == "mollified":
        c = _mollified_centroids(points, masses, centroids, options.mollify_m)
    else:
        c = centroids
    U = J(H - c)
    return -U if options.reverse else U


def _mollified_centroids(points, masses, centroids, m):
    radius = 1.0 / m
    tree = cKDTree(points)
    out = np.empty_like(centroids)
    for i, nbrs in enumerate(tree.query_ball_point(points, radius)):
        if len(nbrs) == 1:
            out[i] = centroids[i]
            continue
        nbrs = np.sort(np.asarray(nbrs, dtype=int))
        w = masses[nbrs] * bump(np.hypot(*(points[nbrs] - points[i]).T), radius)
        out[i] = (w @ centroids[nbrs]) / w.sum()
    return out


def dual_velocity(state: FlowState, i=None) -> np.ndarray:
    """``J(H(X_i) - c_i)``; all particles when ``i`` is None."""
    U = _velocity(state.points, state.masses, state.centroids, state.profile, replace(state.options, velocity="standard"))
    return U if i is None else U[i]


def mollified_velocity(state: FlowState, m, i=None) -> np.ndarray:
    """Velocity with ``c_i`` replaced by a bump-weighted average over particles within ``1/m``."""
    U = _velocity(state.points, state.masses, state.centroids, state.profile,
                  replace(state.options, velocity="mollified", mollify_m=m))
    return U if i is None else U[i]


def step(state: FlowState, dt: float) -> FlowState:
    """One midpoint step with a transport solve at the midpoint and at the new positions."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    opt = state.options
    U0 = _velocity(state.points, state.masses, state.centroids, state.profile, opt)
    mid = state.points + 0.5 * dt * U0
    psi_mid, c_mid, info = _solve(state.domain, mid, state.masses, state.psi, opt, f"midpoint of step at t={state.t:.6g}")
    _record(state.stats, info)
    U_mid = _velocity(mid, state.masses, c_mid, state.profile, opt)
    new = state.points + dt * U_mid
    psi, cent, info = _solve(state.domain, new, state.masses, psi_mid, opt, f"step to t={state.t + dt:.6g}")
    _record(state.stats, info)
    speed = float(max(np.max(np.hypot(*U0.T)), np.max(np.hypot(*U_mid.T))))
    state.stats["max_speed"] = max(state.stats["max_speed"], speed)
    return replace(state, t=state.t + dt, points=new, psi=psi, centroids=cent)


def run(alpha0: DiscreteMeasure, T: float, dt: float, domain: PhysicalDomain, options: RunOptions | None = None,
        state: FlowState | None = None) -> FlowState:
    """Integrate to time ``T`` saving every ``save_stride`` steps (and the final state).

    Passing ``state`` continues from it instead of solving the initial problem.
    The returned state carries the full history; support and speed bounds are
    checked at every step and raise :class:`SupportViolation` when broken.
    """
    if T < 0 or dt <= 0:
        raise ValueError("need T >= 0 and dt > 0")
    if state is None:
        state = initial_state(alpha0, domain, T, options)
    elif options is not None:
        state = replace(state, options=options)
    n_steps = int(math.ceil(T / dt - 1e-9))
    t0 = state.t
    limit = state.R_T + state.support_slack(dt)
    for k in range(1, n_steps + 1):
        h = min(dt, t0 + T - state.t) if k == n_steps else dt
        state = step(state, h)
        if k == n_steps:
            state.t = t0 + T
        radius = float(np.max(np.hypot(*state.points.T)))
        if radius > limit:
            raise SupportViolation(f"particle at radius {radius:.6g} beyond {limit:.6g} at t={state.t:.6g}")
        if state.stats["max_speed"] > state.speed_bound() * (1 + 1e-12):
            raise SupportViolation(f"speed {state.stats['max_speed']:.6g} exceeds bound {state.speed_bound():.6g}")
        if k % state.options.save_stride == 0 or k == n_steps:
            state.history.append(state.snapshot())
    return state


def inverse_flow(state: FlowState, t) -> tuple[np.ndarray, np.ndarray]:
    """Index map of the inverse flow at a saved time and the positions it pulls back from."""
    snap = state.at(t)
    return np.arange(len(snap.points)), snap.points.copy()
