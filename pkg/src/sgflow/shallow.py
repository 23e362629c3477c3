"""Shallow-water variant: height-weighted transport with ``h = P - |x|^2 / 2``.

Cell masses are integrals of the height ``h`` instead of area.  The height
and the potential are coupled; :func:`sw_consistency_iterate` realizes the
coupling by a damped fixed point (solve the weighted transport problem,
read ``h`` back from the potential, clamp at zero and restore the mass).
The result always carries an honest convergence status.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import brentq

from .dynamics import FlowState, RunOptions, initial_state, step
from .errors import DegenerateCell, NonConvergence, SupportViolation, ZeroMassRegion
from .measure import DiscreteMeasure, PhysicalDomain, fsum
from .physical import measure_preservation_stat, reconstruct_F
from .transport import solve_weights, tessellate

log = logging.getLogger(__name__)

__all__ = [
    "HeightField",
    "perp",
    "sw_dual_velocity",
    "solve_weighted_ot",
    "ConsistencyResult",
    "sw_consistency_iterate",
    "sw_run",
    "sw_reconstruct_F",
    "weighted_pushforward_error",
    "weighted_measure_preservation",
]


@dataclass
class HeightField:
    domain: PhysicalDomain
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.values.shape != (len(self.domain.nodes),):
            raise ValueError("one height per quadrature node required")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("heights must be finite and nonnegative")

    @classmethod
    def constant(cls, domain, value=1.0):
        return cls(domain, np.full(len(domain.nodes), float(value)))

    @classmethod
    def from_function(cls, domain, fn):
        return cls(domain, fn(domain.nodes))

    def mass(self) -> float:
        return fsum(self.domain.weights * self.values)

    def potential(self) -> np.ndarray:
        """``P = h + |x|^2 / 2`` at the nodes."""
        x = self.domain.nodes
        return self.values + 0.5 * np.sum(x * x, axis=1)

    def convexity_defect(self) -> float:
        """Largest negative second difference of ``P`` along grid axes and diagonals (0 if convex)."""
        d = self.domain
        grid = np.full((d.n_q, d.n_q), np.nan)
        _, inside = d._lattice
        grid.ravel()[inside] = self.potential()
        worst = 0.0
        for di, dj in [(1, 0), (0, 1), (1, 1), (1, -1)]:
            c = grid[1:-1, 1:-1]
            p = grid[1 + di : d.n_q - 1 + di, 1 + dj : d.n_q - 1 + dj]
            m = grid[1 - di : d.n_q - 1 - di, 1 - dj : d.n_q - 1 - dj]
            with np.errstate(invalid="ignore"):
                second = p + m - 2 * c
            second = second[np.isfinite(second)]
            if second.size:
                worst = min(worst, float(second.min()))
        return -worst

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "h"])
            for p, v in zip(self.domain.nodes, self.values):
                w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(v))])


def perp(v) -> np.ndarray:
    """``(a, b) -> (-b, a)``."""
    v = np.asarray(v, dtype=float)
    return np.stack([-v[..., 1], v[..., 0]], axis=-1)


def sw_dual_velocity(state: FlowState, i=None) -> np.ndarray:
    U = perp(state.points - state.centroids)
    return U if i is None else U[i]


def solve_weighted_ot(domain: PhysicalDomain, h: HeightField, mu: DiscreteMeasure, tol=1e-3, max_iter=200,
                      psi0=None, workers=1, return_info=False):
    """Weights whose ``h``-weighted cell masses match the particle masses."""
    mass = h.mass()
    if mass <= 0:
        raise ZeroMassRegion("height field carries no mass")
    try:
        return solve_weights(domain, mu, tol=tol, max_iter=max_iter, psi0=psi0, density=h.values,
                             workers=workers, return_info=return_info)
    except DegenerateCell as exc:
        raise ZeroMassRegion(f"height vanishes on the cell of particle {exc.index}", exc.index) from exc


def _height_from_potential(domain, mu, psi, mass):
    """``clamp(P - |x|^2/2 + C, 0)`` with ``C`` restoring ``mass``; returns (h, C, clamped fraction)."""
    x = domain.nodes
    P = np.max(x @ mu.points.T - psi, axis=1)
    base = P - 0.5 * np.sum(x * x, axis=1)
    w = domain.weights

    def excess(C):
        return fsum(w * np.maximum(base + C, 0.0)) - mass

    lo = -float(base.max())
    hi = lo + mass / fsum(w) + (float(base.max()) - float(base.min())) + 1.0
    while excess(hi) < 0:
        hi += hi - lo
    C = brentq(excess, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    h = np.maximum(base + C, 0.0)
    return h, C, float(np.mean(base + C < 0))


@dataclass
class ConsistencyResult:
    height: HeightField
    psi: np.ndarray | None
    converged: bool
    status: str
    iterations: int
    changes: list = field(default_factory=list)  # relative L1 change of h per outer step
    renormalization: list = field(default_factory=list)  # multiplicative mass correction per outer step
    clamped: list = field(default_factory=list)  # fraction of nodes clamped to zero per outer step

    @property
    def monotone_start(self) -> bool:
        head = self.changes[:5]
        return all(b <= a for a, b in zip(head, head[1:]))

    def to_dict(self):
        return {
            "converged": self.converged,
            "status": self.status,
            "iterations": self.iterations,
            "changes": self.changes,
            "renormalization": self.renormalization,
            "clamped": self.clamped,
            "monotone_first_steps": self.monotone_start,
            "scheme": "damped fixed point (one admissible discrete realization of the height coupling)",
        }


def sw_consistency_iterate(mu: DiscreteMeasure, domain: PhysicalDomain, h0: HeightField, damping=0.5,
                           max_outer=20, tol=1e-3, ot_tol=1e-6, psi0=None, workers=1) -> ConsistencyResult:
    """Damped fixed point between weighted transport and ``h = P - |x|^2/2``.

    Never raises on failure to converge: the last iterate is returned with
    ``converged=False`` and a status string naming the reason.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    h = HeightField(domain, h0.values.copy())
    mass = h.mass()
    psi = psi0
    result = ConsistencyResult(h, None, False, "not started", 0)
    for k in range(1, max_outer + 1):
        try:
            psi = solve_weighted_ot(domain, h, mu, tol=ot_tol, psi0=psi, workers=workers)
        except (NonConvergence, ZeroMassRegion) as exc:
            result.status = f"transport solve failed at outer step {k}: {exc}"
            result.iterations = k - 1
            return result
        target, _, clamped = _height_from_potential(domain, mu, psi, mass)
        new = (1.0 - damping) * h.values + damping * target
        factor = mass / fsum(domain.weights * new)
        new = new * factor
        change = fsum(domain.weights * np.abs(new - h.values)) / mass
        result.changes.append(change)
        result.renormalization.append(factor)
        result.clamped.append(clamped)
        log.debug("consistency step %d: change %.3e, clamped %.3f, factor %.12f", k, change, clamped, factor)
        h = HeightField(domain, new)
        result.height, result.psi, result.iterations = h, psi, k
        if change <= tol:
            result.converged = True
            result.status = f"converged in {k} outer steps"
            return result
    result.status = f"not converged after {max_outer} outer steps (last change {result.changes[-1]:.3e})"
    return result


def sw_run(alpha0: DiscreteMeasure, h0: HeightField, domain: PhysicalDomain, T, dt, options: RunOptions | None = None,
           outer_per_step=0, damping=0.5):
    """Midpoint integration with ``h``-weighted transport.

    ``outer_per_step`` consistency iterations update ``h`` after each step
    (0 keeps ``h`` frozen).  Returns the flow state and the list of
    ``(t, HeightField)`` at saved times.
    """
    options = replace(options or RunOptions(), density=h0.values, cutoff=False)
    state = initial_state(alpha0, domain, T, options)
    heights = [(0.0, h0)]
    h = h0
    n_steps = int(math.ceil(T / dt - 1e-9))
    limit = state.R_T + state.support_slack(dt)
    for k in range(1, n_steps + 1):
        state = step(state, min(dt, T - state.t) if k == n_steps else dt)
        if k == n_steps:
            state.t = T
        if outer_per_step:
            res = sw_consistency_iterate(state.measure, domain, h, damping, outer_per_step, psi0=state.psi,
                                         ot_tol=options.tol, workers=options.workers)
            h = res.height
            state = replace(state, options=replace(state.options, density=h.values))
        if float(np.max(np.hypot(*state.points.T))) > limit:
            raise SupportViolation(f"particles left the support bound at t={state.t:.6g}")
        if k % options.save_stride == 0 or k == n_steps:
            state.history.append(state.snapshot())
            heights.append((state.t, h))
    return state, heights


def sw_reconstruct_F(run: FlowState, t, grid: PhysicalDomain | None = None):
    """Same composition as the incompressible case; cells come from the weighted solves."""
    return reconstruct_F(run, t, grid)


def weighted_pushforward_error(domain: PhysicalDomain, h: HeightField, mu: DiscreteMeasure, psi) -> float:
    """``sum_i |int_{cell_i} h - m_i| / sum m``: the pushforward of ``h`` under ``grad P`` against ``mu``."""
    tess = tessellate(domain, mu, psi, density=h.values)
    scale = h.mass() / fsum(mu.masses)
    return fsum(np.abs(tess.cell_masses - mu.masses * scale)) / h.mass()


def weighted_measure_preservation(run: FlowState, t, h0: HeightField, ht: HeightField, bins=5) -> float:
    """Binned check of ``F_t # h_0 = h_t``."""
    return measure_preservation_stat(reconstruct_F(run, t), bins, source_weight=h0.values, target_weight=ht.values)
