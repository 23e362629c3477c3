"""Lagrangian flow in physical space rebuilt from dual trajectories.

``F_t = grad P*_t o Phi_t o grad P_0``: a node ``x`` belongs to the initial
cell of particle ``i``, which is followed to time ``t`` and mapped back to
physical space through the centroid of its cell there.  The map is
piecewise constant on initial cells.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .dynamics import FlowState, J, Snapshot
from .measure import GridField, PhysicalDomain, fsum
from .transport import assign_points

__all__ = [
    "PhysicalFlowField",
    "reconstruct_F",
    "inverse_F",
    "compose_inverse",
    "measure_preservation_stat",
    "pushforward_bins",
    "mean_cell_diameter",
    "z_field",
    "TestFunctions",
    "z_residual",
    "fit_rotation_rate",
]


@dataclass
class PhysicalFlowField:
    grid: PhysicalDomain
    values: np.ndarray  # (M, 2) image of each node
    cell_index: np.ndarray  # particle whose cell holds the node at the source time
    t: float

    def as_grid_field(self) -> GridField:
        return GridField(self.grid, self.values)

    def to_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "Fx", "Fy", "cell_index"])
            for p, v, i in zip(self.grid.nodes, self.values, self.cell_index):
                w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(v[0])), repr(float(v[1])), int(i)])


def _cells(run: FlowState, snap: Snapshot, grid: PhysicalDomain, points=None):
    pts = grid.nodes if points is None else points
    return assign_points(run.domain, snap.points, snap.psi, pts, workers=run.options.workers)


def _initial_cells(run: FlowState, grid: PhysicalDomain):
    # the time-0 assignment is reused by every reconstruction on the same grid
    cache = run.__dict__.setdefault("_initial_cell_cache", {})
    key = (grid, id(run.history[0]))
    if key not in cache:
        cache[key] = _cells(run, run.history[0], grid)
    return cache[key]


def reconstruct_F(run: FlowState, t, grid: PhysicalDomain | None = None) -> PhysicalFlowField:
    grid = run.domain if grid is None else grid
    idx = _initial_cells(run, grid)
    return PhysicalFlowField(grid, run.at(t).centroids[idx], idx, float(t))


def inverse_F(run: FlowState, t, grid: PhysicalDomain | None = None) -> PhysicalFlowField:
    """``F*_t``: cell at time ``t``, then the same particle's centroid at time 0."""
    grid = run.domain if grid is None else grid
    idx = _cells(run, run.at(t), grid)
    return PhysicalFlowField(grid, run.history[0].centroids[idx], idx, float(t))


def compose_inverse(run: FlowState, t, grid: PhysicalDomain | None = None) -> GridField:
    """Samples of ``F*_t o F_t`` on the grid nodes."""
    F = reconstruct_F(run, t, grid)
    idx = _cells(run, run.at(t), F.grid, points=F.values)
    return GridField(F.grid, run.history[0].centroids[idx])


def mean_cell_diameter(run: FlowState, t=0.0, grid: PhysicalDomain | None = None) -> float:
    """Mean over cells of twice the largest node distance to the cell centroid."""
    grid = run.domain if grid is None else grid
    snap = run.at(t)
    idx = _cells(run, snap, grid)
    d = np.hypot(*(grid.nodes - snap.centroids[idx]).T)
    radius = np.zeros(len(snap.points))
    np.maximum.at(radius, idx, d)
    occupied = np.bincount(idx, minlength=len(radius)) > 0
    return float(2.0 * radius[occupied].mean())


def _bin_index(points, S, bins):
    k = np.floor((np.asarray(points) + S) / (2.0 * S) * bins).astype(int)
    k = np.clip(k, 0, bins - 1)
    return k[:, 0] * bins + k[:, 1]


def pushforward_bins(grid: PhysicalDomain, images, weights, bins=5) -> np.ndarray:
    """Mass of ``weights`` pushed to each of ``bins x bins`` boxes over ``[-S, S]^2``."""
    w = np.asarray(weights, dtype=float)
    return np.bincount(_bin_index(images, grid.S, bins), weights=w, minlength=bins * bins)


def measure_preservation_stat(F, bins=5, source_weight=None, target_weight=None) -> float:
    """Largest bin deviation between pushed-forward and reference mass, over the mean bin mass.

    ``F`` is a :class:`PhysicalFlowField` or a :class:`GridField` of images.
    Unweighted, the reference is Lebesgue measure on the domain.  For the
    weighted check pass ``source_weight`` (e.g. ``h_0``) and ``target_weight``
    (``h_t``).  Bins with no reference mass count towards the maximum but not
    the mean.
    """
    grid = F.grid if isinstance(F, PhysicalFlowField) else F.domain
    w_src = grid.weights if source_weight is None else grid.weights * np.asarray(source_weight, dtype=float)
    w_ref = w_src if target_weight is None else grid.weights * np.asarray(target_weight, dtype=float)
    pushed = pushforward_bins(grid, F.values, w_src, bins)
    ref = pushforward_bins(grid, grid.nodes, w_ref, bins)
    mean = fsum(ref) / max(int(np.count_nonzero(ref)), 1)
    return float(np.max(np.abs(pushed - ref)) / mean)


def z_field(run: FlowState, t, grid: PhysicalDomain | None = None) -> GridField:
    """``Z(x, t)``: position at time ``t`` of the particle owning ``x`` initially."""
    F = reconstruct_F(run, 0.0, grid)
    return GridField(F.grid, run.at(t).points[F.cell_index])


@dataclass(frozen=True)
class TestFunctions:
    """``phi(x, t) = e_k p(x) bubble(x) b(t)`` with monomials ``p`` up to ``degree``.

    The spatial bubble vanishes to second order on the domain boundary and
    ``b(t) = (1 - t/T)^3`` vanishes to second order at the horizon, so each
    ``phi`` is C2 and compactly supported in ``[0, T)`` in time.
    """

    degree: int = 2
    __test__ = False  # keep pytest from collecting this class

    def exponents(self):
        return [(a, d - a) for d in range(self.degree + 1) for a in range(d, -1, -1)]

    def spatial(self, grid: PhysicalDomain, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if grid.shape == "disk":
            bubble = np.clip(1.0 - np.sum(x * x, axis=1) / grid.S**2, 0.0, None) ** 2
        else:
            a, b = grid.half_widths
            bubble = (np.clip(1 - (x[:, 0] / a) ** 2, 0, None) * np.clip(1 - (x[:, 1] / b) ** 2, 0, None)) ** 2
        return np.stack([x[:, 0] ** i * x[:, 1] ** j * bubble for i, j in self.exponents()])

    @staticmethod
    def time(t, T):
        return (1.0 - np.asarray(t, dtype=float) / T) ** 3

    @staticmethod
    def time_derivative(t, T):
        return -3.0 / T * (1.0 - np.asarray(t, dtype=float) / T) ** 2


_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(3)


def z_residual(run: FlowState, grid: PhysicalDomain | None = None, tests: TestFunctions | None = None,
               return_all=False):
    """Weak-form residual ``int int [Z . d_t phi + J(Z - F) . phi] + int grad P_0 . phi(., 0)``.

    ``Z`` and ``F`` are piecewise linear in time between saved snapshots and
    piecewise constant in space on initial cells; the time integrals use
    three-point Gauss rules per interval, exact for these integrands.  The
    horizon of the time bump is the last saved time.  Returns the largest
    absolute residual over test functions and both components.
    """
    if len(run.history) < 3:
        raise ValueError("z_residual needs at least three saved times")
    grid = run.domain if grid is None else grid
    tests = tests or TestFunctions()
    idx = _initial_cells(run, grid)
    n = len(run.history[0].points)
    # g[l, i] = sum over nodes of cell i of weight * spatial test function l
    spatial = tests.spatial(grid, grid.nodes) * grid.weights
    g = np.stack([np.bincount(idx, weights=row, minlength=n) for row in spatial])
    T = run.history[-1].t
    acc = np.zeros((n, 2))
    for a, b in zip(run.history[:-1], run.history[1:]):
        half = 0.5 * (b.t - a.t)
        for xg, wg in zip(_GAUSS_X, _GAUSS_W):
            s = 0.5 * (xg + 1.0)
            t = a.t + s * (b.t - a.t)
            Z = (1 - s) * a.points + s * b.points
            F = (1 - s) * a.centroids + s * b.centroids
            acc += wg * half * (Z * TestFunctions.time_derivative(t, T) + J(Z - F) * TestFunctions.time(t, T))
    acc += run.history[0].points * TestFunctions.time(0.0, T)
    res = g @ acc
    return res if return_all else float(np.max(np.abs(res)))


def fit_rotation_rate(run: FlowState, grid: PhysicalDomain | None = None, times=None) -> tuple[float, np.ndarray, np.ndarray]:
    """Least-squares rate of the best rotation about the origin taking ``x`` to ``F_t(x)``.

    For each time the angle maximizing ``sum w x . R F`` is taken (unwrapped
    across times), then a line through the origin is fitted to angle against
    time.  Returns ``(rate, times, angles)``.
    """
    grid = run.domain if grid is None else grid
    times = run.saved_times() if times is None else np.asarray(times, dtype=float)
    x = grid.nodes
    w = grid.weights
    angles = []
    for t in times:
        F = reconstruct_F(run, t, grid).values
        cross = fsum(w * (x[:, 0] * F[:, 1] - x[:, 1] * F[:, 0]))
        dot = fsum(w * np.sum(x * F, axis=1))
        angles.append(np.arctan2(cross, dot))
    angles = np.unwrap(np.array(angles))
    rate = float(np.dot(times, angles) / np.dot(times, times)) if np.any(times) else 0.0
    return rate, times, angles
