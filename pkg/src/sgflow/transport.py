"""Semidiscrete optimal transport from (weighted) Lebesgue measure on a domain to particles.

The transport map is ``grad P`` with ``P(x) = max_i (x . X_i - psi_i)``; the
preimage of particle ``i`` is its Laguerre cell.  Cells are resolved on the
domain's quadrature nodes.  Nodes lying within half a grid spacing of a cell
boundary are shared between the (up to three) competing cells through
products of linear ramps in the distance to each bisector.  This keeps cell
masses continuous, piecewise smooth functions of ``psi`` with an exact sparse
Jacobian, so Newton's method converges well below the one-node resolution.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.spatial import cKDTree

from .errors import DegenerateCell, NonConvergence
from .measure import DiscreteMeasure, PhysicalDomain, fsum

log = logging.getLogger(__name__)

__all__ = [
    "LaguerreTessellation",
    "SolveInfo",
    "tessellate",
    "solve_weights",
    "cell_centroid_map",
    "assign_points",
    "cold_start_weights",
    "mass_jacobian",
    "gauge_fix",
    "max_mass_error",
]

_BRUTE_FORCE_MAX = 16
_N_CANDIDATES = 6


@dataclass(frozen=True)
class LaguerreTessellation:
    candidates: np.ndarray  # (M, K) best cells per node by score, ties to the lowest index
    scores: np.ndarray  # (M, K) x . X_c - psi_c for those candidates
    fractions: np.ndarray  # (M, K) share of each node's weight per candidate
    gap: np.ndarray  # distance from node to the bisector with its runner-up
    node_weights: np.ndarray
    cell_masses: np.ndarray
    cell_centroids: np.ndarray  # NaN rows for empty cells
    points: np.ndarray
    h: float

    @property
    def assignment(self):
        return self.candidates[:, 0]

    @property
    def runner_up(self):
        if self.candidates.shape[1] < 2:
            return np.full(len(self.candidates), -1)
        return self.candidates[:, 1]

    @property
    def best_score(self):
        return self.scores[:, 0]

    @property
    def n_cells(self):
        return len(self.cell_masses)

    def empty_cells(self):
        return np.flatnonzero(self.cell_masses <= 0)

    def hard_counts(self):
        return np.bincount(self.assignment, minlength=self.n_cells)

    def boundary_nodes(self):
        """Nodes whose weight is split between several cells."""
        return self.fractions[:, 0] < 1.0


def gauge_fix(psi):
    psi = np.asarray(psi, dtype=float)
    return psi - psi[0]


def _points_and_psi(mu, psi):
    pts = mu.points if isinstance(mu, DiscreteMeasure) else np.asarray(mu, dtype=float).reshape(-1, 2)
    psi = np.asarray(psi, dtype=float).ravel()
    if len(psi) != len(pts):
        raise ValueError("one weight per particle required")
    return pts, psi


def _normalization(X, nodes):
    # match the particle cloud's spread to the node cloud's so that optimal lifts stay nearly flat
    center = X.mean(axis=0)
    spread = math.sqrt(float(np.mean(np.sum((X - center) ** 2, axis=1))))
    reach = math.sqrt(float(np.mean(np.sum(nodes**2, axis=1))))
    return center, (spread / reach if spread > 0 else 1.0)


def _candidates(nodes, X, psi, workers=1, reference=None):
    n, m = len(X), len(nodes)
    if n <= _BRUTE_FORCE_MAX:
        cand = np.broadcast_to(np.arange(n), (m, n))
    else:
        # x.X_i - psi_i = x.b + s (x.Y_i - psi_i / s) with Y = (X - b) / s: same argmax, and
        # scaling Y to the node cloud keeps the KD-tree queries local.
        center, s = _normalization(X, nodes if reference is None else reference)
        Y = (X - center) / s
        # argmax x.Y_i - p_i  ==  argmin |x - Y_i|^2 + (W - w_i),  w_i = |Y_i|^2 - 2 p_i
        lift = np.einsum("ij,ij->i", Y, Y) - 2.0 * psi / s
        height = np.sqrt(np.maximum(lift.max() - lift, 0.0))
        tree = cKDTree(np.column_stack([Y, height]))
        _, cand = tree.query(np.column_stack([nodes, np.zeros(m)]), k=min(_N_CANDIDATES, n), workers=workers)
        cand = np.asarray(cand).reshape(m, -1)
    cand = np.sort(cand, axis=1)
    score = nodes[:, 0:1] * X[cand, 0] + nodes[:, 1:2] * X[cand, 1] - psi[cand]
    order = np.argsort(-score, axis=1, kind="stable")[:, :_N_CANDIDATES]
    return np.take_along_axis(cand, order, axis=1), np.take_along_axis(score, order, axis=1)


def _ramps(cand, score, X, h):
    """Pairwise ramps ``r_kj = clip(1/2 + (s_k - s_j) / (h |X_k - X_j|), 0, 1)`` per node."""
    P = X[cand]
    diff = P[:, :, None, :] - P[:, None, :, :]
    L = np.hypot(diff[..., 0], diff[..., 1])
    K = cand.shape[1]
    eye = np.eye(K, dtype=bool)
    L[:, eye] = 1.0
    u = (score[:, :, None] - score[:, None, :]) / (L * h)
    r = np.clip(0.5 + u, 0.0, 1.0)
    r[:, eye] = 1.0
    slope = ((u > -0.5) & (u < 0.5)).astype(float)
    slope[:, eye] = 0.0
    return r, slope, L


def _split(cand, score, X, h):
    m, K = cand.shape
    frac = np.zeros((m, K))
    frac[:, 0] = 1.0
    if K == 1:
        return frac
    L0 = np.hypot(*(X[cand[:, 1:]] - X[cand[:, :1]]).transpose(2, 0, 1))
    band = np.any((score[:, :1] - score[:, 1:]) < 0.5 * h * L0, axis=1)
    if np.any(band):
        r, _, _ = _ramps(cand[band], score[band], X, h)
        phi = np.prod(r, axis=2)
        frac[band] = phi / phi.sum(axis=1, keepdims=True)
    return frac


def tessellate(domain: PhysicalDomain, mu, psi, density=None, workers=1) -> LaguerreTessellation:
    """Assign quadrature nodes to Laguerre cells and integrate cell masses and centroids."""
    X, psi = _points_and_psi(mu, psi)
    nodes = domain.nodes
    h = domain.h
    w = domain.weights if density is None else domain.weights * np.asarray(density, dtype=float)
    n = len(X)
    cand, score = _candidates(nodes, X, psi, workers)
    frac = _split(cand, score, X, h)
    if n == 1:
        gap = np.full(len(nodes), np.inf)
    else:
        gap = (score[:, 0] - score[:, 1]) / np.hypot(*(X[cand[:, 0]] - X[cand[:, 1]]).T)
    K = cand.shape[1]
    wf = (w[:, None] * frac).ravel()
    idx = cand.ravel()
    mass = np.bincount(idx, wf, minlength=n)
    cx = np.bincount(idx, wf * np.repeat(nodes[:, 0], K), minlength=n)
    cy = np.bincount(idx, wf * np.repeat(nodes[:, 1], K), minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        cent = np.column_stack([cx, cy]) / mass[:, None]
    cent[mass <= 0] = np.nan
    return LaguerreTessellation(cand, score, frac, gap, w, mass, cent, X, h)


def assign_points(domain: PhysicalDomain, mu, psi, points, workers=1) -> np.ndarray:
    """Laguerre cell (argmax of ``x . X_i - psi_i``, ties to the lowest index) of arbitrary points."""
    X, psi = _points_and_psi(mu, psi)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cand, _ = _candidates(pts, X, psi, workers, reference=domain.nodes)
    return cand[:, 0]


def cell_centroid_map(tess: LaguerreTessellation) -> np.ndarray:
    empty = tess.empty_cells()
    if len(empty):
        raise DegenerateCell(f"cell {int(empty[0])} is empty", index=int(empty[0]))
    return tess.cell_centroids.copy()


def mass_jacobian(tess: LaguerreTessellation) -> sp.csr_matrix:
    """Sparse ``d mass_i / d psi_j`` assembled from the shared boundary nodes."""
    n = tess.n_cells
    band = tess.boundary_nodes()
    if n == 1 or not np.any(band):
        return sp.csr_matrix((n, n))
    cand = tess.candidates[band]
    K = cand.shape[1]
    r, slope, L = _ramps(cand, tess.scores[band], tess.points, tess.h)
    phi = np.prod(r, axis=2)
    total = phi.sum(axis=1)
    # dphi[:, k, l] = d phi_k / d psi_{cand_l}
    dphi = np.zeros((len(cand), K, K))
    for k in range(K):
        for j in range(K):
            if j == k:
                continue
            others = np.prod(np.delete(r[:, k, :], [k, j], axis=1), axis=1)
            g = others * slope[:, k, j] / (L[:, k, j] * tess.h)
            dphi[:, k, j] += g
            dphi[:, k, k] -= g
    frac = phi / total[:, None]
    dfrac = (dphi - frac[:, :, None] * dphi.sum(axis=1)[:, None, :]) / total[:, None, None]
    vals = tess.node_weights[band][:, None, None] * dfrac
    rows = np.broadcast_to(cand[:, :, None], vals.shape)
    cols = np.broadcast_to(cand[:, None, :], vals.shape)
    return sp.coo_matrix((vals.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n)).tocsr()


def cold_start_weights(domain: PhysicalDomain, X) -> np.ndarray:
    """Weights whose cells are the Voronoi cells of the particles shrunk into the domain."""
    X = np.asarray(X, dtype=float).reshape(-1, 2)
    if len(X) == 1:
        return np.zeros(1)
    center, s = _normalization(X, domain.nodes)
    psi = np.sum((X - center) ** 2, axis=1) / (2.0 * s)
    return psi - psi[0]


def _fill_empty_cells(domain, X, psi, density, workers, max_passes=50):
    """Coordinate steps on the weights of empty cells until every cell holds mass."""
    psi = np.array(psi, dtype=float)
    for _ in range(max_passes):
        tess = tessellate(domain, X, psi, density, workers)
        empty = tess.empty_cells()
        if len(empty) == 0:
            return psi, tess
        # lower psi_i just enough for cell i to win one weighted node outright
        live = tess.node_weights > 0
        nodes, best, owner = domain.nodes[live], tess.best_score[live], tess.assignment[live]
        for chunk in np.array_split(empty, max(1, len(empty) // 64)):
            margin = nodes @ X[chunk].T - best[:, None]
            k = np.argmax(margin, axis=0)
            L = np.maximum(np.hypot(*(X[chunk] - X[owner[k]]).T), 1e-12)
            psi[chunk] = margin[k, np.arange(len(chunk))] - 1.5 * domain.h * L
    raise DegenerateCell(f"could not make cell {int(empty[0])} nonempty", index=int(empty[0]))


@dataclass
class SolveInfo:
    iterations: int
    max_error: float
    history: list  # (iteration, max mass error, accepted step)


def solve_weights(
    domain: PhysicalDomain,
    mu: DiscreteMeasure,
    tol=1e-3,
    max_iter=200,
    psi0=None,
    density=None,
    workers=1,
    log_path=None,
    return_info=False,
):
    """Damped Newton for Kantorovich weights with ``max_i |mass_i - m_i| <= tol * sum(m)``.

    Target masses are rescaled to the (weighted) quadrature mass of the domain.
    Steps are halved until the squared mass residual decreases (Armijo);
    cells that empty out along the way are refilled by coordinate steps on
    their own weights before Newton resumes.  Returns ``psi`` with
    ``psi[0] == 0``, plus the final tessellation and a :class:`SolveInfo`
    when ``return_info`` is set.
    """
    X = mu.points
    w_total = fsum(domain.weights if density is None else domain.weights * np.asarray(density, dtype=float))
    m_total = fsum(mu.masses)
    if w_total <= 0:
        raise DegenerateCell("domain carries no mass")
    if abs(m_total - w_total) > 0.01 * w_total:
        log.warning("target mass %.6g differs from domain mass %.6g by more than 1%%; rescaling", m_total, w_total)
    target = mu.masses * (w_total / m_total)
    threshold = tol * w_total

    psi = cold_start_weights(domain, X) if psi0 is None else np.array(psi0, dtype=float)
    psi, tess = _fill_empty_cells(domain, X, psi, density, workers)
    res = tess.cell_masses - target
    err = float(np.max(np.abs(res)))
    history = [(0, err, 0.0)]
    it = 0
    try:
        while err > threshold:
            if it >= max_iter:
                raise NonConvergence(f"Newton stopped after {it} iterations (max error {err:.3e})", it, err, gauge_fix(psi))
            it += 1
            direction = _newton_direction(mass_jacobian(tess), -res)
            merit = float(res @ res)
            tau = 1.0
            while True:
                trial_psi = psi + tau * direction
                trial = tessellate(domain, X, trial_psi, density, workers)
                trial_res = trial.cell_masses - target
                trial_err = float(np.max(np.abs(trial_res)))
                if float(trial_res @ trial_res) <= (1.0 - 2e-4 * tau) * merit or trial_err <= (1.0 - 0.5 * tau) * err:
                    break
                tau *= 0.5
                if tau < 2.0**-30:
                    raise NonConvergence(f"line search failed at iteration {it} (max error {err:.3e})", it, err, gauge_fix(psi))
            psi, tess = trial_psi, trial
            if len(tess.empty_cells()):
                psi, tess = _fill_empty_cells(domain, X, psi, density, workers)
            res = tess.cell_masses - target
            err = float(np.max(np.abs(res)))
            history.append((it, err, tau))
            log.debug("newton it=%d err=%.3e tau=%.3g", it, err, tau)
    finally:
        _write_log(log_path, history)
    psi = gauge_fix(psi)
    if return_info:
        return psi, tess, SolveInfo(it, err, history)
    return psi


def _newton_direction(J, rhs):
    n = J.shape[0]
    d = np.zeros(n)
    if n == 1:
        return d
    # gauge: psi_0 held fixed
    Jr = J[1:, 1:].tocsc()
    shift = 1e-12 * max(1.0, float(np.abs(J.diagonal()).max()))
    try:
        sol = spla.spsolve(Jr - shift * sp.identity(n - 1, format="csc"), rhs[1:])
    except RuntimeError:
        sol = np.full(n - 1, np.nan)
    if not np.all(np.isfinite(sol)):
        sol = np.linalg.lstsq(Jr.toarray(), rhs[1:], rcond=None)[0]
    d[1:] = sol
    return d


def _write_log(path, history):
    if path is None:
        return
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "max_mass_error", "step"])
        for it, err, tau in history:
            w.writerow([it, repr(err), repr(tau)])


def max_mass_error(tess: LaguerreTessellation, mu: DiscreteMeasure) -> float:
    scale = fsum(tess.node_weights) / fsum(mu.masses)
    return float(np.max(np.abs(tess.cell_masses - mu.masses * scale)))
