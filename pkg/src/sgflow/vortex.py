"""Closed-form rotating vortex patch on the unit disk.

The dual measure is a uniform disk of radius ``eps`` (density ``1/eps**2``)
centred at ``z(t) = (cos t, sin t)``.  Particles inside it rotate rigidly
about the centre at rate ``(eps - 1) / eps`` while the physical flow is a
rotation of the unit disk about the origin at the same rate.
"""

from __future__ import annotations

import logging
import math
from functools import lru_cache

import numpy as np
from scipy.stats import qmc

from .measure import DiscreteMeasure, PhysicalDomain
from .transport import solve_weights

log = logging.getLogger(__name__)

__all__ = [
    "Z0",
    "center",
    "angular_rate",
    "rotation",
    "exact_P_bar",
    "exact_P_star",
    "exact_grad_P_star",
    "exact_Phi",
    "exact_F",
    "exact_Z",
    "sample_patch",
    "centroidal_disk_points",
]

Z0 = np.array([1.0, 0.0])


def _check_eps(eps):
    if not 0 < eps <= 1:
        raise ValueError(f"epsilon must lie in (0, 1], got {eps}")


def center(t) -> np.ndarray:
    t = np.asarray(t, dtype=float)
    return np.stack([np.cos(t), np.sin(t)], axis=-1)


def angular_rate(eps) -> float:
    if eps <= 0:
        raise ValueError("epsilon must be positive")
    return (eps - 1.0) / eps


def rotation(theta) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def exact_P_bar(x, zbar, eps):
    """Physical potential ``zbar . x + eps |x|^2 / 2``."""
    x = np.asarray(x, dtype=float)
    return x @ np.asarray(zbar, dtype=float) + 0.5 * eps * np.sum(x * x, axis=-1)


def exact_P_star(y, zbar, eps):
    d = np.linalg.norm(np.asarray(y, dtype=float) - np.asarray(zbar, dtype=float), axis=-1)
    return np.where(d <= eps, d * d / (2.0 * eps), d - 0.5 * eps)


def exact_grad_P_star(y, zbar, eps) -> np.ndarray:
    """``(y - zbar) / eps`` inside the patch and the unit vector ``(y - zbar) / |y - zbar|`` outside."""
    _check_eps(eps)
    diff = np.asarray(y, dtype=float) - np.asarray(zbar, dtype=float)
    d = np.linalg.norm(diff, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        outside = diff / np.where(d > 0, d, 1.0)
    return np.where(d <= eps, diff / eps, outside)


def exact_Phi(y0, t, eps) -> np.ndarray:
    """Dual flow: ``z(t) + R((eps - 1) t / eps) (y0 - z0)``."""
    _check_eps(eps)
    y0 = np.asarray(y0, dtype=float)
    if np.any(np.linalg.norm(y0 - Z0, axis=-1) > eps * (1 + 1e-9)):
        raise ValueError("initial point lies outside the patch")
    R = rotation(angular_rate(eps) * t)
    return center(t) + (y0 - Z0) @ R.T


def exact_F(x, t, eps) -> np.ndarray:
    """Physical flow: rotation of ``x`` about the origin by ``(eps - 1) t / eps``."""
    _check_eps(eps)
    R = rotation(angular_rate(eps) * t)
    return np.asarray(x, dtype=float) @ R.T


def exact_Z(x, t, eps) -> np.ndarray:
    """``Z(x, t) = z(t) + eps R(theta(t)) x``."""
    return center(t) + eps * exact_F(x, t, eps)


@lru_cache(maxsize=8)
def _centroidal(n, n_q, seed, sweeps, random):
    domain = PhysicalDomain.disk(1.0, n_q)
    if random:
        rng = np.random.default_rng(seed)
        r = np.sqrt(rng.uniform(size=n))
        a = rng.uniform(0, 2 * np.pi, size=n)
        y = np.column_stack([r * np.cos(a), r * np.sin(a)])
    else:
        sampler = qmc.Halton(d=2, scramble=True, seed=seed)
        pts = np.empty((0, 2))
        while len(pts) < n:
            cand = 2.0 * sampler.random(max(2 * n, 64)) - 1.0
            pts = np.vstack([pts, cand[np.hypot(cand[:, 0], cand[:, 1]) < 1.0]])
        y = pts[:n]
    if sweeps:
        masses = np.full(n, domain.quadrature_mass / n)
        for k in range(sweeps):
            # cold starts: after a move of about one spacing the previous weights empty many cells,
            # while the Voronoi-like start is already close for equal masses
            mu = DiscreteMeasure(y, masses)
            _, tess, _ = solve_weights(domain, mu, tol=1e-7, return_info=True)
            step = float(np.max(np.hypot(*(tess.cell_centroids - y).T)))
            y = tess.cell_centroids.copy()
            log.debug("centroidal sweep %d: max move %.3e", k, step)
    y.setflags(write=False)
    return y


def centroidal_disk_points(n, n_q=256, seed=0, sweeps=20, random=False) -> np.ndarray:
    """Low-discrepancy points in the unit disk, relaxed towards equal-area centroidal cells.

    Each sweep solves the equal-mass transport problem on the quadrature grid
    of the unit disk and moves every point to the centroid of its own cell.
    At a fixed point the points coincide with their cell centroids, which is
    exactly the configuration on which the discrete dynamics rotate rigidly.
    """
    return _centroidal(int(n), int(n_q), int(seed), int(sweeps), bool(random))


def sample_patch(eps, t, n, n_q=256, seed=0, sweeps=20, random=False) -> DiscreteMeasure:
    """Equal-mass particles filling ``B(z(t), eps)``, with total mass ``pi``."""
    _check_eps(eps)
    if n < 1:
        raise ValueError("need at least one particle")
    y = centroidal_disk_points(n, n_q, seed, sweeps if n > 1 else 0, random)
    pts = center(t) + eps * y
    return DiscreteMeasure(pts, np.full(n, math.pi / n))
