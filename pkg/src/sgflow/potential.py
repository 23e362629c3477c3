"""Max-affine convex potentials, their Legendre transforms and subgradient selections."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DegenerateCell
from .measure import DiscreteMeasure, PhysicalDomain
from .transport import LaguerreTessellation, assign_points, tessellate

__all__ = [
    "ConvexPotential",
    "LegendreDual",
    "eval_P",
    "grad_P",
    "legendre_numeric",
    "legendre_from_samples",
    "grad_P_star",
    "grad_P_star_at",
    "fenchel_gap",
    "dual_from_tessellation",
]


@dataclass(frozen=True)
class ConvexPotential:
    """``P(x) = max_i (x . X_i - psi_i)`` on a physical domain."""

    slopes: np.ndarray
    psi: np.ndarray
    domain: PhysicalDomain

    def __post_init__(self):
        X = np.array(self.slopes, dtype=float).reshape(-1, 2)
        psi = np.array(self.psi, dtype=float).ravel()
        if len(X) != len(psi):
            raise ValueError("one intercept per slope required")
        object.__setattr__(self, "slopes", X)
        object.__setattr__(self, "psi", psi)

    @classmethod
    def from_measure(cls, mu: DiscreteMeasure, psi, domain):
        return cls(mu.points, psi, domain)

    @property
    def intercepts(self):
        return -self.psi

    @cached_property
    def tess(self) -> LaguerreTessellation:
        return tessellate(self.domain, self.slopes, self.psi)

    def to_dict(self):
        return {
            "slopes": self.slopes.tolist(),
            "intercepts": self.intercepts.tolist(),
            "gauge": float(self.psi[0]),
            "domain": self.domain.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["slopes"], -np.asarray(d["intercepts"], dtype=float), PhysicalDomain.from_dict(d["domain"]))

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n", encoding="utf-8")

    def to_csv(self, path):
        """Samples of ``P`` and ``grad P`` at the quadrature nodes."""
        nodes = self.domain.nodes
        vals = eval_P(self, nodes)
        grads = grad_P(self, nodes)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "y", "P", "dPx", "dPy"])
            for p, v, g in zip(nodes, vals, grads):
                w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(v)), repr(float(g[0])), repr(float(g[1]))])


def _scores(pot, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return x @ pot.slopes.T - pot.psi


def eval_P(pot: ConvexPotential, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.max(_scores(pot, x), axis=1)
    return out[0] if x.ndim == 1 else out


def grad_P(pot: ConvexPotential, x) -> np.ndarray:
    """Slope of the dominating affine piece; ties go to the lowest index."""
    x = np.asarray(x, dtype=float)
    idx = assign_points(pot.domain, pot.slopes, pot.psi, np.atleast_2d(x))
    out = pot.slopes[idx]
    return out[0] if x.ndim == 1 else out


def legendre_from_samples(points, values, Y) -> np.ndarray:
    """Discrete transform ``max_j (Y . p_j - v_j)`` over sampled ``(p_j, v_j)``."""
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    v = np.asarray(values, dtype=float).ravel()
    Y = np.asarray(Y, dtype=float)
    Y2 = np.atleast_2d(Y)
    out = np.empty(len(Y2))
    for start in range(0, len(Y2), 256):
        block = Y2[start : start + 256]
        out[start : start + 256] = np.max(block @ p.T - v, axis=1)
    return out[0] if Y.ndim == 1 else out


def legendre_numeric(pot: ConvexPotential, Y, extra_points=None) -> np.ndarray:
    """``P*(Y) = sup_x (x . Y - P(x))`` with the sup taken over quadrature nodes.

    ``extra_points`` are added to the candidate maximizers (they must lie in the domain).
    """
    nodes = pot.domain.nodes
    if extra_points is not None:
        nodes = np.vstack([nodes, np.atleast_2d(extra_points)])
    return legendre_from_samples(nodes, eval_P(pot, nodes), Y)


@dataclass(frozen=True)
class LegendreDual:
    """``P*`` at the particles together with the centroid selections ``c_i`` from ``dP*(X_i)``."""

    points: np.ndarray
    values: np.ndarray
    selections: np.ndarray  # NaN rows for empty cells

    def __len__(self):
        return len(self.values)


def dual_from_tessellation(pot: ConvexPotential, tess: LaguerreTessellation | None = None) -> LegendreDual:
    """At a particle with a nonempty cell the sup defining ``P*`` is attained there, giving ``psi_i``."""
    tess = pot.tess if tess is None else tess
    values = pot.psi.copy()
    empty = tess.empty_cells()
    if len(empty):
        values[empty] = legendre_numeric(pot, pot.slopes[empty])
    return LegendreDual(pot.slopes, values, tess.cell_centroids.copy())


def grad_P_star(dual: LegendreDual, i: int) -> np.ndarray:
    c = dual.selections[i]
    if not np.all(np.isfinite(c)):
        raise DegenerateCell(f"cell {i} is empty", index=int(i))
    return c.copy()


def grad_P_star_at(dual: LegendreDual, Y) -> np.ndarray:
    """Selection at arbitrary dual points: the centroid of the Euclidean-nearest particle's cell."""
    Y = np.asarray(Y, dtype=float)
    _, idx = cKDTree(dual.points).query(np.atleast_2d(Y))
    out = dual.selections[idx]
    if not np.all(np.isfinite(out)):
        bad = int(idx[np.flatnonzero(~np.isfinite(out).all(axis=1))[0]])
        raise DegenerateCell(f"cell {bad} is empty", index=bad)
    return out[0] if Y.ndim == 1 else out


def fenchel_gap(pot: ConvexPotential, dual: LegendreDual | None, x, Y) -> float:
    """``P(x) + P*(Y) - x . Y``, nonnegative up to rounding.

    ``P*`` is maximized over the quadrature nodes and ``x`` itself, so the
    discrete transform never undershoots at the pair being tested.  The
    ``dual`` argument is accepted for symmetry with the other operations;
    when ``Y`` is a particle with a recorded value that value is used.
    """
    x = np.asarray(x, dtype=float)
    Y = np.asarray(Y, dtype=float)
    star = None
    if dual is not None:
        hit = np.flatnonzero(np.all(dual.points == Y, axis=1))
        if len(hit):
            star = float(dual.values[hit[0]])
    if star is None:
        star = float(legendre_numeric(pot, Y, extra_points=x))
    return float(eval_P(pot, x)) + star - float(x @ Y)
