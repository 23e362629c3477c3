"""Physical domains, particle measures, grid fields and the distances between them."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "PhysicalDomain",
    "DiscreteMeasure",
    "GridField",
    "total_mass",
    "support_bound",
    "pushforward_discrepancy",
    "lr_distance",
    "fsum",
]


def fsum(values) -> float:
    """Order-independent, correctly rounded sum of an array."""
    return math.fsum(np.asarray(values, dtype=float).ravel().tolist())


@dataclass(frozen=True)
class PhysicalDomain:
    """A disk of radius ``S`` or a centered rectangle, with a masked uniform quadrature grid.

    Quadrature nodes sit at the centers of an ``n_q x n_q`` lattice over
    ``[-S, S]^2``; each node inside the domain carries weight ``h_q**2``.
    """

    shape: str = "disk"
    S: float = 1.0
    n_q: int = 128
    half_widths: tuple[float, float] | None = None

    def __post_init__(self):
        if self.shape not in ("disk", "rectangle"):
            raise ValueError(f"unsupported domain shape {self.shape!r}")
        if self.n_q < 2:
            raise ValueError("n_q must be at least 2")
        if self.shape == "rectangle":
            if self.half_widths is None:
                raise ValueError("rectangle needs half_widths")
            a, b = (float(v) for v in self.half_widths)
            if a <= 0 or b <= 0:
                raise ValueError("half_widths must be positive")
            object.__setattr__(self, "half_widths", (a, b))
            object.__setattr__(self, "S", math.hypot(a, b))
        elif self.S <= 0:
            raise ValueError("S must be positive")

    @classmethod
    def disk(cls, radius=1.0, n_q=128):
        return cls("disk", float(radius), int(n_q))

    @classmethod
    def rectangle(cls, a, b, n_q=128):
        return cls("rectangle", 1.0, int(n_q), (float(a), float(b)))

    @property
    def h(self) -> float:
        return 2.0 * self.S / self.n_q

    @property
    def area(self) -> float:
        if self.shape == "disk":
            return math.pi * self.S**2
        a, b = self.half_widths
        return 4.0 * a * b

    def contains(self, points, slack=0.0):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        if self.shape == "disk":
            return np.hypot(p[:, 0], p[:, 1]) <= self.S + slack
        a, b = self.half_widths
        return (np.abs(p[:, 0]) <= a + slack) & (np.abs(p[:, 1]) <= b + slack)

    @cached_property
    def _lattice(self):
        axis = -self.S + (np.arange(self.n_q) + 0.5) * self.h
        xx, yy = np.meshgrid(axis, axis, indexing="ij")
        pts = np.column_stack([xx.ravel(), yy.ravel()])
        inside = self.contains(pts)
        return pts, inside

    @cached_property
    def nodes(self) -> np.ndarray:
        pts, inside = self._lattice
        out = np.ascontiguousarray(pts[inside])
        out.setflags(write=False)
        return out

    @cached_property
    def weights(self) -> np.ndarray:
        w = np.full(len(self.nodes), self.h**2)
        w.setflags(write=False)
        return w

    @cached_property
    def quadrature_mass(self) -> float:
        return fsum(self.weights)

    def to_dict(self):
        d = {"shape": self.shape, "S": self.S, "n_q": self.n_q}
        if self.half_widths is not None:
            d["half_widths"] = list(self.half_widths)
        return d

    @classmethod
    def from_dict(cls, d):
        if d.get("shape", "disk") == "rectangle":
            return cls.rectangle(*d["half_widths"], n_q=d.get("n_q", 128))
        return cls.disk(d.get("S", 1.0), d.get("n_q", 128))


class DiscreteMeasure:
    """Weighted particle cloud ``sum_i m_i delta_{X_i}`` in dual space.

    Coincident points are separated by a deterministic jitter of size
    ``1e-9 * jitter_scale`` seeded by the particle index.
    """

    def __init__(self, points, masses, R0=None, jitter_scale=1.0):
        pts = np.array(points, dtype=float).reshape(-1, 2)
        m = np.array(masses, dtype=float).ravel()
        if len(pts) == 0:
            raise ValueError("measure needs at least one particle")
        if len(m) != len(pts):
            raise ValueError("points and masses differ in length")
        if not (np.all(np.isfinite(pts)) and np.all(np.isfinite(m))):
            raise ValueError("non-finite particle data")
        if np.any(m <= 0):
            raise ValueError(f"particle masses must be positive (index {int(np.argmin(m))})")
        pts = _separate_duplicates(pts, 1e-9 * jitter_scale)
        radius = float(np.max(np.hypot(pts[:, 0], pts[:, 1])))
        if R0 is None:
            R0 = radius
        elif radius > R0 * (1 + 1e-12) + 1e-12:
            raise ValueError(f"particle at radius {radius} outside R0={R0}")
        pts.setflags(write=False)
        m.setflags(write=False)
        self.points = pts
        self.masses = m
        self.R0 = float(R0)

    def __len__(self):
        return len(self.masses)

    def __repr__(self):
        return f"DiscreteMeasure(n={len(self)}, mass={total_mass(self):.6g}, R0={self.R0:.6g})"

    def to_dict(self):
        return {"points": self.points.tolist(), "masses": self.masses.tolist(), "R0": self.R0}

    @classmethod
    def from_dict(cls, d):
        return cls(d["points"], d["masses"], d.get("R0"))

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _separate_duplicates(pts, size):
    _, first, inverse = np.unique(pts, axis=0, return_index=True, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    dup = np.flatnonzero(first[inverse] != np.arange(len(pts)))
    if len(dup) == 0:
        return pts
    pts = pts.copy()
    for i in dup:
        theta = np.random.default_rng(int(i)).uniform(0.0, 2.0 * np.pi)
        pts[i] += size * np.array([np.cos(theta), np.sin(theta)])
    return pts


@dataclass
class GridField:
    """Per-node samples (scalar or 2D) on a domain's quadrature nodes."""

    domain: PhysicalDomain
    values: np.ndarray
    defined: np.ndarray = field(default=None)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        n = len(self.domain.nodes)
        if self.values.shape[0] != n:
            raise ValueError(f"expected {n} node values, got {self.values.shape[0]}")
        if self.defined is None:
            self.defined = np.ones(n, dtype=bool)
        self.defined = np.asarray(self.defined, dtype=bool)
        vals = self.values[self.defined]
        if not np.all(np.isfinite(vals)):
            raise ValueError("non-finite values at defined nodes")

    @classmethod
    def identity(cls, domain):
        return cls(domain, np.array(domain.nodes))

    def to_csv(self, path):
        vals = self.values.reshape(len(self.values), -1)
        cols = ["x", "y"] + [f"v{k + 1}" for k in range(vals.shape[1])] + ["defined"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for p, v, d in zip(self.domain.nodes, vals, self.defined):
                w.writerow([repr(float(p[0])), repr(float(p[1]))] + [repr(float(x)) for x in v] + [int(d)])

    @classmethod
    def from_csv(cls, path, domain):
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        nv = len(header) - 3
        data = np.array([[float(x) for x in r[2 : 2 + nv]] for r in body])
        defined = np.array([r[-1] == "1" for r in body])
        if nv == 1:
            data = data[:, 0]
        return cls(domain, data, defined)


def total_mass(mu: DiscreteMeasure) -> float:
    return fsum(mu.masses)


def support_bound(R0, S, T):
    """Radius ``R0 e^T + (e^T - 1) S`` of the ball that contains the support up to time ``T``."""
    if R0 < 0 or S < 0 or T < 0:
        raise ValueError("support_bound needs nonnegative arguments")
    e = math.exp(T)
    return R0 * e + (e - 1.0) * S


def pushforward_discrepancy(map_samples: GridField, source_weights, target: DiscreteMeasure) -> float:
    """Total-variation mismatch between the binned pushforward and ``target``.

    Each node's weight is sent to the target particle nearest to the node's
    image; the result is ``sum_i |pushed_i - m_i|``.
    """
    w = np.asarray(source_weights, dtype=float)
    support = w > 0
    if np.any(support & ~map_samples.defined):
        raise ValueError("map undefined inside the source support")
    images = map_samples.values[support].reshape(-1, 2)
    _, idx = cKDTree(target.points).query(images)
    pushed = np.bincount(idx, weights=w[support], minlength=len(target))
    return fsum(np.abs(pushed - target.masses))


def lr_distance(F: GridField, G: GridField, r=2.0, weight=None) -> float:
    """``(sum_nodes w |F - G|^r h^2)^(1/r)``, the quadrature L^r distance."""
    if r < 1:
        raise ValueError("r must be >= 1")
    if F.domain != G.domain or F.values.shape != G.values.shape:
        raise ValueError("fields live on different grids")
    diff = (F.values - G.values).reshape(len(F.values), -1)
    dist = np.sqrt(np.sum(diff**2, axis=1))
    both = F.defined & G.defined
    w = F.domain.weights if weight is None else F.domain.weights * np.asarray(weight, dtype=float)
    return fsum(w[both] * dist[both] ** r) ** (1.0 / r)
