"""N-functions as density tables, Luxemburg norms, doubling checks and dominating N-functions.

An N-function is ``A(t) = int_0^t a`` with ``a`` nondecreasing, ``a(0) = 0``
and ``a(t) > 0`` for ``t > 0``.  Here ``a`` is piecewise linear on a table
``0 = t_0 < ... < t_n`` and continues past ``t_n`` by one of three tails:

* ``power``: ``a(t) = a_n (t / t_n)^(p - 1)``
* ``exponential``: ``a(t) = a_n exp(k (t - t_n))``
* ``log``: ``a(t) = a_n (1 + c log(t / t_n))``

The conjugate density is the inverse function of ``a``, which maps each
tail onto another tail in closed form.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import SGFlowError
from .measure import fsum

__all__ = [
    "NFunction",
    "eval_A",
    "conjugate",
    "legendre_brute",
    "luxemburg_norm",
    "delta_regular_check",
    "tail_integrals",
    "DominatingResult",
    "build_dominating_N",
]

_TAILS = ("power", "exponential", "log")


@dataclass(frozen=True, eq=False)
class NFunction:
    t: np.ndarray
    a: np.ndarray
    tail: str = "power"
    tail_param: float = 2.0  # p, k or c depending on the tail
    _A: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        a = np.array(self.a, dtype=float)
        if t.ndim != 1 or t.shape != a.shape or len(t) < 2:
            raise ValueError("density table needs matching 1D arrays with at least two points")
        if t[0] != 0 or a[0] != 0:
            raise ValueError("density table must start at (0, 0)")
        if np.any(np.diff(t) <= 0):
            raise ValueError("table abscissae must increase strictly")
        if np.any(np.diff(a) < 0) or np.any(a[1:] <= 0):
            raise ValueError("density must be nondecreasing and positive away from 0")
        if self.tail not in _TAILS:
            raise ValueError(f"unknown tail {self.tail!r}")
        if self.tail == "power" and self.tail_param <= 1:
            raise ValueError("power tail needs p > 1 for superlinear growth")
        if self.tail != "power" and self.tail_param <= 0:
            raise ValueError("tail parameter must be positive")
        for name, v in (("t", t), ("a", a)):
            v.setflags(write=False)
            object.__setattr__(self, name, v)
        A = np.concatenate([[0.0], np.cumsum(0.5 * (a[1:] + a[:-1]) * np.diff(t))])
        A.setflags(write=False)
        object.__setattr__(self, "_A", A)

    @classmethod
    def power(cls, p, t_max=1e3, t_min=1e-8, ratio=1.002, scale=1.0):
        """Table of ``A(t) = scale * t^p`` on a geometric grid, with the exact power tail."""
        n = int(math.ceil(math.log(t_max / t_min) / math.log(ratio)))
        t = np.concatenate([[0.0], np.geomspace(t_min, t_max, n + 1)])
        return cls(t, scale * p * t ** (p - 1), "power", float(p))

    @classmethod
    def from_function(cls, density, t_max, n=4001, tail="power", tail_param=2.0):
        t = np.linspace(0.0, t_max, n)
        return cls(t, np.asarray(density(t), dtype=float), tail, tail_param)

    @property
    def t_max(self):
        return float(self.t[-1])

    @property
    def a_max(self):
        return float(self.a[-1])

    @property
    def A_max(self):
        return float(self._A[-1])

    def density(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.interp(t, self.t, self.a)
        hi = t > self.t_max
        if np.any(hi):
            out = np.where(hi, self._tail_density(np.where(hi, t, self.t_max)), out)
        return out

    def _tail_density(self, t):
        r = t / self.t_max
        if self.tail == "power":
            return self.a_max * r ** (self.tail_param - 1)
        if self.tail == "exponential":
            with np.errstate(over="ignore"):
                return self.a_max * np.exp(self.tail_param * (t - self.t_max))
        return self.a_max * (1.0 + self.tail_param * np.log(r))

    def _tail_integral(self, t):
        tm, am, q = self.t_max, self.a_max, self.tail_param
        if self.tail == "power":
            return am * tm / q * ((t / tm) ** q - 1.0)
        if self.tail == "exponential":
            with np.errstate(over="ignore"):
                return am / q * np.expm1(q * (t - tm))
        # int_tm^t (1 + c log(s/tm)) ds = (t - tm) + c (t log(t/tm) - t + tm)
        return am * ((t - tm) + q * (t * np.log(t / tm) - t + tm))

    def __call__(self, t):
        return eval_A(self, t)

    def to_dict(self):
        return {"t": self.t.tolist(), "a": self.a.tolist(), "tail": self.tail, "tail_param": self.tail_param}

    @classmethod
    def from_dict(cls, d):
        return cls(d["t"], d["a"], d["tail"], d["tail_param"])

    def to_csv(self, path):
        """Rows ``t, a, A``; the tail model goes in a JSON sidecar ``<path>.tail.json``."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "a", "A"])
            for row in zip(self.t, self.a, self._A):
                w.writerow([repr(float(v)) for v in row])
        with open(f"{path}.tail.json", "w", encoding="utf-8") as fh:
            json.dump({"tail": self.tail, "tail_param": self.tail_param}, fh)


def eval_A(A: NFunction, t) -> np.ndarray:
    """``A(t)`` by exact integration of the piecewise-linear density (and its tail)."""
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("N-functions are evaluated at t >= 0")
    k = np.clip(np.searchsorted(A.t, t, side="right") - 1, 0, len(A.t) - 2)
    t0 = A.t[k]
    a0 = A.a[k]
    slope = (A.a[k + 1] - a0) / (A.t[k + 1] - t0)
    dt = np.minimum(t, A.t_max) - t0
    out = A._A[k] + a0 * dt + 0.5 * slope * dt * dt
    hi = t > A.t_max
    if np.any(hi):
        out = np.where(hi, A.A_max + A._tail_integral(np.where(hi, t, A.t_max)), out)
    return out if out.ndim else float(out)


def conjugate(A: NFunction) -> NFunction:
    """Complementary N-function: its density is the inverse of ``a``.

    Flat stretches of ``a`` become jumps of the inverse; the table keeps the
    right end of each jump, matching right-continuity.
    """
    s, u = A.a, A.t
    keep = np.concatenate([np.diff(s) > 0, [True]])
    s, u = s[keep], u[keep]
    if s[0] != 0:
        s = np.concatenate([[0.0], s])
        u = np.concatenate([[0.0], u])
    if A.tail == "power":
        p = A.tail_param
        return NFunction(s, u, "power", p / (p - 1.0))
    if A.tail == "exponential":
        # a(t) = a_n e^{k (t - t_n)}  =>  a^{-1}(s) = t_n (1 + log(s / a_n) / (k t_n))
        return NFunction(s, u, "log", 1.0 / (A.tail_param * A.t_max))
    # a(t) = a_n (1 + c log(t / t_n))  =>  a^{-1}(s) = t_n exp((s - a_n) / (c a_n))
    return NFunction(s, u, "exponential", 1.0 / (A.tail_param * A.a_max))


def legendre_brute(A: NFunction, s, t_grid) -> np.ndarray:
    """``max_t (s t - A(t))`` over an explicit grid, for checking :func:`conjugate`."""
    s = np.atleast_1d(np.asarray(s, dtype=float))
    tg = np.asarray(t_grid, dtype=float)
    vals = eval_A(A, tg)
    return np.max(s[:, None] * tg[None, :] - vals[None, :], axis=1)


def _modular(f_abs, w, A, k):
    with np.errstate(over="ignore", invalid="ignore"):
        v = eval_A(A, f_abs / k)
    if not np.all(np.isfinite(v)):
        return math.inf
    return fsum(w * v)


def luxemburg_norm(f, A: NFunction, weights=None) -> float:
    """``inf{k > 0 : int A(|f|/k) <= 1}`` with quadrature ``weights`` (default 1 each)."""
    f_abs = np.abs(np.asarray(f, dtype=float)).ravel()
    w = np.ones_like(f_abs) if weights is None else np.asarray(weights, dtype=float).ravel()
    if w.shape != f_abs.shape:
        raise ValueError("one weight per sample required")
    if not np.any(f_abs[w > 0] > 0):
        return 0.0
    # solve for k = scale * u so the root-finder works at order-one magnitudes
    scale = float(np.max(f_abs))
    f_unit = f_abs / scale
    g = lambda u: _modular(f_unit, w, A, u) - 1.0  # noqa: E731
    lo = hi = 1.0
    for _ in range(200):
        if g(hi) <= 0:
            break
        hi *= 2.0
    else:
        raise SGFlowError("could not bracket the Luxemburg norm from above")
    for _ in range(200):
        if g(lo) >= 0:
            break
        lo *= 0.5
    else:
        raise SGFlowError("could not bracket the Luxemburg norm from below")
    if lo == hi:
        return scale * lo
    u = brentq(g, lo, hi, xtol=1e-15 * hi, rtol=4 * np.finfo(float).eps, maxiter=500)
    return scale * float(u)


def delta_regular_check(A: NFunction, t0, decades=8, samples=400) -> tuple[bool, float]:
    """``(finite, sup A(2t)/A(t))`` over table points ``>= t0`` and the tail.

    The tail is probed on a geometric grid ``decades`` decades past the
    table; power and log tails have bounded ratios, the exponential tail does
    not and is reported as ``(False, inf)``.
    """
    if t0 <= 0:
        raise ValueError("t0 must be positive")
    if A.tail == "exponential":
        return False, math.inf
    start = max(t0, A.t[1])
    pts = A.t[A.t >= start]
    top = max(A.t_max, start) * 10.0**decades
    pts = np.concatenate([[start], pts, np.geomspace(max(A.t_max, start), top, samples)])
    ratio = eval_A(A, 2.0 * pts) / eval_A(A, pts)
    C = float(np.max(ratio))
    if A.tail == "power":
        C = max(C, 2.0**A.tail_param)
    return True, C


def tail_integrals(family, weights, levels) -> np.ndarray:
    """``T[k, j] = int_{|f_k| > lambda_j} |f_k|`` for every member and level."""
    w = np.asarray(weights, dtype=float).ravel()
    out = np.zeros((len(family), len(levels)))
    for k, f in enumerate(family):
        fa = np.abs(np.asarray(f, dtype=float)).ravel()
        order = np.argsort(fa)
        fs = fa[order]
        cum = np.concatenate([np.cumsum((w[order] * fs)[::-1])[::-1], [0.0]])
        idx = np.searchsorted(fs, levels, side="right")
        out[k] = cum[idx]
    return out


@dataclass
class DominatingResult:
    success: bool
    message: str
    A: NFunction | None
    B: float
    delta_constant: float
    levels: np.ndarray
    tails: np.ndarray  # uniform tail integral per level
    member_decay_levels: np.ndarray

    def to_dict(self):
        return {
            "success": self.success,
            "message": self.message,
            "B": self.B,
            "delta_regular": bool(np.isfinite(self.delta_constant)),
            "delta_constant": self.delta_constant,
            "levels": self.levels.tolist(),
            "tail_integrals": self.tails.tolist(),
            "member_decay_levels": self.member_decay_levels.tolist(),
            "A": None if self.A is None else self.A.to_dict(),
        }


def build_dominating_N(family, weights, eta=0.5, spread=8.0) -> DominatingResult:
    """Doubling N-function under which every member of ``family`` has modular ``<= B``.

    Levels are ``lambda_j = lambda_0 2^j`` from the mean level
    ``lambda_0 = max_k int |f_k| / int 1``.  ``T(lambda)`` is the uniform tail
    integral.  A member's decay level is the first level where its own tail
    falls to ``eta`` times its mass; the family's is the first level where
    ``T`` does.  When the family's decay level exceeds the first member's by
    more than ``spread``, mass is escaping to ever larger values along the
    family and the construction reports failure.

    Otherwise the density is ``a = 1 + log(1 + T(lambda_0)/T(lambda))`` on the
    levels, a linear ramp from ``0`` below ``lambda_0`` and a log tail past
    the last level with mass, so ``A(t) ~ t log t`` is doubling.
    """
    family = [np.abs(np.asarray(f, dtype=float)).ravel() for f in family]
    if not family:
        raise ValueError("empty family")
    w = np.asarray(weights, dtype=float).ravel()
    masses = np.array([fsum(w * f) for f in family])
    if not np.all(np.isfinite(masses)) or np.any(masses <= 0):
        raise ValueError("family members must be integrable with positive mass")
    M = float(masses.max())
    lam0 = M / fsum(w)
    lam_max = float(max(f.max() for f in family))
    n_levels = max(1, int(math.ceil(math.log2(max(lam_max / lam0, 1.0)))) + 2)
    levels = lam0 * 2.0 ** np.arange(n_levels)
    T_k = tail_integrals(family, w, levels)
    T = T_k.max(axis=0)
    decay = np.array([levels[np.argmax(row <= eta * m)] for row, m in zip(T_k, masses)])
    fam_decay = float(levels[np.argmax(T <= eta * M)])
    if fam_decay > spread * decay[0]:
        msg = (f"tail integrals do not decay uniformly: family level {fam_decay:.4g} vs "
               f"{decay[0]:.4g} for the first member (T stays >= {eta} x mass)")
        return DominatingResult(False, msg, None, math.inf, math.inf, levels, T, decay)
    pos = T > 0
    if not pos[0]:
        t_tab = np.array([0.0, lam0])
        a_tab = np.array([0.0, 1.0])
    else:
        last = int(np.flatnonzero(pos)[-1])
        a_lv = 1.0 + np.log1p(T[0] / T[: last + 1])
        t_tab = np.concatenate([[0.0], levels[: last + 1]])
        a_tab = np.concatenate([[0.0], np.maximum.accumulate(a_lv)])
    A = NFunction(t_tab, a_tab, "log", 1.0)
    ok, C = delta_regular_check(A, lam0)
    B = float(max(fsum(w * eval_A(A, f)) for f in family))
    return DominatingResult(True, "ok", A, B, C if ok else math.inf, levels, T, decay)
