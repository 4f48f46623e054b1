"""Interval enclosures of polynomials over boxes and branch-and-bound
nonnegativity proofs.

Two sound enclosures are available. The monomial enclosure multiplies
per-variable interval powers term by term. The centered enclosure first
re-expands the polynomial around the box midpoint and then bounds each
recentred monomial over the symmetric half-width box; its overestimation
shrinks quadratically with box width, so branch-and-bound uses the
intersection of both. A floating-point allowance widens every bound.
"""

from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .poly import Polynomial, PolynomialError
from .regions import Box, Region, RegionError

EPS = np.finfo(float).eps


class Status(str, enum.Enum):
    PROVED = "proved"
    COUNTEREXAMPLE = "counterexample"
    UNKNOWN = "unknown"


@dataclass
class NonnegOutcome:
    status: Status
    point: dict[str, float] | None = None
    value: float | None = None
    lower_bound: float | None = None
    remaining_volume: float = 0.0
    remaining_fraction: float = 0.0
    leaves: int = 0
    max_depth: int = 0

    @property
    def proved(self) -> bool:
        return self.status is Status.PROVED

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "point": self.point,
            "value": self.value,
            "lower_bound": self.lower_bound,
            "remaining_volume": self.remaining_volume,
            "remaining_fraction": self.remaining_fraction,
            "leaves": self.leaves,
            "max_depth": self.max_depth,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NonnegOutcome":
        return cls(Status(d["status"]), d.get("point"), d.get("value"), d.get("lower_bound"),
                   d.get("remaining_volume", 0.0), d.get("remaining_fraction", 0.0),
                   d.get("leaves", 0), d.get("max_depth", 0))


@dataclass(frozen=True)
class Budget:
    max_leaves: int = 1_000_000
    min_width_frac: float = 1e-6
    batch: int = 8192


def _power_interval(lo: np.ndarray, hi: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    if k == 0:
        one = np.ones_like(lo)
        return one, one
    a, b = lo ** k, hi ** k
    if k % 2:
        return a, b
    low = np.where((lo <= 0) & (hi >= 0), 0.0, np.minimum(a, b))
    return low, np.maximum(a, b)


class Enclosure:
    """Precomputed data for batched enclosures of one polynomial."""

    def __init__(self, p: Polynomial, names: tuple[str, ...]):
        cp = p.compile(names)
        self.names = names
        self.exps = cp.exps
        self.coeffs = cp.coeffs
        self.compiled = cp
        self.degree = int(self.exps.sum(axis=1).max()) if len(self.coeffs) else 0
        n = len(names)
        # downward closure of the exponent set, indexed for the recentred form
        closure: dict[tuple[int, ...], int] = {}
        pairs_t, pairs_a, binoms, diffs = [], [], [], []
        for t, beta in enumerate(self.exps):
            for alpha in itertools.product(*(range(int(b) + 1) for b in beta)):
                a = closure.setdefault(alpha, len(closure))
                pairs_t.append(t)
                pairs_a.append(a)
                binoms.append(math.prod(math.comb(int(b), int(c)) for b, c in zip(beta, alpha)))
                diffs.append([int(b) - int(c) for b, c in zip(beta, alpha)])
        self.alphas = np.array(list(closure), dtype=np.int64).reshape(-1, n)
        self.pair_coef = self.coeffs[pairs_t] * np.array(binoms, dtype=float) if pairs_t else np.zeros(0)
        self.pair_diff = np.array(diffs, dtype=np.int64).reshape(-1, n)
        self.scatter = np.zeros((len(pairs_t), len(closure)))
        self.scatter[np.arange(len(pairs_t)), pairs_a] = 1.0
        self.alpha_even = np.all(self.alphas % 2 == 0, axis=1)
        self.alpha_zero = np.all(self.alphas == 0, axis=1)
        self.slack = (self.degree + len(self.coeffs) + 2) * EPS

    def monomial(self, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        K = lo.shape[0]
        if len(self.coeffs) == 0:
            z = np.zeros(K)
            return z, z
        tlo = np.ones((K, len(self.coeffs)))
        thi = np.ones((K, len(self.coeffs)))
        for j in range(len(self.names)):
            col = self.exps[:, j]
            if not col.any():
                continue
            plo = np.empty_like(tlo)
            phi = np.empty_like(thi)
            for k in np.unique(col):
                mask = col == k
                a, b = _power_interval(lo[:, j], hi[:, j], int(k))
                plo[:, mask] = a[:, None]
                phi[:, mask] = b[:, None]
            prods = np.stack([tlo * plo, tlo * phi, thi * plo, thi * phi])
            tlo, thi = prods.min(axis=0), prods.max(axis=0)
        c = self.coeffs
        low = np.where(c >= 0, c * tlo, c * thi)
        high = np.where(c >= 0, c * thi, c * tlo)
        err = self.slack * (np.abs(low) + np.abs(high)).sum(axis=1)
        return low.sum(axis=1) - err, high.sum(axis=1) + err

    def centered(self, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        K = lo.shape[0]
        if len(self.coeffs) == 0:
            z = np.zeros(K)
            return z, z
        mid = (lo + hi) / 2
        rad = (hi - lo) / 2
        vals = np.empty((K, len(self.pair_coef)))
        vals[:] = self.pair_coef
        for j in range(len(self.names)):
            d = self.pair_diff[:, j]
            if d.any():
                vals *= mid[:, j, None] ** d
        shifted = vals @ self.scatter
        err = self.slack * (np.abs(vals) @ self.scatter)
        rpow = np.ones((K, len(self.alphas)))
        for j in range(len(self.names)):
            a = self.alphas[:, j]
            if a.any():
                rpow *= rad[:, j, None] ** a
        mag = np.abs(shifted) * rpow
        low_terms = np.where(self.alpha_even, np.minimum(shifted, 0.0) * rpow, -mag)
        high_terms = np.where(self.alpha_even, np.maximum(shifted, 0.0) * rpow, mag)
        low_terms[:, self.alpha_zero] = shifted[:, self.alpha_zero]
        high_terms[:, self.alpha_zero] = shifted[:, self.alpha_zero]
        e = (err * rpow).sum(axis=1) + self.slack * mag.sum(axis=1)
        return low_terms.sum(axis=1) - e, high_terms.sum(axis=1) + e

    def bounds(self, lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        a1, b1 = self.monomial(lo, hi)
        a2, b2 = self.centered(lo, hi)
        return np.maximum(a1, a2), np.minimum(b1, b2)


def _box_names(p: Polynomial, box: Box) -> tuple[str, ...]:
    uncovered = set(p.free_vars()) - set(box.names)
    if uncovered:
        raise PolynomialError(f"box does not cover variables {sorted(uncovered)}")
    return box.names


def interval_bound(p: Polynomial, box: Box, method: str = "monomial") -> tuple[float, float]:
    """Sound enclosure [lo, hi] of p over box.

    ``method`` is ``"monomial"`` (per-monomial interval products),
    ``"centered"`` or ``"both"`` (intersection).
    """
    names = _box_names(p, box)
    enc = Enclosure(p, names)
    lo = np.array([box.lo], dtype=float)
    hi = np.array([box.hi], dtype=float)
    if method == "monomial":
        a, b = enc.monomial(lo, hi)
    elif method == "centered":
        a, b = enc.centered(lo, hi)
    elif method == "both":
        a, b = enc.bounds(lo, hi)
    else:
        raise ValueError(f"unknown enclosure method {method!r}")
    if len(p.terms) <= 1 and p.degree == 0:
        c = p.constant_term()
        return c, c
    return float(a[0]), float(b[0])


def _prove_box(p: Polynomial, enc: Enclosure, box: Box, tol: float, budget: Budget) -> NonnegOutcome:
    names = box.names
    lo0 = np.array(box.lo, dtype=float)
    hi0 = np.array(box.hi, dtype=float)
    width0 = hi0 - lo0
    scale = np.where(width0 > 0, width0, 1.0)
    min_width = budget.min_width_frac * scale
    total_volume = float(np.prod(np.where(width0 > 0, width0, 1.0)))

    q_lo = lo0[None, :]
    q_hi = hi0[None, :]
    q_depth = np.zeros(1, dtype=np.int64)
    leaves = 0
    max_depth = 0
    stuck_lo, stuck_hi, stuck_lb = [], [], []

    while len(q_lo):
        take = min(budget.batch, len(q_lo))
        lo, hi, depth = q_lo[:take], q_hi[:take], q_depth[:take]
        q_lo, q_hi, q_depth = q_lo[take:], q_hi[take:], q_depth[take:]
        leaves += take
        max_depth = max(max_depth, int(depth.max()))

        mid = (lo + hi) / 2
        vals = enc.compiled(mid)
        bad = np.nonzero(vals < -tol)[0]
        if len(bad):
            order = sorted(bad, key=lambda i: (vals[i], tuple(lo[i])))
            for i in order:
                pt = {n: float(v) for n, v in zip(names, mid[i])}
                v = p.eval(pt)
                if v < -tol:
                    return NonnegOutcome(Status.COUNTEREXAMPLE, pt, v, leaves=leaves, max_depth=max_depth)

        lb, _ = enc.bounds(lo, hi)
        open_ = lb < -tol
        lo, hi, depth, lb = lo[open_], hi[open_], depth[open_], lb[open_]
        if not len(lo):
            continue
        rel = (hi - lo) / scale
        tiny = np.all((hi - lo) <= min_width, axis=1)
        if tiny.any():
            stuck_lo.append(lo[tiny])
            stuck_hi.append(hi[tiny])
            stuck_lb.append(lb[tiny])
            lo, hi, depth, rel = lo[~tiny], hi[~tiny], depth[~tiny], rel[~tiny]
        if not len(lo):
            continue
        axis = np.argmax(rel, axis=1)
        rows = np.arange(len(lo))
        split = (lo[rows, axis] + hi[rows, axis]) / 2
        left_hi = hi.copy()
        left_hi[rows, axis] = split
        right_lo = lo.copy()
        right_lo[rows, axis] = split
        child_lo = np.empty((2 * len(lo), lo.shape[1]))
        child_hi = np.empty_like(child_lo)
        child_lo[0::2], child_hi[0::2] = lo, left_hi
        child_lo[1::2], child_hi[1::2] = right_lo, hi
        q_lo = np.concatenate([q_lo, child_lo])
        q_hi = np.concatenate([q_hi, child_hi])
        q_depth = np.concatenate([q_depth, np.repeat(depth + 1, 2)])

        if leaves >= budget.max_leaves and len(q_lo):
            stuck_lo.append(q_lo)
            stuck_hi.append(q_hi)
            stuck_lb.append(enc.bounds(q_lo, q_hi)[0])
            break

    if not stuck_lo:
        return NonnegOutcome(Status.PROVED, leaves=leaves, max_depth=max_depth)
    s_lo = np.concatenate(stuck_lo)
    s_hi = np.concatenate(stuck_hi)
    s_lb = np.concatenate(stuck_lb)
    w = np.where(width0 > 0, s_hi - s_lo, 1.0)
    vol = float(np.prod(w, axis=1).sum())
    return NonnegOutcome(Status.UNKNOWN, lower_bound=float(s_lb.min()), remaining_volume=vol,
                         remaining_fraction=vol / total_volume, leaves=leaves, max_depth=max_depth)


def prove_nonneg(p: Polynomial, region: Region | Box, tol: float = 1e-6,
                 budget: Budget | None = None) -> NonnegOutcome:
    """Decide p >= -tol on a union of boxes by interval branch-and-bound.

    Union members are processed in order; the first member yielding a
    counterexample decides the outcome.
    """
    if tol < 0:
        raise ValueError("tol must be non-negative")
    budget = budget or Budget()
    if isinstance(region, Box):
        region = Region.of(region)
    if region.is_empty():
        raise RegionError("cannot prove nonnegativity on an empty region")
    enc = Enclosure(p, _box_names(p, region.boxes[0]))
    outcomes = [_prove_box(p, enc, box, tol, budget) for box in region]
    leaves = sum(o.leaves for o in outcomes)
    depth = max(o.max_depth for o in outcomes)
    for o in outcomes:
        if o.status is Status.COUNTEREXAMPLE:
            o.leaves, o.max_depth = leaves, depth
            return o
    unknown = [o for o in outcomes if o.status is Status.UNKNOWN]
    if unknown:
        total = sum(float(np.prod(np.where(b.widths() > 0, b.widths(), 1.0))) for b in region)
        vol = sum(o.remaining_volume for o in unknown)
        return NonnegOutcome(Status.UNKNOWN, lower_bound=min(o.lower_bound for o in unknown),
                             remaining_volume=vol, remaining_fraction=vol / total,
                             leaves=leaves, max_depth=depth)
    return NonnegOutcome(Status.PROVED, leaves=leaves, max_depth=depth)
