"""Counterexample-guided synthesis of storage certificates.

For a fixed contraction factor kappa, supply matrix and controller, every
certificate condition is linear in the certificate coefficients and the
constants (gamma, lambda, psi). Enforcing the conditions on a finite sample
set therefore gives a linear program. Its solution is handed to the sound
interval verifier; refuting points are added to the samples and the LP is
solved again. Controller coefficients are tuned by coordinate descent on the
LP optimum.
"""

from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import least_squares

from .bnb import Budget, Status
from .certify import (CSC_CONDITIONS, ModeCertificate, StorageCertificate, SupplyMatrix, VerificationReport,
                      csc_residuals, falsify, sample_region, verify_csc)
from .lp import LinearProgram, LPStatus, SolverFailure, lp_solve
from .model import Subsystem
from .poly import Polynomial, gaussian_expectation
from .regions import Region

GOLDEN = (math.sqrt(5) - 1) / 2


def monomial_exponents(n: int, degree: int) -> list[tuple[int, ...]]:
    """All exponent vectors of total degree <= degree, graded then lexicographic."""
    out = []
    for d in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(n), d):
            e = [0] * n
            for j in combo:
                e[j] += 1
            out.append(tuple(e))
    return sorted(set(out), key=lambda e: (sum(e), tuple(-v for v in e)))


@dataclass(frozen=True)
class Template:
    """Search space for synthesize_csc.

    The certificate is a combination of monomials in the box-normalised state
    z = (x - c) / r of X, up to total degree ``degree``. Controllers are
    combinations of ``controller_degree`` monomials in x (1 gives affine).
    """

    degree: int = 4
    controller_degree: int = 1
    kappas: tuple[float, ...] = (0.90, 0.91, 0.92, 0.93, 0.94, 0.95)
    supplies: tuple[SupplyMatrix, ...] = ()
    lam_max: float = 1000.0
    psi_max: float = 1000.0
    coef_max: float = 1e6
    gap: float = 1e-2
    margin: float = 1.0
    psi_weight: float = 100.0
    nonneg: bool = True
    samples_per_region: int = 64
    seed: int = 0
    controller_target: float = 0.5
    tune_controller: bool = True
    fixed_controllers: tuple[tuple[Polynomial, ...], ...] | None = None

    def __post_init__(self):
        if self.degree < 2 or self.degree % 2:
            raise ValueError(f"certificate degree must be even and >= 2, got {self.degree}")
        if self.controller_degree < 0:
            raise ValueError("controller degree must be >= 0")
        if not self.kappas or any(not 0 < k < 1 for k in self.kappas):
            raise ValueError("kappa grid must be non-empty and inside (0, 1)")
        if not self.supplies:
            raise ValueError("at least one supply matrix candidate is required")
        if self.lam_max <= 0 or self.psi_max < 0 or self.gap <= 0 or self.margin < 0:
            raise ValueError("lam_max and gap must be positive, psi_max and margin non-negative")


@dataclass
class SynthBudget:
    max_rounds: int = 100
    falsify_samples: int = 4000
    points_per_round: int = 12
    tune_passes: int = 2
    golden_steps: int = 10
    verify_budget: Budget = field(default_factory=Budget)
    tol: float = 1e-6


@dataclass
class CellDiagnostics:
    kappa: float
    supply_index: int
    status: str
    rounds: int = 0
    lp_solves: int = 0
    objective: float | None = None
    history: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"kappa": self.kappa, "supply_index": self.supply_index, "status": self.status,
                "rounds": self.rounds, "lp_solves": self.lp_solves, "objective": self.objective,
                "counterexamples": self.history}


@dataclass
class SynthResult:
    certificate: StorageCertificate | None
    report: VerificationReport | None
    cells: list[CellDiagnostics]
    messages: list[str] = field(default_factory=list)

    @property
    def proved(self) -> bool:
        return self.certificate is not None and self.report is not None and self.report.proved

    def diagnostics(self) -> dict:
        return {"status": "proved" if self.proved else "exhausted", "messages": self.messages,
                "cells": [c.to_dict() for c in self.cells]}


# --- basis and controllers ----------------------------------------------------

class Basis:
    """Normalised monomial basis of the certificate."""

    def __init__(self, sub: Subsystem, degree: int):
        self.sub = sub
        self.exponents = monomial_exponents(sub.n, degree)
        self.center = np.asarray(sub.X.center(), dtype=float)
        half = (np.asarray(sub.X.hi, float) - np.asarray(sub.X.lo, float)) / 2
        self.radius = np.where(half > 0, half, 1.0)
        space = sub.space
        z = [(Polynomial.var(space, v) - float(c)).scale(1.0 / float(r))
             for v, c, r in zip(sub.state_vars, self.center, self.radius)]
        self.polys = [self._monomial(z, e) for e in self.exponents]

    def __len__(self):
        return len(self.exponents)

    def _monomial(self, factors: Sequence[Polynomial], e: tuple[int, ...]) -> Polynomial:
        out = Polynomial.constant(self.sub.space, 1.0)
        for f, k in zip(factors, e):
            if k:
                out = out * (f ** k)
        return out

    def values(self, x: np.ndarray) -> np.ndarray:
        """Basis values at states x, shape (points, K)."""
        z = (np.atleast_2d(x) - self.center) / self.radius
        return np.stack([np.prod(z ** np.array(e), axis=1) for e in self.exponents], axis=1)

    def combine(self, coef: np.ndarray) -> Polynomial:
        out = Polynomial.zero(self.sub.space)
        for c, p in zip(coef, self.polys):
            if c:
                out = out + p.scale(float(c))
        return out

    def expected_after(self, fcl: Sequence[Polynomial]) -> list[Polynomial]:
        """E[phi_k(f_cl)] for every basis function, as polynomials in (x, w)."""
        z = [(f - float(c)).scale(1.0 / float(r)) for f, c, r in zip(fcl, self.center, self.radius)]
        powers: dict[tuple[int, int], Polynomial] = {}

        def power(j, k):
            if (j, k) not in powers:
                powers[(j, k)] = Polynomial.constant(self.sub.space, 1.0) if k == 0 else power(j, k - 1) * z[j]
            return powers[(j, k)]

        out = []
        for e in self.exponents:
            m = Polynomial.constant(self.sub.space, 1.0)
            for j, k in enumerate(e):
                if k:
                    m = m * power(j, k)
            out.append(gaussian_expectation(m, self.sub.noise_vars))
        return out


class ControllerFamily:
    """Per-mode polynomial controllers over a fixed monomial basis in x."""

    def __init__(self, sub: Subsystem, degree: int):
        self.sub = sub
        self.exponents = monomial_exponents(sub.n, degree)
        self.size = sub.m * len(self.exponents)
        space = sub.space
        xs = [Polynomial.var(space, v) for v in sub.state_vars]
        self.monomials = []
        for e in self.exponents:
            m = Polynomial.constant(space, 1.0)
            for f, k in zip(xs, e):
                if k:
                    m = m * (f ** k)
            self.monomials.append(m)

    def polys(self, theta: np.ndarray) -> tuple[Polynomial, ...]:
        K = len(self.exponents)
        out = []
        for j in range(self.sub.m):
            c = theta[j * K:(j + 1) * K]
            p = Polynomial.zero(self.sub.space)
            for cj, m in zip(c, self.monomials):
                if cj:
                    p = p + m.scale(float(cj))
            out.append(p)
        return tuple(out)

    def values(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        feats = np.stack([np.prod(np.atleast_2d(x) ** np.array(e), axis=1) for e in self.exponents], axis=1)
        K = len(self.exponents)
        if not self.sub.m:
            return np.zeros((len(feats), 0))
        return np.stack([feats @ theta[j * K:(j + 1) * K] for j in range(self.sub.m)], axis=1)

    def scales(self) -> np.ndarray:
        """Natural step size per coefficient: U width over the size of the monomial on X."""
        xmax = np.maximum(np.abs(np.asarray(self.sub.X.lo, float)), np.abs(np.asarray(self.sub.X.hi, float)))
        xmax = np.where(xmax > 0, xmax, 1.0)
        uw = np.asarray(self.sub.U.hi, float) - np.asarray(self.sub.U.lo, float)
        uw = np.where(uw > 0, uw, 1.0)
        out = []
        for j in range(self.sub.m):
            for e in self.exponents:
                out.append(uw[j] / float(np.prod(xmax ** np.array(e))))
        return np.array(out)


def initial_controller(sub: Subsystem, family: ControllerFamily, mode: int, target: float,
                       rng: np.random.Generator) -> np.ndarray:
    """Least-squares controller pulling the nominal closed loop towards the centre of X0.

    The fit uses states of X outside the unsafe set (all of X if that set is
    empty), the centre of W and zero noise; the target map contracts by
    ``target`` towards the centre of X0. Leaving U is penalised.
    """
    if not family.size:
        return np.zeros(0)
    pts = sample_region(Region.of(sub.X), 256, rng)
    keep = np.array([not sub.Xu.contains(x) for x in pts])
    if keep.sum() >= 4:
        pts = pts[keep]
    c0 = np.asarray(sub.X0.center(), float)
    goal = c0 + target * (pts - c0)
    names = sub.state_vars + sub.input_vars + sub.dist_vars + sub.noise_vars
    fs = [f.compile(names) for f in sub.dynamics[mode]]
    wc = np.broadcast_to(np.asarray(sub.W.center(), float), (len(pts), sub.p)) if sub.p else np.zeros((len(pts), 0))
    zeros = np.zeros((len(pts), sub.noise))
    ulo, uhi = np.asarray(sub.U.lo, float), np.asarray(sub.U.hi, float)
    xr = (np.asarray(sub.X.hi, float) - np.asarray(sub.X.lo, float))
    xr = np.where(xr > 0, xr, 1.0)
    ur = np.where(uhi - ulo > 0, uhi - ulo, 1.0)

    def resid(theta):
        nu = family.values(theta, pts)
        arg = np.hstack([pts, nu, wc, zeros])
        err = np.stack([f(arg) for f in fs], axis=1) - goal
        out_u = (np.maximum(nu - uhi, 0) + np.maximum(ulo - nu, 0)) / ur
        return np.concatenate([(err / xr).ravel(), out_u.ravel()])

    theta0 = np.zeros(family.size)
    K = len(family.exponents)
    for j in range(sub.m):
        theta0[j * K] = (ulo[j] + uhi[j]) / 2
    sol = least_squares(resid, theta0, x_scale=family.scales(), method="lm" if len(resid(theta0)) >= len(theta0) else "trf")
    return sol.x


# --- the sampled linear program --------------------------------------------------

@dataclass
class SampleSet:
    init: np.ndarray
    unsafe: np.ndarray
    drift: np.ndarray
    nonneg: np.ndarray

    def copy(self) -> "SampleSet":
        return SampleSet(self.init.copy(), self.unsafe.copy(), self.drift.copy(), self.nonneg.copy())

    def add(self, condition: str, points: np.ndarray) -> int:
        cur = getattr(self, condition)
        pts = np.atleast_2d(points)
        fresh = [p for p in pts if not np.any(np.all(np.isclose(cur, p, rtol=0, atol=1e-12), axis=1))]
        if fresh:
            setattr(self, condition, np.vstack([cur, np.array(fresh)]))
        return len(fresh)

    @property
    def size(self) -> int:
        return len(self.init) + len(self.unsafe) + len(self.drift) + len(self.nonneg)


def initial_samples(sub: Subsystem, count: int, seed: int) -> SampleSet:
    rng = np.random.default_rng([seed, 7])
    xw = Region.of(sub.X.product(sub.W)) if sub.p else Region.of(sub.X)
    return SampleSet(
        init=sample_region(Region.of(sub.X0), count, rng),
        unsafe=sample_region(sub.Xu, count, rng),
        drift=sample_region(xw, count, rng),
        nonneg=sample_region(Region.of(sub.X), count, rng),
    )


class CellProblem:
    """LP builder for one (kappa, supply) cell; the controller varies."""

    def __init__(self, sub: Subsystem, tmpl: Template, basis: Basis, family: ControllerFamily,
                 kappa: float, supply: SupplyMatrix):
        self.sub, self.tmpl, self.basis, self.family = sub, tmpl, basis, family
        self.kappa = kappa
        self.supply = supply
        self.rate = supply.rate(sub).compile(self._drift_names())
        K = len(basis)
        self.K = K
        self.width = K + 3
        self.labels = []
        for p in range(sub.modes):
            self.labels += [f"B{p}[{k}]" for k in range(K)] + [f"gamma{p}", f"lambda{p}", f"psi{p}"]

    def _drift_names(self):
        return self.sub.state_vars + self.sub.dist_vars

    def col(self, p: int, what: str) -> int:
        base = p * self.width
        return base + {"gamma": self.K, "lambda": self.K + 1, "psi": self.K + 2}[what]

    def expectation_tables(self, theta: Sequence[np.ndarray]) -> list[list[Callable]]:
        """Compiled E[phi_k(f_cl)] per mode for controller parameters theta[p]."""
        names = self._drift_names()
        out = []
        for p in range(self.sub.modes):
            bind = dict(zip(self.sub.input_vars, self.family.polys(theta[p])))
            fcl = [f.substitute(bind, self.sub.space) if bind else f for f in self.sub.dynamics[p]]
            out.append([e.compile(names) for e in self.basis.expected_after(fcl)])
        return out

    def build(self, samples: SampleSet, tables) -> LinearProgram:
        sub, t, K, W = self.sub, self.tmpl, self.K, self.width
        nvar = W * sub.modes
        rows, rhs = [], []

        def block(n):
            return np.zeros((n, nvar))

        pi = sub.chain.matrix()
        n = sub.n
        for p in range(sub.modes):
            base = p * W
            # B_p(x) - gamma_p <= -margin on X0
            if len(samples.init):
                A = block(len(samples.init))
                A[:, base:base + K] = self.basis.values(samples.init)
                A[:, self.col(p, "gamma")] = -1
                rows.append(A)
                rhs.append(np.full(len(A), -t.margin))
            # lambda_p - B_p(x) <= -margin on Xu
            if len(samples.unsafe):
                A = block(len(samples.unsafe))
                A[:, base:base + K] = -self.basis.values(samples.unsafe)
                A[:, self.col(p, "lambda")] = 1
                rows.append(A)
                rhs.append(np.full(len(A), -t.margin))
            # sum_q pi_pq E[B_q(f)] - kappa B_p(x) - psi_p <= s(x, w) - margin on X x W
            if len(samples.drift):
                pts = samples.drift
                A = block(len(pts))
                E = np.stack([f(pts) for f in tables[p]], axis=1)
                for q in range(sub.modes):
                    if pi[p, q]:
                        A[:, q * W:q * W + K] += pi[p, q] * E
                A[:, base:base + K] -= self.kappa * self.basis.values(pts[:, :n])
                A[:, self.col(p, "psi")] = -1
                rows.append(A)
                rhs.append(self.rate(pts) - t.margin)
            # B_p >= margin on X
            if t.nonneg and len(samples.nonneg):
                A = block(len(samples.nonneg))
                A[:, base:base + K] = -self.basis.values(samples.nonneg)
                rows.append(A)
                rhs.append(np.full(len(A), -t.margin))
            # level gap against every mode, so min lambda > max gamma
            A = block(sub.modes)
            A[:, self.col(p, "gamma")] = 1
            for q in range(sub.modes):
                A[q, self.col(q, "lambda")] -= 1
            rows.append(A)
            rhs.append(np.full(sub.modes, -t.gap))
            # bounds
            for what, hi in (("gamma", t.lam_max), ("lambda", t.lam_max), ("psi", t.psi_max)):
                A = block(2)
                A[0, self.col(p, what)] = 1
                A[1, self.col(p, what)] = -1
                rows.append(A)
                rhs.append(np.array([hi, 0.0]))
            A = np.vstack([block(K), block(K)])
            A[:K, base:base + K] = np.eye(K)
            A[K:, base:base + K] = -np.eye(K)
            rows.append(A)
            rhs.append(np.full(2 * K, t.coef_max))
        obj = np.zeros(nvar)
        for p in range(sub.modes):
            obj[self.col(p, "lambda")] = 1
            obj[self.col(p, "gamma")] = -1
            obj[self.col(p, "psi")] = -t.psi_weight
        return LinearProgram(self.labels, np.vstack(rows), np.concatenate(rhs), obj)

    def certificate(self, y: np.ndarray, theta: Sequence[np.ndarray]) -> StorageCertificate:
        modes = []
        for p in range(self.sub.modes):
            base = p * self.width
            B = self.basis.combine(y[base:base + self.K])
            g = max(0.0, float(y[self.col(p, "gamma")]))
            lam = max(0.0, float(y[self.col(p, "lambda")]))
            psi = max(0.0, float(y[self.col(p, "psi")]))
            modes.append(ModeCertificate(B, self.family.polys(theta[p]), self.kappa, g, lam, psi))
        return StorageCertificate(tuple(modes), self.supply)


def _solve(problem: CellProblem, samples: SampleSet, tables):
    lp = problem.build(samples, tables)
    try:
        res = lp_solve(lp)
    except SolverFailure:
        return None
    return res if res.status is LPStatus.OPTIMAL else None


def golden_section(f: Callable[[float], float], lo: float, hi: float, steps: int) -> tuple[float, float]:
    """Maximise f on [lo, hi]; returns (argmax, value) among the evaluated points."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    best = max((fc, c), (fd, d))
    for _ in range(steps):
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
        best = max(best, (fc, c), (fd, d))
    return best[1], best[0]


def tune_controllers(problem: CellProblem, samples: SampleSet, theta: list[np.ndarray], budget: SynthBudget,
                     counter: list[int]) -> tuple[list[np.ndarray], float]:
    """Coordinate descent over the controller coefficients against the LP optimum."""

    def value(th):
        counter[0] += 1
        r = _solve(problem, samples, problem.expectation_tables(th))
        return -math.inf if r is None else float(r.value)

    theta = [t.copy() for t in theta]
    best = value(theta)
    scales = problem.family.scales()
    for _ in range(budget.tune_passes):
        for p in range(problem.sub.modes):
            for k in range(len(theta[p])):
                r = scales[k]
                centre = theta[p][k]

                def f(v, p=p, k=k):
                    th = [t.copy() for t in theta]
                    th[p][k] = v
                    return value(th)

                arg, val = golden_section(f, centre - r, centre + r, budget.golden_steps)
                if val > best:
                    best = val
                    theta[p][k] = arg
    return theta, best


def _worst_points(res, count: int, sample_count: int, rng: np.random.Generator, tol: float) -> np.ndarray:
    pts = sample_region(res.region, sample_count, rng)
    vals = res.poly.compile(res.region.names)(pts)
    order = np.argsort(vals, kind="stable")
    bad = order[vals[order] < -tol][:count]
    return pts[bad]


def overlap_message(sub: Subsystem) -> str | None:
    for b in sub.Xu:
        if sub.X0.intersects(b):
            return "γ < λ unsatisfiable on overlap: X0 meets the unsafe set"
    return None


def synthesize_csc(sub: Subsystem, tmpl: Template, budget: SynthBudget | None = None,
                   log: Callable[[str], None] | None = None) -> SynthResult:
    """Search the template for a storage certificate and controllers.

    Returns a SynthResult whose certificate is set only together with an
    all-Proved verification report. Cells are tried in (kappa ascending,
    supply candidate order); the first proved cell wins.
    """
    budget = budget or SynthBudget()
    say = log or (lambda msg: None)
    msg = overlap_message(sub)
    if msg:
        return SynthResult(None, None, [], [msg])
    for s in tmpl.supplies:
        if (s.p, s.q) != (sub.p, sub.q):
            raise ValueError("supply candidate dimensions do not match the subsystem")

    basis = Basis(sub, tmpl.degree)
    family = ControllerFamily(sub, tmpl.controller_degree)
    conditions = CSC_CONDITIONS + (("nonneg",) if tmpl.nonneg else ())
    rng = np.random.default_rng([tmpl.seed, 11])
    if tmpl.fixed_controllers is not None:
        theta0 = [_theta_from_polys(family, ps) for ps in tmpl.fixed_controllers]
    else:
        theta0 = [initial_controller(sub, family, p, tmpl.controller_target, rng) for p in range(sub.modes)]
    cells = []
    for kappa in sorted(tmpl.kappas):
        for si, supply in enumerate(tmpl.supplies):
            cell = CellDiagnostics(kappa, si, "running")
            cells.append(cell)
            problem = CellProblem(sub, tmpl, basis, family, kappa, supply)
            samples = initial_samples(sub, tmpl.samples_per_region, tmpl.seed)
            counter = [0]
            theta = [t.copy() for t in theta0]
            if tmpl.tune_controller and tmpl.fixed_controllers is None:
                theta, val = tune_controllers(problem, samples, theta, budget, counter)
                say(f"kappa={kappa:g} supply#{si}: tuned controller, LP value {val:.6g}")
            tables = problem.expectation_tables(theta)
            found = None
            for rnd in range(1, budget.max_rounds + 1):
                cell.rounds = rnd
                counter[0] += 1
                res = _solve(problem, samples, tables)
                if res is None:
                    cell.status = "lp-infeasible"
                    break
                cell.objective = float(res.value)
                cert = problem.certificate(res.point, theta)
                added = _refine(sub, cert, samples, conditions, budget, rng, cell)
                if added:
                    say(f"kappa={kappa:g} supply#{si} round {rnd}: {added} sampled counterexamples")
                    continue
                report = verify_csc(sub, cert, budget.tol, budget.verify_budget, conditions)
                if report.proved:
                    found = (cert, report)
                    cell.status = "proved"
                    break
                added = 0
                for (p, c), out in sorted(report.entries.items()):
                    if out.status is Status.COUNTEREXAMPLE:
                        pt = np.array([out.point[n] for n in csc_residuals(sub, cert, p)[c].region.names])
                        added += samples.add(c, pt)
                        cell.history.append({"mode": p, "condition": c, "point": out.point,
                                             "value": out.value, "source": "branch-and-bound"})
                say(f"kappa={kappa:g} supply#{si} round {rnd}: verifier added {added} points")
                if not added:
                    cell.status = "verifier-unknown"
                    break
            else:
                cell.status = "rounds-exhausted"
            cell.lp_solves = counter[0]
            if found:
                return SynthResult(found[0], found[1], cells, [f"proved at kappa={kappa:g}, supply #{si}"])
    return SynthResult(None, None, cells, ["budget exhausted without a proved certificate"])


def _refine(sub, cert, samples: SampleSet, conditions, budget: SynthBudget, rng, cell) -> int:
    """Add the worst sampled violations of every residual; returns the count added."""
    added = 0
    for p in range(sub.modes):
        res = csc_residuals(sub, cert, p)
        for c in conditions:
            pts = _worst_points(res[c], budget.points_per_round, budget.falsify_samples, rng, budget.tol)
            if len(pts):
                n = samples.add(c, pts)
                added += n
                if n:
                    cell.history.append({"mode": p, "condition": c,
                                         "point": dict(zip(res[c].region.names, map(float, pts[0]))),
                                         "value": float(res[c].poly.compile(res[c].region.names)(pts[:1])[0]),
                                         "source": "sampling"})
    return added


def _theta_from_polys(family: ControllerFamily, polys: Sequence[Polynomial]) -> np.ndarray:
    K = len(family.exponents)
    theta = np.zeros(family.size)
    xs = family.sub.state_vars
    idx = [family.sub.space.index(v) for v in xs]
    for j, p in enumerate(polys):
        for e, c in p.terms.items():
            ex = tuple(e[i] for i in idx)
            if sum(e) != sum(ex):
                raise ValueError("controllers may depend on the state only")
            if ex not in family.exponents:
                raise ValueError(f"controller monomial {ex} outside the template basis")
            theta[j * K + family.exponents.index(ex)] = c
    return theta


# --- SOS program export -------------------------------------------------------

def _interval_g(names: Sequence[str], box) -> list[str]:
    return [f"({v} - {lo!r})*({hi!r} - {v})" for v, lo, hi in zip(names, box.lo, box.hi)]


def export_sos(sub: Subsystem, tmpl: Template, path=None, multiplier_degree: int | None = None) -> str:
    """Text listing of the SOS feasibility program for external SOS tools.

    Sets are written as vectors of box inequalities g >= 0. Multipliers are
    symbolic polynomials of the degrees in the [templates] section.
    """
    d = tmpl.degree
    md = multiplier_degree if multiplier_degree is not None else d
    xs = ", ".join(sub.state_vars)
    lines = ["# storage certificate SOS program", ""]
    lines.append("[sets]")
    lines.append(f"g0 = [{'; '.join(_interval_g(sub.state_vars, sub.X0))}]")
    for k, b in enumerate(sub.Xu):
        lines.append(f"gu{k} = [{'; '.join(_interval_g(sub.state_vars, b))}]")
    lines.append(f"g = [{'; '.join(_interval_g(sub.state_vars, sub.X))}]")
    lines.append(f"gnu = [{'; '.join(_interval_g(sub.input_vars, sub.U))}]")
    if sub.p:
        lines.append(f"gw = [{'; '.join(_interval_g(sub.dist_vars, sub.W))}]")
    lines.append("")
    lines.append("[templates]")
    lines.append(f"B_p({xs}) : degree {d}, modes {sub.modes}")
    lines.append(f"controller l_nu_p({xs}) : degree {tmpl.controller_degree}, inputs {sub.m}")
    lines.append(f"multiplier l0 : degree {md}")
    lines.append(f"multiplier lu : degree {md}")
    lines.append(f"multiplier l : degree {md}")
    lines.append(f"multiplier lnu : degree {md}")
    if sub.p:
        lines.append(f"multiplier lw : degree {md}")
    lines.append(f"supply X : symmetric {sub.p + sub.q}x{sub.p + sub.q}")
    lines.append(f"kappa grid : {', '.join(f'{k:g}' for k in tmpl.kappas)}")
    lines.append("")

    z = " ; ".join(list(sub.dist_vars) + [h.to_text() for h in sub.h])
    nu = "; ".join(f"l_nu{j + 1}_p" for j in range(sub.m))
    for p in range(sub.modes):
        lines.append("[expression-init]")
        lines.append(f"mode {p + 1}: -B_{p + 1}({xs}) - l0' * g0 + gamma_{p + 1}")
        lines.append("[expression-unsafe]")
        for k in range(len(sub.Xu)):
            lines.append(f"mode {p + 1}: B_{p + 1}({xs}) - lu{k}' * gu{k} - lambda_{p + 1}")
        lines.append("[expression-drift]")
        fs = "; ".join(f.to_text() for f in sub.dynamics[p])
        nexts = []
        for q, prob in enumerate(sub.chain.pi[p]):
            if prob:
                term = f"B_{q + 1}(f)" if not sub.noise else f"E[B_{q + 1}(f)]"
                nexts.append(f"{prob!r}*{term}")
        expect = " + ".join(nexts) if nexts else "0"
        lines.append(f"mode {p + 1}: kappa_{p + 1}*B_{p + 1}({xs}) + psi_{p + 1} + [{z}]' X [{z}] - ({expect})"
                     f" - l' * g - lnu' * gnu" + (" - lw' * gw" if sub.p else "")
                     + f"   where f = [{fs}], nu = [{nu.replace('_p', f'_{p + 1}')}]")
    lines.append("")
    text = "\n".join(lines)
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    return text


SECTION = re.compile(r"^\[(expression-init|expression-unsafe|expression-drift|sets|templates)\]\s*$")


def parse_sos_export(text: str) -> dict[str, list[str]]:
    """Section name to its non-empty lines; repeated sections accumulate."""
    out: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        m = SECTION.match(line.strip())
        if m:
            current = m.group(1)
            out.setdefault(current, [])
            continue
        if current and line.strip() and not line.startswith("#"):
            out[current].append(line.strip())
    return out


def sos_constraint_count(text: str) -> int:
    sec = parse_sos_export(text)
    return sum(len(sec.get(k, [])) for k in ("expression-init", "expression-unsafe", "expression-drift"))
