"""Storage-certificate and barrier-certificate verification.

Per subsystem and mode p the three obligations are

* init:   gamma_p - B_p(x) >= 0 on X0
* unsafe: B_p(x) - lambda_p >= 0 on Xu
* drift:  kappa_p B_p(x) + psi_p + [w; h(x)]' X [w; h(x)]
          - sum_p' pi_pp' E[B_p'(f_p(x, nu_p(x), w, sigma))] >= 0 on X x W

each discharged by interval branch-and-bound. The existential input is
always an explicit polynomial controller.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .bnb import Budget, NonnegOutcome, Status, interval_bound, prove_nonneg
from .model import Network, Subsystem
from .poly import Polynomial, VarSpace, gaussian_expectation, parse_polynomial
from .regions import Box, Region

CSC_CONDITIONS = ("init", "unsafe", "drift")
OPTIONAL_CONDITIONS = ("nonneg",)


class CertificateError(ValueError):
    pass


@dataclass(frozen=True)
class SupplyMatrix:
    """Symmetric supply matrix over [w; h(x)] with blocks X11 (p x p) .. X22 (q x q)."""

    matrix: np.ndarray = field(compare=False)
    p: int
    q: int

    def __post_init__(self):
        X = np.asarray(self.matrix, dtype=float)
        if X.shape != (self.p + self.q, self.p + self.q):
            raise CertificateError(f"supply matrix has shape {X.shape}, expected {(self.p + self.q,) * 2}")
        object.__setattr__(self, "matrix", (X + X.T) / 2)

    @classmethod
    def from_blocks(cls, X11, X12, X22) -> "SupplyMatrix":
        X11, X12, X22 = np.atleast_2d(X11), np.atleast_2d(X12), np.atleast_2d(X22)
        top = np.hstack([X11, X12])
        bottom = np.hstack([X12.T, X22])
        return cls(np.vstack([top, bottom]), X11.shape[0], X22.shape[0])

    @property
    def X11(self):
        return self.matrix[: self.p, : self.p]

    @property
    def X12(self):
        return self.matrix[: self.p, self.p:]

    @property
    def X21(self):
        return self.matrix[self.p:, : self.p]

    @property
    def X22(self):
        return self.matrix[self.p:, self.p:]

    def __eq__(self, other):
        return (isinstance(other, SupplyMatrix) and self.p == other.p and self.q == other.q
                and np.array_equal(self.matrix, other.matrix))

    def __hash__(self):
        return hash((self.p, self.q, self.matrix.tobytes()))

    def rate(self, sub: Subsystem) -> Polynomial:
        """[w; h(x)]' X [w; h(x)] as a polynomial in the subsystem space."""
        space = sub.space
        z = [Polynomial.var(space, w) for w in sub.dist_vars] + list(sub.h)
        out = Polynomial.zero(space)
        for i, zi in enumerate(z):
            for j, zj in enumerate(z):
                if self.matrix[i, j]:
                    out = out + zi * zj * float(self.matrix[i, j])
        return out


@dataclass(frozen=True)
class ModeCertificate:
    B: Polynomial
    controller: tuple[Polynomial, ...]
    kappa: float
    gamma: float
    lam: float
    psi: float

    def __post_init__(self):
        if not 0 < self.kappa < 1:
            raise CertificateError(f"kappa must lie in (0, 1), got {self.kappa}")
        for name in ("gamma", "lam", "psi"):
            if getattr(self, name) < 0:
                raise CertificateError(f"{name} must be non-negative, got {getattr(self, name)}")


@dataclass(frozen=True)
class StorageCertificate:
    modes: tuple[ModeCertificate, ...]
    supply: SupplyMatrix

    def __post_init__(self):
        if not self.modes:
            raise CertificateError("certificate has no modes")

    def mode(self, p: int) -> ModeCertificate:
        if not 0 <= p < len(self.modes):
            raise CertificateError(f"certificate has no mode {p}")
        return self.modes[p]

    def check_against(self, sub: Subsystem):
        if len(self.modes) != sub.modes:
            raise CertificateError(f"certificate has {len(self.modes)} modes, subsystem has {sub.modes}")
        if (self.supply.p, self.supply.q) != (sub.p, sub.q):
            raise CertificateError("supply matrix dimensions do not match the subsystem")
        states = set(sub.state_vars)
        for k, mc in enumerate(self.modes):
            if mc.B.space != sub.space:
                raise CertificateError(f"mode {k}: certificate is not in the subsystem varspace")
            if not set(mc.B.free_vars()) <= states:
                raise CertificateError(f"mode {k}: certificate depends on non-state variables")
            if len(mc.controller) != sub.m:
                raise CertificateError(f"mode {k}: controller has {len(mc.controller)} entries, expected {sub.m}")
            for c in mc.controller:
                if c.space != sub.space or not set(c.free_vars()) <= states:
                    raise CertificateError(f"mode {k}: controller must be a polynomial in the state")

    def to_dict(self) -> dict:
        return {
            "supply": self.supply.matrix.tolist(),
            "modes": [{"B": m.B.to_text(), "controller": [c.to_text() for c in m.controller],
                       "kappa": m.kappa, "gamma": m.gamma, "lambda": m.lam, "psi": m.psi}
                      for m in self.modes],
        }

    @classmethod
    def from_dict(cls, d: dict, sub: Subsystem) -> "StorageCertificate":
        try:
            k = sub.p + sub.q
            supply = SupplyMatrix(np.array(d["supply"], dtype=float).reshape(k, k), sub.p, sub.q)
            modes = tuple(
                ModeCertificate(parse_polynomial(m["B"], sub.space),
                                tuple(parse_polynomial(c, sub.space) for c in m["controller"]),
                                float(m["kappa"]), float(m["gamma"]), float(m["lambda"]), float(m["psi"]))
                for m in d["modes"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CertificateError(f"malformed certificate: missing or bad field {exc}") from None
        cert = cls(modes, supply)
        cert.check_against(sub)
        return cert


def load_certificates(doc: dict | str, net: Network) -> list[StorageCertificate]:
    """Certificate file: {"certificates": [{"applies_to": "all" | [i, ...], ...}]}."""
    if isinstance(doc, str):
        try:
            doc = json.loads(doc)
        except json.JSONDecodeError as exc:
            raise CertificateError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("certificates"), list):
        raise CertificateError("certificate file needs a 'certificates' array")
    out: list[StorageCertificate | None] = [None] * net.size
    for k, entry in enumerate(doc["certificates"]):
        targets = entry.get("applies_to", "all")
        idx = range(net.size) if targets == "all" else [int(i) for i in targets]
        cache = {}
        for i in idx:
            if not 0 <= i < net.size:
                raise CertificateError(f"certificates[{k}] applies to missing subsystem {i}")
            sub = net.subsystems[i]
            if sub not in cache:
                cache[sub] = StorageCertificate.from_dict(entry, sub)
            out[i] = cache[sub]
    missing = [i for i, c in enumerate(out) if c is None]
    if missing:
        raise CertificateError(f"no certificate for subsystems {missing[:10]}")
    return out


def dump_certificates(cscs: Sequence[StorageCertificate], extra: dict | None = None) -> dict:
    entries: list[dict] = []
    groups: dict[str, list[int]] = {}
    for i, c in enumerate(cscs):
        key = json.dumps(c.to_dict(), sort_keys=True)
        groups.setdefault(key, []).append(i)
    for key, idx in groups.items():
        e = json.loads(key)
        e["applies_to"] = "all" if len(groups) == 1 else idx
        entries.append(e)
    doc = {"certificates": entries}
    if extra:
        doc.update(extra)
    return doc


@dataclass(frozen=True)
class NetworkCertificate:
    weights: tuple[float, ...]
    cscs: tuple[StorageCertificate, ...]
    gamma: float
    lam: float
    kappa: float
    psi: float

    def __post_init__(self):
        if not self.lam > self.gamma:
            raise CertificateError(f"barrier certificate needs lambda > gamma, got {self.lam} <= {self.gamma}")
        if not 0 < self.kappa < 1:
            raise CertificateError(f"kappa must lie in (0, 1), got {self.kappa}")
        if self.gamma < 0 or self.psi < 0:
            raise CertificateError("gamma and psi must be non-negative")
        if any(m <= 0 for m in self.weights):
            raise CertificateError("weights must be positive")
        if len(self.weights) != len(self.cscs):
            raise CertificateError("one weight per subsystem certificate required")

    def constants(self) -> dict:
        return {"gamma": self.gamma, "lambda": self.lam, "kappa": self.kappa, "psi": self.psi}


@dataclass
class VerificationReport:
    entries: dict[tuple[int, str], NonnegOutcome]
    warnings: list[str] = field(default_factory=list)
    residual_mins: dict[tuple[int, str], float] = field(default_factory=dict)

    @property
    def verdict(self) -> Status:
        statuses = [o.status for o in self.entries.values()]
        if statuses and all(s is Status.PROVED for s in statuses):
            return Status.PROVED
        if any(s is Status.COUNTEREXAMPLE for s in statuses):
            return Status.COUNTEREXAMPLE
        return Status.UNKNOWN

    @property
    def proved(self) -> bool:
        return self.verdict is Status.PROVED

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "entries": [{"mode": p, "condition": c, **o.to_dict()} for (p, c), o in sorted(self.entries.items())],
            "warnings": list(self.warnings),
        }


def closed_loop(sub: Subsystem, cert: StorageCertificate, p: int) -> tuple[Polynomial, ...]:
    """Mode-p dynamics with nu replaced by the mode-p controller."""
    mc = cert.mode(p)
    bind = {nu: c for nu, c in zip(sub.input_vars, mc.controller)}
    return tuple(f.substitute(bind, sub.space) if bind else f for f in sub.dynamics[p])


def expected_next_value(sub: Subsystem, cert: StorageCertificate, p: int) -> Polynomial:
    """sum_p' pi_pp' E[B_p'(x+) | x, w, p] as a polynomial in (x, w)."""
    if not 0 <= p < sub.modes:
        raise CertificateError(f"subsystem has no mode {p}")
    fcl = closed_loop(sub, cert, p)
    bind = dict(zip(sub.state_vars, fcl))
    out = Polynomial.zero(sub.space)
    for q, prob in enumerate(sub.chain.pi[p]):
        if prob == 0:
            continue
        composed = cert.mode(q).B.substitute(bind, sub.space)
        out = out + gaussian_expectation(composed, sub.noise_vars).scale(prob)
    return out


@dataclass(frozen=True)
class Residual:
    condition: str
    poly: Polynomial
    region: Region


def csc_residuals(sub: Subsystem, cert: StorageCertificate, p: int) -> dict[str, Residual]:
    cert.check_against(sub)
    mc = cert.mode(p)
    init = Polynomial.constant(sub.space, mc.gamma) - mc.B
    unsafe = mc.B - mc.lam
    drift = mc.B.scale(mc.kappa) + mc.psi + cert.supply.rate(sub) - expected_next_value(sub, cert, p)
    xw = sub.X.product(sub.W) if sub.p else sub.X
    return {
        "init": Residual("init", init, Region.of(sub.X0)),
        "unsafe": Residual("unsafe", unsafe, sub.Xu),
        "drift": Residual("drift", drift, Region.of(xw)),
        "nonneg": Residual("nonneg", mc.B, Region.of(sub.X)),
    }


def controller_warnings(sub: Subsystem, cert: StorageCertificate) -> list[str]:
    out = []
    for p, mc in enumerate(cert.modes):
        for j, c in enumerate(mc.controller):
            lo, hi = interval_bound(c, sub.X, method="both")
            ulo, uhi = sub.U.lo[j], sub.U.hi[j]
            if lo < ulo - 1e-12 or hi > uhi + 1e-12:
                out.append(f"mode {p}: controller nu{j + 1} image [{lo:.4g}, {hi:.4g}] exceeds U = [{ulo:g}, {uhi:g}]")
    return out


def verify_csc(sub: Subsystem, cert: StorageCertificate, tol: float = 1e-6, budget: Budget | None = None,
               conditions: Iterable[str] = CSC_CONDITIONS) -> VerificationReport:
    conditions = tuple(conditions)
    for c in conditions:
        if c not in CSC_CONDITIONS + OPTIONAL_CONDITIONS:
            raise CertificateError(f"unknown condition {c!r}")
    cert.check_against(sub)
    entries = {}
    for p in range(sub.modes):
        res = csc_residuals(sub, cert, p)
        for c in conditions:
            entries[(p, c)] = prove_nonneg(res[c].poly, res[c].region, tol, budget)
    return VerificationReport(entries, controller_warnings(sub, cert))


@dataclass
class FalsifyResult:
    mode: int
    condition: str
    point: dict[str, float]
    value: float

    def to_dict(self) -> dict:
        return {"mode": self.mode, "condition": self.condition, "point": self.point, "value": self.value}


def sample_region(region: Region, count: int, rng: np.random.Generator) -> np.ndarray:
    """Corners of every box plus ``count`` uniform points split over the boxes."""
    pts = [b.corners() for b in region]
    widths = np.array([np.prod(np.where(b.widths() > 0, b.widths(), 1.0)) for b in region])
    share = np.floor(count * widths / widths.sum()).astype(int)
    share[0] += count - share.sum()
    for b, k in zip(region, share):
        if k:
            pts.append(b.sample(rng, int(k)))
    return np.vstack(pts)


def residual_minimum(res: Residual, points: np.ndarray) -> tuple[float, np.ndarray]:
    vals = res.poly.compile(res.region.names)(points)
    i = int(np.argmin(vals))
    return float(vals[i]), points[i]


def falsify(sub: Subsystem, cert: StorageCertificate, sample_count: int = 10_000, seed: int = 0,
            tol: float = 1e-6, conditions: Iterable[str] = CSC_CONDITIONS,
            report: dict | None = None) -> FalsifyResult | None:
    """Sample each residual (corners plus seeded uniform points).

    Returns the worst violating sample, or None when every sampled residual
    is >= -tol. When ``report`` is a dict it receives the minimum sampled
    residual per (mode, condition).
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    worst = None
    for p in range(sub.modes):
        res = csc_residuals(sub, cert, p)
        for k, c in enumerate(conditions):
            rng = np.random.default_rng([seed, p, k])
            pts = sample_region(res[c].region, sample_count, rng)
            v, x = residual_minimum(res[c], pts)
            if report is not None:
                report[(p, c)] = {"min": v, "point": dict(zip(res[c].region.names, map(float, x)))}
            if v < -tol and (worst is None or v < worst.value):
                worst = FalsifyResult(p, c, dict(zip(res[c].region.names, map(float, x))), v)
    return worst


# direct barrier-certificate check on small networks ---------------------------

MAX_DIRECT_STATE = 4
MAX_DIRECT_MODES = 16


def _global_space(net: Network) -> tuple[VarSpace, list[dict[str, str]]]:
    names, renames = [], []
    for i, s in enumerate(net.subsystems):
        ren = {}
        for v in s.state_vars + s.noise_vars:
            g = f"{v}_s{i + 1}"
            ren[v] = g
            names.append(g)
        renames.append(ren)
    return VarSpace.from_names(names), renames


def product_modes(net: Network) -> tuple[list[tuple[int, ...]], np.ndarray]:
    """Joint modes and their transition matrix for the chosen coupling."""
    if net.mode_coupling == "shared":
        m = net.subsystems[0].modes
        modes = [(k,) * net.size for k in range(m)]
        return modes, net.subsystems[0].chain.matrix()
    modes = list(itertools.product(*(range(s.modes) for s in net.subsystems)))
    P = np.ones((len(modes), len(modes)))
    for a, pa in enumerate(modes):
        for b, pb in enumerate(modes):
            for i, s in enumerate(net.subsystems):
                P[a, b] *= s.chain.pi[pa[i]][pb[i]]
    return modes, P


def network_residuals(net: Network, cert: NetworkCertificate) -> dict[tuple[int, ...], dict[str, Residual]]:
    """Barrier residuals of the interconnected closed loop for each joint mode.

    Disturbances are eliminated through w = M h(x); the unsafe set is the
    product of the subsystems' unsafe sets.
    """
    space, renames = _global_space(net)
    # outputs in global variables
    outputs = []
    for i, s in enumerate(net.subsystems):
        for f in s.h:
            outputs.append(f.embed(space, renames[i]))
    M = net.M.toarray()
    doff = net.dist_offsets()
    w_glob = []
    for r in range(M.shape[0]):
        acc = Polynomial.zero(space)
        for c in np.nonzero(M[r])[0]:
            acc = acc + outputs[c].scale(float(M[r, c]))
        w_glob.append(acc)

    def local_to_global(i: int, poly: Polynomial, with_inputs: dict[str, Polynomial] | None = None) -> Polynomial:
        s = net.subsystems[i]
        bind = {v: Polynomial.var(space, renames[i][v]) for v in s.state_vars + s.noise_vars}
        for j, w in enumerate(s.dist_vars):
            bind[w] = w_glob[doff[i] + j]
        for nu in s.input_vars:
            bind[nu] = (with_inputs or {}).get(nu, Polynomial.zero(space))
        return poly.substitute(bind, space)

    cache_B: dict[tuple[int, int], Polynomial] = {}

    def B(i: int, q: int) -> Polynomial:
        if (i, q) not in cache_B:
            cache_B[(i, q)] = local_to_global(i, cert.cscs[i].mode(q).B)
        return cache_B[(i, q)]

    cache_next: dict[tuple[int, int, int], Polynomial] = {}

    def next_B(i: int, p: int, q: int) -> Polynomial:
        key = (i, p, q)
        if key not in cache_next:
            s = net.subsystems[i]
            mc = cert.cscs[i].mode(p)
            ctrl = {nu: local_to_global(i, c) for nu, c in zip(s.input_vars, mc.controller)}
            fcl = [local_to_global(i, f, ctrl) for f in s.dynamics[p]]
            bind = {renames[i][v]: f for v, f in zip(s.state_vars, fcl)}
            composed = B(i, q).substitute(bind, space)
            cache_next[key] = gaussian_expectation(composed, [renames[i][v] for v in s.noise_vars])
        return cache_next[key]

    X = None
    X0 = None
    for i, s in enumerate(net.subsystems):
        bx = s.X.rename(renames[i])
        b0 = s.X0.rename(renames[i])
        X = bx if X is None else X.product(bx)
        X0 = b0 if X0 is None else X0.product(b0)
    Xu = None
    for i, s in enumerate(net.subsystems):
        r = Region(tuple(b.rename(renames[i]) for b in s.Xu))
        Xu = r if Xu is None else Xu.product(r)

    modes, P = product_modes(net)
    out = {}
    for a, pa in enumerate(modes):
        Bp = Polynomial.zero(space)
        for i, mu in enumerate(cert.weights):
            Bp = Bp + B(i, pa[i]).scale(mu)
        expected = Polynomial.zero(space)
        for b, pb in enumerate(modes):
            if P[a, b] == 0:
                continue
            acc = Polynomial.zero(space)
            for i, mu in enumerate(cert.weights):
                acc = acc + next_B(i, pa[i], pb[i]).scale(mu)
            expected = expected + acc.scale(float(P[a, b]))
        drift = Bp.scale(cert.kappa) + cert.psi - expected
        out[pa] = {
            "init": Residual("init", Polynomial.constant(space, cert.gamma) - Bp, Region.of(X0)),
            "unsafe": Residual("unsafe", Bp - cert.lam, Xu),
            "drift": Residual("drift", drift, Region.of(X)),
        }
    return out


def verify_cbc_direct(net: Network, cert: NetworkCertificate, tol: float = 1e-6,
                      budget: Budget | None = None) -> VerificationReport:
    total_state = sum(s.n for s in net.subsystems)
    modes, _ = product_modes(net)
    if total_state > MAX_DIRECT_STATE or len(modes) > MAX_DIRECT_MODES:
        raise CertificateError(
            f"direct check limited to {MAX_DIRECT_STATE} states and {MAX_DIRECT_MODES} joint modes "
            f"(got {total_state} and {len(modes)})")
    res = network_residuals(net, cert)
    entries = {}
    for a, pa in enumerate(modes):
        for c in CSC_CONDITIONS:
            entries[(a, c)] = prove_nonneg(res[pa][c].poly, res[pa][c].region, tol, budget)
    return VerificationReport(entries)
