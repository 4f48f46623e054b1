"""Dissipativity-based composition of storage certificates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .certify import CertificateError, NetworkCertificate, StorageCertificate
from .jacobi import jacobi_eigh
from .model import Network


class CompositionError(ValueError):
    def __init__(self, condition: str, message: str):
        super().__init__(f"{condition}: {message}")
        self.condition = condition


@dataclass
class ComposedMatrix:
    matrix: np.ndarray
    p_total: int
    q_total: int


def _weights(net: Network, mu) -> np.ndarray:
    if mu is None:
        mu = np.ones(net.size)
    mu = np.broadcast_to(np.asarray(mu, dtype=float), (net.size,)).copy()
    if np.any(mu <= 0):
        raise CompositionError("weights", "every weight mu_i must be positive")
    return mu


def assemble_xcmp(net: Network, cscs: Sequence[StorageCertificate], mu=None) -> ComposedMatrix:
    """Place each mu_i X_i block-wise: X11 blocks top-left, X22 bottom-right."""
    if len(cscs) != net.size or any(c is None for c in cscs):
        raise CompositionError("certificates", f"need one certificate per subsystem ({net.size})")
    mu = _weights(net, mu)
    P = sum(s.p for s in net.subsystems)
    Q = sum(s.q for s in net.subsystems)
    X = np.zeros((P + Q, P + Q))
    po, qo = 0, P
    for s, c, m in zip(net.subsystems, cscs, mu):
        if (c.supply.p, c.supply.q) != (s.p, s.q):
            raise CompositionError("certificates", "supply matrix dimensions do not match the subsystem")
        X[po:po + s.p, po:po + s.p] = m * c.supply.X11
        X[po:po + s.p, qo:qo + s.q] = m * c.supply.X12
        X[qo:qo + s.q, po:po + s.p] = m * c.supply.X21
        X[qo:qo + s.q, qo:qo + s.q] = m * c.supply.X22
        po += s.p
        qo += s.q
    return ComposedMatrix((X + X.T) / 2, P, Q)


@dataclass
class LMIResult:
    holds: bool
    max_eig: float
    method: str
    sweeps: int = 0

    def to_dict(self) -> dict:
        return {"holds": self.holds, "max_eig": self.max_eig, "method": self.method, "sweeps": self.sweeps}


def lmi_matrix(M: np.ndarray, xcmp: ComposedMatrix) -> np.ndarray:
    """[M; I]' X_cmp [M; I]."""
    M = np.asarray(M, dtype=float)
    if M.shape != (xcmp.p_total, xcmp.q_total):
        raise CompositionError("dimensions", f"M has shape {M.shape}, X_cmp expects {(xcmp.p_total, xcmp.q_total)}")
    T = np.vstack([M, np.eye(xcmp.q_total)])
    S = T.T @ xcmp.matrix @ T
    return (S + S.T) / 2


def _scalar_blocks(xcmp: ComposedMatrix):
    """(a, b, c) if X_cmp = [[a I, b I], [b I, c I]] with square blocks, else None."""
    P, Q = xcmp.p_total, xcmp.q_total
    if P != Q or P == 0:
        return None
    X = xcmp.matrix
    blocks = (X[:P, :P], X[:P, P:], X[P:, P:])
    out = []
    for B in blocks:
        v = B[0, 0]
        if not np.array_equal(B, v * np.eye(P)):
            return None
        out.append(float(v))
    return tuple(out)


def gershgorin_interval(M: np.ndarray) -> tuple[float, float]:
    d = np.diag(M)
    r = np.abs(M).sum(axis=1) - np.abs(d)
    return float((d - r).min()), float((d + r).max())


def check_dissipativity_lmi(net: Network, xcmp: ComposedMatrix, tol: float = 1e-9,
                            method: str = "auto") -> LMIResult:
    """Negative semidefiniteness of [M; I]' X_cmp [M; I].

    ``method`` is ``"eigen"`` (cyclic Jacobi), ``"gershgorin"`` (fast path:
    symmetric M with scalar-identity blocks reduces to the quadratic
    a s^2 + 2 b s + c over a Gershgorin enclosure of the spectrum of M) or ``"auto"``.
    """
    M = net.M.toarray()
    if M.shape != (xcmp.p_total, xcmp.q_total):
        raise CompositionError("dimensions", f"M has shape {M.shape}, X_cmp expects {(xcmp.p_total, xcmp.q_total)}")
    blocks = _scalar_blocks(xcmp)
    fast_ok = blocks is not None and np.array_equal(M, M.T)
    if method == "gershgorin" and not fast_ok:
        raise CompositionError("method", "Gershgorin fast path needs symmetric M and scalar-identity blocks")
    if method in ("gershgorin", "auto") and fast_ok:
        a, b, c = blocks
        lo, hi = gershgorin_interval(M)
        cand = [lo, hi]
        if a < 0 and lo < -b / a < hi:
            cand.append(-b / a)
        top = max(a * s * s + 2 * b * s + c for s in cand)
        return LMIResult(top <= tol, float(top), "gershgorin")
    if method not in ("eigen", "auto", "gershgorin"):
        raise ValueError(f"unknown method {method!r}")
    S = lmi_matrix(M, xcmp)
    vals, _, sweeps = jacobi_eigh(S)
    top = float(vals[-1]) if len(vals) else 0.0
    return LMIResult(top <= tol, top, "eigen", sweeps)


@dataclass
class LevelGap:
    holds: bool
    lhs: float
    rhs: float

    def to_dict(self) -> dict:
        return {"holds": self.holds, "lhs": self.lhs, "rhs": self.rhs}


def check_level_gap(cscs: Sequence[StorageCertificate], mu=None) -> LevelGap:
    mu = np.ones(len(cscs)) if mu is None else np.broadcast_to(np.asarray(mu, float), (len(cscs),))
    if np.any(mu <= 0):
        raise CompositionError("weights", "every weight mu_i must be positive")
    lhs = float(sum(m * min(mc.lam for mc in c.modes) for m, c in zip(mu, cscs)))
    rhs = float(sum(m * max(mc.gamma for mc in c.modes) for m, c in zip(mu, cscs)))
    return LevelGap(lhs > rhs, lhs, rhs)


def composed_constants(cscs: Sequence[StorageCertificate], mu) -> dict:
    mu = np.broadcast_to(np.asarray(mu, float), (len(cscs),))
    return {
        "gamma": float(sum(m * max(mc.gamma for mc in c.modes) for m, c in zip(mu, cscs))),
        "lambda": float(sum(m * min(mc.lam for mc in c.modes) for m, c in zip(mu, cscs))),
        "kappa": float(max(mc.kappa for c in cscs for mc in c.modes)),
        "psi": float(sum(m * max(mc.psi for mc in c.modes) for m, c in zip(mu, cscs))),
    }


@dataclass
class CompositionReport:
    lmi: LMIResult
    gap: LevelGap
    weights: list[float]
    certificate: NetworkCertificate | None

    def to_dict(self) -> dict:
        return {
            "lmi": self.lmi.to_dict(),
            "level_gap": self.gap.to_dict(),
            "weights": self.weights,
            "constants": self.certificate.constants() if self.certificate else None,
        }


def compose_cbc(net: Network, cscs: Sequence[StorageCertificate], mu=None, tol: float = 1e-9,
                method: str = "auto") -> NetworkCertificate:
    """Barrier certificate sum_i mu_i B_i for the network, or CompositionError.

    kappa is the largest subsystem kappa, which dominates the weighted
    combination whenever the certificates are non-negative.
    """
    return compose_report(net, cscs, mu, tol, method, strict=True).certificate


def compose_report(net: Network, cscs: Sequence[StorageCertificate], mu=None, tol: float = 1e-9,
                   method: str = "auto", strict: bool = False) -> CompositionReport:
    mu = _weights(net, mu)
    xcmp = assemble_xcmp(net, cscs, mu)
    lmi = check_dissipativity_lmi(net, xcmp, tol, method)
    gap = check_level_gap(cscs, mu)
    cert = None
    if lmi.holds and gap.holds:
        k = composed_constants(cscs, mu)
        try:
            cert = NetworkCertificate(tuple(map(float, mu)), tuple(cscs), k["gamma"], k["lambda"], k["kappa"], k["psi"])
        except CertificateError as exc:
            if strict:
                raise CompositionError("constants", str(exc)) from None
    elif strict:
        if not lmi.holds:
            raise CompositionError("dissipativity LMI",
                                   f"[M; I]' X_cmp [M; I] has eigenvalue {lmi.max_eig:.6g} > {tol:g}")
        raise CompositionError("level gap", f"sum mu min lambda = {gap.lhs:.6g} <= sum mu max gamma = {gap.rhs:.6g}")
    return CompositionReport(lmi, gap, list(map(float, mu)), cert)
