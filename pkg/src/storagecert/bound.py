"""Finite-horizon bound on the probability of reaching the unsafe set."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BoundInput:
    gamma: float
    lam: float
    kappa: float
    psi: float
    horizon: int

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        if not self.lam > self.gamma:
            raise ValueError(f"lambda must exceed gamma, got {self.lam} <= {self.gamma}")
        if not 0 < self.kappa < 1:
            raise ValueError(f"kappa must lie in (0, 1), got {self.kappa}")
        if self.psi < 0:
            raise ValueError(f"psi must be >= 0, got {self.psi}")
        if int(self.horizon) != self.horizon or self.horizon < 0:
            raise ValueError(f"horizon must be a non-negative integer, got {self.horizon}")


@dataclass(frozen=True)
class SafetyBound:
    delta: float
    raw: float
    branch: int

    @property
    def safe_probability(self) -> float:
        return 1.0 - self.delta


def bound_branch(b: BoundInput) -> int:
    return 1 if b.lam >= b.psi / (1 - b.kappa) else 2


def safety_bound(b: BoundInput) -> SafetyBound:
    """delta = 1 - (1 - g/l)(1 - psi/l)^T        if l >= psi/(1 - k)
             (g/l) k^T + psi/((1-k) l) (1 - k^T)   otherwise, clamped to [0, 1]."""
    g, l, k, psi, T = b.gamma, b.lam, b.kappa, b.psi, int(b.horizon)
    branch = bound_branch(b)
    if branch == 1:
        raw = 1.0 - (1.0 - g / l) * (1.0 - psi / l) ** T
    else:
        raw = (g / l) * k ** T + (psi / ((1.0 - k) * l)) * (1.0 - k ** T)
    return SafetyBound(min(1.0, max(0.0, raw)), raw, branch)
