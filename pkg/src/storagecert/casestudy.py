"""Ring network of rooms under Markov-switched outside temperature."""

from __future__ import annotations

from dataclasses import dataclass

import scipy.sparse as sp

from .model import Network, make_subsystem

PUBLISHED_PI = ((0.3, 0.7), (0.4, 0.6))


@dataclass(frozen=True)
class RoomParams:
    theta: float = 0.005
    alpha: float = 0.06
    beta: float = 0.145
    heater: float = 45.0
    outside: tuple[float, ...] = (-15.0, -20.0)
    noise_gain: tuple[float, ...] = (0.3, 0.5)
    pi: tuple[tuple[float, ...], ...] = PUBLISHED_PI
    X: tuple[float, float] = (1.0, 50.0)
    X0: tuple[float, float] = (19.5, 20.0)
    Xu: tuple[tuple[float, float], ...] = ((1.0, 17.0), (23.0, 50.0))
    U: tuple[float, float] = (0.0, 1.0)


def room_dynamics(params: RoomParams, mode: int) -> str:
    """x+ = (1-2θ-α)x - βνx + βT_h ν + θw + αT_p + R_p σ, as text."""
    a = 1 - 2 * params.theta - params.alpha
    b = params.beta
    drift = params.alpha * params.outside[mode]
    return (f"{a!r}*x1 - {b!r}*nu1*x1 + {b * params.heater!r}*nu1 + {params.theta!r}*w1"
            f" + {drift!r} + {params.noise_gain[mode]!r}*sigma1")


def ring_matrix(N: int) -> sp.csr_matrix:
    if N == 2:
        return sp.csr_matrix([[0.0, 1.0], [1.0, 0.0]])
    rows, cols = [], []
    for i in range(N):
        for j in ((i - 1) % N, (i + 1) % N):
            rows.append(i)
            cols.append(j)
    return sp.csr_matrix(([1.0] * len(rows), (rows, cols)), shape=(N, N))


def room_subsystem(params: RoomParams = RoomParams(), W: tuple[float, float] = (2.0, 100.0)):
    return make_subsystem(
        n=1, m=1, p=1, q=1, noise=1,
        pi=params.pi,
        dynamics=[[room_dynamics(params, k)] for k in range(len(params.pi))],
        h=["x1"],
        X=[params.X], X0=[params.X0], Xu=[[iv] for iv in params.Xu],
        U=[params.U], W=[W],
        labels=[f"T_out={t:g}" for t in params.outside],
    )


def room_casestudy(N: int, params: RoomParams = RoomParams(), mode_coupling: str = "independent") -> Network:
    """Circular building of N rooms; each room's disturbance is the sum of its neighbours.

    N = 2 degenerates to a single mutual coupling, so W shrinks to X there.
    """
    if N < 2:
        raise ValueError(f"a ring needs at least 2 rooms, got N={N}")
    lo, hi = params.X
    W = (lo, hi) if N == 2 else (2 * lo, 2 * hi)
    room = room_subsystem(params, W)
    return Network(tuple([room] * N), ring_matrix(N), mode_coupling)


PUBLISHED_SUPPLY = ((0.005, 0.003), (0.003, -0.035))
PUBLISHED_MODES = (
    dict(B="0.00242*x1^4 - 0.091*x1^3 + 0.7696*x1^2 + 1.4935*x1 + 3.1329", controller="-0.0121*x1 + 0.8",
         kappa=0.91, gamma=0.13, lam=4.4, psi=0.001),
    dict(B="0.00191*x1^4 - 0.0718*x1^3 + 0.5998*x1^2 + 1.2424*x1 + 3.2433", controller="-0.02527*x1 + 1.15",
         kappa=0.92, gamma=0.14, lam=4.3, psi=0.0015),
)


def published_certificate(sub=None):
    """The published per-room storage certificates, controllers and constants."""
    import numpy as np

    from .certify import ModeCertificate, StorageCertificate, SupplyMatrix
    from .poly import parse_polynomial

    sub = sub or room_subsystem()
    modes = tuple(
        ModeCertificate(parse_polynomial(m["B"], sub.space), (parse_polynomial(m["controller"], sub.space),),
                        m["kappa"], m["gamma"], m["lam"], m["psi"])
        for m in PUBLISHED_MODES)
    return StorageCertificate(modes, SupplyMatrix(np.array(PUBLISHED_SUPPLY), 1, 1))
