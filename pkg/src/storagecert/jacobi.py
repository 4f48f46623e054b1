"""Cyclic Jacobi eigenvalue iteration for real symmetric matrices.

Each sweep visits every off-diagonal pair once using the round-robin
(tournament) ordering, so the n/2 rotations of one round act on disjoint
index pairs and are applied together.
"""

from __future__ import annotations

import numpy as np

from .lp import SolverFailure


def round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Rounds of disjoint (p, q) pairs covering every pair exactly once."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        ps, qs = [], []
        for k in range(m // 2):
            a, b = players[k], players[m - 1 - k]
            if a < n and b < n:
                ps.append(min(a, b))
                qs.append(max(a, b))
        rounds.append((np.array(ps, dtype=int), np.array(qs, dtype=int)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _rotate_rows(A: np.ndarray, P: np.ndarray, Q: np.ndarray, c: np.ndarray, s: np.ndarray) -> np.ndarray:
    rp, rq = A[P], A[Q]
    A[P] = c[:, None] * rp - s[:, None] * rq
    A[Q] = s[:, None] * rp + c[:, None] * rq
    return A


def jacobi_eigh(S: np.ndarray, tol: float = 1e-12, max_sweeps: int = 100) -> tuple[np.ndarray, np.ndarray, int]:
    """Eigenvalues (ascending) and eigenvectors (columns) of symmetric S.

    Returns (values, vectors, sweeps). Raises SolverFailure if the
    off-diagonal mass has not fallen below ``tol * ||S||_F`` after
    ``max_sweeps`` sweeps.
    """
    A = np.array(S, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    A = (A + A.T) / 2
    n = A.shape[0]
    Vt = np.eye(n)
    if n <= 1:
        return np.diag(A).copy(), Vt, 0
    norm = np.linalg.norm(A)
    if norm == 0:
        return np.zeros(n), Vt, 0
    rounds = round_robin(n)

    def off(M):
        return np.linalg.norm(M - np.diag(np.diag(M)))

    for sweep in range(1, max_sweeps + 1):
        if off(A) <= tol * norm:
            order = np.argsort(np.diag(A), kind="stable")
            return np.diag(A)[order], Vt.T[:, order], sweep - 1
        for P, Q in rounds:
            apq = A[P, Q]
            active = np.abs(apq) > 1e-17 * norm
            if not active.any():
                continue
            P, Q, apq = P[active], Q[active], apq[active]
            theta = (A[Q, Q] - A[P, P]) / (2 * apq)
            big = np.abs(theta) > 1e150
            theta_s = np.where(big, 1.0, theta)
            t = np.where(big, 0.5 / np.where(big, theta, 1.0),
                         np.sign(theta_s) / (np.abs(theta_s) + np.sqrt(theta_s * theta_s + 1)))
            t[theta == 0] = 1.0
            c = 1 / np.sqrt(t * t + 1)
            s = t * c
            # A <- J' A J as two row rotations around a transpose; V kept transposed
            A = _rotate_rows(A, P, Q, c, s)
            A = _rotate_rows(np.ascontiguousarray(A.T), P, Q, c, s)
            Vt = _rotate_rows(Vt, P, Q, c, s)
    if off(A) <= tol * norm:
        order = np.argsort(np.diag(A), kind="stable")
        return np.diag(A)[order], Vt.T[:, order], max_sweeps
    raise SolverFailure(f"Jacobi iteration did not converge in {max_sweeps} sweeps")
