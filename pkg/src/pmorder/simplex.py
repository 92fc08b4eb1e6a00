"""Dense phase-1 simplex for small equality-constrained feasibility programs.

Finds ``x >= 0`` with ``A x = b``.  Bland's rule guards against cycling; the
final basic solution is re-solved from the basis columns so the returned
point satisfies the equalities to roundoff rather than to pivot tolerance.
"""

from __future__ import annotations

import numpy as np

PIVOT_TOL = 1e-12
FEASIBILITY_TOL = 1e-9


class InfeasibleError(ValueError):
    pass


def find_feasible_point(A, b, *, max_iter: int = 10_000) -> np.ndarray:
    A = np.array(A, dtype=float)
    b = np.array(b, dtype=float)
    m, n = A.shape
    flip = b < 0
    A[flip] *= -1
    b[flip] *= -1

    # tableau [A | I | b]; artificial variables n..n+m-1 start in the basis
    T = np.zeros((m, n + m + 1))
    T[:, :n] = A
    T[:, n:n + m] = np.eye(m)
    T[:, -1] = b
    basis = list(range(n, n + m))
    # phase-1 objective: minimize sum of artificials (reduced costs row)
    cost = np.zeros(n + m + 1)
    cost[:n] = -A.sum(axis=0)
    cost[-1] = -b.sum()

    for _ in range(max_iter):
        entering = next((j for j in range(n + m) if cost[j] < -PIVOT_TOL), None)
        if entering is None:
            break
        col = T[:, entering]
        rows = [i for i in range(m) if col[i] > PIVOT_TOL]
        if not rows:
            # unbounded direction cannot occur in phase 1 (objective >= 0)
            raise InfeasibleError("phase-1 program unbounded; malformed input")
        ratios = [T[i, -1] / col[i] for i in rows]
        best = min(ratios)
        # Bland: among ties, leave with the smallest basis index
        leaving = min(
            (i for i, r in zip(rows, ratios) if r <= best + PIVOT_TOL),
            key=lambda i: basis[i],
        )
        _pivot(T, cost, leaving, entering)
        basis[leaving] = entering
    else:
        raise InfeasibleError("simplex iteration limit reached")

    if -cost[-1] > FEASIBILITY_TOL * max(1.0, b.sum()):
        raise InfeasibleError(f"no feasible point (phase-1 residual {-cost[-1]:.3e})")

    x = np.zeros(n)
    cols = [j for j in basis if j < n]
    rows = [i for i, j in enumerate(basis) if j < n]
    x[cols] = T[rows, -1]
    if cols:
        # polish: least-squares solve on the basic columns of the original system
        sol, *_ = np.linalg.lstsq(A[:, cols], b, rcond=None)
        if np.all(sol >= -FEASIBILITY_TOL):
            x[cols] = sol
    return np.clip(x, 0.0, None)


def _pivot(T: np.ndarray, cost: np.ndarray, r: int, c: int) -> None:
    T[r] /= T[r, c]
    for i in range(T.shape[0]):
        if i != r and T[i, c] != 0.0:
            T[i] -= T[i, c] * T[r]
    if cost[c] != 0.0:
        cost -= cost[c] * T[r]
