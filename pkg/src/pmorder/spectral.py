"""Spectral and variance analysis of finite reversible kernels.

All inner products are in ``L^2(mu)`` with ``mu`` the kernel's invariant law.
A reversible kernel ``K`` is self-adjoint there, so ``S = D^{1/2} K D^{-1/2}``
(``D = diag(mu)``) is a symmetric matrix with the same spectrum; every
spectral quantity below is read off a dense eigendecomposition of ``S``.
States with ``mu = 0`` cannot be reached from the support of a reversible
kernel and are dropped before any computation.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .chains import FiniteKernel

REVERSIBILITY_TOL = 1e-9
UNIT_EIGEN_TOL = 1e-10
DIRICHLET_CROSSCHECK_TOL = 1e-10
VARIANCE_CROSSCHECK_TOL = 1e-9
SYMMETRY_TOL = 1e-13


class NotReversibleError(ValueError):
    pass


class ReducibleChainError(ValueError):
    """The asymptotic variance is infinite or ill-defined for this function."""


class CrossCheckError(ArithmeticError):
    pass


def check_reversibility(K: FiniteKernel) -> float:
    """Largest entrywise detailed-balance violation ``|mu_i K_ij - mu_j K_ji|``."""
    F = K.invariant[:, None] * K.matrix
    return float(np.max(np.abs(F - F.T)))


def _require_reversible(K: FiniteKernel, tol: float = REVERSIBILITY_TOL) -> None:
    v = check_reversibility(K)
    if v > tol:
        raise NotReversibleError(f"kernel violates detailed balance by {v:.3e}")


def _support(K: FiniteKernel):
    keep = K.invariant > 0
    mu = K.invariant[keep]
    P = K.matrix[np.ix_(keep, keep)]
    return keep, mu, P


def _values(K: FiniteKernel, f) -> np.ndarray:
    f = np.asarray(f, dtype=float).ravel()
    if f.size != K.n:
        raise ValueError(f"function has {f.size} values, kernel has {K.n} states")
    if not np.all(np.isfinite(f)):
        raise ValueError("function values must be finite")
    return f


def inner(K: FiniteKernel, f, g) -> float:
    return float(np.sum(K.invariant * _values(K, f) * _values(K, g)))


def center(K: FiniteKernel, f) -> np.ndarray:
    f = _values(K, f)
    return f - float(np.dot(K.invariant, f))


def variance(K: FiniteKernel, f) -> float:
    fc = center(K, f)
    return float(np.dot(K.invariant, fc * fc))


def _eigh(K: FiniteKernel):
    """Eigenpairs of the symmetrized kernel restricted to the support of ``mu``."""
    keep, mu, P = _support(K)
    s = np.sqrt(mu)
    S = s[:, None] * P / s[None, :]
    asym = float(np.max(np.abs(S - S.T))) if S.size else 0.0
    S = 0.5 * (S + S.T)
    if asym > np.sqrt(REVERSIBILITY_TOL):
        raise NotReversibleError(f"symmetrized kernel asymmetric by {asym:.3e}")
    lam, V = np.linalg.eigh(S)
    return keep, s, lam, V


def dirichlet_form(K: FiniteKernel, f, *, lam: float = 1.0) -> float:
    """``E_{lam K}(f) = <f, (I - lam K) f>_mu``.

    For ``lam = 1`` the edge form ``1/2 sum mu_i K_ij (f_i - f_j)^2`` is also
    evaluated and the two must agree within ``DIRICHLET_CROSSCHECK_TOL``.
    """
    _require_reversible(K)
    f = _values(K, f)
    mu, P = K.invariant, K.matrix
    quad = float(np.dot(mu * f, f - lam * (P @ f)))
    if lam == 1.0:
        diff = f[:, None] - f[None, :]
        edge = 0.5 * float(np.sum(mu[:, None] * P * diff * diff))
        scale = max(1.0, float(np.dot(mu, f * f)))
        if abs(edge - quad) > DIRICHLET_CROSSCHECK_TOL * scale:
            raise CrossCheckError(f"Dirichlet form mismatch: edge {edge!r} vs quadratic {quad!r}")
        return edge
    return quad


@dataclass(frozen=True)
class SpectralReport:
    right_gap: float
    left_gap: float
    absolute_gap: float
    eigenvalues: tuple

    def to_dict(self) -> dict:
        d = asdict(self)
        d["eigenvalues"] = list(self.eigenvalues)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def spectral_gaps(K: FiniteKernel) -> SpectralReport:
    """Right, left and absolute spectral gaps of a reversible kernel.

    ``right_gap = 1 - lambda_2`` with ``lambda_2`` the largest eigenvalue on
    mean-zero functions, ``left_gap = 1 + lambda_min`` over the whole
    spectrum.  A single-state kernel has no mean-zero functions; its right
    gap is reported as 1.
    """
    _require_reversible(K)
    _, s, lam, V = _eigh(K)
    desc = lam[::-1]
    if desc.size == 1:
        lam2 = 0.0
    else:
        # drop the eigenvalue whose eigenvector is sqrt(mu)
        trivial = int(np.argmax(np.abs(V.T @ s)))
        lam2 = float(np.max(np.delete(lam, trivial)))
    right = float(np.clip(1.0 - lam2, 0.0, 2.0))
    left = float(np.clip(1.0 + lam[0], 0.0, 2.0))
    return SpectralReport(right, left, min(right, left), tuple(float(v) for v in desc))


def _eigen_variance(K: FiniteKernel, fbar: np.ndarray, lam: float) -> float:
    keep, s, ev, V = _eigh(K)
    g = s * fbar[keep]
    c = V.T @ g
    unit = ev > 1.0 - UNIT_EIGEN_TOL
    if lam == 1.0:
        trivial = int(np.argmax(np.abs(V.T @ s)))
        extra = unit.copy()
        extra[trivial] = False
        leak = float(np.sqrt(np.sum(c[extra] ** 2)))
        if leak > 1e-8 * max(1.0, float(np.linalg.norm(g))):
            raise ReducibleChainError(
                "eigenvalue 1 has multiplicity > 1 and the function has mass on the "
                "extra eigenvectors: infinite/ill-defined variance"
            )
        use = ~unit
    else:
        use = np.ones_like(unit)
    ll = lam * ev[use]
    return float(np.sum((1.0 + ll) / (1.0 - ll) * c[use] ** 2))


def resolvent_solve(K: FiniteKernel, f, lam: float) -> np.ndarray:
    """Solve ``(I - lam K) g = f`` for ``0 <= lam < 1``."""
    if not 0.0 <= lam < 1.0:
        raise ValueError("resolvent_solve needs 0 <= lambda < 1")
    f = _values(K, f)
    A = np.eye(K.n) - lam * K.matrix
    return np.linalg.solve(A, f)


def asymptotic_variance(K: FiniteKernel, f, lam: float = 1.0) -> float:
    """``var(f, lam K) = <fbar, (I - lam K)^{-1} (I + lam K) fbar>_mu``.

    ``lam < 1`` uses a direct linear solve, cross-checked against the
    spectral sum.  ``lam = 1`` uses the spectral sum
    ``sum_{lambda_i < 1} (1 + lambda_i) / (1 - lambda_i) c_i^2``.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    _require_reversible(K)
    fbar = center(K, f)
    if lam == 1.0:
        return _eigen_variance(K, fbar, 1.0)
    g = resolvent_solve(K, fbar, lam)
    direct = 2.0 * inner(K, fbar, g) - inner(K, fbar, fbar)
    spectral = _eigen_variance(K, fbar, lam)
    if abs(direct - spectral) > VARIANCE_CROSSCHECK_TOL * max(1.0, abs(direct)):
        raise CrossCheckError(f"variance mismatch: solve {direct!r} vs spectral {spectral!r}")
    return direct


def truncated_acf_variance(K: FiniteKernel, f, lag_max: int) -> float:
    """``var_mu(f) + 2 sum_{k=1}^{lag_max} <fbar, K^k fbar>_mu``."""
    fbar = center(K, f)
    total = inner(K, fbar, fbar)
    g = fbar
    for _ in range(lag_max):
        g = K.matrix @ g
        total += 2.0 * inner(K, fbar, g)
    return total


@dataclass(frozen=True)
class BellmanReport:
    optimum: float
    attained: float
    attained_error: float
    best_perturbed: float
    trials: int
    beaten: int
    tol: float = 1e-10

    @property
    def passed(self) -> bool:
        return self.attained_error <= self.tol and self.beaten == 0


def bellman_check(
    K: FiniteKernel,
    f,
    lam: float,
    trials: int = 200,
    *,
    rng: np.random.Generator | None = None,
    tol: float = 1e-10,
) -> BellmanReport:
    """Check ``<f, A^{-1} f> = max_g 2<f,g> - <g, A g>`` for ``A = I - lam K``."""
    rng = np.random.default_rng(0) if rng is None else rng
    f = _values(K, f)
    A = np.eye(K.n) - lam * K.matrix

    def objective(g):
        return 2.0 * inner(K, f, g) - inner(K, g, A @ g)

    gstar = resolvent_solve(K, f, lam)
    optimum = inner(K, f, gstar)
    attained = objective(gstar)
    scale = max(1.0, float(np.max(np.abs(gstar))))
    best, beaten = -np.inf, 0
    for _ in range(trials):
        h = rng.standard_normal(K.n)
        eps = scale * 10.0 ** rng.uniform(-4, 0)
        val = objective(gstar + eps * h)
        best = max(best, val)
        if val > optimum:
            beaten += 1
    return BellmanReport(
        optimum, attained, abs(attained - optimum) / max(1.0, abs(optimum)), best, trials, beaten, tol
    )


def _same_invariant(K1: FiniteKernel, K2: FiniteKernel) -> None:
    if K1.n != K2.n or np.max(np.abs(K1.invariant - K2.invariant)) > 1e-12:
        raise ValueError("kernels must share one invariant law on one state space")


@dataclass(frozen=True)
class BracketReport:
    lower: float
    middle: float
    upper: float
    tol: float = 1e-9

    @property
    def passed(self) -> bool:
        return self.lower <= self.middle + self.tol and self.middle <= self.upper + self.tol


def peskun_bracket_check(
    K1: FiniteKernel, K2: FiniteKernel, f, lam: float, *, tol: float = 1e-9
) -> BracketReport:
    """Two-sided bracket on the variance difference via resolvent solutions.

    With ``fhat_i = (I - lam K_i)^{-1} fbar``:
    ``E_{lam K1}(fhat_1) - E_{lam K2}(fhat_1) <= (var(f, lam K2) - var(f, lam K1)) / 2
    <= E_{lam K1}(fhat_2) - E_{lam K2}(fhat_2)``.
    """
    _same_invariant(K1, K2)
    fbar = center(K1, f)
    h1 = resolvent_solve(K1, fbar, lam)
    h2 = resolvent_solve(K2, fbar, lam)
    lower = dirichlet_form(K1, h1, lam=lam) - dirichlet_form(K2, h1, lam=lam)
    upper = dirichlet_form(K1, h2, lam=lam) - dirichlet_form(K2, h2, lam=lam)
    middle = 0.5 * (asymptotic_variance(K2, fbar, lam) - asymptotic_variance(K1, fbar, lam))
    return BracketReport(lower, middle, upper, tol)


def mix_kernels(K1: FiniteKernel, K2: FiniteKernel, beta: float) -> FiniteKernel:
    _same_invariant(K1, K2)
    return FiniteKernel(
        K1.labels, beta * K1.matrix + (1.0 - beta) * K2.matrix, K1.invariant, K1.base_state
    )


@dataclass(frozen=True)
class MixtureReport:
    betas: tuple
    mixture: tuple
    chord: tuple
    tol: float = 1e-9

    @property
    def passed(self) -> bool:
        return all(m <= c + self.tol for m, c in zip(self.mixture, self.chord))


def mixture_convexity_check(
    K1: FiniteKernel, K2: FiniteKernel, f, betas: Sequence[float], *, tol: float = 1e-9
) -> MixtureReport:
    """``var(f, beta K1 + (1 - beta) K2) <= beta var(f, K1) + (1 - beta) var(f, K2)``."""
    _same_invariant(K1, K2)
    v1 = asymptotic_variance(K1, f)
    v2 = asymptotic_variance(K2, f)
    mix, chord = [], []
    for b in betas:
        mix.append(asymptotic_variance(mix_kernels(K1, K2, b), f))
        chord.append(b * v1 + (1.0 - b) * v2)
    return MixtureReport(tuple(float(b) for b in betas), tuple(mix), tuple(chord), tol)
