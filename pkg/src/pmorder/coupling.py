"""Martingale couplings of convex-ordered finite laws.

For ``Q1 <=cx Q2`` there is a joint law ``R`` of ``(W, V)`` with marginals
``Q1`` and ``Q2`` and ``E[V | W] = W``.  Existence is classical; here ``R``
is found as any feasible point of the linear program

    R >= 0,  sum_j R[i, j] = Q1[i],  sum_i R[i, j] = Q2[j],
    sum_j R[i, j] (v_j - w_i) = 0  for every row i.

Couplings are not unique.  Callers must never rely on a particular vertex;
``perturb_seed`` reorders the variables so that different vertices can be
reached when the program is degenerate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .simplex import InfeasibleError, find_feasible_point
from .weightdist import CxVerdict, DiscreteDistribution, convex_order_leq

VERIFY_TOL = 1e-9


class CouplingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class MartingaleCoupling:
    row_atoms: np.ndarray
    col_atoms: np.ndarray
    joint: np.ndarray

    def __post_init__(self):
        for name in ("row_atoms", "col_atoms", "joint"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if self.joint.shape != (self.row_atoms.size, self.col_atoms.size):
            raise ValueError("joint shape does not match the atom vectors")

    def row_marginal(self) -> DiscreteDistribution:
        return DiscreteDistribution.from_atoms(self.row_atoms, self.joint.sum(axis=1))

    def col_marginal(self) -> DiscreteDistribution:
        return DiscreteDistribution.from_atoms(self.col_atoms, self.joint.sum(axis=0))

    def conditional(self) -> np.ndarray:
        """Row-conditional kernel ``K2(w_i, v_j) = R[i, j] / sum_j R[i, j]``."""
        mass = self.joint.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            K = np.where(mass > 0, self.joint / mass, 0.0)
        return K

    def conditional_means(self) -> np.ndarray:
        return self.conditional() @ self.col_atoms

    def to_dict(self) -> dict:
        return {
            "row_atoms": self.row_atoms.tolist(),
            "col_atoms": self.col_atoms.tolist(),
            "joint": self.joint.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MartingaleCoupling":
        return cls(d["row_atoms"], d["col_atoms"], d["joint"])


@dataclass(frozen=True)
class CouplingReport:
    marginal: float
    martingale: float
    nonnegativity: float
    tol: float = VERIFY_TOL

    @property
    def passed(self) -> bool:
        return max(self.marginal, self.martingale, self.nonnegativity) < self.tol

    def to_dict(self) -> dict:
        return {
            "marginal": self.marginal,
            "martingale": self.martingale,
            "nonnegativity": self.nonnegativity,
            "tol": self.tol,
            "passed": self.passed,
        }


def build_martingale_coupling(
    Q1: DiscreteDistribution,
    Q2: DiscreteDistribution,
    *,
    perturb_seed: int | None = None,
) -> MartingaleCoupling:
    if convex_order_leq(Q1, Q2) is not CxVerdict.TRUE:
        raise CouplingError("build_martingale_coupling needs Q1 <=cx Q2")
    w, p = Q1.atoms, Q1.probs
    v, q = Q2.atoms, Q2.probs
    n1, n2 = w.size, v.size
    nvar = n1 * n2

    A = np.zeros((2 * n1 + n2, nvar))
    for i in range(n1):
        A[i, i * n2:(i + 1) * n2] = 1.0
        A[n1 + n2 + i, i * n2:(i + 1) * n2] = v - w[i]
    for j in range(n2):
        A[n1 + j, j::n2] = 1.0
    b = np.concatenate([p, q, np.zeros(n1)])

    perm = np.arange(nvar)
    if perturb_seed is not None:
        perm = np.random.default_rng(perturb_seed).permutation(nvar)
    try:
        x_perm = find_feasible_point(A[:, perm], b)
    except InfeasibleError as exc:
        raise CouplingError(f"martingale coupling program infeasible: {exc}") from exc
    x = np.empty(nvar)
    x[perm] = x_perm
    R = x.reshape(n1, n2)
    R[R < 1e-15] = 0.0
    return MartingaleCoupling(w, v, R)


def verify_martingale_coupling(
    R: MartingaleCoupling,
    Q1: DiscreteDistribution,
    Q2: DiscreteDistribution,
    tol: float = VERIFY_TOL,
) -> CouplingReport:
    """Largest violation of each defining property of a martingale coupling."""
    if R.row_atoms.size != Q1.size or R.col_atoms.size != Q2.size:
        raise ValueError("coupling shape does not match the marginals")
    atom_err = max(
        float(np.max(np.abs(R.row_atoms - Q1.atoms))),
        float(np.max(np.abs(R.col_atoms - Q2.atoms))),
    )
    J = R.joint
    marginal = max(
        atom_err,
        float(np.max(np.abs(J.sum(axis=1) - Q1.probs))),
        float(np.max(np.abs(J.sum(axis=0) - Q2.probs))),
    )
    martingale = float(np.max(np.abs(J @ R.col_atoms - R.row_atoms * J.sum(axis=1))))
    nonneg = float(max(0.0, -J.min()))
    return CouplingReport(marginal, martingale, nonneg, tol)


def diagonal_coupling(Q: DiscreteDistribution) -> MartingaleCoupling:
    return MartingaleCoupling(Q.atoms, Q.atoms, np.diag(Q.probs))


def chain_couplings(
    Qs: Sequence[DiscreteDistribution], *, perturb_seed: int | None = None
) -> list[MartingaleCoupling]:
    """Pairwise couplings of a convex-ordered sequence ``Q_1 <=cx ... <=cx Q_n``.

    Composing the conditionals, ``R(w_1..w_n) = Q_1(w_1) K_2(w_1, w_2) ... K_n(w_{n-1}, w_n)``,
    gives a Markovian martingale with the prescribed marginals.
    """
    if len(Qs) < 2:
        raise ValueError("need at least two laws to chain")
    for k, (a, b) in enumerate(zip(Qs[:-1], Qs[1:])):
        if convex_order_leq(a, b) is not CxVerdict.TRUE:
            raise CouplingError(f"laws {k} and {k + 1} are not convex ordered")
    out = []
    for k, (a, b) in enumerate(zip(Qs[:-1], Qs[1:])):
        seed = None if perturb_seed is None else perturb_seed + k
        out.append(build_martingale_coupling(a, b, perturb_seed=seed))
    return out


def compose_couplings(couplings: Sequence[MartingaleCoupling]) -> tuple[np.ndarray, np.ndarray]:
    """Joint law of the Markovian martingale built from pairwise couplings.

    Returns ``(tuples, probs)`` where ``tuples`` has shape ``(m, n)`` holding
    atom values ``w_1..w_n`` (lexicographic in atom index) and ``probs`` the
    matching probabilities; zero-probability tuples are dropped.
    """
    first = couplings[0]
    paths = [((i,), float(p)) for i, p in enumerate(first.joint.sum(axis=1)) if p > 0]
    atoms = [first.row_atoms]
    for k, R in enumerate(couplings):
        if k > 0 and not np.allclose(R.row_atoms, couplings[k - 1].col_atoms, atol=1e-12):
            raise ValueError("consecutive couplings do not share an atom set")
        K = R.conditional()
        atoms.append(R.col_atoms)
        paths = [
            (idx + (j,), p * K[idx[-1], j])
            for idx, p in paths
            for j in range(R.col_atoms.size)
            if K[idx[-1], j] > 0
        ]
    tuples = np.array([[atoms[c][i] for c, i in enumerate(idx)] for idx, _ in paths])
    probs = np.array([p for _, p in paths])
    return tuples, probs


def composed_marginals(couplings: Sequence[MartingaleCoupling]) -> list[DiscreteDistribution]:
    tuples, probs = compose_couplings(couplings)
    return [
        DiscreteDistribution.from_atoms(tuples[:, c], probs)
        for c in range(tuples.shape[1])
    ]
