"""Exact finite-state Metropolis-Hastings kernels.

Builds dense transition matrices for

* the marginal (exact) MH kernel on ``X``,
* the pseudo-marginal kernel on pairs ``(x, w)``,
* the ring / penalty-method kernel on ``X`` with a fresh ratio perturbation,
* the coupled ("breve") kernels on tuples ``(x, w_1, ..., w_n)``,
* augmentations ``Pi_nu`` of a kernel by an auxiliary label.

Composite states are ordered lexicographically by (state index, atom index)
and states carrying no invariant mass (zero weight atoms) are left out.
Transitions into a left-out state always have zero probability, so dropping
them changes nothing.  Rows are never renormalized: a row that does not sum
to one within ``ROW_SUM_TOL`` is a construction error.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .coupling import MartingaleCoupling, compose_couplings
from .weightdist import UNIT_MEAN_TOL, DiscreteDistribution

ROW_SUM_TOL = 1e-12
NEG_CLAMP_TOL = 1e-15
RING_TOL = 1e-10
COUPLING_TOL = 1e-9


class KernelError(ValueError):
    pass


class RingConditionError(KernelError):
    pass


def _ro(a, dtype=float) -> np.ndarray:
    arr = np.array(a, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class MarginalChain:
    """Target ``pi`` and proposal ``q`` on a finite state space."""

    pi: np.ndarray
    q: np.ndarray
    states: tuple = ()

    def __post_init__(self):
        pi = np.array(self.pi, dtype=float).ravel()
        q = np.array(self.q, dtype=float)
        n = pi.size
        if q.shape != (n, n):
            raise ValueError("proposal must be an n x n matrix")
        if np.any(pi <= 0) or abs(pi.sum() - 1.0) > 1e-12:
            raise ValueError("pi must be a strictly positive probability vector")
        if np.any(q < 0) or np.max(np.abs(q.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("q must be row-stochastic")
        object.__setattr__(self, "pi", _ro(pi))
        object.__setattr__(self, "q", _ro(q))
        states = tuple(self.states) if self.states else tuple(range(n))
        if len(states) != n:
            raise ValueError("one label per state")
        object.__setattr__(self, "states", states)

    @property
    def n(self) -> int:
        return int(self.pi.size)

    def ratio(self) -> np.ndarray:
        """``r(x, y) = pi(y) q(y, x) / (pi(x) q(x, y))`` on the symmetric set, else 0."""
        pi, q = self.pi, self.q
        sym = (q > 0) & (q.T > 0)
        r = np.zeros_like(q)
        num = pi[None, :] * q.T
        den = pi[:, None] * q
        r[sym] = num[sym] / den[sym]
        return r

    def to_dict(self) -> dict:
        return {"states": list(self.states), "pi": self.pi.tolist(), "q": self.q.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MarginalChain":
        return cls(d["pi"], d["q"], tuple(d.get("states", ())))


@dataclass(frozen=True, eq=False)
class FiniteKernel:
    """Row-stochastic matrix on labelled states with its invariant law.

    ``base_state[i]`` is the index in the underlying :class:`MarginalChain`
    of composite state ``i`` and ``rejection[i]`` the probability of staying
    put because the move was rejected (``None`` if not meaningful).
    """

    labels: tuple
    matrix: np.ndarray
    invariant: np.ndarray
    base_state: np.ndarray = field(default=None)
    rejection: np.ndarray | None = None
    reversible: bool = True

    def __post_init__(self):
        K = np.array(self.matrix, dtype=float)
        n = K.shape[0]
        if K.shape != (n, n):
            raise KernelError("transition matrix must be square")
        if K.min() < -NEG_CLAMP_TOL:
            raise KernelError(f"negative transition probability {K.min():.3e}")
        K = np.clip(K, 0.0, None)
        err = np.max(np.abs(K.sum(axis=1) - 1.0))
        if err > ROW_SUM_TOL:
            raise KernelError(f"rows do not sum to one (max error {err:.3e})")
        mu = np.array(self.invariant, dtype=float).ravel()
        if mu.size != n or np.any(mu < 0) or abs(mu.sum() - 1.0) > 1e-10:
            raise KernelError("invariant must be a probability vector on the states")
        if len(self.labels) != n:
            raise KernelError("one label per state")
        base = np.arange(n) if self.base_state is None else np.asarray(self.base_state)
        object.__setattr__(self, "matrix", _ro(K))
        object.__setattr__(self, "invariant", _ro(mu))
        object.__setattr__(self, "base_state", _ro(base, dtype=int))
        object.__setattr__(self, "labels", tuple(self.labels))
        if self.rejection is not None:
            object.__setattr__(self, "rejection", _ro(self.rejection))

    @property
    def n(self) -> int:
        return int(self.matrix.shape[0])

    def lift(self, f) -> np.ndarray:
        """Function on the base states viewed as a function on composite states."""
        return np.asarray(f, dtype=float)[self.base_state]

    def base_marginal(self, n_base: int | None = None) -> np.ndarray:
        n_base = int(self.base_state.max()) + 1 if n_base is None else n_base
        return np.bincount(self.base_state, weights=self.invariant, minlength=n_base)

    def max_rejection(self) -> float:
        """Largest rejection probability over states charged by the invariant law."""
        if self.rejection is None:
            raise KernelError("kernel carries no rejection probabilities")
        return float(np.max(self.rejection[self.invariant > 0]))

    def min_rejection(self) -> float:
        if self.rejection is None:
            raise KernelError("kernel carries no rejection probabilities")
        return float(np.min(self.rejection[self.invariant > 0]))

    def to_dict(self) -> dict:
        return {
            "labels": [list(l) if isinstance(l, tuple) else l for l in self.labels],
            "matrix": self.matrix.tolist(),
            "invariant": self.invariant.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FiniteKernel":
        labels = tuple(tuple(l) if isinstance(l, list) else l for l in d["labels"])
        return cls(labels, d["matrix"], d["invariant"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for row in self.matrix:
            w.writerow([f"{v:.12g}" for v in row])
        return buf.getvalue()


def _with_rejection(move: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Add the rejection mass ``1 - sum(move)`` to the diagonal."""
    rej = 1.0 - move.sum(axis=1)
    if rej.min() < -ROW_SUM_TOL:
        raise KernelError(f"move probabilities exceed one (by {-rej.min():.3e})")
    rej = np.clip(rej, 0.0, None)
    K = move.copy()
    K[np.diag_indices_from(K)] += rej
    return K, rej


def marginal_mh_kernel(chain: MarginalChain) -> FiniteKernel:
    move = chain.q * np.minimum(1.0, chain.ratio())
    K, rej = _with_rejection(move)
    return FiniteKernel(chain.states, K, chain.pi, np.arange(chain.n), rej)


def check_weights(chain: MarginalChain, weights: Sequence[DiscreteDistribution]) -> None:
    if len(weights) != chain.n:
        raise ValueError("one weight law per state")
    for x, Q in enumerate(weights):
        if not Q.is_unit_mean(UNIT_MEAN_TOL):
            raise ValueError(f"weight law of state {x} has mean {Q.mean()!r}, not 1")


def _pm_states(weights: Sequence[DiscreteDistribution]):
    xs, ws, ps = [], [], []
    for x, Q in enumerate(weights):
        for w, p in zip(Q.atoms, Q.probs):
            if w > 0:
                xs.append(x)
                ws.append(w)
                ps.append(p)
    return np.array(xs, dtype=int), np.array(ws), np.array(ps)


def pseudo_marginal_acceptance(
    chain: MarginalChain, weights: Sequence[DiscreteDistribution], x: int, w: float
) -> float:
    """Total move probability ``1 - rho(x, w)`` out of pair ``(x, w)``."""
    r = chain.ratio()
    total = 0.0
    for y in range(chain.n):
        if chain.q[x, y] == 0:
            continue
        Qy = weights[y]
        total += chain.q[x, y] * float(np.dot(Qy.probs, np.minimum(1.0, r[x, y] * Qy.atoms / w)))
    return total


def pseudo_marginal_kernel(
    chain: MarginalChain, weights: Sequence[DiscreteDistribution]
) -> FiniteKernel:
    """Exact pseudo-marginal kernel on pairs ``(x, w)`` with invariant ``pi(x) Q_x(w) w``."""
    check_weights(chain, weights)
    xs, ws, ps = _pm_states(weights)
    r = chain.ratio()
    move = (
        chain.q[xs[:, None], xs[None, :]]
        * ps[None, :]
        * np.minimum(1.0, r[xs[:, None], xs[None, :]] * ws[None, :] / ws[:, None])
    )
    K, rej = _with_rejection(move)
    mu = chain.pi[xs] * ps * ws
    labels = tuple((int(x), float(w)) for x, w in zip(xs, ws))
    return FiniteKernel(labels, K, mu, xs, rej)


def acceptance_rates(
    chain: MarginalChain, weights: Sequence[DiscreteDistribution]
) -> tuple[np.ndarray, float]:
    """Conditional acceptance ``alpha_xy`` and stationary acceptance ``alpha``.

    ``alpha_xy = sum_{w,u} Q_x(w) w Q_y(u) min(1, r(x,y) u / w)`` and
    ``alpha = sum_{x,y} pi(x) q(x,y) alpha_xy``.
    """
    check_weights(chain, weights)
    r = chain.ratio()
    n = chain.n
    A = np.zeros((n, n))
    for x in range(n):
        Qx = weights[x]
        pos = Qx.atoms > 0
        wx, px = Qx.atoms[pos], Qx.probs[pos]
        for y in range(n):
            Qy = weights[y]
            acc = np.minimum(1.0, r[x, y] * Qy.atoms[None, :] / wx[:, None])
            A[x, y] = float(np.sum((px * wx)[:, None] * Qy.probs[None, :] * acc))
    alpha = float(np.sum(chain.pi[:, None] * chain.q * A))
    return A, alpha


# --- ring / penalty method -----------------------------------------------------------


@dataclass(frozen=True)
class RingReport:
    max_violation: float
    worst_pair: tuple | None
    tol: float = RING_TOL

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tol


def _measure_gap(atoms_a, mass_a, atoms_b, mass_b) -> float:
    """Largest atom-wise difference between two finite measures."""
    atoms = np.concatenate([atoms_a, atoms_b])
    mass = np.concatenate([mass_a, -np.asarray(mass_b)])
    order = np.argsort(atoms, kind="stable")
    atoms, mass = atoms[order], mass[order]
    worst, acc, anchor = 0.0, 0.0, atoms[0]
    for a, m in zip(atoms, mass):
        if abs(a - anchor) > 1e-12 * max(1.0, abs(anchor)):
            worst = max(worst, abs(acc))
            acc, anchor = 0.0, a
        acc += m
    return max(worst, abs(acc))


def check_ring_condition(
    ringweights: Mapping[tuple[int, int], DiscreteDistribution]
) -> RingReport:
    """Compare ``Q_xy(dw) w`` with the image of ``Q_yx`` under ``w -> 1/w`` for every pair.

    A pair whose reverse law is missing is compared against the point mass
    at one, which is what :func:`ring_kernel` uses for missing pairs.
    """
    unit = DiscreteDistribution.point_mass(1.0)
    worst, worst_pair = 0.0, None
    for (x, y), Qxy in ringweights.items():
        Qyx = ringweights.get((y, x), unit)
        if np.any(Qxy.atoms <= 0) or np.any(Qyx.atoms <= 0):
            return RingReport(float("inf"), (x, y))
        gap = _measure_gap(Qxy.atoms, Qxy.atoms * Qxy.probs, 1.0 / Qyx.atoms, Qyx.probs)
        if gap > worst:
            worst, worst_pair = gap, (x, y)
    return RingReport(worst, worst_pair)


def ring_kernel(
    chain: MarginalChain,
    ringweights: Mapping[tuple[int, int], DiscreteDistribution],
    *,
    check: bool = True,
) -> FiniteKernel:
    """Penalty-method kernel ``q(x,y) E[min(1, r(x,y) W_xy)]`` on the original states.

    Pairs absent from ``ringweights`` use the exact ratio (point mass at one).
    """
    if check:
        report = check_ring_condition(ringweights)
        if not report.passed:
            raise RingConditionError(
                f"ring condition violated by {report.max_violation:.3e} at pair {report.worst_pair}"
            )
    r = chain.ratio()
    move = np.zeros_like(chain.q)
    for x in range(chain.n):
        for y in range(chain.n):
            if chain.q[x, y] == 0:
                continue
            Q = ringweights.get((x, y))
            if Q is None:
                factor = min(1.0, r[x, y])
            else:
                factor = float(np.dot(Q.probs, np.minimum(1.0, r[x, y] * Q.atoms)))
            move[x, y] = chain.q[x, y] * factor
    K, rej = _with_rejection(move)
    return FiniteKernel(chain.states, K, chain.pi, np.arange(chain.n), rej)


def symmetric_diatomic_ring(a: Mapping[tuple[int, int], float] | np.ndarray, n: int | None = None):
    """Ring laws ``(delta_a + a delta_{1/a}) / (1 + a)`` for a symmetric ``a_xy > 0``."""
    A = np.asarray(a, dtype=float)
    n = A.shape[0] if n is None else n
    out = {}
    for x in range(n):
        for y in range(n):
            axy = A[x, y]
            if axy <= 0:
                continue
            out[(x, y)] = DiscreteDistribution.from_atoms(
                [axy, 1.0 / axy], [1.0 / (1.0 + axy), axy / (1.0 + axy)]
            )
    return out


# --- coupled kernels -------------------------------------------------------------------


def _joint_from_coupling(R: MartingaleCoupling) -> tuple[np.ndarray, np.ndarray]:
    i, j = np.nonzero(R.joint > 0)
    tuples = np.stack([R.row_atoms[i], R.col_atoms[j]], axis=1)
    return tuples, R.joint[i, j]


def _check_coupling(R: MartingaleCoupling, x: int) -> None:
    J = R.joint
    if J.min() < -COUPLING_TOL or abs(J.sum() - 1.0) > COUPLING_TOL:
        raise KernelError(f"coupling of state {x} is not a probability law")
    err = float(np.max(np.abs(J @ R.col_atoms - R.row_atoms * J.sum(axis=1))))
    if err > COUPLING_TOL:
        raise KernelError(f"coupling of state {x} violates the martingale property by {err:.3e}")


def breve_kernels_from_joints(
    chain: MarginalChain, joints: Sequence[tuple[np.ndarray, np.ndarray]]
) -> list[FiniteKernel]:
    """Coupled kernels ``P_1 .. P_n`` sharing the invariant ``pi(x) R_x(dw_1..dw_n) w_n``.

    ``joints[x] = (tuples, probs)`` is the joint law ``R_x`` of a Markovian
    martingale ``(w_1, .., w_n)``.  Kernel ``i`` proposes ``(y, u)`` from
    ``q(x, y) R_y(u)``, reweights by ``u_n / u_i`` and accepts with
    ``min(1, r(x, y) u_i / w_i)``; rejection leaves all coordinates unchanged.
    """
    if len(joints) != chain.n:
        raise ValueError("one joint law per state")
    n_coord = joints[0][0].shape[1]
    xs, tup, pr = [], [], []
    for x, (tuples, probs) in enumerate(joints):
        for t, p in zip(tuples, probs):
            if p <= 0 or t[-1] <= 0:
                continue
            if np.any(t <= 0):
                raise KernelError(
                    f"state {x}: zero intermediate weight below a positive last weight; "
                    "the coupling is not a martingale"
                )
            xs.append(x)
            tup.append(t)
            pr.append(p)
    xs = np.array(xs, dtype=int)
    W = np.array(tup)
    P = np.array(pr)
    for x, (tuples, probs) in enumerate(joints):
        zero_u = tuples[:, :-1] == 0
        if np.any(zero_u.any(axis=1) & (tuples[:, -1] > 0) & (probs > 1e-12)):
            raise KernelError(f"state {x}: t > 0 paired with u = 0 in the coupling")

    marginals = [
        [DiscreteDistribution.from_atoms(tuples[:, c], probs) for tuples, probs in joints]
        for c in range(n_coord)
    ]
    mu = chain.pi[xs] * P * W[:, -1]
    r = chain.ratio()
    qb = chain.q[xs[:, None], xs[None, :]]
    rb = r[xs[:, None], xs[None, :]]
    labels = tuple((int(x),) + tuple(float(v) for v in w) for x, w in zip(xs, W))

    kernels = []
    for c in range(n_coord):
        wi = W[:, c]
        move = qb * (P * W[:, -1] / wi)[None, :] * np.minimum(1.0, rb * wi[None, :] / wi[:, None])
        rej = np.array(
            [1.0 - pseudo_marginal_acceptance(chain, marginals[c], x, w) for x, w in zip(xs, wi)]
        )
        if rej.min() < -ROW_SUM_TOL:
            raise KernelError("rejection probability below zero")
        rej = np.clip(rej, 0.0, None)
        K = move.copy()
        K[np.diag_indices_from(K)] += rej
        kernels.append(FiniteKernel(labels, K, mu, xs, rej))
    return kernels


def breve_kernels(
    chain: MarginalChain, couplings: Sequence[MartingaleCoupling]
) -> tuple[FiniteKernel, FiniteKernel]:
    """The pair of coupled kernels for ``Q^(1) <=cx Q^(2)`` given per-state couplings."""
    for x, R in enumerate(couplings):
        _check_coupling(R, x)
    P1, P2 = breve_kernels_from_joints(chain, [_joint_from_coupling(R) for R in couplings])
    return P1, P2


def breve_chain_kernels(
    chain: MarginalChain, coupling_chains: Sequence[Sequence[MartingaleCoupling]]
) -> list[FiniteKernel]:
    """n-fold coupled kernels from per-state chains of pairwise couplings."""
    for x, cs in enumerate(coupling_chains):
        for R in cs:
            _check_coupling(R, x)
    return breve_kernels_from_joints(chain, [compose_couplings(cs) for cs in coupling_chains])


def projection_error(
    breve: FiniteKernel, pm: FiniteKernel, coord: int
) -> tuple[float, float]:
    """Check that a coupled kernel projects onto a pseudo-marginal kernel.

    Summing ``breve`` rows over every weight coordinate except ``coord``
    must reproduce the rows of ``pm``, and the invariant must project onto
    the invariant of ``pm``.  Returns ``(matrix_error, invariant_error)``.
    """
    index = {(int(l[0]), float(l[1])): j for j, l in enumerate(pm.labels)}

    def find(label):
        key = (int(label[0]), float(label[1 + coord]))
        if key in index:
            return index[key]
        for (x, w), j in index.items():
            if x == key[0] and abs(w - key[1]) <= 1e-12 * max(1.0, abs(w)):
                return j
        raise KeyError(f"no pseudo-marginal state for {label}")

    proj = np.array([find(l) for l in breve.labels])
    G = np.zeros((breve.n, pm.n))
    G[np.arange(breve.n), proj] = 1.0
    mat_err = float(np.max(np.abs(breve.matrix @ G - pm.matrix[proj])))
    inv_err = float(np.max(np.abs(breve.invariant @ G - pm.invariant)))
    return mat_err, inv_err


# --- augmentation -------------------------------------------------------------------


def augment_kernel(base: FiniteKernel, offdiag, nu) -> FiniteKernel:
    """``Pi_nu(x,w; y,u) = p(x,y) nu(y,u) + 1{(y,u)=(x,w)} r(x)``.

    ``offdiag`` is the sub-stochastic part ``p`` of ``base = p + diag(r)``;
    ``nu`` is a row-stochastic matrix from base states to auxiliary labels.
    Pairs with ``nu(x, u) = 0`` carry no invariant mass and are left out.
    """
    p = np.asarray(offdiag, dtype=float)
    nu = np.asarray(nu, dtype=float)
    if p.shape != base.matrix.shape:
        raise ValueError("offdiag must have the shape of the base kernel")
    if p.min() < 0 or np.max(p.sum(axis=1)) > 1.0 + ROW_SUM_TOL:
        raise KernelError("offdiag must be nonnegative with row sums at most one")
    r = np.clip(1.0 - p.sum(axis=1), 0.0, 1.0)
    if np.max(np.abs(p + np.diag(r) - base.matrix)) > ROW_SUM_TOL:
        raise KernelError("base kernel is not offdiag plus a diagonal remainder")
    if nu.shape[0] != base.n or nu.min() < 0 or np.max(np.abs(nu.sum(axis=1) - 1.0)) > ROW_SUM_TOL:
        raise KernelError("nu must be row-stochastic with one row per base state")

    xs, us = np.nonzero(nu > 0)
    K = p[xs[:, None], xs[None, :]] * nu[xs, us][None, :]
    K[np.diag_indices_from(K)] += r[xs]
    mu = base.invariant[xs] * nu[xs, us]
    labels = tuple((base.labels[x], int(u)) for x, u in zip(xs, us))
    return FiniteKernel(labels, K, mu, base.base_state[xs], r[xs])


# --- random instances ---------------------------------------------------------------


def random_marginal_chain(
    rng: np.random.Generator, n: int, *, sparsity: float = 0.0
) -> MarginalChain:
    """Random target and proposal; ``sparsity`` zeroes proposal entries (symmetric pattern)."""
    pi = rng.dirichlet(np.ones(n) * 2.0)
    pi = np.maximum(pi, 1e-3)
    pi /= pi.sum()
    q = rng.uniform(0.1, 1.0, size=(n, n))
    if sparsity > 0:
        mask = rng.uniform(size=(n, n)) < sparsity
        mask = mask | mask.T
        np.fill_diagonal(mask, False)
        q[mask] = 0.0
    q /= q.sum(axis=1, keepdims=True)
    return MarginalChain(pi, q)


def independence_chain(pi) -> MarginalChain:
    """Chain whose proposal is the target itself (perfect independence sampler)."""
    pi = np.asarray(pi, dtype=float)
    return MarginalChain(pi, np.tile(pi, (pi.size, 1)))
