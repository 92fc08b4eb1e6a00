"""Finite-support weight laws on the nonnegative reals.

Everything here works on :class:`DiscreteDistribution`, an immutable
canonical (sorted, merged) finite law.  The convex order between two such
laws is decided exactly through their stop-loss functions
``t -> E[(W - t)_+]``, which are piecewise linear with breakpoints at the
atoms.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

MERGE_TOL = 1e-12
PROB_SUM_TOL = 1e-12
UNIT_MEAN_TOL = 1e-10
MEAN_DIFF_TOL = 1e-9
STOP_LOSS_TOL = 1e-12

DEFAULT_MAX_TERMS = 8
DEFAULT_MAX_ENUMERATION = 10**6


class CapExceededError(ValueError):
    """Raised when an exact enumeration would exceed its configured size cap."""


class CxVerdict(str, enum.Enum):
    TRUE = "true"
    FALSE = "false"
    MEANS_DIFFER = "means_differ"

    def __bool__(self) -> bool:
        return self is CxVerdict.TRUE


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DiscreteDistribution:
    """Finite law ``sum_i probs[i] * delta_{atoms[i]}`` on ``[0, inf)``.

    Construct through :meth:`from_atoms` (or the module-level helpers), which
    canonicalizes: atoms are sorted, atoms within ``MERGE_TOL`` are merged
    (probability-weighted position, so the mean is kept) and zero-probability
    atoms are dropped.
    """

    atoms: np.ndarray
    probs: np.ndarray

    @classmethod
    def from_atoms(cls, atoms: Sequence[float], probs: Sequence[float]) -> "DiscreteDistribution":
        atoms = np.asarray(atoms, dtype=float).ravel()
        probs = np.asarray(probs, dtype=float).ravel()
        if atoms.shape != probs.shape:
            raise ValueError("atoms and probs must have the same length")
        if atoms.size == 0:
            raise ValueError("a distribution needs at least one atom")
        if not (np.all(np.isfinite(atoms)) and np.all(np.isfinite(probs))):
            raise ValueError("atoms and probs must be finite")
        if np.any(atoms < 0):
            raise ValueError("weight atoms must be nonnegative")
        if np.any(probs < -PROB_SUM_TOL):
            raise ValueError("probabilities must be nonnegative")
        probs = np.clip(probs, 0.0, None)
        if abs(probs.sum() - 1.0) > PROB_SUM_TOL:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")

        order = np.argsort(atoms, kind="stable")
        atoms, probs = atoms[order], probs[order]
        out_a: list[float] = []
        out_p: list[float] = []
        group_a = [atoms[0]]
        group_p = [probs[0]]
        for a, p in zip(atoms[1:], probs[1:]):
            if a - group_a[-1] <= MERGE_TOL:
                group_a.append(a)
                group_p.append(p)
                continue
            out_a.append(_merged_position(group_a, group_p))
            out_p.append(math.fsum(group_p))
            group_a, group_p = [a], [p]
        out_a.append(_merged_position(group_a, group_p))
        out_p.append(math.fsum(group_p))

        keep = [i for i, p in enumerate(out_p) if p > 0.0]
        return cls(_frozen([out_a[i] for i in keep]), _frozen([out_p[i] for i in keep]))

    @classmethod
    def point_mass(cls, w: float = 1.0) -> "DiscreteDistribution":
        return cls.from_atoms([w], [1.0])

    @property
    def size(self) -> int:
        return int(self.atoms.size)

    def mean(self) -> float:
        return math.fsum(self.atoms * self.probs)

    def variance(self) -> float:
        m = self.mean()
        return math.fsum(self.probs * (self.atoms - m) ** 2)

    def is_unit_mean(self, tol: float = UNIT_MEAN_TOL) -> bool:
        return abs(self.mean() - 1.0) <= tol

    def prob_of(self, w: float, tol: float = MERGE_TOL) -> float:
        """Probability of the atom at ``w`` (0 when there is none)."""
        i = int(np.searchsorted(self.atoms, w - tol))
        if i < self.size and abs(self.atoms[i] - w) <= tol:
            return float(self.probs[i])
        return 0.0

    def scaled(self, c: float) -> "DiscreteDistribution":
        if c <= 0:
            raise ValueError("scale must be positive")
        return DiscreteDistribution.from_atoms(self.atoms * c, self.probs)

    def weighted(self) -> "DiscreteDistribution":
        """Size-biased law ``Q(dw) w / E[W]``."""
        m = self.mean()
        if m <= 0:
            raise ValueError("size-biasing needs a positive mean")
        return DiscreteDistribution.from_atoms(self.atoms, self.atoms * self.probs / m)

    def cdf(self, t: float) -> float:
        return math.fsum(self.probs[self.atoms <= t])

    def allclose(self, other: "DiscreteDistribution", atol: float = 1e-10) -> bool:
        return (
            self.size == other.size
            and bool(np.allclose(self.atoms, other.atoms, rtol=0, atol=atol))
            and bool(np.allclose(self.probs, other.probs, rtol=0, atol=atol))
        )

    def to_dict(self) -> dict:
        return {"atoms": self.atoms.tolist(), "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "DiscreteDistribution":
        return cls.from_atoms(d["atoms"], d["probs"])

    def __repr__(self) -> str:
        body = ", ".join(f"{a:.6g}: {p:.6g}" for a, p in zip(self.atoms, self.probs))
        return f"DiscreteDistribution({{{body}}})"


def _merged_position(atoms: list[float], probs: list[float]) -> float:
    total = math.fsum(probs)
    if total <= 0:
        return float(atoms[0])
    return math.fsum(a * p for a, p in zip(atoms, probs)) / total


def diatomic(lo: float, hi: float, mean: float = 1.0) -> DiscreteDistribution:
    """Two-point law on ``{lo, hi}`` with the given mean."""
    if not lo <= mean <= hi:
        raise ValueError("need lo <= mean <= hi")
    if hi == lo:
        return DiscreteDistribution.point_mass(mean)
    p_hi = (mean - lo) / (hi - lo)
    return DiscreteDistribution.from_atoms([lo, hi], [1.0 - p_hi, p_hi])


def stop_loss(Q: DiscreteDistribution, t: float) -> float:
    """``E[(W - t)_+]`` for ``W ~ Q``."""
    return math.fsum(Q.probs * np.maximum(Q.atoms - t, 0.0))


def convex_order_leq(Q1: DiscreteDistribution, Q2: DiscreteDistribution) -> CxVerdict:
    """Decide ``Q1 <=cx Q2``.

    Means must agree within ``MEAN_DIFF_TOL``; otherwise the laws are not
    comparable and ``MEANS_DIFFER`` is returned.  Both stop-loss functions
    are piecewise linear with kinks only at atoms, so comparing them on the
    union of the two atom sets is exact.
    """
    if abs(Q1.mean() - Q2.mean()) > MEAN_DIFF_TOL:
        return CxVerdict.MEANS_DIFFER
    for t in np.union1d(Q1.atoms, Q2.atoms):
        if stop_loss(Q1, t) > stop_loss(Q2, t) + STOP_LOSS_TOL:
            return CxVerdict.FALSE
    return CxVerdict.TRUE


# --- simplex weights and averaging -------------------------------------------------


@dataclass(frozen=True, eq=False)
class SimplexWeights:
    entries: np.ndarray

    def __post_init__(self):
        e = np.array(self.entries, dtype=float).ravel()
        if e.size == 0:
            raise ValueError("simplex weights need at least one entry")
        if np.any(e < -PROB_SUM_TOL) or np.any(e > 1 + PROB_SUM_TOL):
            raise ValueError("simplex weights must lie in [0, 1]")
        if abs(e.sum() - 1.0) > PROB_SUM_TOL:
            raise ValueError("simplex weights must sum to 1")
        e = np.clip(e, 0.0, 1.0)
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    def __len__(self) -> int:
        return int(self.entries.size)

    @classmethod
    def uniform(cls, k: int, n: int | None = None) -> "SimplexWeights":
        """``u_k`` in the ``n``-simplex: ``k`` equal weights then zeros."""
        n = k if n is None else n
        if not 1 <= k <= n:
            raise ValueError("need 1 <= k <= n")
        e = np.zeros(n)
        e[:k] = 1.0 / k
        return cls(e)


def _as_simplex(w) -> SimplexWeights:
    return w if isinstance(w, SimplexWeights) else SimplexWeights(np.asarray(w, dtype=float))


def majorizes(lam, mu) -> bool:
    """True iff ``lam`` is majorized by ``mu`` (``lam`` is the less spread one).

    Descending partial sums of ``lam`` must not exceed those of ``mu``.
    """
    lam, mu = _as_simplex(lam), _as_simplex(mu)
    if len(lam) != len(mu):
        raise ValueError("majorization needs vectors of equal length")
    a = np.cumsum(np.sort(lam.entries)[::-1])
    b = np.cumsum(np.sort(mu.entries)[::-1])
    return bool(np.all(a <= b + PROB_SUM_TOL))


def averaged_law(
    Q: DiscreteDistribution,
    lam,
    *,
    max_terms: int = DEFAULT_MAX_TERMS,
    max_enumeration: int = DEFAULT_MAX_ENUMERATION,
) -> DiscreteDistribution:
    """Exact law of ``sum_i lam[i] Z_i`` with ``Z_i`` iid ``Q``.

    Computed by successive convolution with atom merging; zero weights are
    skipped since they do not move the law.
    """
    lam = _as_simplex(lam)
    n = len(lam)
    if not Q.is_unit_mean():
        raise ValueError("averaged_law expects a unit-mean law")
    if n > max_terms:
        raise CapExceededError(f"{n} weights exceed the cap of {max_terms}")
    if Q.size**n > max_enumeration:
        raise CapExceededError(
            f"{Q.size}^{n} support combinations exceed the cap of {max_enumeration}"
        )
    atoms = np.array([0.0])
    probs = np.array([1.0])
    for li in lam.entries:
        if li == 0.0:
            continue
        new_atoms = (atoms[:, None] + li * Q.atoms[None, :]).ravel()
        new_probs = (probs[:, None] * Q.probs[None, :]).ravel()
        merged = DiscreteDistribution.from_atoms(new_atoms, new_probs / new_probs.sum())
        atoms, probs = merged.atoms, merged.probs
    return DiscreteDistribution.from_atoms(atoms, probs)


# --- extremal laws -----------------------------------------------------------------


def extremal_bounded(mu: float, a: float, b: float) -> tuple[DiscreteDistribution, DiscreteDistribution]:
    """Convex-order minimum and maximum among laws on ``[a, b]`` with mean ``mu``."""
    if a > mu or mu > b:
        raise ValueError("need a <= mu <= b")
    lo = DiscreteDistribution.point_mass(mu)
    if a == b:
        return lo, lo
    hi = DiscreteDistribution.from_atoms([a, b], [(b - mu) / (b - a), (mu - a) / (b - a)])
    return lo, hi


def extremal_var_constrained(
    mu: float, sigma2: float, a: float, b: float, t: float
) -> tuple[float, DiscreteDistribution]:
    """Largest ``E[(W - t)_+]`` over laws on ``[a, b]`` with mean ``mu``, variance ``sigma2``.

    Returns the maximal value and a diatomic maximizer.  The four regimes are
    selected by the position of ``t`` relative to the midpoint ``(a + b) / 2``
    and by comparing ``s = sqrt(sigma2 + (mu - t)^2)`` with the distance from
    ``t`` to the nearer end; on a shared boundary the first regime listed
    below wins (both give the same value there).
    """
    if not a <= mu <= b:
        raise ValueError("need a <= mu <= b")
    if sigma2 < 0 or sigma2 > (mu - a) * (b - mu) + 1e-12:
        raise ValueError("sigma2 must lie in [0, (mu - a)(b - mu)]")
    if sigma2 == 0.0:
        return max(mu - t, 0.0), DiscreteDistribution.point_mass(mu)

    # outside the support every feasible law has the same stop-loss value
    if t <= a:
        return mu - t, diatomic(a, mu + sigma2 / (mu - a), mean=mu)
    if t >= b:
        return 0.0, diatomic(mu - sigma2 / (b - mu), b, mean=mu)

    c = 0.5 * (a + b)
    s = math.sqrt(sigma2 + (mu - t) ** 2)
    if t <= c and s <= t - a:
        value, lo, hi = 0.5 * (mu - t + s), t - s, t + s
    elif t <= c:
        value = (mu - a) * ((mu - t) * (mu - a) + sigma2) / ((mu - a) ** 2 + sigma2)
        lo, hi = a, mu + sigma2 / (mu - a)
    elif s <= b - t:
        value, lo, hi = 0.5 * (mu - t + s), t - s, t + s
    else:
        value = (b - t) * sigma2 / ((mu - b) ** 2 + sigma2)
        lo, hi = mu - sigma2 / (b - mu), b
    return value, diatomic(lo, hi, mean=mu)


def supremal_cdf(sigma2: float, t: float) -> float:
    """Cdf at ``t`` of the supremal unit-mean law on ``[0, inf)`` with variance bound ``sigma2``."""
    if sigma2 <= 0:
        raise ValueError("sigma2 must be positive")
    if t < 0:
        return 0.0
    if t < 0.5 * (sigma2 + 1.0):
        return sigma2 / (1.0 + sigma2)
    return 0.5 + 0.5 * (t - 1.0) / math.sqrt(sigma2 + (1.0 - t) ** 2)


# --- random generators used by sweeps and tests --------------------------------------


def random_unit_mean_law(
    rng: np.random.Generator, size: int, *, low: float = 0.1, high: float = 3.0
) -> DiscreteDistribution:
    """Random law with ``size`` positive atoms rescaled to unit mean."""
    atoms = rng.uniform(low, high, size=size)
    probs = rng.dirichlet(np.ones(size))
    atoms = atoms / np.dot(atoms, probs)
    return DiscreteDistribution.from_atoms(atoms, probs)


def mean_preserving_spread(
    Q: DiscreteDistribution, rng: np.random.Generator, *, max_frac: float = 0.9
) -> DiscreteDistribution:
    """Split one random atom ``w`` into ``w -/+ d`` with half its mass each.

    The result is convex-order larger than ``Q`` by Jensen; ``d`` is drawn
    from ``(0, max_frac * w]`` so atoms stay nonnegative.
    """
    positive = np.flatnonzero(Q.atoms > 0)
    i = int(rng.choice(positive))
    w, p = Q.atoms[i], Q.probs[i]
    d = rng.uniform(0.05, max_frac) * w
    atoms = np.concatenate([np.delete(Q.atoms, i), [w - d, w + d]])
    probs = np.concatenate([np.delete(Q.probs, i), [p / 2, p / 2]])
    return DiscreteDistribution.from_atoms(atoms, probs)


def spread_chain(
    Q: DiscreteDistribution, rng: np.random.Generator, steps: int, **kw
) -> list[DiscreteDistribution]:
    """``[Q, spread(Q), spread(spread(Q)), ...]`` of length ``steps + 1``."""
    out = [Q]
    for _ in range(steps):
        out.append(mean_preserving_spread(out[-1], rng, **kw))
    return out


def random_simplex(rng: np.random.Generator, n: int) -> SimplexWeights:
    return SimplexWeights(rng.dirichlet(np.ones(n)))


def random_majorized(rng: np.random.Generator, mu: SimplexWeights, transfers: int = 3) -> SimplexWeights:
    """A point majorized by ``mu``, obtained by Robin Hood transfers."""
    e = np.array(mu.entries)
    n = e.size
    if n < 2:
        return mu
    for _ in range(transfers):
        i, j = rng.choice(n, size=2, replace=False)
        if e[i] < e[j]:
            i, j = j, i
        gap = e[i] - e[j]
        # moving at most half the gap keeps the pair ordered
        amount = rng.uniform(0.0, 0.5) * gap
        e[i] -= amount
        e[j] += amount
    return SimplexWeights(e / e.sum())

