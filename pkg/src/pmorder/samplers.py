"""Monte Carlo simulation of pseudo-marginal, marginal and ring MH chains.

Every step consumes exactly three uniforms in a fixed order: proposal,
weight (or ratio perturbation), accept/reject.  The marginal sampler
consumes the weight uniform without using it, so a pseudo-marginal run with
unit weights reproduces the marginal run draw for draw.
"""

from __future__ import annotations

import bisect
import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy.special import ndtri

from .chains import MarginalChain
from .weightdist import DiscreteDistribution

_TINY_U = 2.0 ** -53


@dataclass(frozen=True)
class RngSpec:
    seed: int
    stream: int = 0

    def __post_init__(self):
        for name in ("seed", "stream"):
            v = getattr(self, name)
            if not 0 <= int(v) < 2**64:
                raise ValueError(f"{name} must be a 64-bit unsigned integer")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.PCG64(ss))


class WeightSampler:
    """Unit-mean weight law sampled by inversion of a single uniform."""

    def __init__(self, kind: str, *, law: DiscreteDistribution | None = None, sigma: float = 0.0):
        if kind == "discrete":
            if law is None:
                raise ValueError("discrete sampler needs a law")
            self._atoms = [float(a) for a in law.atoms]
            cum = np.cumsum(law.probs)
            cum[-1] = 1.0
            self._cum = [float(c) for c in cum]
        elif kind == "lognormal":
            if sigma < 0:
                raise ValueError("sigma must be nonnegative")
            self._loc = -0.5 * sigma * sigma
        else:
            raise ValueError(f"unknown sampler kind {kind!r}")
        self.kind = kind
        self.law = law
        self.sigma = float(sigma)

    @classmethod
    def discrete(cls, law: DiscreteDistribution) -> "WeightSampler":
        return cls("discrete", law=law)

    @classmethod
    def lognormal(cls, sigma: float) -> "WeightSampler":
        return cls("lognormal", sigma=sigma)

    @classmethod
    def unit(cls) -> "WeightSampler":
        return cls("discrete", law=DiscreteDistribution.point_mass(1.0))

    def draw(self, u: float, z: float) -> float:
        """Weight from a uniform ``u`` and its normal quantile ``z = ndtri(u)``."""
        if self.kind == "discrete":
            i = bisect.bisect_right(self._cum, u)
            return self._atoms[min(i, len(self._atoms) - 1)]
        return math.exp(self._loc + self.sigma * z)

    def to_dict(self) -> dict:
        if self.kind == "discrete":
            return {"kind": "discrete", "law": self.law.to_dict()}
        return {"kind": "lognormal", "sigma": self.sigma}


@dataclass(frozen=True, eq=False)
class ChainTrace:
    states: np.ndarray
    weights: np.ndarray
    accepted: np.ndarray
    initial_state: int
    initial_weight: float

    def __post_init__(self):
        if not (len(self.states) == len(self.weights) == len(self.accepted)):
            raise ValueError("trace columns must have equal length")
        for name in ("states", "weights", "accepted"):
            getattr(self, name).setflags(write=False)

    def __len__(self) -> int:
        return int(self.states.size)

    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted))

    def occupation(self, n: int) -> np.ndarray:
        return np.bincount(self.states, minlength=n) / len(self)

    def values(self, f) -> np.ndarray:
        return np.asarray(f, dtype=float)[self.states]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "state", "weight", "accepted"])
        for i, (s, wt, a) in enumerate(zip(self.states, self.weights, self.accepted), start=1):
            w.writerow([i, int(s), f"{wt:.12g}", int(a)])
        return buf.getvalue()

    def summary(self, f, num_batches: int = 1000) -> dict:
        mean, asvar, se = batch_means(self.values(f), num_batches)
        return {
            "length": len(self),
            "acceptance_rate": self.acceptance_rate(),
            "mean": mean,
            "asvar": asvar,
            "asvar_stderr": se,
            "num_batches": num_batches,
            "initial_state": self.initial_state,
            "initial_weight": self.initial_weight,
        }

    def summary_json(self, f, num_batches: int = 1000) -> str:
        return json.dumps(self.summary(f, num_batches), indent=2, sort_keys=True)


def _draws(rng: np.random.Generator, M: int):
    U = rng.random((M, 3))
    U[:, 1] = np.maximum(U[:, 1], _TINY_U)
    Z = ndtri(U[:, 1])
    return U[:, 0].tolist(), U[:, 1].tolist(), Z.tolist(), U[:, 2].tolist()


def _proposal_tables(chain: MarginalChain):
    cum = np.cumsum(chain.q, axis=1)
    cum[:, -1] = 1.0
    return [row.tolist() for row in cum]


def _propose(cum_row, u: float) -> int:
    return min(bisect.bisect_right(cum_row, u), len(cum_row) - 1)


def _initial_weight(rng: np.random.Generator, sampler: WeightSampler) -> float:
    for _ in range(10_000):
        u = max(float(rng.random()), _TINY_U)
        w = sampler.draw(u, float(ndtri(u)))
        if w > 0:
            return w
    raise ValueError("initial state's weight law puts no mass on positive weights")


def run_pseudo_marginal(
    chain: MarginalChain,
    samplers: Sequence[WeightSampler],
    M: int,
    rng: RngSpec,
    init: int = 0,
) -> ChainTrace:
    """Simulate the pseudo-marginal chain for ``M`` steps.

    The initial weight is drawn fresh from ``samplers[init]`` before the
    step draws.  A proposal ``(y, u)`` is accepted when ``U < r(x,y) u / w``.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    if len(samplers) != chain.n:
        raise ValueError("one sampler per state")
    gen = rng.generator()
    w = _initial_weight(gen, samplers[init])
    w0 = w
    up, uw, zw, ua = _draws(gen, M)
    cum = _proposal_tables(chain)
    r = chain.ratio().tolist()
    states = np.empty(M, dtype=np.int64)
    weights = np.empty(M)
    acc = np.zeros(M, dtype=bool)
    x = init
    for i in range(M):
        y = _propose(cum[x], up[i])
        u = samplers[y].draw(uw[i], zw[i])
        if ua[i] < r[x][y] * u / w:
            x, w = y, u
            acc[i] = True
        states[i] = x
        weights[i] = w
    return ChainTrace(states, weights, acc, init, w0)


def run_marginal_mh(chain: MarginalChain, M: int, rng: RngSpec, init: int = 0) -> ChainTrace:
    """Exact MH chain using the same draw layout as :func:`run_pseudo_marginal`."""
    if M < 1:
        raise ValueError("M must be at least 1")
    gen = rng.generator()
    _initial_weight(gen, WeightSampler.unit())
    up, _, _, ua = _draws(gen, M)
    cum = _proposal_tables(chain)
    r = chain.ratio().tolist()
    states = np.empty(M, dtype=np.int64)
    acc = np.zeros(M, dtype=bool)
    x = init
    for i in range(M):
        y = _propose(cum[x], up[i])
        if ua[i] < r[x][y] * 1.0 / 1.0:
            x = y
            acc[i] = True
        states[i] = x
    return ChainTrace(states, np.ones(M), acc, init, 1.0)


def run_ring(
    chain: MarginalChain,
    ringsamplers: Mapping[tuple[int, int], WeightSampler],
    M: int,
    rng: RngSpec,
    init: int = 0,
) -> ChainTrace:
    """Penalty-method chain: accept ``x -> y`` when ``U < r(x,y) * varpi`` with fresh ``varpi``.

    Pairs without a sampler use ``varpi = 1``.  The trace records the
    perturbation drawn at each step.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    unit = WeightSampler.unit()
    gen = rng.generator()
    _initial_weight(gen, unit)
    up, uw, zw, ua = _draws(gen, M)
    cum = _proposal_tables(chain)
    r = chain.ratio().tolist()
    n = chain.n
    table = [[ringsamplers.get((x, y), unit) for y in range(n)] for x in range(n)]
    states = np.empty(M, dtype=np.int64)
    weights = np.empty(M)
    acc = np.zeros(M, dtype=bool)
    x = init
    for i in range(M):
        y = _propose(cum[x], up[i])
        v = table[x][y].draw(uw[i], zw[i])
        if ua[i] < r[x][y] * v:
            x = y
            acc[i] = True
        states[i] = x
        weights[i] = v
    return ChainTrace(states, weights, acc, init, 1.0)


def batch_means(values, num_batches: int = 1000) -> tuple[float, float, float]:
    """Batch-means estimate of the asymptotic variance of the ergodic average.

    Returns ``(mean, asvar, stderr)`` with ``asvar = L * var(batch means)``
    for batch length ``L`` and the heuristic ``stderr = asvar * sqrt(2 / B)``.
    Trailing values that do not fill a batch are dropped.
    """
    x = np.asarray(values, dtype=float).ravel()
    if num_batches < 2:
        raise ValueError("need at least two batches")
    L = x.size // num_batches
    if L < 1:
        raise ValueError("too few values for the requested number of batches")
    x = x[: L * num_batches]
    means = x.reshape(num_batches, L).mean(axis=1)
    asvar = float(L * np.var(means, ddof=1))
    return float(x.mean()), asvar, asvar * math.sqrt(2.0 / num_batches)


def discretized_lognormal(sigma_steps: int, h: float, half_width: int | None = None) -> DiscreteDistribution:
    """Lattice lognormal satisfying the ring condition exactly for a common law.

    Atoms ``exp(-sigma^2/2 + sigma k h)`` with ``sigma = sigma_steps * h`` and
    probabilities proportional to ``exp(-(k h)^2 / 2)``, over indices ``k``
    symmetric about ``sigma_steps / 2`` so the set is closed under
    ``k -> sigma_steps - k``.  That symmetry makes ``w Q(w)`` the image of
    ``Q`` under ``w -> 1/w`` and the mean exactly one.
    """
    half_width = 6 * max(1, int(round(1.0 / h))) if half_width is None else half_width
    sigma = sigma_steps * h
    ks = np.arange(-half_width, sigma_steps + half_width + 1)
    atoms = np.exp(-0.5 * sigma * sigma + sigma * ks * h)
    logp = -0.5 * (ks * h) ** 2
    p = np.exp(logp - logp.max())
    p /= p.sum()
    return DiscreteDistribution.from_atoms(atoms, p)
