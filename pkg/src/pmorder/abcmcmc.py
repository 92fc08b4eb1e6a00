"""ABC-MCMC with plain and stratified indicator likelihood estimators.

Data ``Y = F^{-1}(U)`` come from the g-and-k quantile function and the
ABC estimator counts how many of ``N`` simulated values land within ``eps``
of the observation.  With one-dimensional inversion the acceptance set in
``u`` is an interval, so both estimator laws are available exactly:

* plain draws ``U_i ~ U(0, 1)``: ``N T ~ Binomial(N, pbar)``;
* stratified draws ``V_i ~ U([(i-1)/N, i/N))``: ``N T`` is Poisson-binomial
  with success probabilities ``q_i = N |A_i cap H|``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import ndtri
from scipy.stats import binom

from .chains import MarginalChain, acceptance_rates, pseudo_marginal_kernel
from .samplers import RngSpec
from .spectral import asymptotic_variance, spectral_gaps
from .weightdist import DiscreteDistribution

log = logging.getLogger(__name__)

MONOTONE_GRID_STEP = 1e-4
STRATA_TOL = 1e-12
# early rejection only aborts when the bound clears the threshold by a
# relative margin, so rounding can never flip a decision
_SAFE = 1.0 - 1e-9


class NonMonotoneError(ValueError):
    pass


def _gk(z, A, B, c, g, k):
    # (1 - e^{-gz}) / (1 + e^{-gz}) == tanh(gz / 2), without overflow
    return A + B * (1.0 + c * np.tanh(0.5 * g * z)) * (1.0 + z * z) ** k * z


@dataclass(frozen=True)
class GandKParams:
    A: float = 0.0
    B: float = 1.0
    c: float = 0.8
    g: float = 0.0
    k: float = 0.0

    def __post_init__(self):
        if not self.B > 0:
            raise ValueError("B must be positive")
        if not self.k > -0.5:
            raise ValueError("k must exceed -1/2")
        u = np.arange(MONOTONE_GRID_STEP, 1.0, MONOTONE_GRID_STEP)
        y = _gk(ndtri(u), self.A, self.B, self.c, self.g, self.k)
        if np.any(np.diff(y) <= 0):
            raise NonMonotoneError(f"quantile function not increasing for {self}")

    def with_location(self, A: float) -> "GandKParams":
        return GandKParams(A, self.B, self.c, self.g, self.k)

    def to_dict(self) -> dict:
        return {"A": self.A, "B": self.B, "c": self.c, "g": self.g, "k": self.k}


@dataclass(frozen=True)
class StrataSpec:
    """Equal-width strata ``A_i = [(i-1)/N, i/N)`` of the unit interval."""

    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("need at least one stratum")

    def edges(self) -> np.ndarray:
        return np.arange(self.N + 1) / self.N


def gk_inverse_cdf(u, p: GandKParams):
    """g-and-k quantile function; ``z(u)`` is ``scipy.special.ndtri``."""
    u_arr = np.asarray(u, dtype=float)
    if np.any((u_arr <= 0) | (u_arr >= 1)):
        raise ValueError("u must lie strictly inside (0, 1)")
    out = _gk(ndtri(u_arr), p.A, p.B, p.c, p.g, p.k)
    return float(out) if np.ndim(out) == 0 else out


def _solve_increasing(p: GandKParams, target: float) -> float:
    """Largest-precision bisection for ``F^{-1}(u) = target``; returns a point in [0, 1]."""
    lo, hi = 0.0, 1.0
    while True:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if _gk(ndtri(mid), p.A, p.B, p.c, p.g, p.k) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi) if hi - lo > 0 else lo


def acceptance_region(p: GandKParams, ystar: float, eps: float) -> tuple[float, float]:
    """Interval of ``u`` with ``|F^{-1}(u) - ystar| <= eps``."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    if math.isinf(eps):
        return 0.0, 1.0
    lo = _solve_increasing(p, ystar - eps)
    hi = _solve_increasing(p, ystar + eps)
    if hi < lo:
        raise NonMonotoneError("bisection produced a reversed interval")
    return float(np.clip(lo, 0.0, 1.0)), float(np.clip(hi, 0.0, 1.0))


def strata_probabilities(region: tuple[float, float], strata: StrataSpec) -> np.ndarray:
    lo, hi = region
    e = strata.edges()
    overlap = np.clip(np.minimum(e[1:], hi) - np.maximum(e[:-1], lo), 0.0, None)
    q = strata.N * overlap
    if np.any(q < -STRATA_TOL) or np.any(q > 1.0 + STRATA_TOL):
        raise ValueError("stratum probabilities outside [0, 1]")
    return np.clip(q, 0.0, 1.0)


def poisson_binomial_pmf(q: Sequence[float]) -> np.ndarray:
    """Law of the number of successes among independent Bernoulli(q_i), by convolution."""
    pmf = np.array([1.0])
    for qi in q:
        qi = float(qi)
        if not 0.0 <= qi <= 1.0:
            raise ValueError("success probabilities must lie in [0, 1]")
        nxt = np.zeros(pmf.size + 1)
        nxt[:-1] += (1.0 - qi) * pmf
        nxt[1:] += qi * pmf
        pmf = nxt
    return pmf


def estimator_laws(
    N: int, region: tuple[float, float], strata: StrataSpec
) -> tuple[DiscreteDistribution, DiscreteDistribution]:
    """Exact laws of the plain and stratified estimators ``T`` (mean ``pbar``)."""
    if strata.N != N:
        raise ValueError("strata count must equal N")
    lo, hi = region
    if not 0.0 <= lo <= hi <= 1.0:
        raise ValueError("region must be a sub-interval of [0, 1]")
    pbar = hi - lo
    atoms = np.arange(N + 1) / N
    plain = DiscreteDistribution.from_atoms(atoms, binom.pmf(np.arange(N + 1), N, pbar))
    strat = DiscreteDistribution.from_atoms(
        atoms, poisson_binomial_pmf(strata_probabilities(region, strata))
    )
    return plain, strat


# --- the ABC chain on a location grid ------------------------------------------------


@dataclass
class AbcProblem:
    """ABC target over a grid of g-and-k locations.

    States whose acceptance region is empty (``pbar = 0``) carry no
    posterior mass and are removed; proposal mass pointing to them is
    moved to the diagonal, which leaves the kernel unchanged because such
    proposals are always rejected.
    """

    base: GandKParams
    locations: np.ndarray
    ystar: float
    eps: float
    N: int
    prior: np.ndarray | None = None
    proposal: np.ndarray | None = None
    regions: list = field(init=False)
    pbar: np.ndarray = field(init=False)
    kept: np.ndarray = field(init=False)
    chain: MarginalChain = field(init=False)

    def __post_init__(self):
        locs = np.asarray(self.locations, dtype=float)
        n = locs.size
        prior = np.full(n, 1.0 / n) if self.prior is None else np.asarray(self.prior, dtype=float)
        q = _random_walk_proposal(n) if self.proposal is None else np.asarray(self.proposal, dtype=float)
        regions = [acceptance_region(self.base.with_location(a), self.ystar, self.eps) for a in locs]
        pbar = np.array([hi - lo for lo, hi in regions])
        kept = np.flatnonzero(pbar > 0)
        for j in np.flatnonzero(pbar <= 0):
            log.warning("location %g has an empty acceptance region; excluded", locs[j])
        if kept.size == 0:
            raise ValueError("no grid state has a nonempty acceptance region")
        qk = q[np.ix_(kept, kept)].copy()
        qk[np.diag_indices_from(qk)] += 1.0 - qk.sum(axis=1)
        pi = prior[kept] * pbar[kept]
        self.locations = locs
        self.regions = [regions[j] for j in kept]
        self.pbar = pbar[kept]
        self.kept = kept
        self.chain = MarginalChain(pi / pi.sum(), qk, tuple(float(a) for a in locs[kept]))

    @property
    def kept_locations(self) -> np.ndarray:
        return self.locations[self.kept]

    def weight_laws(self) -> tuple[list, list]:
        """Unit-mean laws ``T / pbar`` for the plain and stratified estimators."""
        plain, strat = [], []
        st = StrataSpec(self.N)
        for region, pb in zip(self.regions, self.pbar):
            a, b = estimator_laws(self.N, region, st)
            plain.append(a.scaled(1.0 / pb))
            strat.append(b.scaled(1.0 / pb))
        return plain, strat


def _random_walk_proposal(n: int) -> np.ndarray:
    """Nearest-neighbour walk on a path; end points propose their single neighbour."""
    q = np.zeros((n, n))
    if n == 1:
        q[0, 0] = 1.0
        return q
    for i in range(n):
        nb = [j for j in (i - 1, i + 1) if 0 <= j < n]
        for j in nb:
            q[i, j] = 0.5
        q[i, i] = 1.0 - q[i].sum()
    return q


@dataclass(frozen=True)
class AbcExactReport:
    locations: tuple
    p_bar: tuple
    q: tuple
    alpha_plain_x: tuple
    alpha_strat_x: tuple
    alpha_plain: float
    alpha_strat: float
    var_plain: float
    var_strat: float
    gap_plain: float
    gap_strat: float
    rho_max_plain: float

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    def rows(self):
        for i, loc in enumerate(self.locations):
            yield {
                "location": loc,
                "p_bar": self.p_bar[i],
                "q": " ".join(f"{v:.12g}" for v in self.q[i]),
                "alpha_plain": self.alpha_plain_x[i],
                "alpha_strat": self.alpha_strat_x[i],
                "var_plain": self.var_plain,
                "var_strat": self.var_strat,
                "gap_plain": self.gap_plain,
                "gap_strat": self.gap_strat,
            }


def exact_comparison(problem: AbcProblem, f=None) -> AbcExactReport:
    """Exact acceptance rates, variances and right gaps of both ABC kernels."""
    plain, strat = problem.weight_laws()
    chain = problem.chain
    f = np.asarray(chain.states, dtype=float) if f is None else np.asarray(f, dtype=float)
    Kp = pseudo_marginal_kernel(chain, plain)
    Ks = pseudo_marginal_kernel(chain, strat)
    Ap, ap = acceptance_rates(chain, plain)
    As, as_ = acceptance_rates(chain, strat)
    st = StrataSpec(problem.N)
    return AbcExactReport(
        locations=tuple(float(a) for a in problem.kept_locations),
        p_bar=tuple(float(p) for p in problem.pbar),
        q=tuple(tuple(float(v) for v in strata_probabilities(r, st)) for r in problem.regions),
        alpha_plain_x=tuple(float(v) for v in (chain.q * Ap).sum(axis=1)),
        alpha_strat_x=tuple(float(v) for v in (chain.q * As).sum(axis=1)),
        alpha_plain=ap,
        alpha_strat=as_,
        var_plain=asymptotic_variance(Kp, Kp.lift(f)),
        var_strat=asymptotic_variance(Ks, Ks.lift(f)),
        gap_plain=spectral_gaps(Kp).right_gap,
        gap_strat=spectral_gaps(Ks).right_gap,
        rho_max_plain=Kp.max_rejection(),
    )


@dataclass(frozen=True, eq=False)
class AbcTrace:
    states: np.ndarray
    counts: np.ndarray
    accepted: np.ndarray
    evaluations: int
    patterns: list | None = None

    def acceptance_rate(self) -> float:
        return float(np.mean(self.accepted))


def simulate_abc(
    problem: AbcProblem,
    M: int,
    rng: RngSpec,
    *,
    stratified: bool,
    early_rejection: bool = False,
    monotone_deduction: bool = False,
    init: int = 0,
    record_patterns: bool = False,
) -> AbcTrace:
    """Run ABC-MCMC with simulated g-and-k data.

    Each step draws ``N + 2`` uniforms: proposal, ``N`` data uniforms and
    the accept uniform.  ``early_rejection`` stops simulating once the
    remaining indicators cannot lift the count over the acceptance
    threshold; ``monotone_deduction`` (stratified only) stops once a hit is
    followed by a miss, since later strata map to larger data values.
    Neither option changes any accept/reject decision.
    """
    if monotone_deduction and not stratified:
        raise ValueError("monotone deduction needs ordered strata")
    chain = problem.chain
    N = problem.N
    gen = rng.generator()
    params = [problem.base.with_location(a) for a in problem.kept_locations]
    cum = np.cumsum(chain.q, axis=1)
    cum[:, -1] = 1.0
    r = chain.ratio()
    lo_t, hi_t = problem.ystar - problem.eps, problem.ystar + problem.eps
    shift = np.arange(N)
    evaluations = 0

    def indicator(y, v):
        nonlocal evaluations
        evaluations += 1
        val = _gk(ndtri(v), params[y].A, params[y].B, params[y].c, params[y].g, params[y].k)
        return lo_t <= val <= hi_t

    def count(y, V, threshold=None):
        hits, seen_hit, pattern = 0, False, []
        for i in range(N):
            if threshold is not None and hits + (N - i) < threshold * _SAFE:
                return hits, None
            if monotone_deduction and seen_hit and pattern and not pattern[-1]:
                pattern.extend([False] * (N - i))
                break
            hit = indicator(y, V[i])
            pattern.append(hit)
            hits += hit
            seen_hit = seen_hit or hit
        return hits, pattern

    x = init
    # initial count drawn fresh and conditioned on being positive
    for _ in range(100_000):
        V0 = gen.random(N)
        V0 = np.maximum(V0, 2.0 ** -53)
        if stratified:
            V0 = (shift + V0) / N
        kx, _ = count(x, V0)
        if kx > 0:
            break
    else:
        raise ValueError("initial state never produced a positive estimate")

    U = gen.random((M, N + 2))
    U[:, 1:N + 1] = np.maximum(U[:, 1:N + 1], 2.0 ** -53)
    states = np.empty(M, dtype=np.int64)
    counts = np.empty(M, dtype=np.int64)
    acc = np.zeros(M, dtype=bool)
    patterns = [] if record_patterns else None
    for t in range(M):
        row = U[t]
        y = min(int(np.searchsorted(cum[x], row[0], side="right")), chain.n - 1)
        V = row[1:N + 1]
        if stratified:
            V = (shift + V) / N
        rxy = r[x, y]
        threshold = None
        if early_rejection:
            # accept iff ua < rxy * (ky / pbar_y) / (kx / pbar_x), i.e. ky > threshold
            threshold = math.inf if rxy == 0 else row[-1] * kx * problem.pbar[y] / (problem.pbar[x] * rxy)
            if N < threshold * _SAFE:
                states[t], counts[t] = x, kx
                continue
        ky, pattern = count(y, V, threshold)
        if record_patterns and pattern is not None:
            patterns.append(pattern)
        if pattern is not None and row[-1] < rxy * (ky / problem.pbar[y]) / (kx / problem.pbar[x]):
            x, kx = y, ky
            acc[t] = True
        states[t], counts[t] = x, kx
    return AbcTrace(states, counts, acc, evaluations, patterns)


def is_contiguous_pattern(pattern: Sequence[bool]) -> bool:
    """True for patterns of the form 0..0 1..1 0..0 (possibly empty blocks)."""
    s = "".join("1" if b else "0" for b in pattern)
    return set(s.strip("0")) <= {"1"}


def run_abc_comparison(
    base: GandKParams,
    locations: Sequence[float],
    ystar: float,
    eps: float,
    N: int,
    M: int,
    rng: RngSpec,
    *,
    prior=None,
    proposal=None,
) -> dict:
    """Exact plain-vs-stratified comparison plus a simulated acceptance check."""
    problem = AbcProblem(base, np.asarray(locations, dtype=float), ystar, eps, N, prior, proposal)
    exact = exact_comparison(problem)
    out = {"exact": exact.to_dict(), "excluded": [float(a) for a in np.delete(problem.locations, problem.kept)]}
    if M > 0:
        sims = {}
        for stream, strat in ((rng.stream, False), (rng.stream + 1, True)):
            tr = simulate_abc(problem, M, RngSpec(rng.seed, stream), stratified=strat)
            sims["strat" if strat else "plain"] = {"acceptance_rate": tr.acceptance_rate(), "M": M}
        out["simulated"] = sims
    return out
