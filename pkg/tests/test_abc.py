import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import norm

from pmorder.abcmcmc import (
    AbcProblem,
    GandKParams,
    NonMonotoneError,
    StrataSpec,
    acceptance_region,
    estimator_laws,
    exact_comparison,
    gk_inverse_cdf,
    is_contiguous_pattern,
    poisson_binomial_pmf,
    run_abc_comparison,
    simulate_abc,
    strata_probabilities,
)
from pmorder.chains import marginal_mh_kernel
from pmorder.samplers import RngSpec
from pmorder.weightdist import (
    DiscreteDistribution,
    SimplexWeights,
    convex_order_leq,
    majorizes,
    random_majorized,
)

GK = GandKParams(3.0, 1.0, 0.8, 2.0, 0.5)


# --- g-and-k -------------------------------------------------------------------------


def test_gk_median_is_location():
    assert gk_inverse_cdf(0.5, GK) == 3.0


@given(st.floats(1e-6, 1 - 1e-6))
def test_gk_gaussian_reduction(u):
    p = GandKParams(1.5, 2.0, 0.8, 0.0, 0.0)
    assert gk_inverse_cdf(u, p) == pytest.approx(1.5 + 2.0 * norm.ppf(u), abs=1e-12)


def test_gk_reference_value():
    # 40-digit evaluation of the quantile formula with an independent normal quantile
    assert gk_inverse_cdf(0.8413, GK) == pytest.approx(5.2751399615502564867, abs=1e-6)


def test_gk_validation():
    with pytest.raises(ValueError):
        gk_inverse_cdf(0.0, GK)
    with pytest.raises(ValueError):
        GandKParams(B=-1.0)
    with pytest.raises(ValueError):
        GandKParams(k=-0.6)
    with pytest.raises(NonMonotoneError):
        GandKParams(0.0, 1.0, 1.5, 2.0, 0.0)


def test_gk_vectorised():
    u = np.array([0.1, 0.5, 0.9])
    out = gk_inverse_cdf(u, GK)
    assert out.shape == (3,) and np.all(np.diff(out) > 0)


# --- acceptance region -------------------------------------------------------------------


def test_gaussian_region():
    p = GandKParams(0.0, 1.0, 0.8, 0.0, 0.0)
    lo, hi = acceptance_region(p, 0.0, 0.7)
    assert lo == pytest.approx(norm.cdf(-0.7), abs=1e-12)
    assert hi == pytest.approx(norm.cdf(0.7), abs=1e-12)
    assert acceptance_region(p, 0.0, math.inf) == (0.0, 1.0)
    with pytest.raises(ValueError):
        acceptance_region(p, 0.0, 0.0)


def test_region_residuals(rng):
    for _ in range(50):
        p = GandKParams(rng.uniform(-2, 2), rng.uniform(0.5, 2), 0.8, rng.uniform(-1, 1), rng.uniform(0, 0.5))
        ystar, eps = rng.uniform(-2, 2), rng.uniform(0.1, 1.0)
        lo, hi = acceptance_region(p, ystar, eps)
        assert 0 <= lo <= hi <= 1
        for u, target in ((lo, ystar - eps), (hi, ystar + eps)):
            if not 0.0 < u < 1.0:
                continue
            # bisection runs to adjacent floats: the target is bracketed by u's neighbours
            below, above = np.nextafter(u, 0.0), np.nextafter(u, 1.0)
            assert gk_inverse_cdf(below, p) <= target <= gk_inverse_cdf(above, p)
            # in the tails one ulp of u moves y by more than 1e-9
            if 1e-6 < u < 1 - 1e-6:
                assert gk_inverse_cdf(u, p) == pytest.approx(target, abs=1e-9)


def test_far_observation_gives_empty_region():
    lo, hi = acceptance_region(GandKParams(), 50.0, 0.1)
    assert hi - lo == 0.0


# --- estimator laws ----------------------------------------------------------------------------


def test_estimator_law_examples():
    plain, strat = estimator_laws(2, (0.25, 0.75), StrataSpec(2))
    for L in (plain, strat):
        assert L.atoms.tolist() == [0.0, 0.5, 1.0]
        assert L.probs.tolist() == pytest.approx([0.25, 0.5, 0.25], abs=1e-15)
    plain, strat = estimator_laws(2, (0.375, 0.875), StrataSpec(2))
    assert strata_probabilities((0.375, 0.875), StrataSpec(2)).tolist() == [0.25, 0.75]
    assert strat.probs.tolist() == pytest.approx([0.1875, 0.625, 0.1875], abs=1e-15)
    assert plain.probs.tolist() == pytest.approx([0.25, 0.5, 0.25], abs=1e-15)


def test_single_stratum_laws_identical():
    plain, strat = estimator_laws(1, (0.2, 0.7), StrataSpec(1))
    assert plain.allclose(strat, atol=1e-15)


def test_estimator_law_errors():
    with pytest.raises(ValueError):
        estimator_laws(3, (0.1, 0.2), StrataSpec(2))
    with pytest.raises(ValueError):
        estimator_laws(2, (0.5, 0.2), StrataSpec(2))


def _brute_force_pmf(q):
    """Enumerate all 2^N success patterns."""
    out = np.zeros(len(q) + 1)
    for bits in itertools.product((0, 1), repeat=len(q)):
        out[sum(bits)] += np.prod([qi if b else 1 - qi for qi, b in zip(q, bits)])
    return out


def test_poisson_binomial_matches_enumeration(rng):
    for _ in range(50):
        q = rng.uniform(size=int(rng.integers(1, 9)))
        assert np.allclose(poisson_binomial_pmf(q), _brute_force_pmf(q), atol=1e-14)


def test_poisson_binomial_dyadic_exact():
    q = [0.25, 0.5, 0.75, 0.125]
    pmf = poisson_binomial_pmf(q)
    assert pmf.sum() == 1.0
    assert np.dot(np.arange(5), pmf) == sum(q)
    with pytest.raises(ValueError):
        poisson_binomial_pmf([1.5])


def test_stratified_below_plain(rng):
    for _ in range(500):
        N = int(rng.integers(1, 11))
        lo, hi = np.sort(rng.uniform(size=2))
        plain, strat = estimator_laws(N, (lo, hi), StrataSpec(N))
        assert plain.mean() == pytest.approx(hi - lo, abs=1e-12)
        assert strat.mean() == pytest.approx(hi - lo, abs=1e-12)
        assert convex_order_leq(strat, plain)
        q = strata_probabilities((lo, hi), StrataSpec(N))
        # (pbar, .., pbar) is majorized by q; both sum to N pbar, so compare normalized
        if q.sum() > 0:
            assert majorizes(np.full(N, 1.0 / N), q / q.sum())


def test_bernoulli_sum_convex_order(rng):
    for _ in range(100):
        N = int(rng.integers(2, 8))
        q = rng.uniform(0.05, 0.95, size=N)
        # a point majorized by q with the same total, kept inside [0, 1]
        p = random_majorized(rng, SimplexWeights(q / q.sum())).entries * q.sum()
        atoms = np.arange(N + 1) / N
        Lq = DiscreteDistribution.from_atoms(atoms, poisson_binomial_pmf(q))
        Lp = DiscreteDistribution.from_atoms(atoms, poisson_binomial_pmf(np.clip(p, 0, 1)))
        assert convex_order_leq(Lq, Lp)


# --- ABC chains ----------------------------------------------------------------------------------


def _problem(eps=0.5, N=4, n=8):
    return AbcProblem(GandKParams(0.0, 1.0, 0.8, 1.0, 0.2), np.linspace(-1.5, 1.5, n), 0.3, eps, N)


def test_huge_eps_reduces_to_marginal():
    prob = _problem(eps=math.inf)
    plain, strat = prob.weight_laws()
    assert all(L.size == 1 and L.atoms[0] == 1.0 for L in plain + strat)
    rep = exact_comparison(prob)
    assert rep.var_plain == pytest.approx(rep.var_strat, abs=1e-12)
    K = marginal_mh_kernel(prob.chain)
    assert rep.gap_plain == pytest.approx(1 - np.sort(np.linalg.eigvals(K.matrix).real)[-2], abs=1e-10)


def test_stratified_improves_on_grid():
    for eps in (0.2, 0.5, 1.0):
        for N in (2, 3, 5):
            rep = exact_comparison(_problem(eps, N))
            assert rep.var_strat <= rep.var_plain + 1e-10
            assert rep.alpha_strat >= rep.alpha_plain - 1e-12
            assert rep.gap_strat >= min(rep.gap_plain, 1 - rep.rho_max_plain) - 1e-9


def test_empty_regions_excluded(caplog):
    prob = AbcProblem(GandKParams(), np.array([0.0, 40.0, 0.5]), 0.0, 0.5, 3)
    assert prob.kept.tolist() == [0, 2]
    assert "excluded" in caplog.text
    assert prob.chain.q.sum(axis=1) == pytest.approx([1.0, 1.0])


def test_early_rejection_changes_nothing():
    prob = _problem(eps=0.3, N=6)
    for strat in (False, True):
        base = simulate_abc(prob, 4000, RngSpec(3), stratified=strat)
        fast = simulate_abc(prob, 4000, RngSpec(3), stratified=strat, early_rejection=True)
        assert np.array_equal(base.states, fast.states)
        assert np.array_equal(base.accepted, fast.accepted)
        assert fast.evaluations < base.evaluations
    base = simulate_abc(prob, 4000, RngSpec(3), stratified=True)
    both = simulate_abc(prob, 4000, RngSpec(3), stratified=True, early_rejection=True, monotone_deduction=True)
    assert np.array_equal(base.accepted, both.accepted)
    with pytest.raises(ValueError):
        simulate_abc(prob, 10, RngSpec(0), stratified=False, monotone_deduction=True)


def test_stratified_patterns_contiguous():
    tr = simulate_abc(_problem(eps=0.6, N=8), 2000, RngSpec(5), stratified=True, record_patterns=True)
    assert len(tr.patterns) == 2000
    assert all(is_contiguous_pattern(p) for p in tr.patterns)
    assert not is_contiguous_pattern([True, False, True])


def test_simulated_acceptance_close_to_exact():
    prob = _problem(eps=0.5, N=3)
    rep = exact_comparison(prob)
    for strat, exact in ((False, rep.alpha_plain), (True, rep.alpha_strat)):
        tr = simulate_abc(prob, 40_000, RngSpec(11), stratified=strat)
        assert tr.acceptance_rate() == pytest.approx(exact, abs=0.015)


def test_run_abc_comparison_report():
    out = run_abc_comparison(GandKParams(), [-1.0, 0.0, 1.0, 45.0], 0.0, 0.5, 3, 500, RngSpec(1))
    assert out["excluded"] == [45.0]
    assert set(out["simulated"]) == {"plain", "strat"}
    assert out["exact"]["var_strat"] <= out["exact"]["var_plain"] + 1e-10
