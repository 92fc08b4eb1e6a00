import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from pmorder.chains import (
    FiniteKernel,
    breve_kernels,
    independence_chain,
    marginal_mh_kernel,
    pseudo_marginal_kernel,
    random_marginal_chain,
)
from pmorder.coupling import build_martingale_coupling
from pmorder.spectral import (
    NotReversibleError,
    ReducibleChainError,
    asymptotic_variance,
    bellman_check,
    center,
    check_reversibility,
    dirichlet_form,
    inner,
    mix_kernels,
    mixture_convexity_check,
    peskun_bracket_check,
    resolvent_solve,
    spectral_gaps,
    truncated_acf_variance,
    variance,
)
from pmorder.weightdist import diatomic, mean_preserving_spread, random_unit_mean_law


def two_state(p):
    return FiniteKernel((0, 1), [[1 - p, p], [p, 1 - p]], [0.5, 0.5])


def iid(mu):
    mu = np.asarray(mu, dtype=float)
    return FiniteKernel(tuple(range(mu.size)), np.tile(mu, (mu.size, 1)), mu)


def breve_pair(seed, n=3):
    rng = np.random.default_rng(seed)
    ch = random_marginal_chain(rng, n)
    Q1 = [random_unit_mean_law(rng, 2) for _ in range(n)]
    Q2 = [mean_preserving_spread(Q, rng) for Q in Q1]
    B1, B2 = breve_kernels(ch, [build_martingale_coupling(a, b) for a, b in zip(Q1, Q2)])
    f = B1.lift(rng.standard_normal(n))
    return B1, B2, center(B1, f)


# --- reversibility ----------------------------------------------------------------------


def test_reversibility_examples(rng):
    assert check_reversibility(marginal_mh_kernel(random_marginal_chain(rng, 4))) < 1e-12
    Q = diatomic(0.5, 2.0)
    assert check_reversibility(pseudo_marginal_kernel(independence_chain([0.3, 0.7]), [Q, Q])) < 1e-12
    cyc = FiniteKernel((0, 1, 2), [[0, 1, 0], [0, 0, 1], [1, 0, 0]], np.full(3, 1 / 3))
    assert check_reversibility(cyc) > 0.1
    with pytest.raises(NotReversibleError):
        spectral_gaps(cyc)
    with pytest.raises(NotReversibleError):
        dirichlet_form(cyc, [1.0, 0.0, 0.0])


# --- Dirichlet forms -----------------------------------------------------------------------


def test_dirichlet_examples():
    I = FiniteKernel((0, 1, 2), np.eye(3), np.full(3, 1 / 3))
    assert dirichlet_form(I, [1.0, -2.0, 5.0]) == 0.0
    mu = np.array([0.2, 0.3, 0.5])
    f = np.array([1.0, -1.0, 3.0])
    assert dirichlet_form(iid(mu), f) == pytest.approx(variance(iid(mu), f), abs=1e-14)
    # 1/2 * sum mu_i K_ij (f_i - f_j)^2 = 1/2 * 2 * (1/2 * 1/4 * 4) = 2p
    assert dirichlet_form(two_state(0.25), [-1.0, 1.0]) == pytest.approx(0.5, abs=1e-15)


@given(st.integers(0, 2**32 - 1), st.floats(0.0, 0.999))
def test_dirichlet_forms_agree(seed, lam):
    rng = np.random.default_rng(seed)
    K = marginal_mh_kernel(random_marginal_chain(rng, 4))
    f = rng.standard_normal(4)
    quad = inner(K, f, f) - lam * inner(K, f, K.matrix @ f)
    assert dirichlet_form(K, f, lam=lam) == pytest.approx(quad, abs=1e-12)
    assert dirichlet_form(K, f) >= 0.0


# --- spectral gaps ---------------------------------------------------------------------------


def test_gap_examples():
    I = FiniteKernel((0, 1), np.eye(2), [0.5, 0.5])
    assert spectral_gaps(I).right_gap == pytest.approx(0.0, abs=1e-12)
    s = spectral_gaps(iid([0.2, 0.3, 0.5]))
    assert s.right_gap == pytest.approx(1.0, abs=1e-12)
    assert s.left_gap == pytest.approx(1.0, abs=1e-12)
    assert s.absolute_gap == pytest.approx(1.0, abs=1e-12)
    s = spectral_gaps(two_state(0.25))
    assert s.eigenvalues == pytest.approx((1.0, 0.5), abs=1e-14)
    assert s.right_gap == pytest.approx(0.5, abs=1e-14)
    d = json.loads(s.to_json())
    assert set(d) == {"right_gap", "left_gap", "absolute_gap", "eigenvalues"}


def test_gaps_match_variational_definition(rng):
    for _ in range(20):
        K = marginal_mh_kernel(random_marginal_chain(rng, 5))
        s = spectral_gaps(K)
        # random mean-zero unit functions never go below the gap
        for _ in range(200):
            f = center(K, rng.standard_normal(5))
            f /= np.sqrt(inner(K, f, f))
            assert dirichlet_form(K, f) >= s.right_gap - 1e-12
            assert inner(K, f, f + K.matrix @ f) >= s.left_gap - 1e-12
        assert np.all(np.diff(s.eigenvalues) <= 0)
        assert 0 <= s.absolute_gap <= min(s.right_gap, s.left_gap)


def test_gaps_on_nonuniform_invariant_pick_trivial_eigenvector():
    K = FiniteKernel((0, 1, 2), [[0.9, 0.1, 0.0], [0.05, 0.9, 0.05], [0.0, 0.1, 0.9]], [0.25, 0.5, 0.25])
    s = spectral_gaps(K)
    ev = np.sort(np.linalg.eigvals(K.matrix).real)[::-1]
    assert s.right_gap == pytest.approx(1 - ev[1], abs=1e-12)
    assert s.left_gap == pytest.approx(1 + ev[-1], abs=1e-12)


# --- asymptotic variance -----------------------------------------------------------------------


def test_variance_examples():
    mu = np.array([0.2, 0.3, 0.5])
    f = np.array([1.0, -1.0, 3.0])
    assert asymptotic_variance(iid(mu), f) == pytest.approx(variance(iid(mu), f), abs=1e-12)
    assert asymptotic_variance(two_state(0.25), [-1.0, 1.0]) == pytest.approx(3.0, abs=1e-12)


def test_counterexample_variances():
    ch = independence_chain([0.5, 0.5])
    got = []
    for a, b in ((0.9208, 3.0046), (0.6698, 1.4620)):
        Q = diatomic(a, b)
        K = pseudo_marginal_kernel(ch, [Q, Q])
        got.append(asymptotic_variance(K, K.lift([-1.0, 1.0])))
    assert got[0] == pytest.approx(1.4577, abs=2e-3)
    assert got[1] == pytest.approx(1.5632, abs=2e-3)


def test_reducible_chain_detected():
    K = FiniteKernel((0, 1, 2, 3), np.kron(np.eye(2), np.full((2, 2), 0.5)), np.full(4, 0.25))
    with pytest.raises(ReducibleChainError):
        asymptotic_variance(K, [1.0, 1.0, -1.0, -1.0])
    # a function orthogonal to the extra eigenvector is fine
    assert asymptotic_variance(K, [1.0, -1.0, 0.0, 0.0]) == pytest.approx(0.5, abs=1e-12)


def test_three_routes_agree(rng):
    for _ in range(20):
        K = pseudo_marginal_kernel(random_marginal_chain(rng, 3), [random_unit_mean_law(rng, 2) for _ in range(3)])
        f = K.lift(rng.standard_normal(3))
        v = asymptotic_variance(K, f)
        lag = int(np.ceil(np.log(1e-14) / np.log(1 - spectral_gaps(K).absolute_gap)))
        assert truncated_acf_variance(K, f, max(lag, 1)) == pytest.approx(v, abs=1e-6)
        # resolvent route, Richardson step on lambda -> 1
        h = 1e-6
        v1, v2 = asymptotic_variance(K, f, 1 - h), asymptotic_variance(K, f, 1 - 2 * h)
        assert 2 * v1 - v2 == pytest.approx(v, abs=1e-6)


def test_truncated_acf_examples():
    K = pseudo_marginal_kernel(independence_chain([0.5, 0.5]), [diatomic(0.9208, 3.0046)] * 2)
    f = K.lift([-1.0, 1.0])
    assert truncated_acf_variance(K, f, 0) == pytest.approx(1.0, abs=1e-14)
    assert truncated_acf_variance(K, f, 200) == pytest.approx(asymptotic_variance(K, f), abs=1e-8)
    mu = [0.2, 0.8]
    assert truncated_acf_variance(iid(mu), [0.0, 1.0], 7) == pytest.approx(0.16, abs=1e-14)


# --- resolvent and Bellman ---------------------------------------------------------------------


def test_resolvent_examples(rng):
    K = marginal_mh_kernel(random_marginal_chain(rng, 4))
    f = center(K, rng.standard_normal(4))
    assert np.allclose(resolvent_solve(K, f, 0.0), f)
    mu = np.array([0.1, 0.4, 0.5])
    g = center(iid(mu), [1.0, 2.0, -1.0])
    assert np.allclose(resolvent_solve(iid(mu), g, 0.7), g, atol=1e-14)
    g = resolvent_solve(K, f, 0.99)
    assert np.max(np.abs(g - 0.99 * K.matrix @ g - f)) < 1e-11
    assert abs(inner(K, g, np.ones(4))) < 1e-10
    with pytest.raises(ValueError):
        resolvent_solve(K, f, 1.0)


def test_bellman_identity(rng):
    for lam in (0.5, 0.9, 0.99):
        B1, _, f = breve_pair(int(rng.integers(1 << 30)))
        rep = bellman_check(B1, f, lam, rng=rng)
        assert rep.passed, rep
        assert rep.best_perturbed <= rep.optimum
        # g = 0 gives objective 0
        assert rep.optimum >= 0


# --- brackets and mixtures ----------------------------------------------------------------------


def test_bracket_trivial_cases(rng):
    B1, B2, f = breve_pair(11)
    rep = peskun_bracket_check(B1, B1, f, 0.9)
    assert rep.lower == rep.middle == rep.upper == 0.0
    rep = peskun_bracket_check(B1, B2, f, 0.0)
    assert abs(rep.lower) < 1e-12 and abs(rep.middle) < 1e-12 and abs(rep.upper) < 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_bracket_on_breve_pairs(seed):
    B1, B2, f = breve_pair(seed)
    for lam in (0.5, 0.9, 0.99):
        assert peskun_bracket_check(B1, B2, f, lam).passed


def test_bracket_needs_common_invariant(rng):
    K1 = marginal_mh_kernel(random_marginal_chain(rng, 3))
    K2 = marginal_mh_kernel(random_marginal_chain(rng, 3))
    with pytest.raises(ValueError):
        peskun_bracket_check(K1, K2, np.zeros(3), 0.5)
    with pytest.raises(ValueError):
        mixture_convexity_check(K1, K2, np.zeros(3), [0.5])


def test_mixture_convexity():
    B1, B2, f = breve_pair(3)
    rep = mixture_convexity_check(B1, B2, f, [0.0, 0.25, 0.5, 0.75, 1.0])
    assert rep.passed
    assert rep.mixture[0] == pytest.approx(rep.chord[0], abs=1e-12)
    assert rep.mixture[-1] == pytest.approx(rep.chord[-1], abs=1e-12)
    same = mixture_convexity_check(B1, B1, f, [0.25, 0.5])
    assert same.mixture == pytest.approx(same.chord, abs=1e-12)
    assert check_reversibility(mix_kernels(B1, B2, 0.3)) < 1e-12


def test_peskun_order_for_dominated_kernels(rng):
    for _ in range(30):
        ch = random_marginal_chain(rng, 4)
        K1 = marginal_mh_kernel(ch)
        lazy = FiniteKernel(K1.labels, 0.6 * K1.matrix + 0.4 * np.eye(4), K1.invariant)
        f = rng.standard_normal(4)
        assert asymptotic_variance(K1, f) <= asymptotic_variance(lazy, f) + 1e-12
        assert spectral_gaps(K1).right_gap >= spectral_gaps(lazy).right_gap - 1e-12
