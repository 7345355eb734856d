import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize
from scipy.special import logsumexp

from sinkhorn_mpc.errors import InputError, ParameterError, UnderflowError
from sinkhorn_mpc.transport import (
    GibbsKernel,
    contraction_coefficient,
    coupling_from_scalings,
    exact_lp_assignment,
    gibbs_kernel,
    hilbert_metric,
    newton_balance,
    sinkhorn_solve,
    sinkhorn_step,
    sinkhorn_step_log,
    uniform_histogram,
)

HALF = np.array([0.5, 0.5])


# --- oracles -----------------------------------------------------------------


def hilbert_by_pairs(b, bp):
    """Defining max over all index pairs."""
    n = len(b)
    return max(np.log(b[i] * bp[j] / (b[j] * bp[i])) for i in range(n) for j in range(n))


def eta_by_quadruples(K):
    n, m = K.shape
    best = 1.0
    for i, j in itertools.product(range(n), repeat=2):
        for k, l in itertools.product(range(m), repeat=2):
            best = max(best, K[i, k] * K[j, l] / (K[j, k] * K[i, l]))
    return best


def entropic_plan_by_dual(C, eps, a, b):
    """Entropic OT plan from the smooth semi-dual, maximized with L-BFGS."""
    log_a = np.log(a)

    def neg_dual(g):
        # f eliminated: f_i = eps*(log a_i - logsumexp((g - C_i)/eps))
        f = eps * (log_a - logsumexp((g[None, :] - C) / eps, axis=1))
        P = np.exp((f[:, None] + g[None, :] - C) / eps)
        val = f @ a + g @ b - eps * P.sum()
        grad = b - P.sum(axis=0)
        return -val, -grad

    res = minimize(neg_dual, np.zeros(len(b)), jac=True, method="L-BFGS-B", options={"gtol": 1e-14, "ftol": 1e-16, "maxiter": 5000})
    g = res.x
    f = eps * (log_a - logsumexp((g[None, :] - C) / eps, axis=1))
    return np.exp((f[:, None] + g[None, :] - C) / eps)


def random_hist(rng, n):
    w = rng.uniform(0.2, 1.0, n)
    return w / w.sum()


# --- gibbs_kernel -----------------------------------------------------------------


def test_gibbs_kernel_unit_offdiagonal():
    eps = 0.7
    K = gibbs_kernel([[0.0, eps], [eps, 0.0]], eps)
    np.testing.assert_allclose(K.entries, [[1, np.exp(-1)], [np.exp(-1), 1]], rtol=1e-15)


def test_gibbs_kernel_zero_cost_is_ones():
    K = gibbs_kernel(np.zeros((3, 4)), 0.3)
    assert np.all(K.entries == 1.0)


def test_gibbs_kernel_half_epsilon():
    K = gibbs_kernel([[0, 1], [1, 0]], 0.5)
    np.testing.assert_allclose(K.entries, [[1, np.exp(-2)], [np.exp(-2), 1]], rtol=1e-15)
    np.testing.assert_array_equal(K.log_entries, [[-0.0, -2.0], [-2.0, -0.0]])


@pytest.mark.parametrize("eps", [0.0, -1.0, np.inf, np.nan])
def test_gibbs_kernel_rejects_bad_epsilon(eps):
    with pytest.raises(ParameterError):
        gibbs_kernel([[0.0]], eps)


def test_gibbs_kernel_rejects_nan_cost():
    with pytest.raises(InputError):
        gibbs_kernel([[0.0, np.nan]], 1.0)


def test_gibbs_kernel_keeps_exact_logs_when_underflowing():
    K = gibbs_kernel([[0.0, 2000.0]], 1.0)
    assert K.underflows
    assert K.log_entries[0, 1] == -2000.0


# --- sinkhorn_step ----------------------------------------------------------------


def test_sinkhorn_step_symmetric_fixed_point():
    K = np.array([[1, 0.5], [0.5, 1]])
    s = 1 / np.sqrt(3)
    alpha, beta = sinkhorn_step(K, HALF, HALF, [s, s])
    # canonical representative has max(beta) = 1, so compare the product alpha_i beta_j
    np.testing.assert_allclose(np.outer(alpha, beta), np.full((2, 2), 1 / 3), rtol=1e-14)
    np.testing.assert_allclose(beta, [1, 1])


def test_sinkhorn_step_uniform_kernel():
    alpha, beta = sinkhorn_step(np.ones((2, 2)), HALF, HALF, [1.0, 1.0])
    np.testing.assert_allclose(alpha, [0.25, 0.25], rtol=1e-15)
    np.testing.assert_allclose(beta, [1.0, 1.0], rtol=1e-15)


@given(k=st.floats(1e-3, 1e3), beta=st.floats(1e-3, 1e3))
def test_sinkhorn_step_single_cell(k, beta):
    alpha, b = sinkhorn_step([[k]], [1.0], [1.0], [beta])
    assert alpha[0] * k * b[0] == pytest.approx(1.0, rel=1e-14)


def test_sinkhorn_step_plain_underflow_signals_log_domain():
    # the first row underflows entirely, so K beta has a zero entry
    K = gibbs_kernel([[1.0, 1.0], [0.0, 0.0]], 1e-3)
    with pytest.raises(UnderflowError):
        sinkhorn_step(K, HALF, HALF, [1.0, 1.0], mode="plain")
    la, lb = sinkhorn_step_log(K, HALF, HALF, [0.0, 0.0])
    assert np.all(np.isfinite(la)) and np.all(np.isfinite(lb))


@given(seed=st.integers(0, 10_000))
def test_plain_and_log_steps_agree(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 7, size=2)
    K = gibbs_kernel(rng.random((n, m)) * 3, rng.uniform(0.3, 3))
    a, b = random_hist(rng, n), random_hist(rng, m)
    beta = rng.uniform(0.1, 2, m)
    alpha_p, beta_p = sinkhorn_step(K, a, b, beta)
    la, lb = sinkhorn_step_log(K, a, b, np.log(beta))
    np.testing.assert_allclose(alpha_p, np.exp(la), rtol=1e-10)
    np.testing.assert_allclose(beta_p, np.exp(lb), rtol=1e-10)


# --- coupling_from_scalings ---------------------------------------------------------------


def test_coupling_from_symmetric_scalings():
    s = 1 / np.sqrt(3)
    P = coupling_from_scalings([s, s], [[1, 0.5], [0.5, 1]], [s, s])
    np.testing.assert_allclose(P, [[1 / 3, 1 / 6], [1 / 6, 1 / 3]], rtol=1e-15)
    np.testing.assert_allclose(P.sum(axis=1), HALF)


def test_coupling_rejects_zero_scaling():
    with pytest.raises(InputError):
        coupling_from_scalings([0.0, 0.0], np.ones((2, 2)), [1.0, 1.0])


def test_coupling_single_cell():
    assert coupling_from_scalings([2.0], [[0.5]], [1.0])[0, 0] == 1.0


# --- sinkhorn_solve -----------------------------------------------------------------


def test_solve_symmetric_two_by_two():
    res = sinkhorn_solve(np.array([[1, 0.5], [0.5, 1]]), HALF, HALF, tol=1e-13)
    assert res.converged
    np.testing.assert_allclose(res.coupling, [[1 / 3, 1 / 6], [1 / 6, 1 / 3]], atol=1e-12)


def test_solve_uniform_kernel_gives_independent_coupling():
    n = 5
    a = uniform_histogram(n)
    res = sinkhorn_solve(np.ones((n, n)), a, a)
    np.testing.assert_allclose(res.coupling, np.full((n, n), 1 / n**2), atol=1e-15)


def test_solve_small_epsilon_matches_assignment():
    C = np.array([[0.0, 1.0], [1.0, 0.0]])
    res = sinkhorn_solve(gibbs_kernel(C, 1e-3), HALF, HALF, tol=1e-12)
    assert res.log_domain
    sigma, _ = exact_lp_assignment(C)
    expected = np.zeros((2, 2))
    expected[[0, 1], sigma] = 0.5
    np.testing.assert_allclose(res.coupling, expected, atol=1e-6)


@pytest.mark.parametrize("tol,max_iter", [(0.0, 10), (1e-9, 0)])
def test_solve_rejects_bad_parameters(tol, max_iter):
    with pytest.raises(ParameterError):
        sinkhorn_solve(np.ones((2, 2)), HALF, HALF, tol=tol, max_iter=max_iter)


def test_solve_reports_nonconvergence_instead_of_raising():
    C = np.random.default_rng(0).random((4, 4))
    a = uniform_histogram(4)
    res = sinkhorn_solve(gibbs_kernel(C, 0.01), a, a, tol=1e-14, max_iter=3)
    assert not res.converged and res.iterations == 3


@given(seed=st.integers(0, 10_000))
def test_solve_matches_dual_ascent_oracle(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(2, 6, size=2)
    C = rng.random((n, m))
    eps = rng.uniform(0.2, 1.0)
    a, b = random_hist(rng, n), random_hist(rng, m)
    res = sinkhorn_solve(gibbs_kernel(C, eps), a, b, tol=1e-13, max_iter=100_000)
    assert res.converged
    np.testing.assert_allclose(res.coupling, entropic_plan_by_dual(C, eps, a, b), atol=1e-7)


@given(seed=st.integers(0, 10_000), tol=st.sampled_from([1e-6, 1e-9, 1e-12]))
def test_converged_marginals_within_ten_tol(seed, tol):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 8, size=2)
    a, b = random_hist(rng, n), random_hist(rng, m)
    res = sinkhorn_solve(gibbs_kernel(rng.random((n, m)), rng.uniform(0.1, 2)), a, b, tol=tol, max_iter=100_000)
    assert res.converged
    assert res.marginal_error <= 10 * tol


@given(seed=st.integers(0, 10_000), r=st.floats(1e-3, 1e3))
def test_initial_beta_scale_does_not_matter(seed, r):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    K = gibbs_kernel(rng.random((n, n)), 0.5)
    a = uniform_histogram(n)
    beta0 = rng.uniform(0.5, 2, n)
    P1 = sinkhorn_solve(K, a, a, tol=1e-12, beta0=beta0).coupling
    P2 = sinkhorn_solve(K, a, a, tol=1e-12, beta0=r * beta0).coupling
    np.testing.assert_allclose(P1, P2, atol=1e-12)


def test_geometric_convergence_along_iterates():
    rng = np.random.default_rng(7)
    for _ in range(10):
        K = rng.uniform(0.05, 1.0, (6, 6))
        a, b = random_hist(rng, 6), random_hist(rng, 6)
        lam, _ = contraction_coefficient(K)
        star = newton_balance(K, a, b, tol=1e-15, max_iter=200).scalings.log_beta
        hist = sinkhorn_solve(K, a, b, tol=1e-13, record_history=True).history
        d = [np.ptp(h - star) for h in hist]
        for prev, nxt in zip(d, d[1:]):
            assert nxt <= lam**2 * prev + 1e-9


# --- newton_balance -----------------------------------------------------------------


@given(seed=st.integers(0, 10_000))
def test_newton_balance_agrees_with_sinkhorn(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 7))
    K = gibbs_kernel(rng.random((n, n)) * 2, rng.uniform(0.3, 2))
    a, b = random_hist(rng, n), random_hist(rng, n)
    ref = sinkhorn_solve(K, a, b, tol=1e-14, max_iter=100_000)
    res = newton_balance(K, a, b, tol=1e-13)
    assert res.converged
    np.testing.assert_allclose(res.coupling, ref.coupling, atol=1e-12)


def test_newton_balance_resolves_subnormal_scale_offdiagonal_mass():
    # three points 1 apart, cost 10 d^2, eps = 0.1: off-diagonal kernel ~ e^-100
    d = np.array([0.0, 1.0, 2.0])
    C = 10 * (d[:, None] - d[None, :]) ** 2
    a = uniform_histogram(3)
    res = newton_balance(gibbs_kernel(C, 0.1), a, a)
    assert res.converged
    P = res.coupling
    # symmetric problem: the balanced coupling is symmetric and the end rows match
    np.testing.assert_allclose(P, P.T, rtol=1e-12)
    np.testing.assert_allclose(P[0, 1], P[1, 2], rtol=1e-12)
    # leading order: P_01 = (1/3) e^-100, corrections are O(e^-100) relative
    assert P[0, 1] == pytest.approx(np.exp(-100) / 3, rel=1e-12)


def test_newton_balance_rejects_rectangular():
    with pytest.raises(InputError):
        newton_balance(np.ones((2, 3)), HALF, uniform_histogram(3))


# --- hilbert_metric -----------------------------------------------------------------


def test_hilbert_identity_and_scale():
    b = np.array([0.3, 2.0, 1.1])
    assert hilbert_metric(b, b) == 0.0
    assert hilbert_metric(b, 3 * b) == pytest.approx(0.0, abs=1e-15)


def test_hilbert_two_vectors():
    assert hilbert_metric([1, 1], [2, 1]) == pytest.approx(np.log(2), rel=1e-15)


def test_hilbert_rejects_nonpositive():
    with pytest.raises(InputError):
        hilbert_metric([1.0, 0.0], [1.0, 1.0])


@given(seed=st.integers(0, 10_000))
def test_hilbert_matches_pair_enumeration_and_is_symmetric(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 8))
    b, bp = rng.uniform(0.01, 10, n), rng.uniform(0.01, 10, n)
    assert hilbert_metric(b, bp) == pytest.approx(hilbert_by_pairs(b, bp), abs=1e-12)
    assert hilbert_metric(b, bp) == pytest.approx(hilbert_metric(bp, b), abs=1e-12)


# --- contraction_coefficient -----------------------------------------------------------------


def test_contraction_uniform_kernel():
    lam, eta = contraction_coefficient(np.ones((3, 3)))
    assert (lam, eta) == (0.0, 1.0)


def test_contraction_two_by_two():
    lam, eta = contraction_coefficient([[1, 0.5], [0.5, 1]])
    assert eta == pytest.approx(4.0, rel=1e-14)
    assert lam == pytest.approx(1 / 3, rel=1e-14)


@given(seed=st.integers(0, 10_000))
def test_contraction_matches_quadruple_enumeration(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 6, size=2)
    K = rng.uniform(0.01, 1.0, (n, m))
    lam, eta = contraction_coefficient(K)
    assert eta == pytest.approx(eta_by_quadruples(K), rel=1e-12)
    assert 0.0 <= lam < 1.0


@given(seed=st.integers(0, 10_000))
def test_positive_map_contracts_hilbert_metric(seed):
    rng = np.random.default_rng(seed)
    n, m = rng.integers(1, 8, size=2)
    K = rng.uniform(0.01, 1.0, (n, m))
    lam, _ = contraction_coefficient(K)
    b, bp = rng.uniform(0.01, 10, m), rng.uniform(0.01, 10, m)
    assert hilbert_metric(K @ b, K @ bp) <= lam * hilbert_metric(b, bp) + 1e-9


def test_contraction_accepts_gibbs_kernel():
    K = gibbs_kernel([[0, 1], [1, 0]], 1.0)
    assert isinstance(K, GibbsKernel)
    lam, eta = contraction_coefficient(K)
    assert eta == pytest.approx(np.exp(2), rel=1e-14)
    assert lam == pytest.approx(np.tanh(0.5), rel=1e-14)


# --- exact_lp_assignment -----------------------------------------------------------------


def test_assignment_identity():
    sigma, cost = exact_lp_assignment([[0, 1], [1, 0]])
    assert sigma.tolist() == [0, 1] and cost == 0.0


def test_assignment_swap():
    sigma, cost = exact_lp_assignment([[1, 0], [0, 1]])
    assert sigma.tolist() == [1, 0] and cost == 0.0


def test_assignment_matches_brute_force():
    rng = np.random.default_rng(11)
    perms = np.array(list(itertools.permutations(range(6))))
    for _ in range(10):
        C = rng.random((6, 6))
        sigma, cost = exact_lp_assignment(C)
        assert cost == C[np.arange(6), perms].sum(axis=1).min() / 6


def test_assignment_lexicographic_tie_break():
    # every permutation is optimal; the lowest-index one is the identity
    sigma, _ = exact_lp_assignment(np.ones((5, 5)))
    assert sigma.tolist() == [0, 1, 2, 3, 4]
    # two optimal permutations (0 1 2) and (1 0 2); lowest index wins
    C = np.array([[0, 0, 5], [0, 0, 5], [5, 5, 0]], dtype=float)
    assert exact_lp_assignment(C)[0].tolist() == [0, 1, 2]


def test_assignment_lexicographic_brute_force_on_integer_costs():
    rng = np.random.default_rng(5)
    perms = list(itertools.permutations(range(5)))
    for _ in range(20):
        C = rng.integers(0, 3, (5, 5)).astype(float)
        costs = [sum(C[i, p[i]] for i in range(5)) for p in perms]
        best = min(costs)
        lowest = min(p for p, c in zip(perms, costs) if c == best)
        assert tuple(exact_lp_assignment(C)[0]) == lowest


def test_assignment_rejects_rectangular():
    with pytest.raises(InputError):
        exact_lp_assignment(np.ones((2, 3)))
