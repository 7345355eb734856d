import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sinkhorn_mpc.controller import (
    SwarmConfig,
    barycentric_targets,
    closed_loop_update,
    cost_kernel,
    cost_matrix,
    initial_state,
    mpc_inputs,
    plan_tick,
    simulate,
    step,
)
from sinkhorn_mpc.errors import InputError, ParameterError
from sinkhorn_mpc.linear_mpc import LinearPlant, mpc_gains, mpc_input
from sinkhorn_mpc.transport import gibbs_kernel, sinkhorn_solve, uniform_histogram


def scalar_swarm(targets, epsilon=1.0, **kwargs):
    return SwarmConfig.homogeneous(LinearPlant(1.0, 0.1), np.asarray(targets, float), epsilon, 10, **kwargs)


def planar_swarm(N, epsilon=1.0, seed=0, **kwargs):
    rng = np.random.default_rng(seed)
    plant = LinearPlant(np.array([[1.2, 0.13], [-0.05, 1.1]]), 0.1 * np.eye(2))
    return SwarmConfig.homogeneous(plant, rng.uniform(-2, 2, (N, 2)), epsilon, 10, **kwargs)


# --- configuration ---------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ParameterError):
        scalar_swarm([0.0, 1.0], epsilon=0.0)
    with pytest.raises(ParameterError):
        scalar_swarm([0.0, 1.0], sinkhorn_iters_per_tick=0)
    with pytest.raises(InputError):
        scalar_swarm([[0.0, 1.0]])  # one target of dimension 2 for a scalar plant
    with pytest.raises(InputError):
        scalar_swarm([0.0, np.inf])


def test_alpha0_is_canonicalized():
    cfg = scalar_swarm([0.0, 1.0, 2.0], alpha0=np.array([2.0, 4.0, 1.0]))
    np.testing.assert_array_equal(cfg.alpha0, [0.5, 1.0, 0.25])


def test_r_upp_is_largest_target_norm():
    assert scalar_swarm([-3.0, 1.0, 2.0]).r_upp == 3.0


# --- cost kernel -----------------------------------------------------------------------


def test_kernel_row_for_scalar_plant():
    cfg = scalar_swarm([0.0, 1.0])
    K = cost_kernel(np.array([0.0, 5.0]), cfg)
    np.testing.assert_allclose(K.entries[0], [1.0, np.exp(-10.0)], rtol=1e-13)


def test_kernel_all_ones_when_on_coincident_targets():
    cfg = scalar_swarm([0.4, 0.4, 0.4])
    np.testing.assert_array_equal(cost_kernel(np.full(3, 0.4), cfg).entries, np.ones((3, 3)))


def test_planar_cost_is_nonnegative_and_zero_only_on_targets():
    cfg = planar_swarm(6)
    x = np.random.default_rng(1).uniform(-2, 2, (6, 2))
    x[2] = cfg.targets[4]
    C = cost_matrix(x, cfg)
    assert np.all(C >= 0)
    assert C[2, 4] == 0.0
    assert np.count_nonzero(C == 0) == 1


def test_heterogeneous_cost_uses_per_agent_weights():
    plants = [LinearPlant(1.0, 0.1), LinearPlant(0.5, 1.0)]
    gains = tuple(mpc_gains(p, 5) for p in plants)
    cfg = SwarmConfig(agents=gains, targets=np.array([[0.0], [1.0]]), epsilon=1.0)
    x = np.array([[2.0], [-1.0]])
    expected = np.array([[g.cost_weight[0, 0] * (xi - t) ** 2 for t in (0.0, 1.0)] for g, xi in zip(gains, x[:, 0])])
    np.testing.assert_allclose(cost_matrix(x, cfg), expected, rtol=1e-14)


# --- barycentric targets ------------------------------------------------------------------


def test_permutation_coupling_picks_targets():
    X = np.arange(4.0)[:, None] * [1.0, -2.0]
    sigma = np.array([2, 0, 3, 1])
    P = np.eye(4)[sigma] / 4
    np.testing.assert_array_equal(barycentric_targets(P, X), X[sigma])


def test_uniform_coupling_gives_mean():
    X = np.random.default_rng(0).normal(size=(5, 3))
    np.testing.assert_allclose(barycentric_targets(np.full((5, 5), 1 / 25), X), np.tile(X.mean(0), (5, 1)), atol=1e-15)


def test_near_permutation_coupling_targets():
    X = np.array([[0.3], [-1.2]])
    K = gibbs_kernel(np.array([[0.0, 1.0], [1.0, 0.0]]), 1e-3)
    res = sinkhorn_solve(K, uniform_histogram(2), uniform_histogram(2), tol=1e-14)
    np.testing.assert_allclose(barycentric_targets(res.coupling, X), X, atol=1e-3)


def test_barycentric_shape_mismatch():
    with pytest.raises(InputError):
        barycentric_targets(np.ones((2, 3)), np.ones((2, 1)))


# --- single step ---------------------------------------------------------------------------


def test_step_follows_the_displayed_recursion():
    cfg = planar_swarm(5, epsilon=0.7, seed=3)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(5, 2))
    alpha = rng.uniform(0.5, 1.5, 5)
    state = initial_state(cfg, x, np.log(alpha))
    nxt = step(state, cfg)

    K = cost_kernel(x, cfg).entries
    alpha = alpha / alpha.max()
    beta = (1 / 5) / (K.T @ alpha)
    alpha_next = (1 / 5) / (K @ beta)
    P = alpha_next[:, None] * K * beta[None, :]
    t = 5 * P @ cfg.targets
    A_cl = cfg.agents[0].closed_loop
    x_next = x @ A_cl.T + t @ (np.eye(2) - A_cl).T
    np.testing.assert_allclose(nxt.coupling, P, rtol=1e-12)
    np.testing.assert_allclose(nxt.x, x_next, rtol=1e-12, atol=1e-14)
    assert nxt.k == 1


def test_single_agent_is_plain_mpc():
    cfg = scalar_swarm([2.0])
    traj = simulate(cfg, np.array([[7.0]]), 40)
    err = np.abs(traj.x[:, 0, 0] - 2.0)
    np.testing.assert_allclose(err, 5.0 * 0.9 ** np.arange(41), rtol=1e-12)
    np.testing.assert_array_equal(traj.final_coupling, [[1.0]])


def test_large_epsilon_steers_to_mean():
    targets = np.array([-1.0, 0.5, 3.0])
    cfg = scalar_swarm(targets, epsilon=1e12)
    x = np.array([[4.0], [-2.0], [0.0]])
    nxt = step(initial_state(cfg, x), cfg)
    np.testing.assert_allclose(nxt.targets, np.full((3, 1), targets.mean()), rtol=1e-9)
    np.testing.assert_allclose(nxt.x, 0.9 * x + 0.1 * targets.mean(), rtol=1e-9)


def test_one_step_from_targets_stays_bounded():
    targets = np.linspace(-2, 2, 10)
    cfg = scalar_swarm(targets, epsilon=0.5)
    nxt = step(initial_state(cfg, targets), cfg)
    assert np.all(np.abs(nxt.x) <= cfg.r_upp + 1e-12)
    assert np.all(np.abs(nxt.targets) <= cfg.r_upp + 1e-12)


def test_log_domain_fallback_on_underflow():
    cfg = scalar_swarm([0.0, 50.0], epsilon=1e-3)
    plan = plan_tick(initial_state(cfg, np.array([0.0, 50.0])), cfg)
    assert plan.log_domain
    np.testing.assert_allclose(plan.coupling, np.eye(2) / 2, atol=1e-300)
    with pytest.raises(Exception, match="plain"):
        plan_tick(initial_state(cfg, np.array([0.0, 50.0])), SwarmConfig.homogeneous(
            LinearPlant(1.0, 0.1), [0.0, 50.0], 1e-3, 10, mode="plain"))


# --- rollouts ------------------------------------------------------------------------------


def test_zero_steps_records_initial_state_only():
    cfg = planar_swarm(4)
    x0 = np.ones((4, 2))
    traj = simulate(cfg, x0, 0)
    assert traj.x.shape == (1, 4, 2) and traj.steps == 0
    np.testing.assert_array_equal(traj.x[0], x0)


def test_negative_steps_rejected():
    with pytest.raises(ParameterError):
        simulate(planar_swarm(3), np.zeros((3, 2)), -1)


def test_state_update_matches_applied_inputs():
    cfg = planar_swarm(8, seed=5)
    traj = simulate(cfg, np.random.default_rng(6).uniform(-5, 5, (8, 2)), 60)
    plant = cfg.agents[0].plant
    for k in range(traj.steps):
        pushed = traj.x[k] @ plant.A.T + traj.inputs[k] @ plant.B.T
        np.testing.assert_allclose(traj.x[k + 1], pushed, atol=1e-12 * max(1.0, np.abs(traj.x[k]).max()))
        via_input = np.array([mpc_input(cfg.agents[0], xi, ti) for xi, ti in zip(traj.x[k], traj.targets[k])])
        np.testing.assert_allclose(traj.inputs[k], via_input, atol=1e-12)


def test_heterogeneous_agents_follow_their_own_laws():
    plants = [LinearPlant(1.0, 0.1), LinearPlant(0.8, 0.5), LinearPlant(1.1, 1.0)]
    gains = tuple(mpc_gains(p, 6) for p in plants)
    cfg = SwarmConfig(agents=gains, targets=np.array([[-1.0], [0.0], [2.0]]), epsilon=0.5)
    traj = simulate(cfg, np.array([[3.0], [1.0], [-2.0]]), 30)
    for k in range(30):
        for i, g in enumerate(gains):
            pushed = g.plant.A @ traj.x[k, i] + g.plant.B @ traj.inputs[k, i]
            np.testing.assert_allclose(traj.x[k + 1, i], pushed, atol=1e-12)
            np.testing.assert_allclose(
                closed_loop_update(traj.x[k], traj.targets[k], cfg)[i], traj.x[k + 1, i], atol=1e-12)
    np.testing.assert_allclose(mpc_inputs(traj.x[0], traj.targets[0], cfg), traj.inputs[0], atol=1e-14)


@given(seed=st.integers(0, 10_000), N=st.integers(1, 7), eps=st.floats(0.05, 20))
def test_temporary_targets_stay_in_target_ball(seed, N, eps):
    cfg = planar_swarm(N, epsilon=eps, seed=seed)
    traj = simulate(cfg, np.random.default_rng(seed + 1).uniform(-6, 6, (N, 2)), 15)
    assert np.linalg.norm(traj.targets, axis=2).max() <= cfg.r_upp + 1e-12


def test_determinism():
    cfg = planar_swarm(12, seed=2)
    x0 = np.random.default_rng(3).uniform(-5, 5, (12, 2))
    a, b = simulate(cfg, x0, 100), simulate(cfg, x0, 100)
    assert a.fingerprint() == b.fingerprint()
    for name in ("x", "inputs", "targets", "log_alpha", "log_beta", "final_coupling"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()


def test_alpha0_scaling_is_invisible():
    cfg = planar_swarm(12, seed=2)
    x0 = np.random.default_rng(3).uniform(-5, 5, (12, 2))
    ref = simulate(cfg, x0, 100)
    scaled = simulate(SwarmConfig.homogeneous(cfg.agents[0].plant, cfg.targets, 1.0, 10, alpha0=np.full(12, 7.3)), x0, 100)
    assert ref.x.tobytes() == scaled.x.tobytes()
    assert ref.final_coupling.tobytes() == scaled.final_coupling.tobytes()


@given(seed=st.integers(0, 10_000))
def test_general_alpha0_scaling(seed):
    rng = np.random.default_rng(seed)
    cfg = planar_swarm(6, seed=seed)
    alpha0 = rng.uniform(0.1, 2.0, 6)
    x0 = rng.uniform(-4, 4, (6, 2))
    a = simulate(SwarmConfig.homogeneous(cfg.agents[0].plant, cfg.targets, 1.0, 10, alpha0=alpha0), x0, 40)
    b = simulate(SwarmConfig.homogeneous(cfg.agents[0].plant, cfg.targets, 1.0, 10, alpha0=7.3 * alpha0), x0, 40)
    # canonicalization divides by the maximum, which can differ from the unscaled quotient by one ulp
    np.testing.assert_allclose(a.x, b.x, rtol=1e-12, atol=1e-12)


@given(seed=st.integers(0, 10_000), N=st.integers(2, 6))
def test_permutation_equivariance(seed, N):
    rng = np.random.default_rng(seed)
    plants = [LinearPlant(rng.uniform(0.8, 1.2), rng.uniform(0.1, 1.0)) for _ in range(N)]
    gains = [mpc_gains(p, 5) for p in plants]
    targets = rng.uniform(-2, 2, (N, 1))
    x0 = rng.uniform(-4, 4, (N, 1))
    perm = rng.permutation(N)
    ref = simulate(SwarmConfig(agents=tuple(gains), targets=targets, epsilon=0.7), x0, 25)
    cfg = SwarmConfig(agents=tuple(gains[i] for i in perm), targets=targets, epsilon=0.7)
    permuted = simulate(cfg, x0[perm], 25)
    np.testing.assert_allclose(permuted.x, ref.x[:, perm], rtol=1e-10, atol=1e-12)
    np.testing.assert_allclose(permuted.final_coupling, ref.final_coupling[perm], rtol=1e-9, atol=1e-15)


def test_more_iterations_per_tick_is_allowed():
    cfg = scalar_swarm(np.linspace(-1, 1, 4), epsilon=0.3, sinkhorn_iters_per_tick=5)
    traj = simulate(cfg, np.linspace(2, -2, 4), 50)
    P = traj.final_coupling
    np.testing.assert_allclose(P.sum(axis=1), 0.25, atol=1e-9)
