"""Diagnostics for the Sinkhorn MPC closed loop under the energy cost.

Ultimate bounds on agent states, equilibria as fixed points of the
barycentric map ``h``, the small-epsilon approach of equilibria to
permutation arrangements, and empirical local-stability probes built on the
Lyapunov pair ``V = V_x + gamma * d_H(beta, beta^e)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .controller import SwarmConfig, Trajectory, _check_states, barycentric_targets, cost_kernel, simulate
from .errors import InputError, ParameterError
from .transport import SinkhornResult, hilbert_metric_log, newton_balance, sinkhorn_solve

# Inner Sinkhorn tolerance (Hilbert metric) whenever the exact coupling P*(x) is needed.
INNER_TOL = 1e-12
SINKHORN_WARM_START = 200
EXHAUSTIVE_PERMUTATION_LIMIT = 8


def spectral_radius(M) -> float:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.shape[0] != M.shape[1]:
        raise InputError(f"spectral radius needs a square matrix, got shape {M.shape}")
    return float(np.max(np.abs(np.linalg.eigvals(M))))


# ---------------------------------------------------------------------------
# Ultimate boundedness
# ---------------------------------------------------------------------------


@dataclass
class BoundReport:
    rho: np.ndarray
    nu: np.ndarray
    delta: float
    r_upp: float
    bound: np.ndarray
    """Per-agent radius ``delta + r_upp |I - A_cl|_2 / (1 - rho - nu)``."""
    tau: int | None = None
    """First record index at which every agent is inside its bound."""
    violations: list[tuple[int, int]] = field(default_factory=list)
    """``(k, agent)`` pairs outside the bound after ``tau``."""

    @property
    def certified(self) -> bool:
        return self.tau is not None and not self.violations

    def to_dict(self) -> dict:
        return {
            "rho": self.rho.tolist(),
            "nu": self.nu.tolist(),
            "delta": self.delta,
            "r_upp": self.r_upp,
            "bound": self.bound.tolist(),
            "tau": self.tau,
            "violations": [list(v) for v in self.violations],
            "certified": self.certified,
        }


def ultimate_bound(gains, r_upp: float, nu=None, delta: float | None = None, trajectory: Trajectory | None = None) -> BoundReport:
    """Eventual bound on ``|x_i(k)|`` for every agent, optionally checked on a trajectory.

    ``nu`` defaults to ``(1 - rho_i) / 2`` and ``delta`` to ``1e-2 * r_upp``.
    """
    gains = list(gains)
    rho = np.array([g.spectral_radius for g in gains])
    if nu is None:
        nu = (1.0 - rho) / 2.0
    nu = np.broadcast_to(np.asarray(nu, dtype=float), rho.shape).copy()
    if delta is None:
        delta = 1e-2 * r_upp
    if not delta > 0:
        raise ParameterError(f"delta must be positive, got {delta!r}")
    if np.any(nu <= 0) or np.any(rho + nu >= 1):
        raise ParameterError("each nu_i must satisfy nu_i > 0 and rho_i + nu_i < 1")
    gap = np.array([np.linalg.norm(np.eye(g.n) - g.closed_loop, 2) for g in gains])
    bound = delta + r_upp * gap / (1.0 - (rho + nu))
    report = BoundReport(rho=rho, nu=nu, delta=float(delta), r_upp=float(r_upp), bound=bound)
    if trajectory is not None:
        inside = np.linalg.norm(trajectory.x, axis=2) < bound[None, :]
        all_inside = inside.all(axis=1)
        if all_inside.any():
            tau = int(np.argmax(all_inside))
            ks, agents = np.nonzero(~inside[tau:])
            report.tau = tau
            report.violations = [(int(k) + tau, int(i)) for k, i in zip(ks, agents)]
    return report


# ---------------------------------------------------------------------------
# Equilibria
# ---------------------------------------------------------------------------


def exact_coupling(x, config: SwarmConfig, log_beta0=None, tol: float = INNER_TOL) -> SinkhornResult:
    """Converged entropic coupling ``P*(x)`` for the kernel at ``x``.

    A bounded Sinkhorn run warm-starts Newton balancing, which finishes the
    job to ``tol`` in Hilbert metric even where Sinkhorn alone would need
    astronomically many iterations (kernels near a permutation pattern).
    """
    a = config.marginal
    kernel = cost_kernel(x, config)
    warm = sinkhorn_solve(kernel, a, a, tol=tol, max_iter=SINKHORN_WARM_START, log_beta0=log_beta0)
    res = newton_balance(kernel, a, a, log_beta0=warm.scalings.log_beta, tol=tol)
    if not res.converged:
        raise RuntimeError(
            f"inner balancing did not converge (marginal error {res.marginal_error:.3g} "
            f"after {warm.iterations} Sinkhorn and {res.iterations} Newton iterations)"
        )
    return res


def equilibrium_map_h(x, config: SwarmConfig, log_beta0=None) -> np.ndarray:
    """Barycentric targets under the exact coupling at ``x``; fixed points are equilibria."""
    return barycentric_targets(exact_coupling(x, config, log_beta0).coupling, config.targets)


@dataclass
class EquilibriumResult:
    x: np.ndarray
    log_beta: np.ndarray
    """Canonical ``log(beta^e)`` (max entry 0)."""
    log_alpha: np.ndarray
    """``log(1/N / (K(x^e) beta^e))``: restarting the loop from it reproduces ``beta^e``."""
    coupling: np.ndarray
    residual: float
    epsilon: float
    iterations: int
    converged: bool
    residual_history: list[float] = field(default_factory=list, repr=False)
    theta: float = 1.0

    @property
    def beta(self) -> np.ndarray:
        return np.exp(self.log_beta)

    def to_dict(self) -> dict:
        return {
            "x": self.x.tolist(),
            "log_beta": self.log_beta.tolist(),
            "coupling": self.coupling.tolist(),
            "residual": self.residual,
            "epsilon": self.epsilon,
            "iterations": self.iterations,
            "converged": self.converged,
            "theta": self.theta,
        }


def _log_alpha_for(x, log_beta, config: SwarmConfig) -> np.ndarray:
    log_K = cost_kernel(x, config).log_entries
    return np.log(config.marginal) - logsumexp(log_K + log_beta[None, :], axis=1)


def _newton_step(x, hx, config: SwarmConfig, log_beta):
    """Newton step for ``F(x) = x - h(x)`` with a forward-difference Jacobian."""
    v, F = x.reshape(-1), (x - hx).reshape(-1)
    J = np.eye(v.size)
    for k in range(v.size):
        dv = 1e-7 * max(1.0, abs(v[k]))
        xp = v.copy()
        xp[k] += dv
        hp = equilibrium_map_h(xp.reshape(x.shape), config, log_beta).reshape(-1)
        J[:, k] -= (hp - hx.reshape(-1)) / dv
    try:
        return x - np.linalg.solve(J, F).reshape(x.shape)
    except np.linalg.LinAlgError:
        return None


def find_equilibrium(
    config: SwarmConfig,
    x_init=None,
    tol: float = 1e-12,
    max_iter: int = 10_000,
    theta: float = 1.0,
    min_theta: float = 1e-3,
    newton_after: int | None = 50,
) -> EquilibriumResult:
    """Damped Picard iteration ``x <- (1 - theta) x + theta h(x)``.

    ``theta`` is halved whenever the residual ``|x - h(x)|_inf`` grows.
    Near a bifurcation the Jacobian of ``h`` has an eigenvalue close to one
    and Picard crawls, so after ``newton_after`` iterations without
    convergence each iteration first tries a backtracked Newton step on
    ``x - h(x)`` (finite-difference Jacobian) and keeps it only if the
    residual drops; ``None`` disables this.  Stops once the residual at the current iterate
    is below ``tol``; the returned ``x`` is that iterate, so the reported
    residual is exact.  ``x_init`` defaults to the targets themselves.
    Running out of iterations returns ``converged=False`` with the residual
    history.
    """
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol!r}")
    if not 0 < theta <= 1:
        raise ParameterError(f"theta must lie in (0, 1], got {theta!r}")
    x = config.targets.copy() if x_init is None else _check_states(x_init, config).copy()
    log_beta = None
    history: list[float] = []
    converged = False
    it = 0

    def evaluate(x, log_beta):
        res = exact_coupling(x, config, log_beta)
        return res, barycentric_targets(res.coupling, config.targets)

    res, hx = evaluate(x, log_beta)
    while True:
        it += 1
        log_beta = res.scalings.log_beta
        history.append(float(np.abs(x - hx).max()))
        if history[-1] < tol:
            converged = True
            break
        if it >= max_iter:
            break
        if newton_after is not None and it > newton_after:
            x_newton = _newton_step(x, hx, config, log_beta)
            accepted = False
            if x_newton is not None and np.all(np.isfinite(x_newton)):
                t = 1.0
                for _ in range(8):
                    x_try = x + t * (x_newton - x)
                    res_try, hx_try = evaluate(x_try, log_beta)
                    if np.abs(x_try - hx_try).max() < history[-1]:
                        x, res, hx = x_try, res_try, hx_try
                        accepted = True
                        break
                    t /= 2.0
            if accepted:
                continue
        if len(history) > 1 and history[-1] > history[-2]:
            theta = max(theta / 2.0, min_theta)
        x = (1.0 - theta) * x + theta * hx
        res, hx = evaluate(x, log_beta)
    return EquilibriumResult(
        x=x,
        log_beta=log_beta,
        log_alpha=_log_alpha_for(x, log_beta, config),
        coupling=res.coupling,
        residual=history[-1],
        epsilon=config.epsilon,
        iterations=it,
        converged=converged,
        residual_history=history,
        theta=theta,
    )


# ---------------------------------------------------------------------------
# Small-epsilon limit
# ---------------------------------------------------------------------------


def nearest_permutation(x, targets, coupling=None) -> np.ndarray:
    """Permutation ``sigma`` minimizing ``|x - x^d(sigma)|``.

    Exhaustive for up to eight agents; beyond that, row-argmax rounding of
    ``coupling`` (which must then be given and must round to a permutation).
    """
    x = np.asarray(x, dtype=float)
    targets = np.asarray(targets, dtype=float)
    n = targets.shape[0]
    if n <= EXHAUSTIVE_PERMUTATION_LIMIT:
        D = ((x[:, None, :] - targets[None, :, :]) ** 2).sum(axis=2)
        rows = np.arange(n)
        best, best_cost = None, np.inf
        for perm in itertools.permutations(range(n)):
            c = D[rows, perm].sum()
            if c < best_cost:
                best, best_cost = perm, c
        return np.array(best)
    if coupling is None:
        raise InputError("row-argmax rounding needs the coupling for more than eight agents")
    sigma = np.argmax(coupling, axis=1)
    if len(set(sigma.tolist())) != n:
        raise ValueError("coupling does not round to a permutation")
    return sigma


def permutation_deviation(config: SwarmConfig, sigma, xi0=None, max_iter: int = 500, rtol: float = 1e-10):
    """Equilibrium offset ``xi = x^e - x^d(sigma)`` resolved below float spacing of ``x^e``.

    Iterates ``xi_i <- sum_j P_ij (x_j^d - x_sigma(i)^d) / sum_j P_ij`` with
    ``P = P*(x^d(sigma) + xi)``.  The ``j = sigma(i)`` term vanishes exactly, so
    offsets far smaller than ``eps * |x^d|`` keep full relative precision.

    Returns ``(xi, coupling_offset)`` where ``coupling_offset`` is
    ``P - P^sigma`` with its ``(i, sigma(i))`` entries written as minus the
    off-assignment row mass.
    """
    sigma = np.asarray(sigma)
    n = config.n_agents
    anchor = config.targets[sigma]
    rel = config.targets[None, :, :] - anchor[:, None, :]
    xi = np.zeros_like(anchor) if xi0 is None else np.asarray(xi0, dtype=float).copy()
    log_beta = None
    rows = np.arange(n)
    P = None
    for _ in range(max_iter):
        res = exact_coupling(anchor + xi, config, log_beta)
        log_beta = res.scalings.log_beta
        P = res.coupling
        xi_new = np.einsum("ij,ijk->ik", P, rel) / P.sum(axis=1, keepdims=True)
        done = np.abs(xi_new - xi).max() <= rtol * np.abs(xi_new).max()
        xi = xi_new
        if done:
            break
    off = P.copy()
    mask = np.ones_like(P, dtype=bool)
    mask[rows, sigma] = False
    off[rows, sigma] = -np.where(mask, P, 0.0).sum(axis=1)
    return xi, off


@dataclass
class EpsilonProbeRow:
    epsilon: float
    sigma: np.ndarray
    distance: float
    """``min_sigma |x^e - x^d(sigma)|_2``."""
    coupling_distance: float
    """``|P^e - P^sigma|_2`` (spectral norm)."""
    equilibrium: EquilibriumResult = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "sigma": self.sigma.tolist(),
            "distance": self.distance,
            "coupling_distance": self.coupling_distance,
            "residual": self.equilibrium.residual,
            "converged": self.equilibrium.converged,
        }


def epsilon_limit_probe(config: SwarmConfig, epsilons, x_init=None, tol: float = 1e-12) -> list[EpsilonProbeRow]:
    """Distance from the equilibrium to the nearest permutation arrangement, per epsilon.

    Equilibria are continued along ``epsilons`` (each solve starts from the
    previous one) so the table follows a single branch.
    """
    if len(np.unique(config.targets, axis=0)) != config.n_agents:
        raise InputError("targets must be pairwise distinct")
    rows: list[EpsilonProbeRow] = []
    x = x_init
    for eps in epsilons:
        cfg = config.with_epsilon(float(eps))
        eq = find_equilibrium(cfg, x_init=x, tol=tol)
        x = eq.x
        sigma = nearest_permutation(eq.x, cfg.targets, eq.coupling)
        xi, off = permutation_deviation(cfg, sigma, xi0=eq.x - cfg.targets[sigma])
        rows.append(
            EpsilonProbeRow(
                epsilon=float(eps),
                sigma=sigma,
                distance=float(np.linalg.norm(xi)),
                coupling_distance=float(np.linalg.norm(off, 2)),
                equilibrium=eq,
            )
        )
    return rows


def fit_decay_rate(rows: list[EpsilonProbeRow]) -> float:
    """Slope of ``log(distance)`` against ``1/epsilon`` (negative for exponential decay)."""
    inv = np.array([1.0 / r.epsilon for r in rows])
    logd = np.log([r.distance for r in rows])
    return float(np.polyfit(inv, logd, 1)[0])


# ---------------------------------------------------------------------------
# Lyapunov and stability probes
# ---------------------------------------------------------------------------


def _weighted_sq_norms(d: np.ndarray, config: SwarmConfig) -> np.ndarray:
    if config._homogeneous:
        return np.einsum("ik,kl,il->i", d, config._W, d)
    return np.einsum("ik,ikl,il->i", d, config._W, d)


def state_lyapunov(x, coupling, config: SwarmConfig) -> float:
    """``V_x(x) = sum_i |x_i - N sum_j Pbar_ij x_j^d|^2_{W_i}`` for a frozen coupling."""
    d = np.asarray(x, dtype=float) - barycentric_targets(coupling, config.targets)
    return float(_weighted_sq_norms(d, config).sum())


def state_lyapunov_decrease_bound(x, coupling, config: SwarmConfig) -> float:
    """``sum_i |F_i (x_i - N sum_j Pbar_ij x_j^d)|^2``, the guaranteed drop of ``V_x``."""
    d = np.asarray(x, dtype=float) - barycentric_targets(coupling, config.targets)
    if config._homogeneous:
        Fd = d @ config._F.T
    else:
        Fd = np.einsum("imn,in->im", config._F, d)
    return float(np.sum(Fd * Fd))


@dataclass
class LyapunovReport:
    values: np.ndarray
    state_part: np.ndarray
    metric_part: np.ndarray
    """``d_H(beta(k), beta^e)`` before weighting."""
    gamma: float
    nonincreasing_from: int | None
    """First record after which ``V`` never increases (up to ``slack``), or ``None``."""
    slack: float

    def is_lyapunov(self, transient: int = 10) -> bool:
        return self.nonincreasing_from is not None and self.nonincreasing_from <= transient


def lyapunov_probe(
    trajectory: Trajectory,
    equilibrium: EquilibriumResult,
    config: SwarmConfig,
    gamma: float | None = None,
    rel_slack: float = 1e-12,
) -> LyapunovReport:
    """Series ``V(k) = V_x(x(k)) + gamma d_H(beta(k), beta^e)`` with ``Pbar = P^e``.

    ``gamma`` defaults to ``V_x(x(0)) / max(d_H(beta(0), beta^e), 1e-12)``.
    Increases smaller than ``rel_slack * max(V)`` plus ``gamma`` times the
    rounding floor of ``d_H`` (a few ulps of ``log beta``) are attributed to
    rounding and do not count.
    """
    state_part = np.array([state_lyapunov(x, equilibrium.coupling, config) for x in trajectory.x])
    metric_part = np.array([hilbert_metric_log(lb, equilibrium.log_beta) for lb in trajectory.log_beta])
    if gamma is None:
        gamma = state_part[0] / max(metric_part[0], 1e-12)
    values = state_part + gamma * metric_part
    metric_floor = 32 * np.finfo(float).eps * (1.0 + float(np.abs(equilibrium.log_beta).max()))
    slack = rel_slack * float(values.max()) + gamma * metric_floor
    increases = np.flatnonzero(np.diff(values) > slack)
    nonincreasing_from = 0 if increases.size == 0 else int(increases[-1]) + 1
    if nonincreasing_from >= values.size - 1 and increases.size:
        nonincreasing_from = None
    return LyapunovReport(values, state_part, metric_part, float(gamma), nonincreasing_from, slack)


@dataclass
class StabilityReport:
    verdict: str
    ratio: float
    """Largest terminal-to-initial distance ratio over trials."""
    initial_distance: np.ndarray
    terminal_distance: np.ndarray
    distances: np.ndarray = field(repr=False)
    """``|x(k) - x^e|`` per trial and record, shape (trials, steps + 1)."""
    trajectories: list[Trajectory] | None = field(default=None, repr=False)

    @property
    def stable(self) -> bool:
        return self.verdict == "stable"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict,
            "ratio": self.ratio,
            "initial_distance": self.initial_distance.tolist(),
            "terminal_distance": self.terminal_distance.tolist(),
        }


# A run counts as converging when the terminal distance is below this fraction of the initial one.
STABILITY_CONTRACTION = 1e-6
EQUILIBRIUM_DRIFT = 1e-9


def stability_probe(
    config: SwarmConfig,
    equilibrium: EquilibriumResult,
    radius: float,
    steps: int = 500,
    trials: int = 5,
    seed: int = 0,
    keep_trajectories: bool = False,
) -> StabilityReport:
    """Perturb ``x^e`` by random vectors of norm ``radius`` and watch the closed loop.

    Scalings restart at the equilibrium (``alpha(0) = alpha^e``).  The verdict
    is ``"stable"`` when every trial ends within ``1e-6`` of its initial
    distance; a diverging run gives ``"not observed stable"``.  With
    ``radius == 0`` the ratio is 0 when every run stays within
    ``EQUILIBRIUM_DRIFT`` (relative to ``|x^e|``) of the equilibrium.
    """
    if radius < 0 or not np.isfinite(radius):
        raise ParameterError(f"radius must be nonnegative, got {radius!r}")
    rng = np.random.default_rng(seed)
    x_e = equilibrium.x
    series = []
    kept = [] if keep_trajectories else None
    for _ in range(trials):
        direction = rng.standard_normal(x_e.shape)
        direction /= np.linalg.norm(direction)
        x0 = x_e + radius * direction
        traj = simulate(config, x0, steps, log_alpha0=equilibrium.log_alpha)
        if kept is not None:
            kept.append(traj)
        series.append(np.linalg.norm((traj.x - x_e[None]).reshape(steps + 1, -1), axis=1))
    distances = np.array(series)
    initial, terminal = distances[:, 0], distances[:, -1]
    if radius == 0:
        # x^e is only known to solver tolerance, so an unperturbed run may drift slightly
        ratio = 0.0 if np.all(terminal <= EQUILIBRIUM_DRIFT * max(1.0, float(np.abs(x_e).max()))) else np.inf
    else:
        with np.errstate(invalid="ignore"):
            ratio = float(np.max(terminal / initial))
    ok = np.isfinite(ratio) and ratio < STABILITY_CONTRACTION
    return StabilityReport("stable" if ok else "not observed stable", ratio, initial, terminal, distances, kept)
