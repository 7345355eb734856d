"""Sinkhorn MPC closed loop.

Each tick rebuilds the Gibbs kernel from the current agent states, advances
the Sinkhorn scalings by a fixed number of iterations (one by default), reads
a coupling off the scalings, turns it into a temporary target per agent and
applies the closed-form MPC law::

    K      = exp(-|x_i - x_j^d|^2_{W_i} / eps)
    beta   = 1/N / (K^T alpha)           beta(k) from alpha(k)
    alpha' = 1/N / (K beta)              alpha(k+1)
    P      = diag(alpha') K diag(beta)
    t_i    = N sum_j P_ij x_j^d
    x_i'   = A_cl,i x_i + (I - A_cl,i) t_i
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy.special import logsumexp

from .errors import InputError, ParameterError, UnderflowError
from .linear_mpc import LinearPlant, MpcGains, mpc_gains
from .transport import GibbsKernel, Mode, canonicalize, canonicalize_log, gibbs_kernel

TargetPolicy = Callable[[np.ndarray, np.ndarray], np.ndarray]


def barycentric_targets(P, targets) -> np.ndarray:
    """Temporary targets ``t_i = N sum_j P_ij x_j^d`` (rows of ``N P X^d``)."""
    P = np.asarray(P, dtype=float)
    targets = np.asarray(targets, dtype=float)
    if P.ndim != 2 or P.shape[1] != targets.shape[0]:
        raise InputError(f"coupling shape {P.shape} does not match {targets.shape[0]} targets")
    return P.shape[0] * (P @ targets)


@dataclass(frozen=True, eq=False)
class SwarmConfig:
    """Agents, targets and Sinkhorn settings for one closed-loop experiment.

    ``alpha0`` is stored canonicalized (divided by its maximum); ``None``
    means ``1_N``.
    """

    agents: tuple[MpcGains, ...]
    targets: np.ndarray
    epsilon: float
    sinkhorn_iters_per_tick: int = 1
    alpha0: np.ndarray | None = None
    target_policy: TargetPolicy = barycentric_targets
    mode: Mode = "auto"

    _A_cl: np.ndarray = field(init=False, repr=False)
    _W: np.ndarray = field(init=False, repr=False)
    _F: np.ndarray = field(init=False, repr=False)
    _H: np.ndarray = field(init=False, repr=False)
    _homogeneous: bool = field(init=False, repr=False)

    def __post_init__(self):
        agents = tuple(self.agents)
        if not agents:
            raise InputError("at least one agent is required")
        targets = np.asarray(self.targets, dtype=float)
        if targets.ndim == 1:
            targets = targets[:, None]
        n = agents[0].n
        if any(g.n != n for g in agents):
            raise InputError("all agents must share the state dimension")
        if targets.shape != (len(agents), n):
            raise InputError(f"targets must have shape ({len(agents)}, {n}), got {targets.shape}")
        if not np.all(np.isfinite(targets)):
            raise InputError("targets must be finite")
        if not np.isfinite(self.epsilon) or self.epsilon <= 0:
            raise ParameterError(f"epsilon must be positive, got {self.epsilon!r}")
        if int(self.sinkhorn_iters_per_tick) != self.sinkhorn_iters_per_tick or self.sinkhorn_iters_per_tick < 1:
            raise ParameterError("sinkhorn_iters_per_tick must be a positive integer")
        if self.mode not in ("auto", "plain", "log"):
            raise ParameterError(f"unknown Sinkhorn mode {self.mode!r}")
        alpha0 = self.alpha0
        if alpha0 is not None:
            alpha0 = np.asarray(alpha0, dtype=float).reshape(-1)
            if alpha0.size != len(agents) or not np.all(np.isfinite(alpha0)) or np.any(alpha0 <= 0):
                raise InputError("alpha0 must be a positive vector with one entry per agent")
            alpha0 = alpha0 / alpha0.max()

        set_ = object.__setattr__
        set_(self, "agents", agents)
        set_(self, "targets", targets)
        set_(self, "epsilon", float(self.epsilon))
        set_(self, "sinkhorn_iters_per_tick", int(self.sinkhorn_iters_per_tick))
        set_(self, "alpha0", alpha0)
        first = agents[0]
        homogeneous = all(g is first for g in agents)
        set_(self, "_homogeneous", homogeneous)
        if homogeneous:
            set_(self, "_A_cl", first.closed_loop)
            set_(self, "_W", first.cost_weight)
            set_(self, "_F", first.feedback)
            set_(self, "_H", first.holding_gain)
        else:
            set_(self, "_A_cl", np.stack([g.closed_loop for g in agents]))
            set_(self, "_W", np.stack([g.cost_weight for g in agents]))
            set_(self, "_F", np.stack([g.feedback for g in agents]))
            set_(self, "_H", np.stack([g.holding_gain for g in agents]))

    @classmethod
    def homogeneous(cls, plant: LinearPlant, targets, epsilon: float, horizon: int, **kwargs) -> "SwarmConfig":
        """All agents share ``plant``; gains are computed once."""
        targets = np.asarray(targets, dtype=float)
        if targets.ndim == 1:
            targets = targets[:, None]
        gains = mpc_gains(plant, horizon)
        return cls(agents=(gains,) * targets.shape[0], targets=targets, epsilon=epsilon, **kwargs)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @property
    def state_dim(self) -> int:
        return self.targets.shape[1]

    @property
    def input_dim(self) -> int:
        return self.agents[0].plant.m

    @property
    def r_upp(self) -> float:
        """Radius of the smallest origin-centred ball containing every target."""
        return float(np.linalg.norm(self.targets, axis=1).max())

    @property
    def marginal(self) -> np.ndarray:
        return np.full(self.n_agents, 1.0 / self.n_agents)

    def with_epsilon(self, epsilon: float) -> "SwarmConfig":
        return replace(self, epsilon=epsilon)

    def initial_log_alpha(self) -> np.ndarray:
        if self.alpha0 is None:
            return np.zeros(self.n_agents)
        return np.log(self.alpha0)

    def digest(self) -> str:
        """SHA-256 over everything that determines a rollout."""
        h = hashlib.sha256()
        for g in self.agents:
            h.update(g.plant.A.tobytes())
            h.update(g.plant.B.tobytes())
            h.update(str(g.horizon).encode())
        h.update(self.targets.tobytes())
        h.update(repr((self.epsilon, self.sinkhorn_iters_per_tick, self.mode)).encode())
        h.update(b"none" if self.alpha0 is None else self.alpha0.tobytes())
        h.update(getattr(self.target_policy, "__qualname__", repr(self.target_policy)).encode())
        return h.hexdigest()


def _check_states(x, config: SwarmConfig) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1 and config.state_dim == 1:
        x = x[:, None]
    if x.shape != (config.n_agents, config.state_dim):
        raise InputError(f"states must have shape ({config.n_agents}, {config.state_dim}), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputError("states must be finite")
    return x


def cost_matrix(x, config: SwarmConfig) -> np.ndarray:
    """``C_ij = (x_i - x_j^d)^T W_i (x_i - x_j^d)``."""
    x = _check_states(x, config)
    diff = x[:, None, :] - config.targets[None, :, :]
    if config._homogeneous:
        C = np.einsum("ijk,ijk->ij", diff @ config._W, diff)
    else:
        C = np.einsum("ijk,ikl,ijl->ij", diff, config._W, diff)
    return np.maximum(C, 0.0)


def cost_kernel(x, config: SwarmConfig) -> GibbsKernel:
    return gibbs_kernel(cost_matrix(x, config), config.epsilon)


def closed_loop_update(x, targets, config: SwarmConfig) -> np.ndarray:
    """``x_i' = A_cl,i x_i + (I - A_cl,i) t_i``."""
    if config._homogeneous:
        A_cl = config._A_cl
        return x @ A_cl.T + targets @ (np.eye(config.state_dim) - A_cl).T
    I = np.eye(config.state_dim)
    return np.einsum("inm,im->in", config._A_cl, x) + np.einsum("inm,im->in", I - config._A_cl, targets)


def mpc_inputs(x, targets, config: SwarmConfig) -> np.ndarray:
    """Stacked ``u_i = -F_i (x_i - t_i) + B_i^-1 (t_i - A_i t_i)``."""
    if config._homogeneous:
        return -(x - targets) @ config._F.T + targets @ config._H.T
    return -np.einsum("imn,in->im", config._F, x - targets) + np.einsum("imn,in->im", config._H, targets)


@dataclass(frozen=True, eq=False)
class SwarmState:
    """Collective state entering tick ``k``.

    ``x`` and ``alpha`` are ``x(k)`` and ``alpha(k)``.  ``beta``, ``coupling``,
    ``targets`` and ``inputs`` are what tick ``k - 1`` computed (``None`` at
    ``k = 0``).
    """

    k: int
    x: np.ndarray
    log_alpha: np.ndarray
    alpha: np.ndarray
    log_beta: np.ndarray | None = None
    coupling: np.ndarray | None = None
    targets: np.ndarray | None = None
    inputs: np.ndarray | None = None

    @property
    def beta(self) -> np.ndarray | None:
        return None if self.log_beta is None else np.exp(self.log_beta)


def _exp_quiet(v: np.ndarray) -> np.ndarray:
    # inf or 0 entries are fine: the plain path rejects them and the log path takes over
    with np.errstate(over="ignore", under="ignore"):
        return np.exp(v)


def initial_state(config: SwarmConfig, x0, log_alpha0=None) -> SwarmState:
    x0 = _check_states(x0, config).copy()
    if log_alpha0 is None:
        if config.alpha0 is None:
            alpha = np.ones(config.n_agents)
        else:
            alpha = config.alpha0.copy()
        return SwarmState(0, x0, np.log(alpha), alpha)
    log_alpha = np.asarray(log_alpha0, dtype=float).reshape(-1)
    if log_alpha.size != config.n_agents or not np.all(np.isfinite(log_alpha)):
        raise InputError("log_alpha0 must be a finite vector with one entry per agent")
    log_alpha = log_alpha - log_alpha.max()
    return SwarmState(0, x0, log_alpha, _exp_quiet(log_alpha))


@dataclass(frozen=True, eq=False)
class TickPlan:
    """Everything tick ``k`` decides before the states move."""

    log_beta: np.ndarray
    log_alpha_next: np.ndarray
    alpha_next: np.ndarray
    coupling: np.ndarray
    log_coupling: np.ndarray
    targets: np.ndarray
    inputs: np.ndarray
    log_domain: bool

    def entropy(self) -> float:
        """``H(P) = -sum P (log P - 1)``."""
        return float(-np.sum(self.coupling * (self.log_coupling - 1.0)))


def _plain_sinkhorn(K: np.ndarray, a: np.ndarray, alpha: np.ndarray, iters: int):
    if not (np.all(alpha > 0) and np.all(np.isfinite(alpha))):
        raise UnderflowError("alpha is not representable in plain arithmetic")
    beta = None
    for _ in range(iters):
        denom = K.T @ alpha
        if not (np.all(denom > 0) and np.all(np.isfinite(denom))):
            raise UnderflowError("K^T alpha has zero or non-finite entries")
        beta = a / denom
        denom = K @ beta
        if not (np.all(denom > 0) and np.all(np.isfinite(denom))):
            raise UnderflowError("K beta has zero or non-finite entries")
        alpha = a / denom
    if not (np.all(np.isfinite(beta)) and np.all(np.isfinite(alpha)) and np.all(beta > 0) and np.all(alpha > 0)):
        raise UnderflowError("scalings left the representable range")
    return canonicalize(alpha, beta)


def _log_sinkhorn(log_K: np.ndarray, log_a: np.ndarray, log_alpha: np.ndarray, iters: int):
    log_beta = None
    for _ in range(iters):
        log_beta = log_a - logsumexp(log_K + log_alpha[:, None], axis=0)
        log_alpha = log_a - logsumexp(log_K + log_beta[None, :], axis=1)
    return canonicalize_log(log_alpha, log_beta)


def plan_tick(state: SwarmState, config: SwarmConfig) -> TickPlan:
    """Kernel, Sinkhorn update, coupling, targets and inputs for ``state``."""
    x = state.x
    kernel = cost_kernel(x, config)
    a = config.marginal
    iters = config.sinkhorn_iters_per_tick
    plan = None
    if config.mode != "log" and not kernel.underflows:
        try:
            alpha_next, beta = _plain_sinkhorn(kernel.entries, a, state.alpha, iters)
            P = alpha_next[:, None] * kernel.entries * beta[None, :]
            with np.errstate(divide="ignore"):
                log_alpha_next, log_beta = np.log(alpha_next), np.log(beta)
            if np.all(np.isfinite(log_alpha_next)) and np.all(np.isfinite(log_beta)):
                plan = (log_beta, log_alpha_next, alpha_next, P, None, False)
        except UnderflowError:
            if config.mode == "plain":
                raise
    if plan is None:
        if config.mode == "plain":
            raise UnderflowError("kernel underflows in plain mode; use mode='auto' or 'log'")
        log_alpha_next, log_beta = _log_sinkhorn(kernel.log_entries, np.log(a), state.log_alpha, iters)
        # alpha(k+1) is the row normalizer of K diag(beta), so P is a row softmax scaled by a;
        # this avoids adding large logs of opposite sign and keeps row sums at 1/N
        z = kernel.log_entries + log_beta[None, :]
        log_P = np.log(a)[:, None] + (z - logsumexp(z, axis=1, keepdims=True))
        with np.errstate(over="ignore", under="ignore"):
            plan = (log_beta, log_alpha_next, np.exp(log_alpha_next), np.exp(log_P), log_P, True)
    log_beta, log_alpha_next, alpha_next, P, log_P, log_domain = plan
    if not np.all(np.isfinite(P)):
        raise UnderflowError(f"non-finite coupling at tick {state.k}")
    if log_P is None:
        log_P = log_alpha_next[:, None] + kernel.log_entries + log_beta[None, :]
    targets = config.target_policy(P, config.targets)
    inputs = mpc_inputs(x, targets, config)
    return TickPlan(log_beta, log_alpha_next, alpha_next, P, log_P, targets, inputs, log_domain)


def step(state: SwarmState, config: SwarmConfig, plan: TickPlan | None = None) -> SwarmState:
    """Advance the closed loop by one tick."""
    if plan is None:
        plan = plan_tick(state, config)
    x_next = closed_loop_update(state.x, plan.targets, config)
    return SwarmState(
        k=state.k + 1,
        x=x_next,
        log_alpha=plan.log_alpha_next,
        alpha=plan.alpha_next,
        log_beta=plan.log_beta,
        coupling=plan.coupling,
        targets=plan.targets,
        inputs=plan.inputs,
    )


_DETERMINISTIC_FIELDS = ("x", "inputs", "targets", "log_alpha", "log_beta", "final_coupling", "coupling_entropy", "log_domain")


@dataclass(eq=False)
class Trajectory:
    """Recorded rollout of ``steps`` ticks.

    Record ``k`` (``0 <= k <= steps``) holds ``x(k)``, ``alpha(k)`` and the plan
    computed from them: ``beta(k)``, the applied targets and inputs ``u(k)``.
    The plan of the final record is computed but not applied, so
    ``final_coupling`` is ``P(steps)``.
    """

    x: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray
    log_alpha: np.ndarray
    log_beta: np.ndarray
    final_coupling: np.ndarray
    next_log_alpha: np.ndarray
    coupling_entropy: np.ndarray
    log_domain: np.ndarray
    config_digest: str
    sinkhorn_seconds: np.ndarray = field(repr=False)
    mpc_seconds: np.ndarray = field(repr=False)
    couplings: np.ndarray | None = field(default=None, repr=False)

    @property
    def steps(self) -> int:
        return self.x.shape[0] - 1

    @property
    def n_agents(self) -> int:
        return self.x.shape[1]

    @property
    def beta(self) -> np.ndarray:
        return np.exp(self.log_beta)

    @property
    def alpha(self) -> np.ndarray:
        return np.exp(self.log_alpha)

    def assignment(self) -> np.ndarray:
        """Row-argmax rounding of ``P(steps)``."""
        return np.argmax(self.final_coupling, axis=1)

    def fingerprint(self) -> str:
        """SHA-256 of every recorded array except wall-clock timings."""
        h = hashlib.sha256(self.config_digest.encode())
        for name in _DETERMINISTIC_FIELDS:
            arr = np.ascontiguousarray(getattr(self, name))
            h.update(name.encode())
            h.update(arr.tobytes())
        return h.hexdigest()

    def state_at(self, k: int) -> SwarmState:
        """Reconstruct the state entering tick ``k`` (without the previous plan)."""
        log_alpha = self.log_alpha[k]
        return SwarmState(k, self.x[k].copy(), log_alpha.copy(), _exp_quiet(log_alpha))


def simulate(
    config: SwarmConfig,
    x0,
    steps: int,
    log_alpha0=None,
    record_couplings: bool = False,
) -> Trajectory:
    """Deterministic rollout of :func:`step` for ``steps`` ticks.

    ``log_alpha0`` overrides ``config.alpha0`` (useful to restart the
    scalings at a known equilibrium).  Full couplings are kept per tick only
    when ``record_couplings`` is set, since they cost ``O(steps N^2)`` memory.
    """
    if int(steps) != steps or steps < 0:
        raise ParameterError(f"steps must be a nonnegative integer, got {steps!r}")
    steps = int(steps)
    state = initial_state(config, x0, log_alpha0)
    N, n, m = config.n_agents, config.state_dim, config.input_dim

    xs = np.empty((steps + 1, N, n))
    us = np.empty((steps + 1, N, m))
    ts = np.empty((steps + 1, N, n))
    las = np.empty((steps + 1, N))
    lbs = np.empty((steps + 1, N))
    entropy = np.empty(steps + 1)
    log_domain = np.zeros(steps + 1, dtype=bool)
    t_sink = np.empty(steps + 1)
    t_mpc = np.empty(steps + 1)
    couplings = np.empty((steps + 1, N, N)) if record_couplings else None

    plan = None
    for k in range(steps + 1):
        t0 = time.perf_counter()
        try:
            plan = plan_tick(state, config)
        except UnderflowError as exc:
            raise UnderflowError(f"tick {k}: {exc}") from exc
        t1 = time.perf_counter()
        xs[k] = state.x
        las[k] = state.log_alpha
        lbs[k] = plan.log_beta
        us[k] = plan.inputs
        ts[k] = plan.targets
        entropy[k] = plan.entropy()
        log_domain[k] = plan.log_domain
        if couplings is not None:
            couplings[k] = plan.coupling
        if k < steps:
            state = step(state, config, plan)
        t_sink[k] = t1 - t0
        t_mpc[k] = time.perf_counter() - t1

    return Trajectory(
        x=xs,
        inputs=us,
        targets=ts,
        log_alpha=las,
        log_beta=lbs,
        final_coupling=plan.coupling,
        next_log_alpha=plan.log_alpha_next,
        coupling_entropy=entropy,
        log_domain=log_domain,
        config_digest=config.digest(),
        sinkhorn_seconds=t_sink,
        mpc_seconds=t_mpc,
        couplings=couplings,
    )
