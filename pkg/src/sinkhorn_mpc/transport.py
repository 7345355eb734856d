"""Entropic optimal transport between discrete histograms.

Gibbs kernels, Sinkhorn scaling iterations in plain and log domain, the
Hilbert projective metric with the Birkhoff contraction coefficient, and an
exact assignment solver used as an oracle and timing baseline.

Scaling vectors are projective: ``(alpha, beta)`` and ``(r * alpha, beta / r)``
give the same coupling.  Every routine returns the canonical representative
with ``max(beta) == 1`` (``max(log_beta) == 0`` in log domain).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linear_sum_assignment, linprog
from scipy.special import logsumexp

from .errors import InputError, ParameterError, UnderflowError

Mode = Literal["auto", "plain", "log"]

_MODES = ("auto", "plain", "log")


# ---------------------------------------------------------------------------
# Problem data
# ---------------------------------------------------------------------------


def as_histogram(weights, name: str = "histogram") -> np.ndarray:
    """Validate a mass vector: nonnegative entries summing to one."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InputError(f"{name} must be a nonempty 1-D vector, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise InputError(f"{name} must have finite nonnegative entries")
    if abs(w.sum() - 1.0) > 1e-12:
        raise InputError(f"{name} must sum to 1 (sum={w.sum()!r})")
    return w


def uniform_histogram(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


@dataclass(frozen=True)
class GibbsKernel:
    """``K = exp(-C / epsilon)`` together with its exact logarithm.

    ``entries`` may contain zeros where ``exp`` underflows; ``log_entries``
    is always exact and is what the log-domain routines consume.
    """

    entries: np.ndarray
    log_entries: np.ndarray
    epsilon: float

    @property
    def shape(self) -> tuple[int, int]:
        return self.log_entries.shape

    @property
    def underflows(self) -> bool:
        return not bool(np.all(self.entries > 0.0))


def gibbs_kernel(C, epsilon: float) -> GibbsKernel:
    """Gibbs kernel of a cost matrix.

    Examples
    --------
    >>> K = gibbs_kernel([[0.0, 1.0], [1.0, 0.0]], 0.5)
    >>> np.allclose(K.entries, [[1, np.exp(-2)], [np.exp(-2), 1]])
    True
    """
    if not np.isfinite(epsilon) or epsilon <= 0:
        raise ParameterError(f"epsilon must be positive and finite, got {epsilon!r}")
    C = np.asarray(C, dtype=float)
    if C.ndim != 2:
        raise InputError(f"cost matrix must be 2-D, got shape {C.shape}")
    if np.isnan(C).any():
        raise InputError("cost matrix contains NaN")
    if not np.all(np.isfinite(C)):
        raise InputError("cost matrix contains infinite entries")
    log_entries = -C / epsilon
    return GibbsKernel(np.exp(log_entries), log_entries, float(epsilon))


def _kernel_arrays(K) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(K, GibbsKernel):
        return K.entries, K.log_entries
    arr = np.asarray(K, dtype=float)
    if arr.ndim != 2:
        raise InputError(f"kernel must be 2-D, got shape {arr.shape}")
    with np.errstate(divide="ignore"):
        return arr, np.log(arr)


@dataclass(frozen=True)
class ScalingPair:
    """Sinkhorn scalings stored by their logarithms.

    ``alpha``/``beta`` are exponentiated on access and may underflow to zero
    in the small-epsilon regime; use the log fields for arithmetic there.
    """

    log_alpha: np.ndarray
    log_beta: np.ndarray

    @property
    def alpha(self) -> np.ndarray:
        return np.exp(self.log_alpha)

    @property
    def beta(self) -> np.ndarray:
        return np.exp(self.log_beta)


# ---------------------------------------------------------------------------
# Sinkhorn iterations
# ---------------------------------------------------------------------------


def _require_positive(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise InputError(f"{name} must be a 1-D vector")
    if not np.all(np.isfinite(v)) or np.any(v <= 0):
        raise InputError(f"{name} must be strictly positive and finite")
    return v


def _check_dims(shape, a, b):
    if shape != (a.size, b.size):
        raise InputError(f"kernel shape {shape} does not match marginals ({a.size}, {b.size})")


def canonicalize(alpha: np.ndarray, beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rescale so that ``max(beta) == 1`` without changing ``alpha_i * beta_j``."""
    s = beta.max()
    return alpha * s, beta / s


def canonicalize_log(log_alpha: np.ndarray, log_beta: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = log_beta.max()
    return log_alpha + m, log_beta - m


def _plain_ok(v: np.ndarray) -> bool:
    return bool(np.all(np.isfinite(v)) and np.all(v > 0.0))


def _plain_alpha_beta(K, a, b, beta):
    denom = K @ beta
    if not _plain_ok(denom):
        raise UnderflowError("K @ beta has zero or non-finite entries; use log domain")
    alpha = a / denom
    denom = K.T @ alpha
    if not _plain_ok(denom) or not _plain_ok(alpha):
        raise UnderflowError("K.T @ alpha has zero or non-finite entries; use log domain")
    beta_next = b / denom
    if not _plain_ok(beta_next):
        raise UnderflowError("scaling overflowed; use log domain")
    return canonicalize(alpha, beta_next)


def _log_alpha_beta(log_K, log_a, log_b, log_beta):
    log_alpha = log_a - logsumexp(log_K + log_beta[None, :], axis=1)
    log_beta_next = log_b - logsumexp(log_K + log_alpha[:, None], axis=0)
    return canonicalize_log(log_alpha, log_beta_next)


def sinkhorn_step_log(K, a, b, log_beta) -> tuple[np.ndarray, np.ndarray]:
    """One Sinkhorn iteration carried out on logarithms via log-sum-exp.

    Returns ``(log_alpha_next, log_beta_next)`` canonicalized to
    ``max(log_beta_next) == 0``.
    """
    a = as_histogram(a, "a")
    b = as_histogram(b, "b")
    _, log_K = _kernel_arrays(K)
    _check_dims(log_K.shape, a, b)
    log_beta = np.asarray(log_beta, dtype=float)
    if not np.all(np.isfinite(log_beta)):
        raise InputError("log_beta must be finite")
    with np.errstate(divide="ignore"):
        return _log_alpha_beta(log_K, np.log(a), np.log(b), log_beta)


def sinkhorn_step(K, a, b, beta, mode: Mode = "plain") -> tuple[np.ndarray, np.ndarray]:
    """One Sinkhorn iteration ``alpha = a / (K beta)``, ``beta' = b / (K^T alpha)``.

    The returned pair is canonicalized so that ``max(beta') == 1``.

    Parameters
    ----------
    K : GibbsKernel or array_like, shape (N, M)
    a, b : array_like
        Source and target histograms.
    beta : array_like, shape (M,)
        Current column scaling, strictly positive.
    mode : {"plain", "log", "auto"}
        ``"plain"`` raises :class:`UnderflowError` on a zero denominator,
        ``"auto"`` retries in log domain, ``"log"`` always uses log-sum-exp.
        Log results are exponentiated; if that underflows an
        :class:`UnderflowError` is raised and :func:`sinkhorn_step_log`
        must be used directly.
    """
    if mode not in _MODES:
        raise ParameterError(f"mode must be one of {_MODES}, got {mode!r}")
    a = as_histogram(a, "a")
    b = as_histogram(b, "b")
    beta = _require_positive(beta, "beta")
    K_arr, log_K = _kernel_arrays(K)
    _check_dims(K_arr.shape, a, b)
    if mode != "log":
        try:
            return _plain_alpha_beta(K_arr, a, b, beta)
        except UnderflowError:
            if mode == "plain":
                raise
    with np.errstate(divide="ignore"):
        la, lb = _log_alpha_beta(log_K, np.log(a), np.log(b), np.log(beta))
    alpha, beta_next = np.exp(la), np.exp(lb)
    if not (_plain_ok(alpha) and _plain_ok(beta_next)):
        raise UnderflowError("scalings are not representable as plain floats; use sinkhorn_step_log")
    return alpha, beta_next


def coupling_from_scalings(alpha, K, beta) -> np.ndarray:
    """``P = diag(alpha) K diag(beta)``."""
    alpha = _require_positive(alpha, "alpha")
    beta = _require_positive(beta, "beta")
    K_arr, _ = _kernel_arrays(K)
    if K_arr.shape != (alpha.size, beta.size):
        raise InputError(f"kernel shape {K_arr.shape} does not match scalings ({alpha.size}, {beta.size})")
    return alpha[:, None] * K_arr * beta[None, :]


def coupling_from_log_scalings(log_alpha, K, log_beta) -> np.ndarray:
    """``P = diag(alpha) K diag(beta)`` from log scalings, without forming ``alpha`` or ``beta``."""
    _, log_K = _kernel_arrays(K)
    return np.exp(log_alpha[:, None] + log_K + log_beta[None, :])


@dataclass
class SinkhornResult:
    scalings: ScalingPair
    coupling: np.ndarray
    iterations: int
    converged: bool
    marginal_error: float
    """``max(|P 1 - a|_inf, |P^T 1 - b|_inf)``."""
    log_domain: bool
    history: list[np.ndarray] = field(default_factory=list, repr=False)
    """``log_beta`` iterates, starting with the initial value, when requested."""


def sinkhorn_solve(
    K,
    a,
    b,
    tol: float = 1e-9,
    max_iter: int = 10_000,
    beta0=None,
    log_beta0=None,
    mode: Mode = "auto",
    record_history: bool = False,
) -> SinkhornResult:
    """Iterate Sinkhorn until successive ``beta`` are within ``tol`` in Hilbert metric.

    Non-convergence within ``max_iter`` is reported through
    ``result.converged`` rather than raised.  In ``"auto"`` mode the solver
    runs in plain arithmetic unless the kernel underflows, and restarts in
    log domain if a plain iterate breaks down.
    """
    if not tol > 0:
        raise ParameterError(f"tol must be positive, got {tol!r}")
    if max_iter < 1:
        raise ParameterError(f"max_iter must be >= 1, got {max_iter!r}")
    if mode not in _MODES:
        raise ParameterError(f"mode must be one of {_MODES}, got {mode!r}")
    a = as_histogram(a, "a")
    b = as_histogram(b, "b")
    K_arr, log_K = _kernel_arrays(K)
    _check_dims(K_arr.shape, a, b)
    if np.any(a <= 0) or np.any(b <= 0):
        raise InputError("Sinkhorn scaling requires strictly positive marginals")

    if log_beta0 is not None:
        log_beta = np.asarray(log_beta0, dtype=float).copy()
        if log_beta.shape != (b.size,) or not np.all(np.isfinite(log_beta)):
            raise InputError("log_beta0 must be a finite vector of length M")
    elif beta0 is not None:
        log_beta = np.log(_require_positive(beta0, "beta0"))
    else:
        log_beta = np.zeros(b.size)
    log_beta = log_beta - log_beta.max()

    use_log = mode == "log" or (mode == "auto" and bool(np.any(K_arr <= 0)))
    if mode == "plain" and np.any(K_arr <= 0):
        raise UnderflowError("kernel has underflowed entries; use log domain")

    if not use_log:
        try:
            return _solve_plain(K_arr, log_K, a, b, np.exp(log_beta), tol, max_iter, record_history)
        except UnderflowError:
            if mode == "plain":
                raise
    return _solve_log(log_K, a, b, log_beta, tol, max_iter, record_history)


def _marginal_error(P, a, b) -> float:
    return float(max(np.abs(P.sum(axis=1) - a).max(), np.abs(P.sum(axis=0) - b).max()))


def _solve_plain(K, log_K, a, b, beta, tol, max_iter, record_history):
    history = [np.log(beta)] if record_history else []
    converged = False
    alpha = None
    it = 0
    for it in range(1, max_iter + 1):
        alpha, beta_next = _plain_alpha_beta(K, a, b, beta)
        if record_history:
            history.append(np.log(beta_next))
        dist = hilbert_metric(beta_next, beta)
        beta = beta_next
        if dist < tol:
            converged = True
            break
    P = coupling_from_scalings(alpha, K, beta)
    pair = ScalingPair(np.log(alpha), np.log(beta))
    return SinkhornResult(pair, P, it, converged, _marginal_error(P, a, b), False, history)


def _solve_log(log_K, a, b, log_beta, tol, max_iter, record_history):
    log_a, log_b = np.log(a), np.log(b)
    history = [log_beta.copy()] if record_history else []
    converged = False
    log_alpha = None
    it = 0
    for it in range(1, max_iter + 1):
        log_alpha, lb_next = _log_alpha_beta(log_K, log_a, log_b, log_beta)
        if record_history:
            history.append(lb_next)
        dist = hilbert_metric_log(lb_next, log_beta)
        log_beta = lb_next
        if dist < tol:
            converged = True
            break
    # beta was just fitted to alpha, so P is a column softmax of diag(alpha) K scaled by b
    y = log_alpha[:, None] + log_K
    with np.errstate(under="ignore"):
        P = np.exp(log_b[None, :] + (y - logsumexp(y, axis=0, keepdims=True)))
    pair = ScalingPair(log_alpha, log_beta)
    return SinkhornResult(pair, P, it, converged, _marginal_error(P, a, b), True, history)


def newton_balance(K, a, b, log_beta0=None, tol: float = 1e-12, max_iter: int = 200) -> SinkhornResult:
    """Square entropic scaling by damped Newton steps on ``log(beta)``.

    Sinkhorn slows to a crawl on kernels close to a permutation pattern,
    since its contraction factor approaches one.  Here ``alpha`` is eliminated
    (rows are normalized exactly) and the column equations are solved for
    ``g = log(beta)``.  Rows are paired with columns by a maximum-weight
    matching of the coupling, and each column residual is written as the
    imbalance between off-pairing inflow and outflow.  The pairing entries
    cancel symbolically, so residuals and the Laplacian Jacobian
    ``diag(c) - P' diag(a)^-1 P`` keep full relative precision even when
    the off-pairing mass is far below machine epsilon.

    Far from the solution, entries of ``P`` underflow and the Laplacian
    splits into blocks, so steps solve ``(L + mu I) s = -G`` with ``mu``
    raised until the step increases the concave semi-dual
    ``b'g - sum_i a_i log sum_j K_ij exp(g_j)``.  Once changes of that
    objective drop below rounding, the residual norm decides instead.

    Stops when an undamped Newton step moves ``beta`` by less than ``tol``
    in Hilbert metric, or when the column residuals drop to the rounding
    floor of the fluxes they are built from (then ``log K`` itself is the
    limiting error).
    """
    a = as_histogram(a, "a")
    b = as_histogram(b, "b")
    _, log_K = _kernel_arrays(K)
    _check_dims(log_K.shape, a, b)
    n = a.size
    if log_K.shape != (n, n):
        raise InputError("Newton balancing needs a square kernel")
    if np.any(a <= 0) or np.any(b <= 0):
        raise InputError("Sinkhorn scaling requires strictly positive marginals")
    log_a = np.log(a)
    eps = np.finfo(float).eps
    g = np.zeros(n) if log_beta0 is None else np.asarray(log_beta0, dtype=float).copy()
    rows = np.arange(n)

    def evaluate(g):
        z = log_K + g[None, :]
        lse = logsumexp(z, axis=1)
        log_P = log_a[:, None] + (z - lse[:, None])
        objective = float(b @ g - a @ lse)
        # rounding level of the objective, used to tell real ascent from noise
        noise = 64 * eps * float(np.abs(b * g).sum() + (a * np.abs(lse)).sum())
        # exp(log P) carries a relative error of about eps times the logs summed into it
        magnitude = 2.0 + np.abs(log_K) + np.abs(g)[None, :] + np.abs(lse)[:, None]
        return log_a - lse, log_P, np.exp(log_P), objective, noise, magnitude

    def residual(state):
        log_P, P, magnitude = state[1], state[2], state[5]
        pair = linear_sum_assignment(-log_P)[1]
        off = P.copy()
        off[rows, pair] = 0.0
        gap = a - b[pair]
        G = np.empty(n)
        G[pair] = off.sum(axis=0)[pair] - off.sum(axis=1) + gap
        # rounding floor of G: a few ulps of every flux it is assembled from
        floor = 16 * eps * float(2.0 * np.sum(off * magnitude) + np.sum(np.abs(gap)))
        return G, floor

    def solve(L, rhs, mu):
        if mu == 0.0:
            step = np.zeros(n)
            try:
                step[:-1] = np.linalg.solve(L[:-1, :-1], rhs[:-1])
            except np.linalg.LinAlgError:
                return None
            return step
        step = np.linalg.solve(L + mu * np.eye(n), rhs)
        return step - step.mean()

    state = evaluate(g)
    G, floor = residual(state)
    history = [g.copy()]
    converged = False
    mu = 0.0
    last_newton = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        if not np.any(G):
            # exactly balanced, e.g. all off-pairing mass underflowed to zero
            converged = True
            break
        at_floor = np.abs(G).sum() <= floor
        P = state[2]
        M = P.T @ (P / a[:, None])
        np.fill_diagonal(M, 0.0)
        L = -M
        L[rows, rows] = M.sum(axis=1)
        scale = float(np.abs(L).max())
        if not scale > 0:
            mu = max(mu, 1.0)
            scale = 1.0
        L, rhs = L / scale, -G / scale
        merit, objective, noise = float(np.abs(G).sum()), state[3], state[4]
        accepted = None
        for _ in range(40):
            step = solve(L, rhs, mu)
            if step is not None and np.all(np.isfinite(step)):
                if mu == 0.0 and float(np.ptp(step)) < tol:
                    # the full Newton step is already below tolerance: accept and stop
                    accepted = (step, evaluate(g + step), True, False)
                    break
                if mu == 0.0 and at_floor and float(np.ptp(step)) > 0.5 * last_newton:
                    # residual at rounding level and Newton no longer converging:
                    # this is as far as the data determine beta
                    break
                ascent = float(-G @ step)
                t = 1.0
                for _ in range(30):
                    trial = evaluate(g + t * step)
                    gain = trial[3] - objective
                    if gain > 1e-4 * t * ascent and gain > noise:
                        accepted = (t * step, trial, False, mu == 0.0 and t == 1.0)
                        break
                    if abs(gain) <= noise + trial[4]:
                        # objective flat to rounding: judge by the residual instead
                        if np.abs(residual(trial)[0]).sum() < merit:
                            accepted = (t * step, trial, False, mu == 0.0 and t == 1.0)
                            break
                    t /= 2.0
                if accepted is not None:
                    break
            mu = max(10.0 * mu, 1e-8)
        if accepted is None:
            converged = bool(at_floor)
            break
        step, state, done, full_newton = accepted
        last_newton = float(np.ptp(step)) if full_newton else np.inf
        g = g + step
        history.append(g.copy())
        G, floor = residual(state)
        mu = mu / 100.0 if mu > 1e-8 else 0.0
        if done:
            converged = True
            break
    log_alpha, g = canonicalize_log(state[0], g)
    P = state[2]
    return SinkhornResult(ScalingPair(log_alpha, g), P, it, converged, _marginal_error(P, a, b), True, history)


# ---------------------------------------------------------------------------
# Hilbert projective metric
# ---------------------------------------------------------------------------


def hilbert_metric_log(log_beta, log_beta_prime) -> float:
    """Hilbert metric between two positive vectors given by their logarithms."""
    r = np.asarray(log_beta, dtype=float) - np.asarray(log_beta_prime, dtype=float)
    return float(r.max() - r.min())


def hilbert_metric(beta, beta_prime) -> float:
    """``d_H(b, b') = log max_{i,j} b_i b'_j / (b_j b'_i)``.

    The max over pairs factors as ``max_i(b_i/b'_i) / min_j(b_j/b'_j)``.

    >>> round(hilbert_metric([1.0, 1.0], [2.0, 1.0]), 12) == round(np.log(2), 12)
    True
    """
    beta = _require_positive(beta, "beta")
    beta_prime = _require_positive(beta_prime, "beta_prime")
    if beta.shape != beta_prime.shape:
        raise InputError("Hilbert metric needs vectors of equal length")
    return hilbert_metric_log(np.log(beta), np.log(beta_prime))


def contraction_coefficient(K) -> tuple[float, float]:
    """Birkhoff contraction coefficient ``lambda(K)`` and cross-ratio bound ``eta(K)``.

    ``eta = max_{i,j,k,l} K_ik K_jl / (K_jk K_il)`` is evaluated exactly in
    log space: for each column pair ``(k, l)`` the max over row pairs is
    ``max_i D_i - min_j D_j`` with ``D = log K[:, k] - log K[:, l]``.
    ``lambda = (sqrt(eta) - 1) / (sqrt(eta) + 1) = tanh(log(eta) / 4)``.

    Returns ``(lambda, eta)``; ``eta`` is ``inf`` if it overflows.
    """
    _, log_K = _kernel_arrays(K)
    if not np.all(np.isfinite(log_K)):
        raise InputError("contraction coefficient requires a strictly positive kernel")
    D = log_K[:, :, None] - log_K[:, None, :]
    log_eta = float((D.max(axis=0) - D.min(axis=0)).max())
    with np.errstate(over="ignore"):
        eta = float(np.exp(log_eta))
    return float(np.tanh(log_eta / 4.0)), eta


# ---------------------------------------------------------------------------
# Exact assignment
# ---------------------------------------------------------------------------


def _kantorovich_constraints(n: int) -> sp.csr_matrix:
    eye = sp.identity(n, format="csr")
    ones = np.ones((1, n))
    return sp.vstack([sp.kron(eye, ones), sp.kron(ones, eye)]).tocsr()


def exact_lp_assignment(C, lexicographic: bool = True) -> tuple[np.ndarray, float]:
    """Minimize ``(1/N) sum_i C[i, sigma(i)]`` over permutations.

    Solves the Kantorovich linear program with a dual simplex method; its
    optimal vertex is a permutation matrix.  With ``lexicographic=True`` the
    lowest-index permutation among all optimal ones is returned, found by
    walking the tight edges of the optimal dual solution.

    Returns
    -------
    sigma : ndarray of int, shape (N,)
        ``sigma[i]`` is the column assigned to row ``i``.
    cost : float
    """
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise InputError(f"assignment needs a square cost matrix, got shape {C.shape}")
    if not np.all(np.isfinite(C)):
        raise InputError("cost matrix must be finite")
    n = C.shape[0]
    if n == 1:
        return np.zeros(1, dtype=int), float(C[0, 0])

    res = linprog(
        C.ravel(),
        A_eq=_kantorovich_constraints(n),
        b_eq=np.ones(2 * n),
        bounds=(0, None),
        method="highs-ds",
        # presolve only slows this LP down: the constraint matrix has no redundancy to strip
        options={"presolve": False},
    )
    if res.status != 0:
        raise RuntimeError(f"assignment LP failed: {res.message}")
    X = res.x.reshape(n, n)
    sigma = np.argmax(X, axis=1)
    if len(set(sigma.tolist())) != n:
        raise RuntimeError("assignment LP returned a non-integral vertex")

    if lexicographic:
        duals = res.eqlin.marginals
        reduced = C - duals[:n, None] - duals[None, n:]
        scale = max(1.0, float(np.abs(C).max()))
        sigma = _lexicographic_tight_matching(np.abs(reduced) <= 1e-9 * scale, sigma)
    cost = float(np.sum(C[np.arange(n), sigma])) / n
    return sigma, cost


def _lexicographic_tight_matching(tight: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Lowest-index perfect matching inside the tight-edge graph.

    Every perfect matching of tight edges is optimal (complementary
    slackness).  Rows are fixed in order to their smallest feasible column;
    feasibility is checked by searching for an alternating path that frees
    the current partner among the not-yet-fixed rows.
    """
    n = sigma.size
    tight = tight.copy()
    tight[np.arange(n), sigma] = True
    row_of = np.empty(n, dtype=int)
    row_of[sigma] = np.arange(n)
    sigma = sigma.copy()

    for i in range(n):
        for j in np.flatnonzero(tight[i]):
            if j >= sigma[i]:
                break
            owner = row_of[j]
            if owner < i:
                continue
            old = sigma[i]
            snapshot = (sigma.copy(), row_of.copy())
            seen = np.zeros(n, dtype=bool)
            seen[j] = True
            # owner gives up j and must reach a free column, i.e. i's old one
            sigma[i] = j
            row_of[j] = i
            row_of[old] = -1
            if _take_column(owner, i, tight, sigma, row_of, seen):
                break
            sigma[:], row_of[:] = snapshot
    return sigma


def _take_column(row, fixed_upto, tight, sigma, row_of, seen) -> bool:
    for col in np.flatnonzero(tight[row]):
        if seen[col]:
            continue
        seen[col] = True
        owner = row_of[col]
        if owner == -1 or (owner > fixed_upto and _take_column(owner, fixed_upto, tight, sigma, row_of, seen)):
            sigma[row] = col
            row_of[col] = row
            return True
    return False
