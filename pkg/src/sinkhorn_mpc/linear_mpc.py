"""Closed-form finite-horizon minimum-energy MPC for discrete-time linear plants.

For ``x(k+1) = A x(k) + B u(k)`` with invertible ``B``, the cost of steering
``x`` to a target ``x_hat`` in ``T`` steps while paying
``sum_k |u(k) - u_bar|^2`` (``u_bar`` the input holding ``x_hat``) is::

    G    = sum_{k<T} A^k B B' (A')^k        finite-horizon Gramian
    W    = (A^T)' G^-1 A^T                   cost weight, cost = |x - x_hat|_W^2
    F    = B' (A')^(T-1) G^-1 A^T            feedback gain
    u    = -F (x - x_hat) + B^-1 (x_hat - A x_hat)
    A_cl = A - B F                           x+ = A_cl x + (I - A_cl) x_hat

where ``'`` is transposition and ``A^T`` the ``T``-th matrix power.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import linalg

from .errors import InputError, NumericalBreakdownError, ParameterError, UncontrollableError

# Gramians with a worse condition number are treated as singular.
MAX_GRAMIAN_CONDITION = 1e12


def _as_matrix(value, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise InputError(f"{name} must be a scalar or 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} must be finite")
    return arr


@dataclass(frozen=True, eq=False)
class LinearPlant:
    """Discrete-time plant ``x(k+1) = A x(k) + B u(k)`` with square invertible ``B``."""

    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        A = _as_matrix(self.A, "A")
        B = _as_matrix(self.B, "B")
        if A.shape[0] != A.shape[1]:
            raise InputError(f"A must be square, got shape {A.shape}")
        if B.shape != A.shape:
            raise InputError(f"B must be square with the state dimension, got shape {B.shape}")
        if not np.isfinite(np.linalg.cond(B)) or np.linalg.matrix_rank(B) < B.shape[0]:
            raise InputError("B must be invertible")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    def __eq__(self, other):
        if not isinstance(other, LinearPlant):
            return NotImplemented
        return np.array_equal(self.A, other.A) and np.array_equal(self.B, other.B)

    def __hash__(self):
        return hash((self.A.tobytes(), self.B.tobytes()))


def matrix_powers(A: np.ndarray, horizon: int) -> list[np.ndarray]:
    """``[A^0, A^1, ..., A^horizon]`` by repeated multiplication."""
    powers = [np.eye(A.shape[0])]
    for _ in range(horizon):
        powers.append(powers[-1] @ A)
    return powers


def _check_horizon(horizon) -> int:
    if int(horizon) != horizon or horizon < 1:
        raise ParameterError(f"horizon must be a positive integer, got {horizon!r}")
    return int(horizon)


def gramian(plant: LinearPlant, horizon: int) -> np.ndarray:
    """Finite-horizon controllability Gramian ``sum_{k<T} A^k B B^T (A^T)^k``."""
    horizon = _check_horizon(horizon)
    powers = matrix_powers(plant.A, horizon - 1)
    BBt = plant.B @ plant.B.T
    G = sum(Ak @ BBt @ Ak.T for Ak in powers)
    return 0.5 * (G + G.T)


@dataclass(frozen=True, eq=False)
class MpcGains:
    """Precomputed quantities of the energy-optimal MPC law for one plant."""

    plant: LinearPlant
    horizon: int
    gramian: np.ndarray
    cost_weight: np.ndarray
    closed_loop: np.ndarray
    feedback: np.ndarray
    B_inv: np.ndarray
    gramian_condition: float

    @property
    def n(self) -> int:
        return self.plant.n

    @cached_property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.closed_loop))))

    @cached_property
    def holding_gain(self) -> np.ndarray:
        """Maps a target ``x_hat`` to ``B^-1 (x_hat - A x_hat)``."""
        return self.B_inv @ (np.eye(self.n) - self.plant.A)


def mpc_gains(plant: LinearPlant, horizon: int) -> MpcGains:
    """Build the closed-form MPC law for ``plant`` over ``horizon`` steps.

    Raises
    ------
    UncontrollableError
        If the Gramian is not numerically positive definite.
    NumericalBreakdownError
        If the resulting closed loop is not Schur stable, which theory rules
        out for invertible ``B``.
    """
    horizon = _check_horizon(horizon)
    G = gramian(plant, horizon)
    cond = float(np.linalg.cond(G))
    try:
        if not cond < MAX_GRAMIAN_CONDITION:
            raise linalg.LinAlgError("ill-conditioned")
        factor = linalg.cho_factor(G)
    except linalg.LinAlgError as exc:
        raise UncontrollableError(
            f"Gramian over horizon {horizon} is singular or ill-conditioned "
            f"(cond={cond:.3g}); try a shorter horizon"
        ) from exc

    powers = matrix_powers(plant.A, horizon)
    A_T = powers[horizon]
    Ginv_AT = linalg.cho_solve(factor, A_T)
    W = A_T.T @ Ginv_AT
    W = 0.5 * (W + W.T)
    F = plant.B.T @ powers[horizon - 1].T @ Ginv_AT
    A_cl = plant.A - plant.B @ F
    gains = MpcGains(
        plant=plant,
        horizon=horizon,
        gramian=G,
        cost_weight=W,
        closed_loop=A_cl,
        feedback=F,
        B_inv=np.linalg.inv(plant.B),
        gramian_condition=cond,
    )
    if not gains.spectral_radius < 1.0:
        raise NumericalBreakdownError(
            f"closed loop has spectral radius {gains.spectral_radius:.6g} >= 1 "
            f"(Gramian cond={cond:.3g}, horizon={horizon})"
        )
    return gains


def _vec(x, n: int, name: str) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(-1)
    if v.size != n:
        raise InputError(f"{name} must have length {n}, got {v.size}")
    return v


def mpc_input(gains: MpcGains, x, target) -> np.ndarray:
    """First input of the minimum-energy sequence steering ``x`` to ``target``."""
    x = _vec(x, gains.n, "x")
    target = _vec(target, gains.n, "target")
    return -gains.feedback @ (x - target) + gains.holding_gain @ target


def finite_horizon_cost(gains: MpcGains, x, target) -> float:
    """Minimal energy ``(x - target)^T W (x - target)`` over the horizon."""
    d = _vec(x, gains.n, "x") - _vec(target, gains.n, "target")
    return float(d @ gains.cost_weight @ d)


def brute_force_horizon(plant: LinearPlant, horizon: int, x, target) -> tuple[np.ndarray, float]:
    """Minimum-energy input sequence from the stacked reachability equations.

    Works in shifted coordinates ``e = x - target``, ``v = u - u_bar`` where
    ``e(k+1) = A e(k) + B v(k)``, and returns the least-norm ``v`` with
    ``e(T) = 0`` via an SVD-based solve, independent of the Gramian formula.

    Returns
    -------
    inputs : ndarray, shape (horizon, m)
        The unshifted inputs ``u(0..T-1)``.
    energy : float
        ``sum_k |u(k) - u_bar|^2``.
    """
    horizon = _check_horizon(horizon)
    n = plant.n
    x = _vec(x, n, "x")
    target = _vec(target, n, "target")
    powers = matrix_powers(plant.A, horizon)
    # e(T) = A^T e0 + sum_k A^(T-1-k) B v_k
    R = np.hstack([powers[horizon - 1 - k] @ plant.B for k in range(horizon)])
    if np.linalg.matrix_rank(R) < n:
        raise UncontrollableError(f"reachability matrix over horizon {horizon} is rank deficient")
    rhs = -powers[horizon] @ (x - target)
    v, *_ = np.linalg.lstsq(R, rhs, rcond=None)
    v = v.reshape(horizon, plant.m)
    u_bar = np.linalg.solve(plant.B, target - plant.A @ target)
    return v + u_bar, float(np.sum(v * v))


def rollout(plant: LinearPlant, x0, inputs) -> np.ndarray:
    """States ``x(0..T)`` produced by applying ``inputs`` from ``x0``."""
    xs = [np.asarray(x0, dtype=float).reshape(-1)]
    for u in np.asarray(inputs, dtype=float):
        xs.append(plant.A @ xs[-1] + plant.B @ u)
    return np.array(xs)
