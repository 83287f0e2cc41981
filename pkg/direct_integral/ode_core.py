"""Separable ODE models x'(t) = g(x(t)) h(nu) and a reference solver."""
from __future__ import annotations

from dataclasses import dataclass
import logging
from typing import Callable

import numpy as np

from .const import RK4_SUBSTEPS

_LOGGER = logging.getLogger(__name__)

MatrixField = Callable[[np.ndarray], np.ndarray]
Link = Callable[[np.ndarray], np.ndarray]


class EstimationError(Exception):
    """Base exception for estimation failures."""


class InvalidArgumentError(EstimationError, ValueError):
    """Exception for invalid arguments."""


class ContractViolationError(EstimationError, ValueError):
    """Exception for dimension mismatches."""

    def __init__(self, name: str, expected: object, actual: object) -> None:
        """Initialize the error."""
        super().__init__(f"{name} has dimension {actual}, expected {expected}")
        self.dimension = name
        self.expected = expected
        self.actual = actual


class SolverDivergenceError(EstimationError):
    """Exception for a non-finite state in the reference solver."""

    def __init__(self, time: float) -> None:
        """Initialize the error."""
        super().__init__(f"Solver diverged at t={time:g}")
        self.time = time


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class OdeModel:
    """A separable ODE system with natural parameter theta = h(nu)."""

    name: str
    d: int
    p: int
    q: int
    g_eval: MatrixField
    h_eval: Link
    h_inverse: Link | None = None
    identity_link: bool = False
    theta_names: tuple[str, ...] = ()
    nu_names: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        """Validate dimensions and fill in default parameter names."""
        if min(self.d, self.p, self.q) < 1:
            raise InvalidArgumentError(
                f"Model {self.name}: dimensions must be positive, got "
                f"d={self.d}, p={self.p}, q={self.q}"
            )
        if self.q > self.p:
            raise InvalidArgumentError(
                f"Model {self.name}: q={self.q} exceeds p={self.p}"
            )
        if not self.theta_names:
            object.__setattr__(
                self, "theta_names", tuple(f"theta{i + 1}" for i in range(self.p))
            )
        if not self.nu_names:
            names = self.theta_names if self.identity_link else tuple(
                f"nu{i + 1}" for i in range(self.q)
            )
            object.__setattr__(self, "nu_names", names)
        if len(self.theta_names) != self.p:
            raise ContractViolationError("theta_names", self.p, len(self.theta_names))
        if len(self.nu_names) != self.q:
            raise ContractViolationError("nu_names", self.q, len(self.nu_names))

    def g(self, state: np.ndarray) -> np.ndarray:
        """Return the d x p matrix g(state)."""
        state = np.asarray(state, dtype=float)
        if state.shape != (self.d,):
            raise ContractViolationError("state", self.d, state.shape)
        value = np.asarray(self.g_eval(state), dtype=float)
        if value.shape != (self.d, self.p):
            raise ContractViolationError("g(state)", (self.d, self.p), value.shape)
        return value

    def g_path(self, values: np.ndarray) -> np.ndarray:
        """Return g evaluated along an m x d path as an m x d x p array."""
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[1] != self.d:
            raise ContractViolationError("path", f"(m, {self.d})", values.shape)
        return np.stack([self.g(state) for state in values])

    def h(self, nu: np.ndarray) -> np.ndarray:
        """Map the parameter of interest to the natural parameter."""
        nu = np.asarray(nu, dtype=float)
        if nu.shape != (self.q,):
            raise ContractViolationError("nu", self.q, nu.shape)
        theta = np.asarray(self.h_eval(nu), dtype=float)
        if theta.shape != (self.p,):
            raise ContractViolationError("h(nu)", self.p, theta.shape)
        return theta

    def h_inv(self, theta: np.ndarray) -> np.ndarray:
        """Map a natural parameter back to the parameter of interest."""
        if self.h_inverse is None:
            raise InvalidArgumentError(f"Model {self.name} has no inverse link")
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.p,):
            raise ContractViolationError("theta", self.p, theta.shape)
        return np.asarray(self.h_inverse(theta), dtype=float)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Values of a d-dimensional path on a time grid within [0, T]."""

    times: np.ndarray
    values: np.ndarray
    horizon: float | None = None

    def __post_init__(self) -> None:
        """Validate and freeze the arrays."""
        times = _frozen(self.times)
        values = _frozen(self.values)
        if values.ndim == 1:
            values = _frozen(values[:, None])
        if times.ndim != 1 or times.size == 0:
            raise InvalidArgumentError("Trajectory times must be a non-empty vector")
        if values.ndim != 2 or values.shape[0] != times.size:
            raise ContractViolationError("values", f"({times.size}, d)", values.shape)
        if np.any(np.diff(times) <= 0):
            raise InvalidArgumentError("Trajectory times must be strictly increasing")
        if not (np.all(np.isfinite(times)) and np.all(np.isfinite(values))):
            raise InvalidArgumentError("Trajectory entries must be finite")
        horizon = float(times[-1]) if self.horizon is None else float(self.horizon)
        if times[0] < 0 or times[-1] > horizon:
            raise InvalidArgumentError(
                f"Trajectory times must lie within [0, {horizon:g}]"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "horizon", horizon)

    @property
    def d(self) -> int:
        """Return the state dimension."""
        return self.values.shape[1]


def eval_rhs(model: OdeModel, state: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Evaluate the right-hand side g(state) theta."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.p,):
        raise ContractViolationError("theta", model.p, theta.shape)
    return model.g(state) @ theta


def _rk4_step(
    rhs: Callable[[np.ndarray], np.ndarray], state: np.ndarray, step: float
) -> np.ndarray:
    k1 = rhs(state)
    k2 = rhs(state + 0.5 * step * k1)
    k3 = rhs(state + 0.5 * step * k2)
    k4 = rhs(state + step * k3)
    return state + step * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0


def solve_ode(
    model: OdeModel,
    theta: np.ndarray,
    xi: np.ndarray,
    grid: np.ndarray,
    substeps: int = RK4_SUBSTEPS,
) -> Trajectory:
    """Integrate the model from xi with classical fixed-step RK4.

    Every grid interval is split into ``substeps`` equal internal steps, so
    the result is reproducible bit for bit on any platform.

    Raises:
        SolverDivergenceError: if the state stops being finite.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0 or grid[0] != 0.0:
        raise InvalidArgumentError("Solver grid must be a vector starting at 0")
    spacing = np.diff(grid)
    if np.any(spacing <= 0):
        raise InvalidArgumentError("Solver grid step sizes must be positive")
    if substeps < 1:
        raise InvalidArgumentError(f"substeps must be positive, got {substeps}")
    theta = np.asarray(theta, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if theta.shape != (model.p,):
        raise ContractViolationError("theta", model.p, theta.shape)
    if xi.shape != (model.d,):
        raise ContractViolationError("xi", model.d, xi.shape)

    def rhs(state: np.ndarray) -> np.ndarray:
        return model.g(state) @ theta

    values = np.empty((grid.size, model.d))
    values[0] = xi
    state = xi.copy()
    with np.errstate(over="ignore", invalid="ignore"):
        for k, (start, width) in enumerate(zip(grid[:-1], spacing)):
            step = width / substeps
            for j in range(substeps):
                state = _rk4_step(rhs, state, step)
                if not np.all(np.isfinite(state)):
                    raise SolverDivergenceError(start + (j + 1) * step)
            values[k + 1] = state

    _LOGGER.debug(
        "Solved %s on %d grid points with %d substeps", model.name, grid.size, substeps
    )
    return Trajectory(grid, values, horizon=float(grid[-1]))


def _fhn_link(nu: np.ndarray) -> np.ndarray:
    alpha, beta, gamma = nu
    return np.array([gamma, 1.0 / gamma, alpha / gamma, beta / gamma])


def _fhn_inverse(theta: np.ndarray) -> np.ndarray:
    return np.array([theta[0] * theta[2], theta[0] * theta[3], theta[0]])


def _identity(vector: np.ndarray) -> np.ndarray:
    return np.array(vector, dtype=float)


def builtin_fitzhugh_nagumo() -> OdeModel:
    """Return the FitzHugh-Nagumo system with cubic term x1^3."""

    def g_eval(x: np.ndarray) -> np.ndarray:
        x1, x2 = x
        return np.array(
            [[x1 - x1**3 + x2, 0.0, 0.0, 0.0], [0.0, -x1, 1.0, -x2]]
        )

    return OdeModel(
        name="fitzhugh_nagumo",
        d=2,
        p=4,
        q=3,
        g_eval=g_eval,
        h_eval=_fhn_link,
        h_inverse=_fhn_inverse,
        nu_names=("alpha", "beta", "gamma"),
    )


def builtin_fitzhugh_nagumo_ramsay() -> OdeModel:
    """Return the FitzHugh-Nagumo variant with cubic term x1^3 / 3."""

    def g_eval(x: np.ndarray) -> np.ndarray:
        x1, x2 = x
        return np.array(
            [[x1 - x1**3 / 3.0 + x2, 0.0, 0.0, 0.0], [0.0, -x1, 1.0, -x2]]
        )

    return OdeModel(
        name="fitzhugh_nagumo_ramsay",
        d=2,
        p=4,
        q=3,
        g_eval=g_eval,
        h_eval=_fhn_link,
        h_inverse=_fhn_inverse,
        nu_names=("a", "b", "c"),
    )


def builtin_lotka_volterra() -> OdeModel:
    """Return the Lotka-Volterra predator-prey system."""

    def g_eval(x: np.ndarray) -> np.ndarray:
        x1, x2 = x
        return np.array(
            [[x1, -x1 * x2, 0.0, 0.0], [0.0, 0.0, -x2, x1 * x2]]
        )

    return OdeModel(
        name="lotka_volterra",
        d=2,
        p=4,
        q=4,
        g_eval=g_eval,
        h_eval=_identity,
        h_inverse=_identity,
        identity_link=True,
    )


def builtin_exponential() -> OdeModel:
    """Return the scalar growth model x' = theta x."""
    return OdeModel(
        name="exponential",
        d=1,
        p=1,
        q=1,
        g_eval=lambda x: np.array([[x[0]]]),
        h_eval=_identity,
        h_inverse=_identity,
        identity_link=True,
        theta_names=("rate",),
    )


def builtin_duplicated_column() -> OdeModel:
    """Return x' = theta1 x + theta2 x, whose natural parameter is not identifiable."""
    return OdeModel(
        name="duplicated_column",
        d=1,
        p=2,
        q=2,
        g_eval=lambda x: np.array([[x[0], x[0]]]),
        h_eval=_identity,
        h_inverse=_identity,
        identity_link=True,
    )


BUILTIN_MODELS: dict[str, Callable[[], OdeModel]] = {
    "fitzhugh_nagumo": builtin_fitzhugh_nagumo,
    "fitzhugh_nagumo_ramsay": builtin_fitzhugh_nagumo_ramsay,
    "lotka_volterra": builtin_lotka_volterra,
    "exponential": builtin_exponential,
    "duplicated_column": builtin_duplicated_column,
}


def first_integral_lotka_volterra(theta: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Return the conserved quantity of the Lotka-Volterra flow along a path."""
    theta1, theta2, theta3, theta4 = np.asarray(theta, dtype=float)
    x1 = values[:, 0]
    x2 = values[:, 1]
    return theta4 * x1 - theta3 * np.log(x1) + theta2 * x2 - theta1 * np.log(x2)
