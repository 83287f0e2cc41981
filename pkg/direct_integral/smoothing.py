"""Nonparametric reconstruction of x(t) from noisy observations.

Two estimators are provided: the local polynomial smoother for one
observation per time point and the step function estimator for repeated
measures. Both are linear in the data.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import logging
from math import factorial
from typing import Callable

import numpy as np

from .const import MAX_POLY_ORDER, SINGULAR_RCOND
from .ode_core import (
    ContractViolationError,
    EstimationError,
    InvalidArgumentError,
    Trajectory,
    _frozen,
)

_LOGGER = logging.getLogger(__name__)

# Evaluation points handled per batch by the local polynomial solver.
_CHUNK = 256

# "normalized": b is a fraction of [0, T]; "time": b is in raw time units.
BANDWIDTH_UNITS = ("normalized", "time")


class SingularDesignError(EstimationError):
    """Exception for a numerically singular local design matrix."""

    def __init__(self, time: float, points: int) -> None:
        """Initialize the error."""
        super().__init__(
            f"Local design matrix is singular at t={time:g} "
            f"({points} observations in window)"
        )
        self.time = time
        self.points = points


def _check_values(values: np.ndarray, rows: int) -> np.ndarray:
    values = np.array(values, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.ndim != 2 or values.shape[0] != rows:
        raise ContractViolationError("values", f"({rows}, d)", values.shape)
    if not np.all(np.isfinite(values)):
        raise InvalidArgumentError("Observed values must be finite")
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class Observations:
    """One noisy d-vector per observation time."""

    times: np.ndarray
    values: np.ndarray
    horizon: float | None = None

    def __post_init__(self) -> None:
        """Validate and freeze the arrays."""
        times = _frozen(self.times)
        if times.ndim != 1 or times.size == 0:
            raise InvalidArgumentError("Observation times must be a non-empty vector")
        if np.any(np.diff(times) < 0):
            raise InvalidArgumentError("Observation times must be non-decreasing")
        horizon = float(times[-1]) if self.horizon is None else float(self.horizon)
        if times[0] < 0 or times[-1] > horizon or horizon <= 0:
            raise InvalidArgumentError(
                f"Observation times must lie within [0, {horizon:g}]"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", _check_values(self.values, times.size))
        object.__setattr__(self, "horizon", horizon)

    @property
    def n(self) -> int:
        """Return the number of observations."""
        return self.times.size

    @property
    def d(self) -> int:
        """Return the state dimension."""
        return self.values.shape[1]

    @property
    def flat_times(self) -> np.ndarray:
        """Return the time of every observed row."""
        return self.times

    @property
    def flat_values(self) -> np.ndarray:
        """Return every observed row as an n x d matrix."""
        return self.values

    def with_flat_values(self, values: np.ndarray) -> Observations:
        """Return a copy carrying new values in the same layout."""
        return Observations(self.times, values, self.horizon)


@dataclass(frozen=True, eq=False)
class RepeatedObservations:
    """J_i replicate d-vectors at each of I observation times."""

    times: np.ndarray
    replicates: tuple[np.ndarray, ...]
    horizon: float | None = None
    counts: np.ndarray = field(init=False, repr=False)
    means: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        """Validate the design and precompute replicate means."""
        times = _frozen(self.times)
        if times.ndim != 1 or times.size == 0:
            raise InvalidArgumentError("Observation times must be a non-empty vector")
        if np.any(np.diff(times) <= 0):
            raise InvalidArgumentError("Observation times must be strictly increasing")
        if len(self.replicates) != times.size:
            raise ContractViolationError("replicates", times.size, len(self.replicates))
        horizon = float(times[-1]) if self.horizon is None else float(self.horizon)
        if times[0] <= 0 or times[-1] > horizon:
            raise InvalidArgumentError(
                f"Repeated-measures times must lie within (0, {horizon:g}]"
            )
        replicates = []
        for index, block in enumerate(self.replicates):
            block = np.array(block, dtype=float)
            if block.ndim == 1:
                block = block[:, None]
            if block.size == 0:
                raise InvalidArgumentError(
                    f"Empty replicate set at t={times[index]:g}"
                )
            replicates.append(_check_values(block, block.shape[0]))
        dims = {block.shape[1] for block in replicates}
        if len(dims) != 1:
            raise ContractViolationError("replicate columns", "a common d", sorted(dims))
        counts = np.array([block.shape[0] for block in replicates])
        means = np.stack([block.mean(axis=0) for block in replicates])
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "replicates", tuple(replicates))
        object.__setattr__(self, "horizon", horizon)
        object.__setattr__(self, "counts", _frozen(counts).astype(int))
        object.__setattr__(self, "means", _frozen(means))

    @classmethod
    def uniform(
        cls, horizon: float, replicates: list[np.ndarray] | tuple[np.ndarray, ...]
    ) -> RepeatedObservations:
        """Build the design t_i = i T / I for the given replicate blocks."""
        count = len(replicates)
        times = horizon * np.arange(1, count + 1) / count
        return cls(times, tuple(replicates), horizon)

    @property
    def n(self) -> int:
        """Return the total number of observations."""
        return int(self.counts.sum())

    @property
    def d(self) -> int:
        """Return the state dimension."""
        return self.means.shape[1]

    @property
    def flat_times(self) -> np.ndarray:
        """Return the time of every observed row."""
        return np.repeat(self.times, self.counts)

    @property
    def flat_values(self) -> np.ndarray:
        """Return every replicate row stacked into an n x d matrix."""
        return np.concatenate(self.replicates)

    def with_flat_values(self, values: np.ndarray) -> RepeatedObservations:
        """Return a copy carrying new values in the same layout."""
        values = np.asarray(values, dtype=float)
        blocks = np.split(values, np.cumsum(self.counts)[:-1])
        return RepeatedObservations(self.times, tuple(blocks), self.horizon)


@dataclass(frozen=True)
class KernelSpec:
    """A kernel supported on [-1, 1]."""

    name: str
    evaluate: Callable[[np.ndarray], np.ndarray]
    support: float = 1.0

    def __call__(self, u: np.ndarray) -> np.ndarray:
        """Evaluate the kernel, forcing zero outside the support."""
        u = np.asarray(u, dtype=float)
        return np.where(np.abs(u) <= self.support, self.evaluate(u), 0.0)


def epanechnikov() -> KernelSpec:
    """Return the Epanechnikov kernel 3/4 (1 - u^2) on [-1, 1]."""
    return KernelSpec("epanechnikov", lambda u: 0.75 * (1.0 - u**2))


def triweight() -> KernelSpec:
    """Return the triweight kernel 35/32 (1 - u^2)^3 on [-1, 1]."""
    return KernelSpec("triweight", lambda u: 35.0 / 32.0 * (1.0 - u**2) ** 3)


KERNELS: dict[str, Callable[[], KernelSpec]] = {
    "epanechnikov": epanechnikov,
    "triweight": triweight,
}


@dataclass(frozen=True)
class ConditionKReport:
    """Sampled check of the kernel regularity conditions."""

    symmetric: bool
    compact: bool
    lipschitz: bool
    lipschitz_constant: float
    delta: float
    k_min: float
    k_max: float

    @property
    def satisfied(self) -> bool:
        """Return True when every condition holds on the sample grid."""
        return (
            self.symmetric
            and self.compact
            and self.lipschitz
            and self.k_min > 0
            and np.isfinite(self.k_max)
        )


def check_condition_k(
    kernel: KernelSpec, delta: float = 0.5, samples: int = 4001
) -> ConditionKReport:
    """Check symmetry, compact support, Lipschitz and bounds on a grid.

    The Lipschitz constant is estimated at two resolutions; a discontinuity
    shows up as an estimate that keeps growing with the resolution.
    """
    u = np.linspace(-1.5, 1.5, samples)
    values = kernel(u)
    symmetric = bool(np.allclose(values, kernel(-u), atol=1e-14))
    compact = bool(np.all(values[np.abs(u) > kernel.support] == 0.0))

    def slope(grid: np.ndarray) -> float:
        return float(np.max(np.abs(np.diff(kernel(grid))) / np.diff(grid)))

    coarse = slope(u)
    fine = slope(np.linspace(-1.5, 1.5, 2 * samples - 1))
    near_zero = np.abs(values[np.abs(u) <= delta])
    return ConditionKReport(
        symmetric=symmetric,
        compact=compact,
        lipschitz=fine <= 1.5 * coarse,
        lipschitz_constant=fine,
        delta=delta,
        k_min=float(near_zero.min()) if near_zero.size else 0.0,
        k_max=float(np.max(np.abs(values))),
    )


def kernel_satisfies_condition_k(kernel: KernelSpec, delta: float = 0.5) -> bool:
    """Return True when the kernel passes the sampled regularity check."""
    return check_condition_k(kernel, delta).satisfied


def uniform_kernel() -> KernelSpec:
    """Return the box kernel 1/2 on [-1, 1]; it is not Lipschitz at +-1."""
    return KernelSpec("uniform", lambda u: np.full_like(u, 0.5))


def default_bandwidth(n: int, alpha: float | None = None) -> float:
    """Return n^(-1/(2 alpha)), or n^(-1/3) when the smoothness is unknown."""
    if n < 2:
        raise InvalidArgumentError(f"Bandwidth rule needs n >= 2, got {n}")
    if alpha is None:
        return float(n ** (-1.0 / 3.0))
    if alpha < 1:
        raise InvalidArgumentError(f"Smoothness alpha must be >= 1, got {alpha}")
    return float(n ** (-1.0 / (2.0 * alpha)))


@dataclass(frozen=True)
class SmootherConfig:
    """Settings of the local polynomial estimator.

    By default the bandwidth is given on the normalized [0, 1] time scale
    and the kernel window is b T wide on each side. With
    ``bandwidth_units="time"`` the same number is read in raw time units,
    which is how the FitzHugh-Nagumo experiments apply b = n^(-1/3) on
    [0, 20]. ``None`` selects the default rule for the sample size at hand.
    """

    order: int = 1
    bandwidth: float | None = None
    kernel: KernelSpec = field(default_factory=epanechnikov)
    smoothness: float | None = None
    bandwidth_units: str = "normalized"

    def __post_init__(self) -> None:
        """Validate the settings."""
        if not 0 <= self.order <= MAX_POLY_ORDER:
            raise InvalidArgumentError(
                f"Polynomial order must be in [0, {MAX_POLY_ORDER}], got {self.order}"
            )
        if self.bandwidth_units not in BANDWIDTH_UNITS:
            raise InvalidArgumentError(
                f"Unknown bandwidth units {self.bandwidth_units}"
            )
        if self.bandwidth is not None and self.bandwidth <= 0:
            raise InvalidArgumentError(f"Bandwidth must be positive, got {self.bandwidth}")
        if (
            self.bandwidth is not None
            and self.bandwidth_units == "normalized"
            and self.bandwidth > 1
        ):
            raise InvalidArgumentError(
                f"Normalized bandwidth must be in (0, 1], got {self.bandwidth}"
            )
        if self.smoothness is not None and self.smoothness < 1:
            raise InvalidArgumentError(
                f"Smoothness alpha must be >= 1, got {self.smoothness}"
            )

    def resolve_bandwidth(self, n: int) -> float:
        """Return the bandwidth used for a sample of size n."""
        if self.bandwidth is not None:
            return self.bandwidth
        return default_bandwidth(n, self.smoothness)

    def window(self, n: int, horizon: float) -> float:
        """Return the kernel half-width in raw time units."""
        bandwidth = self.resolve_bandwidth(n)
        if self.bandwidth_units == "time":
            return bandwidth
        return bandwidth * horizon


def _check_eval_times(eval_times: np.ndarray, horizon: float) -> np.ndarray:
    eval_times = np.asarray(eval_times, dtype=float)
    if eval_times.ndim != 1:
        raise InvalidArgumentError("Evaluation times must be a vector")
    if np.any(eval_times < 0) or np.any(eval_times > horizon):
        raise InvalidArgumentError(
            f"Evaluation times must lie within [0, {horizon:g}]"
        )
    return eval_times


def local_poly_weights(
    times: np.ndarray, horizon: float, cfg: SmootherConfig, eval_times: np.ndarray
) -> np.ndarray:
    """Return the m x n matrix of local polynomial weights W_{n,i}(t).

    The weights depend only on the design, so they can be built before any
    observation is made.

    Raises:
        SingularDesignError: if B_n(t) has reciprocal condition below 1e-12.
    """
    times = np.asarray(times, dtype=float)
    eval_times = _check_eval_times(eval_times, horizon)
    n = times.size
    width = cfg.window(n, horizon)
    # B_n(t) and W_{n,i}(t) carry the same 1 / (n b) factor on the [0, 1] scale
    scale = horizon / (n * width)
    powers = np.arange(cfg.order + 1)
    factorials = np.array([factorial(int(k)) for k in powers], dtype=float)
    unit = np.zeros(cfg.order + 1)
    unit[0] = 1.0
    _LOGGER.debug(
        "Local polynomial weights: n=%d, order=%d, window=%.6g, %d points",
        n,
        cfg.order,
        width,
        eval_times.size,
    )

    weights = np.empty((eval_times.size, n))
    for start in range(0, eval_times.size, _CHUNK):
        chunk = eval_times[start : start + _CHUNK]
        u = (times[None, :] - chunk[:, None]) / width
        kern = cfg.kernel(u)
        design = u[..., None] ** powers / factorials
        gram = np.einsum("mni,mnj,mn->mij", design, design, kern) * scale
        singular = np.linalg.svd(gram, compute_uv=False)
        with np.errstate(divide="ignore", invalid="ignore"):
            rcond = np.where(
                singular[:, 0] > 0, singular[:, -1] / singular[:, 0], 0.0
            )
        bad = np.flatnonzero(rcond < SINGULAR_RCOND)
        if bad.size:
            first = bad[0]
            raise SingularDesignError(
                float(chunk[first]), int(np.count_nonzero(kern[first] > 0))
            )
        rhs = np.broadcast_to(unit, (chunk.size, cfg.order + 1))[..., None]
        solved = np.linalg.solve(gram, rhs)[..., 0]
        weights[start : start + chunk.size] = (
            np.einsum("mni,mi->mn", design, solved) * kern * scale
        )
    return weights


def local_poly_values(
    obs: Observations, cfg: SmootherConfig, eval_times: np.ndarray
) -> np.ndarray:
    """Return the local polynomial estimate at arbitrary (possibly tied) times."""
    weights = local_poly_weights(obs.times, obs.horizon, cfg, eval_times)
    return weights @ obs.values


def local_poly_fit(
    obs: Observations, cfg: SmootherConfig, eval_times: np.ndarray
) -> Trajectory:
    """Smooth all components of the observations with one set of weights."""
    values = local_poly_values(obs, cfg, eval_times)
    return Trajectory(eval_times, values, horizon=obs.horizon)


def _step_index(obs: RepeatedObservations, eval_times: np.ndarray) -> np.ndarray:
    eval_times = _check_eval_times(eval_times, obs.horizon)
    index = np.searchsorted(obs.times, eval_times, side="left")
    return np.clip(index, 0, obs.times.size - 1)


def step_values(obs: RepeatedObservations, eval_times: np.ndarray) -> np.ndarray:
    """Return the step estimate at arbitrary (possibly tied) times."""
    return obs.means[_step_index(obs, eval_times)]


def step_weights(obs: RepeatedObservations, eval_times: np.ndarray) -> np.ndarray:
    """Return the m x n matrix averaging the replicates that cover each time.

    Columns follow the stacked layout of ``obs.flat_values``.
    """
    index = _step_index(obs, eval_times)
    block = np.repeat(np.arange(obs.times.size), obs.counts)
    member = block[None, :] == index[:, None]
    return member / obs.counts[index][:, None]


def step_estimator(obs: RepeatedObservations, eval_times: np.ndarray) -> Trajectory:
    """Return the piecewise-constant replicate-mean estimate of x(t).

    On ((i-1)T/I, iT/I] the estimate is the mean of the replicates at t_i;
    at t = 0 it takes the value at t_1.
    """
    return Trajectory(eval_times, step_values(obs, eval_times), horizon=obs.horizon)


def refine_grid(times: np.ndarray, factor: int, horizon: float) -> np.ndarray:
    """Return {0} U times U {T} with every interval split into ``factor`` parts."""
    if factor < 1:
        raise InvalidArgumentError(f"Refinement factor must be positive, got {factor}")
    knots = np.unique(np.concatenate(([0.0], np.asarray(times, dtype=float), [horizon])))
    spacing = np.diff(knots)
    fractions = np.arange(factor) / factor
    inner = (knots[:-1, None] + spacing[:, None] * fractions).ravel()
    return np.append(inner, knots[-1])
