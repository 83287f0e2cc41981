"""Synthetic data, Monte Carlo studies and accuracy metrics."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import itertools
import logging
from math import ceil, sqrt

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.stats import linregress

from .const import (
    DEFAULT_REPLICATES,
    DERIVATIVE_ARE,
    LOTKA_VOLTERRA_REFERENCE,
    FAILURE_FRACTION,
    NOISE_FLOOR_VARIANCE,
    PROFILING_REFERENCE,
    TRAJECTORY_GRID_POINTS,
)
from .coordinator import ReplicateCoordinator, replicate_rng
from .direct_estimator import EstimationPipeline, PipelineConfig
from .ode_core import (
    EstimationError,
    InvalidArgumentError,
    OdeModel,
    Trajectory,
    builtin_fitzhugh_nagumo,
    builtin_fitzhugh_nagumo_ramsay,
    builtin_lotka_volterra,
    solve_ode,
)
from .smoothing import Observations, RepeatedObservations, SmootherConfig

_LOGGER = logging.getLogger(__name__)

DISTRIBUTIONS = ("gaussian", "laplace")


@dataclass(frozen=True)
class NoiseSpec:
    """I.i.d. measurement error with a variance per state component.

    A variance of 0 gives noiseless observations.
    """

    distribution: str = "gaussian"
    variance: float | tuple[float, ...] = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate the distribution and variances."""
        if self.distribution not in DISTRIBUTIONS:
            raise InvalidArgumentError(f"Unknown noise distribution {self.distribution}")
        variance = np.atleast_1d(np.asarray(self.variance, dtype=float))
        if np.any(variance < 0) or not np.all(np.isfinite(variance)):
            raise InvalidArgumentError("Noise variances must be finite and nonnegative")

    def variances(self, d: int) -> np.ndarray:
        """Return the per-component variances for a d-dimensional state."""
        variance = np.atleast_1d(np.asarray(self.variance, dtype=float))
        if variance.size == 1:
            return np.full(d, variance[0])
        if variance.size != d:
            raise InvalidArgumentError(
                f"Expected 1 or {d} noise variances, got {variance.size}"
            )
        return variance

    @property
    def floor_dominated(self) -> bool:
        """Return True when the noise is too small to matter."""
        return bool(np.all(np.asarray(self.variance) <= NOISE_FLOOR_VARIANCE))


def draw_noise(
    noise: NoiseSpec, rng: np.random.Generator, rows: int, d: int
) -> np.ndarray:
    """Return a rows x d matrix of measurement errors.

    Laplace errors are drawn by inverse CDF with scale sqrt(variance / 2).
    """
    std = np.sqrt(noise.variances(d))
    if noise.distribution == "gaussian":
        return rng.standard_normal((rows, d)) * std
    uniform = rng.random((rows, d))
    # tail mass 2 min(u, 1 - u); u = 0 would give log(0)
    tail = np.maximum(2.0 * np.minimum(uniform, 1.0 - uniform), np.finfo(float).tiny)
    sign = np.where(uniform < 0.5, -1.0, 1.0)
    return sign * (std / sqrt(2.0)) * -np.log(tail)


@dataclass(frozen=True)
class GridDesign:
    """One observation at each of n equally spaced times on [0, T]."""

    horizon: float
    points: int

    def __post_init__(self) -> None:
        """Validate the design."""
        if self.horizon <= 0 or self.points < 2:
            raise InvalidArgumentError("Grid design needs T > 0 and n >= 2")

    @property
    def times(self) -> np.ndarray:
        """Return the observation times."""
        return np.linspace(0.0, self.horizon, self.points)

    @property
    def n(self) -> int:
        """Return the sample size."""
        return self.points

    def resized(self, n: int) -> GridDesign:
        """Return the design with n observations."""
        return GridDesign(self.horizon, n)


@dataclass(frozen=True)
class RepeatedDesign:
    """J replicates at each of the I times t_i = i T / I."""

    horizon: float
    intervals: int
    replicates: int

    def __post_init__(self) -> None:
        """Validate the design."""
        if self.horizon <= 0 or self.intervals < 1 or self.replicates < 1:
            raise InvalidArgumentError("Repeated design needs T > 0, I >= 1, J >= 1")

    @property
    def times(self) -> np.ndarray:
        """Return the distinct observation times."""
        return self.horizon * np.arange(1, self.intervals + 1) / self.intervals

    @property
    def n(self) -> int:
        """Return the total sample size."""
        return self.intervals * self.replicates

    def resized(self, n: int) -> RepeatedDesign:
        """Return the design with I = J = ceil(sqrt(n))."""
        side = ceil(sqrt(n))
        return RepeatedDesign(self.horizon, side, side)


Design = GridDesign | RepeatedDesign


def true_path(
    model: OdeModel, theta: np.ndarray, xi: np.ndarray, times: np.ndarray
) -> np.ndarray:
    """Return the solution of the model at the given times."""
    times = np.asarray(times, dtype=float)
    prepend = times[0] > 0
    grid = np.concatenate(([0.0], times)) if prepend else times
    values = solve_ode(model, theta, xi, grid).values
    return values[1:] if prepend else values


def _observe(
    design: Design,
    truth: np.ndarray,
    noise: NoiseSpec,
    rng: np.random.Generator,
) -> Observations | RepeatedObservations:
    d = truth.shape[1]
    if isinstance(design, GridDesign):
        values = truth + draw_noise(noise, rng, design.n, d)
        return Observations(design.times, values, design.horizon)
    stacked = np.repeat(truth, design.replicates, axis=0)
    values = stacked + draw_noise(noise, rng, design.n, d)
    blocks = np.split(values, design.intervals)
    return RepeatedObservations(design.times, tuple(blocks), design.horizon)


def simulate(
    model: OdeModel,
    theta: np.ndarray,
    xi: np.ndarray,
    design: Design,
    noise: NoiseSpec,
    rng: np.random.Generator | None = None,
) -> Observations | RepeatedObservations:
    """Return noisy observations of the solution for a sampling design.

    Raises:
        SolverDivergenceError: if the true path cannot be solved.
    """
    if rng is None:
        rng = replicate_rng(noise.seed)
    truth = true_path(model, theta, xi, design.times)
    return _observe(design, truth, noise, rng)


@dataclass(frozen=True, eq=False)
class McConfig:
    """A Monte Carlo experiment; give either theta or nu."""

    model: OdeModel
    xi: tuple[float, ...]
    design: Design
    noise: NoiseSpec
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    theta: tuple[float, ...] | None = None
    nu: tuple[float, ...] | None = None
    replicates: int = DEFAULT_REPLICATES
    bootstrap: int = 0
    seed: int = 0

    def __post_init__(self) -> None:
        """Validate the experiment."""
        if (self.theta is None) == (self.nu is None):
            raise InvalidArgumentError("Give exactly one of theta and nu")
        if len(self.xi) != self.model.d:
            raise InvalidArgumentError(f"xi needs {self.model.d} values")
        if self.replicates < 1:
            raise InvalidArgumentError("Monte Carlo needs at least one replicate")
        if self.bootstrap == 1 or self.bootstrap < 0:
            raise InvalidArgumentError("Bootstrap needs B = 0 or B >= 2")
        step = self.pipeline.estimator == "step"
        if step != isinstance(self.design, RepeatedDesign):
            raise InvalidArgumentError(
                "The step estimator requires a repeated design and the "
                "local polynomial estimator a grid design"
            )

    @property
    def true_theta(self) -> np.ndarray:
        """Return the natural parameter used to generate data."""
        if self.theta is not None:
            return np.asarray(self.theta, dtype=float)
        return self.model.h(np.asarray(self.nu, dtype=float))

    @property
    def true_nu(self) -> np.ndarray:
        """Return the parameter of interest used to generate data."""
        if self.nu is not None:
            return np.asarray(self.nu, dtype=float)
        if self.model.identity_link:
            return self.true_theta
        return self.model.h_inv(self.true_theta)

    @property
    def true_xi(self) -> np.ndarray:
        """Return the initial value used to generate data."""
        return np.asarray(self.xi, dtype=float)


def xi_names(model: OdeModel) -> tuple[str, ...]:
    """Return the column names of the initial value."""
    return tuple(f"xi{i + 1}" for i in range(model.d))


def reported_names(model: OdeModel) -> tuple[str, ...]:
    """Return the parameters summarized for a model."""
    names = model.theta_names if model.identity_link else model.nu_names
    return names + xi_names(model)


def average_relative_error(estimates: np.ndarray, true: float) -> float:
    """Return the mean absolute relative error in percent; NaN when true is 0."""
    estimates = np.asarray(estimates, dtype=float)
    if true == 0 or estimates.size == 0:
        return float("nan")
    return float(100.0 * np.mean(np.abs(estimates - true)) / abs(true))


def trajectory_errors(
    model: OdeModel,
    theta_hat: np.ndarray,
    xi_hat: np.ndarray,
    reference: Trajectory,
) -> tuple[float, float]:
    """Return the root mean square and sup distance between two solutions."""
    fitted = solve_ode(model, theta_hat, xi_hat, reference.times)
    sq_norm = np.sum((fitted.values - reference.values) ** 2, axis=1)
    span = reference.times[-1] - reference.times[0]
    l2 = sqrt(trapezoid(sq_norm, reference.times) / span)
    return float(l2), float(np.sqrt(sq_norm.max()))


def _sd(values: np.ndarray) -> float:
    return float(np.std(values, ddof=1)) if values.size > 1 else 0.0


@dataclass(frozen=True, eq=False)
class McSummary:
    """Aggregated Monte Carlo results with the raw replicate table."""

    summary: pd.DataFrame
    raw: pd.DataFrame
    replicates: int
    failures: int

    @property
    def unreliable(self) -> bool:
        """Return True when too many replicates failed."""
        return self.failures > FAILURE_FRACTION * self.replicates

    def row(self, param: str) -> pd.Series:
        """Return the summary row of one parameter."""
        return self.summary.set_index("param").loc[param]

    def mean(self, param: str) -> float:
        """Return the empirical mean of one parameter."""
        return float(self.row(param)["mean"])

    def sd(self, param: str) -> float:
        """Return the empirical SD of one parameter."""
        return float(self.row(param)["sd"])

    def are(self, param: str) -> float:
        """Return the ARE of one parameter in percent."""
        return float(self.row(param)["are_pct"])


def _summarize(cfg: McConfig, raw: pd.DataFrame) -> pd.DataFrame:
    ok = raw[~raw["failed"]]
    truth = dict(zip(reported_names(cfg.model), _reported_truth(cfg)))
    rows = []
    for name, true in truth.items():
        values = ok[name].to_numpy(dtype=float)
        rows.append(
            {
                "param": name,
                "true": true,
                "mean": float(values.mean()) if values.size else float("nan"),
                "sd": _sd(values),
                "are_pct": average_relative_error(values, true),
            }
        )
    for name in ("traj_l2", "traj_sup"):
        values = ok[name].to_numpy(dtype=float)
        rows.append(
            {
                "param": name,
                "true": 0.0,
                "mean": float(values.mean()) if values.size else float("nan"),
                "sd": _sd(values),
                "are_pct": float("nan"),
            }
        )
    return pd.DataFrame(rows, columns=["param", "true", "mean", "sd", "are_pct"])


def _reported_truth(cfg: McConfig) -> np.ndarray:
    head = cfg.true_theta if cfg.model.identity_link else cfg.true_nu
    return np.concatenate((head, cfg.true_xi))


def run_monte_carlo(cfg: McConfig, threads: int = 1) -> McSummary:
    """Run the replicates of an experiment and summarize the estimates.

    Replicate m draws its noise from stream ``(seed, m, 0)`` and its
    bootstrap samples from ``(seed, m, 1, b)``. Failed replicates are
    counted and left out of the moments.
    """
    model = cfg.model
    theta, xi = cfg.true_theta, cfg.true_xi
    pipeline = EstimationPipeline(model, cfg.pipeline)
    truth = true_path(model, theta, xi, cfg.design.times)
    metric_grid = np.linspace(0.0, cfg.design.horizon, TRAJECTORY_GRID_POINTS)
    reference = solve_ode(model, theta, xi, metric_grid)
    # The design, and so every smoother weight, is shared by all replicates.
    template = _observe(cfg.design, truth, NoiseSpec(variance=0.0), replicate_rng(0))
    prepared = pipeline.prepare(template)
    columns = (
        ["replicate", "failed", "error"]
        + list(model.theta_names)
        + ([] if model.identity_link else list(model.nu_names))
        + list(xi_names(model))
        + ["traj_l2", "traj_sup", "converged"]
    )

    def replicate(index: int) -> dict:
        rng = replicate_rng(cfg.seed, index, 0)
        row = dict.fromkeys(columns, float("nan"))
        row.update(replicate=index, failed=False, error="", converged=False)
        try:
            obs = _observe(cfg.design, truth, cfg.noise, rng)
            result = pipeline.estimate(
                obs,
                bootstrap=cfg.bootstrap,
                seed=cfg.seed,
                stream_key=(index, 1),
                prepared=prepared,
            )
            l2, sup = trajectory_errors(model, result.theta_hat, result.xi_hat, reference)
        except EstimationError as err:
            _LOGGER.warning("Replicate %d failed: %s", index, err)
            row.update(failed=True, error=str(err))
            return row
        row.update(zip(model.theta_names, result.theta_hat))
        if not model.identity_link:
            row.update(zip(model.nu_names, result.nu_hat))
        row.update(zip(xi_names(model), result.xi_hat))
        row.update(traj_l2=l2, traj_sup=sup, converged=result.converged)
        _LOGGER.debug("Replicate %d done", index)
        return row

    rows = ReplicateCoordinator("monte_carlo", threads).run(replicate, cfg.replicates)
    raw = pd.DataFrame(rows, columns=columns)
    failures = int(raw["failed"].sum())
    summary = McSummary(_summarize(cfg, raw), raw, cfg.replicates, failures)
    if summary.unreliable:
        _LOGGER.warning(
            "%d of %d replicates failed; summary is unreliable",
            failures,
            cfg.replicates,
        )
    _LOGGER.info(
        "Monte Carlo for %s: %d replicates, %d failures",
        model.name,
        cfg.replicates,
        failures,
    )
    return summary


@dataclass(frozen=True, eq=False)
class RateResult:
    """Empirical convergence rate over a ladder of sample sizes."""

    table: pd.DataFrame
    slope: float
    slope_stderr: float
    xi_slope: float
    xi_slope_stderr: float
    floor_dominated: bool


def rate_check(
    cfg: McConfig,
    ladder: tuple[int, ...] = (100, 200, 400, 800, 1600),
    replicates: int | None = None,
    threads: int = 1,
) -> RateResult:
    """Return the log-log slope of the RMSE of theta_hat against n.

    Grid designs get n points; repeated designs get I = J = ceil(sqrt(n)).
    The bandwidth follows the default rule at every rung.
    """
    if len(ladder) < 3:
        raise InvalidArgumentError("Rate check needs at least 3 rungs")
    smoother = replace(cfg.pipeline.smoother, bandwidth=None)
    pipeline = replace(cfg.pipeline, smoother=smoother)
    theta_names = list(cfg.model.theta_names)
    names_xi = list(xi_names(cfg.model))
    rows = []
    for n in ladder:
        design = cfg.design.resized(int(n))
        rung = replace(
            cfg,
            design=design,
            pipeline=pipeline,
            replicates=replicates or cfg.replicates,
            bootstrap=0,
        )
        ok = run_monte_carlo(rung, threads).raw
        ok = ok[~ok["failed"]]
        theta_err = ok[theta_names].to_numpy(dtype=float) - rung.true_theta
        xi_err = ok[names_xi].to_numpy(dtype=float) - rung.true_xi
        rows.append(
            {
                "n": design.n,
                "rmse_theta": float(np.sqrt(np.mean(theta_err**2))),
                "rmse_xi": float(np.sqrt(np.mean(xi_err**2))),
            }
        )
        _LOGGER.info("Rate rung n=%d: rmse_theta=%.4g", design.n, rows[-1]["rmse_theta"])
    table = pd.DataFrame(rows, columns=["n", "rmse_theta", "rmse_xi"])
    log_n = np.log(table["n"].to_numpy(dtype=float))
    with np.errstate(divide="ignore"):
        theta_fit = linregress(log_n, np.log(table["rmse_theta"].to_numpy()))
        xi_fit = linregress(log_n, np.log(table["rmse_xi"].to_numpy()))
    floor = cfg.noise.floor_dominated
    if floor:
        _LOGGER.warning("Noise is at the quadrature floor; slope is not a rate")
    return RateResult(
        table=table,
        slope=float(theta_fit.slope),
        slope_stderr=float(theta_fit.stderr),
        xi_slope=float(xi_fit.slope),
        xi_slope_stderr=float(xi_fit.stderr),
        floor_dominated=floor,
    )


def juxtapose(
    summary: pd.DataFrame,
    reference: str,
    cell: tuple | None = None,
) -> pd.DataFrame:
    """Return the summary with comparison values as ``ref_*`` columns.

    ``derivative`` adds the derivative-based ARE of a variance cell and
    ``profiling`` the generalized profiling means and SDs.
    ``lotka_volterra`` adds the published step-estimator means and SDs of
    a ``(distribution, setup, J)`` cell.
    """
    table = summary.copy()
    if reference == "lotka_volterra":
        key = None if cell is None else (str(cell[0]), int(cell[1]), int(cell[2]))
        if key not in LOTKA_VOLTERRA_REFERENCE:
            raise InvalidArgumentError(f"No Lotka-Volterra reference for cell {cell}")
        params = LOTKA_VOLTERRA_REFERENCE[key]
        table["ref_mean"] = table["param"].map({k: v[0] for k, v in params.items()})
        table["ref_sd"] = table["param"].map({k: v[1] for k, v in params.items()})
    elif reference == "derivative":
        if cell is None or tuple(cell) not in DERIVATIVE_ARE:
            raise InvalidArgumentError(f"No derivative reference for cell {cell}")
        values = dict(zip(("alpha", "beta", "gamma"), DERIVATIVE_ARE[tuple(cell)]))
        table["ref_are_pct"] = table["param"].map(values)
    elif reference == "profiling":
        for source, params in PROFILING_REFERENCE.items():
            table[f"ref_{source}_mean"] = table["param"].map(
                {name: pair[0] for name, pair in params.items()}
            )
            table[f"ref_{source}_sd"] = table["param"].map(
                {name: pair[1] for name, pair in params.items()}
            )
    else:
        raise InvalidArgumentError(f"Unknown reference {reference}")
    return table


FHN_VARIANCES = (0.05, 0.06, 0.07, 0.08, 0.09, 0.10)
FHN_VARIANCE_CELLS = tuple(itertools.product(FHN_VARIANCES, FHN_VARIANCES))
LV_REPLICATES_PER_TIME = (6, 10, 15, 30)
# Standard deviation 0.5 on every component.
LV_NOISE_VARIANCE = 0.25


def fitzhugh_nagumo_protocol(
    cell: tuple[float, float] = (0.05, 0.05),
    replicates: int = DEFAULT_REPLICATES,
    bootstrap: int = 100,
    seed: int = 0,
) -> McConfig:
    """Return the FitzHugh-Nagumo experiment for one variance cell."""
    return McConfig(
        model=builtin_fitzhugh_nagumo(),
        nu=(0.34, 0.2, 3.0),
        xi=(0.0, 0.1),
        design=GridDesign(20.0, 201),
        noise=NoiseSpec("gaussian", tuple(cell)),
        pipeline=PipelineConfig(
            "smooth", SmootherConfig(order=1, bandwidth_units="time")
        ),
        replicates=replicates,
        bootstrap=bootstrap,
        seed=seed,
    )


def profiling_protocol(
    replicates: int = DEFAULT_REPLICATES, bootstrap: int = 100, seed: int = 0
) -> McConfig:
    """Return the experiment on the x1^3 / 3 FitzHugh-Nagumo variant."""
    return McConfig(
        model=builtin_fitzhugh_nagumo_ramsay(),
        nu=(0.2, 0.2, 3.0),
        xi=(-1.0, 1.0),
        design=GridDesign(20.0, 401),
        noise=NoiseSpec("gaussian", 0.5),
        pipeline=PipelineConfig(
            "smooth", SmootherConfig(order=1, bandwidth_units="time")
        ),
        replicates=replicates,
        bootstrap=bootstrap,
        seed=seed,
    )


LV_SETUPS = {
    1: {"theta": (0.5, 0.5, 0.5, 0.5), "xi": (1.0, 0.5), "horizon": 14.9},
    2: {"theta": (0.2, 0.7, 0.3, 0.5), "xi": (0.5, 1.0), "horizon": 29.9},
}


def lotka_volterra_protocol(
    setup: int = 1,
    distribution: str = "gaussian",
    replicates_per_time: int = 30,
    replicates: int = DEFAULT_REPLICATES,
    seed: int = 0,
) -> McConfig:
    """Return a repeated-measures Lotka-Volterra experiment with I = 30."""
    if setup not in LV_SETUPS:
        raise InvalidArgumentError(f"Unknown Lotka-Volterra setup {setup}")
    values = LV_SETUPS[setup]
    return McConfig(
        model=builtin_lotka_volterra(),
        theta=values["theta"],
        xi=values["xi"],
        design=RepeatedDesign(values["horizon"], 30, replicates_per_time),
        noise=NoiseSpec(distribution, LV_NOISE_VARIANCE),
        pipeline=PipelineConfig("step"),
        replicates=replicates,
        seed=seed,
    )
