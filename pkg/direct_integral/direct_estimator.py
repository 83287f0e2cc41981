"""Direct integral estimator for the natural and structural parameters.

The observed path is matched against x(t) = xi + G(t) theta in a weighted
seminorm. Both parameters have closed forms once the smoothed path has been
integrated, so no iterative optimization is needed except to map theta back
to the parameter of interest nu.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
import logging

import numpy as np
from scipy.integrate import cumulative_trapezoid
from scipy.linalg import eigh, qr, solve_triangular
from scipy.optimize import minimize

from .const import (
    COND_THRESHOLD,
    PSD_TOLERANCE,
    RANK_TOLERANCE,
    REFINE_FACTOR,
    SIGMA_FLOOR,
    SIMPLEX_MAXFEV,
    SIMPLEX_XATOL,
)
from .coordinator import ReplicateCoordinator, replicate_rng
from .ode_core import (
    ContractViolationError,
    EstimationError,
    InvalidArgumentError,
    OdeModel,
    Trajectory,
    _frozen,
)
from .smoothing import (
    Observations,
    RepeatedObservations,
    SmootherConfig,
    local_poly_weights,
    refine_grid,
    step_weights,
)

_LOGGER = logging.getLogger(__name__)

WEIGHT_KINDS = ("uniform", "discrete", "custom")
ESTIMATORS = ("smooth", "step")


class NonIdentifiableError(EstimationError):
    """Exception for a singular or ill-conditioned C matrix."""

    def __init__(
        self,
        spectrum: np.ndarray,
        null_space: np.ndarray | None = None,
        reason: str | None = None,
    ) -> None:
        """Initialize the error."""
        spectrum = np.asarray(spectrum, dtype=float)
        top = spectrum.max() if spectrum.size else 0.0
        cond = spectrum.min() / top if top > 0 else 0.0
        super().__init__(
            reason or f"Parameter is not identifiable: cond(C)={cond:.3g}"
        )
        self.spectrum = spectrum
        self.null_space = null_space
        self.cond_c = max(cond, 0.0)


class InvalidStateError(EstimationError):
    """Exception for a non-finite g along the smoothed path."""

    def __init__(self, time: float) -> None:
        """Initialize the error."""
        super().__init__(f"g(x) is not finite at t={time:g}")
        self.time = time


class BootstrapError(EstimationError):
    """Exception for a failed bootstrap replicate."""

    def __init__(self, replicate: int, cause: Exception) -> None:
        """Initialize the error."""
        super().__init__(f"Bootstrap replicate {replicate} failed: {cause}")
        self.replicate = replicate
        self.cause = cause


def trapezoid_weights(grid: np.ndarray) -> np.ndarray:
    """Return composite trapezoid quadrature weights for a grid."""
    grid = np.asarray(grid, dtype=float)
    weights = np.zeros(grid.size)
    spacing = np.diff(grid)
    weights[:-1] += 0.5 * spacing
    weights[1:] += 0.5 * spacing
    return weights


def _per_component(values: np.ndarray, rows: int, d: int | None) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim == 1:
        if values.size != rows:
            raise ContractViolationError("weights", rows, values.size)
        if d is None:
            raise InvalidArgumentError("Dimension d is required for shared weights")
        values = np.repeat(values[:, None], d, axis=1)
    if values.ndim != 2 or values.shape[0] != rows:
        raise ContractViolationError("weights", f"({rows}, d)", values.shape)
    return values


@dataclass(frozen=True, eq=False)
class WeightScheme:
    """Diagonal matrix of measures W discretized on a grid.

    ``masses[k, h]`` is the mass W_hh puts on ``grid[k]``.
    """

    kind: str
    grid: np.ndarray
    masses: np.ndarray

    def __post_init__(self) -> None:
        """Validate the measure."""
        if self.kind not in WEIGHT_KINDS:
            raise InvalidArgumentError(f"Unknown weight scheme {self.kind}")
        grid = _frozen(self.grid)
        masses = _frozen(self.masses)
        if grid.ndim != 1 or grid.size == 0 or np.any(np.diff(grid) <= 0):
            raise InvalidArgumentError("Weight grid must be strictly increasing")
        if masses.ndim != 2 or masses.shape[0] != grid.size:
            raise ContractViolationError("masses", f"({grid.size}, d)", masses.shape)
        if not np.all(np.isfinite(masses)) or np.any(masses < 0):
            raise InvalidArgumentError("Diagonal weights must be finite and nonnegative")
        if np.any(masses.sum(axis=0) <= 0):
            raise InvalidArgumentError("Every component needs positive total mass")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "masses", masses)

    @classmethod
    def uniform(cls, grid: np.ndarray, d: int) -> WeightScheme:
        """Return Lebesgue measure times the identity, by trapezoid rule."""
        weights = trapezoid_weights(grid)
        return cls("uniform", grid, np.repeat(weights[:, None], d, axis=1))

    @classmethod
    def discrete(
        cls, grid: np.ndarray, weights: np.ndarray, d: int | None = None
    ) -> WeightScheme:
        """Return point masses at the grid points, shared or per component."""
        grid = np.asarray(grid, dtype=float)
        return cls("discrete", grid, _per_component(weights, grid.size, d))

    @classmethod
    def custom(
        cls, grid: np.ndarray, density: np.ndarray, d: int | None = None
    ) -> WeightScheme:
        """Return measures with the given densities, by trapezoid rule."""
        grid = np.asarray(grid, dtype=float)
        density = _per_component(density, grid.size, d)
        return cls("custom", grid, trapezoid_weights(grid)[:, None] * density)

    @property
    def d(self) -> int:
        """Return the number of components."""
        return self.masses.shape[1]

    @property
    def total_mass(self) -> np.ndarray:
        """Return the diagonal of A_W."""
        return self.masses.sum(axis=0)

    def supports_origin(self) -> bool:
        """Return True when 0 lies in the support of every W_hh."""
        if self.grid[0] != 0.0:
            return False
        return bool(np.all(self.masses[0] > 0))


def _as_block(values: np.ndarray, rows: int, d: int) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if values.ndim == 2:
        values = values[..., None]
    if values.ndim != 3 or values.shape[:2] != (rows, d):
        raise InvalidArgumentError(
            f"Expected values on {rows} grid points with {d} rows, got {values.shape}"
        )
    return values


def inner_product(
    W: WeightScheme, f: np.ndarray, g: np.ndarray, grid: np.ndarray | None = None
) -> np.ndarray:
    """Return the k x l matrix <f, g>_W for f: m x d x k and g: m x d x l.

    A two-dimensional argument is treated as a single column.
    """
    if grid is not None and not np.array_equal(np.asarray(grid, dtype=float), W.grid):
        raise InvalidArgumentError("Functions and weights are sampled on different grids")
    rows = W.grid.size
    left = _as_block(f, rows, W.d)
    right = _as_block(g, rows, W.d)
    return np.einsum("kh,khi,khj->ij", W.masses, left, right)


def compute_G(model: OdeModel, xhat: Trajectory) -> np.ndarray:
    """Return G(t) = int_0^t g(xhat(s)) ds on the trajectory grid as m x d x p.

    Raises:
        InvalidStateError: if g is not finite somewhere along the path.
    """
    if xhat.d != model.d:
        raise ContractViolationError("trajectory", model.d, xhat.d)
    with np.errstate(over="ignore", invalid="ignore"):
        path = model.g_path(xhat.values)
    finite = np.all(np.isfinite(path), axis=(1, 2))
    if not np.all(finite):
        raise InvalidStateError(float(xhat.times[np.argmin(finite)]))
    return cumulative_trapezoid(path, x=xhat.times, axis=0, initial=0.0)


@dataclass(frozen=True, eq=False)
class DesignMatrices:
    """The matrices A, B and C of the linear problem with the shared grid."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    cond_c: float
    grid: np.ndarray
    G: np.ndarray = field(repr=False)
    spectrum: np.ndarray = field(repr=False)


def design_matrices(G: np.ndarray, W: WeightScheme) -> DesignMatrices:
    """Assemble A = <I, I>, B = <I, G> and C = <G, G>."""
    rows, d = W.grid.size, W.d
    identity = np.broadcast_to(np.eye(d), (rows, d, d))
    A = inner_product(W, identity, identity)
    B = inner_product(W, identity, G)
    C = inner_product(W, G, G)
    C = 0.5 * (C + C.T)
    spectrum = eigh(C, eigvals_only=True)
    top = spectrum[-1]
    cond_c = float(max(spectrum[0], 0.0) / top) if top > 0 else 0.0
    return DesignMatrices(A, B, C, cond_c, W.grid, G, spectrum)


def _qr_solve(matrix: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve a square system by column-pivoted QR."""
    q, r, perm = qr(matrix, pivoting=True)
    diag = np.abs(np.diag(r))
    if diag.size == 0 or diag[-1] <= np.finfo(float).eps * matrix.shape[0] * diag[0]:
        raise np.linalg.LinAlgError("Matrix is numerically singular")
    solved = solve_triangular(r, q.T @ rhs)
    result = np.empty_like(solved)
    result[perm] = solved
    return result


def _null_space(C: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    spectrum, vectors = eigh(C)
    top = spectrum[-1]
    if top <= 0:
        return spectrum, np.eye(C.shape[0])
    return spectrum, vectors[:, spectrum <= RANK_TOLERANCE * top]


def _residual(
    values: np.ndarray, G: np.ndarray, theta: np.ndarray, xi: np.ndarray
) -> np.ndarray:
    return values - xi - np.einsum("kdp,p->kd", G, theta)


def criterion_value(
    model: OdeModel,
    xhat: Trajectory,
    W: WeightScheme,
    theta: np.ndarray,
    xi: np.ndarray,
    G: np.ndarray | None = None,
) -> float:
    """Return the squared seminorm ||xhat - xi - G theta||_W^2."""
    if G is None:
        G = compute_G(model, xhat)
    residual = _residual(xhat.values, G, np.asarray(theta), np.asarray(xi))
    return float(np.einsum("kh,kh->", W.masses, residual**2))


@dataclass(frozen=True, eq=False)
class FitResult:
    """Estimates of one fit together with their diagnostics."""

    theta_hat: np.ndarray
    xi_hat: np.ndarray
    cond_c: float
    criterion: float
    nu_hat: np.ndarray | None = None
    sigma_hat: np.ndarray | None = None
    converged: bool = True
    nu_distance: float | None = None

    def __post_init__(self) -> None:
        """Check the covariance, when present, is symmetric PSD."""
        if self.sigma_hat is None:
            return
        sigma = np.asarray(self.sigma_hat, dtype=float)
        scale = max(1.0, float(np.abs(sigma).max(initial=0.0)))
        if not np.allclose(sigma, sigma.T, atol=PSD_TOLERANCE * scale):
            raise InvalidArgumentError("Covariance estimate must be symmetric")
        if np.linalg.eigvalsh(sigma).min(initial=0.0) < -PSD_TOLERANCE * scale:
            raise InvalidArgumentError("Covariance estimate must be PSD")


def _check_grid(xhat: Trajectory, W: WeightScheme) -> None:
    if xhat.times.shape != W.grid.shape or not np.allclose(
        xhat.times, W.grid, rtol=0.0, atol=1e-12
    ):
        raise InvalidArgumentError("Trajectory and weights must share one grid")


def fit(
    model: OdeModel,
    xhat: Trajectory,
    W: WeightScheme,
    known_xi: np.ndarray | None = None,
    cond_threshold: float = COND_THRESHOLD,
) -> FitResult:
    """Return the closed-form estimates of theta and xi.

    With ``known_xi`` the initial value is held fixed and only theta is
    estimated.

    Raises:
        NonIdentifiableError: if C is ill-conditioned or the Schur
            complement A - B C^-1 B^T is singular.
    """
    _check_grid(xhat, W)
    if W.d != model.d or xhat.d != model.d:
        raise ContractViolationError("weights", model.d, W.d)
    if not W.supports_origin():
        raise InvalidArgumentError("0 must lie in the support of every W_hh")

    G = compute_G(model, xhat)
    design = design_matrices(G, W)
    if design.cond_c < cond_threshold:
        spectrum, null = _null_space(design.C)
        raise NonIdentifiableError(spectrum, null)

    cross_identity = np.einsum("kh,kh->h", W.masses, xhat.values)
    cross_g = np.einsum("kh,khi,kh->i", W.masses, G, xhat.values)
    try:
        if known_xi is None:
            c_inv_bt = _qr_solve(design.C, design.B.T)
            c_inv_gx = _qr_solve(design.C, cross_g)
            schur = design.A - design.B @ c_inv_bt
            xi_hat = _qr_solve(schur, cross_identity - design.B @ c_inv_gx)
        else:
            xi_hat = np.asarray(known_xi, dtype=float)
            if xi_hat.shape != (model.d,):
                raise ContractViolationError("known_xi", model.d, xi_hat.shape)
        theta_hat = _qr_solve(design.C, cross_g - design.B.T @ xi_hat)
    except np.linalg.LinAlgError as err:
        raise NonIdentifiableError(
            design.spectrum, reason=f"Schur complement is singular: {err}"
        ) from err

    criterion = float(
        np.einsum("kh,kh->", W.masses, _residual(xhat.values, G, theta_hat, xi_hat) ** 2)
    )
    _LOGGER.debug(
        "Fitted %s: cond(C)=%.3g, criterion=%.6g", model.name, design.cond_c, criterion
    )
    return FitResult(
        theta_hat=theta_hat,
        xi_hat=xi_hat,
        cond_c=design.cond_c,
        criterion=criterion,
    )


@dataclass(frozen=True, eq=False)
class IdentifiabilityReport:
    """Spectral diagnosis of C = <G, G>_W."""

    cond_c: float
    rank: int
    spectrum: np.ndarray
    null_space: np.ndarray

    @property
    def identifiable(self) -> bool:
        """Return True when C has full rank."""
        return self.rank == self.spectrum.size


def identifiability_report(
    model: OdeModel, x: Trajectory, W: WeightScheme
) -> IdentifiabilityReport:
    """Return the rank, conditioning and null space of C along a path."""
    _check_grid(x, W)
    design = design_matrices(compute_G(model, x), W)
    spectrum, null = _null_space(design.C)
    rank = model.p - null.shape[1]
    _LOGGER.debug("Identifiability of %s: rank %d of %d", model.name, rank, model.p)
    return IdentifiabilityReport(design.cond_c, rank, spectrum, null)


@dataclass(frozen=True)
class PipelineConfig:
    """Settings of the two-step smooth-and-match pipeline."""

    estimator: str = "smooth"
    smoother: SmootherConfig = field(default_factory=SmootherConfig)
    refine: int = REFINE_FACTOR
    known_xi: tuple[float, ...] | None = None
    cond_threshold: float = COND_THRESHOLD

    def __post_init__(self) -> None:
        """Validate the settings."""
        if self.estimator not in ESTIMATORS:
            raise InvalidArgumentError(f"Unknown estimator {self.estimator}")
        if self.refine < 1:
            raise InvalidArgumentError(f"Refinement must be positive, got {self.refine}")
        if self.cond_threshold <= 0:
            raise InvalidArgumentError("Condition threshold must be positive")


@dataclass(frozen=True, eq=False)
class PreparedDesign:
    """Everything of a pipeline run that depends only on the sampling design.

    ``smoother`` maps the stacked observations to x_hat on the evaluation
    grid and ``fitted`` maps them to x_hat at the observation times.
    """

    grid: np.ndarray
    horizon: float
    weights: WeightScheme
    smoother: np.ndarray
    fitted: np.ndarray


class EstimationPipeline:
    """Smooth the observations and fit the integral equation."""

    def __init__(self, model: OdeModel, config: PipelineConfig | None = None) -> None:
        """Initialize."""
        self.model = model
        self.config = config or PipelineConfig()
        if self.config.known_xi is not None and len(self.config.known_xi) != model.d:
            raise ContractViolationError("known_xi", model.d, len(self.config.known_xi))

    def _check_observations(self, obs: Observations | RepeatedObservations) -> None:
        if obs.d != self.model.d:
            raise ContractViolationError("observations", self.model.d, obs.d)
        if self.config.estimator == "step" and not isinstance(obs, RepeatedObservations):
            raise InvalidArgumentError("The step estimator needs a repeated design")
        if self.config.estimator == "smooth" and not isinstance(obs, Observations):
            raise InvalidArgumentError("The local polynomial estimator needs one series")

    def prepare(self, obs: Observations | RepeatedObservations) -> PreparedDesign:
        """Build the evaluation grid, the measure W and the smoother maps."""
        self._check_observations(obs)
        grid = refine_grid(obs.times, self.config.refine, obs.horizon)
        if isinstance(obs, RepeatedObservations):
            smoother = step_weights(obs, grid)
            fitted = step_weights(obs, obs.flat_times)
        else:
            cfg = self.config.smoother
            smoother = local_poly_weights(obs.times, obs.horizon, cfg, grid)
            fitted = local_poly_weights(obs.times, obs.horizon, cfg, obs.times)
        _LOGGER.debug(
            "Prepared %s pipeline: n=%d, %d evaluation points",
            self.config.estimator,
            obs.n,
            grid.size,
        )
        return PreparedDesign(
            grid=grid,
            horizon=obs.horizon,
            weights=WeightScheme.uniform(grid, self.model.d),
            smoother=smoother,
            fitted=fitted,
        )

    def smooth(
        self,
        obs: Observations | RepeatedObservations,
        prepared: PreparedDesign | None = None,
    ) -> Trajectory:
        """Return x_hat on the evaluation grid."""
        prepared = prepared or self.prepare(obs)
        return Trajectory(
            prepared.grid, prepared.smoother @ obs.flat_values, prepared.horizon
        )

    def fit_values(self, prepared: PreparedDesign, values: np.ndarray) -> FitResult:
        """Fit stacked observation values laid out like the prepared design."""
        xhat = Trajectory(prepared.grid, prepared.smoother @ values, prepared.horizon)
        known = self.config.known_xi
        return fit(
            self.model,
            xhat,
            prepared.weights,
            known_xi=None if known is None else np.asarray(known, dtype=float),
            cond_threshold=self.config.cond_threshold,
        )

    def fit(
        self,
        obs: Observations | RepeatedObservations,
        prepared: PreparedDesign | None = None,
    ) -> FitResult:
        """Return theta_hat and xi_hat for one data set."""
        prepared = prepared or self.prepare(obs)
        return self.fit_values(prepared, obs.flat_values)

    def estimate(
        self,
        obs: Observations | RepeatedObservations,
        bootstrap: int = 0,
        seed: int = 0,
        stream_key: tuple[int, ...] = (),
        threads: int = 1,
        prepared: PreparedDesign | None = None,
    ) -> FitResult:
        """Fit, optionally bootstrap the covariance, and recover nu."""
        prepared = prepared or self.prepare(obs)
        result = self.fit(obs, prepared)
        sigma = None
        if bootstrap:
            sigma = bootstrap_covariance(
                obs,
                self,
                bootstrap,
                seed,
                stream_key=stream_key,
                threads=threads,
                prepared=prepared,
            ).sigma
        nu = invert_to_nu(self.model, result.theta_hat, sigma)
        return replace(
            result,
            nu_hat=nu.nu,
            sigma_hat=sigma,
            converged=nu.converged,
            nu_distance=nu.distance,
        )


@dataclass(frozen=True, eq=False)
class BootstrapResult:
    """Bootstrap covariance and the replicate estimates behind it."""

    sigma: np.ndarray
    thetas: np.ndarray


def bootstrap_covariance(
    obs: Observations | RepeatedObservations,
    pipeline: EstimationPipeline,
    replicates: int,
    seed: int,
    stream_key: tuple[int, ...] = (),
    threads: int = 1,
    prepared: PreparedDesign | None = None,
) -> BootstrapResult:
    """Return the residual bootstrap covariance of theta_hat.

    Residuals are centered and resampled with replacement separately for
    each component. Replicate b draws from the stream ``(seed, *stream_key, b)``.

    Raises:
        BootstrapError: if any replicate fit fails.
    """
    if replicates < 2:
        raise InvalidArgumentError(f"Bootstrap needs B >= 2, got {replicates}")
    prepared = prepared or pipeline.prepare(obs)
    values = obs.flat_values
    fitted = prepared.fitted @ values
    residuals = values - fitted
    residuals = residuals - residuals.mean(axis=0)
    n, d = residuals.shape

    def replicate(index: int) -> np.ndarray:
        rng = replicate_rng(seed, *stream_key, index)
        draw = np.take_along_axis(residuals, rng.integers(0, n, size=(n, d)), axis=0)
        try:
            return pipeline.fit_values(prepared, fitted + draw).theta_hat
        except EstimationError as err:
            raise BootstrapError(index, err) from err

    thetas = np.array(ReplicateCoordinator("bootstrap", threads).run(replicate, replicates))
    centered = thetas - thetas.mean(axis=0)
    sigma = centered.T @ centered / replicates
    return BootstrapResult(0.5 * (sigma + sigma.T), thetas)


@dataclass(frozen=True, eq=False)
class NuEstimate:
    """Result of mapping theta_hat back to nu."""

    nu: np.ndarray
    distance: float
    converged: bool
    evaluations: int


def _precision(sigma: np.ndarray | None, p: int) -> np.ndarray:
    if sigma is None:
        return np.eye(p)
    sigma = np.asarray(sigma, dtype=float)
    if sigma.shape != (p, p):
        raise ContractViolationError("sigma_hat", (p, p), sigma.shape)
    if not np.all(np.isfinite(sigma)):
        raise InvalidArgumentError("Covariance estimate must be finite")
    scale = max(1.0, float(np.abs(sigma).max()))
    if not np.allclose(sigma, sigma.T, atol=PSD_TOLERANCE * scale):
        raise InvalidArgumentError("Covariance estimate must be symmetric")
    values, vectors = eigh(0.5 * (sigma + sigma.T))
    if values[0] < -PSD_TOLERANCE * scale:
        raise InvalidArgumentError(
            f"Covariance estimate is not PSD (smallest eigenvalue {values[0]:.3g})"
        )
    trace = float(np.trace(sigma))
    floor = SIGMA_FLOOR * trace / p if trace > 0 else SIGMA_FLOOR
    values = np.maximum(values, floor)
    return (vectors / values) @ vectors.T


def invert_to_nu(
    model: OdeModel,
    theta_hat: np.ndarray,
    sigma_hat: np.ndarray | None = None,
    initial: np.ndarray | None = None,
) -> NuEstimate:
    """Return the nu minimizing the Mahalanobis distance of h(nu) to theta_hat.

    Without a covariance the Euclidean distance is used. The initial guess
    defaults to the model's inverse link applied to theta_hat.
    """
    theta_hat = np.asarray(theta_hat, dtype=float)
    if theta_hat.shape != (model.p,):
        raise ContractViolationError("theta_hat", model.p, theta_hat.shape)
    if model.identity_link:
        return NuEstimate(theta_hat.copy(), 0.0, True, 0)

    precision = _precision(sigma_hat, model.p)
    if initial is None:
        initial = model.h_inv(theta_hat)
    initial = np.asarray(initial, dtype=float)
    if initial.shape != (model.q,):
        raise ContractViolationError("initial", model.q, initial.shape)
    if not np.all(np.isfinite(initial)):
        raise InvalidArgumentError("Initial guess for nu must be finite")

    def distance(nu: np.ndarray) -> float:
        diff = model.h(nu) - theta_hat
        if not np.all(np.isfinite(diff)):
            return np.inf
        return float(np.sqrt(max(diff @ precision @ diff, 0.0)))

    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        result = minimize(
            distance,
            initial,
            method="Nelder-Mead",
            options={
                "xatol": SIMPLEX_XATOL,
                "fatol": np.inf,
                "maxfev": SIMPLEX_MAXFEV,
                "adaptive": False,
            },
        )
    converged = bool(result.success)
    if not converged:
        _LOGGER.warning(
            "Simplex search for %s stopped after %d evaluations: %s",
            model.name,
            result.nfev,
            result.message,
        )
    return NuEstimate(np.asarray(result.x), float(result.fun), converged, int(result.nfev))
